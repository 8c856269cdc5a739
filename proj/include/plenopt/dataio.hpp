// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "plenopt/camera.hpp"
#include "plenopt/fields.hpp"
#include "plenopt/image.hpp"

namespace plenopt {

using json = nlohmann::json;

// ---- content hashing ----

inline std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                           std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- camera JSON (per-frame 4x4 world-from-camera + intrinsics) ----

inline json camera_to_json(const CameraParams& cam, int view) {
    const Mat3 r = cam.extr.rotation_mat();
    const Vec3 t = cam.extr.translation_vec();
    json transform = json::array();
    for (int i = 0; i < 3; ++i)
        transform.push_back({r[static_cast<std::size_t>(3 * i)], r[static_cast<std::size_t>(3 * i + 1)],
                             r[static_cast<std::size_t>(3 * i + 2)], t[static_cast<std::size_t>(i)]});
    transform.push_back({0.0, 0.0, 0.0, 1.0});
    return json{{"view", view},
                {"transform", transform},
                {"fx", cam.intr.fx.at(0)},
                {"fy", cam.intr.fy.at(0)},
                {"cx", cam.intr.cx.at(0)},
                {"cy", cam.intr.cy.at(0)},
                {"skew", cam.intr.skew.at(0)}};
}

inline void save_cameras_json(const std::vector<CameraParams>& cams, const std::string& path) {
    if (cams.empty()) throw std::invalid_argument("save_cameras_json: empty camera list");
    json root;
    root["width"] = cams[0].width;
    root["height"] = cams[0].height;
    root["frames"] = json::array();
    for (std::size_t i = 0; i < cams.size(); ++i)
        root["frames"].push_back(camera_to_json(cams[i], static_cast<int>(i)));
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << root.dump(2) << "\n";
}

// Tolerant reader: a top-level "intrinsics" block supplies any frame that
// lacks its own entries.
inline std::vector<CameraParams> load_cameras_json(const std::string& path) {
    json root;
    try {
        root = json::parse(read_file_bytes(path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error("malformed camera JSON " + path + ": " + e.what());
    }
    const int width = root.at("width").get<int>();
    const int height = root.at("height").get<int>();
    json shared = root.value("intrinsics", json::object());
    std::vector<CameraParams> cams;
    for (const json& f : root.at("frames")) {
        auto field = [&](const char* key, double fallback) {
            if (f.contains(key)) return f.at(key).get<double>();
            if (shared.contains(key)) return shared.at(key).get<double>();
            return fallback;
        };
        const double fx = field("fx", -1.0), fy = field("fy", -1.0);
        if (fx <= 0.0 || fy <= 0.0)
            throw std::runtime_error("camera JSON " + path + ": frame missing focal lengths");
        CameraParams cam;
        cam.width = width;
        cam.height = height;
        cam.intr = IntrinsicParams::create(fx, fy, field("cx", width / 2.0),
                                           field("cy", height / 2.0), field("skew", 0.0), false);
        const json& tr = f.at("transform");
        Mat3 r;
        Vec3 t;
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) r[3 * i + j] = tr.at(i).at(j).get<double>();
            t[i] = tr.at(i).at(3).get<double>();
        }
        cam.extr = ExtrinsicParams::create(so3_log(r), t, false);
        cams.push_back(std::move(cam));
    }
    return cams;
}

// ---- dataset ----

struct FrameRef {
    int view = 0;
    int time_index = 0;
    double time = 0.0;
    std::string image;  // path relative to the dataset directory
};

struct Dataset {
    std::string dir;
    int width = 0, height = 0;
    double near = 0.1, far = 6.0;
    std::size_t n_views = 0, n_timesteps = 1;
    std::vector<int> holdout_views;
    SceneBox box;
    std::vector<FrameRef> frames;
    std::vector<ImageBuffer> images;  // aligned with frames
    std::optional<std::vector<CameraParams>> cameras;
    std::uint64_t content_hash = 0;

    bool is_holdout(int view) const {
        for (int h : holdout_views)
            if (h == view) return true;
        return false;
    }
    double time_of_index(int idx) const {
        return n_timesteps <= 1 ? 0.0
                                : static_cast<double>(idx) / static_cast<double>(n_timesteps - 1);
    }
};

inline std::string frame_image_name(int view, int time_index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%03d_t%03d.png", view, time_index);
    return std::string("images/") + buf;
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = dir + "/manifest.json";
    if (!fs::exists(manifest_path))
        throw std::runtime_error("load_dataset: missing manifest.json in " + dir);
    json m;
    try {
        m = json::parse(read_file_bytes(manifest_path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error("load_dataset: malformed manifest.json: " + std::string(e.what()));
    }
    Dataset d;
    d.dir = dir;
    d.width = m.at("width").get<int>();
    d.height = m.at("height").get<int>();
    d.near = m.at("near").get<double>();
    d.far = m.at("far").get<double>();
    d.n_views = m.at("n_views").get<std::size_t>();
    d.n_timesteps = m.at("n_timesteps").get<std::size_t>();
    for (const json& h : m.value("holdout_views", json::array())) d.holdout_views.push_back(h.get<int>());
    if (m.contains("scene_box")) {
        for (std::size_t i = 0; i < 3; ++i) {
            d.box.lo[i] = m["scene_box"]["lo"].at(i).get<double>();
            d.box.hi[i] = m["scene_box"]["hi"].at(i).get<double>();
        }
    }
    std::uint64_t hash = fnv1a(read_file_bytes(manifest_path));
    for (const json& f : m.at("frames")) {
        FrameRef ref;
        ref.view = f.at("view").get<int>();
        ref.time_index = f.at("time_index").get<int>();
        ref.time = f.at("time").get<double>();
        ref.image = f.at("image").get<std::string>();
        const std::string img_path = dir + "/" + ref.image;
        if (!fs::exists(img_path))
            throw std::runtime_error("load_dataset: missing frame image " + ref.image);
        ImageBuffer img = load_png(img_path);
        if (img.width != d.width || img.height != d.height)
            throw std::runtime_error("load_dataset: dimension mismatch in " + ref.image);
        hash = fnv1a(read_file_bytes(img_path), hash);
        d.frames.push_back(std::move(ref));
        d.images.push_back(std::move(img));
    }
    const std::string cam_path = dir + "/cameras.json";
    if (fs::exists(cam_path)) {
        auto cams = load_cameras_json(cam_path);
        if (cams.size() != d.n_views)
            throw std::runtime_error("load_dataset: cameras.json holds " +
                                     std::to_string(cams.size()) + " cameras for " +
                                     std::to_string(d.n_views) + " views");
        d.cameras = std::move(cams);
    }
    d.content_hash = hash;
    return d;
}

// ---- checkpoint container ----
// Single file: text magic line, then a length-prefixed JSON header, then the
// named tensors and optimizer moments as raw little-endian doubles.

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "PLENOPT_CKPT";

struct OptimizerSlotState {
    std::string param;
    std::int64_t t = 0;
    std::vector<double> m, v;
};

struct CheckpointData {
    int version = kCheckpointVersion;
    std::int64_t epoch = 0;
    std::uint64_t dataset_hash = 0;
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::vector<std::pair<std::string, std::vector<OptimizerSlotState>>> optimizers;

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

namespace detail {

inline void write_doubles_le(std::ofstream& out, std::span<const double> values) {
    for (double d : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
        out.write(reinterpret_cast<const char*>(buf), 8);
    }
}

inline void read_doubles_le(std::ifstream& in, std::span<double> values) {
    for (double& d : values) {
        unsigned char buf[8];
        in.read(reinterpret_cast<char*>(buf), 8);
        if (!in) throw std::runtime_error("checkpoint truncated");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        std::memcpy(&d, &bits, 8);
    }
}

}  // namespace detail

inline void save_checkpoint(const CheckpointData& data, const std::string& path) {
    json header;
    header["version"] = data.version;
    header["epoch"] = data.epoch;
    header["dataset_hash"] = data.dataset_hash;
    header["config"] = data.config_text;
    header["tensors"] = json::array();
    for (const auto& [name, t] : data.tensors)
        header["tensors"].push_back(
            {{"name", name}, {"shape", t.shape()}, {"requires_grad", t.requires_grad()}});
    header["optimizers"] = json::array();
    for (const auto& [name, slots] : data.optimizers) {
        json js = {{"name", name}, {"slots", json::array()}};
        for (const auto& s : slots)
            js["slots"].push_back({{"param", s.param}, {"t", s.t}, {"count", s.m.size()}});
        header["optimizers"].push_back(std::move(js));
    }
    const std::string header_text = header.dump();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("save_checkpoint: cannot write " + tmp);
        out << kCheckpointMagic << " v" << data.version << "\n";
        out << header_text.size() << "\n";
        out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
        for (const auto& [name, t] : data.tensors) detail::write_doubles_le(out, t.values());
        for (const auto& [name, slots] : data.optimizers)
            for (const auto& s : slots) {
                detail::write_doubles_le(out, s.m);
                detail::write_doubles_le(out, s.v);
            }
        if (!out) throw std::runtime_error("save_checkpoint: write failure on " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string magic_line;
    std::getline(in, magic_line);
    const std::string expected = std::string(kCheckpointMagic) + " v" +
                                 std::to_string(kCheckpointVersion);
    if (magic_line != expected)
        throw std::runtime_error("load_checkpoint: version mismatch, expected '" + expected +
                                 "' got '" + magic_line + "'");
    std::string len_line;
    std::getline(in, len_line);
    std::size_t header_len = 0;
    try {
        header_len = std::stoul(len_line);
    } catch (...) {
        throw std::runtime_error("load_checkpoint: corrupt header length");
    }
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw std::runtime_error("load_checkpoint: truncated header");
    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("load_checkpoint: corrupt header: " + std::string(e.what()));
    }
    CheckpointData data;
    data.version = header.at("version").get<int>();
    data.epoch = header.at("epoch").get<std::int64_t>();
    data.dataset_hash = header.at("dataset_hash").get<std::uint64_t>();
    data.config_text = header.at("config").get<std::string>();
    for (const json& jt : header.at("tensors")) {
        Shape shape = jt.at("shape").get<Shape>();
        Tensor t = Tensor::zeros(shape);
        detail::read_doubles_le(in, t.mutable_values());
        t.set_requires_grad(jt.at("requires_grad").get<bool>());
        data.tensors.emplace_back(jt.at("name").get<std::string>(), std::move(t));
    }
    for (const json& jo : header.at("optimizers")) {
        std::vector<OptimizerSlotState> slots;
        for (const json& js : jo.at("slots")) {
            OptimizerSlotState s;
            s.param = js.at("param").get<std::string>();
            s.t = js.at("t").get<std::int64_t>();
            s.m.resize(js.at("count").get<std::size_t>());
            s.v.resize(s.m.size());
            detail::read_doubles_le(in, s.m);
            detail::read_doubles_le(in, s.v);
            slots.push_back(std::move(s));
        }
        data.optimizers.emplace_back(jo.at("name").get<std::string>(), std::move(slots));
    }
    // must land exactly at EOF
    char extra;
    in.read(&extra, 1);
    if (!in.eof()) throw std::runtime_error("load_checkpoint: trailing bytes in " + path);
    return data;
}

}  // namespace plenopt
