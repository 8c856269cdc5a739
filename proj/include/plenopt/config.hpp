// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "plenopt/geometry.hpp"

namespace plenopt {

struct ConfigError : std::runtime_error {
    int line;
    explicit ConfigError(const std::string& msg, int line_no)
        : std::runtime_error("config line " + std::to_string(line_no) + ": " + msg),
          line(line_no) {}
};

// `key = value` lines; '#' starts a comment; keys are checked against the
// documented schema so typos fail loudly with their line number.
class ConfigMap {
public:
    static ConfigMap parse_text(const std::string& text) {
        ConfigMap m;
        std::istringstream in(text);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                if (a == std::string::npos) return std::string();
                const auto b = s.find_last_not_of(" \t\r");
                return s.substr(a, b - a + 1);
            };
            if (trim(line).empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("expected key = value", line_no);
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError("empty key", line_no);
            if (m.entries_.count(key)) throw ConfigError("duplicate key '" + key + "'", line_no);
            m.entries_[key] = {value, line_no};
        }
        return m;
    }

    static ConfigMap parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_text(ss.str());
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        it->second.consumed = true;
        return it->second.value;
    }

    double get_double(const std::string& key, double fallback) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        it->second.consumed = true;
        try {
            std::size_t pos;
            const double v = std::stod(it->second.value, &pos);
            if (pos != it->second.value.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("'" + key + "' expects a number, got '" + it->second.value + "'",
                              it->second.line);
        }
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        it->second.consumed = true;
        try {
            std::size_t pos;
            const long long v = std::stoll(it->second.value, &pos);
            if (pos != it->second.value.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("'" + key + "' expects an integer, got '" + it->second.value + "'",
                              it->second.line);
        }
    }

    bool get_bool(const std::string& key, bool fallback) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        it->second.consumed = true;
        if (it->second.value == "true" || it->second.value == "1") return true;
        if (it->second.value == "false" || it->second.value == "0") return false;
        throw ConfigError("'" + key + "' expects true/false, got '" + it->second.value + "'",
                          it->second.line);
    }

    void reject_unknown_keys() const {
        for (const auto& [key, e] : entries_)
            if (!e.consumed) throw ConfigError("unknown key '" + key + "'", e.line);
    }

private:
    struct Entry {
        std::string value;
        int line = 0;
        bool consumed = false;
    };
    std::map<std::string, Entry> entries_;
};

// Algorithm-level schedule: epoch counts, per-epoch sampling budget, and the
// stair-cased learning-rate decay rules.
struct ScheduleConfig {
    std::int64_t n_all = 10000;
    std::int64_t n_s = -1;  // -1: default to n_all / 2
    std::int64_t n_c = -1;  // -1: default to 6 * n_all / 10
    std::int64_t rays_per_image = 4096;
    std::int64_t samples_per_ray = 128;
    double lr_field = 1e-3;
    double lr_camera = 1e-3;
    std::int64_t field_decay_every = 100;
    double field_decay = 0.997;
    std::int64_t cam_decay_every = 10;
    double cam_decay = 0.9;
    double focal_lr_scale = 0.0;  // 0: use the image width (pixel-unit normalization)

    std::int64_t resolved_n_s() const { return n_s >= 0 ? n_s : n_all / 2; }
    std::int64_t resolved_n_c() const { return n_c >= 0 ? n_c : 6 * n_all / 10; }

    void validate() const {
        if (n_all < 0 || resolved_n_s() > n_all || resolved_n_c() > n_all)
            throw std::invalid_argument("schedule: need 0 <= n_s, n_c <= n_all");
        if (rays_per_image < 1 || samples_per_ray < 1)
            throw std::invalid_argument("schedule: sampling counts must be positive");
    }
};

struct ModelConfig {
    std::size_t hidden = 256;
    std::size_t density_depth = 4;
    std::size_t color_depth = 2;
    std::size_t deform_depth = 4;
    std::size_t pos_bands = 6;
    std::size_t pos_freqs = 4;
    std::size_t dir_bands = 2;
    std::size_t dir_freqs = 2;
    std::size_t time_bands = 2;
    std::size_t warm_bands = 2;
    bool dynamic = false;
};

struct TrainConfig {
    std::string dataset;
    std::string out_dir = "run";
    ScheduleConfig schedule;
    ModelConfig model;
    bool shared_intrinsics = false;
    bool learn_skew = false;
    bool jitter = true;
    Vec3 background{0, 0, 0};
    std::uint64_t seed = 1;
    std::int64_t checkpoint_every = 0;  // 0: final checkpoint only

    static TrainConfig from_text(const std::string& text) {
        ConfigMap m = ConfigMap::parse_text(text);
        TrainConfig c;
        c.dataset = m.get_string("dataset", "");
        c.out_dir = m.get_string("out_dir", c.out_dir);
        c.schedule.n_all = m.get_int("n_all", c.schedule.n_all);
        c.schedule.n_s = m.get_int("n_s", c.schedule.n_s);
        c.schedule.n_c = m.get_int("n_c", c.schedule.n_c);
        c.schedule.rays_per_image = m.get_int("rays_per_image", c.schedule.rays_per_image);
        c.schedule.samples_per_ray = m.get_int("samples_per_ray", c.schedule.samples_per_ray);
        c.schedule.lr_field = m.get_double("lr_field", c.schedule.lr_field);
        c.schedule.lr_camera = m.get_double("lr_camera", c.schedule.lr_camera);
        c.schedule.field_decay_every = m.get_int("field_decay_every", c.schedule.field_decay_every);
        c.schedule.field_decay = m.get_double("field_decay", c.schedule.field_decay);
        c.schedule.cam_decay_every = m.get_int("cam_decay_every", c.schedule.cam_decay_every);
        c.schedule.cam_decay = m.get_double("cam_decay", c.schedule.cam_decay);
        c.schedule.focal_lr_scale = m.get_double("focal_lr_scale", c.schedule.focal_lr_scale);
        c.model.hidden = static_cast<std::size_t>(m.get_int("hidden_dim", static_cast<std::int64_t>(c.model.hidden)));
        c.model.density_depth = static_cast<std::size_t>(m.get_int("density_depth", static_cast<std::int64_t>(c.model.density_depth)));
        c.model.color_depth = static_cast<std::size_t>(m.get_int("color_depth", static_cast<std::int64_t>(c.model.color_depth)));
        c.model.deform_depth = static_cast<std::size_t>(m.get_int("deform_depth", static_cast<std::int64_t>(c.model.deform_depth)));
        c.model.pos_bands = static_cast<std::size_t>(m.get_int("pos_bands", static_cast<std::int64_t>(c.model.pos_bands)));
        c.model.pos_freqs = static_cast<std::size_t>(m.get_int("pos_freqs", static_cast<std::int64_t>(c.model.pos_freqs)));
        c.model.dir_bands = static_cast<std::size_t>(m.get_int("dir_bands", static_cast<std::int64_t>(c.model.dir_bands)));
        c.model.dir_freqs = static_cast<std::size_t>(m.get_int("dir_freqs", static_cast<std::int64_t>(c.model.dir_freqs)));
        c.model.time_bands = static_cast<std::size_t>(m.get_int("time_bands", static_cast<std::int64_t>(c.model.time_bands)));
        c.model.warm_bands = static_cast<std::size_t>(m.get_int("warm_bands", static_cast<std::int64_t>(c.model.warm_bands)));
        c.model.dynamic = m.get_bool("dynamic", c.model.dynamic);
        c.shared_intrinsics = m.get_bool("shared_intrinsics", c.shared_intrinsics);
        c.learn_skew = m.get_bool("learn_skew", c.learn_skew);
        c.jitter = m.get_bool("jitter", c.jitter);
        const std::string bg = m.get_string("background", "black");
        if (bg == "black")
            c.background = {0, 0, 0};
        else if (bg == "white")
            c.background = {1, 1, 1};
        else
            throw std::invalid_argument("background must be black or white, got '" + bg + "'");
        c.seed = static_cast<std::uint64_t>(m.get_int("seed", static_cast<std::int64_t>(c.seed)));
        c.checkpoint_every = m.get_int("checkpoint_every", c.checkpoint_every);
        m.reject_unknown_keys();
        c.schedule.validate();
        return c;
    }

    static TrainConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return from_text(ss.str());
    }

    std::string to_text() const {
        std::ostringstream os;
        os.precision(17);
        os << "dataset = " << dataset << "\n";
        os << "out_dir = " << out_dir << "\n";
        os << "n_all = " << schedule.n_all << "\n";
        os << "n_s = " << schedule.n_s << "\n";
        os << "n_c = " << schedule.n_c << "\n";
        os << "rays_per_image = " << schedule.rays_per_image << "\n";
        os << "samples_per_ray = " << schedule.samples_per_ray << "\n";
        os << "lr_field = " << schedule.lr_field << "\n";
        os << "lr_camera = " << schedule.lr_camera << "\n";
        os << "field_decay_every = " << schedule.field_decay_every << "\n";
        os << "field_decay = " << schedule.field_decay << "\n";
        os << "cam_decay_every = " << schedule.cam_decay_every << "\n";
        os << "cam_decay = " << schedule.cam_decay << "\n";
        os << "focal_lr_scale = " << schedule.focal_lr_scale << "\n";
        os << "hidden_dim = " << model.hidden << "\n";
        os << "density_depth = " << model.density_depth << "\n";
        os << "color_depth = " << model.color_depth << "\n";
        os << "deform_depth = " << model.deform_depth << "\n";
        os << "pos_bands = " << model.pos_bands << "\n";
        os << "pos_freqs = " << model.pos_freqs << "\n";
        os << "dir_bands = " << model.dir_bands << "\n";
        os << "dir_freqs = " << model.dir_freqs << "\n";
        os << "time_bands = " << model.time_bands << "\n";
        os << "warm_bands = " << model.warm_bands << "\n";
        os << "dynamic = " << (model.dynamic ? "true" : "false") << "\n";
        os << "shared_intrinsics = " << (shared_intrinsics ? "true" : "false") << "\n";
        os << "learn_skew = " << (learn_skew ? "true" : "false") << "\n";
        os << "jitter = " << (jitter ? "true" : "false") << "\n";
        os << "background = " << (background == Vec3{1, 1, 1} ? "white" : "black") << "\n";
        os << "seed = " << seed << "\n";
        os << "checkpoint_every = " << checkpoint_every << "\n";
        return os.str();
    }
};

}  // namespace plenopt
