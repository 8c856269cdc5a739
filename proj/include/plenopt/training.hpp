// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "plenopt/config.hpp"
#include "plenopt/dataio.hpp"
#include "plenopt/fields.hpp"
#include "plenopt/metrics.hpp"
#include "plenopt/renderer.hpp"
#include "plenopt/synthscene.hpp"

namespace plenopt {

enum class LrKind { kField, kCamera };

// Stair-cased exponential decay per the schedule config:
//   field:  lr * decay^(epoch / every)   (0.001 * 0.997^(e/100) by default)
//   camera: lr * decay^(epoch / every)   (0.001 * 0.9^(e/10) by default)
inline double lr_at(std::int64_t epoch, LrKind kind, const ScheduleConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be >= 0");
    if (kind == LrKind::kField)
        return cfg.lr_field * std::pow(cfg.field_decay, static_cast<double>(epoch / cfg.field_decay_every));
    return cfg.lr_camera * std::pow(cfg.cam_decay, static_cast<double>(epoch / cfg.cam_decay_every));
}

// Mean squared error over every channel of every pixel in the batch.
inline Tensor photometric_loss(const Tensor& pred, const Tensor& truth) {
    if (pred.size() == 0) throw std::invalid_argument("photometric_loss: empty batch");
    if (pred.shape() != truth.shape())
        throw std::invalid_argument("photometric_loss: shapes " + shape_str(pred.shape()) +
                                    " and " + shape_str(truth.shape()) + " differ");
    Tensor diff = sub(pred, truth);
    return mean(mul(diff, diff));
}

inline RadianceModel build_model(const ModelConfig& cfg, const SceneBox& box,
                                 std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RadianceModel model;
    model.box = box;
    model.static_field = StaticField::create(cfg.hidden, cfg.density_depth, cfg.color_depth,
                                             cfg.pos_bands, cfg.pos_freqs, cfg.dir_bands,
                                             cfg.dir_freqs, cfg.warm_bands, rng);
    if (cfg.dynamic)
        model.dynamic_field = DynamicField::create(cfg.hidden, cfg.density_depth, cfg.color_depth,
                                                   cfg.deform_depth, cfg.pos_bands, cfg.pos_freqs,
                                                   cfg.dir_bands, cfg.dir_freqs, cfg.time_bands,
                                                   cfg.warm_bands, rng);
    return model;
}

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

inline void name_encoding(const std::string& prefix, const EncodingParams& enc, bool with_gates,
                          NamedTensors& out) {
    for (std::size_t i = 0; i < enc.weights.size(); ++i)
        out.emplace_back(prefix + ".w" + std::to_string(i), enc.weights[i]);
    if (with_gates) out.emplace_back(prefix + ".gates", enc.gates);
}

inline void name_mlp(const std::string& prefix, const Mlp& mlp, NamedTensors& out) {
    for (std::size_t i = 0; i < mlp.weights.size(); ++i) {
        out.emplace_back(prefix + ".w" + std::to_string(i), mlp.weights[i]);
        out.emplace_back(prefix + ".b" + std::to_string(i), mlp.biases[i]);
    }
}

}  // namespace detail

inline NamedTensors named_model_params(const RadianceModel& model) {
    NamedTensors out;
    detail::name_encoding("static.pos_enc", model.static_field.pos_enc, true, out);
    detail::name_encoding("static.dir_enc", model.static_field.dir_enc, true, out);
    detail::name_mlp("static.density", model.static_field.density, out);
    detail::name_mlp("static.color", model.static_field.color, out);
    if (model.is_dynamic()) {
        const DynamicField& d = *model.dynamic_field;
        detail::name_encoding("dynamic.pos_enc", d.pos_enc, true, out);
        detail::name_encoding("dynamic.dir_enc", d.dir_enc, true, out);
        detail::name_encoding("dynamic.time_enc", d.time_enc, true, out);
        detail::name_mlp("dynamic.deform", d.deform, out);
        detail::name_mlp("dynamic.density", d.density, out);
        detail::name_mlp("dynamic.color", d.color, out);
    }
    return out;
}

// Shared-intrinsics cameras alias one tensor across views; each unique
// storage is named once, by its first owner.
inline NamedTensors named_camera_params(const std::vector<CameraParams>& cams) {
    NamedTensors out;
    std::set<const void*> seen;
    auto push = [&](const std::string& name, const Tensor& t) {
        if (seen.insert(t.impl().get()).second) out.emplace_back(name, t);
    };
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const std::string p = "cam." + std::to_string(i);
        push(p + ".rotation", cams[i].extr.rotation);
        push(p + ".translation", cams[i].extr.translation);
        push(p + ".fx", cams[i].intr.fx);
        push(p + ".fy", cams[i].intr.fy);
        push(p + ".cx", cams[i].intr.cx);
        push(p + ".cy", cams[i].intr.cy);
        push(p + ".skew", cams[i].intr.skew);
    }
    return out;
}

inline std::uint64_t hash_tensor(const Tensor& t) {
    const auto v = t.values();
    return fnv1a({reinterpret_cast<const unsigned char*>(v.data()), v.size() * sizeof(double)});
}

inline std::vector<std::pair<std::string, std::uint64_t>> hash_named_tensors(
    const NamedTensors& named) {
    std::vector<std::pair<std::string, std::uint64_t>> out;
    out.reserve(named.size());
    for (const auto& [name, t] : named) out.emplace_back(name, hash_tensor(t));
    return out;
}

// The three Adam optimizers of the update schedule. The field optimizer owns
// the static branch, the dynamic branch and the encoding gates as separate
// step groups; pose and focal optimizers own the camera parameters. Every
// parameter belongs to exactly one optimizer.
struct OptimizerBank {
    Adam field_opt, pose_opt, focal_opt;
    std::vector<std::size_t> static_group, dynamic_group, gate_group;

    static OptimizerBank create(const RadianceModel& model, const std::vector<CameraParams>& cams,
                                bool learn_skew) {
        OptimizerBank bank;
        auto add_group = [&](const NamedTensors& named, bool gates,
                             std::vector<std::size_t>& group) {
            for (const auto& [name, t] : named) {
                const bool is_gate = name.size() > 6 && name.substr(name.size() - 6) == ".gates";
                if (is_gate != gates) continue;
                group.push_back(bank.field_opt.add_param(t));
            }
        };
        NamedTensors all = named_model_params(model);
        NamedTensors statics, dynamics;
        for (const auto& item : all)
            (item.first.rfind("static.", 0) == 0 ? statics : dynamics).push_back(item);
        add_group(statics, false, bank.static_group);
        add_group(dynamics, false, bank.dynamic_group);
        add_group(statics, true, bank.gate_group);
        add_group(dynamics, true, bank.gate_group);
        std::set<const void*> seen;
        for (const auto& cam : cams) {
            if (seen.insert(cam.extr.rotation.impl().get()).second)
                bank.pose_opt.add_param(cam.extr.rotation);
            if (seen.insert(cam.extr.translation.impl().get()).second)
                bank.pose_opt.add_param(cam.extr.translation);
            for (const Tensor* t : {&cam.intr.fx, &cam.intr.fy, &cam.intr.cx, &cam.intr.cy})
                if (seen.insert(t->impl().get()).second) bank.focal_opt.add_param(*t);
            if (learn_skew && seen.insert(cam.intr.skew.impl().get()).second)
                bank.focal_opt.add_param(cam.intr.skew);
        }
        bank.assert_disjoint();
        return bank;
    }

    void assert_disjoint() const {
        std::set<const void*> seen;
        auto check = [&](const Adam& opt, const char* which) {
            for (const Tensor& p : opt.params())
                if (!seen.insert(p.impl().get()).second)
                    throw std::logic_error(std::string("OptimizerBank: parameter shared with ") +
                                           which + " optimizer");
        };
        check(field_opt, "field");
        check(pose_opt, "pose");
        check(focal_opt, "focal");
    }

    void zero_grad() {
        field_opt.zero_grad();
        pose_opt.zero_grad();
        focal_opt.zero_grad();
    }
};

// Raised when the loss turns non-finite; carries enough context to debug.
struct NumericalAbort : std::runtime_error {
    std::int64_t epoch;
    NumericalAbort(std::int64_t epoch_no, const std::string& detail)
        : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch_no) + "\n" +
                             detail),
          epoch(epoch_no) {}
};

struct EpochRecord {
    std::int64_t epoch = 0;
    double loss = 0.0;
    double psnr_train = 0.0;
    double lr_field = 0.0;
    double lr_cam = 0.0;
    double ate_rmse = std::numeric_limits<double>::quiet_NaN();
    double focal_err_px = std::numeric_limits<double>::quiet_NaN();
};

inline std::string csv_header() {
    return "epoch,loss,psnr_train,lr_field,lr_cam,ate,focal_err_px";
}

inline std::string csv_row(const EpochRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%" PRId64 ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.epoch,
                  r.loss, r.psnr_train, r.lr_field, r.lr_cam, r.ate_rmse, r.focal_err_px);
    return buf;
}

struct TrainResult {
    std::vector<EpochRecord> rows;
    std::string csv_path;
    std::string checkpoint_path;
};

// Alg. 1 driver: per epoch, samples a fresh pixel batch from every training
// frame, accumulates photometric-loss gradients, then applies the scheduled
// subset of optimizer steps.
class Trainer {
public:
    Trainer(const Dataset& data, const TrainConfig& cfg, std::vector<CameraParams> cameras)
        : data_(data), cfg_(cfg), cams_(std::move(cameras)) {
        cfg_.schedule.validate();
        if (cams_.size() != data.n_views)
            throw std::invalid_argument("Trainer: camera count does not match dataset views");
        model_ = build_model(cfg_.model, data.box, cfg_.seed);
        // holdout views are never rendered during training, so their cameras
        // stay outside the optimizer bank entirely
        bank_ = OptimizerBank::create(model_, train_view_cameras(cams_), cfg_.learn_skew);
        named_ = named_model_params(model_);
        NamedTensors cam_named = named_camera_params(cams_);
        named_.insert(named_.end(), cam_named.begin(), cam_named.end());
        for (std::size_t i = 0; i < data_.frames.size(); ++i)
            if (!data_.is_holdout(data_.frames[i].view)) train_frames_.push_back(i);
        if (train_frames_.empty()) throw std::invalid_argument("Trainer: no training frames");
    }

    const RadianceModel& model() const { return model_; }
    std::vector<CameraParams>& cameras() { return cams_; }
    const std::vector<CameraParams>& cameras() const { return cams_; }
    const NamedTensors& named_params() const { return named_; }
    const OptimizerBank& bank() const { return bank_; }
    std::int64_t epoch() const { return epoch_; }
    const TrainConfig& config() const { return cfg_; }

    using EpochCallback = std::function<void(const EpochRecord&, Trainer&)>;

    // Runs from the current epoch up to `until` (defaults to n_all).
    TrainResult run(std::optional<std::int64_t> until = {}, EpochCallback cb = {}) {
        const std::int64_t n_all = cfg_.schedule.n_all;
        const std::int64_t stop = std::min(until.value_or(n_all), n_all);
        const std::int64_t n_s = cfg_.schedule.resolved_n_s();
        const std::int64_t n_c = cfg_.schedule.resolved_n_c();
        TrainResult result;
        std::filesystem::create_directories(cfg_.out_dir);
        result.csv_path = cfg_.out_dir + "/train_log.csv";
        std::ofstream csv;
        if (epoch_ == 0) {
            csv.open(result.csv_path, std::ios::trunc);
            csv << csv_header() << "\n";
        } else {
            csv.open(result.csv_path, std::ios::app);
        }
        for (std::int64_t e = epoch_ + 1; e <= stop; ++e) {
            const double lr_f = lr_at(e, LrKind::kField, cfg_.schedule);
            const double lr_c = lr_at(e, LrKind::kCamera, cfg_.schedule);
            bank_.zero_grad();
            const double loss = accumulate_epoch_gradients(e);
            if (!std::isfinite(loss)) throw NumericalAbort(e, param_norm_report());
            // Alg. 1: field phase switches static -> dynamic at n_s
            if (model_.is_dynamic() && e > n_s)
                bank_.field_opt.step_subset(lr_f, bank_.dynamic_group);
            else
                bank_.field_opt.step_subset(lr_f, bank_.static_group);
            if (e <= n_c) {
                bank_.pose_opt.step(lr_c);
                const double fscale = cfg_.schedule.focal_lr_scale > 0.0
                                          ? cfg_.schedule.focal_lr_scale
                                          : static_cast<double>(data_.width);
                bank_.focal_opt.step(lr_c * fscale);
                bank_.field_opt.step_subset(lr_f, bank_.gate_group);
                for (auto& cam : cams_) cam.extr.canonicalize();
            }
            epoch_ = e;
            EpochRecord rec;
            rec.epoch = e;
            rec.loss = loss;
            rec.psnr_train = psnr_from_mse(loss);
            rec.lr_field = lr_f;
            rec.lr_cam = lr_c;
            if (data_.cameras) {
                auto train_est = train_view_cameras(cams_);
                auto train_gt = train_view_cameras(*data_.cameras);
                rec.ate_rmse = ate(train_est, train_gt).ate_rmse;
                rec.focal_err_px = focal_error_px(train_est, train_gt);
            }
            csv << csv_row(rec) << "\n";
            csv.flush();
            result.rows.push_back(rec);
            if (cb) cb(rec, *this);
            if (cfg_.checkpoint_every > 0 && e % cfg_.checkpoint_every == 0 && e < stop)
                save_checkpoint(checkpoint(), cfg_.out_dir + "/checkpoint.ckpt");
        }
        result.checkpoint_path = cfg_.out_dir + "/checkpoint.ckpt";
        save_checkpoint(checkpoint(), result.checkpoint_path);
        return result;
    }

    CheckpointData checkpoint() const {
        CheckpointData data;
        data.epoch = epoch_;
        data.dataset_hash = data_.content_hash;
        data.config_text = cfg_.to_text();
        data.tensors = named_;
        data.optimizers = {
            {"field", optimizer_state(bank_.field_opt)},
            {"pose", optimizer_state(bank_.pose_opt)},
            {"focal", optimizer_state(bank_.focal_opt)},
        };
        return data;
    }

    // Replaces parameters and optimizer state; architecture must match.
    void restore(const CheckpointData& data) {
        std::vector<std::string> problems;
        std::map<std::string, Tensor> mine;
        for (const auto& [name, t] : named_) mine.emplace(name, t);
        std::size_t ckpt_cams = 0, mine_cams = 0;
        for (const auto& [name, t] : data.tensors)
            if (name.rfind("cam.", 0) == 0) ++ckpt_cams;
        for (const auto& [name, t] : named_)
            if (name.rfind("cam.", 0) == 0) ++mine_cams;
        if (ckpt_cams != mine_cams)
            throw std::runtime_error("restore: checkpoint holds " + std::to_string(ckpt_cams) +
                                     " camera parameters, model expects " +
                                     std::to_string(mine_cams));
        for (const auto& [name, t] : data.tensors) {
            auto it = mine.find(name);
            if (it == mine.end()) {
                problems.push_back("unexpected tensor " + name);
            } else if (it->second.shape() != t.shape()) {
                problems.push_back("shape mismatch on " + name + ": " +
                                   shape_str(it->second.shape()) + " vs " + shape_str(t.shape()));
            }
        }
        for (const auto& [name, t] : named_)
            if (!data.find(name)) problems.push_back("missing tensor " + name);
        if (!problems.empty()) {
            std::string msg = "restore: architecture mismatch:";
            for (const auto& p : problems) msg += "\n  " + p;
            throw std::runtime_error(msg);
        }
        for (auto& [name, t] : named_) {
            const Tensor* src = data.find(name);
            t.mutable_values().assign(src->values().begin(), src->values().end());
            t.zero_grad();
        }
        for (const auto& [opt_name, slots] : data.optimizers) {
            Adam* opt = opt_name == "field"  ? &bank_.field_opt
                        : opt_name == "pose" ? &bank_.pose_opt
                                             : &bank_.focal_opt;
            restore_optimizer(*opt, opt_name, slots);
        }
        epoch_ = data.epoch;
    }

private:
    std::vector<std::size_t> sample_pixels(std::mt19937_64& rng, std::size_t count,
                                           std::size_t total) const {
        std::vector<std::size_t> idx(total);
        for (std::size_t i = 0; i < total; ++i) idx[i] = i;
        const std::size_t k = std::min(count, total);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng() % (total - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

    static std::mt19937_64 epoch_rng(std::uint64_t seed, std::int64_t epoch, std::size_t frame) {
        std::uint64_t h = seed;
        h ^= 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + (h << 6) + (h >> 2);
        h ^= 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(frame) * 0xBF58476D1CE4E5B9ULL +
             (h << 6) + (h >> 2);
        return std::mt19937_64(h);
    }

    double accumulate_epoch_gradients(std::int64_t e) {
        const std::size_t pixels_per_image = static_cast<std::size_t>(
            std::min<std::int64_t>(cfg_.schedule.rays_per_image,
                                   static_cast<std::int64_t>(data_.width) * data_.height));
        const double total_channels =
            static_cast<double>(pixels_per_image * train_frames_.size() * 3);
        double loss_total = 0.0;
        for (std::size_t fi = 0; fi < train_frames_.size(); ++fi) {
            const std::size_t frame_idx = train_frames_[fi];
            const FrameRef& frame = data_.frames[frame_idx];
            const ImageBuffer& gt_img = data_.images[frame_idx];
            std::mt19937_64 rng = epoch_rng(cfg_.seed, e, fi);
            const auto flat = sample_pixels(
                rng, pixels_per_image,
                static_cast<std::size_t>(data_.width) * static_cast<std::size_t>(data_.height));
            std::vector<PixelCoord> px(flat.size());
            Tensor gt = Tensor::zeros({flat.size(), 3});
            for (std::size_t i = 0; i < flat.size(); ++i) {
                px[i] = {static_cast<int>(flat[i] % static_cast<std::size_t>(data_.width)),
                         static_cast<int>(flat[i] / static_cast<std::size_t>(data_.width))};
                for (int c = 0; c < 3; ++c)
                    gt.mutable_values()[3 * i + static_cast<std::size_t>(c)] =
                        gt_img.at(px[i].u, px[i].v, c);
            }
            Tape tape;
            RenderOutput out = render_pixels(
                cams_[static_cast<std::size_t>(frame.view)], px, model_.field_fn(), frame.time,
                static_cast<std::size_t>(cfg_.schedule.samples_per_ray), rng, cfg_.jitter,
                cfg_.background, data_.near, data_.far);
            Tensor diff = sub(out.rgb, gt);
            Tensor frame_loss = scale(sum(mul(diff, diff)), 1.0 / total_channels);
            tape.backward(frame_loss);
            loss_total += frame_loss.item();
        }
        return loss_total;
    }

    std::vector<CameraParams> train_view_cameras(const std::vector<CameraParams>& all) const {
        std::vector<CameraParams> out;
        for (std::size_t v = 0; v < all.size(); ++v)
            if (!data_.is_holdout(static_cast<int>(v))) out.push_back(all[v]);
        return out;
    }

    std::string param_norm_report() const {
        std::string report = "parameter norms:";
        for (const auto& [name, t] : named_) {
            double sq = 0.0;
            for (double v : t.values()) sq += v * v;
            report += "\n  " + name + " = " + std::to_string(std::sqrt(sq));
        }
        return report;
    }

    static std::vector<OptimizerSlotState> optimizer_state(const Adam& opt) {
        std::vector<OptimizerSlotState> slots;
        for (std::size_t i = 0; i < opt.num_params(); ++i) {
            OptimizerSlotState s;
            s.param = "slot" + std::to_string(i);
            s.t = opt.slot(i).t;
            s.m = opt.slot(i).m;
            s.v = opt.slot(i).v;
            slots.push_back(std::move(s));
        }
        return slots;
    }

    static void restore_optimizer(Adam& opt, const std::string& name,
                                  const std::vector<OptimizerSlotState>& slots) {
        if (slots.size() != opt.num_params())
            throw std::runtime_error("restore: optimizer '" + name + "' holds " +
                                     std::to_string(slots.size()) + " slots, expected " +
                                     std::to_string(opt.num_params()));
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (slots[i].m.size() != opt.slot(i).m.size())
                throw std::runtime_error("restore: optimizer '" + name + "' slot " +
                                         std::to_string(i) + " size mismatch");
            opt.slot(i).t = slots[i].t;
            opt.slot(i).m = slots[i].m;
            opt.slot(i).v = slots[i].v;
        }
    }

    Dataset data_;
    TrainConfig cfg_;
    std::vector<CameraParams> cams_;
    RadianceModel model_;
    OptimizerBank bank_;
    NamedTensors named_;
    std::vector<std::size_t> train_frames_;
    std::int64_t epoch_ = 0;
};

// Startup camera sets for the three training modes.
inline std::vector<CameraParams> learnable_copy(const std::vector<CameraParams>& cams) {
    std::vector<CameraParams> out;
    out.reserve(cams.size());
    for (const auto& c : cams) {
        CameraParams n = c.clone();
        n.extr.rotation.set_requires_grad(true);
        n.extr.translation.set_requires_grad(true);
        n.intr.fx.set_requires_grad(true);
        n.intr.fy.set_requires_grad(true);
        n.intr.cx.set_requires_grad(true);
        n.intr.cy.set_requires_grad(true);
        out.push_back(std::move(n));
    }
    return out;
}

}  // namespace plenopt
