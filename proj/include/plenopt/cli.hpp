// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "plenopt/config.hpp"
#include "plenopt/dataio.hpp"
#include "plenopt/metrics.hpp"
#include "plenopt/synthscene.hpp"
#include "plenopt/training.hpp"

namespace plenopt {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitNumericalAbort = 3;
inline constexpr int kExitIoError = 4;

// ---- gen-synth ----

struct GenSynthArgs {
    std::string out_dir;
    std::size_t views = 8;
    int size = 64;
    double radius = 4.0;
    std::size_t blobs = 3;
    bool dynamic = false;
    std::size_t timesteps = 1;  // forced to 8 by --dynamic unless set
    std::string layout = "ring";
    double near = 0.1;
    double far = 6.0;
    double focal_scale = 1.0;
    std::uint64_t seed = 1;
    bool pose_free = false;  // omit cameras.json
};

inline int cmd_gen_synth(const GenSynthArgs& args) {
    AnalyticScene scene = make_blob_scene(args.blobs, args.dynamic, args.seed);
    DatasetSpec spec;
    spec.n_views = args.views;
    spec.n_timesteps = args.dynamic && args.timesteps == 1 ? 8 : args.timesteps;
    spec.width = args.size;
    spec.height = args.size;
    spec.ring_radius = args.radius;
    spec.near = args.near;
    spec.far = args.far;
    spec.layout = camera_layout_from_string(args.layout);
    spec.focal_scale = args.focal_scale;
    spec.seed = args.seed;
    spec.write_cameras = !args.pose_free;
    Dataset d = make_dataset(scene, spec, args.out_dir);
    std::cout << "wrote " << d.frames.size() << " frames to " << args.out_dir << "\n";
    return kExitOk;
}

// ---- perturbation flag ----

// "rot=10deg,trans=0.1,intr=0.25,seed=3,sign=random"
inline PerturbationSpec parse_perturb_flag(const std::string& flag, double scene_scale) {
    PerturbationSpec spec;
    spec.scene_scale = scene_scale;
    std::istringstream in(flag);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--perturb expects key=value pairs, got '" + item + "'");
        const std::string key = item.substr(0, eq);
        std::string value = item.substr(eq + 1);
        if (key == "rot") {
            if (value.size() > 3 && value.substr(value.size() - 3) == "deg")
                value = value.substr(0, value.size() - 3);
            spec.rotation_deg = std::stod(value);
        } else if (key == "trans") {
            spec.translation_frac = std::stod(value);
        } else if (key == "intr") {
            spec.intrinsic_frac = std::stod(value);
        } else if (key == "seed") {
            spec.seed = std::stoull(value);
        } else if (key == "sign") {
            spec.sign = sign_pattern_from_string(value);
        } else {
            throw std::invalid_argument("--perturb: unknown key '" + key + "'");
        }
    }
    return spec;
}

inline double dataset_scene_scale(const Dataset& data) {
    if (!data.cameras) return 1.0;
    double acc = 0.0;
    for (const auto& c : *data.cameras) acc += vnorm(c.extr.translation_vec());
    return acc > 0.0 ? acc / static_cast<double>(data.cameras->size()) : 1.0;
}

// ---- train ----

struct TrainArgs {
    std::string config_path;
    std::string config_text;  // used instead of config_path when non-empty
    std::string dataset_override;
    std::string out_override;
    bool no_pose = false;    // freeze cameras (n_c = 0)
    bool pose_free = false;  // ignore dataset cameras, start from defaults
    std::string perturb;     // perturbation flag, applied to ground truth
    bool plot = false;
};

struct TrainOutcome {
    TrainResult result;
    TrainConfig config;
};

inline TrainOutcome run_training(const TrainArgs& args) {
    TrainConfig cfg = args.config_text.empty() ? TrainConfig::from_file(args.config_path)
                                               : TrainConfig::from_text(args.config_text);
    if (!args.dataset_override.empty()) cfg.dataset = args.dataset_override;
    if (!args.out_override.empty()) cfg.out_dir = args.out_override;
    if (cfg.dataset.empty()) throw std::invalid_argument("config: 'dataset' is required");
    Dataset data = load_dataset(cfg.dataset);
    if (args.no_pose) cfg.schedule.n_c = 0;

    std::vector<CameraParams> cams;
    if (args.pose_free) {
        cams = default_cameras(data.n_views, data.width, data.height, cfg.shared_intrinsics,
                               cfg.learn_skew);
    } else {
        if (!data.cameras)
            throw std::runtime_error(
                "dataset has no cameras.json; train with --pose-free or provide cameras");
        cams = learnable_copy(*data.cameras);
        if (!args.perturb.empty()) {
            const PerturbationSpec spec = parse_perturb_flag(args.perturb, dataset_scene_scale(data));
            cams = perturb_cameras(cams, spec);
            for (auto& c : cams) {  // clones drop requires_grad on intrinsics copies
                c.extr.rotation.set_requires_grad(true);
                c.extr.translation.set_requires_grad(true);
                c.intr.fx.set_requires_grad(true);
                c.intr.fy.set_requires_grad(true);
                c.intr.cx.set_requires_grad(true);
                c.intr.cy.set_requires_grad(true);
            }
        }
    }
    Trainer trainer(data, cfg, std::move(cams));
    TrainOutcome outcome;
    outcome.result = trainer.run();
    outcome.config = cfg;
    if (args.plot) {
        std::vector<double> losses, ates;
        for (const auto& r : outcome.result.rows) {
            losses.push_back(r.loss);
            if (std::isfinite(r.ate_rmse)) ates.push_back(r.ate_rmse);
        }
        ImageBuffer canvas;
        canvas.width = 480;
        canvas.height = 320;
        canvas.rgb.assign(480 * 320 * 3, 1.0);
        draw_series(canvas, losses, {0.85, 0.2, 0.15});
        if (!ates.empty()) draw_series(canvas, ates, {0.15, 0.3, 0.85});
        save_png(canvas, cfg.out_dir + "/traces.png");
    }
    return outcome;
}

inline int cmd_train(const TrainArgs& args) {
    TrainOutcome out = run_training(args);
    std::cout << "trained " << out.result.rows.size() << " epochs; final loss "
              << (out.result.rows.empty() ? 0.0 : out.result.rows.back().loss) << "\n"
              << "checkpoint: " << out.result.checkpoint_path << "\n"
              << "log: " << out.result.csv_path << "\n";
    return kExitOk;
}

// ---- checkpoint-backed rendering and evaluation ----

struct RestoredRun {
    TrainConfig config;
    Dataset data;
    std::unique_ptr<Trainer> trainer;  // holds the model and cameras
};

inline RestoredRun restore_run(const std::string& checkpoint_path,
                               const std::string& dataset_dir) {
    CheckpointData ckpt = load_checkpoint(checkpoint_path);
    RestoredRun run;
    run.config = TrainConfig::from_text(ckpt.config_text);
    run.data = load_dataset(dataset_dir.empty() ? run.config.dataset : dataset_dir);
    if (run.data.content_hash != ckpt.dataset_hash)
        std::cerr << "warning: dataset hash differs from the checkpoint's training dataset\n";
    auto cams = default_cameras(run.data.n_views, run.data.width, run.data.height,
                                run.config.shared_intrinsics, run.config.learn_skew);
    run.trainer = std::make_unique<Trainer>(run.data, run.config, std::move(cams));
    run.trainer->restore(ckpt);
    return run;
}

// Maps the ground-truth holdout pose into the model's world frame through the
// similarity that best aligns the trained cameras onto ground truth. The
// holdout view keeps its ground-truth intrinsics.
struct HoldoutEval {
    double psnr = 0.0;
    double ssim_value = 0.0;
    int view = -1;
};

inline CameraParams map_camera_into_model_frame(const CameraParams& gt_cam,
                                                const SimilarityTransform& est_to_gt) {
    CameraParams mapped = gt_cam.clone();
    const double inv_s = 1.0 / est_to_gt.scale;
    const Mat3 rt = mat3_transpose(est_to_gt.rotation);
    const Vec3 center =
        vscale(mat3_apply(rt, vsub(gt_cam.extr.translation_vec(), est_to_gt.translation)), inv_s);
    const Mat3 rot = mat3_mul(rt, gt_cam.extr.rotation_mat());
    mapped.extr = ExtrinsicParams::create(so3_log(rot), center, false);
    return mapped;
}

struct EvalReport {
    std::vector<HoldoutEval> holdouts;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double ate_rmse = std::numeric_limits<double>::quiet_NaN();
    double rot_err_deg = std::numeric_limits<double>::quiet_NaN();
    double focal_err_px = std::numeric_limits<double>::quiet_NaN();
};

inline EvalReport evaluate_run(RestoredRun& run, std::size_t render_samples = 0) {
    const Dataset& data = run.data;
    const std::size_t n_samples =
        render_samples > 0 ? render_samples
                           : static_cast<std::size_t>(run.config.schedule.samples_per_ray);
    EvalReport report;
    SimilarityTransform est_to_gt;  // identity fallback
    double near = data.near, far = data.far;
    std::vector<CameraParams> train_est, train_gt;
    if (data.cameras) {
        for (std::size_t v = 0; v < data.n_views; ++v)
            if (!data.is_holdout(static_cast<int>(v))) {
                train_est.push_back(run.trainer->cameras()[v]);
                train_gt.push_back((*data.cameras)[v]);
            }
        TrajectoryError err = ate(train_est, train_gt);
        report.ate_rmse = err.ate_rmse;
        double racc = 0.0;
        for (double r : err.rotation_errors_deg) racc += r;
        report.rot_err_deg = racc / static_cast<double>(err.rotation_errors_deg.size());
        report.focal_err_px = focal_error_px(train_est, train_gt);
        est_to_gt = err.alignment;
        near = data.near / est_to_gt.scale;
        far = data.far / est_to_gt.scale;
    }
    FieldFn field = run.trainer->model().field_fn();
    double psnr_acc = 0.0, ssim_acc = 0.0;
    std::size_t count = 0;
    for (std::size_t fi = 0; fi < data.frames.size(); ++fi) {
        const FrameRef& frame = data.frames[fi];
        if (!data.is_holdout(frame.view)) continue;
        CameraParams render_cam =
            data.cameras
                ? map_camera_into_model_frame((*data.cameras)[static_cast<std::size_t>(frame.view)],
                                              est_to_gt)
                : run.trainer->cameras()[static_cast<std::size_t>(frame.view)].clone();
        ImageBuffer rendered = render_image(render_cam, field, frame.time, n_samples,
                                            run.config.background, near, far);
        HoldoutEval h;
        h.view = frame.view;
        h.psnr = psnr(rendered, data.images[fi]);
        h.ssim_value = ssim(rendered, data.images[fi]);
        report.holdouts.push_back(h);
        psnr_acc += h.psnr;
        ssim_acc += h.ssim_value;
        ++count;
    }
    if (count > 0) {
        report.mean_psnr = psnr_acc / static_cast<double>(count);
        report.mean_ssim = ssim_acc / static_cast<double>(count);
    }
    return report;
}

struct EvalArgs {
    std::string checkpoint;
    std::string dataset;
    std::string out_csv;
    std::string baseline;  // optional second checkpoint for delta columns
    std::size_t render_samples = 0;
};

inline int cmd_eval(const EvalArgs& args) {
    RestoredRun run = restore_run(args.checkpoint, args.dataset);
    EvalReport report = evaluate_run(run, args.render_samples);
    std::optional<EvalReport> baseline;
    if (!args.baseline.empty()) {
        RestoredRun base = restore_run(args.baseline, args.dataset);
        baseline = evaluate_run(base, args.render_samples);
    }
    std::ofstream csv(args.out_csv);
    if (!csv) throw std::runtime_error("cannot write " + args.out_csv);
    csv << "scene,view,psnr,ssim,lpips,ate_rmse,rot_err_deg,focal_err_px";
    if (baseline) csv << ",psnr_delta,ssim_delta,ate_delta";
    csv << "\n";
    const std::string scene = std::filesystem::path(run.data.dir).filename().string();
    auto row = [&](const std::string& view, double p, double s, double a, double r, double f,
                   const EvalReport* base_row, double bp, double bs, double ba) {
        char buf[512];
        std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,,%.17g,%.17g,%.17g", scene.c_str(),
                      view.c_str(), p, s, a, r, f);
        csv << buf;
        if (base_row) {
            std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g", p - bp, s - bs, a - ba);
            csv << buf;
        }
        csv << "\n";
    };
    for (std::size_t i = 0; i < report.holdouts.size(); ++i) {
        const HoldoutEval& h = report.holdouts[i];
        const HoldoutEval* bh = baseline && i < baseline->holdouts.size()
                                    ? &baseline->holdouts[i]
                                    : nullptr;
        row(std::to_string(h.view), h.psnr, h.ssim_value, report.ate_rmse, report.rot_err_deg,
            report.focal_err_px, baseline ? &*baseline : nullptr, bh ? bh->psnr : 0.0,
            bh ? bh->ssim_value : 0.0, baseline ? baseline->ate_rmse : 0.0);
    }
    row("mean", report.mean_psnr, report.mean_ssim, report.ate_rmse, report.rot_err_deg,
        report.focal_err_px, baseline ? &*baseline : nullptr,
        baseline ? baseline->mean_psnr : 0.0, baseline ? baseline->mean_ssim : 0.0,
        baseline ? baseline->ate_rmse : 0.0);
    std::cout << "holdout psnr " << report.mean_psnr << " dB, ssim " << report.mean_ssim
              << ", ate " << report.ate_rmse << "\n";
    return kExitOk;
}

// ---- render ----

struct RenderArgs {
    std::string checkpoint;
    std::string cameras_json;
    std::string out_png;
    int view = 0;
    double time = 0.0;
    std::size_t samples = 128;
    std::string dataset;  // optional override for scene box/near/far
};

inline int cmd_render(const RenderArgs& args) {
    RestoredRun run = restore_run(args.checkpoint, args.dataset);
    auto cams = load_cameras_json(args.cameras_json);
    if (args.view < 0 || static_cast<std::size_t>(args.view) >= cams.size())
        throw std::invalid_argument("render: view index out of range");
    ImageBuffer img = render_image(cams[static_cast<std::size_t>(args.view)],
                                   run.trainer->model().field_fn(), args.time, args.samples,
                                   run.config.background, run.data.near, run.data.far);
    save_png(img, args.out_png);
    std::cout << "wrote " << args.out_png << "\n";
    return kExitOk;
}

// ---- ablate ----

struct AblationPlan {
    enum class Class { kIntrinsics, kRotation, kTranslation, kBoth };
    Class param_class = Class::kIntrinsics;
    double range = 0.5;  // degrees for rotation, fraction otherwise
    double step = 0.25;
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir;

    static Class class_from_string(const std::string& s) {
        if (s == "intrinsics") return Class::kIntrinsics;
        if (s == "rotation") return Class::kRotation;
        if (s == "translation") return Class::kTranslation;
        if (s == "both") return Class::kBoth;
        throw std::invalid_argument("unknown ablation class: " + s);
    }

    void validate() const {
        if (range < 0 || step <= 0) throw std::invalid_argument("ablation: range/step invalid");
        const double ratio = range / step;
        if (std::abs(ratio - std::round(ratio)) > 1e-9)
            throw std::invalid_argument("ablation: step must divide range");
    }

    std::vector<double> grid() const {
        const auto k = static_cast<std::int64_t>(std::llround(range / step));
        std::vector<double> points;
        for (std::int64_t i = -k; i <= k; ++i) points.push_back(static_cast<double>(i) * step);
        return points;
    }

    std::string class_name() const {
        switch (param_class) {
            case Class::kIntrinsics: return "intrinsics";
            case Class::kRotation: return "rotation";
            case Class::kTranslation: return "translation";
            case Class::kBoth: return "both";
        }
        return "?";
    }
};

struct AblateArgs {
    std::string config_path;
    std::string config_text;
    std::string dataset;
    AblationPlan plan;
    bool plot = false;
};

namespace detail {

struct SweepRow {
    std::string param_class;
    double magnitude = 0.0;
    std::uint64_t seed = 0;
    std::string arm;
    std::string status = "ok";
    double psnr = std::numeric_limits<double>::quiet_NaN();
    double ssim = std::numeric_limits<double>::quiet_NaN();
    double ate_rmse = std::numeric_limits<double>::quiet_NaN();
    double rot_err_deg = std::numeric_limits<double>::quiet_NaN();
    double focal_err_px = std::numeric_limits<double>::quiet_NaN();
    std::string run_dir;
};

inline std::string run_dir_name(const AblationPlan& plan, double mag, std::uint64_t seed,
                                const std::string& arm) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s_%+.4f_s%llu_%s", plan.class_name().c_str(), mag,
                  static_cast<unsigned long long>(seed), arm.c_str());
    return plan.out_dir + "/" + buf;
}

}  // namespace detail

// One grid point, one seed, one arm: train from the perturbed cameras and
// evaluate the holdout view. metrics.json marks a completed run for resume.
inline detail::SweepRow run_ablation_arm(const TrainConfig& base_cfg, const Dataset& data,
                                         const AblationPlan& plan, double magnitude,
                                         std::uint64_t seed, bool refine) {
    detail::SweepRow row;
    row.param_class = plan.class_name();
    row.magnitude = magnitude;
    row.seed = seed;
    row.arm = refine ? "refine" : "frozen";
    row.run_dir = detail::run_dir_name(plan, magnitude, seed, row.arm);
    const std::string metrics_path = row.run_dir + "/metrics.json";
    if (std::filesystem::exists(metrics_path)) {
        try {
            json m = json::parse(read_file_bytes(metrics_path));
            row.psnr = m.at("psnr").get<double>();
            row.ssim = m.at("ssim").get<double>();
            row.ate_rmse = m.at("ate_rmse").get<double>();
            row.rot_err_deg = m.at("rot_err_deg").get<double>();
            row.focal_err_px = m.at("focal_err_px").get<double>();
            row.status = "resumed";
            return row;
        } catch (const std::exception&) {
            std::cerr << "warning: skipping corrupted run directory " << row.run_dir << "\n";
            row.status = "corrupt";
            return row;
        }
    }
    TrainConfig cfg = base_cfg;
    cfg.out_dir = row.run_dir;
    if (!refine) cfg.schedule.n_c = 0;
    PerturbationSpec spec;
    spec.seed = seed;
    spec.scene_scale = dataset_scene_scale(data);
    spec.sign = magnitude >= 0 ? SignPattern::kPositive : SignPattern::kNegative;
    const double mag = std::abs(magnitude);
    using C = AblationPlan::Class;
    if (plan.param_class == C::kIntrinsics || plan.param_class == C::kBoth)
        spec.intrinsic_frac = mag;
    if (plan.param_class == C::kRotation || plan.param_class == C::kBoth) spec.rotation_deg = mag;
    if (plan.param_class == C::kTranslation || plan.param_class == C::kBoth)
        spec.translation_frac = mag;
    auto cams = perturb_cameras(learnable_copy(*data.cameras), spec);
    for (auto& c : cams) {
        c.extr.rotation.set_requires_grad(true);
        c.extr.translation.set_requires_grad(true);
        c.intr.fx.set_requires_grad(true);
        c.intr.fy.set_requires_grad(true);
        c.intr.cx.set_requires_grad(true);
        c.intr.cy.set_requires_grad(true);
    }
    Trainer trainer(data, cfg, std::move(cams));
    TrainResult result = trainer.run();
    RestoredRun run;
    run.config = cfg;
    run.data = data;
    run.trainer = std::make_unique<Trainer>(data, cfg, default_cameras(data.n_views, data.width,
                                                                       data.height,
                                                                       cfg.shared_intrinsics,
                                                                       cfg.learn_skew));
    run.trainer->restore(load_checkpoint(result.checkpoint_path));
    EvalReport report = evaluate_run(run);
    row.psnr = report.mean_psnr;
    row.ssim = report.mean_ssim;
    row.ate_rmse = report.ate_rmse;
    row.rot_err_deg = report.rot_err_deg;
    row.focal_err_px = report.focal_err_px;
    json m = {{"psnr", row.psnr},
              {"ssim", row.ssim},
              {"ate_rmse", row.ate_rmse},
              {"rot_err_deg", row.rot_err_deg},
              {"focal_err_px", row.focal_err_px}};
    std::ofstream out(metrics_path);
    out << m.dump(2) << "\n";
    return row;
}

inline int cmd_ablate(const AblateArgs& args) {
    TrainConfig base = args.config_text.empty() ? TrainConfig::from_file(args.config_path)
                                                : TrainConfig::from_text(args.config_text);
    if (!args.dataset.empty()) base.dataset = args.dataset;
    AblationPlan plan = args.plan;
    plan.validate();
    Dataset data = load_dataset(base.dataset);
    if (!data.cameras) throw std::runtime_error("ablate: dataset needs ground-truth cameras");
    std::filesystem::create_directories(plan.out_dir);
    std::vector<detail::SweepRow> rows;
    for (double mag : plan.grid())
        for (std::uint64_t seed : plan.seeds)
            for (bool refine : {true, false})
                rows.push_back(run_ablation_arm(base, data, plan, mag, seed, refine));
    const std::string sweep_path = plan.out_dir + "/sweep.csv";
    std::ofstream csv(sweep_path);
    if (!csv) throw std::runtime_error("cannot write " + sweep_path);
    csv << "param_class,magnitude,seed,arm,status,psnr,ssim,lpips,ate_rmse,rot_err_deg,"
           "focal_err_px,run_dir\n";
    for (const auto& r : rows) {
        char buf[512];
        std::snprintf(buf, sizeof buf, "%s,%.6g,%llu,%s,%s,%.17g,%.17g,,%.17g,%.17g,%.17g,%s",
                      r.param_class.c_str(), r.magnitude,
                      static_cast<unsigned long long>(r.seed), r.arm.c_str(), r.status.c_str(),
                      r.psnr, r.ssim, r.ate_rmse, r.rot_err_deg, r.focal_err_px,
                      r.run_dir.c_str());
        csv << buf << "\n";
    }
    if (args.plot) {
        std::vector<double> refine_psnr, frozen_psnr;
        for (const auto& r : rows)
            (r.arm == "refine" ? refine_psnr : frozen_psnr).push_back(r.psnr);
        ImageBuffer canvas;
        canvas.width = 480;
        canvas.height = 320;
        canvas.rgb.assign(480 * 320 * 3, 1.0);
        draw_series(canvas, refine_psnr, {0.15, 0.55, 0.2});
        draw_series(canvas, frozen_psnr, {0.85, 0.2, 0.15});
        save_png(canvas, plan.out_dir + "/sweep.png");
    }
    std::cout << "sweep complete: " << rows.size() << " runs, " << sweep_path << "\n";
    return kExitOk;
}

}  // namespace plenopt
