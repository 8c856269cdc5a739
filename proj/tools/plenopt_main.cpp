// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: dataset generation, training, rendering, evaluation
// and perturbation sweeps. Exit codes: 0 ok, 2 config error, 3 numerical
// abort, 4 IO/runtime error.

#include <CLI11.hpp>
#include <iostream>

#include "plenopt/plenopt.hpp"

namespace {

int dispatch(const std::function<int()>& body) {
    try {
        return body();
    } catch (const plenopt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return plenopt::kExitConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return plenopt::kExitConfigError;
    } catch (const plenopt::NumericalAbort& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return plenopt::kExitNumericalAbort;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return plenopt::kExitIoError;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"plenopt: joint radiance-field and camera-parameter optimization"};
    app.require_subcommand(1);

    plenopt::GenSynthArgs gen;
    CLI::App* cmd_gen = app.add_subcommand("gen-synth", "generate a synthetic blob dataset");
    cmd_gen->add_option("--out", gen.out_dir, "output dataset directory")->required();
    cmd_gen->add_option("--views", gen.views, "number of views");
    cmd_gen->add_option("--size", gen.size, "image width and height");
    cmd_gen->add_option("--radius", gen.radius, "camera ring radius");
    cmd_gen->add_option("--blobs", gen.blobs, "number of gaussian blobs");
    cmd_gen->add_flag("--dynamic", gen.dynamic, "animate the first blob over time");
    cmd_gen->add_option("--timesteps", gen.timesteps, "timesteps per view");
    cmd_gen->add_option("--layout", gen.layout, "camera layout: ring | forward");
    cmd_gen->add_option("--near", gen.near, "near bound");
    cmd_gen->add_option("--far", gen.far, "far bound");
    cmd_gen->add_option("--focal-scale", gen.focal_scale, "true focal as a multiple of width");
    cmd_gen->add_option("--seed", gen.seed, "rng seed");
    cmd_gen->add_flag("--pose-free", gen.pose_free, "omit cameras.json");

    plenopt::TrainArgs train;
    CLI::App* cmd_tr = app.add_subcommand("train", "train a model from a config file");
    cmd_tr->add_option("--config", train.config_path, "key = value config file")->required();
    cmd_tr->add_option("--dataset", train.dataset_override, "override the config's dataset");
    cmd_tr->add_option("--out", train.out_override, "override the config's out_dir");
    cmd_tr->add_flag("--no-pose", train.no_pose, "freeze cameras (n_c = 0)");
    cmd_tr->add_flag("--pose-free", train.pose_free,
                     "start from origin/-z cameras with f = width");
    cmd_tr->add_option("--perturb", train.perturb,
                       "perturb ground-truth cameras, e.g. rot=10deg,trans=0.1,intr=0.25,seed=3");
    cmd_tr->add_flag("--plot", train.plot, "write loss/ATE trace PNG");

    plenopt::RenderArgs render;
    CLI::App* cmd_re = app.add_subcommand("render", "render a view from a checkpoint");
    cmd_re->add_option("--checkpoint", render.checkpoint, "checkpoint file")->required();
    cmd_re->add_option("--cameras", render.cameras_json, "camera JSON file")->required();
    cmd_re->add_option("--out", render.out_png, "output PNG")->required();
    cmd_re->add_option("--view", render.view, "view index into the camera file");
    cmd_re->add_option("--time", render.time, "time in [0,1]");
    cmd_re->add_option("--samples", render.samples, "samples per ray");
    cmd_re->add_option("--dataset", render.dataset, "dataset dir (near/far/scene box)");

    plenopt::EvalArgs eval;
    CLI::App* cmd_ev = app.add_subcommand("eval", "evaluate a checkpoint on holdout views");
    cmd_ev->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
    cmd_ev->add_option("--dataset", eval.dataset, "dataset directory");
    cmd_ev->add_option("--out", eval.out_csv, "metrics CSV path")->required();
    cmd_ev->add_option("--baseline", eval.baseline, "baseline checkpoint for delta columns");
    cmd_ev->add_option("--samples", eval.render_samples, "render samples per ray");

    plenopt::AblateArgs ablate;
    std::string ablate_class = "intrinsics";
    CLI::App* cmd_ab = app.add_subcommand("ablate", "perturbation sweep with refine/frozen arms");
    cmd_ab->add_option("--config", ablate.config_path, "training config file")->required();
    cmd_ab->add_option("--dataset", ablate.dataset, "override the config's dataset");
    cmd_ab->add_option("--param-class", ablate_class,
                       "intrinsics | rotation | translation | both");
    cmd_ab->add_option("--range", ablate.plan.range, "sweep half-range (deg or fraction)");
    cmd_ab->add_option("--step", ablate.plan.step, "sweep step (must divide range)");
    cmd_ab->add_option("--seeds", ablate.plan.seeds, "perturbation seeds");
    cmd_ab->add_option("--out", ablate.plan.out_dir, "sweep output directory")->required();
    cmd_ab->add_flag("--plot", ablate.plot, "write sweep PSNR plot");

    CLI11_PARSE(app, argc, argv);

    if (cmd_gen->parsed()) return dispatch([&] { return plenopt::cmd_gen_synth(gen); });
    if (cmd_tr->parsed()) return dispatch([&] { return plenopt::cmd_train(train); });
    if (cmd_re->parsed()) return dispatch([&] { return plenopt::cmd_render(render); });
    if (cmd_ev->parsed()) return dispatch([&] { return plenopt::cmd_eval(eval); });
    if (cmd_ab->parsed()) {
        return dispatch([&] {
            ablate.plan.param_class = plenopt::AblationPlan::class_from_string(ablate_class);
            return plenopt::cmd_ablate(ablate);
        });
    }
    return plenopt::kExitOk;
}
