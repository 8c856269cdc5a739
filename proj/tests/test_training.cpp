// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "plenopt/training.hpp"

using namespace plenopt;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    const std::string dir = "test_tmp/" + name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Tiny dataset shared by the trainer tests; built once per size.
const Dataset& tiny_dataset(bool dynamic = false) {
    static std::map<bool, Dataset> cache;
    auto it = cache.find(dynamic);
    if (it == cache.end()) {
        AnalyticScene scene = make_blob_scene(2, dynamic, 23);
        DatasetSpec spec;
        spec.n_views = 3;
        spec.n_timesteps = dynamic ? 2 : 1;
        spec.width = 16;
        spec.height = 16;
        spec.ring_radius = 4.0;
        spec.near = 2.0;
        spec.far = 6.5;
        spec.oracle_samples = 64;
        it = cache.emplace(dynamic,
                           make_dataset(scene, spec, "test_tmp/dataset_" +
                                                         std::string(dynamic ? "dyn" : "stat")))
                 .first;
    }
    return it->second;
}

TrainConfig tiny_config(const std::string& out_dir, bool dynamic) {
    TrainConfig cfg;
    cfg.out_dir = out_dir;
    cfg.schedule.n_all = 5;
    cfg.schedule.rays_per_image = 24;
    cfg.schedule.samples_per_ray = 6;
    cfg.model.hidden = 8;
    cfg.model.density_depth = 2;
    cfg.model.color_depth = 1;
    cfg.model.deform_depth = 2;
    cfg.model.pos_bands = 2;
    cfg.model.pos_freqs = 2;
    cfg.model.dir_bands = 1;
    cfg.model.dir_freqs = 2;
    cfg.model.warm_bands = 1;
    cfg.model.dynamic = dynamic;
    cfg.seed = 7;
    return cfg;
}

enum class ParamClass { kStatic, kDynamic, kGates, kPose, kFocal, kSkew };

ParamClass classify(const std::string& name) {
    if (name.size() > 6 && name.substr(name.size() - 6) == ".gates") return ParamClass::kGates;
    if (name.rfind("static.", 0) == 0) return ParamClass::kStatic;
    if (name.rfind("dynamic.", 0) == 0) return ParamClass::kDynamic;
    if (name.find(".rotation") != std::string::npos ||
        name.find(".translation") != std::string::npos)
        return ParamClass::kPose;
    if (name.find(".skew") != std::string::npos) return ParamClass::kSkew;
    return ParamClass::kFocal;
}

}  // namespace

TEST_CASE("photometric loss examples") {
    Tensor a = Tensor::from_values({4, 3}, std::vector<double>(12, 0.25));
    CHECK(photometric_loss(a, a).item() == 0.0);

    Tensor b = Tensor::zeros({4, 3});
    for (std::size_t i = 0; i < 12; ++i) b.mutable_values()[i] = 0.25 + 0.1;
    CHECK_THAT(photometric_loss(b, a).item(), Catch::Matchers::WithinAbs(0.01, 1e-15));

    // gradient w.r.t. pred is 2 (pred - gt) / count
    Tensor pred = Tensor::param({2, 3}, {0.1, 0.5, 0.9, 0.3, 0.2, 0.7});
    Tensor gt = Tensor::from_values({2, 3}, {0.0, 0.6, 0.8, 0.35, 0.25, 0.6});
    auto f = [&] { return photometric_loss(pred, gt); };
    CHECK(gradient_check(f, {pred}, 1e-6) < 1e-9);
    pred.zero_grad();
    {
        Tape tape;
        Tensor loss = photometric_loss(pred, gt);
        tape.backward(loss);
    }
    CHECK_THAT(pred.grad()[0], Catch::Matchers::WithinAbs(2.0 * 0.1 / 6.0, 1e-15));

    Tensor empty = Tensor::zeros({0, 3});
    CHECK_THROWS_AS(photometric_loss(empty, empty), std::invalid_argument);
}

TEST_CASE("lr_at reproduces the decay rules") {
    ScheduleConfig cfg;  // paper defaults
    CHECK(lr_at(0, LrKind::kField, cfg) == 0.001);
    CHECK(lr_at(0, LrKind::kCamera, cfg) == 0.001);
    CHECK(lr_at(99, LrKind::kField, cfg) == 0.001);
    CHECK_THAT(lr_at(100, LrKind::kField, cfg), Catch::Matchers::WithinAbs(0.000997, 1e-18));
    CHECK_THAT(lr_at(10, LrKind::kCamera, cfg), Catch::Matchers::WithinAbs(0.0009, 1e-18));
    CHECK_THAT(lr_at(20, LrKind::kCamera, cfg), Catch::Matchers::WithinAbs(0.00081, 1e-18));
}

TEST_CASE("schedule exactness over a scripted 5-epoch run") {
    const Dataset& data = tiny_dataset(true);
    TrainConfig cfg = tiny_config(fresh_dir("schedule"), true);
    cfg.schedule.n_s = 2;
    cfg.schedule.n_c = 3;
    REQUIRE(data.cameras.has_value());
    Trainer trainer(data, cfg, learnable_copy(*data.cameras));

    auto hashes = hash_named_tensors(trainer.named_params());
    std::vector<std::map<std::string, bool>> changed_by_epoch;
    trainer.run({}, [&](const EpochRecord&, Trainer& t) {
        auto now = hash_named_tensors(t.named_params());
        std::map<std::string, bool> changed;
        for (std::size_t i = 0; i < now.size(); ++i)
            changed[now[i].first] = now[i].second != hashes[i].second;
        hashes = now;
        changed_by_epoch.push_back(std::move(changed));
    });
    REQUIRE(changed_by_epoch.size() == 5);

    // view 2 is the holdout: its camera stays outside the optimizer bank
    auto expect = [&](std::size_t epoch_idx, std::set<ParamClass> mutated) {
        for (const auto& [name, changed] : changed_by_epoch[epoch_idx]) {
            const ParamClass c = classify(name);
            CAPTURE(epoch_idx, name);
            if (c == ParamClass::kSkew || name.rfind("cam.2.", 0) == 0) {
                CHECK_FALSE(changed);
                continue;
            }
            CHECK(changed == (mutated.count(c) != 0));
        }
    };
    const std::set<ParamClass> with_cam = {ParamClass::kStatic, ParamClass::kPose,
                                           ParamClass::kFocal, ParamClass::kGates};
    const std::set<ParamClass> dyn_cam = {ParamClass::kDynamic, ParamClass::kPose,
                                          ParamClass::kFocal, ParamClass::kGates};
    expect(0, with_cam);
    expect(1, with_cam);
    expect(2, dyn_cam);
    expect(3, {ParamClass::kDynamic});
    expect(4, {ParamClass::kDynamic});
}

TEST_CASE("n_c = 0 leaves cameras bit-unchanged") {
    const Dataset& data = tiny_dataset(false);
    TrainConfig cfg = tiny_config(fresh_dir("nc0"), false);
    cfg.schedule.n_c = 0;
    cfg.schedule.n_s = cfg.schedule.n_all;
    Trainer trainer(data, cfg, learnable_copy(*data.cameras));
    auto before = hash_named_tensors(named_camera_params(trainer.cameras()));
    trainer.run();
    auto after = hash_named_tensors(named_camera_params(trainer.cameras()));
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].second == after[i].second);
}

TEST_CASE("n_s = n_all keeps the dynamic branch at initialization") {
    const Dataset& data = tiny_dataset(true);
    TrainConfig cfg = tiny_config(fresh_dir("ns_all"), true);
    cfg.schedule.n_s = cfg.schedule.n_all;
    cfg.schedule.n_c = 2;
    Trainer trainer(data, cfg, learnable_copy(*data.cameras));
    NamedTensors dyn_params;
    for (const auto& [name, t] : trainer.named_params())
        if (name.rfind("dynamic.", 0) == 0 && name.substr(name.size() - 6) != ".gates")
            dyn_params.emplace_back(name, t);
    auto before = hash_named_tensors(dyn_params);
    trainer.run();
    auto after = hash_named_tensors(dyn_params);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CAPTURE(before[i].first);
        CHECK(before[i].second == after[i].second);
    }
}

TEST_CASE("zero learning rates are a fixed point") {
    const Dataset& data = tiny_dataset(false);
    TrainConfig cfg = tiny_config(fresh_dir("zerolr"), false);
    cfg.schedule.lr_field = 0.0;
    cfg.schedule.lr_camera = 0.0;
    Trainer trainer(data, cfg, learnable_copy(*data.cameras));
    auto before = hash_named_tensors(trainer.named_params());
    trainer.run();
    auto after = hash_named_tensors(trainer.named_params());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].second == after[i].second);
}

TEST_CASE("seeded runs are deterministic") {
    const Dataset& data = tiny_dataset(false);
    auto run_once = [&](const std::string& dir) {
        TrainConfig cfg = tiny_config(fresh_dir(dir), false);
        Trainer trainer(data, cfg, learnable_copy(*data.cameras));
        TrainResult r = trainer.run();
        std::ifstream in(r.csv_path);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    CHECK(run_once("det_a") == run_once("det_b"));
}

TEST_CASE("optimizer bank rejects shared parameters") {
    const Dataset& data = tiny_dataset(false);
    RadianceModel model = build_model(tiny_config("test_tmp/_unused", false).model, data.box, 1);
    auto cams = learnable_copy(*data.cameras);
    // alias a field weight into a camera slot to provoke the check
    cams[0].extr.rotation = model.static_field.density.weights[0];
    CHECK_THROWS_AS(OptimizerBank::create(model, cams, false), std::logic_error);
}

TEST_CASE("checkpoint round trip and resume continuity") {
    const Dataset& data = tiny_dataset(false);
    TrainConfig cfg = tiny_config(fresh_dir("ckpt"), false);
    cfg.schedule.n_all = 12;

    // uninterrupted reference run
    Trainer ref(data, cfg, learnable_copy(*data.cameras));
    TrainResult full = ref.run();

    // run to epoch 6, checkpoint, restore into a fresh trainer, continue
    TrainConfig cfg2 = cfg;
    cfg2.out_dir = fresh_dir("ckpt_resume");
    Trainer first(data, cfg2, learnable_copy(*data.cameras));
    first.run(6);
    const std::string ckpt_path = cfg2.out_dir + "/checkpoint.ckpt";
    CheckpointData saved = load_checkpoint(ckpt_path);
    CHECK(saved.epoch == 6);
    CHECK(saved.dataset_hash == data.content_hash);

    TrainConfig cfg3 = cfg;
    cfg3.out_dir = fresh_dir("ckpt_cont");
    Trainer resumed(data, cfg3, learnable_copy(*data.cameras));
    resumed.restore(saved);
    TrainResult tail = resumed.run();
    REQUIRE(tail.rows.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(tail.rows[i].epoch == full.rows[6 + i].epoch);
        CHECK(tail.rows[i].loss == full.rows[6 + i].loss);  // bitwise continuation
    }

    // save -> restore -> save produces byte-identical files
    save_checkpoint(saved, cfg2.out_dir + "/a.ckpt");
    CheckpointData reloaded = load_checkpoint(cfg2.out_dir + "/a.ckpt");
    save_checkpoint(reloaded, cfg2.out_dir + "/b.ckpt");
    CHECK(read_file_bytes(cfg2.out_dir + "/a.ckpt") == read_file_bytes(cfg2.out_dir + "/b.ckpt"));
}

TEST_CASE("restore rejects mismatched architectures and corrupt files") {
    const Dataset& data = tiny_dataset(false);
    TrainConfig cfg = tiny_config(fresh_dir("ckpt_bad"), false);
    Trainer trainer(data, cfg, learnable_copy(*data.cameras));
    trainer.run(2);
    CheckpointData saved = load_checkpoint(cfg.out_dir + "/checkpoint.ckpt");

    SECTION("architecture mismatch lists tensor names") {
        TrainConfig other = cfg;
        other.model.hidden = 12;
        other.out_dir = fresh_dir("ckpt_bad2");
        Trainer mismatched(data, other, learnable_copy(*data.cameras));
        CHECK_THROWS_WITH(mismatched.restore(saved),
                          Catch::Matchers::ContainsSubstring("static.density"));
    }

    SECTION("camera count mismatch is reported as such") {
        auto fewer = learnable_copy(*data.cameras);
        CheckpointData doctored = saved;
        doctored.tensors.erase(
            std::remove_if(doctored.tensors.begin(), doctored.tensors.end(),
                           [](const auto& item) { return item.first == "cam.2.rotation"; }),
            doctored.tensors.end());
        TrainConfig other = cfg;
        other.out_dir = fresh_dir("ckpt_bad3");
        Trainer t2(data, other, learnable_copy(*data.cameras));
        CHECK_THROWS_WITH(t2.restore(doctored),
                          Catch::Matchers::ContainsSubstring("camera parameters"));
    }

    SECTION("corrupted file is rejected without partial effects") {
        auto bytes = read_file_bytes(cfg.out_dir + "/checkpoint.ckpt");
        bytes.resize(bytes.size() / 2);  // truncate
        std::ofstream out(cfg.out_dir + "/corrupt.ckpt", std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(cfg.out_dir + "/corrupt.ckpt"), std::runtime_error);

        std::ofstream bad(cfg.out_dir + "/badmagic.ckpt", std::ios::binary);
        bad << "NOT_A_CHECKPOINT v9\n";
        bad.close();
        CHECK_THROWS_WITH(load_checkpoint(cfg.out_dir + "/badmagic.ckpt"),
                          Catch::Matchers::ContainsSubstring("version mismatch"));
    }
}

TEST_CASE("non-finite loss aborts with epoch context") {
    const Dataset& data = tiny_dataset(false);
    TrainConfig cfg = tiny_config(fresh_dir("nan_abort"), false);
    Trainer trainer(data, cfg, learnable_copy(*data.cameras));
    // poison one weight
    for (auto& [name, t] : const_cast<NamedTensors&>(trainer.named_params()))
        if (name == "static.density.w0") t.mutable_values()[0] = std::nan("");
    CHECK_THROWS_AS(trainer.run(), NumericalAbort);
}
