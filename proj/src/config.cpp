#include "cpgait/config.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "cpgait/checkpoint.hpp"

namespace cpgait::cfg {

using nlohmann::ordered_json;

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "preset",        "fusion",          "features",     "streams",
        "seed",          "fps",             "normalize",    "window",
        "stride",        "min_conf",        "min_frac",     "split_train",
        "split_val",     "split_test",      "batch_size",   "phase1_epochs",
        "total_epochs",  "patience",        "phase1_lr",    "phase2_lr",
        "eta_min",       "weight_decay",    "decoupled_wd", "weighted_loss",
        "augment_noise_px", "augment_flip", "clips_per_class", "frames_per_clip"};
    return keys;
}

void cfg_fail(const std::string& msg) { throw ConfigError("config: " + msg); }

template <class T>
void take(const ordered_json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            cfg_fail(std::string("bad value for '") + key + "': " + e.what());
        }
    }
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) cfg_fail("cannot open " + path);
    ordered_json j;
    try {
        j = ordered_json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        cfg_fail(path + ": " + e.what());
    }
    if (!j.is_object()) cfg_fail(path + ": top level must be an object");
    for (const auto& [key, value] : j.items())
        if (!known_keys().count(key)) cfg_fail("unknown key '" + key + "' in " + path);

    RunConfig rc;
    take(j, "preset", rc.preset);
    take(j, "fusion", rc.fusion);
    take(j, "features", rc.features);
    take(j, "streams", rc.streams);
    take(j, "seed", rc.seed);
    take(j, "fps", rc.fps);
    take(j, "normalize", rc.normalize);
    take(j, "window", rc.window);
    take(j, "stride", rc.stride);
    take(j, "min_conf", rc.min_conf);
    take(j, "min_frac", rc.min_frac);
    take(j, "split_train", rc.split_train);
    take(j, "split_val", rc.split_val);
    take(j, "split_test", rc.split_test);
    take(j, "batch_size", rc.batch_size);
    take(j, "phase1_epochs", rc.phase1_epochs);
    take(j, "total_epochs", rc.total_epochs);
    take(j, "patience", rc.patience);
    take(j, "phase1_lr", rc.phase1_lr);
    take(j, "phase2_lr", rc.phase2_lr);
    take(j, "eta_min", rc.eta_min);
    take(j, "weight_decay", rc.weight_decay);
    take(j, "decoupled_wd", rc.decoupled_wd);
    take(j, "weighted_loss", rc.weighted_loss);
    take(j, "augment_noise_px", rc.augment_noise_px);
    take(j, "augment_flip", rc.augment_flip);
    take(j, "clips_per_class", rc.clips_per_class);
    take(j, "frames_per_clip", rc.frames_per_clip);
    check_run_config(rc);
    return rc;
}

void save_run_config(const std::string& path, const RunConfig& rc) {
    ordered_json j;
    j["preset"] = rc.preset;
    j["fusion"] = rc.fusion;
    j["features"] = rc.features;
    j["streams"] = rc.streams;
    j["seed"] = rc.seed;
    j["fps"] = rc.fps;
    j["normalize"] = rc.normalize;
    j["window"] = rc.window;
    j["stride"] = rc.stride;
    j["min_conf"] = rc.min_conf;
    j["min_frac"] = rc.min_frac;
    j["split_train"] = rc.split_train;
    j["split_val"] = rc.split_val;
    j["split_test"] = rc.split_test;
    j["batch_size"] = rc.batch_size;
    j["phase1_epochs"] = rc.phase1_epochs;
    j["total_epochs"] = rc.total_epochs;
    j["patience"] = rc.patience;
    j["phase1_lr"] = rc.phase1_lr;
    j["phase2_lr"] = rc.phase2_lr;
    j["eta_min"] = rc.eta_min;
    j["weight_decay"] = rc.weight_decay;
    j["decoupled_wd"] = rc.decoupled_wd;
    j["weighted_loss"] = rc.weighted_loss;
    j["augment_noise_px"] = rc.augment_noise_px;
    j["augment_flip"] = rc.augment_flip;
    j["clips_per_class"] = rc.clips_per_class;
    j["frames_per_clip"] = rc.frames_per_clip;
    std::ofstream os(path, std::ios::binary);
    if (!os) cfg_fail("cannot write " + path);
    os << j.dump(2) << '\n';
    if (!os) cfg_fail("failed writing " + path);
}

void check_run_config(const RunConfig& rc) {
    if (rc.preset != "desk" && rc.preset != "paper")
        cfg_fail("preset must be desk|paper, got '" + rc.preset + "'");
    ckpt::fusion_from_string(rc.fusion);    // throws ConfigError on bad value
    ckpt::streams_from_string(rc.streams);
    if (rc.features != "selected14" && rc.features != "all24")
        cfg_fail("features must be selected14|all24, got '" + rc.features + "'");
    if (!(rc.fps > 0)) cfg_fail("fps must be positive");
    if (rc.window != static_cast<int>(pose::ClipWindow::kT))
        cfg_fail("window must be " + std::to_string(pose::ClipWindow::kT) +
                 " (the model's fixed clip length)");
    if (rc.stride <= 0) cfg_fail("stride must be positive");
    if (!(rc.min_conf >= 0 && rc.min_conf <= 1)) cfg_fail("min_conf must lie in [0,1]");
    if (!(rc.min_frac >= 0 && rc.min_frac <= 1)) cfg_fail("min_frac must lie in [0,1]");
    if (!(rc.split_train > 0 && rc.split_val > 0 && rc.split_test > 0))
        cfg_fail("split fractions must be positive");
    if (std::abs(rc.split_train + rc.split_val + rc.split_test - 1.0) > 1e-9)
        cfg_fail("split fractions must sum to 1");
    if (rc.batch_size < 0) cfg_fail("batch_size must be positive (or 0 for the preset default)");
    if (rc.phase1_epochs <= 0 || rc.phase1_epochs >= rc.total_epochs)
        cfg_fail("need 0 < phase1_epochs < total_epochs");
    if (rc.patience <= 0) cfg_fail("patience must be positive");
    if (!(rc.phase1_lr > 0 && rc.phase2_lr > 0 && rc.eta_min > 0))
        cfg_fail("learning rates must be positive");
    if (rc.weight_decay < 0) cfg_fail("weight_decay must be nonnegative");
    if (rc.augment_noise_px < 0) cfg_fail("augment_noise_px must be nonnegative");
    if (rc.clips_per_class <= 0) cfg_fail("clips_per_class must be positive");
    if (rc.frames_per_clip < rc.window)
        cfg_fail("frames_per_clip must cover at least one window");
}

int resolved_batch_size(const RunConfig& rc) {
    if (rc.batch_size > 0) return rc.batch_size;
    return rc.preset == "paper" ? 128 : 32;
}

model::ModelConfig to_model_config(const RunConfig& rc) {
    model::ModelConfig mc;
    mc.backbone =
        rc.preset == "paper" ? model::BackboneConfig::paper() : model::BackboneConfig::desk();
    mc.clinical_dim = rc.features == "all24" ? 24 : 14;
    mc.fusion = ckpt::fusion_from_string(rc.fusion);
    mc.streams = ckpt::streams_from_string(rc.streams);
    return mc;
}

train::TrainConfig to_train_config(const RunConfig& rc) {
    train::TrainConfig tc;
    tc.phase1_epochs = rc.phase1_epochs;
    tc.total_epochs = rc.total_epochs;
    tc.phase1_lr = rc.phase1_lr;
    tc.phase2_lr = rc.phase2_lr;
    tc.eta_min = rc.eta_min;
    tc.weight_decay = rc.weight_decay;
    tc.batch_size = resolved_batch_size(rc);
    tc.patience = rc.patience;
    tc.decoupled_wd = rc.decoupled_wd;
    tc.weighted_loss = rc.weighted_loss;
    tc.augment_noise_px = rc.augment_noise_px;
    tc.augment_flip = rc.augment_flip;
    tc.seed = rc.seed;
    return tc;
}

feat::FeatureSubset to_subset(const RunConfig& rc) {
    return rc.features == "all24" ? feat::full_subset() : feat::default_subset();
}

pose::SyntheticSpec to_synth_spec(const RunConfig& rc) {
    pose::SyntheticSpec spec;
    spec.clips_per_class = rc.clips_per_class;
    spec.frames_per_clip = rc.frames_per_clip;
    spec.fps = rc.fps;
    return spec;
}

}  // namespace cpgait::cfg
