// Run configuration: one JSON file covering every module knob, strict about
// unknown keys, with the resolved snapshot re-emitted next to run outputs.
#pragma once

#include <cstdint>
#include <string>

#include "cpgait/features.hpp"
#include "cpgait/model.hpp"
#include "cpgait/pose.hpp"
#include "cpgait/train.hpp"

namespace cpgait::cfg {

struct RunConfig {
    std::string preset = "desk";          // desk | paper
    std::string fusion = "concat";        // concat | xattn
    std::string features = "selected14";  // selected14 | all24
    std::string streams = "both";         // both | skeleton_only | clinical_only
    std::uint64_t seed = 0;
    double fps = 30.0;
    bool normalize = true;  // hip-center / torso-scale during convert

    int window = 124;
    int stride = 12;
    double min_conf = 0.2;
    double min_frac = 0.8;
    double split_train = 0.7;
    double split_val = 0.15;
    double split_test = 0.15;

    int batch_size = 0;  // 0 -> preset default (desk 32, paper 128)
    int phase1_epochs = 3;
    int total_epochs = 20;
    int patience = 5;
    double phase1_lr = 1e-3;
    double phase2_lr = 1e-4;
    double eta_min = 1e-6;
    double weight_decay = 5e-5;
    bool decoupled_wd = false;
    bool weighted_loss = false;
    double augment_noise_px = 0.0;
    bool augment_flip = false;

    int clips_per_class = 12;
    int frames_per_clip = 160;
};

// Missing keys keep their defaults; unknown keys -> ConfigError.
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& rc);
void check_run_config(const RunConfig& rc);  // value ranges -> ConfigError

int resolved_batch_size(const RunConfig& rc);
model::ModelConfig to_model_config(const RunConfig& rc);
train::TrainConfig to_train_config(const RunConfig& rc);
feat::FeatureSubset to_subset(const RunConfig& rc);
pose::SyntheticSpec to_synth_spec(const RunConfig& rc);

}  // namespace cpgait::cfg
