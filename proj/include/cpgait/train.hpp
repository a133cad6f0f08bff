// Two-phase trainer: frozen-backbone warm phase at a constant rate, then
// cosine annealing with the last blocks unfrozen; Adam with coupled L2,
// early stopping on validation accuracy, best-epoch model selection.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cpgait/common.hpp"
#include "cpgait/metrics.hpp"
#include "cpgait/model.hpp"
#include "cpgait/pose.hpp"

namespace cpgait::train {

struct TrainConfig {
    int phase1_epochs = 3;
    int total_epochs = 20;
    double phase1_lr = 1e-3;
    double phase2_lr = 1e-4;
    double eta_min = 1e-6;
    double weight_decay = 5e-5;
    int batch_size = 32;  // paper preset trains at 128
    int patience = 5;
    std::vector<int> unfreeze_blocks{9, 10};
    bool decoupled_wd = false;
    bool weighted_loss = false;      // inverse-frequency class weights
    double augment_noise_px = 0.0;   // train-time keypoint jitter; 0 disables
    bool augment_flip = false;       // train-time random horizontal flip
    std::uint64_t seed = 0;
};

void check_train_config(const TrainConfig& tc);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::map<std::string, ad::Tensor<float>> m;
    std::map<std::string, ad::Tensor<float>> v;
};

// Coupled L2 by default: grad' = grad + wd*param feeds the moment update;
// decoupled mode shrinks the parameter by lr*wd*param instead. Entries that
// are frozen, buffers, or missing from grads are untouched.
void adam_step(model::ParamStore& ps, const std::map<std::string, ad::Tensor<float>>& grads,
               AdamState& st, double lr, double weight_decay, bool decoupled = false);

// 1-based epochs: constant phase1_lr through phase 1, then cosine from
// phase2_lr down to eta_min over the remaining epochs, endpoints exact.
double lr_schedule(const TrainConfig& tc, int epoch);

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;
};

struct RunLog {
    std::vector<EpochLog> epochs;
    int best_epoch = 0;
    double best_val_acc = -1.0;
    bool early_stopped = false;
};

void save_runlog_csv(const std::string& path, const RunLog& log);

// Best-so-far tracking plus the patience counter. Only strict improvement
// resets the counter, so ties keep the earliest best epoch. Returns true
// when training should stop after this epoch.
struct SelectionState {
    double best = -1.0;
    int best_epoch = 0;
    int stale = 0;
};
bool update_selection(SelectionState& s, int epoch, double val_acc, int patience);

struct TrainResult {
    model::FusedModel best;          // parameters from the best-val-accuracy epoch
    model::ParamStore final_params;  // state after the last trained epoch
    AdamState opt;                   // optimizer state after the last step
    RunLog log;
};

// Fits the feature standardizer on the training split, then runs the
// two-phase loop. Shuffling, augmentation and dropout all derive from the
// config seed, so equal seeds give bit-identical results.
TrainResult train_model(const model::ModelConfig& mc, const TrainConfig& tc,
                        const std::vector<pose::ClipWindow>& train_clips,
                        const std::vector<pose::ClipWindow>& val_clips,
                        const feat::FeatureSubset& subset);

// Clip-level evaluation with class probabilities for ROC/AUC. The model is
// only read; the reference is mutable because forward passes bind through
// the live parameter store.
eval::EvalReport evaluate_model(model::FusedModel& m, const std::vector<pose::ClipWindow>& clips);

// Majority vote over each patient's clip predictions; ties break to the
// lower class. Returns the fraction of patients voted correctly.
double patient_majority_accuracy(model::FusedModel& m, const std::vector<pose::ClipWindow>& clips);

}  // namespace cpgait::train
