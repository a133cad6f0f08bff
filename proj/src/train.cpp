#include "cpgait/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <utility>

namespace cpgait::train {

namespace {

using model::FusedModel;
using model::ModelConfig;
using model::Streams;
using pose::ClipWindow;
using FTape = ad::Tape<float>;

constexpr int kEvalChunk = 32;

std::vector<std::vector<double>> raw_feature_rows(const std::vector<ClipWindow>& clips,
                                                  const feat::FeatureSubset& subset) {
    std::vector<std::vector<double>> rows;
    rows.reserve(clips.size());
    for (const auto& c : clips) rows.push_back(feat::select_subset(feat::extract_all(c, c.fps), subset));
    return rows;
}

std::vector<std::vector<double>> standardize_rows(const feat::Standardizer& s,
                                                  const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(feat::apply_standardizer(s, r));
    return out;
}

int argmax_row(const ad::Tensor<float>& probs, std::int64_t n) {
    int best = 0;
    for (std::int64_t k = 1; k < probs.dim(1); ++k)
        if (probs.at2(n, k) > probs.at2(n, best)) best = static_cast<int>(k);
    return best;
}

// Chunked eval-mode predictions; row results are batch-independent.
void predict_all(FusedModel& m, const std::vector<ClipWindow>& clips,
                 const std::vector<std::vector<double>>& z_rows, std::vector<int>* pred,
                 std::vector<std::vector<double>>* probs_out) {
    const std::size_t n = m.cfg.streams == Streams::clinical_only ? z_rows.size() : clips.size();
    for (std::size_t at = 0; at < n; at += kEvalChunk) {
        const std::size_t take = std::min<std::size_t>(kEvalChunk, n - at);
        std::vector<const ClipWindow*> ptrs;
        std::vector<std::vector<double>> zc;
        if (m.cfg.streams != Streams::clinical_only)
            for (std::size_t i = 0; i < take; ++i) ptrs.push_back(&clips[at + i]);
        if (m.cfg.streams != Streams::skeleton_only)
            for (std::size_t i = 0; i < take; ++i) zc.push_back(z_rows[at + i]);
        const ad::Tensor<float> probs = model::predict_probs(m, ptrs, zc);
        for (std::size_t i = 0; i < take; ++i) {
            if (pred) pred->push_back(argmax_row(probs, static_cast<std::int64_t>(i)));
            if (probs_out) {
                std::vector<double> row(static_cast<std::size_t>(probs.dim(1)));
                for (std::int64_t k = 0; k < probs.dim(1); ++k)
                    row[static_cast<std::size_t>(k)] =
                        static_cast<double>(probs.at2(static_cast<std::int64_t>(i), k));
                probs_out->push_back(std::move(row));
            }
        }
    }
}

void check_labels(const std::vector<ClipWindow>& clips, int num_classes) {
    for (const auto& c : clips)
        validate(c.label >= 1 && c.label <= num_classes, "clip label outside 1..K");
}

}  // namespace

void check_train_config(const TrainConfig& tc) {
    require(tc.phase1_epochs >= 0, "train config: negative phase1_epochs");
    require(tc.phase1_epochs < tc.total_epochs, "train config: phase1_epochs must be < total");
    require(tc.phase1_lr > 0.0 && tc.phase2_lr > 0.0 && tc.eta_min > 0.0,
            "train config: rates must be positive");
    require(tc.eta_min <= tc.phase2_lr, "train config: eta_min above phase2_lr");
    require(tc.weight_decay >= 0.0, "train config: negative weight decay");
    require(tc.batch_size >= 1, "train config: batch_size must be positive");
    require(tc.patience >= 1, "train config: patience must be positive");
    require(tc.augment_noise_px >= 0.0, "train config: negative augment noise");
}

void adam_step(model::ParamStore& ps, const std::map<std::string, ad::Tensor<float>>& grads,
               AdamState& st, double lr, double weight_decay, bool decoupled) {
    require(lr >= 0.0 && weight_decay >= 0.0, "adam_step: negative rate");
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (auto& e : ps.entries()) {
        if (!e.trainable || e.buffer) continue;
        const auto it = grads.find(e.name);
        if (it == grads.end()) continue;
        const ad::Tensor<float>& g = it->second;
        require(g.shape == e.value.shape, "adam_step: gradient shape mismatch for " + e.name);
        ad::Tensor<float>& m = st.m[e.name];
        ad::Tensor<float>& v = st.v[e.name];
        if (m.data.empty()) m = ad::Tensor<float>(e.value.shape);
        if (v.data.empty()) v = ad::Tensor<float>(e.value.shape);
        require(m.shape == e.value.shape && v.shape == e.value.shape,
                "adam_step: moment shape mismatch for " + e.name);
        for (std::size_t i = 0; i < e.value.data.size(); ++i) {
            const double p = static_cast<double>(e.value.data[i]);
            double gi = static_cast<double>(g.data[i]);
            if (!decoupled) gi += weight_decay * p;
            const double mi = st.beta1 * static_cast<double>(m.data[i]) + (1.0 - st.beta1) * gi;
            const double vi =
                st.beta2 * static_cast<double>(v.data[i]) + (1.0 - st.beta2) * gi * gi;
            m.data[i] = static_cast<float>(mi);
            v.data[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            double pn = p - lr * mhat / (std::sqrt(vhat) + st.eps);
            if (decoupled) pn -= lr * weight_decay * p;
            e.value.data[i] = static_cast<float>(pn);
        }
    }
}

double lr_schedule(const TrainConfig& tc, int epoch) {
    check_train_config(tc);
    require(epoch >= 1 && epoch <= tc.total_epochs, "lr_schedule: epoch out of range");
    if (epoch <= tc.phase1_epochs) return tc.phase1_lr;
    const int start = tc.phase1_epochs + 1;
    if (epoch == start) return tc.phase2_lr;
    if (epoch == tc.total_epochs) return tc.eta_min;
    const double r = static_cast<double>(epoch - start) / static_cast<double>(tc.total_epochs - start);
    return tc.eta_min + 0.5 * (tc.phase2_lr - tc.eta_min) * (1.0 + std::cos(std::numbers::pi * r));
}

void save_runlog_csv(const std::string& path, const RunLog& log) {
    std::ofstream out(path);
    validate(out.good(), "cannot open " + path + " for writing");
    out << "epoch,loss,val_acc,lr\n";
    char buf[160];
    for (const auto& e : log.epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.6f,%.9g", e.epoch, e.loss, e.val_acc, e.lr);
        out << buf << "\n";
    }
    out << "# best_epoch " << log.best_epoch << (log.early_stopped ? " early_stopped" : "")
        << "\n";
    validate(out.good(), "write failed for " + path);
}

bool update_selection(SelectionState& s, int epoch, double val_acc, int patience) {
    require(epoch >= 1 && patience >= 1, "update_selection: bad arguments");
    if (val_acc > s.best) {
        s.best = val_acc;
        s.best_epoch = epoch;
        s.stale = 0;
        return false;
    }
    ++s.stale;
    return s.stale >= patience;
}

TrainResult train_model(const ModelConfig& mc, const TrainConfig& tc,
                        const std::vector<ClipWindow>& train_clips,
                        const std::vector<ClipWindow>& val_clips,
                        const feat::FeatureSubset& subset) {
    check_train_config(tc);
    require(!train_clips.empty() && !val_clips.empty(), "train_model: empty split");
    const int K = mc.num_classes;
    check_labels(train_clips, K);
    check_labels(val_clips, K);

    const bool use_skel = mc.streams != Streams::clinical_only;
    const bool use_clin = mc.streams != Streams::skeleton_only;

    FusedModel m = model::make_model(mc, subset, tc.seed);

    std::vector<std::vector<double>> ztr, zval;
    if (use_clin) {
        const std::vector<std::vector<double>> raw_tr = raw_feature_rows(train_clips, subset);
        m.standardizer = feat::fit_standardizer(raw_tr);
        ztr = standardize_rows(m.standardizer, raw_tr);
        zval = standardize_rows(m.standardizer, raw_feature_rows(val_clips, subset));
    }

    std::vector<int> ytr(train_clips.size());
    for (std::size_t i = 0; i < train_clips.size(); ++i) ytr[i] = train_clips[i].label - 1;
    std::vector<int> yval(val_clips.size());
    for (std::size_t i = 0; i < val_clips.size(); ++i) yval[i] = val_clips[i].label - 1;

    std::vector<double> class_w(static_cast<std::size_t>(K), 0.0);
    if (tc.weighted_loss) {
        std::vector<std::int64_t> count(static_cast<std::size_t>(K), 0);
        for (int y : ytr) ++count[static_cast<std::size_t>(y)];
        for (int k = 0; k < K; ++k)
            if (count[static_cast<std::size_t>(k)] > 0)
                class_w[static_cast<std::size_t>(k)] =
                    static_cast<double>(ytr.size()) /
                    (static_cast<double>(K) * static_cast<double>(count[static_cast<std::size_t>(k)]));
    }

    model::set_prefix_trainable(m.params, "backbone.", false);

    AdamState st;
    RunLog log;
    SelectionState sel;
    model::ParamStore best_params = m.params;

    const int n_tr = static_cast<int>(train_clips.size());
    const bool augment = tc.augment_flip || tc.augment_noise_px > 0.0;

    for (int e = 1; e <= tc.total_epochs; ++e) {
        if (e == tc.phase1_epochs + 1)
            model::set_backbone_trainable(m.params, tc.unfreeze_blocks, true);
        const double lr = lr_schedule(tc, e);

        std::vector<int> order(static_cast<std::size_t>(n_tr));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(Rng::mix(tc.seed, 0x53485546ULL * 131ULL + static_cast<std::uint64_t>(e)));
        for (int i = n_tr - 1; i > 0; --i) {
            const int j = static_cast<int>(shuffle_rng.uniform() * (i + 1));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }

        double loss_sum = 0.0;
        for (int b0 = 0; b0 < n_tr; b0 += tc.batch_size) {
            const int bsz = std::min(tc.batch_size, n_tr - b0);
            std::vector<int> yb(static_cast<std::size_t>(bsz));
            for (int i = 0; i < bsz; ++i)
                yb[static_cast<std::size_t>(i)] =
                    ytr[static_cast<std::size_t>(order[static_cast<std::size_t>(b0 + i)])];

            FTape tape;
            model::Binder<float> bind(tape, m.params);
            FTape::Var vx = FTape::kNull;
            FTape::Var vz = FTape::kNull;
            std::vector<ClipWindow> aug_store;
            if (use_skel) {
                aug_store.reserve(static_cast<std::size_t>(bsz));
                std::vector<const ClipWindow*> ptrs;
                for (int i = 0; i < bsz; ++i) {
                    const int idx = order[static_cast<std::size_t>(b0 + i)];
                    const ClipWindow* src = &train_clips[static_cast<std::size_t>(idx)];
                    if (augment) {
                        Rng arng(Rng::mix(Rng::mix(tc.seed, 0xA7A6ULL),
                                          static_cast<std::uint64_t>(e) * 1000003ULL +
                                              static_cast<std::uint64_t>(idx)));
                        const bool flip = tc.augment_flip && arng.uniform() < 0.5;
                        const std::uint64_t noise_seed = arng.next_u64();
                        if (flip || tc.augment_noise_px > 0.0) {
                            ClipWindow a = flip ? pose::augment_flip(*src) : *src;
                            if (tc.augment_noise_px > 0.0)
                                a = pose::augment_noise(a, tc.augment_noise_px, noise_seed);
                            aug_store.push_back(std::move(a));
                            src = &aug_store.back();
                        }
                    }
                    ptrs.push_back(src);
                }
                vx = tape.leaf(model::clips_to_tensor<float>(ptrs));
            }
            if (use_clin) {
                ad::Tensor<float> zt({bsz, mc.clinical_dim});
                for (int i = 0; i < bsz; ++i) {
                    const auto& row =
                        ztr[static_cast<std::size_t>(order[static_cast<std::size_t>(b0 + i)])];
                    for (int f = 0; f < mc.clinical_dim; ++f)
                        zt.at2(i, f) = static_cast<float>(row[static_cast<std::size_t>(f)]);
                }
                vz = tape.leaf(zt);
            }

            Rng drng(Rng::mix(Rng::mix(tc.seed, 0xD7ULL),
                              static_cast<std::uint64_t>(e) * 1000003ULL +
                                  static_cast<std::uint64_t>(b0)));
            const model::ModelOut<float> outs =
                model::model_logits(tape, bind, mc, m.graph, vx, vz, Mode::train, drng);
            FTape::Var loss;
            if (tc.weighted_loss) {
                std::vector<double> wv(static_cast<std::size_t>(bsz));
                for (int i = 0; i < bsz; ++i)
                    wv[static_cast<std::size_t>(i)] =
                        class_w[static_cast<std::size_t>(yb[static_cast<std::size_t>(i)])];
                loss = tape.softmax_cross_entropy(outs.logits, yb, wv);
            } else {
                loss = tape.softmax_cross_entropy(outs.logits, yb);
            }
            const double lval = static_cast<double>(tape.val(loss)[0]);
            require(std::isfinite(lval), "train_model: non-finite loss");
            tape.backward(loss);

            std::map<std::string, ad::Tensor<float>> grads;
            for (auto& entry : m.params.entries())
                if (entry.trainable && !entry.buffer && bind.bound(entry.name))
                    grads.emplace(entry.name, bind.grad_of(entry.name));
            bind.flush_buffers();
            adam_step(m.params, grads, st, lr, tc.weight_decay, tc.decoupled_wd);
            loss_sum += lval * bsz;
        }

        std::vector<int> pred;
        predict_all(m, val_clips, zval, &pred, nullptr);
        int hits = 0;
        for (std::size_t i = 0; i < pred.size(); ++i)
            hits += pred[i] == yval[i] ? 1 : 0;
        const double val_acc = static_cast<double>(hits) / static_cast<double>(pred.size());

        log.epochs.push_back({e, loss_sum / n_tr, val_acc, lr});
        const bool stop = update_selection(sel, e, val_acc, tc.patience);
        if (sel.best_epoch == e) best_params = m.params;
        if (stop) {
            log.early_stopped = true;
            break;
        }
    }

    log.best_epoch = sel.best_epoch;
    log.best_val_acc = sel.best;

    TrainResult out{FusedModel{mc, std::move(best_params), m.graph, subset, m.standardizer},
                    std::move(m.params), std::move(st), std::move(log)};
    return out;
}

eval::EvalReport evaluate_model(FusedModel& m, const std::vector<ClipWindow>& clips) {
    require(!clips.empty(), "evaluate_model: no clips");
    const int K = m.cfg.num_classes;
    check_labels(clips, K);
    std::vector<std::vector<double>> z;
    if (m.cfg.streams != Streams::skeleton_only) {
        if (m.standardizer.mean.size() != m.subset.names.size() ||
            m.standardizer.stddev.size() != m.subset.names.size())
            throw CheckpointError("evaluate_model: standardizer stats missing");
        z = standardize_rows(m.standardizer, raw_feature_rows(clips, m.subset));
    }
    std::vector<int> truth(clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) truth[i] = clips[i].label - 1;
    std::vector<int> pred;
    std::vector<std::vector<double>> probs;
    predict_all(m, clips, z, &pred, &probs);
    return eval::evaluate_predictions(truth, pred, probs, K);
}

double patient_majority_accuracy(FusedModel& m, const std::vector<ClipWindow>& clips) {
    require(!clips.empty(), "patient_majority_accuracy: no clips");
    const int K = m.cfg.num_classes;
    check_labels(clips, K);
    std::vector<std::vector<double>> z;
    if (m.cfg.streams != Streams::skeleton_only) {
        if (m.standardizer.mean.size() != m.subset.names.size() ||
            m.standardizer.stddev.size() != m.subset.names.size())
            throw CheckpointError("patient_majority_accuracy: standardizer stats missing");
        z = standardize_rows(m.standardizer, raw_feature_rows(clips, m.subset));
    }
    std::vector<int> pred;
    predict_all(m, clips, z, &pred, nullptr);

    std::map<std::string, std::pair<std::vector<int>, int>> by_patient;  // votes, truth
    for (std::size_t i = 0; i < clips.size(); ++i) {
        auto& rec = by_patient[clips[i].patient_id];
        if (rec.first.empty()) {
            rec.first.assign(static_cast<std::size_t>(K), 0);
            rec.second = clips[i].label - 1;
        } else {
            validate(rec.second == clips[i].label - 1,
                     "patient " + clips[i].patient_id + " has inconsistent labels");
        }
        ++rec.first[static_cast<std::size_t>(pred[i])];
    }
    int hits = 0;
    for (const auto& [pid, rec] : by_patient) {
        (void)pid;
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (rec.first[static_cast<std::size_t>(k)] > rec.first[static_cast<std::size_t>(best)])
                best = k;
        hits += best == rec.second ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(by_patient.size());
}

}  // namespace cpgait::train
