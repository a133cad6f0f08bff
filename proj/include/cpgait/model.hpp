// ST-GCN skeleton backbone, clinical feature encoder, dual-stream fusion
// (concat or sigmoid-gated cross-attention) and the classification head.
//
// Parameters live in a ParamStore keyed by checkpoint name; each forward pass
// binds them into a fresh tape as leaves via a Binder, so the same store
// drives float inference and double gradient checking.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cpgait/common.hpp"
#include "cpgait/features.hpp"
#include "cpgait/graph.hpp"
#include "cpgait/pose.hpp"
#include "cpgait/tape.hpp"

namespace cpgait::model {

struct ParamEntry {
    std::string name;
    ad::Tensor<float> value;
    bool trainable = true;
    bool buffer = false;  // running stats: saved with checkpoints, never optimized
};

// Ordered named parameter collection; insertion order fixes checkpoint layout.
class ParamStore {
public:
    ad::Tensor<float>& add(std::string name, ad::Tensor<float> init, bool trainable = true,
                           bool buffer = false);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    ad::Tensor<float>& at(const std::string& name);
    const ad::Tensor<float>& at(const std::string& name) const;
    ParamEntry& entry(const std::string& name);
    const ParamEntry& entry(const std::string& name) const;
    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<ParamEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

struct BlockSpec {
    int in_ch = 0;
    int out_ch = 0;
    int stride = 1;
};

struct BackboneConfig {
    std::vector<BlockSpec> blocks;  // 10 in both presets
    int in_channels = 3;            // (x, y, confidence)
    int temporal_kernel = 9;        // odd; padding (k-1)/2
    double dropout = 0.2;

    int embedding() const { return blocks.empty() ? 0 : blocks.back().out_ch; }
    static BackboneConfig paper();  // 64x4 / 128x3 / 256x3, stride 2 at blocks 5 and 8
    static BackboneConfig desk();   // 8x4 / 16x3 / 32x3, same strides
};

enum class FusionMode { concat, cross_attention };
enum class Streams { both, skeleton_only, clinical_only };

struct ModelConfig {
    BackboneConfig backbone = BackboneConfig::paper();
    int clinical_dim = 14;  // F: selected 14 or all 24
    int clinical_hidden = 64;
    double clinical_dropout = 0.3;
    double head_dropout = 0.3;
    bool head_relu = false;  // optional activation between head layers
    FusionMode fusion = FusionMode::concat;
    Streams streams = Streams::both;
    int num_classes = 4;

    int embedding() const { return backbone.embedding(); }
    int fused_dim() const { return streams == Streams::both ? 2 * embedding() : embedding(); }
};

// Creates every named parameter for the config; weights fan-in-scaled
// uniform, biases zero, batch-norm gamma 1 / beta 0, running stats (0, 1).
void init_model_params(ParamStore& ps, const ModelConfig& cfg, std::uint64_t seed);

// Flips the trainable flag on all parameters of the given backbone blocks
// (1-based); empty list is a no-op; out-of-range block -> contract error.
void set_backbone_trainable(ParamStore& ps, const std::vector<int>& blocks, bool flag);

// Flag every non-buffer parameter whose name starts with prefix.
void set_prefix_trainable(ParamStore& ps, const std::string& prefix, bool flag);

// FNV-1a over names, shapes and value bytes; detects any parameter mutation.
std::uint64_t param_hash(const ParamStore& ps);

// Inserts store entries into a tape on first use. Parameters become leaves
// with requires_grad = trainable; buffers are cast to T and written back to
// the store by flush_buffers (train-mode BN running-stat updates).
template <class T>
class Binder {
public:
    Binder(ad::Tape<T>& tape, ParamStore& store) : tape_(tape), store_(store) {}

    typename ad::Tape<T>::Var var(const std::string& name);
    ad::Tensor<T>* buffer(const std::string& name);
    // Gradient of a bound parameter after backward; zeros if unreached.
    const ad::Tensor<T>& grad_of(const std::string& name);
    bool bound(const std::string& name) const { return vars_.count(name) != 0; }
    void flush_buffers();

private:
    ad::Tape<T>& tape_;
    ParamStore& store_;
    std::map<std::string, typename ad::Tape<T>::Var> vars_;
    std::map<std::string, ad::Tensor<T>> buffers_;
};

// Channels-first batch assembly: [N, 3, 124, 17] from clip windows.
template <class T>
ad::Tensor<T> clips_to_tensor(const std::vector<const pose::ClipWindow*>& clips);

template <class T>
struct BackboneOut {
    typename ad::Tape<T>::Var features;   // final block output, post-activation
    typename ad::Tape<T>::Var embedding;  // f_s after global average pooling
};

// Data batch-norm over the 3*17 per-frame channels, ten ST-GCN blocks, then
// global average pooling. x: [N, C, T, V] leaf already in the tape.
template <class T>
BackboneOut<T> backbone_forward(ad::Tape<T>& tape, Binder<T>& bind, const BackboneConfig& cfg,
                                typename ad::Tape<T>::Var x, const SkeletonGraph& graph, Mode mode,
                                Rng& rng);

// Single block: pointwise_linear -> graph_mul -> bn -> relu -> temporal_conv
// -> bn -> dropout -> residual add -> relu. `block` is 1-based.
template <class T>
typename ad::Tape<T>::Var stgcn_block_forward(ad::Tape<T>& tape, Binder<T>& bind,
                                              const BackboneConfig& cfg, int block,
                                              typename ad::Tape<T>::Var x,
                                              const SkeletonGraph& graph, Mode mode, Rng& rng);

// Two-layer MLP on standardized features: affine -> relu -> dropout -> affine.
template <class T>
typename ad::Tape<T>::Var encode_clinical(ad::Tape<T>& tape, Binder<T>& bind,
                                          const ModelConfig& cfg, typename ad::Tape<T>::Var z,
                                          Mode mode, Rng& rng);

template <class T>
typename ad::Tape<T>::Var fuse_concat(ad::Tape<T>& tape, typename ad::Tape<T>::Var f_s,
                                      typename ad::Tape<T>::Var f_c);

// alpha = sigmoid(<f_s, f_c> / sqrt(d)) per sample;
// output = LN_a(f_s + alpha f_c) (+) LN_b(f_c + alpha f_s).
template <class T>
typename ad::Tape<T>::Var fuse_cross_attention(ad::Tape<T>& tape, Binder<T>& bind,
                                               typename ad::Tape<T>::Var f_s,
                                               typename ad::Tape<T>::Var f_c);

// FC(fused -> embedding) [-> optional relu] -> dropout -> FC(embedding -> K).
template <class T>
typename ad::Tape<T>::Var classify_head(ad::Tape<T>& tape, Binder<T>& bind, const ModelConfig& cfg,
                                        typename ad::Tape<T>::Var fused, Mode mode, Rng& rng);

template <class T>
struct ModelOut {
    typename ad::Tape<T>::Var logits;
    typename ad::Tape<T>::Var features = ad::Tape<T>::kNull;  // kNull without skeleton stream
};

// Full forward; pass kNull for the stream a config omits.
template <class T>
ModelOut<T> model_logits(ad::Tape<T>& tape, Binder<T>& bind, const ModelConfig& cfg,
                         const SkeletonGraph& graph, typename ad::Tape<T>::Var x,
                         typename ad::Tape<T>::Var z, Mode mode, Rng& rng);

// Everything inference needs in one bundle.
struct FusedModel {
    ModelConfig cfg;
    ParamStore params;
    SkeletonGraph graph;
    feat::FeatureSubset subset;
    feat::Standardizer standardizer;  // fitted on the training split
};

FusedModel make_model(const ModelConfig& cfg, const feat::FeatureSubset& subset,
                      std::uint64_t seed);

struct Prediction {
    int label = 1;               // 1-based class; ties break to the lowest index
    std::vector<double> probs;   // K entries, sums to 1
};

// Eval-mode single-clip prediction; selects the subset, standardizes, runs
// the configured streams. Missing standardizer stats -> checkpoint error.
Prediction predict(FusedModel& m, const pose::ClipWindow& clip, const feat::GaitFeatureVector& f);

// Batched eval-mode class probabilities; z_rows are already standardized
// (ignored unless the config uses the clinical stream).
ad::Tensor<float> predict_probs(FusedModel& m, const std::vector<const pose::ClipWindow*>& clips,
                                const std::vector<std::vector<double>>& z_rows);

extern template class Binder<float>;
extern template class Binder<double>;
extern template ad::Tensor<float> clips_to_tensor<float>(const std::vector<const pose::ClipWindow*>&);
extern template ad::Tensor<double> clips_to_tensor<double>(const std::vector<const pose::ClipWindow*>&);
extern template BackboneOut<float> backbone_forward<float>(ad::Tape<float>&, Binder<float>&,
                                                           const BackboneConfig&, ad::Tape<float>::Var,
                                                           const SkeletonGraph&, Mode, Rng&);
extern template BackboneOut<double> backbone_forward<double>(ad::Tape<double>&, Binder<double>&,
                                                             const BackboneConfig&, ad::Tape<double>::Var,
                                                             const SkeletonGraph&, Mode, Rng&);
extern template ad::Tape<float>::Var stgcn_block_forward<float>(ad::Tape<float>&, Binder<float>&,
                                                                const BackboneConfig&, int,
                                                                ad::Tape<float>::Var,
                                                                const SkeletonGraph&, Mode, Rng&);
extern template ad::Tape<double>::Var stgcn_block_forward<double>(ad::Tape<double>&, Binder<double>&,
                                                                  const BackboneConfig&, int,
                                                                  ad::Tape<double>::Var,
                                                                  const SkeletonGraph&, Mode, Rng&);
extern template ad::Tape<float>::Var encode_clinical<float>(ad::Tape<float>&, Binder<float>&,
                                                            const ModelConfig&, ad::Tape<float>::Var,
                                                            Mode, Rng&);
extern template ad::Tape<double>::Var encode_clinical<double>(ad::Tape<double>&, Binder<double>&,
                                                              const ModelConfig&, ad::Tape<double>::Var,
                                                              Mode, Rng&);
extern template ad::Tape<float>::Var fuse_concat<float>(ad::Tape<float>&, ad::Tape<float>::Var,
                                                        ad::Tape<float>::Var);
extern template ad::Tape<double>::Var fuse_concat<double>(ad::Tape<double>&, ad::Tape<double>::Var,
                                                          ad::Tape<double>::Var);
extern template ad::Tape<float>::Var fuse_cross_attention<float>(ad::Tape<float>&, Binder<float>&,
                                                                 ad::Tape<float>::Var,
                                                                 ad::Tape<float>::Var);
extern template ad::Tape<double>::Var fuse_cross_attention<double>(ad::Tape<double>&, Binder<double>&,
                                                                   ad::Tape<double>::Var,
                                                                   ad::Tape<double>::Var);
extern template ad::Tape<float>::Var classify_head<float>(ad::Tape<float>&, Binder<float>&,
                                                          const ModelConfig&, ad::Tape<float>::Var,
                                                          Mode, Rng&);
extern template ad::Tape<double>::Var classify_head<double>(ad::Tape<double>&, Binder<double>&,
                                                            const ModelConfig&, ad::Tape<double>::Var,
                                                            Mode, Rng&);
extern template ModelOut<float> model_logits<float>(ad::Tape<float>&, Binder<float>&,
                                                    const ModelConfig&, const SkeletonGraph&,
                                                    ad::Tape<float>::Var, ad::Tape<float>::Var, Mode,
                                                    Rng&);
extern template ModelOut<double> model_logits<double>(ad::Tape<double>&, Binder<double>&,
                                                      const ModelConfig&, const SkeletonGraph&,
                                                      ad::Tape<double>::Var, ad::Tape<double>::Var,
                                                      Mode, Rng&);

}  // namespace cpgait::model
