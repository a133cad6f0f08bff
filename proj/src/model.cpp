#include "cpgait/model.hpp"

#include <cmath>
#include <cstring>

namespace cpgait::model {

using ad::Tensor;

namespace {

constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;
constexpr double kLnEps = 1e-5;

Tensor<float> uniform_init(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
    Tensor<float> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

void add_bn(ParamStore& ps, const std::string& prefix, std::int64_t channels) {
    ps.add(prefix + ".gamma", Tensor<float>({channels}, 1.0f));
    ps.add(prefix + ".beta", Tensor<float>({channels}, 0.0f));
    ps.add(prefix + ".running_mean", Tensor<float>({channels}, 0.0f), false, true);
    ps.add(prefix + ".running_var", Tensor<float>({channels}, 1.0f), false, true);
}

void add_affine(ParamStore& ps, const std::string& prefix, std::int64_t out, std::int64_t in,
                Rng& rng) {
    ps.add(prefix + ".weight", uniform_init({out, in}, in, rng));
    ps.add(prefix + ".bias", Tensor<float>({out}, 0.0f));
}

bool needs_projection(const BlockSpec& b) { return b.in_ch != b.out_ch || b.stride != 1; }

void check_backbone(const BackboneConfig& cfg) {
    require(!cfg.blocks.empty(), "backbone: no blocks configured");
    require(cfg.in_channels > 0, "backbone: in_channels must be positive");
    require(cfg.temporal_kernel >= 1 && cfg.temporal_kernel % 2 == 1,
            "backbone: temporal kernel must be odd");
    require(cfg.dropout >= 0.0 && cfg.dropout < 1.0, "backbone: dropout must be in [0,1)");
    int prev = cfg.in_channels;
    for (const BlockSpec& b : cfg.blocks) {
        require(b.in_ch == prev, "backbone: block channel chain broken");
        require(b.out_ch > 0 && b.stride >= 1, "backbone: bad block spec");
        prev = b.out_ch;
    }
}

}  // namespace

// --- ParamStore -------------------------------------------------------------

Tensor<float>& ParamStore::add(std::string name, Tensor<float> init, bool trainable, bool buffer) {
    require(index_.count(name) == 0, "ParamStore: duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back(ParamEntry{std::move(name), std::move(init), trainable && !buffer, buffer});
    return entries_.back().value;
}

ParamEntry& ParamStore::entry(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown parameter " + name);
    return entries_[it->second];
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown parameter " + name);
    return entries_[it->second];
}

Tensor<float>& ParamStore::at(const std::string& name) { return entry(name).value; }
const Tensor<float>& ParamStore::at(const std::string& name) const { return entry(name).value; }

// --- configs ----------------------------------------------------------------

BackboneConfig BackboneConfig::paper() {
    BackboneConfig cfg;
    cfg.blocks = {{3, 64, 1},   {64, 64, 1},  {64, 64, 1},   {64, 64, 1},   {64, 128, 2},
                  {128, 128, 1}, {128, 128, 1}, {128, 256, 2}, {256, 256, 1}, {256, 256, 1}};
    return cfg;
}

BackboneConfig BackboneConfig::desk() {
    BackboneConfig cfg;
    cfg.blocks = {{3, 8, 1},  {8, 8, 1},  {8, 8, 1},   {8, 8, 1},   {8, 16, 2},
                  {16, 16, 1}, {16, 16, 1}, {16, 32, 2}, {32, 32, 1}, {32, 32, 1}};
    return cfg;
}

// --- init / flags -----------------------------------------------------------

void init_model_params(ParamStore& ps, const ModelConfig& cfg, std::uint64_t seed) {
    require(cfg.num_classes >= 2, "model: need at least two classes");
    require(ps.size() == 0, "model: parameter store must start empty");
    Rng rng(Rng::mix(seed, 0x6d6f64656cULL));

    const bool skeleton = cfg.streams != Streams::clinical_only;
    const bool clinical = cfg.streams != Streams::skeleton_only;
    const int k = cfg.backbone.temporal_kernel;
    const int emb = cfg.embedding();

    if (skeleton) {
        check_backbone(cfg.backbone);
        add_bn(ps, "backbone.data_bn",
               static_cast<std::int64_t>(cfg.backbone.in_channels) * kNumKeypoints);
        for (std::size_t i = 0; i < cfg.backbone.blocks.size(); ++i) {
            const BlockSpec& b = cfg.backbone.blocks[i];
            const std::string p = "backbone.block" + std::to_string(i + 1) + ".";
            add_affine(ps, p + "spatial", b.out_ch, b.in_ch, rng);
            add_bn(ps, p + "bn1", b.out_ch);
            ps.add(p + "temporal.weight",
                   uniform_init({b.out_ch, b.out_ch, k}, static_cast<std::int64_t>(b.out_ch) * k,
                                rng));
            ps.add(p + "temporal.bias", Tensor<float>({b.out_ch}, 0.0f));
            add_bn(ps, p + "bn2", b.out_ch);
            if (needs_projection(b))
                ps.add(p + "residual.weight", uniform_init({b.out_ch, b.in_ch, 1}, b.in_ch, rng));
        }
    }
    if (clinical) {
        require(cfg.clinical_dim > 0 && cfg.clinical_hidden > 0, "model: bad clinical dims");
        require(cfg.clinical_dropout >= 0.0 && cfg.clinical_dropout < 1.0,
                "model: clinical dropout must be in [0,1)");
        add_affine(ps, "clinical.fc1", cfg.clinical_hidden, cfg.clinical_dim, rng);
        add_affine(ps, "clinical.fc2", emb, cfg.clinical_hidden, rng);
    }
    if (cfg.streams == Streams::both && cfg.fusion == FusionMode::cross_attention) {
        ps.add("fusion.ln_a.gain", Tensor<float>({emb}, 1.0f));
        ps.add("fusion.ln_a.bias", Tensor<float>({emb}, 0.0f));
        ps.add("fusion.ln_b.gain", Tensor<float>({emb}, 1.0f));
        ps.add("fusion.ln_b.bias", Tensor<float>({emb}, 0.0f));
    }
    require(cfg.head_dropout >= 0.0 && cfg.head_dropout < 1.0,
            "model: head dropout must be in [0,1)");
    add_affine(ps, "head.fc1", emb, cfg.fused_dim(), rng);
    add_affine(ps, "head.fc2", cfg.num_classes, emb, rng);
}

void set_backbone_trainable(ParamStore& ps, const std::vector<int>& blocks, bool flag) {
    for (int b : blocks) require(b >= 1 && b <= 10, "set_backbone_trainable: block out of [1,10]");
    for (int b : blocks)
        set_prefix_trainable(ps, "backbone.block" + std::to_string(b) + ".", flag);
}

void set_prefix_trainable(ParamStore& ps, const std::string& prefix, bool flag) {
    for (ParamEntry& e : ps.entries())
        if (!e.buffer && e.name.rfind(prefix, 0) == 0) e.trainable = flag;
}

std::uint64_t param_hash(const ParamStore& ps) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&h](const void* p, std::size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const ParamEntry& e : ps.entries()) {
        mix_bytes(e.name.data(), e.name.size());
        mix_bytes(e.value.shape.data(), e.value.shape.size() * sizeof(std::int64_t));
        mix_bytes(e.value.data.data(), e.value.data.size() * sizeof(float));
    }
    return h;
}

// --- Binder -----------------------------------------------------------------

template <class T>
typename ad::Tape<T>::Var Binder<T>::var(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    const ParamEntry& e = store_.entry(name);
    require(!e.buffer, "Binder: " + name + " is a buffer, not a parameter");
    typename ad::Tape<T>::Var v = tape_.leaf(e.value.template cast<T>(), e.trainable);
    vars_.emplace(name, v);
    return v;
}

template <class T>
Tensor<T>* Binder<T>::buffer(const std::string& name) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) {
        const ParamEntry& e = store_.entry(name);
        require(e.buffer, "Binder: " + name + " is a parameter, not a buffer");
        it = buffers_.emplace(name, e.value.template cast<T>()).first;
    }
    return &it->second;
}

template <class T>
const Tensor<T>& Binder<T>::grad_of(const std::string& name) {
    auto it = vars_.find(name);
    require(it != vars_.end(), "Binder: " + name + " was not used in this forward pass");
    return tape_.grad(it->second);
}

template <class T>
void Binder<T>::flush_buffers() {
    for (auto& [name, value] : buffers_) store_.at(name) = value.template cast<float>();
}

// --- batch assembly ---------------------------------------------------------

template <class T>
Tensor<T> clips_to_tensor(const std::vector<const pose::ClipWindow*>& clips) {
    require(!clips.empty(), "clips_to_tensor: empty batch");
    const std::int64_t N = static_cast<std::int64_t>(clips.size());
    const std::int64_t Tt = pose::ClipWindow::kT, V = pose::ClipWindow::kV;
    Tensor<T> x({N, 3, Tt, V});
    for (std::int64_t n = 0; n < N; ++n) {
        const pose::ClipWindow& c = *clips[static_cast<std::size_t>(n)];
        require(static_cast<std::int64_t>(c.X.size()) == Tt * V * 3,
                "clips_to_tensor: clip has wrong cell count");
        for (std::int64_t t = 0; t < Tt; ++t)
            for (std::int64_t v = 0; v < V; ++v) {
                x.at4(n, 0, t, v) = static_cast<T>(c.x(t, v));
                x.at4(n, 1, t, v) = static_cast<T>(c.y(t, v));
                x.at4(n, 2, t, v) = static_cast<T>(c.conf(t, v));
            }
    }
    return x;
}

// --- forward passes ---------------------------------------------------------

template <class T>
typename ad::Tape<T>::Var stgcn_block_forward(ad::Tape<T>& tape, Binder<T>& bind,
                                              const BackboneConfig& cfg, int block,
                                              typename ad::Tape<T>::Var x,
                                              const SkeletonGraph& graph, Mode mode, Rng& rng) {
    require(block >= 1 && block <= static_cast<int>(cfg.blocks.size()),
            "stgcn_block_forward: block index out of range");
    const BlockSpec& bs = cfg.blocks[static_cast<std::size_t>(block - 1)];
    const Tensor<T>& xv = tape.val(x);
    require(xv.ndim() == 4 && xv.dim(1) == bs.in_ch && xv.dim(3) == graph.V,
            "stgcn_block_forward: input shape disagrees with block spec");
    const std::string p = "backbone.block" + std::to_string(block) + ".";
    const Tensor<T> a_hat = graph.a_hat.template cast<T>();

    using Var = typename ad::Tape<T>::Var;
    Var h = tape.pointwise_linear(x, bind.var(p + "spatial.weight"), bind.var(p + "spatial.bias"));
    h = tape.graph_mul(h, a_hat);
    h = tape.batch_norm(h, bind.var(p + "bn1.gamma"), bind.var(p + "bn1.beta"),
                        bind.buffer(p + "bn1.running_mean"), bind.buffer(p + "bn1.running_var"),
                        mode, static_cast<T>(kBnMomentum), static_cast<T>(kBnEps));
    h = tape.relu(h);
    h = tape.temporal_conv(h, bind.var(p + "temporal.weight"), bind.var(p + "temporal.bias"),
                           bs.stride, (cfg.temporal_kernel - 1) / 2);
    h = tape.batch_norm(h, bind.var(p + "bn2.gamma"), bind.var(p + "bn2.beta"),
                        bind.buffer(p + "bn2.running_mean"), bind.buffer(p + "bn2.running_var"),
                        mode, static_cast<T>(kBnMomentum), static_cast<T>(kBnEps));
    h = tape.dropout(h, static_cast<T>(cfg.dropout), mode, rng);

    Var res = x;
    if (needs_projection(bs)) {
        // kernel-1 strided projection, no bias
        Var zero_bias = tape.leaf(Tensor<T>({bs.out_ch}), false);
        res = tape.temporal_conv(x, bind.var(p + "residual.weight"), zero_bias, bs.stride, 0);
    }
    return tape.relu(tape.add(h, res));
}

template <class T>
BackboneOut<T> backbone_forward(ad::Tape<T>& tape, Binder<T>& bind, const BackboneConfig& cfg,
                                typename ad::Tape<T>::Var x, const SkeletonGraph& graph, Mode mode,
                                Rng& rng) {
    check_backbone(cfg);
    const Tensor<T>& xv = tape.val(x);
    require(xv.ndim() == 4 && xv.dim(1) == cfg.in_channels && xv.dim(3) == graph.V,
            "backbone_forward: expects [N," + std::to_string(cfg.in_channels) + ",T," +
                std::to_string(graph.V) + "]");
    typename ad::Tape<T>::Var h = tape.batch_norm(
        x, bind.var("backbone.data_bn.gamma"), bind.var("backbone.data_bn.beta"),
        bind.buffer("backbone.data_bn.running_mean"), bind.buffer("backbone.data_bn.running_var"),
        mode, static_cast<T>(kBnMomentum), static_cast<T>(kBnEps), /*per_node=*/true);
    for (int b = 1; b <= static_cast<int>(cfg.blocks.size()); ++b)
        h = stgcn_block_forward(tape, bind, cfg, b, h, graph, mode, rng);
    return BackboneOut<T>{h, tape.global_avg_pool(h)};
}

template <class T>
typename ad::Tape<T>::Var encode_clinical(ad::Tape<T>& tape, Binder<T>& bind,
                                          const ModelConfig& cfg, typename ad::Tape<T>::Var z,
                                          Mode mode, Rng& rng) {
    const Tensor<T>& zv = tape.val(z);
    require(zv.ndim() == 2 && zv.dim(1) == cfg.clinical_dim,
            "encode_clinical: expects [N," + std::to_string(cfg.clinical_dim) + "]");
    typename ad::Tape<T>::Var h =
        tape.linear(z, bind.var("clinical.fc1.weight"), bind.var("clinical.fc1.bias"));
    h = tape.relu(h);
    h = tape.dropout(h, static_cast<T>(cfg.clinical_dropout), mode, rng);
    return tape.linear(h, bind.var("clinical.fc2.weight"), bind.var("clinical.fc2.bias"));
}

template <class T>
typename ad::Tape<T>::Var fuse_concat(ad::Tape<T>& tape, typename ad::Tape<T>::Var f_s,
                                      typename ad::Tape<T>::Var f_c) {
    const Tensor<T>& a = tape.val(f_s);
    require(a.ndim() == 2 && a.same_shape(tape.val(f_c)), "fuse_concat: embedding dims disagree");
    return tape.concat_cols(f_s, f_c);
}

template <class T>
typename ad::Tape<T>::Var fuse_cross_attention(ad::Tape<T>& tape, Binder<T>& bind,
                                               typename ad::Tape<T>::Var f_s,
                                               typename ad::Tape<T>::Var f_c) {
    const Tensor<T>& a = tape.val(f_s);
    require(a.ndim() == 2 && a.same_shape(tape.val(f_c)),
            "fuse_cross_attention: embedding dims disagree");
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(a.dim(1)));
    using Var = typename ad::Tape<T>::Var;
    Var alpha = tape.sigmoid(tape.scale(tape.rowwise_dot(f_s, f_c), inv_sqrt_d));
    Var ha = tape.add(f_s, tape.scale_rows(f_c, alpha));
    Var hb = tape.add(f_c, tape.scale_rows(f_s, alpha));
    ha = tape.layer_norm(ha, bind.var("fusion.ln_a.gain"), bind.var("fusion.ln_a.bias"),
                         static_cast<T>(kLnEps));
    hb = tape.layer_norm(hb, bind.var("fusion.ln_b.gain"), bind.var("fusion.ln_b.bias"),
                         static_cast<T>(kLnEps));
    return tape.concat_cols(ha, hb);
}

template <class T>
typename ad::Tape<T>::Var classify_head(ad::Tape<T>& tape, Binder<T>& bind, const ModelConfig& cfg,
                                        typename ad::Tape<T>::Var fused, Mode mode, Rng& rng) {
    const Tensor<T>& fv = tape.val(fused);
    require(fv.ndim() == 2 && fv.dim(1) == cfg.fused_dim(),
            "classify_head: expects [N," + std::to_string(cfg.fused_dim()) + "]");
    typename ad::Tape<T>::Var h =
        tape.linear(fused, bind.var("head.fc1.weight"), bind.var("head.fc1.bias"));
    if (cfg.head_relu) h = tape.relu(h);
    h = tape.dropout(h, static_cast<T>(cfg.head_dropout), mode, rng);
    return tape.linear(h, bind.var("head.fc2.weight"), bind.var("head.fc2.bias"));
}

template <class T>
ModelOut<T> model_logits(ad::Tape<T>& tape, Binder<T>& bind, const ModelConfig& cfg,
                         const SkeletonGraph& graph, typename ad::Tape<T>::Var x,
                         typename ad::Tape<T>::Var z, Mode mode, Rng& rng) {
    using Var = typename ad::Tape<T>::Var;
    ModelOut<T> out;
    Var f_s = ad::Tape<T>::kNull, f_c = ad::Tape<T>::kNull;
    if (cfg.streams != Streams::clinical_only) {
        require(x != ad::Tape<T>::kNull, "model_logits: skeleton stream needs clip input");
        BackboneOut<T> bb = backbone_forward(tape, bind, cfg.backbone, x, graph, mode, rng);
        out.features = bb.features;
        f_s = bb.embedding;
    }
    if (cfg.streams != Streams::skeleton_only) {
        require(z != ad::Tape<T>::kNull, "model_logits: clinical stream needs feature input");
        f_c = encode_clinical(tape, bind, cfg, z, mode, rng);
    }
    Var fused;
    if (cfg.streams == Streams::both)
        fused = cfg.fusion == FusionMode::concat ? fuse_concat(tape, f_s, f_c)
                                                 : fuse_cross_attention(tape, bind, f_s, f_c);
    else
        fused = cfg.streams == Streams::skeleton_only ? f_s : f_c;
    out.logits = classify_head(tape, bind, cfg, fused, mode, rng);
    return out;
}

// --- inference bundle -------------------------------------------------------

FusedModel make_model(const ModelConfig& cfg, const feat::FeatureSubset& subset,
                      std::uint64_t seed) {
    if (cfg.streams != Streams::skeleton_only)
        require(static_cast<int>(subset.names.size()) == cfg.clinical_dim,
                "make_model: feature subset size disagrees with clinical_dim");
    FusedModel m;
    m.cfg = cfg;
    m.graph = build_coco_graph();
    m.subset = subset;
    init_model_params(m.params, cfg, seed);
    return m;
}

Tensor<float> predict_probs(FusedModel& m, const std::vector<const pose::ClipWindow*>& clips,
                            const std::vector<std::vector<double>>& z_rows) {
    const bool skeleton = m.cfg.streams != Streams::clinical_only;
    const bool clinical = m.cfg.streams != Streams::skeleton_only;
    const std::int64_t N = skeleton ? static_cast<std::int64_t>(clips.size())
                                    : static_cast<std::int64_t>(z_rows.size());
    require(N > 0, "predict_probs: empty batch");
    if (skeleton && clinical)
        require(clips.size() == z_rows.size(), "predict_probs: clip/feature counts disagree");

    ad::Tape<float> tape;
    Binder<float> bind(tape, m.params);
    ad::Tape<float>::Var x = ad::Tape<float>::kNull, z = ad::Tape<float>::kNull;
    if (skeleton) x = tape.leaf(clips_to_tensor<float>(clips));
    if (clinical) {
        const std::int64_t F = m.cfg.clinical_dim;
        Tensor<float> zt({N, F});
        for (std::int64_t n = 0; n < N; ++n) {
            const auto& row = z_rows[static_cast<std::size_t>(n)];
            require(static_cast<std::int64_t>(row.size()) == F,
                    "predict_probs: feature row width disagrees with clinical_dim");
            for (std::int64_t f = 0; f < F; ++f)
                zt.at2(n, f) = static_cast<float>(row[static_cast<std::size_t>(f)]);
        }
        z = tape.leaf(zt);
    }
    Rng rng(0);  // eval mode never draws from it
    ModelOut<float> out = model_logits(tape, bind, m.cfg, m.graph, x, z, Mode::eval, rng);
    return ad::softmax_rows(tape.val(out.logits));
}

Prediction predict(FusedModel& m, const pose::ClipWindow& clip, const feat::GaitFeatureVector& f) {
    std::vector<const pose::ClipWindow*> clips{&clip};
    std::vector<std::vector<double>> z_rows;
    if (m.cfg.streams != Streams::skeleton_only) {
        if (m.standardizer.mean.size() != m.subset.names.size() ||
            m.standardizer.stddev.size() != m.subset.names.size())
            throw CheckpointError("predict: standardizer stats missing for the feature subset");
        z_rows.push_back(feat::apply_standardizer(m.standardizer, feat::select_subset(f, m.subset)));
    }
    const Tensor<float> probs = predict_probs(m, clips, z_rows);
    Prediction p;
    p.probs.resize(static_cast<std::size_t>(probs.dim(1)));
    int best = 0;
    for (std::int64_t k = 0; k < probs.dim(1); ++k) {
        p.probs[static_cast<std::size_t>(k)] = static_cast<double>(probs.at2(0, k));
        if (probs.at2(0, k) > probs.at2(0, best)) best = static_cast<int>(k);
    }
    p.label = best + 1;
    return p;
}

template class Binder<float>;
template class Binder<double>;
template Tensor<float> clips_to_tensor<float>(const std::vector<const pose::ClipWindow*>&);
template Tensor<double> clips_to_tensor<double>(const std::vector<const pose::ClipWindow*>&);
template BackboneOut<float> backbone_forward<float>(ad::Tape<float>&, Binder<float>&,
                                                    const BackboneConfig&, ad::Tape<float>::Var,
                                                    const SkeletonGraph&, Mode, Rng&);
template BackboneOut<double> backbone_forward<double>(ad::Tape<double>&, Binder<double>&,
                                                      const BackboneConfig&, ad::Tape<double>::Var,
                                                      const SkeletonGraph&, Mode, Rng&);
template ad::Tape<float>::Var stgcn_block_forward<float>(ad::Tape<float>&, Binder<float>&,
                                                         const BackboneConfig&, int,
                                                         ad::Tape<float>::Var,
                                                         const SkeletonGraph&, Mode, Rng&);
template ad::Tape<double>::Var stgcn_block_forward<double>(ad::Tape<double>&, Binder<double>&,
                                                           const BackboneConfig&, int,
                                                           ad::Tape<double>::Var,
                                                           const SkeletonGraph&, Mode, Rng&);
template ad::Tape<float>::Var encode_clinical<float>(ad::Tape<float>&, Binder<float>&,
                                                     const ModelConfig&, ad::Tape<float>::Var, Mode,
                                                     Rng&);
template ad::Tape<double>::Var encode_clinical<double>(ad::Tape<double>&, Binder<double>&,
                                                       const ModelConfig&, ad::Tape<double>::Var,
                                                       Mode, Rng&);
template ad::Tape<float>::Var fuse_concat<float>(ad::Tape<float>&, ad::Tape<float>::Var,
                                                 ad::Tape<float>::Var);
template ad::Tape<double>::Var fuse_concat<double>(ad::Tape<double>&, ad::Tape<double>::Var,
                                                   ad::Tape<double>::Var);
template ad::Tape<float>::Var fuse_cross_attention<float>(ad::Tape<float>&, Binder<float>&,
                                                          ad::Tape<float>::Var,
                                                          ad::Tape<float>::Var);
template ad::Tape<double>::Var fuse_cross_attention<double>(ad::Tape<double>&, Binder<double>&,
                                                            ad::Tape<double>::Var,
                                                            ad::Tape<double>::Var);
template ad::Tape<float>::Var classify_head<float>(ad::Tape<float>&, Binder<float>&,
                                                   const ModelConfig&, ad::Tape<float>::Var, Mode,
                                                   Rng&);
template ad::Tape<double>::Var classify_head<double>(ad::Tape<double>&, Binder<double>&,
                                                     const ModelConfig&, ad::Tape<double>::Var,
                                                     Mode, Rng&);
template ModelOut<float> model_logits<float>(ad::Tape<float>&, Binder<float>&, const ModelConfig&,
                                             const SkeletonGraph&, ad::Tape<float>::Var,
                                             ad::Tape<float>::Var, Mode, Rng&);
template ModelOut<double> model_logits<double>(ad::Tape<double>&, Binder<double>&,
                                               const ModelConfig&, const SkeletonGraph&,
                                               ad::Tape<double>::Var, ad::Tape<double>::Var, Mode,
                                               Rng&);

}  // namespace cpgait::model
