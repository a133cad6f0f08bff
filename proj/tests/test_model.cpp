#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cpgait/model.hpp"

using namespace cpgait;
using namespace cpgait::model;
using ad::Tensor;
using FTape = ad::Tape<float>;
using DTape = ad::Tape<double>;

namespace {

template <class T>
Tensor<T> random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0,
                        double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

ModelConfig desk_cfg(FusionMode fm = FusionMode::concat, Streams st = Streams::both) {
    ModelConfig cfg;
    cfg.backbone = BackboneConfig::desk();
    cfg.clinical_dim = 14;
    cfg.fusion = fm;
    cfg.streams = st;
    return cfg;
}

ModelConfig paper_cfg(FusionMode fm = FusionMode::concat) {
    ModelConfig cfg;
    cfg.backbone = BackboneConfig::paper();
    cfg.clinical_dim = 14;
    cfg.fusion = fm;
    return cfg;
}

// Perturbs parameters of the float store around a double-precision forward;
// divides by the exact realized step so float storage costs no accuracy.
struct FdHarness {
    ModelConfig cfg;
    SkeletonGraph graph = build_coco_graph();
    ParamStore ps;
    Tensor<double> x, z;
    std::vector<int> labels;

    double loss() {
        DTape tape;
        Binder<double> bind(tape, ps);
        auto xv = tape.leaf(x, false);
        auto zv = tape.leaf(z, false);
        Rng rng(1);
        auto out = model_logits(tape, bind, cfg, graph, xv, zv, Mode::train, rng);
        return tape.val(tape.softmax_cross_entropy(out.logits, labels))[0];
    }

    double fd_param(const std::string& name, std::int64_t i, double h) {
        Tensor<float>& value = ps.at(name);
        const float orig = value[i];
        value[i] = static_cast<float>(static_cast<double>(orig) + h);
        const double pv = static_cast<double>(value[i]);
        const double lp = loss();
        value[i] = static_cast<float>(static_cast<double>(orig) - h);
        const double mv = static_cast<double>(value[i]);
        const double lm = loss();
        value[i] = orig;
        // divide by the realized step so float storage costs no accuracy
        return (lp - lm) / (pv - mv);
    }

    double fd_input(Tensor<double>& input, std::int64_t i, double h) {
        const double orig = input[i];
        input[i] = orig + h;
        const double lp = loss();
        input[i] = orig - h;
        const double lm = loss();
        input[i] = orig;
        return (lp - lm) / (2.0 * h);
    }

    // Max relative FD error over sampled coordinates of every parameter and
    // both inputs. The h-step quotient is only a derivative when no relu kink
    // lies inside the perturbation window; where it disagrees, the coordinate
    // is re-measured at h/100 and h/10000, shrinking the window into the
    // smooth region. A wrong gradient fails at every step size.
    double max_rel_error(double h, double floor, int coords_per_tensor, std::uint64_t pick_seed,
                         int* refined_out = nullptr) {
        std::map<std::string, Tensor<double>> analytic;
        Tensor<double> gx, gz;
        {
            DTape tape;
            Binder<double> bind(tape, ps);
            auto xv = tape.leaf(x, true);
            auto zv = tape.leaf(z, true);
            Rng rng(1);
            auto out = model_logits(tape, bind, cfg, graph, xv, zv, Mode::train, rng);
            tape.backward(tape.softmax_cross_entropy(out.logits, labels));
            for (const ParamEntry& e : ps.entries())
                if (!e.buffer && bind.bound(e.name)) analytic[e.name] = bind.grad_of(e.name);
            gx = tape.grad(xv);
            gz = tape.grad(zv);
        }
        Rng pick(pick_seed);
        double worst = 0.0;
        int refined = 0;
        auto rel = [&floor](double a, double numeric) {
            return std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        };
        for (auto& [name, grad] : analytic) {
            const std::int64_t size = ps.at(name).size();
            for (int c = 0; c < coords_per_tensor; ++c) {
                const std::int64_t i =
                    static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(size)));
                double err = rel(grad[i], fd_param(name, i, h));
                for (double hk = h / 100.0; err >= 1e-5 && hk >= h / 1e4; hk /= 100.0) {
                    err = rel(grad[i], fd_param(name, i, hk));
                    ++refined;
                }
                worst = std::max(worst, err);
            }
        }
        for (Tensor<double>* input : {&x, &z}) {
            const Tensor<double>& g = input == &x ? gx : gz;
            for (int c = 0; c < 8; ++c) {
                const std::int64_t i =
                    static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(input->size())));
                double err = rel(g[i], fd_input(*input, i, h));
                for (double hk = h / 100.0; err >= 1e-5 && hk >= h / 1e4; hk /= 100.0) {
                    err = rel(g[i], fd_input(*input, i, hk));
                    ++refined;
                }
                worst = std::max(worst, err);
            }
        }
        if (refined_out) *refined_out = refined;
        return worst;
    }
};

FdHarness make_fd_harness(FusionMode fm, std::uint64_t seed) {
    FdHarness fd;
    fd.cfg = desk_cfg(fm);
    fd.cfg.backbone.dropout = 0.0;  // masks resample per forward; FD needs a fixed function
    fd.cfg.clinical_dropout = 0.0;
    fd.cfg.head_dropout = 0.0;
    init_model_params(fd.ps, fd.cfg, seed);
    Rng rng(Rng::mix(seed, 77));
    fd.x = random_tensor<double>({4, 3, 8, 17}, rng);
    fd.z = random_tensor<double>({4, 14}, rng);
    fd.labels = {0, 1, 2, 3};
    return fd;
}

}  // namespace

TEST_CASE("backbone presets match the published layout") {
    const BackboneConfig paper = BackboneConfig::paper();
    REQUIRE(paper.blocks.size() == 10);
    const std::vector<int> chans{64, 64, 64, 64, 128, 128, 128, 256, 256, 256};
    for (int i = 0; i < 10; ++i) {
        CHECK(paper.blocks[static_cast<std::size_t>(i)].out_ch == chans[static_cast<std::size_t>(i)]);
        const int expect_stride = (i == 4 || i == 7) ? 2 : 1;
        CHECK(paper.blocks[static_cast<std::size_t>(i)].stride == expect_stride);
    }
    CHECK(paper.blocks[0].in_ch == 3);
    CHECK(paper.embedding() == 256);
    CHECK(paper.temporal_kernel == 9);

    const BackboneConfig desk = BackboneConfig::desk();
    REQUIRE(desk.blocks.size() == 10);
    CHECK(desk.embedding() == 32);
    CHECK(desk.blocks[4].stride == 2);
    CHECK(desk.blocks[7].stride == 2);
    CHECK(desk.blocks[4].out_ch == 16);

    const ModelConfig cfg = paper_cfg();
    CHECK(cfg.embedding() == 256);
    CHECK(cfg.fused_dim() == 512);
    ModelConfig solo = cfg;
    solo.streams = Streams::skeleton_only;
    CHECK(solo.fused_dim() == 256);
}

TEST_CASE("init creates the documented parameter set") {
    ParamStore ps;
    init_model_params(ps, desk_cfg(FusionMode::cross_attention), 11);

    // residual projection exists exactly where shape or stride changes
    for (int b = 1; b <= 10; ++b) {
        const bool expect = (b == 1 || b == 5 || b == 8);
        CHECK(ps.has("backbone.block" + std::to_string(b) + ".residual.weight") == expect);
    }
    CHECK(ps.at("backbone.data_bn.gamma").size() == 51);
    CHECK(ps.at("backbone.block1.spatial.weight").shape == std::vector<std::int64_t>{8, 3});
    CHECK(ps.at("backbone.block5.temporal.weight").shape == std::vector<std::int64_t>{16, 16, 9});
    CHECK(ps.at("backbone.block8.residual.weight").shape == std::vector<std::int64_t>{32, 16, 1});
    CHECK(ps.at("clinical.fc1.weight").shape == std::vector<std::int64_t>{64, 14});
    CHECK(ps.at("clinical.fc2.weight").shape == std::vector<std::int64_t>{32, 64});
    CHECK(ps.at("fusion.ln_a.gain").size() == 32);
    CHECK(ps.at("head.fc1.weight").shape == std::vector<std::int64_t>{32, 64});
    CHECK(ps.at("head.fc2.weight").shape == std::vector<std::int64_t>{4, 32});

    // biases zero, BN affine (1, 0), running stats (0, 1)
    for (const ParamEntry& e : ps.entries()) {
        const auto ends_with = [&](const char* s) {
            const std::string suf(s);
            return e.name.size() >= suf.size() &&
                   e.name.compare(e.name.size() - suf.size(), suf.size(), suf) == 0;
        };
        if (ends_with(".bias") && e.name.rfind("fusion.", 0) != 0)
            for (float v : e.value.data) CHECK(v == 0.0f);
        if (ends_with(".gamma") || ends_with(".gain"))
            for (float v : e.value.data) CHECK(v == 1.0f);
        if (ends_with(".beta")) for (float v : e.value.data) CHECK(v == 0.0f);
        if (ends_with(".running_mean")) {
            CHECK(e.buffer);
            for (float v : e.value.data) CHECK(v == 0.0f);
        }
        if (ends_with(".running_var")) {
            CHECK(e.buffer);
            for (float v : e.value.data) CHECK(v == 1.0f);
        }
        CHECK(e.value.all_finite());
    }

    // fan-in bound respected and weights actually drawn
    const Tensor<float>& w = ps.at("backbone.block2.temporal.weight");
    const double bound = 1.0 / std::sqrt(8.0 * 9.0);
    double max_abs = 0.0;
    for (float v : w.data) {
        CHECK(std::abs(v) <= bound + 1e-7);
        max_abs = std::max(max_abs, static_cast<double>(std::abs(v)));
    }
    CHECK(max_abs > 0.1 * bound);

    // deterministic in seed
    ParamStore same, other;
    init_model_params(same, desk_cfg(FusionMode::cross_attention), 11);
    init_model_params(other, desk_cfg(FusionMode::cross_attention), 12);
    CHECK(param_hash(ps) == param_hash(same));
    CHECK(param_hash(ps) != param_hash(other));
}

TEST_CASE("backbone forward shapes and temporal chain") {
    const SkeletonGraph graph = build_coco_graph();
    Rng data(5);

    ModelConfig cfg = desk_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 3);
    FTape tape;
    Binder<float> bind(tape, ps);
    auto x = tape.leaf(random_tensor<float>({2, 3, 124, 17}, data));
    Rng rng(9);
    auto out = backbone_forward(tape, bind, cfg.backbone, x, graph, Mode::eval, rng);
    CHECK(tape.val(out.features).shape == std::vector<std::int64_t>{2, 32, 31, 17});
    CHECK(tape.val(out.embedding).shape == std::vector<std::int64_t>{2, 32});
    CHECK(tape.val(out.embedding).all_finite());

    // stride-2 block halves T=124 to 62
    ModelConfig pcfg = paper_cfg();
    ParamStore pps;
    init_model_params(pps, pcfg, 3);
    FTape tape2;
    Binder<float> bind2(tape2, pps);
    auto x5 = tape2.leaf(random_tensor<float>({1, 64, 124, 17}, data));
    auto y5 = stgcn_block_forward(tape2, bind2, pcfg.backbone, 5, x5, graph, Mode::eval, rng);
    CHECK(tape2.val(y5).shape == std::vector<std::int64_t>{1, 128, 62, 17});

    CHECK_THROWS_AS(stgcn_block_forward(tape2, bind2, pcfg.backbone, 11, x5, graph, Mode::eval, rng),
                    ContractError);
    // block 6 expects 128 input channels; x5 carries 64
    CHECK_THROWS_AS(stgcn_block_forward(tape2, bind2, pcfg.backbone, 6, x5, graph, Mode::eval, rng),
                    ContractError);
}

TEST_CASE("paper preset emits 256-d embeddings, 512-d fusion, 4 logits") {
    const SkeletonGraph graph = build_coco_graph();
    ModelConfig cfg = paper_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 21);
    FTape tape;
    Binder<float> bind(tape, ps);
    Rng data(2), rng(3);
    auto x = tape.leaf(random_tensor<float>({2, 3, 124, 17}, data));
    auto z = tape.leaf(random_tensor<float>({2, 14}, data));
    auto bb = backbone_forward(tape, bind, cfg.backbone, x, graph, Mode::eval, rng);
    CHECK(tape.val(bb.embedding).shape == std::vector<std::int64_t>{2, 256});
    auto fc = encode_clinical(tape, bind, cfg, z, Mode::eval, rng);
    CHECK(tape.val(fc).shape == std::vector<std::int64_t>{2, 256});
    auto fused = fuse_concat(tape, bb.embedding, fc);
    CHECK(tape.val(fused).shape == std::vector<std::int64_t>{2, 512});
    auto logits = classify_head(tape, bind, cfg, fused, Mode::eval, rng);
    CHECK(tape.val(logits).shape == std::vector<std::int64_t>{2, 4});
}

TEST_CASE("zero input with fresh parameters propagates zero to the embedding") {
    const SkeletonGraph graph = build_coco_graph();
    ModelConfig cfg = desk_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 7);
    FTape tape;
    Binder<float> bind(tape, ps);
    auto x = tape.leaf(Tensor<float>({2, 3, 124, 17}, 0.0f));
    Rng rng(1);
    auto out = backbone_forward(tape, bind, cfg.backbone, x, graph, Mode::eval, rng);
    for (float v : tape.val(out.features).data) CHECK(v == 0.0f);
    for (float v : tape.val(out.embedding).data) CHECK(v == 0.0f);
}

TEST_CASE("residual connection contributes to the block output") {
    const SkeletonGraph graph = build_coco_graph();
    ModelConfig cfg = desk_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 13);
    Rng data(4), rng(1);
    const Tensor<float> xin = random_tensor<float>({1, 8, 20, 17}, data);

    FTape tape;
    Binder<float> bind(tape, ps);
    auto x = tape.leaf(xin);
    auto with_res = stgcn_block_forward(tape, bind, cfg.backbone, 2, x, graph, Mode::eval, rng);

    // main path only, same parameters and primitives
    const std::string p = "backbone.block2.";
    const Tensor<float> a_hat = graph.a_hat;
    auto h = tape.pointwise_linear(x, bind.var(p + "spatial.weight"), bind.var(p + "spatial.bias"));
    h = tape.graph_mul(h, a_hat);
    h = tape.batch_norm(h, bind.var(p + "bn1.gamma"), bind.var(p + "bn1.beta"),
                        bind.buffer(p + "bn1.running_mean"), bind.buffer(p + "bn1.running_var"),
                        Mode::eval, 0.1f, 1e-5f);
    h = tape.relu(h);
    h = tape.temporal_conv(h, bind.var(p + "temporal.weight"), bind.var(p + "temporal.bias"), 1, 4);
    h = tape.batch_norm(h, bind.var(p + "bn2.gamma"), bind.var(p + "bn2.beta"),
                        bind.buffer(p + "bn2.running_mean"), bind.buffer(p + "bn2.running_var"),
                        Mode::eval, 0.1f, 1e-5f);
    auto without_res = tape.relu(h);

    double max_diff = 0.0;
    const Tensor<float>& a = tape.val(with_res);
    const Tensor<float>& b = tape.val(without_res);
    REQUIRE(a.same_shape(b));
    for (std::int64_t i = 0; i < a.size(); ++i)
        max_diff = std::max(max_diff, static_cast<double>(std::abs(a[i] - b[i])));
    CHECK(max_diff > 0.05);
}

TEST_CASE("node relabeling applied to input and adjacency leaves f_s unchanged") {
    const SkeletonGraph graph = build_coco_graph();
    // fixed derangement-ish permutation of the 17 keypoints
    std::vector<int> perm{4, 9, 0, 12, 16, 2, 7, 1, 14, 3, 11, 5, 15, 8, 6, 13, 10};
    SkeletonGraph pgraph = graph;
    for (int u = 0; u < 17; ++u)
        for (int v = 0; v < 17; ++v)
            pgraph.a_hat.at2(perm[static_cast<std::size_t>(u)],
                             perm[static_cast<std::size_t>(v)]) = graph.a_hat.at2(u, v);

    ModelConfig cfg = desk_cfg();
    cfg.backbone.dropout = 0.0;  // train mode below must be mask-free
    Rng data(6);
    const Tensor<float> xin = random_tensor<float>({2, 3, 40, 17}, data);
    Tensor<float> xper = xin;
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t t = 0; t < 40; ++t)
                for (int v = 0; v < 17; ++v)
                    xper.at4(n, c, t, perm[static_cast<std::size_t>(v)]) = xin.at4(n, c, t, v);

    for (Mode mode : {Mode::eval, Mode::train}) {
        ParamStore ps;
        init_model_params(ps, cfg, 31);
        FTape tape;
        Binder<float> bind(tape, ps);
        Rng rng(1);
        auto base = backbone_forward(tape, bind, cfg.backbone, tape.leaf(xin), graph, mode, rng);

        ParamStore ps2;
        init_model_params(ps2, cfg, 31);
        FTape tape2;
        Binder<float> bind2(tape2, ps2);
        Rng rng2(1);
        auto permd =
            backbone_forward(tape2, bind2, cfg.backbone, tape2.leaf(xper), pgraph, mode, rng2);

        const Tensor<float>& a = tape.val(base.embedding);
        const Tensor<float>& b = tape2.val(permd.embedding);
        REQUIRE(a.same_shape(b));
        for (std::int64_t i = 0; i < a.size(); ++i)
            CHECK(std::abs(a[i] - b[i]) <= 1e-5f * std::max(1.0f, std::abs(a[i])));
    }
}

TEST_CASE("eval-mode embedding is independent of batch composition") {
    const SkeletonGraph graph = build_coco_graph();
    ModelConfig cfg = desk_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 17);
    Rng data(8);
    const Tensor<float> clip = random_tensor<float>({1, 3, 124, 17}, data);
    Tensor<float> batch({3, 3, 124, 17});
    Rng other(9);
    for (std::int64_t i = 0; i < batch.size(); ++i) batch[i] = static_cast<float>(other.uniform(-1, 1));
    // slot 1 holds the clip
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t t = 0; t < 124; ++t)
            for (std::int64_t v = 0; v < 17; ++v) batch.at4(1, c, t, v) = clip.at4(0, c, t, v);

    FTape t1;
    Binder<float> b1(t1, ps);
    Rng r1(1);
    auto solo = backbone_forward(t1, b1, cfg.backbone, t1.leaf(clip), graph, Mode::eval, r1);

    FTape t2;
    Binder<float> b2(t2, ps);
    Rng r2(2);
    auto packed = backbone_forward(t2, b2, cfg.backbone, t2.leaf(batch), graph, Mode::eval, r2);

    const Tensor<float>& a = t1.val(solo.embedding);
    const Tensor<float>& b = t2.val(packed.embedding);
    for (std::int64_t c = 0; c < 32; ++c) CHECK(a.at2(0, c) == b.at2(1, c));
}

TEST_CASE("desk backbone forward on batch 8 stays under a second") {
    const SkeletonGraph graph = build_coco_graph();
    ModelConfig cfg = desk_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 1);
    Rng data(1);
    const Tensor<float> x = random_tensor<float>({8, 3, 124, 17}, data);
    const auto t0 = std::chrono::steady_clock::now();
    FTape tape;
    Binder<float> bind(tape, ps);
    Rng rng(1);
    auto out = backbone_forward(tape, bind, cfg.backbone, tape.leaf(x), graph, Mode::eval, rng);
    CHECK(tape.val(out.embedding).dim(0) == 8);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("desk batch-8 forward: " << secs << " s");
    CHECK(secs < 1.0);
}

TEST_CASE("trainable flags gate gradients and invert cleanly") {
    ModelConfig cfg = desk_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 19);

    std::map<std::string, bool> before;
    for (const ParamEntry& e : ps.entries()) before[e.name] = e.trainable;

    CHECK_THROWS_AS(set_backbone_trainable(ps, {0}, false), ContractError);
    CHECK_THROWS_AS(set_backbone_trainable(ps, {11}, true), ContractError);
    set_backbone_trainable(ps, {}, false);  // no-op
    for (const ParamEntry& e : ps.entries()) CHECK(e.trainable == before[e.name]);

    set_backbone_trainable(ps, {9, 10}, false);
    CHECK_FALSE(ps.entry("backbone.block9.spatial.weight").trainable);
    CHECK_FALSE(ps.entry("backbone.block10.temporal.bias").trainable);
    CHECK(ps.entry("backbone.block8.spatial.weight").trainable);
    set_backbone_trainable(ps, {9, 10}, true);
    for (const ParamEntry& e : ps.entries()) CHECK(e.trainable == before[e.name]);
    CHECK_FALSE(ps.entry("backbone.block9.bn1.running_mean").trainable);  // buffers stay frozen

    // frozen backbone receives zero gradient; the head does not
    set_prefix_trainable(ps, "backbone.", false);
    const SkeletonGraph graph = build_coco_graph();
    FTape tape;
    Binder<float> bind(tape, ps);
    Rng data(3), rng(4);
    auto x = tape.leaf(random_tensor<float>({2, 3, 30, 17}, data));
    auto z = tape.leaf(random_tensor<float>({2, 14}, data));
    auto out = model_logits(tape, bind, cfg, graph, x, z, Mode::train, rng);
    tape.backward(tape.softmax_cross_entropy(out.logits, {0, 2}));
    for (float g : bind.grad_of("backbone.block3.spatial.weight").data) CHECK(g == 0.0f);
    for (float g : bind.grad_of("backbone.data_bn.gamma").data) CHECK(g == 0.0f);
    double head_norm = 0.0;
    for (float g : bind.grad_of("head.fc2.weight").data) head_norm += std::abs(g);
    CHECK(head_norm > 0.0);
}

TEST_CASE("clinical encoder contract and zero map") {
    ModelConfig cfg = desk_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 23);
    FTape tape;
    Binder<float> bind(tape, ps);
    Rng data(5), rng(6);
    auto z = tape.leaf(random_tensor<float>({3, 14}, data));
    auto f = encode_clinical(tape, bind, cfg, z, Mode::eval, rng);
    CHECK(tape.val(f).shape == std::vector<std::int64_t>{3, 32});

    auto bad = tape.leaf(random_tensor<float>({3, 9}, data));
    CHECK_THROWS_AS(encode_clinical(tape, bind, cfg, bad, Mode::eval, rng), ContractError);

    ParamStore zeroed;
    init_model_params(zeroed, cfg, 23);
    zeroed.at("clinical.fc1.weight").fill(0.0f);
    zeroed.at("clinical.fc2.weight").fill(0.0f);
    FTape tape2;
    Binder<float> bind2(tape2, zeroed);
    auto z2 = tape2.leaf(random_tensor<float>({3, 14}, data));
    auto f2 = encode_clinical(tape2, bind2, cfg, z2, Mode::eval, rng);
    for (float v : tape2.val(f2).data) CHECK(v == 0.0f);
}

TEST_CASE("clinical encoder gradients match finite differences") {
    ModelConfig cfg = desk_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 29);
    Rng data(7);
    Tensor<double> z = random_tensor<double>({3, 14}, data);

    auto loss_of = [&]() {
        DTape tape;
        Binder<double> bind(tape, ps);
        auto zv = tape.leaf(z, false);
        Rng rng(2);
        auto f = encode_clinical(tape, bind, cfg, zv, Mode::train, rng);
        return tape.val(tape.sum(tape.sigmoid(f)))[0];
    };

    std::map<std::string, Tensor<double>> analytic;
    Tensor<double> gz;
    {
        DTape tape;
        Binder<double> bind(tape, ps);
        auto zv = tape.leaf(z, true);
        Rng rng(2);
        auto f = encode_clinical(tape, bind, cfg, zv, Mode::train, rng);
        tape.backward(tape.sum(tape.sigmoid(f)));
        for (const char* n : {"clinical.fc1.weight", "clinical.fc1.bias", "clinical.fc2.weight",
                              "clinical.fc2.bias"})
            analytic[n] = bind.grad_of(n);
        gz = tape.grad(zv);
    }

    const double h = 1e-5;
    double worst = 0.0;
    Rng pick(41);
    for (auto& [name, grad] : analytic) {
        Tensor<float>& value = ps.at(name);
        for (int c = 0; c < 6; ++c) {
            const std::int64_t i =
                static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(value.size())));
            const float orig = value[i];
            value[i] = static_cast<float>(static_cast<double>(orig) + h);
            const double pv = static_cast<double>(value[i]);
            const double lp = loss_of();
            value[i] = static_cast<float>(static_cast<double>(orig) - h);
            const double mv = static_cast<double>(value[i]);
            const double lm = loss_of();
            value[i] = orig;
            const double numeric = (lp - lm) / (pv - mv);
            const double denom = std::max({std::abs(grad[i]), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(grad[i] - numeric) / denom);
        }
    }
    for (std::int64_t i = 0; i < z.size(); ++i) {
        const double orig = z[i];
        z[i] = orig + h;
        const double lp = loss_of();
        z[i] = orig - h;
        const double lm = loss_of();
        z[i] = orig;
        const double numeric = (lp - lm) / (2.0 * h);
        const double denom = std::max({std::abs(gz[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(gz[i] - numeric) / denom);
    }
    MESSAGE("encoder max FD relative error: " << worst);
    CHECK(worst < 1e-5);
}

TEST_CASE("concat fusion is literal juxtaposition") {
    FTape tape;
    Rng data(11);
    const Tensor<float> av = random_tensor<float>({2, 32}, data);
    const Tensor<float> bv = random_tensor<float>({2, 32}, data);
    auto a = tape.leaf(av), b = tape.leaf(bv);
    auto f = fuse_concat(tape, a, b);
    REQUIRE(tape.val(f).shape == std::vector<std::int64_t>{2, 64});
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t d = 0; d < 32; ++d) {
            CHECK(tape.val(f).at2(n, d) == av.at2(n, d));
            CHECK(tape.val(f).at2(n, 32 + d) == bv.at2(n, d));
        }

    // swapped order permutes halves
    auto g = fuse_concat(tape, b, a);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t d = 0; d < 32; ++d) {
            CHECK(tape.val(g).at2(n, d) == tape.val(f).at2(n, 32 + d));
            CHECK(tape.val(g).at2(n, 32 + d) == tape.val(f).at2(n, d));
        }

    auto zero = tape.leaf(Tensor<float>({2, 32}, 0.0f));
    auto h = fuse_concat(tape, a, zero);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t d = 0; d < 32; ++d) CHECK(tape.val(h).at2(n, 32 + d) == 0.0f);

    auto narrow = tape.leaf(Tensor<float>({2, 16}, 0.0f));
    CHECK_THROWS_AS(fuse_concat(tape, a, narrow), ContractError);
}

TEST_CASE("cross-attention gate follows the closed form") {
    ModelConfig cfg = desk_cfg(FusionMode::cross_attention);
    ParamStore ps;
    init_model_params(ps, cfg, 37);
    Rng data(13);

    SUBCASE("orthogonal embeddings gate at one half, bitwise") {
        // a and b have disjoint support, so <a, b> = 0 and alpha = 0.5
        Tensor<float> av({1, 32}, 0.0f), bv({1, 32}, 0.0f);
        for (std::int64_t d = 0; d < 16; ++d) av.at2(0, d) = static_cast<float>(data.uniform(-1, 1));
        for (std::int64_t d = 16; d < 32; ++d) bv.at2(0, d) = static_cast<float>(data.uniform(-1, 1));
        FTape tape;
        Binder<float> bind(tape, ps);
        auto fused = fuse_cross_attention(tape, bind, tape.leaf(av), tape.leaf(bv));

        Tensor<float> ha({1, 32}), hb({1, 32});
        for (std::int64_t d = 0; d < 32; ++d) {
            ha.at2(0, d) = av.at2(0, d) + 0.5f * bv.at2(0, d);
            hb.at2(0, d) = bv.at2(0, d) + 0.5f * av.at2(0, d);
        }
        FTape ref;
        Binder<float> rbind(ref, ps);
        auto la = ref.layer_norm(ref.leaf(ha), rbind.var("fusion.ln_a.gain"),
                                 rbind.var("fusion.ln_a.bias"), 1e-5f);
        auto lb = ref.layer_norm(ref.leaf(hb), rbind.var("fusion.ln_b.gain"),
                                 rbind.var("fusion.ln_b.bias"), 1e-5f);
        for (std::int64_t d = 0; d < 32; ++d) {
            CHECK(tape.val(fused).at2(0, d) == ref.val(la).at2(0, d));
            CHECK(tape.val(fused).at2(0, 32 + d) == ref.val(lb).at2(0, d));
        }
    }

    SUBCASE("equal embeddings collapse to LN(v) twice") {
        const Tensor<float> v = random_tensor<float>({2, 32}, data, -0.8, 0.8);
        FTape tape;
        Binder<float> bind(tape, ps);
        auto fused = fuse_cross_attention(tape, bind, tape.leaf(v), tape.leaf(v));
        // identical inputs and identical fresh LN params: halves agree exactly
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t d = 0; d < 32; ++d)
                CHECK(tape.val(fused).at2(n, d) == tape.val(fused).at2(n, 32 + d));
        // and match LN(v) up to the epsilon inside the norm
        FTape ref;
        Binder<float> rbind(ref, ps);
        auto ln = ref.layer_norm(ref.leaf(v), rbind.var("fusion.ln_a.gain"),
                                 rbind.var("fusion.ln_a.bias"), 1e-5f);
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t d = 0; d < 32; ++d)
                CHECK(tape.val(fused).at2(n, d) ==
                      doctest::Approx(ref.val(ln).at2(n, d)).epsilon(1e-4));
    }

    SUBCASE("zero embeddings emit the LN bias vectors") {
        ParamStore biased;
        init_model_params(biased, cfg, 37);
        Rng bias_rng(15);
        for (auto name : {"fusion.ln_a.bias", "fusion.ln_b.bias"})
            for (auto& x : biased.at(name).data) x = static_cast<float>(bias_rng.uniform(-1, 1));
        FTape tape;
        Binder<float> bind(tape, biased);
        auto zero = tape.leaf(Tensor<float>({2, 32}, 0.0f));
        auto fused = fuse_cross_attention(tape, bind, zero, zero);
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t d = 0; d < 32; ++d) {
                CHECK(tape.val(fused).at2(n, d) == biased.at("fusion.ln_a.bias")[d]);
                CHECK(tape.val(fused).at2(n, 32 + d) == biased.at("fusion.ln_b.bias")[d]);
            }
    }

    SUBCASE("zeroed clinical stream reduces to (LN(f_s), LN(half f_s))") {
        const Tensor<float> fs = random_tensor<float>({2, 32}, data);
        Tensor<float> half = fs;
        for (auto& x : half.data) x *= 0.5f;
        FTape tape;
        Binder<float> bind(tape, ps);
        auto fused = fuse_cross_attention(tape, bind, tape.leaf(fs),
                                          tape.leaf(Tensor<float>({2, 32}, 0.0f)));
        FTape ref;
        Binder<float> rbind(ref, ps);
        auto la = ref.layer_norm(ref.leaf(fs), rbind.var("fusion.ln_a.gain"),
                                 rbind.var("fusion.ln_a.bias"), 1e-5f);
        auto lb = ref.layer_norm(ref.leaf(half), rbind.var("fusion.ln_b.gain"),
                                 rbind.var("fusion.ln_b.bias"), 1e-5f);
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t d = 0; d < 32; ++d) {
                CHECK(tape.val(fused).at2(n, d) == ref.val(la).at2(n, d));
                CHECK(tape.val(fused).at2(n, 32 + d) == ref.val(lb).at2(n, d));
            }
    }

    SUBCASE("gate matches scalar arithmetic and is symmetric") {
        const Tensor<float> fs = random_tensor<float>({3, 32}, data);
        const Tensor<float> fc = random_tensor<float>({3, 32}, data);
        FTape tape;
        Binder<float> bind(tape, ps);
        auto fwd = fuse_cross_attention(tape, bind, tape.leaf(fs), tape.leaf(fc));
        FTape tape2;
        Binder<float> bind2(tape2, ps);
        auto rev = fuse_cross_attention(tape2, bind2, tape2.leaf(fc), tape2.leaf(fs));
        for (std::int64_t n = 0; n < 3; ++n) {
            double dot = 0.0;
            for (std::int64_t d = 0; d < 32; ++d)
                dot += static_cast<double>(fs.at2(n, d)) * fc.at2(n, d);
            const double alpha = 1.0 / (1.0 + std::exp(-dot / std::sqrt(32.0)));
            CHECK(alpha > 0.0);
            CHECK(alpha < 1.0);
            // reconstruct the pre-norm sum and push it through the same LN op
            Tensor<float> ha({1, 32});
            for (std::int64_t d = 0; d < 32; ++d)
                ha.at2(0, d) = static_cast<float>(fs.at2(n, d) + alpha * fc.at2(n, d));
            FTape ref;
            Binder<float> rbind(ref, ps);
            auto la = ref.layer_norm(ref.leaf(ha), rbind.var("fusion.ln_a.gain"),
                                     rbind.var("fusion.ln_a.bias"), 1e-5f);
            for (std::int64_t d = 0; d < 32; ++d)
                CHECK(tape.val(fwd).at2(n, d) ==
                      doctest::Approx(ref.val(la).at2(0, d)).epsilon(2e-5));
            // symmetric gate: swapping streams swaps halves up to the LN params
            Tensor<float> hb({1, 32});
            for (std::int64_t d = 0; d < 32; ++d)
                hb.at2(0, d) = static_cast<float>(fc.at2(n, d) + alpha * fs.at2(n, d));
            FTape ref2;
            Binder<float> rbind2(ref2, ps);
            auto la2 = ref2.layer_norm(ref2.leaf(hb), rbind2.var("fusion.ln_a.gain"),
                                       rbind2.var("fusion.ln_a.bias"), 1e-5f);
            for (std::int64_t d = 0; d < 32; ++d)
                CHECK(tape2.val(rev).at2(n, d) ==
                      doctest::Approx(ref2.val(la2).at2(0, d)).epsilon(2e-5));
        }
    }
}

TEST_CASE("head composition and zero-weight logits") {
    ModelConfig cfg = desk_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 43);
    FTape tape;
    Binder<float> bind(tape, ps);
    Rng data(17), rng(18);
    auto fused = tape.leaf(random_tensor<float>({5, 64}, data));
    auto logits = classify_head(tape, bind, cfg, fused, Mode::eval, rng);
    CHECK(tape.val(logits).shape == std::vector<std::int64_t>{5, 4});

    auto wrong = tape.leaf(random_tensor<float>({5, 32}, data));
    CHECK_THROWS_AS(classify_head(tape, bind, cfg, wrong, Mode::eval, rng), ContractError);

    ParamStore zeroed;
    init_model_params(zeroed, cfg, 43);
    zeroed.at("head.fc1.weight").fill(0.0f);
    zeroed.at("head.fc2.weight").fill(0.0f);
    const float bias_vals[4] = {0.3f, -0.2f, 1.5f, 0.0f};
    for (int k = 0; k < 4; ++k) zeroed.at("head.fc2.bias")[k] = bias_vals[k];
    FTape tape2;
    Binder<float> bind2(tape2, zeroed);
    auto logits2 = classify_head(tape2, bind2, cfg, tape2.leaf(random_tensor<float>({2, 64}, data)),
                                 Mode::eval, rng);
    for (std::int64_t n = 0; n < 2; ++n)
        for (int k = 0; k < 4; ++k) CHECK(tape2.val(logits2).at2(n, k) == bias_vals[k]);
}

TEST_CASE("composite model gradients match finite differences in 64-bit") {
    for (FusionMode fm : {FusionMode::concat, FusionMode::cross_attention}) {
        CAPTURE(static_cast<int>(fm));
        FdHarness fd = make_fd_harness(fm, fm == FusionMode::concat ? 101 : 103);
        int refined = 0;
        const double worst = fd.max_rel_error(1e-3, 1e-3, 5, 1234, &refined);
        MESSAGE("composite FD max relative error: " << worst << " (" << refined
                                                    << " kink-window coordinates re-stepped)");
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("predict emits a distribution and breaks ties to class 1") {
    ModelConfig cfg = desk_cfg();
    feat::FeatureSubset subset = feat::default_subset();
    FusedModel m = make_model(cfg, subset, 51);
    m.standardizer.mean.assign(14, 0.0);
    m.standardizer.stddev.assign(14, 1.0);

    pose::ClipWindow clip;
    clip.X.assign(static_cast<std::size_t>(124 * 17 * 3), 0.0);
    Rng data(19);
    for (auto& v : clip.X) v = data.uniform(-1, 1);
    feat::GaitFeatureVector f;
    for (int i = 0; i < feat::kNumFeatures; ++i) f.v[static_cast<std::size_t>(i)] = data.uniform(-2, 2);
    f.valid = (1u << feat::kNumFeatures) - 1u;

    Prediction p = predict(m, clip, f);
    REQUIRE(p.probs.size() == 4);
    double sum = 0.0;
    for (double q : p.probs) {
        CHECK(q >= 0.0);
        sum += q;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p.label >= 1);
    CHECK(p.label <= 4);

    // repeated prediction is bit-identical and batch-independent
    Prediction p2 = predict(m, clip, f);
    for (int k = 0; k < 4; ++k) CHECK(p.probs[static_cast<std::size_t>(k)] == p2.probs[static_cast<std::size_t>(k)]);
    std::vector<const pose::ClipWindow*> clips{&clip, &clip, &clip};
    std::vector<std::vector<double>> rows(
        3, feat::apply_standardizer(m.standardizer, feat::select_subset(f, m.subset)));
    const Tensor<float> probs = predict_probs(m, clips, rows);
    for (int k = 0; k < 4; ++k)
        CHECK(static_cast<double>(probs.at2(2, k)) == p.probs[static_cast<std::size_t>(k)]);

    // zeroed head makes all logits equal: lowest index wins
    FusedModel flat = make_model(cfg, subset, 51);
    flat.standardizer = m.standardizer;
    flat.params.at("head.fc1.weight").fill(0.0f);
    flat.params.at("head.fc2.weight").fill(0.0f);
    Prediction tie = predict(flat, clip, f);
    CHECK(tie.label == 1);
    for (int k = 0; k < 4; ++k) CHECK(tie.probs[static_cast<std::size_t>(k)] == doctest::Approx(0.25).epsilon(1e-6));

    // missing standardizer stats
    FusedModel bare = make_model(cfg, subset, 51);
    CHECK_THROWS_AS(predict(bare, clip, f), CheckpointError);

    // skeleton-only config ignores features and needs no standardizer
    ModelConfig solo = desk_cfg();
    solo.streams = Streams::skeleton_only;
    FusedModel sm = make_model(solo, subset, 51);
    Prediction sp = predict(sm, clip, f);
    CHECK(sp.probs.size() == 4);
}

TEST_CASE("forward passes never mutate stored parameters") {
    ModelConfig cfg = desk_cfg(FusionMode::cross_attention);
    ParamStore ps;
    init_model_params(ps, cfg, 61);
    const std::uint64_t h0 = param_hash(ps);
    const SkeletonGraph graph = build_coco_graph();

    Rng data(20);
    const Tensor<float> x = random_tensor<float>({2, 3, 40, 17}, data);
    const Tensor<float> z = random_tensor<float>({2, 14}, data);
    for (Mode mode : {Mode::eval, Mode::train}) {
        FTape tape;
        Binder<float> bind(tape, ps);
        Rng rng(5);
        auto out = model_logits(tape, bind, cfg, graph, tape.leaf(x), tape.leaf(z), mode, rng);
        tape.backward(tape.softmax_cross_entropy(out.logits, {1, 3}));
        CHECK(param_hash(ps) == h0);
    }

    // flushing buffers after a train-mode pass moves the running stats only
    FTape tape;
    Binder<float> bind(tape, ps);
    Rng rng(5);
    model_logits(tape, bind, cfg, graph, tape.leaf(x), tape.leaf(z), Mode::train, rng);
    const Tensor<float> before_mean = ps.at("backbone.block1.bn1.running_mean");
    const Tensor<float> before_w = ps.at("backbone.block1.spatial.weight");
    bind.flush_buffers();
    CHECK(param_hash(ps) != h0);
    double moved = 0.0;
    for (std::int64_t i = 0; i < before_mean.size(); ++i)
        moved += std::abs(ps.at("backbone.block1.bn1.running_mean")[i] - before_mean[i]);
    CHECK(moved > 0.0);
    for (std::int64_t i = 0; i < before_w.size(); ++i)
        CHECK(ps.at("backbone.block1.spatial.weight")[i] == before_w[i]);

    ps.at("backbone.block1.spatial.weight")[0] += 0.5f;
    CHECK(param_hash(ps) != h0);
}

TEST_CASE("model_logits validates stream inputs") {
    ModelConfig cfg = desk_cfg();
    ParamStore ps;
    init_model_params(ps, cfg, 67);
    const SkeletonGraph graph = build_coco_graph();
    FTape tape;
    Binder<float> bind(tape, ps);
    Rng data(21), rng(22);
    auto z = tape.leaf(random_tensor<float>({2, 14}, data));
    CHECK_THROWS_AS(model_logits(tape, bind, cfg, graph, FTape::kNull, z, Mode::eval, rng),
                    ContractError);
    auto x = tape.leaf(random_tensor<float>({2, 3, 30, 17}, data));
    CHECK_THROWS_AS(model_logits(tape, bind, cfg, graph, x, FTape::kNull, Mode::eval, rng),
                    ContractError);

    ModelConfig solo = desk_cfg();
    solo.streams = Streams::clinical_only;
    ParamStore solo_ps;
    init_model_params(solo_ps, solo, 67);
    FTape tape2;
    Binder<float> bind2(tape2, solo_ps);
    auto z2 = tape2.leaf(random_tensor<float>({2, 14}, data));
    auto out = model_logits(tape2, bind2, solo, graph, FTape::kNull, z2, Mode::eval, rng);
    CHECK(tape2.val(out.logits).shape == std::vector<std::int64_t>{2, 4});
    CHECK(out.features == FTape::kNull);
}
