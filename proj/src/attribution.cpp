#include "cpgait/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cpgait/features.hpp"
#include "cpgait/tape.hpp"

namespace cpgait::attrib {
namespace {

void max_normalize(std::array<double, kNumKeypoints>& s) {
    const double mx = *std::max_element(s.begin(), s.end());
    if (mx <= 0.0) return;  // all-zero map stays all-zero
    for (double& v : s) v /= mx;
}

// Standardized clinical row for the clip, mirroring predict().
std::vector<double> clinical_row(model::FusedModel& m, const pose::ClipWindow& clip) {
    if (m.standardizer.mean.size() != m.subset.names.size() ||
        m.standardizer.stddev.size() != m.subset.names.size())
        throw CheckpointError("attribution: standardizer stats missing for the feature subset");
    const feat::GaitFeatureVector f = feat::extract_all(clip, clip.fps);
    return feat::apply_standardizer(m.standardizer, feat::select_subset(f, m.subset));
}

int argmax_row(const ad::Tensor<float>& probs, std::int64_t row) {
    int best = 0;
    for (std::int64_t k = 1; k < probs.dim(1); ++k)
        if (probs.at2(row, k) > probs.at2(row, best)) best = static_cast<int>(k);
    return best;
}

// 1-based request (0 = use predicted) -> 0-based class index.
int resolve_target(int target_class, int predicted, int num_classes) {
    require(target_class >= 0 && target_class <= num_classes,
            "attribution: target class out of range");
    return target_class == 0 ? predicted : target_class - 1;
}

}  // namespace

RegionTable default_regions() {
    return RegionTable{{
        {"Head", {0, 1, 2, 3, 4}},
        {"Arm", {7, 8, 9, 10}},
        {"Trunk", {5, 6}},
        {"Hip", {11, 12}},
        {"Knee", {13, 14}},
        {"Ankle", {15, 16}},
    }};
}

std::array<double, kNumKeypoints> cam_scores(const ad::Tensor<float>& activations,
                                             const ad::Tensor<float>& grads, TemporalAgg agg) {
    require(activations.ndim() == 4 && grads.same_shape(activations),
            "cam_scores: activation/gradient shapes disagree");
    require(activations.dim(0) == 1 && activations.dim(3) == kNumKeypoints,
            "cam_scores: expected a [1,C,T,17] feature map");
    const std::int64_t C = activations.dim(1);
    const std::int64_t T = activations.dim(2);
    const std::int64_t V = activations.dim(3);

    std::vector<double> w(static_cast<std::size_t>(C), 0.0);
    const double inv_tv = 1.0 / static_cast<double>(T * V);
    for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t v = 0; v < V; ++v) acc += grads.at4(0, c, t, v);
        w[static_cast<std::size_t>(c)] = acc * inv_tv;
    }

    std::array<double, kNumKeypoints> s{};
    for (std::int64_t v = 0; v < V; ++v) {
        double acc = 0.0;  // relu keeps CAM >= 0, so 0 seeds max correctly too
        for (std::int64_t t = 0; t < T; ++t) {
            double cam = 0.0;
            for (std::int64_t c = 0; c < C; ++c)
                cam += w[static_cast<std::size_t>(c)] * activations.at4(0, c, t, v);
            cam = std::max(0.0, cam);
            if (agg == TemporalAgg::mean)
                acc += cam;
            else
                acc = std::max(acc, cam);
        }
        s[static_cast<std::size_t>(v)] = agg == TemporalAgg::mean ? acc / static_cast<double>(T) : acc;
    }
    max_normalize(s);
    return s;
}

AttributionMap grad_cam_keypoints(model::FusedModel& m, const pose::ClipWindow& clip,
                                  int target_class, TemporalAgg agg) {
    require(m.cfg.streams != model::Streams::clinical_only,
            "grad_cam: config has no skeleton stream to attribute");
    const bool clinical = m.cfg.streams != model::Streams::skeleton_only;

    ad::Tape<float> tape;
    model::Binder<float> bind(tape, m.params);
    const std::vector<const pose::ClipWindow*> clips{&clip};
    // Input requires grad so the backward sweep reaches the feature map even
    // when every backbone parameter is frozen.
    const auto x = tape.leaf(model::clips_to_tensor<float>(clips), true);
    auto z = ad::Tape<float>::kNull;
    if (clinical) {
        const std::vector<double> row = clinical_row(m, clip);
        ad::Tensor<float> zt({1, static_cast<std::int64_t>(row.size())});
        for (std::size_t f = 0; f < row.size(); ++f)
            zt.at2(0, static_cast<std::int64_t>(f)) = static_cast<float>(row[f]);
        z = tape.leaf(zt);
    }
    Rng rng(0);  // eval mode never draws from it
    model::ModelOut<float> out =
        model_logits(tape, bind, m.cfg, m.graph, x, z, Mode::eval, rng);

    const ad::Tensor<float> probs = ad::softmax_rows(tape.val(out.logits));
    const int predicted = argmax_row(probs, 0);
    const int tgt = resolve_target(target_class, predicted, m.cfg.num_classes);

    tape.backward(tape.select_scalar(out.logits, tgt));

    AttributionMap map;
    map.score = cam_scores(tape.val(out.features), tape.grad(out.features), agg);
    map.regions = aggregate_regions(map.score, default_regions());
    map.target_class = tgt + 1;
    map.predicted_class = predicted + 1;
    map.patient_id = clip.patient_id;
    map.video_id = clip.video_id;
    map.start_frame = clip.start_frame;
    return map;
}

std::vector<std::pair<std::string, double>> aggregate_regions(
    const std::array<double, kNumKeypoints>& score, const RegionTable& table) {
    std::vector<std::pair<std::string, double>> out;
    out.reserve(table.regions.size());
    for (const auto& [name, members] : table.regions) {
        require(!members.empty(), "aggregate_regions: empty region " + name);
        double acc = 0.0;
        for (int v : members) {
            require(v >= 0 && v < kNumKeypoints,
                    "aggregate_regions: keypoint index out of range in region " + name);
            acc += score[static_cast<std::size_t>(v)];
        }
        out.emplace_back(name, acc / static_cast<double>(members.size()));
    }
    return out;
}

std::array<double, kNumKeypoints> occlusion_importance(model::FusedModel& m,
                                                       const pose::ClipWindow& clip,
                                                       int target_class) {
    require(m.cfg.streams != model::Streams::clinical_only,
            "occlusion_importance: config has no skeleton stream to occlude");
    const bool clinical = m.cfg.streams != model::Streams::skeleton_only;

    std::vector<pose::ClipWindow> occluded(static_cast<std::size_t>(kNumKeypoints), clip);
    for (int v = 0; v < kNumKeypoints; ++v) {
        pose::ClipWindow& w = occluded[static_cast<std::size_t>(v)];
        for (std::int64_t t = 0; t < pose::ClipWindow::kT; ++t) {
            w.x(t, v) = 0.0;
            w.y(t, v) = 0.0;
            w.conf(t, v) = 0.0;
        }
    }
    std::vector<const pose::ClipWindow*> clips;
    clips.reserve(static_cast<std::size_t>(kNumKeypoints) + 1);
    clips.push_back(&clip);
    for (const pose::ClipWindow& w : occluded) clips.push_back(&w);

    // Clinical features stay those of the unoccluded clip for every variant;
    // occlusion probes the skeleton stream alone.
    std::vector<std::vector<double>> z_rows;
    if (clinical) z_rows.assign(clips.size(), clinical_row(m, clip));

    const ad::Tensor<float> probs = model::predict_probs(m, clips, z_rows);
    const int predicted = argmax_row(probs, 0);
    const int tgt = resolve_target(target_class, predicted, m.cfg.num_classes);

    const double baseline = static_cast<double>(probs.at2(0, tgt));
    std::array<double, kNumKeypoints> s{};
    for (int v = 0; v < kNumKeypoints; ++v)
        s[static_cast<std::size_t>(v)] =
            std::max(0.0, baseline - static_cast<double>(probs.at2(v + 1, tgt)));
    max_normalize(s);
    return s;
}

double rank_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), "rank_correlation: length mismatch");
    require(a.size() >= 2, "rank_correlation: need at least two entries");
    const auto ranks = [](const std::vector<double>& x) {
        const std::size_t n = x.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
        std::vector<double> r(n, 0.0);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a);
    const std::vector<double> rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = ra[i] - ma;
        const double db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

std::array<double, kNumKeypoints> mean_scores(
    const std::vector<std::array<double, kNumKeypoints>>& maps) {
    require(!maps.empty(), "mean_scores: empty set");
    std::array<double, kNumKeypoints> s{};
    for (const auto& m : maps)
        for (int v = 0; v < kNumKeypoints; ++v) s[static_cast<std::size_t>(v)] += m[static_cast<std::size_t>(v)];
    for (double& v : s) v /= static_cast<double>(maps.size());
    max_normalize(s);
    return s;
}

void save_attribution_csv(const std::string& path, const AttributionMap& map) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open " + path + " for writing");
    char buf[128];
    os << "keypoint,score,region\n";
    const auto& names = keypoint_names();
    const RegionTable table = default_regions();
    std::array<const char*, kNumKeypoints> region_of{};
    for (const auto& [name, members] : table.regions)
        for (int v : members) region_of[static_cast<std::size_t>(v)] = name.c_str();
    for (int v = 0; v < kNumKeypoints; ++v) {
        std::snprintf(buf, sizeof buf, "%s,%.9f,%s\n", names[static_cast<std::size_t>(v)],
                      map.score[static_cast<std::size_t>(v)], region_of[static_cast<std::size_t>(v)]);
        os << buf;
    }
    os << "region,score\n";
    for (const auto& [name, score] : map.regions) {
        std::snprintf(buf, sizeof buf, "%s,%.9f\n", name.c_str(), score);
        os << buf;
    }
    os << "target_class," << map.target_class << "\n";
    os << "predicted_class," << map.predicted_class << "\n";
    if (!os) throw ValidationError("failed writing " + path);
}

}  // namespace cpgait::attrib
