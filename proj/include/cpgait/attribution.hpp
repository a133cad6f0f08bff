// Grad-CAM keypoint attribution over the backbone's final block, region
// aggregation, and an occlusion oracle for cross-checking the rankings.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cpgait/graph.hpp"
#include "cpgait/model.hpp"
#include "cpgait/pose.hpp"
#include "cpgait/tensor.hpp"

namespace cpgait::attrib {

enum class TemporalAgg { mean, max };

struct RegionTable {
    std::vector<std::pair<std::string, std::vector<int>>> regions;
};
// Head {0-4}, Arm {7-10}, Trunk {5,6}, Hip {11,12}, Knee {13,14},
// Ankle {15,16}; the six sets partition the 17 keypoints.
RegionTable default_regions();

struct AttributionMap {
    std::array<double, kNumKeypoints> score{};  // [0,1], max = 1 unless all zero
    std::vector<std::pair<std::string, double>> regions;
    int target_class = 1;  // 1-based
    int predicted_class = 1;
    std::string patient_id;
    std::string video_id;
    std::int64_t start_frame = 0;
};

// CAM reduction on explicit tensors: w_c = mean over (t,v) of g[0,c,:,:],
// CAM(t,v) = relu(sum_c w_c A[0,c,t,v]), keypoint score = mean (or max) over
// t, then max-normalized with an all-zero map left at zero.
std::array<double, kNumKeypoints> cam_scores(const ad::Tensor<float>& activations,
                                             const ad::Tensor<float>& grads, TemporalAgg agg);

// Grad-CAM through the trained model in eval mode; target_class 1-based, 0
// selects the predicted class. Requires the skeleton stream.
AttributionMap grad_cam_keypoints(model::FusedModel& m, const pose::ClipWindow& clip,
                                  int target_class = 0, TemporalAgg agg = TemporalAgg::mean);

std::vector<std::pair<std::string, double>> aggregate_regions(
    const std::array<double, kNumKeypoints>& score, const RegionTable& table);

// Zero each keypoint's (x, y, confidence) across all frames in turn and
// score max(0, baseline - occluded) target-class probability, max-normalized.
// Clinical features stay those of the unoccluded clip.
std::array<double, kNumKeypoints> occlusion_importance(model::FusedModel& m,
                                                       const pose::ClipWindow& clip,
                                                       int target_class = 0);

// Spearman rank correlation with average ranks for ties; zero-variance
// ranks on either side -> 0. Lengths must match and be at least 2.
double rank_correlation(const std::vector<double>& a, const std::vector<double>& b);

// Mean-over-set mode: average per-clip score arrays, then max-normalize so
// the result satisfies the AttributionMap score invariant.
std::array<double, kNumKeypoints> mean_scores(
    const std::vector<std::array<double, kNumKeypoints>>& maps);

void save_attribution_csv(const std::string& path, const AttributionMap& map);

}  // namespace cpgait::attrib
