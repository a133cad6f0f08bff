// COCO-17 skeleton graph: keypoint indices, bone list, normalized adjacency.
#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "cpgait/tensor.hpp"

namespace cpgait {

// COCO keypoint order.
enum Keypoint : int {
    kNose = 0,
    kLEye = 1,
    kREye = 2,
    kLEar = 3,
    kREar = 4,
    kLShoulder = 5,
    kRShoulder = 6,
    kLElbow = 7,
    kRElbow = 8,
    kLWrist = 9,
    kRWrist = 10,
    kLHip = 11,
    kRHip = 12,
    kLKnee = 13,
    kRKnee = 14,
    kLAnkle = 15,
    kRAnkle = 16,
};

constexpr int kNumKeypoints = 17;

const std::array<const char*, kNumKeypoints>& keypoint_names();

// (left, right) index pairs swapped by horizontal flip.
const std::vector<std::pair<int, int>>& flip_pairs();

struct SkeletonGraph {
    int V = kNumKeypoints;
    std::vector<std::pair<int, int>> bones;   // undirected
    ad::Tensor<float> a_hat;                  // V x V, D^(-1/2) (A + I) D^(-1/2)
};

SkeletonGraph build_coco_graph();

}  // namespace cpgait
