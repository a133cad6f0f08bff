#include "cpgait/graph.hpp"

#include <cmath>

namespace cpgait {

const std::array<const char*, kNumKeypoints>& keypoint_names() {
    static const std::array<const char*, kNumKeypoints> names = {
        "nose",       "l_eye",   "r_eye",   "l_ear",   "r_ear",   "l_shoulder",
        "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hip",
        "r_hip",      "l_knee",  "r_knee",  "l_ankle", "r_ankle"};
    return names;
}

const std::vector<std::pair<int, int>>& flip_pairs() {
    static const std::vector<std::pair<int, int>> pairs = {
        {1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}};
    return pairs;
}

SkeletonGraph build_coco_graph() {
    SkeletonGraph g;
    g.bones = {{0, 1},  {0, 2},  {1, 3},   {2, 4},   {0, 5},   {0, 6},
               {5, 7},  {7, 9},  {6, 8},   {8, 10},  {5, 11},  {6, 12},
               {11, 13}, {13, 15}, {12, 14}, {14, 16}, {5, 6},  {11, 12}};
    const int V = g.V;
    std::vector<double> a(static_cast<std::size_t>(V * V), 0.0);
    for (auto [u, v] : g.bones) {
        a[static_cast<std::size_t>(u * V + v)] = 1.0;
        a[static_cast<std::size_t>(v * V + u)] = 1.0;
    }
    for (int v = 0; v < V; ++v) a[static_cast<std::size_t>(v * V + v)] = 1.0;  // self-loops
    std::vector<double> dinv(static_cast<std::size_t>(V), 0.0);
    for (int u = 0; u < V; ++u) {
        double deg = 0.0;
        for (int v = 0; v < V; ++v) deg += a[static_cast<std::size_t>(u * V + v)];
        dinv[static_cast<std::size_t>(u)] = 1.0 / std::sqrt(deg);
    }
    g.a_hat = ad::Tensor<float>({V, V});
    for (int u = 0; u < V; ++u)
        for (int v = 0; v < V; ++v)
            g.a_hat.at2(u, v) = static_cast<float>(dinv[static_cast<std::size_t>(u)] *
                                                   a[static_cast<std::size_t>(u * V + v)] *
                                                   dinv[static_cast<std::size_t>(v)]);
    return g;
}

}  // namespace cpgait
