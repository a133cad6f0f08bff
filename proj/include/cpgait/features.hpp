// Clinical gait features: joint-angle series, gait events, the 24-feature
// vector, the curated 14-feature subset, standardization and CSV I/O.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cpgait/common.hpp"
#include "cpgait/pose.hpp"

namespace cpgait::feat {

inline constexpr int kNumFeatures = 24;

// Canonical feature order.
enum FeatureIndex : int {
    kHipRomL = 0,
    kHipRomR,
    kHipRomSym,
    kKneeRomL,
    kKneeRomR,
    kKneeRomSym,
    kHipMeanL,
    kHipMeanR,
    kKneeMeanL,
    kKneeMeanR,
    kNeckAngleMean,
    kArmBodyAngleMean,
    kArmSwingAmpL,
    kArmSwingAmpR,
    kTrunkInclMean,
    kLateralSway,
    kCadenceSpm,
    kGaitCycleDurS,
    kStanceSwingRatio,
    kStepLenNorm,
    kStrideLenNorm,
    kWalkingSpeedNorm,
    kStepLenSym,
    kTimingSym,
};

const std::array<std::string, kNumFeatures>& feature_names();

struct GaitFeatureVector {
    std::array<double, kNumFeatures> v{};
    std::uint32_t valid = 0;  // bit i set -> feature i valid

    bool is_valid(int i) const { return (valid >> i) & 1u; }
};

struct GaitEvents {
    std::vector<int> left;   // frame indices, strictly increasing
    std::vector<int> right;
    std::vector<double> intervals_l;  // consecutive same-side differences
    std::vector<double> intervals_r;
};

using PointSeries = std::vector<std::array<double, 2>>;

// Unsigned angle at the center point between rays to a and b, per frame,
// in degrees.
std::vector<double> joint_angle_series(const PointSeries& center, const PointSeries& a,
                                       const PointSeries& b);

// Literal range of motion: max - min.
double rom(const std::vector<double>& theta);

// Noise-robust range of motion: least-squares two-harmonic fit with a grid +
// golden-section frequency search; returns the range of the fitted curve.
double harmonic_rom(const std::vector<double>& theta, double fps);

// |l - r| / (0.5 (l + r)) * 100; 0 when l + r < 1e-8.
double symmetry_index(double x_l, double x_r);

GaitEvents detect_gait_events(const pose::ClipWindow& clip, double fps);

struct TemporalFeatures {
    double cadence_spm = 0.0;
    double gait_cycle_dur_s = 0.0;
    double stance_swing_ratio = 0.0;
    bool valid = false;  // >= 2 events on each side
};
TemporalFeatures temporal_features(const pose::ClipWindow& clip, const GaitEvents& events,
                                   double fps);

struct SpatialFeatures {
    double step_len_norm = 0.0;
    double stride_len_norm = 0.0;
    double walking_speed_norm = 0.0;  // valid even without events
    double step_len_sym = 0.0;
    bool events_valid = false;
};
SpatialFeatures spatial_features(const pose::ClipWindow& clip, const GaitEvents& events);

struct PosturalFeatures {
    double hip_rom_l = 0.0, hip_rom_r = 0.0;
    double knee_rom_l = 0.0, knee_rom_r = 0.0;
    double hip_mean_l = 0.0, hip_mean_r = 0.0;
    double knee_mean_l = 0.0, knee_mean_r = 0.0;
    double neck_angle_mean = 0.0;
    double arm_body_angle_mean = 0.0;
    double arm_swing_amp_l = 0.0, arm_swing_amp_r = 0.0;
    double trunk_incl_mean = 0.0;
    double lateral_sway = 0.0;
};
PosturalFeatures postural_features(const pose::ClipWindow& clip, double fps);

GaitFeatureVector extract_all(const pose::ClipWindow& clip, double fps);

struct FeatureSubset {
    std::vector<std::string> names;
};
FeatureSubset default_subset();  // the curated 14 features
FeatureSubset full_subset();     // all 24 canonical names

std::vector<double> select_subset(const GaitFeatureVector& v, const FeatureSubset& subset);

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stddev;  // population std of the fit set
};
Standardizer fit_standardizer(const std::vector<std::vector<double>>& rows);
std::vector<double> apply_standardizer(const Standardizer& s, const std::vector<double>& row);

struct FeatureRow {
    GaitFeatureVector f;
    std::string patient_id;
    std::string video_id;
    std::int64_t start_frame = 0;
    int label = 1;
};
void save_feature_csv(const std::string& path, const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> load_feature_csv(const std::string& path);

}  // namespace cpgait::feat
