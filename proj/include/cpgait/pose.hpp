// Pose ingestion, format conversion, normalization, windowing, splitting,
// augmentation, and the synthetic gait generator.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cpgait/common.hpp"
#include "cpgait/graph.hpp"

namespace cpgait::pose {

enum class Format { BODY25, COCO17 };

// Closed-form generator ground truth carried with synthetic clips.
struct SynthTruth {
    double cadence_spm = 0.0;
    double knee_rom_deg_l = 0.0;
    double knee_rom_deg_r = 0.0;
    double step_len_norm = 0.0;
    // kept in memory for oracle tests; not part of the sidecar schema
    double hip_rom_deg_l = 0.0;
    double hip_rom_deg_r = 0.0;
    double stride_len_norm = 0.0;
    double walking_speed_norm = 0.0;
};

struct PoseSequence {
    std::string patient_id;
    std::string video_id;
    int label = 1;  // GMFCS 1..4
    double fps = 30.0;
    Format format = Format::COCO17;
    std::int64_t T = 0;
    std::int64_t V = 0;
    std::vector<double> frames;  // T*V*3, (x, y, confidence) per cell

    // filled by normalize_coords: pre-normalization pixel-frame series used
    // by spatial features, and the torso scale that was divided out
    std::vector<double> raw_hip_x;
    std::vector<double> raw_ankle_lx;
    std::vector<double> raw_ankle_rx;
    double torso_px = 0.0;  // 0 until normalized

    std::optional<SynthTruth> truth;

    double& x(std::int64_t t, std::int64_t v) { return frames[static_cast<std::size_t>((t * V + v) * 3)]; }
    double& y(std::int64_t t, std::int64_t v) { return frames[static_cast<std::size_t>((t * V + v) * 3 + 1)]; }
    double& conf(std::int64_t t, std::int64_t v) { return frames[static_cast<std::size_t>((t * V + v) * 3 + 2)]; }
    double x(std::int64_t t, std::int64_t v) const { return frames[static_cast<std::size_t>((t * V + v) * 3)]; }
    double y(std::int64_t t, std::int64_t v) const { return frames[static_cast<std::size_t>((t * V + v) * 3 + 1)]; }
    double conf(std::int64_t t, std::int64_t v) const { return frames[static_cast<std::size_t>((t * V + v) * 3 + 2)]; }
};

struct ClipWindow {
    static constexpr std::int64_t kT = 124;
    static constexpr std::int64_t kV = 17;
    static constexpr std::int64_t kC = 3;

    std::vector<double> X;  // kT*kV*3, (x, y, confidence)
    std::string patient_id;
    std::string video_id;
    int label = 1;
    std::int64_t start_frame = 0;
    double fps = 30.0;

    std::vector<double> raw_hip_x;     // kT entries when source was normalized
    std::vector<double> raw_ankle_lx;
    std::vector<double> raw_ankle_rx;
    double torso_px = 0.0;

    std::optional<SynthTruth> truth;

    double& x(std::int64_t t, std::int64_t v) { return X[static_cast<std::size_t>((t * kV + v) * 3)]; }
    double& y(std::int64_t t, std::int64_t v) { return X[static_cast<std::size_t>((t * kV + v) * 3 + 1)]; }
    double& conf(std::int64_t t, std::int64_t v) { return X[static_cast<std::size_t>((t * kV + v) * 3 + 2)]; }
    double x(std::int64_t t, std::int64_t v) const { return X[static_cast<std::size_t>((t * kV + v) * 3)]; }
    double y(std::int64_t t, std::int64_t v) const { return X[static_cast<std::size_t>((t * kV + v) * 3 + 1)]; }
    double conf(std::int64_t t, std::int64_t v) const { return X[static_cast<std::size_t>((t * kV + v) * 3 + 2)]; }
};

struct DatasetSplit {
    std::vector<ClipWindow> train;
    std::vector<ClipWindow> val;
    std::vector<ClipWindow> test;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

struct SyntheticSpec {
    int clips_per_class = 12;
    int clips_per_patient = 2;
    int frames_per_clip = 160;
    std::array<double, 4> stride_freq_hz{1.0, 0.85, 0.7, 0.55};
    std::array<double, 4> knee_rom_deg{50.0, 40.0, 32.0, 25.0};
    std::array<double, 4> hip_rom_deg{42.0, 35.0, 28.0, 20.0};
    std::array<double, 4> asymmetry{0.0, 0.12, 0.25, 0.40};
    double noise_sigma_px = 2.0;
    double param_jitter = 0.05;  // per-clip relative jitter on freq/ROM
    double fps = 30.0;
};

std::vector<PoseSequence> load_pose_jsonl(const std::string& path);
void save_pose_jsonl(const std::string& path, const std::vector<PoseSequence>& seqs);

PoseSequence body25_to_coco17(const PoseSequence& seq);

// Hip-center every frame and divide coordinates by the sequence-median torso
// length; stores the pre-normalization hip/ankle x series and the scale.
PoseSequence normalize_coords(const PoseSequence& seq);

std::vector<ClipWindow> slide_windows(const PoseSequence& seq, int window = 124, int stride = 12);

bool quality_filter(const ClipWindow& clip, double min_conf = 0.2, double min_frac = 0.8);

// Sequences should already be converted and normalized; windowing and
// quality filtering run after patient assignment.
DatasetSplit patient_stratified_split(const std::vector<PoseSequence>& seqs, double f_train,
                                      double f_val, double f_test, std::uint64_t seed,
                                      int window = 124, int stride = 12, double min_conf = 0.2,
                                      double min_frac = 0.8);

ClipWindow augment_flip(const ClipWindow& clip);
ClipWindow augment_noise(const ClipWindow& clip, double sigma_px, std::uint64_t rng_seed);

// Linearly interpolate low-confidence cells per keypoint across time;
// leading/trailing gaps hold the nearest valid value.
ClipWindow interpolate_gaps(const ClipWindow& clip, double min_conf = 0.2);

std::vector<PoseSequence> synth_generate(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace cpgait::pose
