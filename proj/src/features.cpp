#include "cpgait/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace cpgait::feat {

const std::array<std::string, kNumFeatures>& feature_names() {
    static const std::array<std::string, kNumFeatures> names = {
        "hip_rom_l",       "hip_rom_r",          "hip_rom_sym",       "knee_rom_l",
        "knee_rom_r",      "knee_rom_sym",       "hip_mean_l",        "hip_mean_r",
        "knee_mean_l",     "knee_mean_r",        "neck_angle_mean",   "arm_body_angle_mean",
        "arm_swing_amp_l", "arm_swing_amp_r",    "trunk_incl_mean",   "lateral_sway",
        "cadence_spm",     "gait_cycle_dur_s",   "stance_swing_ratio", "step_len_norm",
        "stride_len_norm", "walking_speed_norm", "step_len_sym",      "timing_sym"};
    return names;
}

std::vector<double> joint_angle_series(const PointSeries& center, const PointSeries& a,
                                       const PointSeries& b) {
    require(center.size() == a.size() && center.size() == b.size(),
            "joint_angle_series: series lengths differ");
    std::vector<double> out(center.size());
    for (std::size_t t = 0; t < center.size(); ++t) {
        const double ux = a[t][0] - center[t][0];
        const double uy = a[t][1] - center[t][1];
        const double vx = b[t][0] - center[t][0];
        const double vy = b[t][1] - center[t][1];
        const double nu = std::hypot(ux, uy);
        const double nv = std::hypot(vx, vy);
        validate(nu > 1e-12 && nv > 1e-12,
                 "joint_angle_series: zero-length vector at frame " + std::to_string(t));
        const double c = std::clamp((ux * vx + uy * vy) / (nu * nv), -1.0, 1.0);
        out[t] = std::acos(c) * kDegPerRad;
    }
    return out;
}

double rom(const std::vector<double>& theta) {
    require(!theta.empty(), "rom: empty series");
    const auto [lo, hi] = std::minmax_element(theta.begin(), theta.end());
    return *hi - *lo;
}

namespace {

// Least-squares fit of c0 + sum_k a_k cos(k w t) + b_k sin(k w t), k = 1, 2.
// Returns the residual sum of squares and writes the 5 coefficients.
double harmonic_fit(const std::vector<double>& y, double omega, std::array<double, 5>& coef) {
    const std::size_t n = y.size();
    double ata[5][5] = {};
    double atb[5] = {};
    for (std::size_t t = 0; t < n; ++t) {
        const double w = omega * static_cast<double>(t);
        const double phi[5] = {1.0, std::cos(w), std::sin(w), std::cos(2.0 * w),
                               std::sin(2.0 * w)};
        for (int i = 0; i < 5; ++i) {
            atb[i] += phi[i] * y[t];
            for (int j = i; j < 5; ++j) ata[i][j] += phi[i] * phi[j];
        }
    }
    for (int i = 0; i < 5; ++i) {
        ata[i][i] += 1e-9;
        for (int j = 0; j < i; ++j) ata[i][j] = ata[j][i];
    }
    // Gaussian elimination with partial pivoting
    int piv[5] = {0, 1, 2, 3, 4};
    for (int col = 0; col < 5; ++col) {
        int best = col;
        for (int r = col + 1; r < 5; ++r)
            if (std::abs(ata[piv[r]][col]) > std::abs(ata[piv[best]][col])) best = r;
        std::swap(piv[col], piv[best]);
        const double d = ata[piv[col]][col];
        for (int r = col + 1; r < 5; ++r) {
            const double m = ata[piv[r]][col] / d;
            for (int c = col; c < 5; ++c) ata[piv[r]][c] -= m * ata[piv[col]][c];
            atb[piv[r]] -= m * atb[piv[col]];
        }
    }
    for (int col = 4; col >= 0; --col) {
        double s = atb[piv[col]];
        for (int c = col + 1; c < 5; ++c) s -= ata[piv[col]][c] * coef[static_cast<std::size_t>(c)];
        coef[static_cast<std::size_t>(col)] = s / ata[piv[col]][col];
    }
    double sse = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double w = omega * static_cast<double>(t);
        const double fit = coef[0] + coef[1] * std::cos(w) + coef[2] * std::sin(w) +
                           coef[3] * std::cos(2.0 * w) + coef[4] * std::sin(2.0 * w);
        const double r = y[t] - fit;
        sse += r * r;
    }
    return sse;
}

}  // namespace

double harmonic_rom(const std::vector<double>& theta, double fps) {
    require(fps > 0.0, "harmonic_rom: fps must be positive");
    const double plain = rom(theta);
    if (theta.size() < 16 || plain == 0.0) return plain;

    auto sse_at = [&](double f) {
        std::array<double, 5> c{};
        return harmonic_fit(theta, 2.0 * kPi * f / fps, c);
    };
    // coarse grid over plausible stride frequencies, then golden-section
    double best_f = 0.2, best_sse = std::numeric_limits<double>::max();
    for (int i = 0; i <= 90; ++i) {
        const double f = 0.2 + 0.02 * static_cast<double>(i);
        const double s = sse_at(f);
        if (s < best_sse) {
            best_sse = s;
            best_f = f;
        }
    }
    double lo = std::max(0.05, best_f - 0.02), hi = best_f + 0.02;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = sse_at(x1), f2 = sse_at(x2);
    for (int it = 0; it < 60; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = sse_at(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = sse_at(x2);
        }
    }
    const double f_star = 0.5 * (lo + hi);
    std::array<double, 5> c{};
    harmonic_fit(theta, 2.0 * kPi * f_star / fps, c);
    const double omega = 2.0 * kPi * f_star / fps;
    double fmin = std::numeric_limits<double>::max(), fmax = -fmin;
    const double n1 = static_cast<double>(theta.size()) - 1.0;
    for (int i = 0; i <= 4000; ++i) {
        const double t = n1 * static_cast<double>(i) / 4000.0;
        const double w = omega * t;
        const double v = c[0] + c[1] * std::cos(w) + c[2] * std::sin(w) +
                         c[3] * std::cos(2.0 * w) + c[4] * std::sin(2.0 * w);
        fmin = std::min(fmin, v);
        fmax = std::max(fmax, v);
    }
    return fmax - fmin;
}

double symmetry_index(double x_l, double x_r) {
    require(x_l >= 0.0 && x_r >= 0.0, "symmetry_index: inputs must be nonnegative");
    const double denom = 0.5 * (x_l + x_r);
    if (x_l + x_r < 1e-8) return 0.0;
    return std::abs(x_l - x_r) / denom * 100.0;
}

GaitEvents detect_gait_events(const pose::ClipWindow& clip, double fps) {
    require(fps > 0.0, "detect_gait_events: fps must be positive");
    const std::int64_t T = pose::ClipWindow::kT;
    std::vector<double> s(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t)
        s[static_cast<std::size_t>(t)] = clip.x(t, kLAnkle) - clip.x(t, kRAnkle);
    // centered moving average, window 5, edges replicated; every window sums
    // exactly five terms so a constant signal smooths to itself bit-exactly
    std::vector<double> sm(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (std::int64_t k = t - 2; k <= t + 2; ++k)
            acc += s[static_cast<std::size_t>(std::clamp<std::int64_t>(k, 0, T - 1))];
        sm[static_cast<std::size_t>(t)] = acc / 5.0;
    }

    double sm_mean = 0.0;
    for (double v : sm) sm_mean += v;
    sm_mean /= static_cast<double>(T);

    struct Peak {
        int idx;
        double strength;
    };
    // polarity gate: noise wiggles near a separation minimum also produce
    // "maxima" (and vice versa); true extrema lie on their own side of the mean
    std::vector<Peak> maxima, minima;
    for (std::int64_t t = 1; t + 1 < T; ++t) {
        const double prev = sm[static_cast<std::size_t>(t - 1)];
        const double cur = sm[static_cast<std::size_t>(t)];
        const double next = sm[static_cast<std::size_t>(t + 1)];
        if (cur > prev && cur >= next && cur > sm_mean)
            maxima.push_back({static_cast<int>(t), cur});
        if (cur < prev && cur <= next && cur < sm_mean)
            minima.push_back({static_cast<int>(t), -cur});
    }
    const double refractory = 0.25 * fps;
    auto suppress = [&](std::vector<Peak> peaks) {
        std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
            if (a.strength != b.strength) return a.strength > b.strength;
            return a.idx < b.idx;
        });
        std::vector<int> kept;
        for (const Peak& p : peaks) {
            bool close = false;
            for (int k : kept)
                if (std::abs(p.idx - k) < refractory) {
                    close = true;
                    break;
                }
            if (!close) kept.push_back(p.idx);
        }
        std::sort(kept.begin(), kept.end());
        return kept;
    };
    GaitEvents ev;
    ev.left = suppress(maxima);
    ev.right = suppress(minima);
    for (std::size_t i = 1; i < ev.left.size(); ++i)
        ev.intervals_l.push_back(static_cast<double>(ev.left[i] - ev.left[i - 1]));
    for (std::size_t i = 1; i < ev.right.size(); ++i)
        ev.intervals_r.push_back(static_cast<double>(ev.right[i] - ev.right[i - 1]));
    return ev;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// Stance fraction of one ankle: frames where |horizontal velocity| is below
// a quarter of the clip maximum.
double stance_swing_of(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<double> speed(n - 1);
    double vmax = 0.0;
    for (std::size_t t = 0; t + 1 < n; ++t) {
        speed[t] = std::abs(x[t + 1] - x[t]);
        vmax = std::max(vmax, speed[t]);
    }
    std::int64_t stance = 0;
    for (double v : speed)
        if (v < 0.25 * vmax) ++stance;
    const std::int64_t swing = static_cast<std::int64_t>(speed.size()) - stance;
    return swing > 0 ? static_cast<double>(stance) / static_cast<double>(swing) : 0.0;
}

std::vector<double> ankle_x_series(const pose::ClipWindow& clip, int side_kp) {
    if (side_kp == kLAnkle && !clip.raw_ankle_lx.empty()) return clip.raw_ankle_lx;
    if (side_kp == kRAnkle && !clip.raw_ankle_rx.empty()) return clip.raw_ankle_rx;
    std::vector<double> x(static_cast<std::size_t>(pose::ClipWindow::kT));
    for (std::int64_t t = 0; t < pose::ClipWindow::kT; ++t)
        x[static_cast<std::size_t>(t)] = clip.x(t, side_kp);
    return x;
}

}  // namespace

TemporalFeatures temporal_features(const pose::ClipWindow& clip, const GaitEvents& events,
                                   double fps) {
    require(fps > 0.0, "temporal_features: fps must be positive");
    TemporalFeatures out;
    out.valid = events.left.size() >= 2 && events.right.size() >= 2;
    if (out.valid) {
        std::vector<double> pooled = events.intervals_l;
        pooled.insert(pooled.end(), events.intervals_r.begin(), events.intervals_r.end());
        out.gait_cycle_dur_s = mean_of(pooled) / fps;
        out.cadence_spm = 120.0 / out.gait_cycle_dur_s;
    }
    out.stance_swing_ratio = 0.5 * (stance_swing_of(ankle_x_series(clip, kLAnkle)) +
                                    stance_swing_of(ankle_x_series(clip, kRAnkle)));
    return out;
}

SpatialFeatures spatial_features(const pose::ClipWindow& clip, const GaitEvents& events) {
    const std::int64_t T = pose::ClipWindow::kT;
    require(clip.torso_px > 0.0 && clip.raw_hip_x.size() == static_cast<std::size_t>(T) &&
                clip.raw_ankle_lx.size() == static_cast<std::size_t>(T) &&
                clip.raw_ankle_rx.size() == static_cast<std::size_t>(T),
            "spatial_features: normalized clip with raw series required");
    SpatialFeatures out;
    const double duration_s = static_cast<double>(T - 1) / clip.fps;
    out.walking_speed_norm =
        std::abs(clip.raw_hip_x[static_cast<std::size_t>(T - 1)] - clip.raw_hip_x[0]) /
        duration_s / clip.torso_px;

    out.events_valid = events.left.size() >= 2 && events.right.size() >= 2;
    if (!out.events_valid) return out;

    auto sep_at = [&](int t) {
        return std::abs(clip.x(t, kLAnkle) - clip.x(t, kRAnkle));
    };
    std::vector<double> steps_l, steps_r;
    for (int e : events.left) steps_l.push_back(sep_at(e));
    for (int e : events.right) steps_r.push_back(sep_at(e));
    std::vector<double> pooled = steps_l;
    pooled.insert(pooled.end(), steps_r.begin(), steps_r.end());
    out.step_len_norm = mean_of(pooled);
    out.step_len_sym = symmetry_index(mean_of(steps_l), mean_of(steps_r));

    // stride from the ground-frame ankle midpoint between same-side events;
    // the midpoint advances one stride per cycle and is mirror-invariant
    std::vector<double> mid(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t)
        mid[static_cast<std::size_t>(t)] = 0.5 * (clip.raw_ankle_lx[static_cast<std::size_t>(t)] +
                                                  clip.raw_ankle_rx[static_cast<std::size_t>(t)]);
    std::vector<double> strides;
    for (const auto* side : {&events.left, &events.right})
        for (std::size_t i = 1; i < side->size(); ++i)
            strides.push_back(std::abs(mid[static_cast<std::size_t>((*side)[i])] -
                                       mid[static_cast<std::size_t>((*side)[i - 1])]));
    out.stride_len_norm = mean_of(strides) / clip.torso_px;
    return out;
}

namespace {

PointSeries kp_series(const pose::ClipWindow& clip, int v) {
    PointSeries p(static_cast<std::size_t>(pose::ClipWindow::kT));
    for (std::int64_t t = 0; t < pose::ClipWindow::kT; ++t)
        p[static_cast<std::size_t>(t)] = {clip.x(t, v), clip.y(t, v)};
    return p;
}

PointSeries mid_series(const PointSeries& a, const PointSeries& b) {
    PointSeries m(a.size());
    for (std::size_t t = 0; t < a.size(); ++t)
        m[t] = {0.5 * (a[t][0] + b[t][0]), 0.5 * (a[t][1] + b[t][1])};
    return m;
}

}  // namespace

PosturalFeatures postural_features(const pose::ClipWindow& clip, double fps) {
    require(fps > 0.0, "postural_features: fps must be positive");
    PosturalFeatures out;
    const auto sh_mid = mid_series(kp_series(clip, kLShoulder), kp_series(clip, kRShoulder));
    const auto hip_mid = mid_series(kp_series(clip, kLHip), kp_series(clip, kRHip));
    const auto ear_mid = mid_series(kp_series(clip, kLEar), kp_series(clip, kREar));
    const auto ankle_mid = mid_series(kp_series(clip, kLAnkle), kp_series(clip, kRAnkle));

    const auto hip_l = kp_series(clip, kLHip), hip_r = kp_series(clip, kRHip);
    const auto knee_l = kp_series(clip, kLKnee), knee_r = kp_series(clip, kRKnee);
    const auto ankle_l = kp_series(clip, kLAnkle), ankle_r = kp_series(clip, kRAnkle);

    // hip: trunk vs thigh; knee: thigh vs shank (Eq. 1 at the joint)
    const auto hip_series_l = joint_angle_series(hip_l, sh_mid, knee_l);
    const auto hip_series_r = joint_angle_series(hip_r, sh_mid, knee_r);
    const auto knee_series_l = joint_angle_series(knee_l, hip_l, ankle_l);
    const auto knee_series_r = joint_angle_series(knee_r, hip_r, ankle_r);
    out.hip_rom_l = harmonic_rom(hip_series_l, fps);
    out.hip_rom_r = harmonic_rom(hip_series_r, fps);
    out.knee_rom_l = harmonic_rom(knee_series_l, fps);
    out.knee_rom_r = harmonic_rom(knee_series_r, fps);
    out.hip_mean_l = mean_of(hip_series_l);
    out.hip_mean_r = mean_of(hip_series_r);
    out.knee_mean_l = mean_of(knee_series_l);
    out.knee_mean_r = mean_of(knee_series_r);

    out.neck_angle_mean = mean_of(joint_angle_series(sh_mid, ear_mid, hip_mid));
    const auto arm_l =
        joint_angle_series(kp_series(clip, kLShoulder), kp_series(clip, kLElbow), hip_l);
    const auto arm_r =
        joint_angle_series(kp_series(clip, kRShoulder), kp_series(clip, kRElbow), hip_r);
    out.arm_body_angle_mean = 0.5 * (mean_of(arm_l) + mean_of(arm_r));

    const std::int64_t T = pose::ClipWindow::kT;
    std::vector<double> wrist_l(static_cast<std::size_t>(T)), wrist_r(static_cast<std::size_t>(T)),
        sway(static_cast<std::size_t>(T)), trunk(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        wrist_l[ti] = clip.x(t, kLWrist) - hip_mid[ti][0];
        wrist_r[ti] = clip.x(t, kRWrist) - hip_mid[ti][0];
        sway[ti] = sh_mid[ti][0] - ankle_mid[ti][0];
        const double ux = sh_mid[ti][0] - hip_mid[ti][0];
        const double uy = sh_mid[ti][1] - hip_mid[ti][1];
        const double n = std::hypot(ux, uy);
        validate(n > 1e-12, "postural_features: zero-length trunk at frame " + std::to_string(t));
        trunk[ti] = std::acos(std::clamp(-uy / n, -1.0, 1.0)) * kDegPerRad;
    }
    out.arm_swing_amp_l = rom(wrist_l);
    out.arm_swing_amp_r = rom(wrist_r);
    out.trunk_incl_mean = mean_of(trunk);
    const double sway_mean = mean_of(sway);
    double var = 0.0;
    for (double v : sway) var += (v - sway_mean) * (v - sway_mean);
    out.lateral_sway = std::sqrt(var / static_cast<double>(sway.size()));
    return out;
}

GaitFeatureVector extract_all(const pose::ClipWindow& clip, double fps) {
    require(clip.torso_px > 0.0 &&
                clip.raw_hip_x.size() == static_cast<std::size_t>(pose::ClipWindow::kT),
            "extract_all: normalized clip required");
    GaitFeatureVector out;
    out.valid = (1u << kNumFeatures) - 1u;

    try {
        const PosturalFeatures p = postural_features(clip, fps);
        out.v[kHipRomL] = p.hip_rom_l;
        out.v[kHipRomR] = p.hip_rom_r;
        out.v[kHipRomSym] = symmetry_index(p.hip_rom_l, p.hip_rom_r);
        out.v[kKneeRomL] = p.knee_rom_l;
        out.v[kKneeRomR] = p.knee_rom_r;
        out.v[kKneeRomSym] = symmetry_index(p.knee_rom_l, p.knee_rom_r);
        out.v[kHipMeanL] = p.hip_mean_l;
        out.v[kHipMeanR] = p.hip_mean_r;
        out.v[kKneeMeanL] = p.knee_mean_l;
        out.v[kKneeMeanR] = p.knee_mean_r;
        out.v[kNeckAngleMean] = p.neck_angle_mean;
        out.v[kArmBodyAngleMean] = p.arm_body_angle_mean;
        out.v[kArmSwingAmpL] = p.arm_swing_amp_l;
        out.v[kArmSwingAmpR] = p.arm_swing_amp_r;
        out.v[kTrunkInclMean] = p.trunk_incl_mean;
        out.v[kLateralSway] = p.lateral_sway;
    } catch (const ValidationError&) {
        for (int i = kHipRomL; i <= kLateralSway; ++i) out.valid &= ~(1u << i);
    }

    const GaitEvents ev = detect_gait_events(clip, fps);
    const TemporalFeatures tf = temporal_features(clip, ev, fps);
    if (tf.valid) {
        out.v[kCadenceSpm] = tf.cadence_spm;
        out.v[kGaitCycleDurS] = tf.gait_cycle_dur_s;
        out.v[kStanceSwingRatio] = tf.stance_swing_ratio;
        out.v[kTimingSym] = symmetry_index(mean_of(ev.intervals_l), mean_of(ev.intervals_r));
    } else {
        out.valid &= ~((1u << kCadenceSpm) | (1u << kGaitCycleDurS) | (1u << kStanceSwingRatio) |
                       (1u << kTimingSym));
    }
    const SpatialFeatures sf = spatial_features(clip, ev);
    out.v[kWalkingSpeedNorm] = sf.walking_speed_norm;
    if (sf.events_valid) {
        out.v[kStepLenNorm] = sf.step_len_norm;
        out.v[kStrideLenNorm] = sf.stride_len_norm;
        out.v[kStepLenSym] = sf.step_len_sym;
    } else {
        out.valid &= ~((1u << kStepLenNorm) | (1u << kStrideLenNorm) | (1u << kStepLenSym));
    }
    return out;
}

FeatureSubset default_subset() {
    return {{"hip_rom_l", "hip_rom_r", "hip_rom_sym", "knee_rom_l", "knee_rom_r", "knee_rom_sym",
             "trunk_incl_mean", "step_len_norm", "stride_len_norm", "walking_speed_norm",
             "cadence_spm", "gait_cycle_dur_s", "step_len_sym", "timing_sym"}};
}

FeatureSubset full_subset() {
    FeatureSubset s;
    s.names.assign(feature_names().begin(), feature_names().end());
    return s;
}

std::vector<double> select_subset(const GaitFeatureVector& v, const FeatureSubset& subset) {
    std::vector<double> out;
    out.reserve(subset.names.size());
    const auto& names = feature_names();
    for (const auto& name : subset.names) {
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw ConfigError("unknown feature name: " + name);
        out.push_back(v.v[static_cast<std::size_t>(it - names.begin())]);
    }
    return out;
}

Standardizer fit_standardizer(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), "fit_standardizer: empty training set");
    const std::size_t d = rows[0].size();
    for (const auto& r : rows)
        require(r.size() == d, "fit_standardizer: inconsistent row lengths");
    Standardizer s;
    s.mean.assign(d, 0.0);
    s.stddev.assign(d, 0.0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
    for (std::size_t j = 0; j < d; ++j) s.mean[j] /= static_cast<double>(rows.size());
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) {
            const double dlt = r[j] - s.mean[j];
            s.stddev[j] += dlt * dlt;
        }
    for (std::size_t j = 0; j < d; ++j)
        s.stddev[j] = std::sqrt(s.stddev[j] / static_cast<double>(rows.size()));
    return s;
}

std::vector<double> apply_standardizer(const Standardizer& s, const std::vector<double>& row) {
    require(row.size() == s.mean.size(), "apply_standardizer: dimension mismatch");
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j)
        out[j] = (row[j] - s.mean[j]) / std::max(s.stddev[j], 1e-8);
    return out;
}

void save_feature_csv(const std::string& path, const std::vector<FeatureRow>& rows) {
    std::ofstream out(path);
    validate(out.good(), "cannot write feature file: " + path);
    for (int i = 0; i < kNumFeatures; ++i) out << feature_names()[static_cast<std::size_t>(i)] << ",";
    out << "patient_id,video_id,start_frame,label,validity\n";
    char buf[64];
    for (const auto& r : rows) {
        for (int i = 0; i < kNumFeatures; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", r.f.v[static_cast<std::size_t>(i)]);
            out << buf << ",";
        }
        out << r.patient_id << "," << r.video_id << "," << r.start_frame << "," << r.label << ","
            << r.f.valid << "\n";
    }
}

std::vector<FeatureRow> load_feature_csv(const std::string& path) {
    std::ifstream in(path);
    validate(in.good(), "cannot open feature file: " + path);
    std::string line;
    validate(static_cast<bool>(std::getline(in, line)), "empty feature file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string expected;
    for (int i = 0; i < kNumFeatures; ++i) expected += feature_names()[static_cast<std::size_t>(i)] + ",";
    expected += "patient_id,video_id,start_frame,label,validity";
    validate(line == expected, path + ": unexpected feature CSV header");

    std::vector<FeatureRow> rows;
    std::int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no) + ": ";
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        validate(cells.size() == kNumFeatures + 5,
                 where + "expected " + std::to_string(kNumFeatures + 5) + " columns, got " +
                     std::to_string(cells.size()));
        FeatureRow r;
        try {
            for (int i = 0; i < kNumFeatures; ++i)
                r.f.v[static_cast<std::size_t>(i)] = std::stod(cells[static_cast<std::size_t>(i)]);
            r.patient_id = cells[kNumFeatures];
            r.video_id = cells[kNumFeatures + 1];
            r.start_frame = std::stoll(cells[kNumFeatures + 2]);
            r.label = std::stoi(cells[kNumFeatures + 3]);
            r.f.valid = static_cast<std::uint32_t>(std::stoul(cells[kNumFeatures + 4]));
        } catch (const std::exception&) {
            throw ValidationError(where + "malformed numeric field");
        }
        validate(r.label >= 1 && r.label <= 4, where + "label outside 1..4");
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace cpgait::feat
