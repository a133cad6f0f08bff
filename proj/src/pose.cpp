#include "cpgait/pose.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cpgait::pose {

using json = nlohmann::json;

namespace {

const char* format_name(Format f) { return f == Format::BODY25 ? "BODY25" : "COCO17"; }

std::int64_t expected_v(Format f) { return f == Format::BODY25 ? 25 : 17; }

}  // namespace

std::vector<PoseSequence> load_pose_jsonl(const std::string& path) {
    std::ifstream in(path);
    validate(in.good(), "cannot open pose file: " + path);
    std::vector<PoseSequence> out;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path + ":" + std::to_string(line_no) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError(where + "malformed JSON: " + e.what());
        }
        try {
            PoseSequence s;
            s.patient_id = j.at("patient_id").get<std::string>();
            s.video_id = j.at("video_id").get<std::string>();
            s.label = j.at("gmfcs").get<int>();
            validate(s.label >= 1 && s.label <= 4, where + "gmfcs outside 1..4");
            s.fps = j.contains("fps") ? j.at("fps").get<double>() : 30.0;
            validate(s.fps > 0.0, where + "fps must be positive");
            const std::string fmt = j.at("format").get<std::string>();
            if (fmt == "BODY25")
                s.format = Format::BODY25;
            else if (fmt == "COCO17")
                s.format = Format::COCO17;
            else
                throw ValidationError(where + "unknown format: " + fmt);
            const json& frames = j.at("frames");
            validate(frames.is_array() && !frames.empty(), where + "frames must be non-empty");
            s.T = static_cast<std::int64_t>(frames.size());
            s.V = expected_v(s.format);
            s.frames.resize(static_cast<std::size_t>(s.T * s.V * 3));
            for (std::int64_t t = 0; t < s.T; ++t) {
                const json& fr = frames[static_cast<std::size_t>(t)];
                validate(fr.is_array() &&
                             static_cast<std::int64_t>(fr.size()) == s.V,
                         where + "frame " + std::to_string(t) + " has V=" +
                             std::to_string(fr.size()) + ", expected " + std::to_string(s.V));
                for (std::int64_t v = 0; v < s.V; ++v) {
                    const json& cell = fr[static_cast<std::size_t>(v)];
                    validate(cell.is_array() && cell.size() == 3,
                             where + "keypoint cell must be [x,y,c]");
                    const double c = cell[2].get<double>();
                    validate(c >= 0.0 && c <= 1.0,
                             where + "confidence outside [0,1]: " + std::to_string(c));
                    s.x(t, v) = cell[0].get<double>();
                    s.y(t, v) = cell[1].get<double>();
                    s.conf(t, v) = c;
                }
            }
            if (j.contains("truth")) {
                const json& tr = j.at("truth");
                SynthTruth truth;
                truth.cadence_spm = tr.at("cadence_spm").get<double>();
                truth.knee_rom_deg_l = tr.at("knee_rom_deg_l").get<double>();
                truth.knee_rom_deg_r = tr.at("knee_rom_deg_r").get<double>();
                truth.step_len_norm = tr.at("step_len_norm").get<double>();
                s.truth = truth;
            }
            out.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw ValidationError(where + "bad record: " + e.what());
        }
    }
    return out;
}

void save_pose_jsonl(const std::string& path, const std::vector<PoseSequence>& seqs) {
    std::ofstream out(path);
    validate(out.good(), "cannot write pose file: " + path);
    for (const auto& s : seqs) {
        json j;
        j["patient_id"] = s.patient_id;
        j["video_id"] = s.video_id;
        j["gmfcs"] = s.label;
        j["fps"] = s.fps;
        j["format"] = format_name(s.format);
        json frames = json::array();
        for (std::int64_t t = 0; t < s.T; ++t) {
            json fr = json::array();
            for (std::int64_t v = 0; v < s.V; ++v)
                fr.push_back(json::array({s.x(t, v), s.y(t, v), s.conf(t, v)}));
            frames.push_back(std::move(fr));
        }
        j["frames"] = std::move(frames);
        if (s.truth) {
            j["truth"] = {{"cadence_spm", s.truth->cadence_spm},
                          {"knee_rom_deg_l", s.truth->knee_rom_deg_l},
                          {"knee_rom_deg_r", s.truth->knee_rom_deg_r},
                          {"step_len_norm", s.truth->step_len_norm}};
        }
        out << j.dump() << "\n";
    }
}

PoseSequence body25_to_coco17(const PoseSequence& seq) {
    require(seq.format == Format::BODY25, "body25_to_coco17: input is not BODY25");
    // COCO index -> BODY25 index
    static constexpr std::array<int, 17> kMap = {0,  16, 15, 18, 17, 5, 2, 6, 3,
                                                 7,  4,  12, 9,  13, 10, 14, 11};
    PoseSequence out;
    out.patient_id = seq.patient_id;
    out.video_id = seq.video_id;
    out.label = seq.label;
    out.fps = seq.fps;
    out.format = Format::COCO17;
    out.T = seq.T;
    out.V = 17;
    out.truth = seq.truth;
    out.frames.resize(static_cast<std::size_t>(out.T * 17 * 3));
    for (std::int64_t t = 0; t < out.T; ++t)
        for (std::int64_t v = 0; v < 17; ++v) {
            const std::int64_t src = kMap[static_cast<std::size_t>(v)];
            out.x(t, v) = seq.x(t, src);
            out.y(t, v) = seq.y(t, src);
            out.conf(t, v) = seq.conf(t, src);
        }
    return out;
}

PoseSequence normalize_coords(const PoseSequence& seq) {
    require(seq.format == Format::COCO17, "normalize_coords: input is not COCO17");
    require(seq.torso_px == 0.0, "normalize_coords: sequence already normalized");
    const std::int64_t T = seq.T;
    std::vector<double> hx(static_cast<std::size_t>(T)), hy(static_cast<std::size_t>(T));
    std::vector<double> torso(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        const double hmx = 0.5 * (seq.x(t, kLHip) + seq.x(t, kRHip));
        const double hmy = 0.5 * (seq.y(t, kLHip) + seq.y(t, kRHip));
        const double smx = 0.5 * (seq.x(t, kLShoulder) + seq.x(t, kRShoulder));
        const double smy = 0.5 * (seq.y(t, kLShoulder) + seq.y(t, kRShoulder));
        hx[static_cast<std::size_t>(t)] = hmx;
        hy[static_cast<std::size_t>(t)] = hmy;
        torso[static_cast<std::size_t>(t)] = std::hypot(smx - hmx, smy - hmy);
    }
    std::vector<double> sorted = torso;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median =
        n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    validate(median >= 1e-6, "degenerate sequence: median torso length " +
                                 std::to_string(median) + " px");
    PoseSequence out = seq;
    out.raw_hip_x = hx;
    out.raw_ankle_lx.resize(static_cast<std::size_t>(T));
    out.raw_ankle_rx.resize(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        out.raw_ankle_lx[static_cast<std::size_t>(t)] = seq.x(t, kLAnkle);
        out.raw_ankle_rx[static_cast<std::size_t>(t)] = seq.x(t, kRAnkle);
        for (std::int64_t v = 0; v < seq.V; ++v) {
            out.x(t, v) = (seq.x(t, v) - hx[static_cast<std::size_t>(t)]) / median;
            out.y(t, v) = (seq.y(t, v) - hy[static_cast<std::size_t>(t)]) / median;
        }
    }
    out.torso_px = median;
    return out;
}

std::vector<ClipWindow> slide_windows(const PoseSequence& seq, int window, int stride) {
    require(window == static_cast<int>(ClipWindow::kT),
            "slide_windows: window must be " + std::to_string(ClipWindow::kT));
    require(stride >= 1, "slide_windows: stride must be >= 1");
    std::vector<ClipWindow> out;
    if (seq.T < window) return out;
    require(seq.V == ClipWindow::kV, "slide_windows: sequence is not COCO17");
    const std::int64_t count = (seq.T - window) / stride + 1;
    for (std::int64_t w = 0; w < count; ++w) {
        const std::int64_t start = w * stride;
        ClipWindow clip;
        clip.patient_id = seq.patient_id;
        clip.video_id = seq.video_id;
        clip.label = seq.label;
        clip.start_frame = start;
        clip.fps = seq.fps;
        clip.torso_px = seq.torso_px;
        clip.truth = seq.truth;
        clip.X.assign(seq.frames.begin() + (start * ClipWindow::kV * 3),
                      seq.frames.begin() + ((start + window) * ClipWindow::kV * 3));
        if (!seq.raw_hip_x.empty()) {
            auto slice = [start, window](const std::vector<double>& v) {
                return std::vector<double>(v.begin() + start, v.begin() + start + window);
            };
            clip.raw_hip_x = slice(seq.raw_hip_x);
            clip.raw_ankle_lx = slice(seq.raw_ankle_lx);
            clip.raw_ankle_rx = slice(seq.raw_ankle_rx);
        }
        out.push_back(std::move(clip));
    }
    return out;
}

bool quality_filter(const ClipWindow& clip, double min_conf, double min_frac) {
    std::int64_t good = 0;
    for (std::int64_t t = 0; t < ClipWindow::kT; ++t)
        for (std::int64_t v = 0; v < ClipWindow::kV; ++v)
            if (clip.conf(t, v) >= min_conf) ++good;
    const double total = static_cast<double>(ClipWindow::kT * ClipWindow::kV);
    // inclusive boundary: a fraction exactly equal to min_frac passes
    return static_cast<double>(good) + 1e-9 >= min_frac * total;
}

DatasetSplit patient_stratified_split(const std::vector<PoseSequence>& seqs, double f_train,
                                      double f_val, double f_test, std::uint64_t seed, int window,
                                      int stride, double min_conf, double min_frac) {
    require(f_train > 0.0 && f_val > 0.0 && f_test > 0.0,
            "patient_stratified_split: fractions must be positive");
    require(std::abs(f_train + f_val + f_test - 1.0) <= 1e-9,
            "patient_stratified_split: fractions must sum to 1");

    // majority label per patient (ties break toward the lower level)
    std::map<std::string, std::array<int, 5>> label_counts;
    for (const auto& s : seqs) label_counts[s.patient_id][static_cast<std::size_t>(s.label)]++;
    std::map<int, std::vector<std::string>> patients_by_label;
    for (const auto& [pid, counts] : label_counts) {
        int best = 1;
        for (int l = 2; l <= 4; ++l)
            if (counts[static_cast<std::size_t>(l)] > counts[static_cast<std::size_t>(best)])
                best = l;
        patients_by_label[best].push_back(pid);
    }

    DatasetSplit split;
    split.seed = seed;
    std::set<std::string> train_ids, val_ids, test_ids;
    for (auto& [label, pats] : patients_by_label) {
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(label)));
        rng.shuffle(pats);
        const std::int64_t n = static_cast<std::int64_t>(pats.size());
        if (n < 3) {
            split.warnings.push_back("class " + std::to_string(label) + " has only " +
                                     std::to_string(n) + " patient(s); assigned to train");
            for (const auto& p : pats) train_ids.insert(p);
            continue;
        }
        std::int64_t n_tr = std::llround(static_cast<double>(n) * f_train);
        n_tr = std::clamp<std::int64_t>(n_tr, 1, n);
        std::int64_t n_trval = std::llround(static_cast<double>(n) * (f_train + f_val));
        n_trval = std::clamp(n_trval, n_tr, n);
        for (std::int64_t i = 0; i < n; ++i) {
            const auto& p = pats[static_cast<std::size_t>(i)];
            if (i < n_tr)
                train_ids.insert(p);
            else if (i < n_trval)
                val_ids.insert(p);
            else
                test_ids.insert(p);
        }
    }

    for (const auto& s : seqs) {
        std::vector<ClipWindow>* dst = nullptr;
        if (train_ids.count(s.patient_id))
            dst = &split.train;
        else if (val_ids.count(s.patient_id))
            dst = &split.val;
        else
            dst = &split.test;
        for (auto& clip : slide_windows(s, window, stride))
            if (quality_filter(clip, min_conf, min_frac)) dst->push_back(std::move(clip));
    }
    return split;
}

ClipWindow augment_flip(const ClipWindow& clip) {
    ClipWindow out = clip;
    double sum = 0.0;
    std::int64_t cnt = 0;
    for (std::int64_t t = 0; t < ClipWindow::kT; ++t)
        for (std::int64_t v = 0; v < ClipWindow::kV; ++v)
            if (clip.conf(t, v) > 0.0) {
                sum += clip.x(t, v);
                ++cnt;
            }
    if (cnt == 0) {
        for (std::int64_t t = 0; t < ClipWindow::kT; ++t)
            for (std::int64_t v = 0; v < ClipWindow::kV; ++v) sum += clip.x(t, v);
        cnt = ClipWindow::kT * ClipWindow::kV;
    }
    const double xbar = sum / static_cast<double>(cnt);
    for (std::int64_t t = 0; t < ClipWindow::kT; ++t)
        for (std::int64_t v = 0; v < ClipWindow::kV; ++v) out.x(t, v) = 2.0 * xbar - clip.x(t, v);
    for (std::int64_t t = 0; t < ClipWindow::kT; ++t)
        for (auto [l, r] : flip_pairs())
            for (std::int64_t c = 0; c < 3; ++c)
                std::swap(out.X[static_cast<std::size_t>((t * ClipWindow::kV + l) * 3 + c)],
                          out.X[static_cast<std::size_t>((t * ClipWindow::kV + r) * 3 + c)]);
    if (!clip.raw_hip_x.empty()) {
        double hbar = 0.0;
        for (double v : clip.raw_hip_x) hbar += v;
        hbar /= static_cast<double>(clip.raw_hip_x.size());
        const std::size_t n = clip.raw_hip_x.size();
        for (std::size_t t = 0; t < n; ++t) {
            out.raw_hip_x[t] = 2.0 * hbar - clip.raw_hip_x[t];
            out.raw_ankle_lx[t] = 2.0 * hbar - clip.raw_ankle_rx[t];
            out.raw_ankle_rx[t] = 2.0 * hbar - clip.raw_ankle_lx[t];
        }
    }
    if (out.truth) {
        std::swap(out.truth->knee_rom_deg_l, out.truth->knee_rom_deg_r);
        std::swap(out.truth->hip_rom_deg_l, out.truth->hip_rom_deg_r);
    }
    return out;
}

ClipWindow augment_noise(const ClipWindow& clip, double sigma_px, std::uint64_t rng_seed) {
    require(sigma_px >= 0.0, "augment_noise: sigma must be >= 0");
    if (sigma_px == 0.0) return clip;
    ClipWindow out = clip;
    Rng rng(rng_seed);
    const bool normalized = clip.torso_px > 0.0;
    const double scale = normalized ? sigma_px / clip.torso_px : sigma_px;
    for (std::int64_t t = 0; t < ClipWindow::kT; ++t) {
        double hip_nx = 0.0;
        for (std::int64_t v = 0; v < ClipWindow::kV; ++v) {
            const double nx = rng.normal();
            const double ny = rng.normal();
            out.x(t, v) += nx * scale;
            out.y(t, v) += ny * scale;
            if (normalized && !out.raw_hip_x.empty()) {
                if (v == kLAnkle) out.raw_ankle_lx[static_cast<std::size_t>(t)] += nx * sigma_px;
                if (v == kRAnkle) out.raw_ankle_rx[static_cast<std::size_t>(t)] += nx * sigma_px;
                if (v == kLHip || v == kRHip) hip_nx += 0.5 * nx * sigma_px;
            }
        }
        if (normalized && !out.raw_hip_x.empty())
            out.raw_hip_x[static_cast<std::size_t>(t)] += hip_nx;
    }
    return out;
}

namespace {

// Linear interpolation across invalid runs; ends hold the nearest valid value.
void interp_series(std::vector<double>& vals, const std::vector<char>& valid) {
    const std::int64_t n = static_cast<std::int64_t>(vals.size());
    std::int64_t first = -1, last = -1;
    for (std::int64_t t = 0; t < n; ++t)
        if (valid[static_cast<std::size_t>(t)]) {
            if (first < 0) first = t;
            last = t;
        }
    if (first < 0) return;  // nothing valid; leave untouched
    for (std::int64_t t = 0; t < first; ++t) vals[static_cast<std::size_t>(t)] = vals[static_cast<std::size_t>(first)];
    for (std::int64_t t = last + 1; t < n; ++t) vals[static_cast<std::size_t>(t)] = vals[static_cast<std::size_t>(last)];
    std::int64_t prev = first;
    for (std::int64_t t = first + 1; t <= last; ++t) {
        if (!valid[static_cast<std::size_t>(t)]) continue;
        if (t > prev + 1) {
            const double a = vals[static_cast<std::size_t>(prev)];
            const double b = vals[static_cast<std::size_t>(t)];
            for (std::int64_t m = prev + 1; m < t; ++m) {
                const double w = static_cast<double>(m - prev) / static_cast<double>(t - prev);
                vals[static_cast<std::size_t>(m)] = a + (b - a) * w;
            }
        }
        prev = t;
    }
}

}  // namespace

ClipWindow interpolate_gaps(const ClipWindow& clip, double min_conf) {
    ClipWindow out = clip;
    const std::int64_t T = ClipWindow::kT;
    for (std::int64_t v = 0; v < ClipWindow::kV; ++v) {
        std::vector<char> valid(static_cast<std::size_t>(T));
        std::vector<double> xs(static_cast<std::size_t>(T)), ys(static_cast<std::size_t>(T));
        for (std::int64_t t = 0; t < T; ++t) {
            valid[static_cast<std::size_t>(t)] = clip.conf(t, v) >= min_conf;
            xs[static_cast<std::size_t>(t)] = clip.x(t, v);
            ys[static_cast<std::size_t>(t)] = clip.y(t, v);
        }
        interp_series(xs, valid);
        interp_series(ys, valid);
        for (std::int64_t t = 0; t < T; ++t) {
            out.x(t, v) = xs[static_cast<std::size_t>(t)];
            out.y(t, v) = ys[static_cast<std::size_t>(t)];
        }
        if (!out.raw_ankle_lx.empty() && (v == kLAnkle || v == kRAnkle)) {
            auto& raw = v == kLAnkle ? out.raw_ankle_lx : out.raw_ankle_rx;
            interp_series(raw, valid);
        }
    }
    if (!out.raw_hip_x.empty()) {
        std::vector<char> valid(static_cast<std::size_t>(T));
        for (std::int64_t t = 0; t < T; ++t)
            valid[static_cast<std::size_t>(t)] =
                clip.conf(t, kLHip) >= min_conf && clip.conf(t, kRHip) >= min_conf;
        interp_series(out.raw_hip_x, valid);
    }
    return out;
}

std::vector<PoseSequence> synth_generate(const SyntheticSpec& spec, std::uint64_t seed) {
    require(spec.clips_per_class > 0 && spec.clips_per_patient > 0 && spec.frames_per_clip > 0,
            "synth_generate: counts must be positive");
    require(spec.fps > 0.0 && spec.noise_sigma_px >= 0.0 && spec.param_jitter >= 0.0,
            "synth_generate: invalid physical parameters");
    for (int k = 0; k < 4; ++k)
        require(spec.stride_freq_hz[static_cast<std::size_t>(k)] > 0.0 &&
                    spec.knee_rom_deg[static_cast<std::size_t>(k)] > 0.0 &&
                    spec.hip_rom_deg[static_cast<std::size_t>(k)] > 0.0 &&
                    spec.asymmetry[static_cast<std::size_t>(k)] >= 0.0,
                "synth_generate: class parameters must be positive");

    // anatomy (pixels); long limbs keep pixel noise small in angle terms
    constexpr double kTorso = 150.0, kThigh = 130.0, kShank = 120.0;
    constexpr double kUpperArm = 60.0, kForearm = 55.0;
    const double rad = kPi / 180.0;

    std::vector<PoseSequence> out;
    for (int k = 0; k < 4; ++k) {
        for (int i = 0; i < spec.clips_per_class; ++i) {
            const std::uint64_t base =
                Rng::mix(seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i));
            Rng prng(base);
            Rng nrng(Rng::mix(base, 0x5eedULL));
            const double jit = spec.param_jitter;
            auto jittered = [&](double v) { return v * (1.0 + jit * prng.uniform(-1.0, 1.0)); };
            const double freq = jittered(spec.stride_freq_hz[static_cast<std::size_t>(k)]);
            const double a_knee = jittered(0.5 * spec.knee_rom_deg[static_cast<std::size_t>(k)]);
            const double a_hip = jittered(0.5 * spec.hip_rom_deg[static_cast<std::size_t>(k)]);
            const double asym = std::clamp(
                spec.asymmetry[static_cast<std::size_t>(k)] + 0.4 * jit * prng.uniform(-1.0, 1.0),
                0.0, 0.95);
            const double phase = prng.uniform(0.0, 2.0 * kPi);
            const double a_arm = jittered(15.0);
            // constant forward trunk lean, larger than the hip swing so the
            // unsigned hip angle never folds at 180 degrees
            const double tau = (a_hip + 6.0) * rad;
            const double knee_base = a_knee + 15.0;  // degrees of flexion
            const double speed_px = 1.6 * (kThigh + kShank) * std::sin(a_hip * rad) * freq;

            PoseSequence s;
            s.patient_id = "synth_c" + std::to_string(k + 1) + "_p" +
                           std::to_string(i / spec.clips_per_patient);
            s.video_id = "synth_c" + std::to_string(k + 1) + "_v" + std::to_string(i);
            s.label = k + 1;
            s.fps = spec.fps;
            s.format = Format::COCO17;
            s.T = spec.frames_per_clip;
            s.V = 17;
            s.frames.assign(static_cast<std::size_t>(s.T * 17 * 3), 0.0);

            const double omega = 2.0 * kPi * freq;
            // alpha = thigh angle from straight down, beta = knee flexion
            struct LegState {
                double al, ar, bl, br;
            };
            // flexion in phase with the swing keeps ankle x monotone in
            // sin(omega t): exactly one separation max/min per cycle
            auto legs = [&](double tt) {
                const double ph = omega * tt + phase;
                LegState g;
                g.al = a_hip * rad * std::sin(ph);
                g.ar = (1.0 - asym) * a_hip * rad * std::sin(ph + kPi);
                g.bl = (knee_base + a_knee * std::sin(ph)) * rad;
                g.br = (knee_base + (1.0 - asym) * a_knee * std::sin(ph + kPi)) * rad;
                return g;
            };
            auto ankle_sep = [&](double tt) {
                const LegState g = legs(tt);
                const double xl = kThigh * std::sin(g.al) + kShank * std::sin(g.al - g.bl);
                const double xr = kThigh * std::sin(g.ar) + kShank * std::sin(g.ar - g.br);
                return xl - xr;
            };
            for (std::int64_t t = 0; t < s.T; ++t) {
                const double tt = static_cast<double>(t) / spec.fps;
                const double ph = omega * tt + phase;
                const double px = 400.0 + speed_px * tt;
                const double py = 600.0 + 3.0 * std::sin(2.0 * ph + 0.4);

                const double sh_mid_x = px + kTorso * std::sin(tau);
                const double sh_mid_y = py - kTorso * std::cos(tau);

                auto put = [&](int v, double x, double y) {
                    s.x(t, v) = x;
                    s.y(t, v) = y;
                    s.conf(t, v) = 1.0;
                };

                const auto [al, ar, bl, br] = legs(tt);
                // sagittal projection: both hips project onto the pelvis center
                const double hip_lx = px, hip_rx = px;
                put(kLHip, hip_lx, py);
                put(kRHip, hip_rx, py);
                const double knee_lx = hip_lx + kThigh * std::sin(al);
                const double knee_ly = py + kThigh * std::cos(al);
                const double knee_rx = hip_rx + kThigh * std::sin(ar);
                const double knee_ry = py + kThigh * std::cos(ar);
                put(kLKnee, knee_lx, knee_ly);
                put(kRKnee, knee_rx, knee_ry);
                put(kLAnkle, knee_lx + kShank * std::sin(al - bl),
                    knee_ly + kShank * std::cos(al - bl));
                put(kRAnkle, knee_rx + kShank * std::sin(ar - br),
                    knee_ry + kShank * std::cos(ar - br));

                // trunk, head
                put(kLShoulder, sh_mid_x - 7.0, sh_mid_y + 2.0);
                put(kRShoulder, sh_mid_x + 7.0, sh_mid_y + 2.0);
                put(kLEar, sh_mid_x - 9.0, sh_mid_y - 38.0);
                put(kREar, sh_mid_x + 9.0, sh_mid_y - 38.0);
                put(kLEye, sh_mid_x - 5.0, sh_mid_y - 50.0);
                put(kREye, sh_mid_x + 5.0, sh_mid_y - 50.0);
                put(kNose, sh_mid_x + 12.0, sh_mid_y - 47.0);

                // arms swing in anti-phase with the ipsilateral leg
                const double swing_l = a_arm * rad * std::sin(ph + kPi);
                const double swing_r = a_arm * rad * std::sin(ph);
                const double elb_lx = (sh_mid_x - 7.0) + kUpperArm * std::sin(swing_l);
                const double elb_ly = (sh_mid_y + 2.0) + kUpperArm * std::cos(swing_l);
                const double elb_rx = (sh_mid_x + 7.0) + kUpperArm * std::sin(swing_r);
                const double elb_ry = (sh_mid_y + 2.0) + kUpperArm * std::cos(swing_r);
                put(kLElbow, elb_lx, elb_ly);
                put(kRElbow, elb_rx, elb_ry);
                put(kLWrist, elb_lx + kForearm * std::sin(swing_l - 0.4),
                    elb_ly + kForearm * std::cos(swing_l - 0.4));
                put(kRWrist, elb_rx + kForearm * std::sin(swing_r - 0.4),
                    elb_ry + kForearm * std::cos(swing_r - 0.4));
            }

            // ground truth from the noiseless kinematics; lengths use the same
            // torso scale the normalizer will measure (shoulder keypoints sit
            // 2 px below the rigid torso top)
            const double torso_eff =
                std::hypot(kTorso * std::sin(tau), kTorso * std::cos(tau) - 2.0);
            SynthTruth truth;
            truth.cadence_spm = 120.0 * freq;
            truth.knee_rom_deg_l = 2.0 * a_knee;
            truth.knee_rom_deg_r = 2.0 * (1.0 - asym) * a_knee;
            truth.hip_rom_deg_l = 2.0 * a_hip;
            truth.hip_rom_deg_r = 2.0 * (1.0 - asym) * a_hip;
            truth.walking_speed_norm = speed_px / torso_eff;
            truth.stride_len_norm = speed_px / freq / torso_eff;
            {
                // mean |inter-ankle distance| at its extrema, on a fine grid so
                // the value approximates the continuous-time peaks
                const int sub = 8;
                const std::int64_t n_fine = (s.T - 1) * sub + 1;
                std::vector<double> sep(static_cast<std::size_t>(n_fine));
                for (std::int64_t t = 0; t < n_fine; ++t)
                    sep[static_cast<std::size_t>(t)] =
                        ankle_sep(static_cast<double>(t) / (spec.fps * sub));
                double acc = 0.0;
                int n_ev = 0;
                for (std::int64_t t = 1; t + 1 < n_fine; ++t) {
                    const double a = sep[static_cast<std::size_t>(t - 1)];
                    const double b = sep[static_cast<std::size_t>(t)];
                    const double c = sep[static_cast<std::size_t>(t + 1)];
                    if ((b > a && b >= c) || (b < a && b <= c)) {
                        acc += std::abs(b);
                        ++n_ev;
                    }
                }
                truth.step_len_norm = n_ev ? acc / n_ev / torso_eff : 0.0;
            }
            s.truth = truth;

            if (spec.noise_sigma_px > 0.0)
                for (std::int64_t t = 0; t < s.T; ++t)
                    for (std::int64_t v = 0; v < 17; ++v) {
                        s.x(t, v) += spec.noise_sigma_px * nrng.normal();
                        s.y(t, v) += spec.noise_sigma_px * nrng.normal();
                    }

            out.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace cpgait::pose
