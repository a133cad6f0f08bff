// cpgait: one binary, subcommands for conversion, windowing, feature
// extraction, synthesis, training, evaluation, attribution and reporting.
// Exit codes: 0 ok, 1 usage/config, 2 data validation, 3 checkpoint.
#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cpgait/attribution.hpp"
#include "cpgait/checkpoint.hpp"
#include "cpgait/config.hpp"
#include "cpgait/features.hpp"
#include "cpgait/metrics.hpp"
#include "cpgait/model.hpp"
#include "cpgait/pose.hpp"
#include "cpgait/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace cpgait;

namespace {

// CPGAIT_LOG=quiet|info|debug; the environment variable controls verbosity
// only, never behavior.
int log_level() {
    static const int lvl = [] {
        const char* e = std::getenv("CPGAIT_LOG");
        if (!e) return 1;
        const std::string s(e);
        if (s == "quiet") return 0;
        if (s == "debug") return 2;
        return 1;
    }();
    return lvl;
}

void info(const std::string& msg) {
    if (log_level() >= 1) std::printf("%s\n", msg.c_str());
}

void debug(const std::string& msg) {
    if (log_level() >= 2) std::printf("%s\n", msg.c_str());
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------- options --
struct Common {
    std::string config_path;
    std::string preset, fusion, features, streams;
    std::uint64_t seed = 0;
    double fps = 30.0;
    std::string out;
    CLI::Option *o_preset = nullptr, *o_fusion = nullptr, *o_features = nullptr,
                *o_streams = nullptr, *o_seed = nullptr, *o_fps = nullptr;
};

void attach_common(CLI::App* cmd, Common& c, const std::string& out_default,
                   const std::string& out_desc) {
    cmd->add_option("--config", c.config_path, "run config JSON file");
    c.o_seed = cmd->add_option("--seed", c.seed, "run seed");
    c.o_preset = cmd->add_option("--preset", c.preset, "model size preset")
                     ->check(CLI::IsMember({"desk", "paper"}));
    c.o_fusion = cmd->add_option("--fusion", c.fusion, "fusion mode")
                     ->check(CLI::IsMember({"concat", "xattn"}));
    c.o_features = cmd->add_option("--features", c.features, "clinical feature set")
                       ->check(CLI::IsMember({"selected14", "all24"}));
    c.o_streams = cmd->add_option("--streams", c.streams, "model streams")
                      ->check(CLI::IsMember({"both", "skeleton_only", "clinical_only"}));
    c.o_fps = cmd->add_option("--fps", c.fps, "frames per second default");
    c.out = out_default;
    cmd->add_option("--out", c.out, out_desc);
}

cfg::RunConfig resolve(const Common& c) {
    cfg::RunConfig rc =
        c.config_path.empty() ? cfg::RunConfig{} : cfg::load_run_config(c.config_path);
    if (c.o_seed->count()) rc.seed = c.seed;
    if (c.o_preset->count()) rc.preset = c.preset;
    if (c.o_fusion->count()) rc.fusion = c.fusion;
    if (c.o_features->count()) rc.features = c.features;
    if (c.o_streams->count()) rc.streams = c.streams;
    if (c.o_fps->count()) rc.fps = c.fps;
    cfg::check_run_config(rc);
    return rc;
}

// Every run writes its fully resolved config next to its outputs.
void emit_resolved_dir(const cfg::RunConfig& rc, const fs::path& dir) {
    fs::create_directories(dir);
    cfg::save_run_config((dir / "config.resolved.json").string(), rc);
}

void emit_resolved_sibling(const cfg::RunConfig& rc, const fs::path& outfile) {
    fs::path dir = outfile.parent_path();
    if (dir.empty()) dir = ".";
    cfg::save_run_config((dir / (outfile.stem().string() + ".config.json")).string(), rc);
}

// ------------------------------------------------------------ window jsonl --
// Window records extend the pose schema with start_frame plus the
// normalization sidecar (torso scale and raw pixel series) so a reloaded
// window extracts identical features.
void save_windows_jsonl(const std::string& path, const std::vector<pose::ClipWindow>& wins) {
    std::ofstream os(path, std::ios::binary);
    validate(os.good(), "cannot write " + path);
    for (const auto& w : wins) {
        ordered_json j;
        j["patient_id"] = w.patient_id;
        j["video_id"] = w.video_id;
        j["gmfcs"] = w.label;
        j["fps"] = w.fps;
        j["format"] = "COCO17";
        ordered_json frames = ordered_json::array();
        for (std::int64_t t = 0; t < pose::ClipWindow::kT; ++t) {
            ordered_json row = ordered_json::array();
            for (std::int64_t v = 0; v < pose::ClipWindow::kV; ++v)
                row.push_back({w.x(t, v), w.y(t, v), w.conf(t, v)});
            frames.push_back(std::move(row));
        }
        j["frames"] = std::move(frames);
        j["start_frame"] = w.start_frame;
        j["torso_px"] = w.torso_px;
        if (!w.raw_hip_x.empty()) {
            j["raw_hip_x"] = w.raw_hip_x;
            j["raw_ankle_lx"] = w.raw_ankle_lx;
            j["raw_ankle_rx"] = w.raw_ankle_rx;
        }
        if (w.truth) {
            j["truth"] = {{"cadence_spm", w.truth->cadence_spm},
                          {"knee_rom_deg_l", w.truth->knee_rom_deg_l},
                          {"knee_rom_deg_r", w.truth->knee_rom_deg_r},
                          {"step_len_norm", w.truth->step_len_norm}};
        }
        os << j.dump() << '\n';
    }
    validate(os.good(), "failed writing " + path);
}

std::vector<pose::ClipWindow> load_windows_jsonl(const std::string& path) {
    std::ifstream is(path);
    validate(is.good(), "cannot open " + path);
    std::vector<pose::ClipWindow> out;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(is, line)) {
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
            pose::ClipWindow w;
            w.patient_id = j.at("patient_id").get<std::string>();
            w.video_id = j.at("video_id").get<std::string>();
            w.label = j.at("gmfcs").get<int>();
            validate(w.label >= 1 && w.label <= 4, where + "gmfcs outside 1..4");
            w.fps = j.contains("fps") ? j.at("fps").get<double>() : 30.0;
            validate(w.fps > 0.0, where + "fps must be positive");
            w.start_frame = j.at("start_frame").get<std::int64_t>();
            validate(w.start_frame >= 0, where + "start_frame must be nonnegative");
            w.torso_px = j.contains("torso_px") ? j.at("torso_px").get<double>() : 0.0;
            const json& frames = j.at("frames");
            validate(frames.is_array() &&
                         static_cast<std::int64_t>(frames.size()) == pose::ClipWindow::kT,
                     where + "window must have exactly " +
                         std::to_string(pose::ClipWindow::kT) + " frames");
            w.X.resize(static_cast<std::size_t>(pose::ClipWindow::kT * pose::ClipWindow::kV * 3));
            for (std::int64_t t = 0; t < pose::ClipWindow::kT; ++t) {
                const json& fr = frames[static_cast<std::size_t>(t)];
                validate(fr.is_array() &&
                             static_cast<std::int64_t>(fr.size()) == pose::ClipWindow::kV,
                         where + "frame " + std::to_string(t) + " must have 17 keypoints");
                for (std::int64_t v = 0; v < pose::ClipWindow::kV; ++v) {
                    const json& cell = fr[static_cast<std::size_t>(v)];
                    validate(cell.is_array() && cell.size() == 3,
                             where + "keypoint cell must be [x,y,c]");
                    const double c = cell[2].get<double>();
                    validate(c >= 0.0 && c <= 1.0, where + "confidence outside [0,1]");
                    w.x(t, v) = cell[0].get<double>();
                    w.y(t, v) = cell[1].get<double>();
                    w.conf(t, v) = c;
                }
            }
            const auto raw = [&](const char* key) {
                std::vector<double> v;
                if (j.contains(key)) {
                    v = j.at(key).get<std::vector<double>>();
                    validate(static_cast<std::int64_t>(v.size()) == pose::ClipWindow::kT,
                             where + std::string(key) + " must have one entry per frame");
                }
                return v;
            };
            w.raw_hip_x = raw("raw_hip_x");
            w.raw_ankle_lx = raw("raw_ankle_lx");
            w.raw_ankle_rx = raw("raw_ankle_rx");
            if (j.contains("truth")) {
                const json& tr = j.at("truth");
                pose::SynthTruth truth;
                truth.cadence_spm = tr.at("cadence_spm").get<double>();
                truth.knee_rom_deg_l = tr.at("knee_rom_deg_l").get<double>();
                truth.knee_rom_deg_r = tr.at("knee_rom_deg_r").get<double>();
                truth.step_len_norm = tr.at("step_len_norm").get<double>();
                w.truth = truth;
            }
            out.push_back(std::move(w));
        } catch (const json::exception& e) {
            throw ValidationError(where + "bad record: " + e.what());
        }
    }
    return out;
}

bool file_has_windows(const std::string& path) {
    std::ifstream is(path);
    validate(is.good(), "cannot open " + path);
    std::string line;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            return json::parse(line).contains("start_frame");
        } catch (const json::exception& e) {
            throw ValidationError(path + ":1: malformed JSON: " + e.what());
        }
    }
    return false;
}

std::vector<pose::PoseSequence> load_normalized_sequences(const std::string& path,
                                                          bool require_coco) {
    std::vector<pose::PoseSequence> seqs = pose::load_pose_jsonl(path);
    std::vector<pose::PoseSequence> out;
    out.reserve(seqs.size());
    for (auto& s : seqs) {
        if (s.format == pose::Format::BODY25) {
            validate(!require_coco, path + ": BODY25 record found; run convert first");
            s = pose::body25_to_coco17(s);
        }
        out.push_back(pose::normalize_coords(s));
    }
    return out;
}

std::vector<pose::ClipWindow> windows_from_file(const std::string& path,
                                                const cfg::RunConfig& rc) {
    if (file_has_windows(path)) return load_windows_jsonl(path);
    std::vector<pose::ClipWindow> wins;
    for (const auto& s : load_normalized_sequences(path, false))
        for (auto& w : pose::slide_windows(s, rc.window, rc.stride))
            if (pose::quality_filter(w, rc.min_conf, rc.min_frac)) wins.push_back(std::move(w));
    return wins;
}

// ------------------------------------------------------------- eval output --
struct EvalOutput {
    std::string name;
    int K = 4;
    eval::EvalReport report;
    double patient_majority = 0.0;
    std::vector<int> truth;                  // 1-based
    std::vector<std::vector<double>> probs;  // N x K
};

void save_eval_json(const std::string& path, const EvalOutput& e) {
    ordered_json j;
    j["name"] = e.name;
    j["num_classes"] = e.K;
    j["confusion"] = e.report.confusion.counts;
    j["accuracy"] = e.report.accuracy;
    j["weighted_f1"] = e.report.weighted_f1;
    j["kappa_l"] = e.report.kappa_l;
    j["recall"] = e.report.recall.value;
    j["recall_present"] = e.report.recall.present;
    j["auc"] = e.report.auc.value;
    j["auc_present"] = e.report.auc.present;
    j["support"] = e.report.support;
    j["patient_majority_acc"] = e.patient_majority;
    j["truth"] = e.truth;
    j["probs"] = e.probs;
    std::ofstream os(path, std::ios::binary);
    validate(os.good(), "cannot write " + path);
    os << j.dump() << '\n';
    validate(os.good(), "failed writing " + path);
}

EvalOutput load_eval_json(const std::string& path) {
    std::ifstream is(path);
    validate(is.good(), "cannot open " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError(path + ": malformed JSON: " + e.what());
    }
    try {
        EvalOutput e;
        e.name = j.at("name").get<std::string>();
        e.K = j.at("num_classes").get<int>();
        e.report.confusion.K = e.K;
        e.report.confusion.counts = j.at("confusion").get<std::vector<std::int64_t>>();
        validate(static_cast<int>(e.report.confusion.counts.size()) == e.K * e.K,
                 path + ": confusion size disagrees with num_classes");
        e.report.accuracy = j.at("accuracy").get<double>();
        e.report.weighted_f1 = j.at("weighted_f1").get<double>();
        e.report.kappa_l = j.at("kappa_l").get<double>();
        e.report.recall.value = j.at("recall").get<std::vector<double>>();
        e.report.recall.present = j.at("recall_present").get<std::vector<bool>>();
        e.report.auc.value = j.at("auc").get<std::vector<double>>();
        e.report.auc.present = j.at("auc_present").get<std::vector<bool>>();
        e.report.support = j.at("support").get<std::vector<std::int64_t>>();
        e.patient_majority = j.at("patient_majority_acc").get<double>();
        e.truth = j.at("truth").get<std::vector<int>>();
        e.probs = j.at("probs").get<std::vector<std::vector<double>>>();
        validate(e.truth.size() == e.probs.size(), path + ": truth/probs lengths disagree");
        return e;
    } catch (const json::exception& ex) {
        throw ValidationError(path + ": bad record: " + ex.what());
    }
}

void write_roc_csvs(const fs::path& dir, const std::string& stem, const EvalOutput& e) {
    for (int k = 0; k < e.K; ++k) {
        std::vector<double> score;
        std::vector<char> is_pos;
        score.reserve(e.truth.size());
        for (std::size_t i = 0; i < e.truth.size(); ++i) {
            score.push_back(e.probs[i][static_cast<std::size_t>(k)]);
            is_pos.push_back(e.truth[i] == k + 1 ? 1 : 0);
        }
        const std::int64_t pos = std::count(is_pos.begin(), is_pos.end(), char(1));
        if (pos == 0 || pos == static_cast<std::int64_t>(is_pos.size())) continue;  // AUC absent
        eval::save_roc_csv((dir / (stem + "_roc_class" + std::to_string(k + 1) + ".csv")).string(),
                           eval::roc_points(score, is_pos));
    }
}

void print_report(const EvalOutput& e) {
    info("accuracy      " + fmt("%.4f", e.report.accuracy));
    info("weighted_f1   " + fmt("%.4f", e.report.weighted_f1));
    info("kappa_l       " + fmt("%.4f", e.report.kappa_l));
    for (int k = 0; k < e.K; ++k) {
        const auto idx = static_cast<std::size_t>(k);
        info("recall[" + std::to_string(k + 1) + "]     " +
             (e.report.recall.present[idx] ? fmt("%.4f", e.report.recall.value[idx])
                                           : std::string("absent")));
    }
    info("patient_vote  " + fmt("%.4f", e.patient_majority));
}

// -------------------------------------------------------------- subcommands --
int cmd_synth(const Common& c) {
    const cfg::RunConfig rc = resolve(c);
    const auto seqs = pose::synth_generate(cfg::to_synth_spec(rc), rc.seed);
    pose::save_pose_jsonl(c.out, seqs);
    emit_resolved_sibling(rc, c.out);
    info("wrote " + std::to_string(seqs.size()) + " sequences (" +
         std::to_string(rc.clips_per_class) + " per class) to " + c.out);
    return 0;
}

int cmd_convert(const Common& c, const std::string& in) {
    const cfg::RunConfig rc = resolve(c);
    std::vector<pose::PoseSequence> seqs = pose::load_pose_jsonl(in);
    std::size_t converted = 0;
    for (auto& s : seqs) {
        if (s.format == pose::Format::BODY25) {
            s = pose::body25_to_coco17(s);
            ++converted;
        }
        if (rc.normalize) s = pose::normalize_coords(s);
    }
    pose::save_pose_jsonl(c.out, seqs);
    emit_resolved_sibling(rc, c.out);
    info("read " + std::to_string(seqs.size()) + " records, converted " +
         std::to_string(converted) + " from BODY25, wrote " + std::to_string(seqs.size()) +
         (rc.normalize ? " normalized" : "") + " to " + c.out);
    return 0;
}

int cmd_window(const Common& c, const std::string& in) {
    const cfg::RunConfig rc = resolve(c);
    const auto seqs = load_normalized_sequences(in, false);
    std::vector<pose::ClipWindow> kept;
    std::size_t dropped = 0;
    for (const auto& s : seqs)
        for (auto& w : pose::slide_windows(s, rc.window, rc.stride)) {
            if (pose::quality_filter(w, rc.min_conf, rc.min_frac))
                kept.push_back(std::move(w));
            else
                ++dropped;
        }
    save_windows_jsonl(c.out, kept);
    emit_resolved_sibling(rc, c.out);
    info(std::to_string(seqs.size()) + " sequences -> " + std::to_string(kept.size()) +
         " windows (" + std::to_string(dropped) + " dropped by quality filter) to " + c.out);
    return 0;
}

int cmd_features(const Common& c, const std::string& in) {
    const cfg::RunConfig rc = resolve(c);
    const auto wins = windows_from_file(in, rc);
    std::vector<feat::FeatureRow> rows;
    rows.reserve(wins.size());
    for (const auto& w : wins)
        rows.push_back({feat::extract_all(w, w.fps), w.patient_id, w.video_id, w.start_frame,
                        w.label});
    feat::save_feature_csv(c.out, rows);
    emit_resolved_sibling(rc, c.out);
    info("extracted " + std::to_string(rows.size()) + " feature rows to " + c.out);
    return 0;
}

pose::DatasetSplit split_data(const std::string& path, const cfg::RunConfig& rc) {
    const auto seqs = load_normalized_sequences(path, false);
    pose::DatasetSplit split =
        pose::patient_stratified_split(seqs, rc.split_train, rc.split_val, rc.split_test,
                                       rc.seed, rc.window, rc.stride, rc.min_conf, rc.min_frac);
    for (const auto& w : split.warnings) debug("split: " + w);
    return split;
}

int cmd_train(const Common& c, const std::string& data) {
    const cfg::RunConfig rc = resolve(c);
    const pose::DatasetSplit split = split_data(data, rc);
    validate(!split.train.empty() && !split.val.empty(),
             data + ": split produced an empty train or val set; need more patients");
    info("train " + std::to_string(split.train.size()) + " / val " +
         std::to_string(split.val.size()) + " / test " + std::to_string(split.test.size()) +
         " clips");
    const train::TrainResult r = train::train_model(cfg::to_model_config(rc),
                                                    cfg::to_train_config(rc), split.train,
                                                    split.val, cfg::to_subset(rc));
    for (const auto& e : r.log.epochs)
        debug("epoch " + std::to_string(e.epoch) + " loss " + fmt("%.4f", e.loss) + " val " +
              fmt("%.4f", e.val_acc) + " lr " + fmt("%.3g", e.lr));
    fs::create_directories(c.out);
    const fs::path dir(c.out);
    ckpt::save_checkpoint((dir / "model.ckpt").string(), ckpt::from_model(r.best, rc.seed));
    train::save_runlog_csv((dir / "run_log.csv").string(), r.log);
    emit_resolved_dir(rc, dir);
    info("best epoch " + std::to_string(r.log.best_epoch) + " val acc " +
         fmt("%.4f", r.log.best_val_acc) + (r.log.early_stopped ? " (early stop)" : "") +
         "; checkpoint at " + (dir / "model.ckpt").string());
    return 0;
}

EvalOutput evaluate_clips(model::FusedModel& m, const std::vector<pose::ClipWindow>& clips,
                          const std::string& name) {
    EvalOutput out;
    out.name = name;
    out.K = m.cfg.num_classes;
    std::vector<int> truth0, pred0;  // metrics take 0-based labels
    for (const auto& w : clips) {
        const feat::GaitFeatureVector f = feat::extract_all(w, w.fps);
        const model::Prediction p = model::predict(m, w, f);
        out.truth.push_back(w.label);
        truth0.push_back(w.label - 1);
        pred0.push_back(p.label - 1);
        out.probs.push_back(p.probs);
    }
    out.report = eval::evaluate_predictions(truth0, pred0, out.probs, out.K);
    out.patient_majority = train::patient_majority_accuracy(m, clips);
    return out;
}

int cmd_eval(const Common& c, const std::string& ckpt_path, const std::string& data,
             const std::string& which) {
    const cfg::RunConfig rc = resolve(c);
    const ckpt::Checkpoint loaded = ckpt::load_checkpoint(ckpt_path);
    if (loaded.cfg.streams != model::Streams::skeleton_only &&
        loaded.subset.names != cfg::to_subset(rc).names)
        throw CheckpointError(ckpt_path + ": checkpoint feature set does not match --features " +
                              rc.features);
    model::FusedModel m = ckpt::to_model(loaded);

    const pose::DatasetSplit split = split_data(data, rc);
    std::vector<pose::ClipWindow> clips;
    if (which == "train") clips = split.train;
    else if (which == "val") clips = split.val;
    else if (which == "test") clips = split.test;
    else {
        clips = split.train;
        clips.insert(clips.end(), split.val.begin(), split.val.end());
        clips.insert(clips.end(), split.test.begin(), split.test.end());
    }
    validate(!clips.empty(), data + ": selected split '" + which + "' holds no clips");

    const std::string name = fs::path(data).stem().string() + "_" + which;
    const EvalOutput e = evaluate_clips(m, clips, name);
    print_report(e);

    fs::create_directories(c.out);
    const fs::path dir(c.out);
    save_eval_json((dir / "eval.json").string(), e);
    eval::save_report_txt((dir / "report.txt").string(), name, e.report);
    eval::save_confusion_csv((dir / "confusion.csv").string(), e.report.confusion, false);
    write_roc_csvs(dir, "eval", e);
    emit_resolved_dir(rc, dir);
    return 0;
}

int cmd_attribute(const Common& c, const std::string& ckpt_path, const std::string& data,
                  int index, bool mean_mode, int target, const std::string& agg_name,
                  const std::string& method) {
    const cfg::RunConfig rc = resolve(c);
    model::FusedModel m = ckpt::to_model(ckpt::load_checkpoint(ckpt_path));
    const auto wins = windows_from_file(data, rc);
    validate(!wins.empty(), data + ": no windows to attribute");
    const attrib::TemporalAgg agg =
        agg_name == "max" ? attrib::TemporalAgg::max : attrib::TemporalAgg::mean;

    const auto one_map = [&](const pose::ClipWindow& w) {
        if (method == "occlusion") {
            attrib::AttributionMap map;
            map.score = attrib::occlusion_importance(m, w, target);
            map.regions = attrib::aggregate_regions(map.score, attrib::default_regions());
            const model::Prediction p = model::predict(m, w, feat::extract_all(w, w.fps));
            map.predicted_class = p.label;
            map.target_class = target == 0 ? p.label : target;
            map.patient_id = w.patient_id;
            map.video_id = w.video_id;
            map.start_frame = w.start_frame;
            return map;
        }
        return attrib::grad_cam_keypoints(m, w, target, agg);
    };

    attrib::AttributionMap map;
    if (mean_mode) {
        std::vector<std::array<double, kNumKeypoints>> maps;
        std::map<int, int> votes;
        for (const auto& w : wins) {
            const attrib::AttributionMap mw = one_map(w);
            maps.push_back(mw.score);
            ++votes[mw.predicted_class];
        }
        map.score = attrib::mean_scores(maps);
        map.regions = attrib::aggregate_regions(map.score, attrib::default_regions());
        int best = 0, best_n = -1;
        for (const auto& [cls, n] : votes)
            if (n > best_n) { best = cls; best_n = n; }
        map.predicted_class = best;
        map.target_class = target == 0 ? best : target;
        map.patient_id = "set";
        map.video_id = fs::path(data).stem().string();
        map.start_frame = 0;
    } else {
        validate(index >= 0 && index < static_cast<int>(wins.size()),
                 data + ": window index " + std::to_string(index) + " out of range (have " +
                     std::to_string(wins.size()) + ")");
        map = one_map(wins[static_cast<std::size_t>(index)]);
    }

    fs::create_directories(c.out);
    const fs::path dir(c.out);
    attrib::save_attribution_csv((dir / "attribution.csv").string(), map);
    emit_resolved_dir(rc, dir);
    info("attribution (" + method + (mean_mode ? ", mean over " + std::to_string(wins.size()) +
                                                     " windows"
                                               : ", window " + std::to_string(index)) +
         ") -> " + (dir / "attribution.csv").string());
    return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs) {
    const cfg::RunConfig rc = resolve(c);
    fs::create_directories(c.out);
    const fs::path dir(c.out);
    std::ofstream summary(dir / "summary.txt");
    validate(summary.good(), "cannot write " + (dir / "summary.txt").string());
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-28s %8s %8s %8s %8s\n", "run", "N", "Acc", "F1_w",
                  "kappa_l");
    summary << buf;
    for (const std::string& inp : inputs) {
        fs::path p(inp);
        if (fs::is_directory(p)) p /= "eval.json";
        validate(fs::exists(p), p.string() + ": no such eval output");
        const EvalOutput e = load_eval_json(p.string());
        std::snprintf(buf, sizeof buf, "%-28s %8lld %8.4f %8.4f %8.4f\n", e.name.c_str(),
                      static_cast<long long>(e.truth.size()), e.report.accuracy,
                      e.report.weighted_f1, e.report.kappa_l);
        summary << buf;
        eval::save_confusion_csv((dir / (e.name + "_confusion_pct.csv")).string(),
                                 e.report.confusion, true);
        write_roc_csvs(dir, e.name, e);
    }
    validate(summary.good(), "failed writing summary.txt");
    emit_resolved_dir(rc, dir);
    info("report for " + std::to_string(inputs.size()) + " run(s) -> " +
         (dir / "summary.txt").string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CP gait severity pipeline"};
    app.require_subcommand(1);

    Common synth_c, conv_c, win_c, feat_c, train_c, eval_c, attr_c, rep_c;
    std::string conv_in, win_in, feat_in, train_data, eval_ckpt, eval_data, attr_ckpt, attr_data;
    std::string eval_split = "test", attr_agg = "mean", attr_method = "gradcam";
    int attr_index = 0, attr_target = 0;
    bool attr_mean = false;
    std::vector<std::string> rep_inputs;

    CLI::App* synth = app.add_subcommand("synth", "generate synthetic pose sequences");
    attach_common(synth, synth_c, "synth.jsonl", "output JSONL file");
    CLI::App* conv = app.add_subcommand("convert", "convert BODY25 records to COCO17");
    conv->add_option("--in", conv_in, "input pose JSONL")->required();
    attach_common(conv, conv_c, "converted.jsonl", "output JSONL file");
    CLI::App* win = app.add_subcommand("window", "slice sequences into clip windows");
    win->add_option("--in", win_in, "input pose JSONL")->required();
    attach_common(win, win_c, "windows.jsonl", "output JSONL file");
    CLI::App* feats = app.add_subcommand("features", "extract clinical gait features");
    feats->add_option("--in", feat_in, "pose or window JSONL")->required();
    attach_common(feats, feat_c, "features.csv", "output CSV file");
    CLI::App* tr = app.add_subcommand("train", "train the fused classifier");
    tr->add_option("--data", train_data, "pose JSONL with labels")->required();
    attach_common(tr, train_c, "run_out", "output directory");
    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
    ev->add_option("--data", eval_data, "pose JSONL with labels")->required();
    ev->add_option("--split", eval_split, "which split to score")
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
    attach_common(ev, eval_c, "eval_out", "output directory");
    CLI::App* at = app.add_subcommand("attribute", "keypoint attribution for a clip");
    at->add_option("--ckpt", attr_ckpt, "model checkpoint")->required();
    at->add_option("--data", attr_data, "pose or window JSONL")->required();
    at->add_option("--index", attr_index, "window index to attribute");
    at->add_flag("--mean", attr_mean, "average attribution over every window");
    at->add_option("--target", attr_target, "1-based target class, 0 = predicted");
    at->add_option("--agg", attr_agg, "temporal aggregation")
        ->check(CLI::IsMember({"mean", "max"}));
    at->add_option("--method", attr_method, "attribution method")
        ->check(CLI::IsMember({"gradcam", "occlusion"}));
    attach_common(at, attr_c, "attrib_out", "output directory");
    CLI::App* rep = app.add_subcommand("report", "presentation files for eval outputs");
    rep->add_option("inputs", rep_inputs, "eval.json files or eval output dirs")->required();
    attach_common(rep, rep_c, "report_out", "output directory");

    synth->callback([&] { cmd_synth(synth_c); });
    conv->callback([&] { cmd_convert(conv_c, conv_in); });
    win->callback([&] { cmd_window(win_c, win_in); });
    feats->callback([&] { cmd_features(feat_c, feat_in); });
    tr->callback([&] { cmd_train(train_c, train_data); });
    ev->callback([&] { cmd_eval(eval_c, eval_ckpt, eval_data, eval_split); });
    at->callback([&] {
        cmd_attribute(attr_c, attr_ckpt, attr_data, attr_index, attr_mean, attr_target,
                      attr_agg, attr_method);
    });
    rep->callback([&] { cmd_report(rep_c, rep_inputs); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors collapse to 1, --help stays 0
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return 3;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
