#include "cpgait/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <vector>

#include "cpgait/graph.hpp"

namespace cpgait::ckpt {

using nlohmann::ordered_json;
using model::ModelConfig;

namespace {

constexpr const char* kMagic = "CPGAITCKPT";

void fail(const std::string& msg) { throw CheckpointError("checkpoint: " + msg); }

void check_keys(const ordered_json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    if (!j.is_object()) fail(where + " is not an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) fail("unknown key '" + key + "' in " + where);
}

void put_f32le(std::string& out, float f) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(f);
    out.push_back(static_cast<char>(u & 0xff));
    out.push_back(static_cast<char>((u >> 8) & 0xff));
    out.push_back(static_cast<char>((u >> 16) & 0xff));
    out.push_back(static_cast<char>((u >> 24) & 0xff));
}

float get_f32le(const unsigned char* p) {
    const std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                            (static_cast<std::uint32_t>(p[1]) << 8) |
                            (static_cast<std::uint32_t>(p[2]) << 16) |
                            (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(u);
}

ordered_json tensor_manifest(const std::string& name, const ad::Tensor<float>& t,
                             std::int64_t offset) {
    ordered_json e;
    e["name"] = name;
    e["shape"] = t.shape;
    e["dtype"] = "f32";
    e["offset"] = offset;
    e["length"] = t.size() * 4;
    return e;
}

ordered_json config_json(const ModelConfig& cfg) {
    ordered_json blocks = ordered_json::array();
    for (const auto& b : cfg.backbone.blocks)
        blocks.push_back(ordered_json::array({b.in_ch, b.out_ch, b.stride}));
    ordered_json bb;
    bb["blocks"] = blocks;
    bb["in_channels"] = cfg.backbone.in_channels;
    bb["temporal_kernel"] = cfg.backbone.temporal_kernel;
    bb["dropout"] = cfg.backbone.dropout;
    ordered_json j;
    j["backbone"] = bb;
    j["clinical_dim"] = cfg.clinical_dim;
    j["clinical_hidden"] = cfg.clinical_hidden;
    j["clinical_dropout"] = cfg.clinical_dropout;
    j["head_dropout"] = cfg.head_dropout;
    j["head_relu"] = cfg.head_relu;
    j["fusion"] = to_string(cfg.fusion);
    j["streams"] = to_string(cfg.streams);
    j["num_classes"] = cfg.num_classes;
    return j;
}

ModelConfig config_from_json(const ordered_json& j) {
    check_keys(j, {"backbone", "clinical_dim", "clinical_hidden", "clinical_dropout",
                   "head_dropout", "head_relu", "fusion", "streams", "num_classes"},
               "config");
    const ordered_json& bb = j.at("backbone");
    check_keys(bb, {"blocks", "in_channels", "temporal_kernel", "dropout"}, "config.backbone");
    ModelConfig cfg;
    cfg.backbone.blocks.clear();
    for (const auto& b : bb.at("blocks")) {
        if (!b.is_array() || b.size() != 3) fail("backbone block is not an [in,out,stride] triple");
        cfg.backbone.blocks.push_back({b[0].get<int>(), b[1].get<int>(), b[2].get<int>()});
    }
    cfg.backbone.in_channels = bb.at("in_channels").get<int>();
    cfg.backbone.temporal_kernel = bb.at("temporal_kernel").get<int>();
    cfg.backbone.dropout = bb.at("dropout").get<double>();
    cfg.clinical_dim = j.at("clinical_dim").get<int>();
    cfg.clinical_hidden = j.at("clinical_hidden").get<int>();
    cfg.clinical_dropout = j.at("clinical_dropout").get<double>();
    cfg.head_dropout = j.at("head_dropout").get<double>();
    cfg.head_relu = j.at("head_relu").get<bool>();
    cfg.fusion = fusion_from_string(j.at("fusion").get<std::string>());
    cfg.streams = streams_from_string(j.at("streams").get<std::string>());
    cfg.num_classes = j.at("num_classes").get<int>();
    return cfg;
}

struct Segment {
    std::string name;
    std::vector<std::int64_t> shape;
    std::int64_t offset = 0;
    std::int64_t length = 0;
};

Segment read_manifest_entry(const ordered_json& e, bool with_flags, bool* trainable,
                            bool* buffer) {
    std::set<std::string> allowed{"name", "shape", "dtype", "offset", "length"};
    if (with_flags) {
        allowed.insert("trainable");
        allowed.insert("buffer");
    }
    check_keys(e, allowed, "manifest entry");
    if (e.at("dtype").get<std::string>() != "f32") fail("unsupported dtype");
    Segment s;
    s.name = e.at("name").get<std::string>();
    s.shape = e.at("shape").get<std::vector<std::int64_t>>();
    s.offset = e.at("offset").get<std::int64_t>();
    s.length = e.at("length").get<std::int64_t>();
    if (s.length != ad::Tensor<float>::count(s.shape) * 4)
        fail("manifest length disagrees with shape for " + s.name);
    if (with_flags) {
        *trainable = e.at("trainable").get<bool>();
        *buffer = e.at("buffer").get<bool>();
    }
    return s;
}

ad::Tensor<float> take_segment(const std::string& payload, const Segment& s) {
    if (s.offset < 0 || s.offset + s.length > static_cast<std::int64_t>(payload.size()))
        fail("segment for " + s.name + " falls outside the payload");
    ad::Tensor<float> t(s.shape);
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(payload.data()) + s.offset;
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = get_f32le(p + i * 4);
    return t;
}

}  // namespace

std::string to_string(model::FusionMode m) {
    return m == model::FusionMode::concat ? "concat" : "xattn";
}

std::string to_string(model::Streams s) {
    switch (s) {
        case model::Streams::both: return "both";
        case model::Streams::skeleton_only: return "skeleton_only";
        default: return "clinical_only";
    }
}

model::FusionMode fusion_from_string(const std::string& s) {
    if (s == "concat") return model::FusionMode::concat;
    if (s == "xattn") return model::FusionMode::cross_attention;
    throw ConfigError("unknown fusion mode '" + s + "' (expected concat|xattn)");
}

model::Streams streams_from_string(const std::string& s) {
    if (s == "both") return model::Streams::both;
    if (s == "skeleton_only") return model::Streams::skeleton_only;
    if (s == "clinical_only") return model::Streams::clinical_only;
    throw ConfigError("unknown streams '" + s +
                      "' (expected both|skeleton_only|clinical_only)");
}

Checkpoint from_model(const model::FusedModel& m, std::uint64_t seed) {
    Checkpoint c;
    c.cfg = m.cfg;
    c.subset = m.subset;
    c.standardizer = m.standardizer;
    c.seed = seed;
    c.params = m.params;
    return c;
}

Checkpoint from_training(const model::FusedModel& m, std::uint64_t seed,
                         const train::AdamState& opt) {
    Checkpoint c = from_model(m, seed);
    c.has_optimizer = true;
    c.opt = opt;
    return c;
}

model::FusedModel to_model(const Checkpoint& c) {
    return model::FusedModel{c.cfg, c.params, build_coco_graph(), c.subset, c.standardizer};
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    for (double v : c.standardizer.mean)
        if (!std::isfinite(v)) fail("non-finite standardizer mean");
    for (double v : c.standardizer.stddev)
        if (!std::isfinite(v)) fail("non-finite standardizer stddev");

    std::string payload;
    ordered_json manifest = ordered_json::array();
    for (const auto& e : c.params.entries()) {
        ordered_json m = tensor_manifest(e.name, e.value,
                                         static_cast<std::int64_t>(payload.size()));
        m["trainable"] = e.trainable;
        m["buffer"] = e.buffer;
        manifest.push_back(std::move(m));
        for (float f : e.value.data) put_f32le(payload, f);
    }

    ordered_json j;
    j["format_version"] = c.format_version;
    j["config"] = config_json(c.cfg);
    j["params"] = std::move(manifest);
    j["standardizer"] =
        ordered_json{{"mean", c.standardizer.mean}, {"stddev", c.standardizer.stddev}};
    j["subset"] = c.subset.names;
    j["seed"] = c.seed;
    if (c.has_optimizer) {
        ordered_json opt;
        opt["step"] = c.opt.step;
        opt["beta1"] = c.opt.beta1;
        opt["beta2"] = c.opt.beta2;
        opt["eps"] = c.opt.eps;
        ordered_json ms = ordered_json::array(), vs = ordered_json::array();
        for (const auto& [name, t] : c.opt.m) {
            ms.push_back(tensor_manifest(name, t, static_cast<std::int64_t>(payload.size())));
            for (float f : t.data) put_f32le(payload, f);
        }
        for (const auto& [name, t] : c.opt.v) {
            vs.push_back(tensor_manifest(name, t, static_cast<std::int64_t>(payload.size())));
            for (float f : t.data) put_f32le(payload, f);
        }
        opt["m"] = std::move(ms);
        opt["v"] = std::move(vs);
        j["optimizer"] = std::move(opt);
    }

    std::ofstream os(path, std::ios::binary);
    if (!os) fail("cannot open " + path + " for writing");
    os << kMagic << ' ' << c.format_version << '\n';
    os << j.dump() << '\n';
    os << "PAYLOAD " << payload.size() << '\n';
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!os) fail("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string file = ss.str();

    std::size_t pos = file.find('\n');
    if (pos == std::string::npos) fail("missing header line");
    const std::string head = file.substr(0, pos);
    Checkpoint c;
    {
        std::istringstream hs(head);
        std::string magic;
        hs >> magic >> c.format_version;
        if (magic != kMagic || hs.fail()) fail("bad magic line");
        if (c.format_version != kFormatVersion)
            fail("unsupported format version " + std::to_string(c.format_version));
    }
    const std::size_t json_start = pos + 1;
    pos = file.find('\n', json_start);
    if (pos == std::string::npos) fail("missing manifest line");
    ordered_json j;
    try {
        j = ordered_json::parse(file.substr(json_start, pos - json_start));
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("manifest parse failure: ") + e.what());
    }
    const std::size_t pl_start = pos + 1;
    pos = file.find('\n', pl_start);
    if (pos == std::string::npos) fail("missing payload line");
    std::int64_t payload_bytes = -1;
    {
        std::istringstream ps(file.substr(pl_start, pos - pl_start));
        std::string word;
        ps >> word >> payload_bytes;
        if (word != "PAYLOAD" || ps.fail() || payload_bytes < 0) fail("bad payload line");
    }
    const std::string payload = file.substr(pos + 1);
    if (static_cast<std::int64_t>(payload.size()) != payload_bytes)
        fail("payload truncated or padded: expected " + std::to_string(payload_bytes) +
             " bytes, found " + std::to_string(payload.size()));

    check_keys(j, {"format_version", "config", "params", "standardizer", "subset", "seed",
                   "optimizer"},
               "header");
    if (j.at("format_version").get<int>() != c.format_version)
        fail("version disagrees between magic line and header");
    c.cfg = config_from_json(j.at("config"));
    check_keys(j.at("standardizer"), {"mean", "stddev"}, "standardizer");
    c.standardizer.mean = j.at("standardizer").at("mean").get<std::vector<double>>();
    c.standardizer.stddev = j.at("standardizer").at("stddev").get<std::vector<double>>();
    if (c.standardizer.mean.size() != c.standardizer.stddev.size())
        fail("standardizer mean/stddev lengths disagree");
    c.subset.names = j.at("subset").get<std::vector<std::string>>();
    c.seed = j.at("seed").get<std::uint64_t>();

    // Structural reference: the config must generate exactly the manifest's
    // entry list (names, shapes, buffer flags, order).
    model::ParamStore ref;
    try {
        model::init_model_params(ref, c.cfg, 0);
    } catch (const std::exception& e) {
        fail(std::string("config rejected: ") + e.what());
    }
    const auto& entries = j.at("params");
    if (!entries.is_array() || entries.size() != ref.size())
        fail("parameter manifest does not match the config (count)");

    std::int64_t cursor = 0;
    std::size_t idx = 0;
    for (const auto& e : entries) {
        bool trainable = true, buffer = false;
        const Segment s = read_manifest_entry(e, true, &trainable, &buffer);
        const model::ParamEntry& r = ref.entries()[idx++];
        if (s.name != r.name || s.shape != r.value.shape || buffer != r.buffer)
            fail("manifest entry '" + s.name + "' does not match the config");
        if (s.offset != cursor) fail("manifest offsets overlap or leave gaps at " + s.name);
        cursor += s.length;
        c.params.add(s.name, take_segment(payload, s), trainable, buffer);
    }

    if (j.contains("optimizer")) {
        const ordered_json& opt = j.at("optimizer");
        check_keys(opt, {"step", "beta1", "beta2", "eps", "m", "v"}, "optimizer");
        c.has_optimizer = true;
        c.opt.step = opt.at("step").get<std::int64_t>();
        c.opt.beta1 = opt.at("beta1").get<double>();
        c.opt.beta2 = opt.at("beta2").get<double>();
        c.opt.eps = opt.at("eps").get<double>();
        const auto read_moments = [&](const ordered_json& arr,
                                      std::map<std::string, ad::Tensor<float>>& out) {
            for (const auto& e : arr) {
                const Segment s = read_manifest_entry(e, false, nullptr, nullptr);
                if (!c.params.has(s.name)) fail("optimizer moment for unknown parameter " + s.name);
                if (s.shape != c.params.at(s.name).shape)
                    fail("optimizer moment shape disagrees for " + s.name);
                if (s.offset != cursor) fail("manifest offsets overlap or leave gaps at " + s.name);
                cursor += s.length;
                out.emplace(s.name, take_segment(payload, s));
            }
        };
        read_moments(opt.at("m"), c.opt.m);
        read_moments(opt.at("v"), c.opt.v);
        if (c.opt.m.size() != c.opt.v.size()) fail("optimizer m/v entry counts disagree");
    }
    if (cursor != payload_bytes) fail("manifest does not cover the payload exactly");

    if (c.cfg.streams != model::Streams::skeleton_only &&
        static_cast<int>(c.subset.names.size()) != c.cfg.clinical_dim)
        fail("feature subset size disagrees with clinical_dim");
    if (!c.standardizer.mean.empty() && c.standardizer.mean.size() != c.subset.names.size())
        fail("standardizer length disagrees with the feature subset");
    return c;
}

}  // namespace cpgait::ckpt
