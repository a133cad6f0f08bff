// Single-file model container: versioned text manifest (JSON) followed by a
// raw little-endian float32 payload. Save -> load -> save is byte-identical.
#pragma once

#include <cstdint>
#include <string>

#include "cpgait/features.hpp"
#include "cpgait/model.hpp"
#include "cpgait/train.hpp"

namespace cpgait::ckpt {

inline constexpr int kFormatVersion = 1;

struct Checkpoint {
    int format_version = kFormatVersion;
    model::ModelConfig cfg;
    feat::FeatureSubset subset;
    feat::Standardizer standardizer;
    std::uint64_t seed = 0;
    model::ParamStore params;  // values plus trainable/buffer flags
    bool has_optimizer = false;
    train::AdamState opt;
};

Checkpoint from_model(const model::FusedModel& m, std::uint64_t seed);
Checkpoint from_training(const model::FusedModel& m, std::uint64_t seed,
                         const train::AdamState& opt);

// Rebuilds a runnable model (COCO graph included) from loaded state.
model::FusedModel to_model(const Checkpoint& c);

void save_checkpoint(const std::string& path, const Checkpoint& c);

// Validates magic, version, manifest coverage (non-overlapping, gap-free,
// inside the payload) and structural agreement between the manifest and the
// config; any mismatch or truncation -> CheckpointError.
Checkpoint load_checkpoint(const std::string& path);

// Enum spellings shared with config files and CLI flags.
std::string to_string(model::FusionMode m);
std::string to_string(model::Streams s);
model::FusionMode fusion_from_string(const std::string& s);
model::Streams streams_from_string(const std::string& s);

}  // namespace cpgait::ckpt
