#pragma once

#include <filesystem>
#include <string>

#include "benet/losses.hpp"
#include "benet/model.hpp"
#include "benet/synth.hpp"
#include "benet/training.hpp"

namespace benet {

// One flat configuration for every CLI command: `key = value` lines,
// `#` comments, dotted keys for nesting. Unknown keys are rejected.
// `image_size` and `seed` are shared top-level keys: image_size feeds both
// the model and the data generator, seed is the root of all run randomness.
struct RunConfig {
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
    synth::SyntheticSpec data;

    void validate() const;
};

RunConfig default_config();

// Parses a config file into defaults; throws ConfigError naming any bad key.
RunConfig parse_config_file(const std::filesystem::path& path);

// Applies a single "key=value" override.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Canonical sorted key=value rendering of the fully resolved config.
std::string resolved_text(const RunConfig& cfg);

}  // namespace benet
