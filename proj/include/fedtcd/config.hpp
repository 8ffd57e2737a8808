#pragma once

// One JSON document drives every command; see docs/formats.md for the schema.

#include <cstdint>
#include <filesystem>
#include <string>

#include "fedtcd/dism.hpp"
#include "fedtcd/fed.hpp"
#include "fedtcd/synth.hpp"

namespace fedtcd {

struct ExperimentConfig {
    ScenarioSpec scenario;
    DismConfig dism;
    DctoConfig dcto;
    double shd_threshold = 0.1;
    std::uint64_t seed = 1;  // copied into scenario, dism and dcto seeds
    std::string output_dir;  // empty: $FEDTCD_OUT or ./fedtcd_out

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&);
};

// Throws ConfigError with the offending field.
void validate(const ExperimentConfig& config);

// Parses and validates.  Unknown keys are rejected; absent keys keep defaults.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

// "dcto.R=5" style override; the value is parsed as JSON, falling back to a
// plain string.
void apply_override(ExperimentConfig& config, const std::string& assignment);

// Propagates `seed` into the module configs.
void sync_seeds(ExperimentConfig& config);

}  // namespace fedtcd
