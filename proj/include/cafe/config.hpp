#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cafe/nn.hpp"
#include "cafe/protocol.hpp"
#include "cafe/synth.hpp"

// Experiment configuration: a JSON file with a fixed key set. Unknown keys
// are rejected; validation collects every violation before failing.

namespace cafe::run {

struct ExperimentConfig {
    fl::MethodConfig method;
    nn::MlpSpec model;

    std::uint64_t data_seed = 1234;
    std::optional<data::SyntheticSpec> synthetic;
    std::optional<std::string> dataset_path;

    data::PartitionSpec partition;

    std::vector<std::uint64_t> seeds;
    std::vector<double> participation;  // empty = all clients every round
    std::string output_dir;
    std::optional<std::string> fate_baseline;  // run dir to compare against

    // Performance input for the FATE score. The published values reconcile
    // with F1, so that is the default; accuracy mode is available.
    enum class FatePerf { f1, accuracy };
    FatePerf fate_perf = FatePerf::f1;
};

// Parses and fully validates; throws ConfigError whose message lists every
// problem found.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Canonical JSON echo of a parsed config (stable key order / formatting);
// this is what gets hashed into the manifest.
std::string canonical_config(const ExperimentConfig& cfg);

}  // namespace cafe::run
