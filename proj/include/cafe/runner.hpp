#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cafe/config.hpp"

// Experiment orchestration: runs every seed, persists manifest / per-round
// metrics / summary, and assembles cross-run comparison tables.

namespace cafe::run {

inline constexpr const char* kVersion = "0.1.0";

// FNV-1a over bytes; used for config and dataset fingerprints.
std::uint64_t fnv1a(const std::string& bytes);

// Executes the experiment. Writes into cfg.output_dir:
//   manifest.json            config echo, config/dataset hashes, seeds, version
//   metrics_seed<S>.jsonl    one JSON object per round
//   summary.json/.txt        per-seed finals, cross-seed mean/stddev, FATE
// Returns 0 on success, 2 if any seed failed (failures are recorded in the
// summary and the remaining seeds still run).
int run_experiment_config(const ExperimentConfig& cfg);

// Builds a comparison table across completed runs. All runs must share the
// same dataset hash. FATE is computed against the run at baseline_index.
// Writes <out_path>.txt and <out_path>.json; returns 0 on success.
int write_report(const std::vector<std::string>& run_dirs, int baseline_index,
                 const std::string& out_path);

}  // namespace cafe::run
