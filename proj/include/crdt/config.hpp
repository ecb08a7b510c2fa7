#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crdt/agent.hpp"
#include "crdt/counterfactual.hpp"
#include "crdt/envs.hpp"
#include "crdt/training.hpp"

namespace crdt {

// Everything a run needs; a persisted config re-runs to identical results
// under the same seed. Serialized as a single JSON document.
struct ExperimentConfig {
    std::string env_kind = "gridworld";  // "gridworld" | "pointmass"
    GridworldSpec grid;
    PointMassSpec pointmass;

    std::size_t ratio = 10;  // bad : good trajectories
    std::size_t n_good = 50;
    std::uint64_t seed = 1;

    ModelConfig agent_model;
    ModelConfig treatment_model;
    ModelConfig outcome_model;

    FitConfig treatment_fit;
    FitConfig outcome_fit;
    SelectionConfig selection;
    TrainConfig agent_train;
    EvalConfig eval;

    std::size_t buffer_capacity = 120;   // n_e
    std::size_t attempt_budget = 3000;   // reasoning attempts before giving up
    bool calibrate_variance_budget = true;
    double calibration_holdout = 0.1;    // fraction of trajectories held out
    std::size_t eval_seeds = 3;          // seeds for the reproduction table

    std::string output_dir = "runs";

    ExperimentConfig();

    void validate() const;
    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
    // Reads a config file, then applies environment overrides (CRDT_SEED,
    // CRDT_OUTPUT_DIR).
    static ExperimentConfig load(const std::string& path);
    static void apply_env_overrides(ExperimentConfig& cfg);

    // Content hash of the canonical serialization; names the run directory.
    std::string config_hash() const;
};

// FNV-1a over arbitrary bytes, hex-encoded; used for config hashes and
// artifact checksums.
std::string fnv1a_hex(const std::string& bytes);
std::string file_checksum(const std::string& path);

// Append-only JSONL manifest of the artifacts a run has produced.
struct ManifestEntry {
    std::string artifact;
    std::string path;
    std::string checksum;
    std::string timestamp;
    std::string version;
};

void manifest_append(const std::string& run_dir, const std::string& artifact,
                     const std::string& path);
std::vector<ManifestEntry> manifest_read(const std::string& run_dir);
// Re-checks every referenced artifact against its recorded checksum.
// Returns human-readable problems; empty = consistent.
std::vector<std::string> manifest_verify(const std::string& run_dir);

extern const char* kVersionString;

}  // namespace crdt
