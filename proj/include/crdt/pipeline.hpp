#pragma once

#include <string>
#include <vector>

#include "crdt/agent.hpp"
#include "crdt/config.hpp"

namespace crdt {

// Stage commands behind the CLI. Artifacts land in a run directory that is
// content-addressed by the config hash (ratio and seed excluded: those vary
// within one experiment and are carried in file names instead). Stages are
// deterministic in the config and skip artifacts that already exist, so run
// directories stay append-only.

std::string run_dir_for(const ExperimentConfig& cfg);

// Artifact paths for the (ratio, seed) the config currently selects.
struct RunPaths {
    std::string run_dir;
    std::string dataset;
    std::string treatment_ckpt;
    std::string outcome_ckpt;
    std::string treatment_loss_csv;
    std::string outcome_loss_csv;
    std::string buffer;
    std::string buffer_stats;
    std::string ledgers_csv;
    std::string agent_ckpt(bool with_counterfactuals) const;
    std::string agent_loss_csv(bool with_counterfactuals, const std::string& which) const;
    std::string eval_report(bool with_counterfactuals) const;
    std::string results_csv;
    std::string table_txt;

private:
    std::string tag_;
    friend RunPaths run_paths(const ExperimentConfig& cfg);
};

RunPaths run_paths(const ExperimentConfig& cfg);

std::string cmd_gen_data(const ExperimentConfig& cfg);

struct ModelArtifacts {
    std::string treatment;
    std::string outcome;
};
ModelArtifacts cmd_train_models(const ExperimentConfig& cfg);

struct CfArtifacts {
    std::string buffer;
    std::string stats;
    std::string ledgers;
    double variance_budget_used = 0.0;
    std::size_t buffer_size = 0;
};
CfArtifacts cmd_gen_cf(const ExperimentConfig& cfg);

std::string cmd_train_agent(const ExperimentConfig& cfg, bool with_counterfactuals);

struct EvalArtifacts {
    std::string report_path;
    EvalReport report;
};
EvalArtifacts cmd_eval(const ExperimentConfig& cfg, bool with_counterfactuals);

// One cell of the reproduction table.
struct ToyTableCell {
    std::size_t ratio = 0;
    std::string method;  // "dt" | "crdt"
    std::vector<double> per_seed_success;
    double mean = 0.0;
    double stddev = 0.0;
};

struct ToyTable {
    std::vector<ToyTableCell> cells;
    double wall_clock_seconds = 0.0;
    const ToyTableCell* cell(std::size_t ratio, const std::string& method) const;
};

// The full three-ratio pipeline: data, models, counterfactuals, both agents,
// paired evaluation, aggregated over eval_seeds seeds per ratio.
ToyTable cmd_repro_toy(const ExperimentConfig& cfg);

std::string format_toy_table(const ToyTable& table);

}  // namespace crdt
