#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rmlab/diagnostics.hpp"
#include "rmlab/goldworld.hpp"
#include "rmlab/losses.hpp"
#include "rmlab/rloosim.hpp"
#include "rmlab/rmcore.hpp"
#include "rmlab/trainkit.hpp"

namespace rmlab {

// One cell of the training grid. The label names the run directory, so a
// lambda sweep can train the same kind under several labels.
struct LossEntry {
    std::string label;
    LossSpec spec;
};

struct ExperimentConfig {
    WorldConfig world;
    SizeConfig sizes;
    std::uint64_t master_seed = 0;
    std::vector<std::size_t> hidden_widths{64, 64};
    std::vector<LossEntry> losses;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3};
    TrainConfig train;
    RLOOConfig rloo;
    std::size_t rloo_sets = 32;
    std::size_t rloo_candidates = 8;
    // Labels whose checkpoints get an RLOO run per seed.
    std::vector<std::string> rloo_losses{"bt", "bt-bsr"};
    std::string out_dir = "out";
};

ExperimentConfig default_experiment_config();
void validate(const ExperimentConfig& config);

// JSON round trip. Parsing starts from the defaults, so a partial file is
// valid; unknown keys are rejected.
std::string experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Stage seeds derived from the master seed.
std::uint64_t bundle_seed_for(std::uint64_t world_seed);
std::uint64_t candidate_seed_for(std::uint64_t world_seed);
std::uint64_t init_seed_for(std::uint64_t run_seed);
std::uint64_t policy_seed_for(std::uint64_t run_seed);

// A world directory holds world.json + datasets.bin.
struct WorldDir {
    GoldWorld world;
    DatasetBundle bundle;
};
void save_world_dir(const GoldWorld& world, const DatasetBundle& bundle,
                    const std::filesystem::path& dir);
WorldDir load_world_dir(const std::filesystem::path& dir);

// Final state of one training run, as persisted in report.json.
struct RunReport {
    std::string label;
    LossSpec loss;
    std::uint64_t seed = 0;
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t steps = 0;
    bool diverged = false;
    double final_train_loss = 0.0;
    double max_decomp_rel_err = 0.0;
    double head_norm = 0.0;
    bool has_eval = false;
    DiagSnapshot final;
};
std::string run_report_to_json(const RunReport& report);
RunReport run_report_from_json(const std::string& text);

// Full evaluation snapshot (accuracy, rank correlations, dispersion, erank)
// against the bundle's four scenario sets. Inputs are concatenated once.
DiagHook make_diag_hook(const GoldWorld& world, const DatasetBundle& bundle);

// Trains one (loss, seed) cell and writes rm.ckpt, rm.meta.json, metrics.csv,
// report.json, and run.log (the only file with timestamps) into run_dir.
RunReport train_one_run(const GoldWorld& world, const DatasetBundle& bundle,
                        const LossEntry& entry, std::uint64_t seed,
                        const std::vector<std::size_t>& hidden_widths,
                        const TrainConfig& base, const std::filesystem::path& run_dir);

// Worker cap: RMLAB_THREADS when set, hardware concurrency otherwise.
std::size_t worker_count(std::size_t jobs);

// Fans the grid out across workers, one run per worker, under
// out_dir/<label>/seed<seed>/. Reports come back in grid order.
std::vector<RunReport> train_grid(const GoldWorld& world, const DatasetBundle& bundle,
                                  const std::vector<LossEntry>& losses,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::vector<std::size_t>& hidden_widths,
                                  const TrainConfig& base,
                                  const std::filesystem::path& out_dir);

// Evaluation of a frozen checkpoint (no training fields).
RunReport evaluate_params(const GoldWorld& world, const DatasetBundle& bundle,
                          const RewardModelParams& params);
// Accuracy and rank correlations of the gold scorer itself.
EvalReport evaluate_gold(const GoldWorld& world, const DatasetBundle& bundle);
std::string eval_report_to_json(const EvalReport& report);

// Final state of one RLOO run, as persisted in rloo_report.json.
struct RlooReport {
    std::string label;
    std::uint64_t seed = 0;
    double beta = 0.0;
    std::size_t steps = 0;
    bool diverged = false;
    double final_proxy = 0.0;
    double final_gold = 0.0;
    double final_kl = 0.0;
    double final_entropy = 0.0;
    double max_abs_advantage_sum = 0.0;
};
std::string rloo_report_to_json(const RlooReport& report);
RlooReport rloo_report_from_json(const std::string& text);

// One RLOO run against a frozen proxy; writes rloo_metrics.csv, policy.ckpt,
// rloo_report.json, and run.log into run_dir.
RlooReport rloo_one_run(const GoldWorld& world, const std::vector<CandidateSet>& sets,
                        const RewardModelParams& rm_params, const std::string& label,
                        const RLOOConfig& config, const std::filesystem::path& run_dir);

struct AggregateStat {
    std::size_t count = 0;
    double mean = 0.0;
    double stddev = 0.0;
};

struct SummaryRow {
    std::string label;
    LossSpec loss;
    std::vector<std::uint64_t> seeds;
    std::size_t diverged = 0;
    // Fixed metric order, shared by the text table and summary.json.
    std::vector<std::pair<std::string, AggregateStat>> metrics;
};

// Matched-seed comparison of final gold reward against the "bt" runs.
struct RlooTally {
    std::string label;
    std::size_t wins = 0;
    std::size_t total = 0;
};

struct SummaryTable {
    std::vector<SummaryRow> rows;
    std::vector<RlooReport> rloo_runs;
    std::vector<RlooTally> rloo_tallies;
};

std::vector<RunReport> collect_run_reports(const std::filesystem::path& out_dir);
std::vector<RlooReport> collect_rloo_reports(const std::filesystem::path& out_dir);
SummaryTable build_summary(const std::vector<RunReport>& reports,
                           const std::vector<RlooReport>& rloo_runs);
std::string summary_to_json(const SummaryTable& table);
std::string summary_to_text(const SummaryTable& table);

// Minimal deterministic SVG line chart.
struct ChartSeries {
    std::string name;
    std::vector<double> xs;
    std::vector<double> ys;
};
std::string render_line_chart(const std::string& title,
                              const std::vector<ChartSeries>& series);

// One chart per logged series under out_dir/charts/, built from the runs'
// metrics.csv and rloo_metrics.csv files. Returns the files written.
std::vector<std::filesystem::path> write_report_charts(const std::filesystem::path& out_dir);

}  // namespace rmlab
