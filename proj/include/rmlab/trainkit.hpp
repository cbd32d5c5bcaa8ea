#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rmlab/goldworld.hpp"
#include "rmlab/losses.hpp"
#include "rmlab/rmcore.hpp"

namespace rmlab {

enum class OptimizerKind { sgd, adam };
enum class LrSchedule { constant, linear_decay };

OptimizerKind optimizer_from_string(const std::string& name);
std::string to_string(OptimizerKind kind);
LrSchedule schedule_from_string(const std::string& name);
std::string to_string(LrSchedule schedule);

struct TrainConfig {
    LossSpec loss;
    double learning_rate = 3e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 3;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double warmup_fraction = 0.05;
    LrSchedule schedule = LrSchedule::linear_decay;
    // Diagnostics cadence in steps; the final step is always evaluated.
    std::size_t eval_every = 50;
};

void validate(const TrainConfig& config);

// Expensive evaluation results attached to a metrics row.
struct DiagSnapshot {
    double acc_id = 0.0;
    double tau_prompt = 0.0;
    double tau_response = 0.0;
    double tau_mutual = 0.0;
    double hnorm_id_mean = 0.0, hnorm_id_std = 0.0;
    double hnorm_prompt_mean = 0.0, hnorm_prompt_std = 0.0;
    double hnorm_response_mean = 0.0, hnorm_response_std = 0.0;
    double hnorm_mutual_mean = 0.0, hnorm_mutual_std = 0.0;
    double hdist_mean = 0.0, hdist_std = 0.0, hdist_skew = 0.0;
    double erank_train = 0.0;
    double erank_eval = 0.0;
};

struct MetricsRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double train_loss = 0.0;
    // Post-update head norm; loss and the decomposition residual refer to the
    // batch evaluated at the pre-update parameters.
    double head_norm = 0.0;
    double decomp_rel_err = 0.0;
    bool has_snapshot = false;
    DiagSnapshot snapshot;
};

struct MetricsLog {
    std::vector<MetricsRecord> records;
    double max_decomp_rel_err = 0.0;
};

// Diagnostics are injected so the trainer stays independent of how snapshots
// are produced; a null hook records no snapshots.
using DiagHook = std::function<DiagSnapshot(const RewardModelParams& params,
                                            std::size_t step)>;

struct TrainResult {
    RewardModelParams params;
    MetricsLog log;
    bool diverged = false;
    std::size_t steps_completed = 0;
};

// Optimizer state shaped like the parameters (Adam moments; unused for SGD).
struct OptimizerState {
    std::size_t step = 0;
    ParamGradients m;
    ParamGradients v;

    static OptimizerState init_for(const RewardModelParams& params);
};

// One in-place parameter update with the given effective learning rate.
void optimizer_step(RewardModelParams& params, const ParamGradients& grads,
                    OptimizerState& state, const TrainConfig& config, double lr);

// Effective learning rate for a 1-based step index: linear warmup over
// floor(warmup_fraction * total) steps, then constant or linear decay to zero.
double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total_steps);

// Full training run over bundle.d_train. Deterministic in (init, bundle,
// config). A non-finite loss or activation aborts the run: the failing update
// is never applied, the result carries the parameters of the last completed
// step with diverged = true.
TrainResult train_rm(const RewardModelParams& init, const GoldWorld& world,
                     const DatasetBundle& bundle, const TrainConfig& config,
                     const DiagHook& hook = nullptr);

// Fixed-schema CSV; evaluation columns are empty on steps without a snapshot.
extern const char* const kMetricsCsvHeader;
std::string metrics_to_csv(const MetricsLog& log);
void write_metrics_csv(const MetricsLog& log, const std::filesystem::path& path);

}  // namespace rmlab
