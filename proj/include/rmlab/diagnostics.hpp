#pragma once

#include <functional>
#include <span>
#include <vector>

#include "rmlab/goldworld.hpp"
#include "rmlab/numkit.hpp"
#include "rmlab/rmcore.hpp"

namespace rmlab {

// Scores one (prompt, response) pair.
using Scorer = std::function<double(std::span<const double> x, std::span<const double> y)>;

Scorer make_scorer(const RewardModelParams& params);
Scorer make_gold_scorer(const GoldWorld& world);

// Pair accuracy and per-set rank correlations of one evaluation pass.
struct EvalReport {
    double acc_id = 0.0;
    double tau_prompt = 0.0;
    double tau_response = 0.0;
    double tau_mutual = 0.0;
};

// Moments of per-response hidden-state norms over one evaluation set.
struct NormDispersionStats {
    MomentStats norms;
};

// Moments of ||h_w - h_l|| over preference pairs.
struct HiddenDistanceStats {
    MomentStats distances;
};

struct ErankReport {
    double erank_train = 0.0;
    double erank_eval = 0.0;
    double gap = 0.0;  // erank_eval - erank_train
};

// Concatenated (x, y) model inputs for a dataset. Triplets contribute the
// chosen and rejected response, groups all four.
std::vector<std::vector<double>> concat_inputs(const GoldWorld& world,
                                               std::span<const PreferenceTriplet> triplets);
std::vector<std::vector<double>> concat_inputs(const GoldWorld& world,
                                               std::span<const RankedGroup> groups);

// Fraction of pairs where the scorer prefers the gold-chosen response.
// Exact score ties count one half.
double eval_accuracy(const Scorer& scorer, const GoldWorld& world,
                     std::span<const PreferenceTriplet> triplets);
double eval_accuracy(const RewardModelParams& params, const GoldWorld& world,
                     std::span<const PreferenceTriplet> triplets);

// Mean Kendall tau-b between model scores and gold scores across groups.
// Propagates degenerate_input_error when a model scores a group constantly.
double eval_tau(const Scorer& scorer, const GoldWorld& world,
                std::span<const RankedGroup> groups);
double eval_tau(const RewardModelParams& params, const GoldWorld& world,
                std::span<const RankedGroup> groups);

EvalReport eval_all(const RewardModelParams& params, const GoldWorld& world,
                    const DatasetBundle& bundle);

NormDispersionStats norm_dispersion(const RewardModelParams& params,
                                    const std::vector<std::vector<double>>& inputs);

HiddenDistanceStats hidden_distance_stats(const RewardModelParams& params,
                                          const GoldWorld& world,
                                          std::span<const PreferenceTriplet> triplets);

double head_norm(const RewardModelParams& params);

// exp of the Shannon entropy of the normalized singular-value distribution.
// Zero singular values contribute nothing (0 log 0 = 0). The result lies in
// [1, #values]. Throws degenerate_input_error on an all-zero spectrum.
double effective_rank(const SingularSpectrum& spectrum);

// Effective rank of the hidden-state matrix (one row per input).
double effective_rank(const RewardModelParams& params,
                      const std::vector<std::vector<double>>& inputs);

// erank of train-set hidden states vs an evaluation set's hidden states.
ErankReport erank_gap(const RewardModelParams& params, const GoldWorld& world,
                      const DatasetBundle& bundle);

}  // namespace rmlab
