#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rmlab/diagnostics.hpp"
#include "rmlab/goldworld.hpp"
#include "rmlab/rmcore.hpp"

namespace rmlab {

// One prompt with a fixed pool of candidate responses. The policy is a
// distribution over this pool, so "generation" reduces to picking indices.
struct CandidateSet {
    std::uint32_t prompt_id = 0;
    std::vector<double> x;
    std::vector<std::vector<double>> candidates;
    std::vector<double> gold_scores;

    std::size_t size() const { return candidates.size(); }
};

// The policy scores (x, y) with the same network family as the reward model;
// its distribution over a candidate set is the softmax of those scores.
using PolicyParams = RewardModelParams;

struct RLOOConfig {
    std::size_t k = 2;
    double beta = 0.05;
    double learning_rate = 0.05;
    std::size_t steps = 400;
    std::uint64_t seed = 0;
    // Prompts sampled per update.
    std::size_t prompts_per_step = 8;
    // Apply the KL penalty inside the per-sample reward (r~ = r - beta *
    // log(pi/pi_ref)). When false the penalty enters as a separate gradient
    // term on the sampled sets instead. Both are standard; neither is
    // canonical.
    bool kl_in_reward = true;
};

void validate(const RLOOConfig& config);

struct RLOOStepRecord {
    std::size_t step = 0;
    double proxy_reward_mean = 0.0;
    double gold_reward_mean = 0.0;
    double kl = 0.0;
    double entropy = 0.0;
    double lr = 0.0;
};

struct RLOORunLog {
    std::vector<RLOOStepRecord> records;
    // Largest |sum of advantages| seen in any sampled group.
    double max_abs_advantage_sum = 0.0;
};

struct RLOOResult {
    PolicyParams policy;
    RLOORunLog log;
    bool diverged = false;
    std::size_t steps_completed = 0;
};

// Candidate pools over distinct validation prompts, responses drawn from the
// validation generators. Gold scores are cached and pairwise distinct per set.
std::vector<CandidateSet> build_candidate_sets(const GoldWorld& world, std::size_t n_prompts,
                                               std::size_t n_candidates, std::uint64_t seed);

// Per-candidate scores of one set under the policy network.
std::vector<double> policy_logits(const PolicyParams& policy, const CandidateSet& set);

// Softmax of the logits: pi(y_j | x) over the set's candidates.
std::vector<double> policy_distribution(const PolicyParams& policy, const CandidateSet& set);

// Leave-one-out advantages: a_i = r_i - mean of the other rewards.
std::vector<double> rloo_advantages(std::span<const double> rewards);

// Exact discrete KL(p || q) and entropy; zero probabilities contribute zero.
double discrete_kl(std::span<const double> p, std::span<const double> q);
double discrete_entropy(std::span<const double> p);

// Mean over sets of the exact per-set quantity.
double kl_to_reference(const PolicyParams& policy, const PolicyParams& reference,
                       const std::vector<CandidateSet>& sets);
double policy_entropy(const PolicyParams& policy, const std::vector<CandidateSet>& sets);

// REINFORCE surrogate sum_i a_i * log pi(y_sampled[i] | x) with the
// advantages held fixed, and its exact parameter gradient. Exposed so the
// gradient can be checked against finite differences of the value.
double surrogate_value(const PolicyParams& policy, const CandidateSet& set,
                       std::span<const std::size_t> sampled, std::span<const double> advantages);
ParamGradients surrogate_gradient(const PolicyParams& policy, const CandidateSet& set,
                                  std::span<const std::size_t> sampled,
                                  std::span<const double> advantages);

// Gradient-ascent RLOO loop against a frozen proxy scorer. Records cover
// steps 0..steps where record t describes the policy after t updates; the
// trailing record is sampled but not followed by an update. A non-finite
// score or update aborts the run with the log so far and diverged = true.
RLOOResult rloo_train(const PolicyParams& policy_init, const PolicyParams& reference,
                      const RewardModelParams& rm_params, const GoldWorld& world,
                      const std::vector<CandidateSet>& sets, const RLOOConfig& config);
RLOOResult rloo_train(const PolicyParams& policy_init, const PolicyParams& reference,
                      const Scorer& proxy, const GoldWorld& world,
                      const std::vector<CandidateSet>& sets, const RLOOConfig& config);

extern const char* const kRlooCsvHeader;
std::string rloo_metrics_to_csv(const RLOORunLog& log);
void write_rloo_metrics_csv(const RLOORunLog& log, const std::filesystem::path& path);

}  // namespace rmlab
