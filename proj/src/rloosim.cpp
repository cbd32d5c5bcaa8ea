#include "rmlab/rloosim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "rmlab/binio.hpp"
#include "rmlab/errors.hpp"
#include "rmlab/kernels.hpp"
#include "rmlab/numkit.hpp"
#include "rmlab/rng.hpp"

namespace rmlab {

void validate(const RLOOConfig& c) {
    if (c.k < 2) throw config_error("rloo needs at least two samples per prompt");
    if (c.beta < 0.0) throw config_error("kl coefficient must be non-negative");
    if (c.learning_rate <= 0.0) throw config_error("learning rate must be positive");
    if (c.steps == 0) throw config_error("step count must be positive");
    if (c.prompts_per_step == 0) throw config_error("prompts per step must be positive");
}

std::vector<CandidateSet> build_candidate_sets(const GoldWorld& world, std::size_t n_prompts,
                                               std::size_t n_candidates, std::uint64_t seed) {
    if (n_candidates < 2) throw config_error("candidate sets need at least two candidates");
    std::size_t n_valid = world.valid_prompt_count();
    if (n_prompts == 0) throw config_error("candidate set count must be positive");
    if (n_prompts > n_valid) {
        throw config_error("not enough validation prompts for the requested candidate sets");
    }
    std::vector<std::uint32_t> gens = world.pool_ids(Pool::valid);
    if (gens.empty()) throw config_error("world has no validation generators");

    Rng rng = stream(seed, "candidate-sets");
    std::size_t train_count = world.train_prompt_count();
    auto picks = rng.sample_without_replacement(n_valid, n_prompts);

    std::vector<CandidateSet> sets;
    sets.reserve(n_prompts);
    for (std::size_t pick : picks) {
        const PromptVector& prompt = world.prompts[train_count + pick];
        CandidateSet set;
        set.prompt_id = prompt.id;
        set.x = prompt.x;
        set.candidates.resize(n_candidates);
        set.gold_scores.resize(n_candidates);

        std::vector<std::uint32_t> chosen(n_candidates);
        if (gens.size() >= n_candidates) {
            auto gp = rng.sample_without_replacement(gens.size(), n_candidates);
            for (std::size_t j = 0; j < n_candidates; ++j) chosen[j] = gens[gp[j]];
        } else {
            for (std::size_t j = 0; j < n_candidates; ++j) {
                chosen[j] = gens[rng.below(gens.size())];
            }
        }
        for (std::size_t j = 0; j < n_candidates; ++j) {
            set.candidates[j] = sample_response(world, chosen[j], prompt.x, rng);
            set.gold_scores[j] = gold_score(world, prompt.x, set.candidates[j]);
        }

        // Tied gold scores would leave "better" undefined; redraw offenders.
        bool clean = false;
        for (int attempt = 0; attempt < 100 && !clean; ++attempt) {
            clean = true;
            for (std::size_t i = 0; i < n_candidates && clean; ++i) {
                for (std::size_t j = i + 1; j < n_candidates && clean; ++j) {
                    if (set.gold_scores[i] == set.gold_scores[j]) {
                        set.candidates[j] = sample_response(world, chosen[j], prompt.x, rng);
                        set.gold_scores[j] = gold_score(world, prompt.x, set.candidates[j]);
                        clean = false;
                    }
                }
            }
        }
        if (!clean) {
            throw degenerate_input_error("persistent exact gold-score ties in a candidate set");
        }
        sets.push_back(std::move(set));
    }
    return sets;
}

namespace {

std::vector<double> concat_input(const CandidateSet& set, std::size_t j) {
    std::vector<double> input;
    input.reserve(set.x.size() + set.candidates[j].size());
    input.insert(input.end(), set.x.begin(), set.x.end());
    input.insert(input.end(), set.candidates[j].begin(), set.candidates[j].end());
    return input;
}

double log_sum_exp(std::span<const double> v) {
    double hi = *std::max_element(v.begin(), v.end());
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - hi);
    return hi + std::log(acc);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::vector<double> policy_logits(const PolicyParams& policy, const CandidateSet& set) {
    std::vector<double> logits(set.size());
    for (std::size_t j = 0; j < set.size(); ++j) {
        logits[j] = reward_of(policy, concat_input(set, j));
    }
    return logits;
}

std::vector<double> policy_distribution(const PolicyParams& policy, const CandidateSet& set) {
    return softmax(policy_logits(policy, set));
}

std::vector<double> rloo_advantages(std::span<const double> rewards) {
    std::size_t k = rewards.size();
    if (k < 2) throw std::invalid_argument("leave-one-out baseline needs at least two rewards");
    double total = std::accumulate(rewards.begin(), rewards.end(), 0.0);
    std::vector<double> a(k);
    for (std::size_t i = 0; i < k; ++i) {
        a[i] = rewards[i] - (total - rewards[i]) / static_cast<double>(k - 1);
    }
    return a;
}

double discrete_kl(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("distribution sizes differ");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] <= 0.0) {
            throw std::invalid_argument("reference probability is zero where the policy has mass");
        }
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

double discrete_entropy(std::span<const double> p) {
    double h = 0.0;
    for (double pi : p) {
        if (pi > 0.0) h -= pi * std::log(pi);
    }
    return h;
}

double kl_to_reference(const PolicyParams& policy, const PolicyParams& reference,
                       const std::vector<CandidateSet>& sets) {
    if (sets.empty()) throw std::invalid_argument("no candidate sets");
    double total = 0.0;
    for (const CandidateSet& set : sets) {
        total += discrete_kl(policy_distribution(policy, set),
                             policy_distribution(reference, set));
    }
    return total / static_cast<double>(sets.size());
}

double policy_entropy(const PolicyParams& policy, const std::vector<CandidateSet>& sets) {
    if (sets.empty()) throw std::invalid_argument("no candidate sets");
    double total = 0.0;
    for (const CandidateSet& set : sets) {
        total += discrete_entropy(policy_distribution(policy, set));
    }
    return total / static_cast<double>(sets.size());
}

double surrogate_value(const PolicyParams& policy, const CandidateSet& set,
                       std::span<const std::size_t> sampled,
                       std::span<const double> advantages) {
    if (sampled.size() != advantages.size()) {
        throw std::invalid_argument("sampled indices and advantages differ in length");
    }
    std::vector<double> logits = policy_logits(policy, set);
    double lse = log_sum_exp(logits);
    double value = 0.0;
    for (std::size_t i = 0; i < sampled.size(); ++i) {
        value += advantages[i] * (logits[sampled[i]] - lse);
    }
    return value;
}

ParamGradients surrogate_gradient(const PolicyParams& policy, const CandidateSet& set,
                                  std::span<const std::size_t> sampled,
                                  std::span<const double> advantages) {
    if (sampled.size() != advantages.size()) {
        throw std::invalid_argument("sampled indices and advantages differ in length");
    }
    std::vector<std::vector<double>> inputs(set.size());
    for (std::size_t j = 0; j < set.size(); ++j) inputs[j] = concat_input(set, j);
    auto traces = kernels::batch_forward(policy, inputs);

    std::vector<double> logits(set.size());
    for (std::size_t j = 0; j < set.size(); ++j) logits[j] = traces[j].reward;
    std::vector<double> pi = softmax(logits);

    // d/dlogit_j of sum_i a_i log pi(y_i) = a_j [j sampled] - pi_j * sum_i a_i.
    double advantage_total = 0.0;
    for (double a : advantages) advantage_total += a;
    std::vector<double> coeff(set.size(), 0.0);
    for (std::size_t i = 0; i < sampled.size(); ++i) coeff[sampled[i]] += advantages[i];
    for (std::size_t j = 0; j < set.size(); ++j) coeff[j] -= pi[j] * advantage_total;

    ParamGradients grads = ParamGradients::zeros_like(policy);
    kernels::batch_backward_accumulate(policy, traces, coeff, grads);
    return grads;
}

namespace {

// Shared loop over a precomputed flat proxy-score table.
RLOOResult rloo_train_impl(const PolicyParams& policy_init, const PolicyParams& reference,
                           const std::vector<double>& proxy_flat,
                           const std::vector<CandidateSet>& sets, const RLOOConfig& cfg) {
    validate(cfg);
    if (sets.empty()) throw config_error("no candidate sets");
    if (cfg.prompts_per_step > sets.size()) {
        throw config_error("prompts per step exceeds the number of candidate sets");
    }
    for (const CandidateSet& set : sets) {
        if (set.size() < cfg.k) {
            throw config_error("candidate set smaller than the per-prompt sample count");
        }
        if (set.size() != set.gold_scores.size()) {
            throw config_error("candidate set and gold score lengths differ");
        }
    }

    std::size_t n_sets = sets.size();
    std::vector<std::size_t> offset(n_sets + 1, 0);
    for (std::size_t s = 0; s < n_sets; ++s) offset[s + 1] = offset[s] + sets[s].size();
    std::size_t n_flat = offset[n_sets];

    std::vector<std::vector<double>> inputs(n_flat);
    for (std::size_t s = 0; s < n_sets; ++s) {
        for (std::size_t j = 0; j < sets[s].size(); ++j) {
            inputs[offset[s] + j] = concat_input(sets[s], j);
        }
    }

    // The reference is frozen, so its per-set log-probabilities are fixed.
    std::vector<double> ref_logp = kernels::batch_rewards(reference, inputs);
    for (std::size_t s = 0; s < n_sets; ++s) {
        std::span<double> part(ref_logp.data() + offset[s], sets[s].size());
        double lse = log_sum_exp(part);
        for (double& v : part) v -= lse;
    }

    RLOOResult result;
    result.policy = policy_init;
    ParamGradients grads = ParamGradients::zeros_like(policy_init);
    std::vector<double> coeff(n_flat);
    double inv_m = 1.0 / static_cast<double>(cfg.prompts_per_step);

    for (std::size_t t = 0; t <= cfg.steps; ++t) {
        try {
            auto traces = kernels::batch_forward(result.policy, inputs);

            // Exact per-set distributions of the current policy.
            std::vector<double> logp(n_flat);
            double kl = 0.0, entropy = 0.0;
            for (std::size_t s = 0; s < n_sets; ++s) {
                std::size_t sz = sets[s].size();
                std::span<double> part(logp.data() + offset[s], sz);
                for (std::size_t j = 0; j < sz; ++j) part[j] = traces[offset[s] + j].reward;
                double lse = log_sum_exp(part);
                double set_kl = 0.0, set_h = 0.0;
                for (std::size_t j = 0; j < sz; ++j) {
                    part[j] -= lse;
                    double p = std::exp(part[j]);
                    set_kl += p * (part[j] - ref_logp[offset[s] + j]);
                    set_h -= p * part[j];
                }
                kl += set_kl;
                entropy += set_h;
            }
            kl /= static_cast<double>(n_sets);
            entropy /= static_cast<double>(n_sets);

            Rng rng = stream(cfg.seed, "rloo-step-" + std::to_string(t));
            auto batch = rng.sample_without_replacement(n_sets, cfg.prompts_per_step);

            std::fill(coeff.begin(), coeff.end(), 0.0);
            double proxy_sum = 0.0, gold_sum = 0.0;
            for (std::size_t s : batch) {
                std::size_t base = offset[s];
                std::size_t sz = sets[s].size();

                // Gumbel-ranked top-k draws k candidates without replacement.
                std::vector<double> key(sz);
                for (std::size_t j = 0; j < sz; ++j) {
                    key[j] = logp[base + j] + rng.gumbel();
                }
                std::vector<std::size_t> order(sz);
                std::iota(order.begin(), order.end(), 0);
                std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    return key[a] > key[b];
                });
                order.resize(cfg.k);

                std::vector<double> shaped(cfg.k);
                for (std::size_t i = 0; i < cfg.k; ++i) {
                    std::size_t j = order[i];
                    double proxy = proxy_flat[base + j];
                    proxy_sum += proxy;
                    gold_sum += sets[s].gold_scores[j];
                    shaped[i] = proxy;
                    if (cfg.kl_in_reward && cfg.beta > 0.0) {
                        shaped[i] -= cfg.beta * (logp[base + j] - ref_logp[base + j]);
                    }
                }

                std::vector<double> a = rloo_advantages(shaped);
                double a_total = 0.0;
                for (double ai : a) {
                    if (!std::isfinite(ai)) throw divergence_error("non-finite advantage");
                    a_total += ai;
                }
                result.log.max_abs_advantage_sum =
                    std::max(result.log.max_abs_advantage_sum, std::abs(a_total));

                for (std::size_t i = 0; i < cfg.k; ++i) coeff[base + order[i]] += a[i] * inv_m;
                for (std::size_t j = 0; j < sz; ++j) {
                    double p = std::exp(logp[base + j]);
                    double adjust = p * a_total;
                    if (!cfg.kl_in_reward && cfg.beta > 0.0) {
                        double set_kl = 0.0;
                        for (std::size_t jj = 0; jj < sz; ++jj) {
                            set_kl += std::exp(logp[base + jj]) *
                                      (logp[base + jj] - ref_logp[base + jj]);
                        }
                        adjust += cfg.beta * p * (logp[base + j] - ref_logp[base + j] - set_kl);
                    }
                    coeff[base + j] -= adjust * inv_m;
                }
            }

            RLOOStepRecord rec;
            rec.step = t;
            rec.proxy_reward_mean = proxy_sum / static_cast<double>(cfg.prompts_per_step * cfg.k);
            rec.gold_reward_mean = gold_sum / static_cast<double>(cfg.prompts_per_step * cfg.k);
            rec.kl = kl;
            rec.entropy = entropy;
            rec.lr = cfg.learning_rate;
            if (!std::isfinite(rec.proxy_reward_mean) || !std::isfinite(kl) ||
                !std::isfinite(entropy)) {
                throw divergence_error("non-finite rloo step statistics");
            }
            result.log.records.push_back(rec);

            if (t == cfg.steps) break;
            grads.zero();
            kernels::batch_backward_accumulate(result.policy, traces, coeff, grads);
            std::size_t n_params = result.policy.param_count();
            const ParamGradients& gc = grads;
            for (std::size_t i = 0; i < n_params; ++i) {
                param_at(result.policy, i) += cfg.learning_rate * grad_at(gc, i);
            }
            result.steps_completed = t + 1;
        } catch (const divergence_error&) {
            result.diverged = true;
            return result;
        }
    }
    return result;
}

}  // namespace

RLOOResult rloo_train(const PolicyParams& policy_init, const PolicyParams& reference,
                      const RewardModelParams& rm_params, const GoldWorld& world,
                      const std::vector<CandidateSet>& sets, const RLOOConfig& config) {
    (void)world;
    std::vector<std::vector<double>> inputs;
    for (const CandidateSet& set : sets) {
        for (std::size_t j = 0; j < set.size(); ++j) inputs.push_back(concat_input(set, j));
    }
    std::vector<double> proxy_flat = kernels::batch_rewards(rm_params, inputs);
    return rloo_train_impl(policy_init, reference, proxy_flat, sets, config);
}

RLOOResult rloo_train(const PolicyParams& policy_init, const PolicyParams& reference,
                      const Scorer& proxy, const GoldWorld& world,
                      const std::vector<CandidateSet>& sets, const RLOOConfig& config) {
    (void)world;
    std::vector<double> proxy_flat;
    for (const CandidateSet& set : sets) {
        for (const auto& y : set.candidates) {
            proxy_flat.push_back(proxy(set.x, y));
        }
    }
    return rloo_train_impl(policy_init, reference, proxy_flat, sets, config);
}

const char* const kRlooCsvHeader = "step,proxy_reward_mean,gold_reward_mean,kl,entropy,lr";

std::string rloo_metrics_to_csv(const RLOORunLog& log) {
    std::string out = kRlooCsvHeader;
    out += "\n";
    for (const RLOOStepRecord& r : log.records) {
        out += std::to_string(r.step);
        for (double v : {r.proxy_reward_mean, r.gold_reward_mean, r.kl, r.entropy, r.lr}) {
            out += ",";
            out += fmt(v);
        }
        out += "\n";
    }
    return out;
}

void write_rloo_metrics_csv(const RLOORunLog& log, const std::filesystem::path& path) {
    binio::write_text_file(path, rloo_metrics_to_csv(log));
}

}  // namespace rmlab
