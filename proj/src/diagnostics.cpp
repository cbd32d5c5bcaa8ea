#include "rmlab/diagnostics.hpp"

#include <cmath>
#include <iterator>

#include "rmlab/errors.hpp"
#include "rmlab/kernels.hpp"

namespace rmlab {

Scorer make_scorer(const RewardModelParams& params) {
    return [&params](std::span<const double> x, std::span<const double> y) {
        return forward_concat(params, x, y).reward;
    };
}

Scorer make_gold_scorer(const GoldWorld& world) {
    return [&world](std::span<const double> x, std::span<const double> y) {
        return gold_score(world, x, y);
    };
}

std::vector<std::vector<double>> concat_inputs(const GoldWorld& world,
                                               std::span<const PreferenceTriplet> triplets) {
    std::vector<std::vector<double>> inputs;
    inputs.reserve(2 * triplets.size());
    for (const auto& t : triplets) {
        const auto& x = world.prompt_by_id(t.prompt_id).x;
        std::vector<double> zw(x.size() + t.y_w.size());
        std::copy(x.begin(), x.end(), zw.begin());
        std::copy(t.y_w.begin(), t.y_w.end(), zw.begin() + static_cast<std::ptrdiff_t>(x.size()));
        inputs.push_back(std::move(zw));
        std::vector<double> zl(x.size() + t.y_l.size());
        std::copy(x.begin(), x.end(), zl.begin());
        std::copy(t.y_l.begin(), t.y_l.end(), zl.begin() + static_cast<std::ptrdiff_t>(x.size()));
        inputs.push_back(std::move(zl));
    }
    return inputs;
}

std::vector<std::vector<double>> concat_inputs(const GoldWorld& world,
                                               std::span<const RankedGroup> groups) {
    std::vector<std::vector<double>> inputs;
    inputs.reserve(4 * groups.size());
    for (const auto& g : groups) {
        const auto& x = world.prompt_by_id(g.prompt_id).x;
        for (const auto& y : g.responses) {
            std::vector<double> z(x.size() + y.size());
            std::copy(x.begin(), x.end(), z.begin());
            std::copy(y.begin(), y.end(), z.begin() + static_cast<std::ptrdiff_t>(x.size()));
            inputs.push_back(std::move(z));
        }
    }
    return inputs;
}

double eval_accuracy(const Scorer& scorer, const GoldWorld& world,
                     std::span<const PreferenceTriplet> triplets) {
    if (triplets.empty()) throw std::invalid_argument("eval_accuracy: empty dataset");
    double hits = 0.0;
    for (const auto& t : triplets) {
        const auto& x = world.prompt_by_id(t.prompt_id).x;
        double rw = scorer(x, t.y_w);
        double rl = scorer(x, t.y_l);
        if (rw > rl) {
            hits += 1.0;
        } else if (rw == rl) {
            hits += 0.5;
        }
    }
    return hits / static_cast<double>(triplets.size());
}

double eval_accuracy(const RewardModelParams& params, const GoldWorld& world,
                     std::span<const PreferenceTriplet> triplets) {
    if (triplets.empty()) throw std::invalid_argument("eval_accuracy: empty dataset");
    auto rewards = kernels::batch_rewards(params, concat_inputs(world, triplets));
    double hits = 0.0;
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        double rw = rewards[2 * i];
        double rl = rewards[2 * i + 1];
        if (rw > rl) {
            hits += 1.0;
        } else if (rw == rl) {
            hits += 0.5;
        }
    }
    return hits / static_cast<double>(triplets.size());
}

namespace {

double mean_group_tau(std::span<const RankedGroup> groups,
                      const std::vector<double>& model_scores) {
    double sum = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        std::vector<double> model(model_scores.begin() + static_cast<std::ptrdiff_t>(4 * g),
                                  model_scores.begin() + static_cast<std::ptrdiff_t>(4 * g + 4));
        std::vector<double> gold(groups[g].gold.begin(), groups[g].gold.end());
        sum += kendall_tau(model, gold);
    }
    return sum / static_cast<double>(groups.size());
}

}  // namespace

double eval_tau(const Scorer& scorer, const GoldWorld& world,
                std::span<const RankedGroup> groups) {
    if (groups.empty()) throw std::invalid_argument("eval_tau: empty dataset");
    std::vector<double> scores;
    scores.reserve(4 * groups.size());
    for (const auto& g : groups) {
        const auto& x = world.prompt_by_id(g.prompt_id).x;
        for (const auto& y : g.responses) scores.push_back(scorer(x, y));
    }
    return mean_group_tau(groups, scores);
}

double eval_tau(const RewardModelParams& params, const GoldWorld& world,
                std::span<const RankedGroup> groups) {
    if (groups.empty()) throw std::invalid_argument("eval_tau: empty dataset");
    auto scores = kernels::batch_rewards(params, concat_inputs(world, groups));
    return mean_group_tau(groups, scores);
}

EvalReport eval_all(const RewardModelParams& params, const GoldWorld& world,
                    const DatasetBundle& bundle) {
    EvalReport report;
    report.acc_id = eval_accuracy(params, world, bundle.d_id);
    report.tau_prompt = eval_tau(params, world, bundle.d_prompt_ood);
    report.tau_response = eval_tau(params, world, bundle.d_response_ood);
    report.tau_mutual = eval_tau(params, world, bundle.d_mutual_ood);
    return report;
}

NormDispersionStats norm_dispersion(const RewardModelParams& params,
                                    const std::vector<std::vector<double>>& inputs) {
    NormDispersionStats stats;
    auto norms = kernels::batch_hidden_norms(params, inputs);
    stats.norms = moments(norms);
    return stats;
}

HiddenDistanceStats hidden_distance_stats(const RewardModelParams& params,
                                          const GoldWorld& world,
                                          std::span<const PreferenceTriplet> triplets) {
    if (triplets.empty()) throw std::invalid_argument("hidden_distance_stats: empty dataset");
    auto traces = kernels::batch_forward(params, concat_inputs(world, triplets));
    std::vector<double> distances(triplets.size());
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const auto& hw = traces[2 * i].hidden();
        const auto& hl = traces[2 * i + 1].hidden();
        double d2 = 0.0;
        for (std::size_t j = 0; j < hw.size(); ++j) {
            double d = hw[j] - hl[j];
            d2 += d * d;
        }
        distances[i] = std::sqrt(d2);
    }
    HiddenDistanceStats stats;
    stats.distances = moments(distances);
    return stats;
}

double head_norm(const RewardModelParams& params) {
    return norm2(params.head);
}

double effective_rank(const SingularSpectrum& spectrum) {
    double total = 0.0;
    for (double s : spectrum.values) {
        if (s < 0.0) throw std::invalid_argument("effective_rank: negative singular value");
        total += s;
    }
    if (total == 0.0) throw degenerate_input_error("effective_rank: all-zero spectrum");
    double entropy = 0.0;
    for (double s : spectrum.values) {
        if (s == 0.0) continue;
        double p = s / total;
        entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

double effective_rank(const RewardModelParams& params,
                      const std::vector<std::vector<double>>& inputs) {
    if (inputs.empty()) throw std::invalid_argument("effective_rank: empty input set");
    auto traces = kernels::batch_forward(params, inputs);
    Matrix h(inputs.size(), params.head_width());
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto& hi = traces[i].hidden();
        std::copy(hi.begin(), hi.end(), h.row(i).begin());
    }
    return effective_rank(singular_values(h));
}

ErankReport erank_gap(const RewardModelParams& params, const GoldWorld& world,
                      const DatasetBundle& bundle) {
    ErankReport report;
    report.erank_train = effective_rank(params, concat_inputs(world, bundle.d_train));
    // Eval side pools all three held-out sets so the matrix covers every
    // unseen prompt/generator combination, mirroring a mixed benchmark.
    auto eval_inputs = concat_inputs(world, bundle.d_prompt_ood);
    auto more = concat_inputs(world, bundle.d_response_ood);
    eval_inputs.insert(eval_inputs.end(), std::make_move_iterator(more.begin()),
                       std::make_move_iterator(more.end()));
    more = concat_inputs(world, bundle.d_mutual_ood);
    eval_inputs.insert(eval_inputs.end(), std::make_move_iterator(more.begin()),
                       std::make_move_iterator(more.end()));
    report.erank_eval = effective_rank(params, eval_inputs);
    report.gap = report.erank_eval - report.erank_train;
    return report;
}

}  // namespace rmlab
