#include "rmlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rmlab/errors.hpp"
#include "rmlab/kernels.hpp"
#include "rmlab/numkit.hpp"

namespace rmlab {

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "bt") return LossKind::bt;
    if (name == "bt-bsr") return LossKind::bt_bsr;
    if (name == "bt-norm") return LossKind::bt_norm;
    if (name == "bt-hinge") return LossKind::bt_hinge;
    if (name == "bt-dr") return LossKind::bt_dr;
    throw config_error("unknown loss kind: " + name);
}

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::bt: return "bt";
        case LossKind::bt_bsr: return "bt-bsr";
        case LossKind::bt_norm: return "bt-norm";
        case LossKind::bt_hinge: return "bt-hinge";
        case LossKind::bt_dr: return "bt-dr";
    }
    throw config_error("invalid loss kind value");
}

BsrVariant bsr_variant_from_string(const std::string& name) {
    if (name == "squared_mean") return BsrVariant::squared_mean;
    if (name == "mean_of_squares") return BsrVariant::mean_of_squares;
    throw config_error("unknown bsr variant: " + name);
}

std::string to_string(BsrVariant variant) {
    return variant == BsrVariant::squared_mean ? "squared_mean" : "mean_of_squares";
}

double bt_loss(double r_w, double r_l) {
    return -log_sigmoid(r_w - r_l);
}

double bt_norm_loss(double r_w, double r_l, double eps) {
    double s = std::sqrt(r_w * r_w + r_l * r_l + eps);
    return -log_sigmoid((r_w - r_l) / s);
}

double hinge_loss(double r_w, double r_l, double margin) {
    return std::max(0.0, margin - (r_w - r_l));
}

double bt_dr_loss(double r_w, double r_l) {
    return -log_sigmoid(r_w - r_l) - log_sigmoid(r_w) - log_sigmoid(-r_l);
}

double bsr_penalty(const BatchRewards& batch, BsrVariant variant) {
    if (batch.chosen.empty()) throw std::invalid_argument("bsr_penalty: empty batch");
    if (batch.chosen.size() != batch.rejected.size()) {
        throw std::invalid_argument("bsr_penalty: misaligned batch");
    }
    double total = static_cast<double>(2 * batch.chosen.size());
    if (variant == BsrVariant::squared_mean) {
        double sum = 0.0;
        for (double r : batch.chosen) sum += r;
        for (double r : batch.rejected) sum += r;
        double mean = sum / total;
        return mean * mean;
    }
    double sum_sq = 0.0;
    for (double r : batch.chosen) sum_sq += r * r;
    for (double r : batch.rejected) sum_sq += r * r;
    return sum_sq / total;
}

LossValueGrads batch_loss_and_reward_grads(const LossSpec& spec, const BatchRewards& batch) {
    std::size_t n = batch.chosen.size();
    if (n == 0) throw std::invalid_argument("batch_loss_and_reward_grads: empty batch");
    if (batch.rejected.size() != n) {
        throw std::invalid_argument("batch_loss_and_reward_grads: misaligned batch");
    }

    LossValueGrads out;
    out.d_chosen.assign(n, 0.0);
    out.d_rejected.assign(n, 0.0);
    double inv_n = 1.0 / static_cast<double>(n);
    double loss_sum = 0.0;

    for (std::size_t i = 0; i < n; ++i) {
        double r_w = batch.chosen[i];
        double r_l = batch.rejected[i];
        double delta = r_w - r_l;
        switch (spec.kind) {
            case LossKind::bt:
            case LossKind::bt_bsr: {
                loss_sum += -log_sigmoid(delta);
                double g = sigmoid(-delta) * inv_n;
                out.d_chosen[i] = -g;
                out.d_rejected[i] = g;
                break;
            }
            case LossKind::bt_norm: {
                double s = std::sqrt(r_w * r_w + r_l * r_l + spec.norm_eps);
                double u = delta / s;
                loss_sum += -log_sigmoid(u);
                double dl_du = -sigmoid(-u);
                double s3 = s * s * s;
                double du_dw = 1.0 / s - delta * r_w / s3;
                double du_dl = -1.0 / s - delta * r_l / s3;
                out.d_chosen[i] = dl_du * du_dw * inv_n;
                out.d_rejected[i] = dl_du * du_dl * inv_n;
                break;
            }
            case LossKind::bt_hinge: {
                loss_sum += std::max(0.0, spec.margin - delta);
                if (delta < spec.margin) {
                    out.d_chosen[i] = -inv_n;
                    out.d_rejected[i] = inv_n;
                }
                break;
            }
            case LossKind::bt_dr: {
                loss_sum += -log_sigmoid(delta) - log_sigmoid(r_w) - log_sigmoid(-r_l);
                out.d_chosen[i] = (-sigmoid(-delta) - sigmoid(-r_w)) * inv_n;
                out.d_rejected[i] = (sigmoid(-delta) + sigmoid(r_l)) * inv_n;
                break;
            }
        }
    }
    out.loss = loss_sum * inv_n;

    // lambda == 0 must reproduce the plain bt path bitwise, so the penalty
    // term is skipped entirely rather than multiplied by zero.
    if (spec.kind == LossKind::bt_bsr && spec.lambda != 0.0) {
        out.loss += spec.lambda * bsr_penalty(batch, spec.bsr_variant);
        double total = static_cast<double>(2 * n);
        if (spec.bsr_variant == BsrVariant::squared_mean) {
            double sum = 0.0;
            for (double r : batch.chosen) sum += r;
            for (double r : batch.rejected) sum += r;
            double mean = sum / total;
            double g = spec.lambda * mean * inv_n;
            for (std::size_t i = 0; i < n; ++i) {
                out.d_chosen[i] += g;
                out.d_rejected[i] += g;
            }
        } else {
            double coeff = spec.lambda * inv_n;
            for (std::size_t i = 0; i < n; ++i) {
                out.d_chosen[i] += coeff * batch.chosen[i];
                out.d_rejected[i] += coeff * batch.rejected[i];
            }
        }
    }
    return out;
}

double loss_param_gradients(const LossSpec& spec, const RewardModelParams& params,
                            const std::vector<std::vector<double>>& chosen_inputs,
                            const std::vector<std::vector<double>>& rejected_inputs,
                            ParamGradients& grads) {
    std::size_t n = chosen_inputs.size();
    if (rejected_inputs.size() != n) {
        throw std::invalid_argument("loss_param_gradients: misaligned inputs");
    }
    // Interleave chosen and rejected so one kernel pass covers the batch.
    std::vector<std::vector<double>> all;
    all.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        all.push_back(chosen_inputs[i]);
        all.push_back(rejected_inputs[i]);
    }
    auto traces = kernels::batch_forward(params, all);

    BatchRewards rewards;
    rewards.chosen.resize(n);
    rewards.rejected.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        rewards.chosen[i] = traces[2 * i].reward;
        rewards.rejected[i] = traces[2 * i + 1].reward;
    }
    LossValueGrads lv = batch_loss_and_reward_grads(spec, rewards);

    std::vector<double> d_r(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        d_r[2 * i] = lv.d_chosen[i];
        d_r[2 * i + 1] = lv.d_rejected[i];
    }
    kernels::batch_backward_accumulate(params, traces, d_r, grads);
    return lv.loss;
}

GradCheckReport grad_check_full(const LossSpec& spec, const RewardModelParams& params,
                                const std::vector<std::vector<double>>& chosen_inputs,
                                const std::vector<std::vector<double>>& rejected_inputs,
                                double eps) {
    RewardModelParams work = params;
    ParamGradients analytic = ParamGradients::zeros_like(work);
    loss_param_gradients(spec, work, chosen_inputs, rejected_inputs, analytic);

    auto loss_only = [&]() {
        std::size_t n = chosen_inputs.size();
        BatchRewards rewards;
        rewards.chosen.resize(n);
        rewards.rejected.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            rewards.chosen[i] = reward_of(work, chosen_inputs[i]);
            rewards.rejected[i] = reward_of(work, rejected_inputs[i]);
        }
        return batch_loss_and_reward_grads(spec, rewards).loss;
    };

    GradCheckReport report;
    report.params_checked = work.param_count();
    for (std::size_t i = 0; i < report.params_checked; ++i) {
        double saved = param_at(work, i);
        param_at(work, i) = saved + eps;
        double up = loss_only();
        param_at(work, i) = saved - eps;
        double down = loss_only();
        param_at(work, i) = saved;
        double fd = (up - down) / (2.0 * eps);
        double a = grad_at(analytic, i);
        double denom = std::max({std::abs(fd), std::abs(a), 1e-6});
        report.max_rel_error = std::max(report.max_rel_error, std::abs(fd - a) / denom);
    }
    return report;
}

}  // namespace rmlab
