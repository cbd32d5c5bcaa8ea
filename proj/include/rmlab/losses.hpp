#pragma once

#include <span>
#include <string>
#include <vector>

#include "rmlab/rmcore.hpp"

namespace rmlab {

enum class LossKind { bt, bt_bsr, bt_norm, bt_hinge, bt_dr };

// The batch regularizer has two forms: squared_mean penalizes the squared
// mean of all batch rewards (the default), mean_of_squares penalizes the mean
// of squared rewards, whose per-reward gradient is proportional to the reward
// itself rather than to the batch mean.
enum class BsrVariant { squared_mean, mean_of_squares };

struct LossSpec {
    LossKind kind = LossKind::bt;
    double lambda = 1e-3;
    double margin = 1.0;
    double norm_eps = 1e-8;
    BsrVariant bsr_variant = BsrVariant::squared_mean;
};

LossKind loss_kind_from_string(const std::string& name);
std::string to_string(LossKind kind);
BsrVariant bsr_variant_from_string(const std::string& name);
std::string to_string(BsrVariant variant);

// Rewards of a batch of preference pairs, index-aligned.
struct BatchRewards {
    std::vector<double> chosen;
    std::vector<double> rejected;
};

// Batch-mean loss and its gradient with respect to each reward.
struct LossValueGrads {
    double loss = 0.0;
    std::vector<double> d_chosen;
    std::vector<double> d_rejected;
};

// Per-pair losses.
double bt_loss(double r_w, double r_l);
double bt_norm_loss(double r_w, double r_l, double eps);
double hinge_loss(double r_w, double r_l, double margin);
double bt_dr_loss(double r_w, double r_l);

// Unweighted batch penalty over all 2|B| rewards of the batch.
double bsr_penalty(const BatchRewards& batch, BsrVariant variant);

// Mean loss over the batch plus, for bt_bsr, lambda times the batch penalty.
// With lambda == 0 the bt_bsr path is exactly the bt path, bit for bit.
LossValueGrads batch_loss_and_reward_grads(const LossSpec& spec, const BatchRewards& batch);

// End-to-end analytic gradient of the batch loss with respect to every model
// parameter, compared against central finite differences of the full loss.
struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t params_checked = 0;
};

GradCheckReport grad_check_full(const LossSpec& spec, const RewardModelParams& params,
                                const std::vector<std::vector<double>>& chosen_inputs,
                                const std::vector<std::vector<double>>& rejected_inputs,
                                double eps = 1e-5);

// Analytic parameter gradient of the batch loss (shared by training and the
// gradient checker). Returns the loss; accumulates into grads.
double loss_param_gradients(const LossSpec& spec, const RewardModelParams& params,
                            const std::vector<std::vector<double>>& chosen_inputs,
                            const std::vector<std::vector<double>>& rejected_inputs,
                            ParamGradients& grads);

}  // namespace rmlab
