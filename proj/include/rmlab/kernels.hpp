#pragma once

#include <span>
#include <vector>

#include "rmlab/rmcore.hpp"

namespace rmlab::kernels {

// Batch kernels parallelized with OpenMP. Each item is computed independently
// into its own buffer; reductions then run serially in item order, so every
// kernel is bit-identical to its twin in kernels::serial for any thread
// count. The serial twins are the reference implementations used by tests and
// the benchmark tool.

std::vector<ForwardTrace> batch_forward(const RewardModelParams& params,
                                        const std::vector<std::vector<double>>& inputs);

std::vector<double> batch_rewards(const RewardModelParams& params,
                                  const std::vector<std::vector<double>>& inputs);

std::vector<double> batch_hidden_norms(const RewardModelParams& params,
                                       const std::vector<std::vector<double>>& inputs);

// grads += sum_i backward(params, traces[i], d_r[i]), accumulated in item
// order. Items with d_r exactly 0 contribute nothing and are skipped.
void batch_backward_accumulate(const RewardModelParams& params,
                               const std::vector<ForwardTrace>& traces,
                               std::span<const double> d_r, ParamGradients& grads);

namespace serial {

std::vector<ForwardTrace> batch_forward(const RewardModelParams& params,
                                        const std::vector<std::vector<double>>& inputs);

std::vector<double> batch_rewards(const RewardModelParams& params,
                                  const std::vector<std::vector<double>>& inputs);

std::vector<double> batch_hidden_norms(const RewardModelParams& params,
                                       const std::vector<std::vector<double>>& inputs);

void batch_backward_accumulate(const RewardModelParams& params,
                               const std::vector<ForwardTrace>& traces,
                               std::span<const double> d_r, ParamGradients& grads);

}  // namespace serial

}  // namespace rmlab::kernels
