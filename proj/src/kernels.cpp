#include "rmlab/kernels.hpp"

#include <cstdint>
#include <exception>
#include <stdexcept>

#include "rmlab/errors.hpp"

namespace rmlab::kernels {

namespace {

// Run fn(i) for i in [0, n), optionally across OpenMP threads. The first
// exception thrown inside the loop is rethrown on the calling thread.
template <typename Fn>
void parallel_items(std::size_t n, bool parallel, Fn&& fn) {
    std::exception_ptr error = nullptr;
#pragma omp parallel for schedule(static) if (parallel)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical
            {
                if (!error) error = std::current_exception();
            }
        }
    }
    if (error) std::rethrow_exception(error);
}

std::vector<ForwardTrace> forward_impl(const RewardModelParams& params,
                                       const std::vector<std::vector<double>>& inputs,
                                       bool parallel) {
    std::vector<ForwardTrace> traces(inputs.size());
    parallel_items(inputs.size(), parallel,
                   [&](std::size_t i) { traces[i] = forward(params, inputs[i]); });
    return traces;
}

std::vector<double> rewards_impl(const RewardModelParams& params,
                                 const std::vector<std::vector<double>>& inputs,
                                 bool parallel) {
    std::vector<double> rewards(inputs.size());
    parallel_items(inputs.size(), parallel,
                   [&](std::size_t i) { rewards[i] = forward(params, inputs[i]).reward; });
    return rewards;
}

std::vector<double> hidden_norms_impl(const RewardModelParams& params,
                                      const std::vector<std::vector<double>>& inputs,
                                      bool parallel) {
    std::vector<double> norms(inputs.size());
    parallel_items(inputs.size(), parallel, [&](std::size_t i) {
        norms[i] = norm2(forward(params, inputs[i]).hidden());
    });
    return norms;
}

void backward_impl(const RewardModelParams& params, const std::vector<ForwardTrace>& traces,
                   std::span<const double> d_r, ParamGradients& grads, bool parallel) {
    if (traces.size() != d_r.size()) {
        throw std::invalid_argument("batch_backward_accumulate: size mismatch");
    }
    std::vector<ParamGradients> per_item(traces.size());
    parallel_items(traces.size(), parallel, [&](std::size_t i) {
        if (d_r[i] == 0.0) return;
        per_item[i] = ParamGradients::zeros_like(params);
        backward_accumulate(params, traces[i], d_r[i], per_item[i]);
    });
    for (std::size_t i = 0; i < traces.size(); ++i) {
        if (d_r[i] == 0.0) continue;
        grads.add_scaled(per_item[i], 1.0);
    }
}

}  // namespace

std::vector<ForwardTrace> batch_forward(const RewardModelParams& params,
                                        const std::vector<std::vector<double>>& inputs) {
    return forward_impl(params, inputs, true);
}

std::vector<double> batch_rewards(const RewardModelParams& params,
                                  const std::vector<std::vector<double>>& inputs) {
    return rewards_impl(params, inputs, true);
}

std::vector<double> batch_hidden_norms(const RewardModelParams& params,
                                       const std::vector<std::vector<double>>& inputs) {
    return hidden_norms_impl(params, inputs, true);
}

void batch_backward_accumulate(const RewardModelParams& params,
                               const std::vector<ForwardTrace>& traces,
                               std::span<const double> d_r, ParamGradients& grads) {
    backward_impl(params, traces, d_r, grads, true);
}

namespace serial {

std::vector<ForwardTrace> batch_forward(const RewardModelParams& params,
                                        const std::vector<std::vector<double>>& inputs) {
    return forward_impl(params, inputs, false);
}

std::vector<double> batch_rewards(const RewardModelParams& params,
                                  const std::vector<std::vector<double>>& inputs) {
    return rewards_impl(params, inputs, false);
}

std::vector<double> batch_hidden_norms(const RewardModelParams& params,
                                       const std::vector<std::vector<double>>& inputs) {
    return hidden_norms_impl(params, inputs, false);
}

void batch_backward_accumulate(const RewardModelParams& params,
                               const std::vector<ForwardTrace>& traces,
                               std::span<const double> d_r, ParamGradients& grads) {
    backward_impl(params, traces, d_r, grads, false);
}

}  // namespace serial

}  // namespace rmlab::kernels
