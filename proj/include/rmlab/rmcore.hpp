#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rmlab/numkit.hpp"

namespace rmlab {

// Multi-layer tanh body with a bias-free linear head producing a scalar
// reward. Parameters are stored densely; the canonical flat order (used by
// checkpoints and finite-difference sweeps) is weights[0], biases[0],
// weights[1], biases[1], ..., head.
struct RewardModelParams {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    std::vector<double> head;

    std::size_t head_width() const { return hidden_widths.empty() ? 0 : hidden_widths.back(); }
    std::size_t param_count() const;
};

// Gradients (or optimizer moments) shaped like RewardModelParams.
struct ParamGradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    std::vector<double> head;

    static ParamGradients zeros_like(const RewardModelParams& p);
    void zero();
    void add_scaled(const ParamGradients& other, double scale);
    double squared_norm() const;
};

// Intermediate activations kept for backpropagation and diagnostics.
struct ForwardTrace {
    std::vector<double> input;
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> act;
    double reward = 0.0;

    const std::vector<double>& hidden() const { return act.back(); }
};

// Scalar reward factored as head_norm * hidden_norm * cos_psi.
struct RewardDecomposition {
    double head_norm = 0.0;
    double hidden_norm = 0.0;
    double cos_psi = 0.0;

    double product() const { return head_norm * hidden_norm * cos_psi; }
};

// Body weights are N(0, 1/fan_in), biases zero, head entries N(0, 1/(H+1))
// so the expected head norm is about 1. Hidden widths must be at least 2.
RewardModelParams init_reward_model(std::size_t input_dim,
                                    std::vector<std::size_t> hidden_widths,
                                    std::uint64_t seed);

// Forward pass over an already-concatenated input vector. Throws
// divergence_error when any intermediate value is non-finite.
ForwardTrace forward(const RewardModelParams& params, std::span<const double> input);

// Forward pass over concat(x, y).
ForwardTrace forward_concat(const RewardModelParams& params, std::span<const double> x,
                            std::span<const double> y);

// Reward-only fast path (no trace retained).
double reward_of(const RewardModelParams& params, std::span<const double> input);

// Throws degenerate_input_error when the head or hidden vector has zero norm.
RewardDecomposition decompose(const RewardModelParams& params, const ForwardTrace& trace);

// Accumulate d(reward * d_r)/d(theta) into grads.
void backward_accumulate(const RewardModelParams& params, const ForwardTrace& trace,
                         double d_r, ParamGradients& grads);

ParamGradients backward(const RewardModelParams& params, const ForwardTrace& trace,
                        double d_r);

// Flat parameter access in canonical order, for finite differences and
// optimizer loops.
double& param_at(RewardModelParams& params, std::size_t index);
double& grad_at(ParamGradients& grads, std::size_t index);
double grad_at(const ParamGradients& grads, std::size_t index);

// Binary checkpoint with magic tag (reward models use "RMCK", policies
// "PLCY"). Bit-exact round trip.
void save_checkpoint(const RewardModelParams& params, const std::filesystem::path& path,
                     const char (&magic)[5] = "RMCK");
RewardModelParams load_checkpoint(const std::filesystem::path& path,
                                  const char (&magic)[5] = "RMCK");

}  // namespace rmlab
