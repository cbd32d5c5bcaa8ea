#include <doctest.h>

#include <cstring>
#include <vector>

#include "rmlab/errors.hpp"
#include "rmlab/kernels.hpp"
#include "rmlab/rng.hpp"

using namespace rmlab;

namespace {

std::vector<std::vector<double>> random_inputs(std::size_t n, std::size_t dim,
                                               std::uint64_t seed) {
    Rng r(seed);
    std::vector<std::vector<double>> inputs(n, std::vector<double>(dim));
    for (auto& v : inputs) {
        for (double& x : v) x = r.normal();
    }
    return inputs;
}

bool same_bits(const ParamGradients& a, const ParamGradients& b) {
    for (std::size_t l = 0; l < a.weights.size(); ++l) {
        if (std::memcmp(a.weights[l].data.data(), b.weights[l].data.data(),
                        a.weights[l].data.size() * sizeof(double)) != 0) {
            return false;
        }
        if (std::memcmp(a.biases[l].data(), b.biases[l].data(),
                        a.biases[l].size() * sizeof(double)) != 0) {
            return false;
        }
    }
    return std::memcmp(a.head.data(), b.head.data(), a.head.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("batch forward agrees exactly with per-item forward") {
    RewardModelParams p = init_reward_model(12, {16, 8}, 3);
    auto inputs = random_inputs(37, 12, 41);
    auto traces = kernels::batch_forward(p, inputs);
    REQUIRE(traces.size() == inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        ForwardTrace single = forward(p, inputs[i]);
        CHECK(traces[i].reward == single.reward);
        CHECK(traces[i].hidden() == single.hidden());
    }
}

TEST_CASE("parallel and serial kernels are bit-identical") {
    RewardModelParams p = init_reward_model(10, {32, 16}, 17);
    auto inputs = random_inputs(129, 10, 91);

    auto tp = kernels::batch_forward(p, inputs);
    auto ts = kernels::serial::batch_forward(p, inputs);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        CHECK(std::memcmp(&tp[i].reward, &ts[i].reward, sizeof(double)) == 0);
    }

    auto rp = kernels::batch_rewards(p, inputs);
    auto rs = kernels::serial::batch_rewards(p, inputs);
    CHECK(std::memcmp(rp.data(), rs.data(), rp.size() * sizeof(double)) == 0);

    auto np = kernels::batch_hidden_norms(p, inputs);
    auto ns = kernels::serial::batch_hidden_norms(p, inputs);
    CHECK(std::memcmp(np.data(), ns.data(), np.size() * sizeof(double)) == 0);

    Rng r(5);
    std::vector<double> d_r(inputs.size());
    for (double& v : d_r) v = r.normal();
    d_r[3] = 0.0;
    d_r[77] = 0.0;
    ParamGradients gp = ParamGradients::zeros_like(p);
    ParamGradients gs = ParamGradients::zeros_like(p);
    kernels::batch_backward_accumulate(p, tp, d_r, gp);
    kernels::serial::batch_backward_accumulate(p, ts, d_r, gs);
    CHECK(same_bits(gp, gs));
}

TEST_CASE("batch backward equals the sum of per-item backward passes") {
    RewardModelParams p = init_reward_model(6, {8, 4}, 23);
    auto inputs = random_inputs(11, 6, 67);
    auto traces = kernels::batch_forward(p, inputs);
    Rng r(9);
    std::vector<double> d_r(inputs.size());
    for (double& v : d_r) v = r.uniform(-2.0, 2.0);

    ParamGradients batched = ParamGradients::zeros_like(p);
    kernels::batch_backward_accumulate(p, traces, d_r, batched);

    ParamGradients manual = ParamGradients::zeros_like(p);
    for (std::size_t i = 0; i < traces.size(); ++i) {
        ParamGradients gi = backward(p, traces[i], d_r[i]);
        manual.add_scaled(gi, 1.0);
    }
    for (std::size_t i = 0; i < p.param_count(); ++i) {
        CHECK(grad_at(batched, i) == grad_at(manual, i));
    }
}

TEST_CASE("kernels accept empty batches and propagate divergence") {
    RewardModelParams p = init_reward_model(4, {4}, 2);
    std::vector<std::vector<double>> empty;
    CHECK(kernels::batch_forward(p, empty).empty());
    CHECK(kernels::batch_rewards(p, empty).empty());

    RewardModelParams bad = p;
    for (double& v : bad.weights[0].data) v = 1e308;
    auto inputs = random_inputs(8, 4, 1);
    for (auto& v : inputs) {
        for (double& x : v) x = 1e8;
    }
    CHECK_THROWS_AS(kernels::batch_forward(bad, inputs), divergence_error);

    auto traces = kernels::batch_forward(p, random_inputs(3, 4, 2));
    std::vector<double> wrong_size(2, 1.0);
    ParamGradients g = ParamGradients::zeros_like(p);
    CHECK_THROWS_AS(kernels::batch_backward_accumulate(p, traces, wrong_size, g),
                    std::invalid_argument);
}
