#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "rmlab/kernels.hpp"
#include "rmlab/rmcore.hpp"
#include "rmlab/rng.hpp"

using namespace rmlab;

namespace {

using Clock = std::chrono::steady_clock;

double bench_ms(int reps, const std::function<void()>& fn) {
    fn();  // warm up
    auto start = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    std::chrono::duration<double, std::milli> elapsed = Clock::now() - start;
    return elapsed.count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t batch = 4096;
    std::size_t input_dim = 32;
    int reps = 20;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        auto next = [&](const char* name) {
            if (++i >= argc) {
                std::fprintf(stderr, "missing value for %s\n", name);
                std::exit(2);
            }
            return std::strtoul(argv[i], nullptr, 10);
        };
        if (arg == "--batch") {
            batch = next("--batch");
        } else if (arg == "--input-dim") {
            input_dim = next("--input-dim");
        } else if (arg == "--reps") {
            reps = static_cast<int>(next("--reps"));
        } else {
            std::fprintf(stderr, "usage: bench_kernels [--batch N] [--input-dim N] [--reps N]\n");
            return arg == "--help" || arg == "-h" ? 0 : 2;
        }
    }

    RewardModelParams params = init_reward_model(input_dim, {64, 64}, 1);
    Rng rng = stream(2, "bench-inputs");
    std::vector<std::vector<double>> inputs(batch, std::vector<double>(input_dim));
    for (auto& row : inputs)
        for (double& v : row) v = rng.normal();
    std::vector<double> d_r(batch);
    for (double& v : d_r) v = rng.normal();
    std::vector<ForwardTrace> traces = kernels::serial::batch_forward(params, inputs);

    std::printf("batch=%zu input_dim=%zu widths=64,64 reps=%d\n", batch, input_dim, reps);
    std::printf("%-22s %12s %12s %8s\n", "kernel", "serial ms", "openmp ms", "speedup");

    struct Pair {
        const char* name;
        std::function<void()> serial;
        std::function<void()> parallel;
    };
    const std::vector<Pair> pairs = {
        {"batch_forward", [&] { kernels::serial::batch_forward(params, inputs); },
         [&] { kernels::batch_forward(params, inputs); }},
        {"batch_rewards", [&] { kernels::serial::batch_rewards(params, inputs); },
         [&] { kernels::batch_rewards(params, inputs); }},
        {"batch_hidden_norms", [&] { kernels::serial::batch_hidden_norms(params, inputs); },
         [&] { kernels::batch_hidden_norms(params, inputs); }},
        {"batch_backward",
         [&] {
             ParamGradients g = ParamGradients::zeros_like(params);
             kernels::serial::batch_backward_accumulate(params, traces, d_r, g);
         },
         [&] {
             ParamGradients g = ParamGradients::zeros_like(params);
             kernels::batch_backward_accumulate(params, traces, d_r, g);
         }},
    };

    for (const Pair& p : pairs) {
        double serial_ms = bench_ms(reps, p.serial);
        double parallel_ms = bench_ms(reps, p.parallel);
        std::printf("%-22s %12.3f %12.3f %7.2fx\n", p.name, serial_ms, parallel_ms,
                    serial_ms / parallel_ms);
    }

    std::vector<double> a = kernels::serial::batch_rewards(params, inputs);
    std::vector<double> b = kernels::batch_rewards(params, inputs);
    std::printf("rewards bit-identical: %s\n", a == b ? "yes" : "NO");
    return a == b ? 0 : 1;
}
