#include "rmlab/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rmlab/binio.hpp"
#include "rmlab/diagnostics.hpp"
#include "rmlab/errors.hpp"
#include "rmlab/kernels.hpp"
#include "rmlab/rng.hpp"

namespace rmlab {

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw config_error("unknown optimizer: " + name);
}

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

LrSchedule schedule_from_string(const std::string& name) {
    if (name == "constant") return LrSchedule::constant;
    if (name == "linear_decay") return LrSchedule::linear_decay;
    throw config_error("unknown lr schedule: " + name);
}

std::string to_string(LrSchedule schedule) {
    return schedule == LrSchedule::constant ? "constant" : "linear_decay";
}

void validate(const TrainConfig& c) {
    if (c.learning_rate <= 0.0) throw config_error("learning rate must be positive");
    if (c.batch_size == 0) throw config_error("batch size must be positive");
    if (c.epochs == 0) throw config_error("epochs must be positive");
    if (c.warmup_fraction < 0.0 || c.warmup_fraction >= 1.0) {
        throw config_error("warmup fraction must lie in [0, 1)");
    }
    if (c.adam_beta1 < 0.0 || c.adam_beta1 >= 1.0 || c.adam_beta2 < 0.0 ||
        c.adam_beta2 >= 1.0) {
        throw config_error("adam betas must lie in [0, 1)");
    }
    if (c.adam_eps <= 0.0) throw config_error("adam epsilon must be positive");
}

OptimizerState OptimizerState::init_for(const RewardModelParams& params) {
    OptimizerState s;
    s.m = ParamGradients::zeros_like(params);
    s.v = ParamGradients::zeros_like(params);
    return s;
}

void optimizer_step(RewardModelParams& params, const ParamGradients& grads,
                    OptimizerState& state, const TrainConfig& config, double lr) {
    state.step += 1;
    std::size_t n = params.param_count();
    if (config.optimizer == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < n; ++i) {
            param_at(params, i) -= lr * grad_at(grads, i);
        }
        return;
    }
    double b1 = config.adam_beta1;
    double b2 = config.adam_beta2;
    double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < n; ++i) {
        double gi = grad_at(grads, i);
        double& mi = grad_at(state.m, i);
        double& vi = grad_at(state.v, i);
        mi = b1 * mi + (1.0 - b1) * gi;
        vi = b2 * vi + (1.0 - b2) * gi * gi;
        double m_hat = mi / bc1;
        double v_hat = vi / bc2;
        param_at(params, i) -= lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
}

double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
    if (step == 0 || total_steps == 0 || step > total_steps) {
        throw config_error("scheduled_lr: step out of range");
    }
    double peak = config.learning_rate;
    std::size_t warmup =
        static_cast<std::size_t>(config.warmup_fraction * static_cast<double>(total_steps));
    if (warmup > 0 && step <= warmup) {
        return peak * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (config.schedule == LrSchedule::constant || total_steps == warmup) {
        return peak;
    }
    return peak * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

TrainResult train_rm(const RewardModelParams& init, const GoldWorld& world,
                     const DatasetBundle& bundle, const TrainConfig& config,
                     const DiagHook& hook) {
    validate(config);
    if (bundle.d_train.empty()) throw config_error("training set is empty");

    TrainResult result;
    result.params = init;
    OptimizerState opt = OptimizerState::init_for(init);
    ParamGradients grads = ParamGradients::zeros_like(init);

    // Concatenated inputs are fixed for the whole run; batches gather them.
    auto all_inputs = concat_inputs(world, bundle.d_train);
    std::size_t n = bundle.d_train.size();
    std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    std::size_t total_steps = config.epochs * steps_per_epoch;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng shuffle_rng = stream(config.seed, "shuffle-epoch-" + std::to_string(epoch));
        shuffle_rng.shuffle(order);

        for (std::size_t start = 0; start < n; start += config.batch_size) {
            ++step;
            std::size_t count = std::min(config.batch_size, n - start);
            std::vector<std::vector<double>> chosen(count), rejected(count);
            for (std::size_t i = 0; i < count; ++i) {
                std::size_t idx = order[start + i];
                chosen[i] = all_inputs[2 * idx];
                rejected[i] = all_inputs[2 * idx + 1];
            }

            double loss = 0.0;
            double decomp_err = 0.0;
            try {
                std::vector<std::vector<double>> merged;
                merged.reserve(2 * count);
                for (std::size_t i = 0; i < count; ++i) {
                    merged.push_back(std::move(chosen[i]));
                    merged.push_back(std::move(rejected[i]));
                }
                auto traces = kernels::batch_forward(result.params, merged);

                BatchRewards rewards;
                rewards.chosen.resize(count);
                rewards.rejected.resize(count);
                for (std::size_t i = 0; i < count; ++i) {
                    rewards.chosen[i] = traces[2 * i].reward;
                    rewards.rejected[i] = traces[2 * i + 1].reward;
                }
                LossValueGrads lv = batch_loss_and_reward_grads(config.loss, rewards);
                loss = lv.loss;
                if (!std::isfinite(loss)) throw divergence_error("non-finite training loss");

                for (const auto& trace : traces) {
                    RewardDecomposition d = decompose(result.params, trace);
                    double err = std::abs(d.product() - trace.reward) /
                                 (std::abs(trace.reward) + 1e-9);
                    decomp_err = std::max(decomp_err, err);
                }

                std::vector<double> d_r(2 * count);
                for (std::size_t i = 0; i < count; ++i) {
                    d_r[2 * i] = lv.d_chosen[i];
                    d_r[2 * i + 1] = lv.d_rejected[i];
                }
                grads.zero();
                kernels::batch_backward_accumulate(result.params, traces, d_r, grads);
            } catch (const divergence_error&) {
                // The failing update is never applied; the parameters of the
                // last completed step stand.
                result.diverged = true;
                return result;
            }

            double lr = scheduled_lr(config, step, total_steps);
            optimizer_step(result.params, grads, opt, config, lr);
            result.steps_completed = step;

            MetricsRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            rec.train_loss = loss;
            rec.head_norm = norm2(result.params.head);
            rec.decomp_rel_err = decomp_err;
            result.log.max_decomp_rel_err =
                std::max(result.log.max_decomp_rel_err, decomp_err);
            bool wants_eval = hook && ((config.eval_every > 0 && step % config.eval_every == 0) ||
                                       step == total_steps);
            if (wants_eval) {
                rec.snapshot = hook(result.params, step);
                rec.has_snapshot = true;
            }
            result.log.records.push_back(std::move(rec));
        }
    }
    return result;
}

const char* const kMetricsCsvHeader =
    "step,epoch,train_loss,head_norm,hdist_mean,hdist_std,hdist_skew,"
    "acc_id,hnorm_id_mean,hnorm_id_std,"
    "tau_prompt,hnorm_prompt_mean,hnorm_prompt_std,"
    "tau_response,hnorm_response_mean,hnorm_response_std,"
    "tau_mutual,hnorm_mutual_mean,hnorm_mutual_std,"
    "erank_train,erank_eval";

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string metrics_to_csv(const MetricsLog& log) {
    std::string out = kMetricsCsvHeader;
    out += "\n";
    for (const auto& r : log.records) {
        out += std::to_string(r.step);
        out += ",";
        out += std::to_string(r.epoch);
        out += ",";
        out += fmt(r.train_loss);
        out += ",";
        out += fmt(r.head_norm);
        if (r.has_snapshot) {
            const DiagSnapshot& s = r.snapshot;
            for (double v : {s.hdist_mean, s.hdist_std, s.hdist_skew, s.acc_id,
                             s.hnorm_id_mean, s.hnorm_id_std, s.tau_prompt,
                             s.hnorm_prompt_mean, s.hnorm_prompt_std, s.tau_response,
                             s.hnorm_response_mean, s.hnorm_response_std, s.tau_mutual,
                             s.hnorm_mutual_mean, s.hnorm_mutual_std, s.erank_train,
                             s.erank_eval}) {
                out += ",";
                out += fmt(v);
            }
        } else {
            for (int i = 0; i < 17; ++i) out += ",";
        }
        out += "\n";
    }
    return out;
}

void write_metrics_csv(const MetricsLog& log, const std::filesystem::path& path) {
    binio::write_text_file(path, metrics_to_csv(log));
}

}  // namespace rmlab
