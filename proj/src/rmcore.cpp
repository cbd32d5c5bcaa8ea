#include "rmlab/rmcore.hpp"

#include <algorithm>
#include <cmath>

#include "rmlab/binio.hpp"
#include "rmlab/errors.hpp"
#include "rmlab/rng.hpp"

namespace rmlab {

std::size_t RewardModelParams::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        n += weights[l].data.size() + biases[l].size();
    }
    return n + head.size();
}

ParamGradients ParamGradients::zeros_like(const RewardModelParams& p) {
    ParamGradients g;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        g.weights.emplace_back(p.weights[l].rows, p.weights[l].cols);
        g.biases.emplace_back(p.biases[l].size(), 0.0);
    }
    g.head.assign(p.head.size(), 0.0);
    return g;
}

void ParamGradients::zero() {
    for (auto& w : weights) std::fill(w.data.begin(), w.data.end(), 0.0);
    for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
    std::fill(head.begin(), head.end(), 0.0);
}

void ParamGradients::add_scaled(const ParamGradients& other, double scale) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        for (std::size_t i = 0; i < weights[l].data.size(); ++i) {
            weights[l].data[i] += scale * other.weights[l].data[i];
        }
        for (std::size_t i = 0; i < biases[l].size(); ++i) {
            biases[l][i] += scale * other.biases[l][i];
        }
    }
    for (std::size_t i = 0; i < head.size(); ++i) head[i] += scale * other.head[i];
}

double ParamGradients::squared_norm() const {
    double s = 0.0;
    for (const auto& w : weights) {
        for (double v : w.data) s += v * v;
    }
    for (const auto& b : biases) {
        for (double v : b) s += v * v;
    }
    for (double v : head) s += v * v;
    return s;
}

RewardModelParams init_reward_model(std::size_t input_dim,
                                    std::vector<std::size_t> hidden_widths,
                                    std::uint64_t seed) {
    if (input_dim == 0) throw config_error("input dimension must be positive");
    if (hidden_widths.empty()) throw config_error("at least one hidden layer is required");
    for (std::size_t w : hidden_widths) {
        if (w < 2) throw config_error("hidden widths must be at least 2");
    }

    RewardModelParams p;
    p.input_dim = input_dim;
    p.hidden_widths = std::move(hidden_widths);

    Rng rng = stream(seed, "rm-init");
    std::size_t fan_in = input_dim;
    for (std::size_t w : p.hidden_widths) {
        Matrix m(w, fan_in);
        double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : m.data) v = scale * rng.normal();
        p.weights.push_back(std::move(m));
        p.biases.emplace_back(w, 0.0);
        fan_in = w;
    }
    std::size_t h = p.head_width();
    double head_scale = 1.0 / std::sqrt(static_cast<double>(h + 1));
    p.head.resize(h);
    for (double& v : p.head) v = head_scale * rng.normal();
    return p;
}

ForwardTrace forward(const RewardModelParams& params, std::span<const double> input) {
    if (input.size() != params.input_dim) throw config_error("forward input dimension mismatch");
    ForwardTrace t;
    t.input.assign(input.begin(), input.end());
    const std::vector<double>* current = &t.input;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        std::vector<double> pre(params.hidden_widths[l]);
        matvec(params.weights[l], *current, pre);
        for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += params.biases[l][i];
        std::vector<double> act(pre.size());
        for (std::size_t i = 0; i < pre.size(); ++i) {
            if (!std::isfinite(pre[i])) throw divergence_error("non-finite pre-activation");
            act[i] = std::tanh(pre[i]);
        }
        t.pre.push_back(std::move(pre));
        t.act.push_back(std::move(act));
        current = &t.act.back();
    }
    t.reward = dot(params.head, *current);
    if (!std::isfinite(t.reward)) throw divergence_error("non-finite reward");
    return t;
}

ForwardTrace forward_concat(const RewardModelParams& params, std::span<const double> x,
                            std::span<const double> y) {
    if (x.size() + y.size() != params.input_dim) {
        throw config_error("forward input dimension mismatch");
    }
    std::vector<double> z(params.input_dim);
    std::copy(x.begin(), x.end(), z.begin());
    std::copy(y.begin(), y.end(), z.begin() + static_cast<std::ptrdiff_t>(x.size()));
    return forward(params, z);
}

double reward_of(const RewardModelParams& params, std::span<const double> input) {
    return forward(params, input).reward;
}

RewardDecomposition decompose(const RewardModelParams& params, const ForwardTrace& trace) {
    RewardDecomposition d;
    d.head_norm = norm2(params.head);
    d.hidden_norm = norm2(trace.hidden());
    if (d.head_norm == 0.0) throw degenerate_input_error("zero head norm in decomposition");
    if (d.hidden_norm == 0.0) throw degenerate_input_error("zero hidden norm in decomposition");
    d.cos_psi = trace.reward / (d.head_norm * d.hidden_norm);
    return d;
}

void backward_accumulate(const RewardModelParams& params, const ForwardTrace& trace,
                         double d_r, ParamGradients& grads) {
    std::size_t layers = params.weights.size();
    // Head.
    const std::vector<double>& h = trace.hidden();
    for (std::size_t i = 0; i < h.size(); ++i) grads.head[i] += d_r * h[i];

    std::vector<double> d_act(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) d_act[i] = d_r * params.head[i];

    for (std::size_t l = layers; l-- > 0;) {
        const std::vector<double>& act = trace.act[l];
        const std::vector<double>& below = (l == 0) ? trace.input : trace.act[l - 1];
        std::vector<double> d_pre(act.size());
        for (std::size_t i = 0; i < act.size(); ++i) {
            d_pre[i] = d_act[i] * (1.0 - act[i] * act[i]);
        }
        Matrix& gw = grads.weights[l];
        for (std::size_t i = 0; i < gw.rows; ++i) {
            axpy(d_pre[i], below, gw.row(i));
            grads.biases[l][i] += d_pre[i];
        }
        if (l > 0) {
            d_act.assign(below.size(), 0.0);
            matvec_transposed(params.weights[l], d_pre, d_act);
        }
    }
}

ParamGradients backward(const RewardModelParams& params, const ForwardTrace& trace,
                        double d_r) {
    ParamGradients g = ParamGradients::zeros_like(params);
    backward_accumulate(params, trace, d_r, g);
    return g;
}

namespace {

template <typename Params>
auto& flat_at(Params& p, std::size_t index) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        if (index < p.weights[l].data.size()) return p.weights[l].data[index];
        index -= p.weights[l].data.size();
        if (index < p.biases[l].size()) return p.biases[l][index];
        index -= p.biases[l].size();
    }
    if (index < p.head.size()) return p.head[index];
    throw config_error("flat parameter index out of range");
}

}  // namespace

double& param_at(RewardModelParams& params, std::size_t index) {
    return flat_at(params, index);
}

double& grad_at(ParamGradients& grads, std::size_t index) {
    return flat_at(grads, index);
}

double grad_at(const ParamGradients& grads, std::size_t index) {
    return flat_at(grads, index);
}

void save_checkpoint(const RewardModelParams& params, const std::filesystem::path& path,
                     const char (&magic)[5]) {
    std::vector<std::uint8_t> buf;
    binio::put_magic(buf, magic);
    binio::put_u32(buf, 1);
    binio::put_u64(buf, params.input_dim);
    binio::put_u64(buf, params.hidden_widths.size());
    for (std::size_t w : params.hidden_widths) binio::put_u64(buf, w);
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        for (double v : params.weights[l].data) binio::put_f64(buf, v);
        for (double v : params.biases[l]) binio::put_f64(buf, v);
    }
    for (double v : params.head) binio::put_f64(buf, v);
    binio::write_file(path, buf);
}

RewardModelParams load_checkpoint(const std::filesystem::path& path, const char (&magic)[5]) {
    auto bytes = binio::read_file(path);
    binio::Reader r(bytes);
    r.expect_magic(magic);
    std::uint32_t version = r.get_u32();
    if (version != 1) throw format_error("unsupported checkpoint version");
    RewardModelParams p;
    p.input_dim = r.get_u64();
    std::size_t layers = r.get_u64();
    if (layers == 0 || layers > 64) throw format_error("implausible layer count");
    p.hidden_widths.resize(layers);
    for (auto& w : p.hidden_widths) w = r.get_u64();
    std::size_t fan_in = p.input_dim;
    for (std::size_t w : p.hidden_widths) {
        Matrix m(w, fan_in);
        for (double& v : m.data) v = r.get_f64();
        p.weights.push_back(std::move(m));
        std::vector<double> b(w);
        for (double& v : b) v = r.get_f64();
        p.biases.push_back(std::move(b));
        fan_in = w;
    }
    p.head.resize(p.head_width());
    for (double& v : p.head) v = r.get_f64();
    if (!r.done()) throw format_error("trailing bytes in checkpoint");
    return p;
}

}  // namespace rmlab
