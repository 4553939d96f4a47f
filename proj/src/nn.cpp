#include "fedagg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedagg/errors.hpp"
#include "fedagg/random.hpp"

namespace fedagg::nn {

namespace {

double activate(Activation a, double v) {
    switch (a) {
        case Activation::relu: return v > 0.0 ? v : 0.0;
        case Activation::tanh: return std::tanh(v);
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-v));
        case Activation::identity: return v;
    }
    return v;
}

// Derivative expressed through pre- and post-activation values.
double activation_slope(Activation a, double pre, double post) {
    switch (a) {
        case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: return 1.0 - post * post;
        case Activation::sigmoid: return post * (1.0 - post);
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

void check_input(const ModelParams& params, std::size_t width) {
    if (params.layers.empty())
        throw DimensionError("model has no layers");
    if (width != params.layers.front().inputs)
        throw DimensionError("input has width " + std::to_string(width) + ", model expects " +
                             std::to_string(params.layers.front().inputs));
}

template <typename Layers>
auto& flat_entry(Layers& layers, std::size_t index) {
    for (auto& layer : layers) {
        if (index < layer.weights.size()) return layer.weights[index];
        index -= layer.weights.size();
        if (index < layer.bias.size()) return layer.bias[index];
        index -= layer.bias.size();
    }
    throw DimensionError("flat parameter index out of range");
}

std::size_t count(const std::vector<DenseLayer>& layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
}

Vector log_softmax(std::span<const double> z) {
    double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    double log_norm = m + std::log(s);
    Vector out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - log_norm;
    return out;
}

// CE term shared by the two classification losses; writes p - onehot into grad.
double cross_entropy_with_gradient(const ProbVector& p, std::size_t label, Vector& grad) {
    double value = cross_entropy(p, label);
    if (p[label] < kProbabilityFloor) return value;  // clamp active, loss is locally constant
    for (std::size_t i = 0; i < p.size(); ++i) grad[i] += p[i];
    grad[label] -= 1.0;
    return value;
}

struct LossEvaluator {
    std::span<const double> z;

    LossValue operator()(const ConstantLoss& c) const { return {c.value, Vector(z.size(), 0.0)}; }

    LossValue operator()(const SquaredError& s) const {
        if (s.target.size() != z.size()) throw DimensionError("squared error target width mismatch");
        LossValue out{0.0, Vector(z.size())};
        for (std::size_t i = 0; i < z.size(); ++i) {
            double d = z[i] - s.target[i];
            out.value += d * d;
            out.gradient[i] = 2.0 * d;
        }
        return out;
    }

    LossValue operator()(const CrossEntropyLoss& c) const {
        LossValue out{0.0, Vector(z.size(), 0.0)};
        out.value = cross_entropy_with_gradient(softmax_temperature(z, 1.0), c.label, out.gradient);
        return out;
    }

    LossValue operator()(const DistillationLoss& d) const {
        if (d.teacher_logits.size() != z.size())
            throw DimensionError("teacher logits have " + std::to_string(d.teacher_logits.size()) +
                                 " classes, student has " + std::to_string(z.size()));
        ProbVector p = softmax_temperature(z, 1.0);
        LossValue out{0.0, Vector(z.size(), 0.0)};
        out.value = cross_entropy_with_gradient(p, d.label, out.gradient);
        if (d.beta == 0.0) return out;

        ProbVector q = softmax_temperature(d.teacher_logits, d.temperature);
        out.value += d.beta * kl_divergence(p, q);
        // d/dz_j sum_i p_i (log p_i - log q_i) = p_j (a_j - sum_i p_i a_i)
        Vector log_p = log_softmax(z);
        Vector a(z.size());
        double mean_a = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            a[i] = log_p[i] - std::log(std::max(q[i], kProbabilityFloor));
            mean_a += p[i] * a[i];
        }
        for (std::size_t j = 0; j < z.size(); ++j) out.gradient[j] += d.beta * p[j] * (a[j] - mean_a);
        return out;
    }
};

}  // namespace

std::string_view to_string(Activation activation) {
    switch (activation) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::identity: return "identity";
    }
    return "relu";
}

Activation parse_activation(std::string_view name) {
    for (auto a : {Activation::relu, Activation::tanh, Activation::sigmoid, Activation::identity})
        if (to_string(a) == name) return a;
    throw DimensionError("unknown activation '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
    if (layer_widths.size() < 2)
        throw DimensionError("model spec needs at least an input and an output width");
    for (auto w : layer_widths)
        if (w < 1) throw DimensionError("model spec widths must be >= 1");
}

std::size_t ModelSpec::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < layer_widths.size(); ++i)
        n += layer_widths[i] * layer_widths[i + 1] + layer_widths[i + 1];
    return n;
}

std::size_t ModelParams::parameter_count() const { return count(layers); }
double& ModelParams::flat(std::size_t index) { return flat_entry(layers, index); }
double ModelParams::flat(std::size_t index) const { return flat_entry(layers, index); }

std::size_t GradientSet::parameter_count() const { return count(layers); }
double GradientSet::flat(std::size_t index) const { return flat_entry(layers, index); }

double GradientSet::max_abs() const {
    double m = 0.0;
    for (const auto& l : layers) {
        for (double v : l.weights) m = std::max(m, std::abs(v));
        for (double v : l.bias) m = std::max(m, std::abs(v));
    }
    return m;
}

ProbVector::ProbVector(Vector values) : values_(std::move(values)) {
    double sum = 0.0;
    for (double v : values_) {
        if (!(v >= 0.0)) throw DimensionError("probability entries must be nonnegative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DimensionError("probabilities must sum to 1");
}

ModelParams zero_params(const ModelSpec& spec) {
    spec.validate();
    ModelParams params{spec, {}};
    for (std::size_t i = 0; i < spec.layer_count(); ++i) {
        std::size_t in = spec.layer_widths[i];
        std::size_t out = spec.layer_widths[i + 1];
        params.layers.push_back({in, out, Vector(in * out, 0.0), Vector(out, 0.0)});
    }
    return params;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
    ModelParams params = zero_params(spec);
    Rng rng(seed);
    for (auto& layer : params.layers) {
        double limit = std::sqrt(6.0 / static_cast<double>(layer.inputs + layer.outputs));
        for (double& w : layer.weights) w = (2.0 * uniform01(rng) - 1.0) * limit;
    }
    return params;
}

GradientSet zero_gradients(const ModelParams& params) {
    GradientSet grads;
    grads.layers.reserve(params.layers.size());
    for (const auto& l : params.layers)
        grads.layers.push_back({l.inputs, l.outputs, Vector(l.weights.size(), 0.0), Vector(l.bias.size(), 0.0)});
    return grads;
}

bool all_finite(const ModelParams& params) {
    for (const auto& l : params.layers) {
        for (double v : l.weights)
            if (!std::isfinite(v)) return false;
        for (double v : l.bias)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

bool same_shape(const ModelParams& params, const GradientSet& grads) {
    if (params.layers.size() != grads.layers.size()) return false;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& p = params.layers[i];
        const auto& g = grads.layers[i];
        if (p.inputs != g.inputs || p.outputs != g.outputs || p.weights.size() != g.weights.size() ||
            p.bias.size() != g.bias.size())
            return false;
    }
    return true;
}

ForwardTrace forward_trace(const ModelParams& params, std::span<const double> x) {
    check_input(params, x.size());
    ForwardTrace trace;
    trace.pre.reserve(params.layers.size());
    trace.post.reserve(params.layers.size() + 1);
    trace.post.emplace_back(x.begin(), x.end());
    const std::size_t last = params.layers.size() - 1;
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& layer = params.layers[li];
        const Vector& in = trace.post.back();
        Vector z(layer.bias);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
            const double* row = &layer.weights[o * layer.inputs];
            double acc = z[o];
            for (std::size_t i = 0; i < layer.inputs; ++i) acc += row[i] * in[i];
            z[o] = acc;
        }
        Vector a(z);
        if (li != last)
            for (double& v : a) v = activate(params.spec.activation, v);
        trace.pre.push_back(std::move(z));
        trace.post.push_back(std::move(a));
    }
    return trace;
}

Vector forward(const ModelParams& params, std::span<const double> x) {
    return std::move(forward_trace(params, x).post.back());
}

Vector backpropagate(const ModelParams& params, const ForwardTrace& trace,
                     std::span<const double> logit_gradient, double scale, GradientSet& grads) {
    if (logit_gradient.size() != params.layers.back().outputs)
        throw DimensionError("logit gradient width mismatch");
    Vector delta(logit_gradient.begin(), logit_gradient.end());
    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& layer = params.layers[li];
        auto& g = grads.layers[li];
        const Vector& in = trace.post[li];
        for (std::size_t o = 0; o < layer.outputs; ++o) {
            double d = scale * delta[o];
            if (d == 0.0) continue;
            g.bias[o] += d;
            double* row = &g.weights[o * layer.inputs];
            for (std::size_t i = 0; i < layer.inputs; ++i) row[i] += d * in[i];
        }
        Vector below(layer.inputs, 0.0);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
            if (delta[o] == 0.0) continue;
            const double* row = &layer.weights[o * layer.inputs];
            for (std::size_t i = 0; i < layer.inputs; ++i) below[i] += row[i] * delta[o];
        }
        if (li > 0) {
            const Vector& pre = trace.pre[li - 1];
            for (std::size_t i = 0; i < below.size(); ++i)
                below[i] *= activation_slope(params.spec.activation, pre[i], in[i]);
        }
        delta = std::move(below);
    }
    return delta;
}

ProbVector softmax_temperature(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) throw DimensionError("temperature must be positive");
    if (logits.empty()) throw DimensionError("softmax of an empty vector");
    double m = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        if (!std::isfinite(v)) throw DimensionError("softmax of non-finite logits");
        m = std::max(m, v / temperature);
    }
    Vector p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] / temperature - m);
        s += p[i];
    }
    for (double& v : p) v /= s;
    return ProbVector(std::move(p));
}

double cross_entropy(const ProbVector& pred, std::size_t label) {
    if (label >= pred.size())
        throw DimensionError("label " + std::to_string(label) + " out of range for " +
                             std::to_string(pred.size()) + " classes");
    return -std::log(std::max(pred[label], kProbabilityFloor));
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
    if (p.size() != q.size()) throw DimensionError("KL divergence of vectors with different lengths");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        sum += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kProbabilityFloor)));
    }
    return std::max(sum, 0.0);
}

void apply_sgd(ModelParams& params, const GradientSet& grads, double lr) {
    if (!same_shape(params, grads)) throw DimensionError("gradient shape does not match parameters");
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        auto& p = params.layers[li];
        const auto& g = grads.layers[li];
        for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] -= lr * g.weights[i];
        for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= lr * g.bias[i];
    }
}

ModelParams sgd_step(const ModelParams& params, const GradientSet& grads, double lr) {
    ModelParams out = params;
    apply_sgd(out, grads, lr);
    return out;
}

LossValue evaluate_loss(const LogitLoss& loss, std::span<const double> logits) {
    return std::visit(LossEvaluator{logits}, loss);
}

double total_loss(const ModelParams& params, std::span<const LossTerm> terms) {
    double sum = 0.0;
    for (const auto& term : terms) {
        if (term.weight == 0.0) continue;
        Vector z = forward(params, term.input);
        sum += term.weight * evaluate_loss(term.loss, z).value;
    }
    return sum;
}

GradientSet backward(const ModelParams& params, std::span<const LossTerm> terms) {
    GradientSet grads = zero_gradients(params);
    for (const auto& term : terms) {
        if (term.weight == 0.0) continue;
        ForwardTrace trace = forward_trace(params, term.input);
        LossValue lv = evaluate_loss(term.loss, trace.logits());
        backpropagate(params, trace, lv.gradient, term.weight, grads);
    }
    return grads;
}

namespace {

std::vector<bool> relu_gates(const ModelParams& params, std::span<const LossTerm> terms) {
    std::vector<bool> gates;
    for (const auto& term : terms) {
        ForwardTrace trace = forward_trace(params, term.input);
        for (std::size_t li = 0; li + 1 < trace.pre.size(); ++li)
            for (double v : trace.pre[li]) gates.push_back(v > 0.0);
    }
    return gates;
}

}  // namespace

FiniteDifferenceReport finite_difference_check(const ModelParams& params,
                                               std::span<const LossTerm> terms, double epsilon,
                                               std::size_t max_coordinates, std::uint64_t seed) {
    GradientSet analytic = backward(params, terms);
    const std::size_t n = params.parameter_count();
    std::vector<std::size_t> coords;
    if (n <= max_coordinates) {
        coords.resize(n);
        for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
        coords = shuffled_indices(n, seed);
        coords.resize(max_coordinates);
    }

    const bool kinked = params.spec.activation == Activation::relu && params.layers.size() > 1;
    FiniteDifferenceReport report;
    ModelParams probe = params;
    for (std::size_t c : coords) {
        const double original = probe.flat(c);
        probe.flat(c) = original + epsilon;
        double up = total_loss(probe, terms);
        std::vector<bool> gates_up = kinked ? relu_gates(probe, terms) : std::vector<bool>{};
        probe.flat(c) = original - epsilon;
        double down = total_loss(probe, terms);
        bool skip = kinked && relu_gates(probe, terms) != gates_up;
        probe.flat(c) = original;
        if (skip) {
            ++report.coordinates_skipped;
            continue;
        }
        double numeric = (up - down) / (2.0 * epsilon);
        double a = analytic.flat(c);
        double denom = std::max({std::abs(a), std::abs(numeric), kGradientScaleFloor});
        report.max_relative_error = std::max(report.max_relative_error, std::abs(a - numeric) / denom);
        ++report.coordinates_checked;
    }
    return report;
}

}  // namespace fedagg::nn
