#pragma once

// Dense feed-forward networks in double precision: parameters, inference,
// exact gradients for the logit-level losses used by the distillation
// protocol, plain SGD and a finite-difference gradient oracle.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fedagg::nn {

using Vector = std::vector<double>;

enum class Activation { relu, tanh, sigmoid, identity };

std::string_view to_string(Activation activation);
Activation parse_activation(std::string_view name);

struct ModelSpec {
    std::vector<std::size_t> layer_widths;
    Activation activation = Activation::relu;

    // Throws DimensionError unless there are >= 2 widths, all >= 1.
    void validate() const;

    std::size_t input_width() const { return layer_widths.front(); }
    std::size_t output_width() const { return layer_widths.back(); }
    std::size_t layer_count() const { return layer_widths.size() - 1; }
    std::size_t parameter_count() const;

    bool operator==(const ModelSpec&) const = default;
};

// Weights are row-major, outputs x inputs.
struct DenseLayer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    Vector weights;
    Vector bias;

    double weight(std::size_t out, std::size_t in) const { return weights[out * inputs + in]; }
    double& weight(std::size_t out, std::size_t in) { return weights[out * inputs + in]; }

    bool operator==(const DenseLayer&) const = default;
};

struct ModelParams {
    ModelSpec spec;
    std::vector<DenseLayer> layers;

    std::size_t parameter_count() const;
    double& flat(std::size_t index);
    double flat(std::size_t index) const;

    bool operator==(const ModelParams&) const = default;
};

// Gradient of a scalar loss with respect to every entry of a ModelParams.
struct GradientSet {
    std::vector<DenseLayer> layers;

    std::size_t parameter_count() const;
    double flat(std::size_t index) const;
    double max_abs() const;

    bool operator==(const GradientSet&) const = default;
};

// Probability vector: nonnegative entries summing to one within 1e-9.
class ProbVector {
public:
    explicit ProbVector(Vector values);

    std::span<const double> values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

private:
    Vector values_;
};

inline constexpr double kProbabilityFloor = 1e-12;

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);
ModelParams zero_params(const ModelSpec& spec);
GradientSet zero_gradients(const ModelParams& params);

bool all_finite(const ModelParams& params);
bool same_shape(const ModelParams& params, const GradientSet& grads);

Vector forward(const ModelParams& params, std::span<const double> x);

// Per-layer activations retained for backpropagation. post[0] is the input,
// post[i + 1] the output of layer i; pre[i] is layer i before its nonlinearity.
struct ForwardTrace {
    std::vector<Vector> pre;
    std::vector<Vector> post;

    std::span<const double> logits() const { return post.back(); }
};

ForwardTrace forward_trace(const ModelParams& params, std::span<const double> x);

// Accumulates scale * dL/dW into grads given dL/dlogits and returns dL/dx.
Vector backpropagate(const ModelParams& params, const ForwardTrace& trace,
                     std::span<const double> logit_gradient, double scale, GradientSet& grads);

ProbVector softmax_temperature(std::span<const double> logits, double temperature);
double cross_entropy(const ProbVector& pred, std::size_t label);
double kl_divergence(const ProbVector& p, const ProbVector& q);

ModelParams sgd_step(const ModelParams& params, const GradientSet& grads, double lr);
void apply_sgd(ModelParams& params, const GradientSet& grads, double lr);

// Logit-level losses.

struct ConstantLoss {
    double value = 0.0;
};

// sum_i (z_i - target_i)^2
struct SquaredError {
    Vector target;
};

// CE(softmax(z), label)
struct CrossEntropyLoss {
    std::size_t label = 0;
};

// CE(softmax(z), label) + beta * KL(softmax(z) || softmax(teacher / T)).
// The temperature applies to the teacher side only.
struct DistillationLoss {
    std::size_t label = 0;
    Vector teacher_logits;
    double beta = 0.0;
    double temperature = 1.0;
};

using LogitLoss = std::variant<ConstantLoss, SquaredError, CrossEntropyLoss, DistillationLoss>;

struct LossValue {
    double value = 0.0;
    Vector gradient;  // dL/dlogits
};

LossValue evaluate_loss(const LogitLoss& loss, std::span<const double> logits);

// One summand of a batch objective: weight * loss(f(input)).
struct LossTerm {
    Vector input;
    LogitLoss loss;
    double weight = 1.0;
};

// Batch objective sum_i weight_i * loss_i(f(input_i)). Callers encode
// batch averaging in the weights.
double total_loss(const ModelParams& params, std::span<const LossTerm> terms);
GradientSet backward(const ModelParams& params, std::span<const LossTerm> terms);

struct FiniteDifferenceReport {
    double max_relative_error = 0.0;
    std::size_t coordinates_checked = 0;
    // Coordinates whose perturbation flipped a ReLU gate; the loss is not
    // differentiable across the flip so they are excluded.
    std::size_t coordinates_skipped = 0;
};

inline constexpr double kGradientScaleFloor = 1e-6;

// Central differences on up to max_coordinates parameters (all of them when
// the model is small enough, otherwise a seeded sample) compared against
// backward(). Relative error is |a - n| / max(|a|, |n|, kGradientScaleFloor).
FiniteDifferenceReport finite_difference_check(const ModelParams& params,
                                               std::span<const LossTerm> terms, double epsilon,
                                               std::size_t max_coordinates = 256,
                                               std::uint64_t seed = 0);

}  // namespace fedagg::nn
