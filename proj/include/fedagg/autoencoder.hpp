#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedagg/nn.hpp"

namespace fedagg::ae {

using Embedding = nn::Vector;
using BridgeSample = nn::Vector;

inline constexpr std::size_t kDefaultParameterBudget = 5000;

struct AutoencoderSpec {
    nn::ModelSpec encoder;  // input dim -> embedding dim
    nn::ModelSpec decoder;  // embedding dim -> input dim
    std::size_t parameter_budget = kDefaultParameterBudget;

    std::size_t input_dim() const { return encoder.input_width(); }
    std::size_t embedding_dim() const { return encoder.output_width(); }

    // Throws DimensionError on mismatched widths, a non-bottleneck embedding
    // or a parameter count over budget.
    void validate() const;
};

// Symmetric encoder/decoder with one hidden layer each; the embedding
// defaults to max(2, input_dim / 4).
AutoencoderSpec default_spec(std::size_t input_dim, std::size_t hidden_width = 16,
                             std::size_t embedding_dim = 0);

struct AutoencoderParams {
    nn::ModelParams encoder;
    nn::ModelParams decoder;

    std::size_t embedding_dim() const { return encoder.spec.output_width(); }
    std::size_t input_dim() const { return encoder.spec.input_width(); }

    bool operator==(const AutoencoderParams&) const = default;
};

AutoencoderParams init_autoencoder(const AutoencoderSpec& spec, std::uint64_t seed);

Embedding encode(const AutoencoderParams& ae, std::span<const double> x);
Embedding encode(const nn::ModelParams& encoder, std::span<const double> x);
BridgeSample decode(const AutoencoderParams& ae, std::span<const double> eps);
BridgeSample decode(const nn::ModelParams& decoder, std::span<const double> eps);

// Mean over samples of ||decode(encode(x)) - x||^2.
double reconstruction_gap(const AutoencoderParams& ae, std::span<const nn::Vector> dataset);

struct PretrainOptions {
    std::size_t epochs = 50;
    double lr = 0.01;
    std::size_t batch_size = 8;
};

// Minibatch SGD on the per-coordinate mean squared reconstruction error,
// i.e. reconstruction_gap / input_dim. Deterministic in seed, which fixes
// both the initial parameters and the minibatch order. Throws Error if the
// parameters stop being finite.
AutoencoderParams pretrain(const AutoencoderSpec& spec, std::span<const nn::Vector> public_dataset,
                           const PretrainOptions& options, std::uint64_t seed);

// Continues training from given parameters; reports the gap after each epoch
// when a sink is provided.
void train_epochs(AutoencoderParams& ae, std::span<const nn::Vector> public_dataset,
                  const PretrainOptions& options, std::uint64_t seed,
                  std::vector<double>* gap_per_epoch = nullptr);

}  // namespace fedagg::ae
