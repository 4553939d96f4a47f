#include "fedagg/autoencoder.hpp"

#include <algorithm>

#include "fedagg/errors.hpp"
#include "fedagg/random.hpp"

namespace fedagg::ae {

void AutoencoderSpec::validate() const {
    encoder.validate();
    decoder.validate();
    if (encoder.output_width() != decoder.input_width())
        throw DimensionError("encoder output width must equal decoder input width");
    if (decoder.output_width() != encoder.input_width())
        throw DimensionError("decoder output width must equal encoder input width");
    if (embedding_dim() >= input_dim())
        throw DimensionError("embedding dimension must be smaller than the input dimension");
    std::size_t total = encoder.parameter_count() + decoder.parameter_count();
    if (total > parameter_budget)
        throw DimensionError("autoencoder has " + std::to_string(total) +
                             " parameters, budget is " + std::to_string(parameter_budget));
}

AutoencoderSpec default_spec(std::size_t input_dim, std::size_t hidden_width, std::size_t embedding_dim) {
    if (embedding_dim == 0) embedding_dim = std::max<std::size_t>(2, input_dim / 4);
    AutoencoderSpec spec{
        nn::ModelSpec{{input_dim, hidden_width, embedding_dim}, nn::Activation::relu},
        nn::ModelSpec{{embedding_dim, hidden_width, input_dim}, nn::Activation::relu},
    };
    spec.validate();
    return spec;
}

AutoencoderParams init_autoencoder(const AutoencoderSpec& spec, std::uint64_t seed) {
    spec.validate();
    return {nn::init_params(spec.encoder, derive_seed(seed, {1})),
            nn::init_params(spec.decoder, derive_seed(seed, {2}))};
}

Embedding encode(const nn::ModelParams& encoder, std::span<const double> x) { return nn::forward(encoder, x); }
Embedding encode(const AutoencoderParams& ae, std::span<const double> x) { return encode(ae.encoder, x); }
BridgeSample decode(const nn::ModelParams& decoder, std::span<const double> eps) { return nn::forward(decoder, eps); }
BridgeSample decode(const AutoencoderParams& ae, std::span<const double> eps) { return decode(ae.decoder, eps); }

double reconstruction_gap(const AutoencoderParams& ae, std::span<const nn::Vector> dataset) {
    if (dataset.empty()) throw DataError("reconstruction gap of an empty dataset");
    double sum = 0.0;
    for (const auto& x : dataset) {
        BridgeSample r = decode(ae, encode(ae, x));
        for (std::size_t i = 0; i < x.size(); ++i) sum += (r[i] - x[i]) * (r[i] - x[i]);
    }
    return sum / static_cast<double>(dataset.size());
}

void train_epochs(AutoencoderParams& ae, std::span<const nn::Vector> data, const PretrainOptions& options,
                  std::uint64_t seed, std::vector<double>* gap_per_epoch) {
    if (data.empty()) throw DataError("autoencoder pretraining needs a nonempty dataset");
    if (options.batch_size == 0) throw DataError("batch size must be positive");
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        auto order = shuffled_indices(data.size(), derive_seed(seed, {epoch}));
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            std::size_t end = std::min(order.size(), start + options.batch_size);
            // Per-coordinate mean: the batch loss is sum ||r - x||^2 / (B * d).
            double scale = 1.0 / static_cast<double>((end - start) * data.front().size());
            auto enc_grads = nn::zero_gradients(ae.encoder);
            auto dec_grads = nn::zero_gradients(ae.decoder);
            for (std::size_t k = start; k < end; ++k) {
                const auto& x = data[order[k]];
                auto enc_trace = nn::forward_trace(ae.encoder, x);
                auto dec_trace = nn::forward_trace(ae.decoder, enc_trace.logits());
                auto loss = nn::evaluate_loss(nn::SquaredError{x}, dec_trace.logits());
                auto d_embedding = nn::backpropagate(ae.decoder, dec_trace, loss.gradient, scale, dec_grads);
                nn::backpropagate(ae.encoder, enc_trace, d_embedding, scale, enc_grads);
            }
            nn::apply_sgd(ae.encoder, enc_grads, options.lr);
            nn::apply_sgd(ae.decoder, dec_grads, options.lr);
        }
        if (!nn::all_finite(ae.encoder) || !nn::all_finite(ae.decoder))
            throw Error("autoencoder pretraining diverged at epoch " + std::to_string(epoch + 1) +
                        "; lower the learning rate");
        if (gap_per_epoch) gap_per_epoch->push_back(reconstruction_gap(ae, data));
    }
}

AutoencoderParams pretrain(const AutoencoderSpec& spec, std::span<const nn::Vector> public_dataset,
                           const PretrainOptions& options, std::uint64_t seed) {
    if (public_dataset.empty()) throw DataError("autoencoder pretraining needs a nonempty dataset");
    AutoencoderParams ae = init_autoencoder(spec, seed);
    train_epochs(ae, public_dataset, options, derive_seed(seed, {3}));
    return ae;
}

}  // namespace fedagg::ae
