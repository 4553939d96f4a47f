#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "fedagg/nn.hpp"
#include "fedagg/topology.hpp"

namespace fedagg::data {

struct LabeledSample {
    nn::Vector x;
    std::size_t y = 0;
    std::uint64_t sample_id = 0;

    bool operator==(const LabeledSample&) const = default;
};

struct Dataset {
    std::size_t input_dim = 0;
    std::size_t classes = 0;
    std::vector<LabeledSample> samples;

    std::size_t size() const { return samples.size(); }
    std::vector<std::size_t> label_counts() const;
    std::vector<nn::Vector> features() const;

    bool operator==(const Dataset&) const = default;
};

struct ClientDataset {
    topo::NodeId client;
    std::vector<LabeledSample> samples;

    std::size_t size() const { return samples.size(); }
};

// Gaussian mixture with independently seeded component placement and
// sampling, so datasets that share a means seed share component centres.
// Component c has label c % classes.
struct MixtureSpec {
    std::size_t classes = 2;
    std::size_t components = 2;
    std::size_t input_dim = 2;
    std::size_t n = 100;
    double spread = 1.0;
    std::uint64_t means_seed = 0;
    std::uint64_t sample_seed = 0;
    std::uint64_t first_sample_id = 0;
};

// Component centres, pairwise separated by at least max(4 * spread, 1). The
// first k centres are the same for any requested count >= k.
std::vector<nn::Vector> mixture_means(std::size_t components, std::size_t input_dim, double spread,
                                      std::uint64_t seed);

Dataset generate_mixture(const MixtureSpec& spec);

// Seed generate_synthetic uses for component placement.
std::uint64_t synthetic_means_seed(std::uint64_t seed);

// One component per class, balanced labels (counts differ by at most one).
Dataset generate_synthetic(std::size_t classes, std::size_t input_dim, std::size_t n, double spread,
                           std::uint64_t seed);

struct PartitionConfig {
    std::size_t clients = 1;
    double alpha = 1.0;
    std::uint64_t seed = 0;
};

inline constexpr std::size_t kPartitionRetryBudget = 100;

// Per-class Dirichlet(alpha) label proportions over the clients. Clients are
// assigned in the order given; every client ends up nonempty or DataError is
// thrown after kPartitionRetryBudget redraws.
std::vector<ClientDataset> dirichlet_partition(const Dataset& dataset, const PartitionConfig& cfg,
                                               const std::vector<topo::NodeId>& clients);

// Convenience overload naming clients 0..K-1.
std::vector<ClientDataset> dirichlet_partition(const Dataset& dataset, const PartitionConfig& cfg);

// Mean over clients of the total-variation distance between the client's
// label distribution and the dataset's.
double mean_label_tv_distance(const Dataset& dataset, std::span<const ClientDataset> parts);

// Stratified by label: each class contributes round(count * test_fraction)
// samples to the test side. Both sides keep ascending sample_id order.
std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double test_fraction, std::uint64_t seed);

// Text format: "fedagg-dataset 1" then "n input_dim classes", then one line
// per sample "sample_id y x_0 ... x_{d-1}" with values in shortest
// round-trip decimal form.
void write_dataset(std::ostream& os, const Dataset& dataset);
Dataset read_dataset(std::istream& is);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace fedagg::data
