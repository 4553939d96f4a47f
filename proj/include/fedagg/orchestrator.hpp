#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "fedagg/autoencoder.hpp"
#include "fedagg/data.hpp"
#include "fedagg/nn.hpp"
#include "fedagg/protocol.hpp"
#include "fedagg/topology.hpp"

namespace fedagg::orch {

struct NodeState {
    topo::NodeId id;
    nn::ModelParams model;
    nn::ModelParams decoder;
    std::optional<nn::ModelParams> encoder;              // leaves only
    protocol::EmbeddingStore store;
    std::optional<protocol::PrivateShard> private_data;  // leaves only
};

// Everything a run mutates: topology, per-node state, the shared
// autoencoder and the private-data audit.
struct Federation {
    topo::EecNet net;
    ae::AutoencoderParams autoencoder;
    std::map<topo::NodeId, NodeState> states;
    protocol::AccessAudit audit;

    NodeState& state(topo::NodeId id);
    const NodeState& state(topo::NodeId id) const;
    // Sum of private sample counts over leaves_of(id).
    std::size_t subtree_samples(topo::NodeId id) const;
};

// Models are initialised from derive_seed(seed, {node id}); the decoder goes
// to every node and the encoder to leaves. Shards must cover every leaf.
Federation make_federation(topo::EecNet net, const ae::AutoencoderParams& autoencoder,
                           std::vector<data::ClientDataset> shards, std::uint64_t seed);

// Leaves encode their private samples; every other node stores the union of
// its children's stores. Replaces existing stores.
void init_phase(Federation& fed);

enum class ExchangeSchedule {
    per_child,       // BSBODP with the parent after each child's subtree
    once_per_epoch,  // BSBODP with the parent once, after all children
};

struct Exchange {
    topo::NodeId child;
    topo::NodeId parent;
};

struct TrainOptions {
    std::uint64_t seed = 0;
    ExchangeSchedule schedule = ExchangeSchedule::per_child;
    protocol::ExchangeContext context;  // audit defaults to the federation's own
    std::vector<Exchange>* trace = nullptr;
};

// One recursive FedAggTrain pass from the root. Exchange i of the epoch
// uses seed derive_seed(options.seed, {epoch, i}).
void fedagg_train_epoch(Federation& fed, const protocol::DistillConfig& cfg, std::size_t epoch,
                        const TrainOptions& options = {});

double evaluate(const nn::ModelParams& model, const data::Dataset& test);

struct EpochMetrics {
    std::size_t epoch = 0;
    double cloud_accuracy = 0.0;
    std::vector<double> tier_accuracy;  // index t-1 holds the mean over tier t
};

EpochMetrics evaluate_federation(const Federation& fed, const data::Dataset& test, std::size_t epoch);

struct RunOptions {
    TrainOptions train;
    // Epochs already completed; 0 starts fresh and records the post-init row.
    std::size_t start_epoch = 0;
    // Invoked before each training epoch, e.g. to migrate nodes.
    std::function<void(Federation&, std::size_t epoch)> before_epoch;
    // Invoked after each epoch's evaluation.
    std::function<void(const Federation&, const EpochMetrics&)> after_epoch;
};

// Init once, then train up to `epochs` total epochs, evaluating after each.
std::vector<EpochMetrics> run_fedagg(Federation& fed, const protocol::DistillConfig& cfg, std::size_t epochs,
                                     const data::Dataset& test, const RunOptions& options = {});

// Moves v (with its subtree) under new_parent and re-runs init_phase.
void migrate_node(Federation& fed, topo::NodeId v, topo::NodeId new_parent, const topo::ProtocolCompat& compat);

struct BaselineConfig {
    std::size_t kappa1 = 1;  // local epochs per edge aggregation
    std::size_t kappa2 = 1;  // edge aggregations per cloud aggregation

    void validate() const;
};

struct LocalTraining {
    double lr = 0.001;
    std::size_t batch_size = 8;
};

// Weighted elementwise average of identically shaped parameter sets.
nn::ModelParams weighted_average(const std::vector<const nn::ModelParams*>& models, const std::vector<double>& weights);

// Throws BottleneckConstraintError unless every node has the same model spec.
void require_homogeneous(const topo::EecNet& net);

// Hierarchical federated averaging; one epoch is one cloud round made of
// kappa2 edge rounds of kappa1 local epochs each.
std::vector<EpochMetrics> run_hierfavg(Federation& fed, const BaselineConfig& baseline, const LocalTraining& local,
                                       std::size_t epochs, const data::Dataset& test, const RunOptions& options = {});

// Each leaf trains alone on its shard; returns per-leaf test accuracy
// after `epochs` local epochs.
std::map<topo::NodeId, double> run_local_only(Federation& fed, const LocalTraining& local, std::size_t epochs,
                                              const data::Dataset& test, std::uint64_t seed);

// Checkpoints: text, "fedagg-checkpoint 1", epoch, parent links, the
// autoencoder and every node model, doubles in hexadecimal floating point.
void write_checkpoint(std::ostream& os, const Federation& fed, std::size_t epoch);
// Applies a checkpoint to a federation built from the same configuration and
// returns the stored epoch. Stores are rebuilt with init_phase.
std::size_t read_checkpoint(std::istream& is, Federation& fed);
void save_checkpoint(const std::filesystem::path& path, const Federation& fed, std::size_t epoch);
std::size_t load_checkpoint(const std::filesystem::path& path, Federation& fed);

void write_autoencoder(std::ostream& os, const ae::AutoencoderParams& autoencoder);
ae::AutoencoderParams read_autoencoder(std::istream& is);

}  // namespace fedagg::orch
