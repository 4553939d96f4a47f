#include "fedagg/orchestrator.hpp"

#include <algorithm>

#include "fedagg/errors.hpp"
#include "fedagg/random.hpp"

namespace fedagg::orch {

NodeState& Federation::state(topo::NodeId id) {
    auto it = states.find(id);
    if (it == states.end()) throw TopologyError("no state for node " + topo::to_string(id));
    return it->second;
}

const NodeState& Federation::state(topo::NodeId id) const {
    auto it = states.find(id);
    if (it == states.end()) throw TopologyError("no state for node " + topo::to_string(id));
    return it->second;
}

std::size_t Federation::subtree_samples(topo::NodeId id) const {
    std::size_t n = 0;
    for (auto leaf : net.leaves_of(id)) {
        const auto& s = state(leaf);
        if (s.private_data) n += s.private_data->size();
    }
    return n;
}

Federation make_federation(topo::EecNet net, const ae::AutoencoderParams& autoencoder,
                           std::vector<data::ClientDataset> shards, std::uint64_t seed) {
    Federation fed{std::move(net), autoencoder, {}, {}};
    std::map<topo::NodeId, data::ClientDataset> by_client;
    for (auto& shard : shards) {
        if (!fed.net.contains(shard.client) || !fed.net.is_leaf(shard.client))
            throw DataError("shard assigned to " + topo::to_string(shard.client) + ", which is not a leaf");
        auto client = shard.client;
        if (!by_client.emplace(client, std::move(shard)).second)
            throw DataError("two shards for leaf " + topo::to_string(client));
    }
    for (const auto& [id, desc] : fed.net.nodes()) {
        if (desc.model_spec.input_width() != autoencoder.input_dim())
            throw DimensionError("model on node " + topo::to_string(id) + " does not take bridge samples of width " +
                                 std::to_string(autoencoder.input_dim()));
        NodeState st{id, nn::init_params(desc.model_spec, derive_seed(seed, {id.value})), autoencoder.decoder,
                     std::nullopt, protocol::EmbeddingStore(id), std::nullopt};
        if (fed.net.is_leaf(id)) {
            st.encoder = autoencoder.encoder;
            auto it = by_client.find(id);
            if (it == by_client.end() || it->second.samples.empty())
                throw DataError("leaf " + topo::to_string(id) + " has no private data");
            st.private_data.emplace(std::move(it->second));
        }
        fed.states.emplace(id, std::move(st));
    }
    std::size_t classes = fed.net.node(fed.net.root()).model_spec.output_width();
    for (const auto& [id, desc] : fed.net.nodes())
        if (desc.model_spec.output_width() != classes)
            throw DimensionError("node " + topo::to_string(id) + " predicts a different number of classes");
    return fed;
}

namespace {

void init_subtree(Federation& fed, topo::NodeId v) {
    NodeState& st = fed.state(v);
    st.store = protocol::EmbeddingStore(v);
    if (fed.net.is_leaf(v)) {
        if (!st.private_data || st.private_data->size() == 0)
            throw DataError("leaf " + topo::to_string(v) + " has no private data");
        if (!st.encoder) throw DataError("leaf " + topo::to_string(v) + " has no encoder");
        for (const auto& s : st.private_data->read_all(v, true, fed.audit))
            st.store.insert({ae::encode(*st.encoder, s.x), s.y, v, s.sample_id});
        return;
    }
    for (auto u : fed.net.children(v)) {
        init_subtree(fed, u);
        fed.state(v).store.merge(fed.state(u).store);
    }
}

class EpochRunner {
public:
    EpochRunner(Federation& fed, const protocol::DistillConfig& cfg, std::size_t epoch, const TrainOptions& options)
        : fed_(fed), cfg_(cfg), epoch_(epoch), options_(options), context_(options.context) {
        if (!context_.audit) context_.audit = &fed_.audit;
    }

    void train(topo::NodeId v) {
        const auto& net = fed_.net;
        if (v == net.root()) {
            for (auto u : net.children(v)) train(u);
        } else if (net.is_leaf(v)) {
            exchange(v, net.parent(v));
        } else if (options_.schedule == ExchangeSchedule::per_child) {
            for (auto u : net.children(v)) {
                train(u);
                exchange(v, net.parent(v));
            }
        } else {
            for (auto u : net.children(v)) train(u);
            if (!fed_.state(v).store.empty()) exchange(v, net.parent(v));
        }
    }

private:
    protocol::Participant participant(topo::NodeId id) {
        const NodeState& st = fed_.state(id);
        return {id, st.model, st.decoder, st.store, st.private_data ? &*st.private_data : nullptr};
    }

    void exchange(topo::NodeId child, topo::NodeId parent) {
        if (options_.trace) options_.trace->push_back({child, parent});
        auto seed = derive_seed(options_.seed, {epoch_, counter_++});
        auto [child_params, parent_params] =
            protocol::bsbodp(fed_.net, participant(child), participant(parent), cfg_, seed, context_);
        fed_.state(child).model = std::move(child_params);
        fed_.state(parent).model = std::move(parent_params);
    }

    Federation& fed_;
    const protocol::DistillConfig& cfg_;
    std::size_t epoch_;
    const TrainOptions& options_;
    protocol::ExchangeContext context_;
    std::size_t counter_ = 0;
};

}  // namespace

void init_phase(Federation& fed) { init_subtree(fed, fed.net.root()); }

void fedagg_train_epoch(Federation& fed, const protocol::DistillConfig& cfg, std::size_t epoch,
                        const TrainOptions& options) {
    cfg.validate();
    const auto& root = fed.state(fed.net.root());
    if (root.store.size() != fed.subtree_samples(fed.net.root()))
        throw ProtocolError("embedding stores are not initialised; run init_phase first");
    EpochRunner(fed, cfg, epoch, options).train(fed.net.root());
}

double evaluate(const nn::ModelParams& model, const data::Dataset& test) {
    if (test.samples.empty()) throw DataError("evaluation on an empty test set");
    std::size_t correct = 0;
    for (const auto& s : test.samples) {
        auto z = nn::forward(model, s.x);
        auto pred = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
        if (pred == s.y) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

EpochMetrics evaluate_federation(const Federation& fed, const data::Dataset& test, std::size_t epoch) {
    EpochMetrics m{epoch, evaluate(fed.state(fed.net.root()).model, test), {}};
    for (int t = 1; t <= fed.net.tier_count(); ++t) {
        auto members = fed.net.tier(t);
        double sum = 0.0;
        for (auto id : members) sum += evaluate(fed.state(id).model, test);
        m.tier_accuracy.push_back(sum / static_cast<double>(members.size()));
    }
    return m;
}

std::vector<EpochMetrics> run_fedagg(Federation& fed, const protocol::DistillConfig& cfg, std::size_t epochs,
                                     const data::Dataset& test, const RunOptions& options) {
    cfg.validate();
    init_phase(fed);
    std::vector<EpochMetrics> rows;
    auto record = [&](std::size_t epoch) {
        rows.push_back(evaluate_federation(fed, test, epoch));
        if (options.after_epoch) options.after_epoch(fed, rows.back());
    };
    if (options.start_epoch == 0) record(0);
    for (std::size_t epoch = options.start_epoch + 1; epoch <= epochs; ++epoch) {
        if (options.before_epoch) options.before_epoch(fed, epoch);
        fedagg_train_epoch(fed, cfg, epoch, options.train);
        record(epoch);
    }
    return rows;
}

void migrate_node(Federation& fed, topo::NodeId v, topo::NodeId new_parent, const topo::ProtocolCompat& compat) {
    fed.net = topo::migrate(fed.net, v, new_parent, compat);
    init_phase(fed);
}

void BaselineConfig::validate() const {
    if (kappa1 < 1 || kappa2 < 1) throw ConfigError("baseline", "kappa1 and kappa2 must be >= 1");
}

nn::ModelParams weighted_average(const std::vector<const nn::ModelParams*>& models, const std::vector<double>& weights) {
    if (models.empty() || models.size() != weights.size()) throw DimensionError("weighted average needs one weight per model");
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw DimensionError("weighted average needs positive total weight");
    nn::ModelParams out = *models.front();
    for (auto& layer : out.layers) {
        std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
    for (std::size_t m = 0; m < models.size(); ++m) {
        const auto& src = *models[m];
        if (!(src.spec == out.spec)) throw BottleneckConstraintError("cannot average models of different structure");
        const double w = weights[m] / total;
        for (std::size_t li = 0; li < out.layers.size(); ++li) {
            auto& dst = out.layers[li];
            for (std::size_t i = 0; i < dst.weights.size(); ++i) dst.weights[i] += w * src.layers[li].weights[i];
            for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += w * src.layers[li].bias[i];
        }
    }
    return out;
}

void require_homogeneous(const topo::EecNet& net) {
    const auto& reference = net.node(net.root()).model_spec;
    for (const auto& [id, desc] : net.nodes())
        if (!(desc.model_spec == reference))
            throw BottleneckConstraintError(
                "parameter averaging requires the same model structure on all computing nodes; node " +
                topo::to_string(id) + " differs from the cloud");
}

namespace {

void local_epoch(Federation& fed, topo::NodeId leaf, const LocalTraining& local, std::uint64_t seed) {
    NodeState& st = fed.state(leaf);
    auto samples = st.private_data->read_all(leaf, true, fed.audit);
    auto order = shuffled_indices(samples.size(), seed);
    std::vector<nn::LossTerm> terms;
    for (std::size_t start = 0; start < order.size(); start += local.batch_size) {
        std::size_t end = std::min(order.size(), start + local.batch_size);
        const double w = 1.0 / static_cast<double>(end - start);
        terms.clear();
        for (std::size_t k = start; k < end; ++k) {
            const auto& s = samples[order[k]];
            terms.push_back({s.x, nn::CrossEntropyLoss{s.y}, w});
        }
        nn::apply_sgd(st.model, nn::backward(st.model, terms), local.lr);
    }
}

void validate_local(const LocalTraining& local) {
    if (!(local.lr >= 0.0)) throw ConfigError("lr", "learning rate must be nonnegative");
    if (local.batch_size == 0) throw ConfigError("batch_size", "batch size must be positive");
}

// Replaces each node on tier t with the sample-weighted average of its children.
void aggregate_tier(Federation& fed, int t) {
    for (auto id : fed.net.tier(t)) {
        const auto& children = fed.net.children(id);
        if (children.empty()) continue;
        std::vector<const nn::ModelParams*> models;
        std::vector<double> weights;
        for (auto c : children) {
            auto n = fed.subtree_samples(c);
            if (n == 0) continue;
            models.push_back(&fed.state(c).model);
            weights.push_back(static_cast<double>(n));
        }
        if (models.empty()) continue;
        fed.state(id).model = weighted_average(models, weights);
    }
}

void broadcast_down(Federation& fed, topo::NodeId from) {
    for (auto c : fed.net.children(from)) {
        fed.state(c).model = fed.state(from).model;
        broadcast_down(fed, c);
    }
}

}  // namespace

std::vector<EpochMetrics> run_hierfavg(Federation& fed, const BaselineConfig& baseline, const LocalTraining& local,
                                       std::size_t epochs, const data::Dataset& test, const RunOptions& options) {
    require_homogeneous(fed.net);
    baseline.validate();
    validate_local(local);
    const int leaf_parent_tier = fed.net.tier_count() - 1;
    if (options.start_epoch == 0) broadcast_down(fed, fed.net.root());

    std::vector<EpochMetrics> rows;
    auto record = [&](std::size_t epoch) {
        rows.push_back(evaluate_federation(fed, test, epoch));
        if (options.after_epoch) options.after_epoch(fed, rows.back());
    };
    if (options.start_epoch == 0) record(0);
    const std::uint64_t seed = options.train.seed;
    for (std::size_t epoch = options.start_epoch + 1; epoch <= epochs; ++epoch) {
        if (options.before_epoch) options.before_epoch(fed, epoch);
        for (std::size_t round = 0; round < baseline.kappa2; ++round) {
            for (auto leaf : fed.net.leaves())
                for (std::size_t k = 0; k < baseline.kappa1; ++k)
                    local_epoch(fed, leaf, local, derive_seed(seed, {epoch, round, k, leaf.value}));
            aggregate_tier(fed, leaf_parent_tier);
            for (auto edge : fed.net.tier(leaf_parent_tier)) broadcast_down(fed, edge);
        }
        for (int t = leaf_parent_tier; t >= 1; --t) aggregate_tier(fed, t);
        broadcast_down(fed, fed.net.root());
        record(epoch);
    }
    return rows;
}

std::map<topo::NodeId, double> run_local_only(Federation& fed, const LocalTraining& local, std::size_t epochs,
                                              const data::Dataset& test, std::uint64_t seed) {
    validate_local(local);
    std::map<topo::NodeId, double> accuracy;
    for (auto leaf : fed.net.leaves()) {
        for (std::size_t epoch = 1; epoch <= epochs; ++epoch)
            local_epoch(fed, leaf, local, derive_seed(seed, {epoch, leaf.value}));
        accuracy[leaf] = evaluate(fed.state(leaf).model, test);
    }
    return accuracy;
}

}  // namespace fedagg::orch
