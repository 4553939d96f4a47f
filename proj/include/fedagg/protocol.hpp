#pragma once

// Bridge-sample online distillation between a parent-child pair. Each side
// holds the shared decoder; the teacher turns stored embeddings into bridge
// samples, extracts logits, and the student fits them alongside the labels.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "fedagg/autoencoder.hpp"
#include "fedagg/data.hpp"
#include "fedagg/nn.hpp"
#include "fedagg/topology.hpp"

namespace fedagg::protocol {

struct RecordKey {
    topo::NodeId origin_leaf;
    std::uint64_t sample_id = 0;

    auto operator<=>(const RecordKey&) const = default;
};

struct EmbeddingRecord {
    ae::Embedding eps;
    std::size_t label = 0;
    topo::NodeId origin_leaf;
    std::uint64_t sample_id = 0;

    RecordKey key() const { return {origin_leaf, sample_id}; }
    bool operator==(const EmbeddingRecord&) const = default;
};

// Records kept sorted by (origin_leaf, sample_id) with unique keys.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    explicit EmbeddingStore(topo::NodeId owner) : owner_(owner) {}

    topo::NodeId owner() const { return owner_; }
    std::span<const EmbeddingRecord> records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    // Throws ProtocolError on a duplicate key.
    void insert(EmbeddingRecord record);
    void merge(const EmbeddingStore& other);
    void clear() { records_.clear(); }
    bool contains(const RecordKey& key) const;

    bool operator==(const EmbeddingStore&) const = default;

private:
    topo::NodeId owner_;
    std::vector<EmbeddingRecord> records_;
};

// Records present in both stores, in store order.
std::vector<EmbeddingRecord> shared_records(const EmbeddingStore& a, const EmbeddingStore& b);

// Counts every read of raw private samples, keyed by the reading node.
// A read by anyone other than the owning leaf is a violation.
class AccessAudit {
public:
    void record(topo::NodeId reader, topo::NodeId owner, bool reader_is_leaf, std::size_t count);

    std::size_t violations() const { return violations_; }
    std::size_t reads_by(topo::NodeId reader) const;
    std::size_t total_reads() const { return total_; }

private:
    std::map<topo::NodeId, std::size_t> reads_;
    std::size_t violations_ = 0;
    std::size_t total_ = 0;
};

// A leaf's private dataset. Samples are reachable only through read(),
// which reports the access to an audit.
class PrivateShard {
public:
    PrivateShard() = default;
    explicit PrivateShard(data::ClientDataset dataset);

    topo::NodeId owner() const { return dataset_.client; }
    std::size_t size() const { return dataset_.size(); }

    std::span<const data::LabeledSample> read_all(topo::NodeId reader, bool reader_is_leaf, AccessAudit& audit) const;
    const data::LabeledSample& read(std::uint64_t sample_id, topo::NodeId reader, bool reader_is_leaf,
                                    AccessAudit& audit) const;

private:
    data::ClientDataset dataset_;
    std::map<std::uint64_t, std::size_t> index_;
};

struct LogitsEntry {
    topo::NodeId origin_leaf;
    std::uint64_t sample_id = 0;
    nn::Vector z;

    RecordKey key() const { return {origin_leaf, sample_id}; }
};

class LogitsPacket {
public:
    void push(LogitsEntry entry);
    std::span<const LogitsEntry> entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    // Throws ProtocolError when the key is absent.
    const LogitsEntry& at(const RecordKey& key) const;

private:
    std::vector<LogitsEntry> entries_;
    std::map<RecordKey, std::size_t> index_;
};

struct DistillConfig {
    double beta = 10.0;
    double gamma = 1.0;
    double temperature = 3.0;
    double lr = 0.001;
    std::size_t batch_size = 8;
    std::size_t passes_per_exchange = 1;

    void validate() const;
};

LogitsPacket extract_logits(const nn::ModelParams& model, const nn::ModelParams& decoder,
                            std::span<const EmbeddingRecord> records);

// Loss terms of the non-leaf objective on one batch, each weighted
// scale / |batch|.
std::vector<nn::LossTerm> non_leaf_terms(const nn::ModelParams& decoder, std::span<const EmbeddingRecord> batch,
                                         const LogitsPacket& teacher_logits, const DistillConfig& cfg,
                                         double scale = 1.0);

// mean over the batch of CE(softmax(f(dec(eps))), y) + beta * KL(softmax(f(dec(eps))) || softmax(z / T))
double non_leaf_loss(const nn::ModelParams& student, const nn::ModelParams& decoder,
                     std::span<const EmbeddingRecord> batch, const LogitsPacket& teacher_logits,
                     const DistillConfig& cfg);

// Private batch and embedding batch must align one-to-one by sample_id.
std::vector<nn::LossTerm> leaf_terms(const nn::ModelParams& decoder, std::span<const data::LabeledSample> private_batch,
                                     std::span<const EmbeddingRecord> emb_batch, const LogitsPacket& teacher_logits,
                                     const DistillConfig& cfg);

// mean CE on private samples + gamma * non_leaf_loss on the aligned embeddings
double leaf_loss(const nn::ModelParams& student, const nn::ModelParams& decoder,
                 std::span<const data::LabeledSample> private_batch, std::span<const EmbeddingRecord> emb_batch,
                 const LogitsPacket& teacher_logits, const DistillConfig& cfg);

// Read-only view of one side of an exchange.
struct Participant {
    topo::NodeId id;
    const nn::ModelParams& model;
    const nn::ModelParams& decoder;
    const EmbeddingStore& store;
    const PrivateShard* private_data = nullptr;  // set iff the node is a leaf
};

struct ExchangeContext {
    AccessAudit* audit = nullptr;
    // Called with every packet a teacher sends.
    std::function<void(topo::NodeId student, topo::NodeId teacher, const LogitsPacket&)> on_packet;
};

// One directional pass: the teacher extracts logits once over the shared
// records, then the student runs passes_per_exchange epochs of minibatch SGD
// on them. The minibatch order of epoch p is shuffled_indices(n, derive_seed(seed, {p})).
nn::ModelParams bsbodp_directional(const Participant& student, const Participant& teacher,
                                   std::span<const EmbeddingRecord> shared, const DistillConfig& cfg,
                                   std::uint64_t seed, const ExchangeContext& ctx = {});

// Student-v1 pass followed by student-v2 pass; the second pass's teacher is
// v1 with its freshly updated parameters. Throws ProtocolError unless the
// two nodes are a parent-child pair in net.
std::pair<nn::ModelParams, nn::ModelParams> bsbodp(const topo::EecNet& net, const Participant& v1,
                                                   const Participant& v2, const DistillConfig& cfg,
                                                   std::uint64_t seed, const ExchangeContext& ctx = {});

}  // namespace fedagg::protocol
