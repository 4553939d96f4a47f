#include "fedagg/protocol.hpp"

#include <algorithm>

#include "fedagg/errors.hpp"
#include "fedagg/random.hpp"

namespace fedagg::protocol {

namespace {

bool key_less(const EmbeddingRecord& a, const EmbeddingRecord& b) { return a.key() < b.key(); }

}  // namespace

void EmbeddingStore::insert(EmbeddingRecord record) {
    auto it = std::lower_bound(records_.begin(), records_.end(), record, key_less);
    if (it != records_.end() && it->key() == record.key())
        throw ProtocolError("duplicate embedding for leaf " + topo::to_string(record.origin_leaf) + " sample " +
                            std::to_string(record.sample_id));
    records_.insert(it, std::move(record));
}

void EmbeddingStore::merge(const EmbeddingStore& other) {
    for (const auto& r : other.records()) insert(r);
}

bool EmbeddingStore::contains(const RecordKey& key) const {
    auto it = std::lower_bound(records_.begin(), records_.end(), key,
                               [](const EmbeddingRecord& r, const RecordKey& k) { return r.key() < k; });
    return it != records_.end() && it->key() == key;
}

std::vector<EmbeddingRecord> shared_records(const EmbeddingStore& a, const EmbeddingStore& b) {
    std::vector<EmbeddingRecord> out;
    std::set_intersection(a.records().begin(), a.records().end(), b.records().begin(), b.records().end(),
                          std::back_inserter(out), key_less);
    return out;
}

void AccessAudit::record(topo::NodeId reader, topo::NodeId owner, bool reader_is_leaf, std::size_t count) {
    reads_[reader] += count;
    total_ += count;
    if (!reader_is_leaf || reader != owner) violations_ += count;
}

std::size_t AccessAudit::reads_by(topo::NodeId reader) const {
    auto it = reads_.find(reader);
    return it == reads_.end() ? 0 : it->second;
}

PrivateShard::PrivateShard(data::ClientDataset dataset) : dataset_(std::move(dataset)) {
    for (std::size_t i = 0; i < dataset_.samples.size(); ++i)
        if (!index_.emplace(dataset_.samples[i].sample_id, i).second)
            throw DataError("duplicate sample id " + std::to_string(dataset_.samples[i].sample_id));
}

std::span<const data::LabeledSample> PrivateShard::read_all(topo::NodeId reader, bool reader_is_leaf,
                                                            AccessAudit& audit) const {
    audit.record(reader, owner(), reader_is_leaf, dataset_.size());
    return dataset_.samples;
}

const data::LabeledSample& PrivateShard::read(std::uint64_t sample_id, topo::NodeId reader, bool reader_is_leaf,
                                              AccessAudit& audit) const {
    auto it = index_.find(sample_id);
    if (it == index_.end())
        throw ProtocolError("leaf " + topo::to_string(owner()) + " holds no sample " + std::to_string(sample_id));
    audit.record(reader, owner(), reader_is_leaf, 1);
    return dataset_.samples[it->second];
}

void LogitsPacket::push(LogitsEntry entry) {
    if (!index_.emplace(entry.key(), entries_.size()).second)
        throw ProtocolError("duplicate logits entry for sample " + std::to_string(entry.sample_id));
    entries_.push_back(std::move(entry));
}

const LogitsEntry& LogitsPacket::at(const RecordKey& key) const {
    auto it = index_.find(key);
    if (it == index_.end())
        throw ProtocolError("teacher logits missing for leaf " + topo::to_string(key.origin_leaf) + " sample " +
                            std::to_string(key.sample_id));
    return entries_[it->second];
}

void DistillConfig::validate() const {
    if (!(beta >= 0.0)) throw ProtocolError("beta must be nonnegative");
    if (!(gamma >= 0.0)) throw ProtocolError("gamma must be nonnegative");
    if (!(temperature > 0.0)) throw ProtocolError("temperature must be positive");
    if (!(lr >= 0.0)) throw ProtocolError("learning rate must be nonnegative");
    if (batch_size == 0) throw ProtocolError("batch size must be positive");
    if (passes_per_exchange == 0) throw ProtocolError("passes per exchange must be positive");
}

LogitsPacket extract_logits(const nn::ModelParams& model, const nn::ModelParams& decoder,
                            std::span<const EmbeddingRecord> records) {
    if (model.spec.input_width() != decoder.spec.output_width())
        throw DimensionError("model input width differs from the bridge-sample dimension");
    LogitsPacket packet;
    for (const auto& r : records)
        packet.push({r.origin_leaf, r.sample_id, nn::forward(model, ae::decode(decoder, r.eps))});
    return packet;
}

std::vector<nn::LossTerm> non_leaf_terms(const nn::ModelParams& decoder, std::span<const EmbeddingRecord> batch,
                                         const LogitsPacket& teacher_logits, const DistillConfig& cfg, double scale) {
    std::vector<nn::LossTerm> terms;
    terms.reserve(batch.size());
    if (batch.empty()) return terms;
    const double w = scale / static_cast<double>(batch.size());
    for (const auto& r : batch) {
        const auto& entry = teacher_logits.at(r.key());
        terms.push_back({ae::decode(decoder, r.eps),
                         nn::DistillationLoss{r.label, entry.z, cfg.beta, cfg.temperature}, w});
    }
    return terms;
}

double non_leaf_loss(const nn::ModelParams& student, const nn::ModelParams& decoder,
                     std::span<const EmbeddingRecord> batch, const LogitsPacket& teacher_logits,
                     const DistillConfig& cfg) {
    if (batch.empty()) throw ProtocolError("non-leaf loss of an empty batch");
    auto terms = non_leaf_terms(decoder, batch, teacher_logits, cfg);
    for (const auto& t : terms) {
        const auto& z = std::get<nn::DistillationLoss>(t.loss).teacher_logits;
        if (z.size() != student.spec.output_width())
            throw DimensionError("teacher and student disagree on the class count");
    }
    return nn::total_loss(student, terms);
}

std::vector<nn::LossTerm> leaf_terms(const nn::ModelParams& decoder, std::span<const data::LabeledSample> private_batch,
                                     std::span<const EmbeddingRecord> emb_batch, const LogitsPacket& teacher_logits,
                                     const DistillConfig& cfg) {
    if (private_batch.size() != emb_batch.size() || private_batch.empty())
        throw ProtocolError("private batch and embedding batch are misaligned");
    for (std::size_t i = 0; i < private_batch.size(); ++i)
        if (private_batch[i].sample_id != emb_batch[i].sample_id || private_batch[i].y != emb_batch[i].label)
            throw ProtocolError("private batch and embedding batch are misaligned at position " + std::to_string(i));
    const double w = 1.0 / static_cast<double>(private_batch.size());
    std::vector<nn::LossTerm> terms;
    terms.reserve(2 * private_batch.size());
    for (const auto& s : private_batch) terms.push_back({s.x, nn::CrossEntropyLoss{s.y}, w});
    if (cfg.gamma != 0.0) {
        auto bridge = non_leaf_terms(decoder, emb_batch, teacher_logits, cfg, cfg.gamma);
        std::move(bridge.begin(), bridge.end(), std::back_inserter(terms));
    }
    return terms;
}

double leaf_loss(const nn::ModelParams& student, const nn::ModelParams& decoder,
                 std::span<const data::LabeledSample> private_batch, std::span<const EmbeddingRecord> emb_batch,
                 const LogitsPacket& teacher_logits, const DistillConfig& cfg) {
    auto terms = leaf_terms(decoder, private_batch, emb_batch, teacher_logits, cfg);
    return nn::total_loss(student, terms);
}

nn::ModelParams bsbodp_directional(const Participant& student, const Participant& teacher,
                                   std::span<const EmbeddingRecord> shared, const DistillConfig& cfg,
                                   std::uint64_t seed, const ExchangeContext& ctx) {
    cfg.validate();
    if (shared.empty())
        throw ProtocolError("no shared embeddings between " + topo::to_string(student.id) + " and " +
                            topo::to_string(teacher.id));
    if (student.model.spec.output_width() != teacher.model.spec.output_width())
        throw DimensionError("student and teacher disagree on the class count");

    LogitsPacket packet = extract_logits(teacher.model, teacher.decoder, shared);
    if (ctx.on_packet) ctx.on_packet(student.id, teacher.id, packet);

    AccessAudit scratch;
    AccessAudit& audit = ctx.audit ? *ctx.audit : scratch;
    const bool student_is_leaf = student.private_data != nullptr;

    nn::ModelParams params = student.model;
    std::vector<EmbeddingRecord> batch;
    std::vector<data::LabeledSample> private_batch;
    for (std::size_t pass = 0; pass < cfg.passes_per_exchange; ++pass) {
        auto order = shuffled_indices(shared.size(), derive_seed(seed, {pass}));
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            for (std::size_t k = start; k < end; ++k) batch.push_back(shared[order[k]]);
            std::vector<nn::LossTerm> terms;
            if (student_is_leaf) {
                private_batch.clear();
                for (const auto& r : batch) {
                    if (r.origin_leaf != student.id)
                        throw ProtocolError("leaf " + topo::to_string(student.id) +
                                            " was handed an embedding from leaf " + topo::to_string(r.origin_leaf));
                    private_batch.push_back(student.private_data->read(r.sample_id, student.id, true, audit));
                }
                terms = leaf_terms(student.decoder, private_batch, batch, packet, cfg);
            } else {
                terms = non_leaf_terms(student.decoder, batch, packet, cfg);
            }
            nn::apply_sgd(params, nn::backward(params, terms), cfg.lr);
        }
    }
    return params;
}

std::pair<nn::ModelParams, nn::ModelParams> bsbodp(const topo::EecNet& net, const Participant& v1,
                                                   const Participant& v2, const DistillConfig& cfg,
                                                   std::uint64_t seed, const ExchangeContext& ctx) {
    auto is_parent = [&](topo::NodeId p, topo::NodeId c) {
        const auto& n = net.node(c);
        return n.parent && *n.parent == p;
    };
    if (!is_parent(v1.id, v2.id) && !is_parent(v2.id, v1.id))
        throw ProtocolError("nodes " + topo::to_string(v1.id) + " and " + topo::to_string(v2.id) +
                            " are not a parent-child pair");
    auto shared = shared_records(v1.store, v2.store);
    nn::ModelParams v1_new = bsbodp_directional(v1, v2, shared, cfg, derive_seed(seed, {1}), ctx);
    Participant v1_updated{v1.id, v1_new, v1.decoder, v1.store, v1.private_data};
    nn::ModelParams v2_new = bsbodp_directional(v2, v1_updated, shared, cfg, derive_seed(seed, {2}), ctx);
    return {std::move(v1_new), std::move(v2_new)};
}

}  // namespace fedagg::protocol
