#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedagg/errors.hpp"
#include "fedagg/protocol.hpp"
#include "fedagg/random.hpp"

using namespace fedagg;
using namespace fedagg::protocol;

namespace {

const topo::NodeId kCloud{0};
const topo::NodeId kDevice{1};

nn::ModelParams linear_decoder(std::size_t emb, std::size_t out, std::uint64_t seed) {
    return nn::init_params({{emb, out}, nn::Activation::identity}, seed);
}

std::vector<EmbeddingRecord> random_records(std::mt19937_64& rng, std::size_t n, std::size_t emb, std::size_t classes,
                                            topo::NodeId leaf = kDevice) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<EmbeddingRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        nn::Vector e(emb);
        for (double& v : e) v = g(rng);
        out.push_back({e, i % classes, leaf, 100 + i});
    }
    return out;
}

// Scalar distillation objective evaluated from first principles.
double oracle_distill(const nn::Vector& z, std::size_t y, const nn::Vector& t, double beta, double temperature) {
    auto softmax = [](const nn::Vector& v, double temp) {
        nn::Vector e(v.size());
        double s = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) s += (e[i] = std::exp(v[i] / temp));
        for (double& x : e) x /= s;
        return e;
    };
    auto p = softmax(z, 1.0);
    auto q = softmax(t, temperature);
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
    return -std::log(p[y]) + beta * kl;
}

// Two-layer ReLU student [2, 4, 2] trained by hand: forward, distillation
// logit gradient, manual backprop and SGD, in the library's minibatch order.
struct ScriptedStudent {
    double w1[4][2], b1[4], w2[2][4], b2[2];

    explicit ScriptedStudent(const nn::ModelParams& p) {
        for (int o = 0; o < 4; ++o) {
            b1[o] = p.layers[0].bias[o];
            for (int i = 0; i < 2; ++i) w1[o][i] = p.layers[0].weights[o * 2 + i];
        }
        for (int o = 0; o < 2; ++o) {
            b2[o] = p.layers[1].bias[o];
            for (int i = 0; i < 4; ++i) w2[o][i] = p.layers[1].weights[o * 4 + i];
        }
    }

    void step(const std::vector<nn::Vector>& xs, const std::vector<std::size_t>& ys, const std::vector<nn::Vector>& ts,
              double beta, double temperature, double lr) {
        double gw1[4][2] = {}, gb1[4] = {}, gw2[2][4] = {}, gb2[2] = {};
        const double inv = 1.0 / static_cast<double>(xs.size());
        for (std::size_t n = 0; n < xs.size(); ++n) {
            double pre[4], h[4], z[2];
            for (int o = 0; o < 4; ++o) {
                pre[o] = b1[o] + w1[o][0] * xs[n][0] + w1[o][1] * xs[n][1];
                h[o] = pre[o] > 0 ? pre[o] : 0.0;
            }
            for (int o = 0; o < 2; ++o) z[o] = b2[o] + w2[o][0] * h[0] + w2[o][1] * h[1] + w2[o][2] * h[2] + w2[o][3] * h[3];
            double m = std::max(z[0], z[1]);
            double p0 = std::exp(z[0] - m), p1 = std::exp(z[1] - m);
            double p[2] = {p0 / (p0 + p1), p1 / (p0 + p1)};
            double tm = std::max(ts[n][0], ts[n][1]) / temperature;
            double q0 = std::exp(ts[n][0] / temperature - tm), q1 = std::exp(ts[n][1] / temperature - tm);
            double q[2] = {q0 / (q0 + q1), q1 / (q0 + q1)};
            double a[2] = {std::log(p[0]) - std::log(q[0]), std::log(p[1]) - std::log(q[1])};
            double mean_a = p[0] * a[0] + p[1] * a[1];
            double dz[2];
            for (int j = 0; j < 2; ++j)
                dz[j] = inv * (p[j] - (static_cast<std::size_t>(j) == ys[n] ? 1.0 : 0.0) + beta * p[j] * (a[j] - mean_a));
            double dh[4] = {};
            for (int o = 0; o < 2; ++o) {
                gb2[o] += dz[o];
                for (int i = 0; i < 4; ++i) {
                    gw2[o][i] += dz[o] * h[i];
                    dh[i] += dz[o] * w2[o][i];
                }
            }
            for (int o = 0; o < 4; ++o) {
                double d = pre[o] > 0 ? dh[o] : 0.0;
                gb1[o] += d;
                gw1[o][0] += d * xs[n][0];
                gw1[o][1] += d * xs[n][1];
            }
        }
        for (int o = 0; o < 4; ++o) {
            b1[o] -= lr * gb1[o];
            for (int i = 0; i < 2; ++i) w1[o][i] -= lr * gw1[o][i];
        }
        for (int o = 0; o < 2; ++o) {
            b2[o] -= lr * gb2[o];
            for (int i = 0; i < 4; ++i) w2[o][i] -= lr * gw2[o][i];
        }
    }

    void expect_near(const nn::ModelParams& p, double tol) const {
        for (int o = 0; o < 4; ++o) {
            EXPECT_NEAR(p.layers[0].bias[o], b1[o], tol);
            for (int i = 0; i < 2; ++i) EXPECT_NEAR(p.layers[0].weights[o * 2 + i], w1[o][i], tol);
        }
        for (int o = 0; o < 2; ++o) {
            EXPECT_NEAR(p.layers[1].bias[o], b2[o], tol);
            for (int i = 0; i < 4; ++i) EXPECT_NEAR(p.layers[1].weights[o * 4 + i], w2[o][i], tol);
        }
    }
};

struct PairFixture {
    topo::EecNet net;
    nn::ModelParams decoder;
    nn::ModelParams cloud_model, device_model;
    EmbeddingStore cloud_store{kCloud}, device_store{kDevice};
    PrivateShard shard;

    explicit PairFixture(std::size_t n) {
        nn::ModelSpec spec{{2, 4, 2}, nn::Activation::relu};
        net = topo::build_tree(topo::balanced_layout({1, 1}, {spec, spec}));
        decoder = linear_decoder(1, 2, 3);
        cloud_model = nn::init_params(spec, 10);
        device_model = nn::init_params(spec, 11);
        std::mt19937_64 rng(5);
        data::ClientDataset ds{kDevice, {}};
        for (const auto& r : random_records(rng, n, 1, 2)) {
            device_store.insert(r);
            ds.samples.push_back({ae::decode(decoder, r.eps), r.label, r.sample_id});
        }
        cloud_store.merge(device_store);
        shard = PrivateShard(ds);
    }

    Participant cloud() const { return {kCloud, cloud_model, decoder, cloud_store, nullptr}; }
    Participant device() const { return {kDevice, device_model, decoder, device_store, &shard}; }
};

}  // namespace

TEST(StoreTest, SortedUniqueAndIntersection) {
    EmbeddingStore a{kCloud}, b{kCloud};
    a.insert({{1.0}, 0, topo::NodeId{3}, 2});
    a.insert({{2.0}, 1, topo::NodeId{1}, 9});
    a.insert({{3.0}, 1, topo::NodeId{1}, 4});
    EXPECT_EQ(a.records()[0].sample_id, 4u);
    EXPECT_EQ(a.records()[2].origin_leaf, topo::NodeId{3});
    EXPECT_THROW(a.insert({{0.0}, 0, topo::NodeId{1}, 9}), ProtocolError);
    b.insert({{2.0}, 1, topo::NodeId{1}, 9});
    b.insert({{5.0}, 1, topo::NodeId{5}, 9});
    auto shared = shared_records(a, b);
    ASSERT_EQ(shared.size(), 1u);
    EXPECT_EQ(shared[0].key(), (RecordKey{topo::NodeId{1}, 9}));
}

TEST(ExtractLogitsTest, EmptyZeroAndOracle) {
    auto decoder = linear_decoder(2, 3, 1);
    auto model = nn::init_params({{3, 5, 4}, nn::Activation::relu}, 2);
    EXPECT_TRUE(extract_logits(model, decoder, {}).empty());

    std::mt19937_64 rng(1);
    auto records = random_records(rng, 6, 2, 4);
    auto zero = nn::zero_params(model.spec);
    auto zero_packet = extract_logits(zero, decoder, records);
    for (const auto& e : zero_packet.entries()) EXPECT_EQ(e.z, nn::Vector(4, 0.0));

    auto packet = extract_logits(model, decoder, records);
    ASSERT_EQ(packet.size(), records.size());
    for (const auto& r : records) EXPECT_EQ(packet.at(r.key()).z, nn::forward(model, nn::forward(decoder, r.eps)));
    EXPECT_THROW(packet.at(RecordKey{topo::NodeId{77}, 1}), ProtocolError);
    EXPECT_THROW(extract_logits(nn::init_params({{2, 4}, nn::Activation::relu}, 0), decoder, records), DimensionError);
}

TEST(NonLeafLossTest, MatchesScalarOracle) {
    std::mt19937_64 rng(3);
    auto decoder = linear_decoder(2, 4, 4);
    auto student = nn::init_params({{4, 6, 3}, nn::Activation::relu}, 5);
    auto teacher = nn::init_params({{4, 9, 3}, nn::Activation::relu}, 6);
    auto records = random_records(rng, 5, 2, 3);
    auto packet = extract_logits(teacher, decoder, records);
    DistillConfig cfg;
    cfg.beta = 2.5;
    cfg.temperature = 1.7;
    double want = 0.0;
    for (const auto& r : records) {
        auto z = nn::forward(student, ae::decode(decoder, r.eps));
        want += oracle_distill(z, r.label, packet.at(r.key()).z, cfg.beta, cfg.temperature);
    }
    want /= static_cast<double>(records.size());
    EXPECT_NEAR(non_leaf_loss(student, decoder, records, packet, cfg), want, 1e-10);
}

TEST(NonLeafLossTest, BetaZeroAndSelfTeacherReduceToCe) {
    std::mt19937_64 rng(4);
    auto decoder = linear_decoder(2, 4, 4);
    auto student = nn::init_params({{4, 6, 3}, nn::Activation::relu}, 5);
    auto records = random_records(rng, 8, 2, 3);
    auto own = extract_logits(student, decoder, records);
    auto other = extract_logits(nn::init_params(student.spec, 99), decoder, records);
    double ce = 0.0;
    for (const auto& r : records)
        ce += nn::cross_entropy(nn::softmax_temperature(nn::forward(student, ae::decode(decoder, r.eps)), 1.0), r.label);
    ce /= static_cast<double>(records.size());

    DistillConfig beta0;
    beta0.beta = 0.0;
    EXPECT_NEAR(non_leaf_loss(student, decoder, records, other, beta0), ce, 1e-12);
    DistillConfig self;
    self.temperature = 1.0;
    EXPECT_NEAR(non_leaf_loss(student, decoder, records, own, self), ce, 1e-12);
}

TEST(NonLeafLossTest, MissingAlignmentRejected) {
    std::mt19937_64 rng(4);
    auto decoder = linear_decoder(2, 4, 4);
    auto student = nn::init_params({{4, 3}, nn::Activation::relu}, 5);
    auto records = random_records(rng, 4, 2, 3);
    auto partial = extract_logits(student, decoder, std::span(records).first(2));
    EXPECT_THROW(non_leaf_loss(student, decoder, records, partial, {}), ProtocolError);
}

TEST(LeafLossTest, ComposesLocalCeAndDistillation) {
    std::mt19937_64 rng(6);
    auto decoder = linear_decoder(2, 4, 7);
    auto student = nn::init_params({{4, 6, 3}, nn::Activation::relu}, 8);
    auto teacher = nn::init_params({{4, 5, 3}, nn::Activation::relu}, 9);
    auto records = random_records(rng, 6, 2, 3);
    std::vector<data::LabeledSample> priv;
    std::normal_distribution<double> g;
    for (const auto& r : records) priv.push_back({{g(rng), g(rng), g(rng), g(rng)}, r.label, r.sample_id});
    auto packet = extract_logits(teacher, decoder, records);

    double local = 0.0;
    for (const auto& s : priv) local += nn::cross_entropy(nn::softmax_temperature(nn::forward(student, s.x), 1.0), s.y);
    local /= static_cast<double>(priv.size());

    DistillConfig g0;
    g0.gamma = 0.0;
    EXPECT_NEAR(leaf_loss(student, decoder, priv, records, packet, g0), local, 1e-12);

    DistillConfig cfg;
    cfg.gamma = 0.7;
    cfg.beta = 3.0;
    double bridge = non_leaf_loss(student, decoder, records, packet, cfg);
    EXPECT_NEAR(leaf_loss(student, decoder, priv, records, packet, cfg), local + 0.7 * bridge, 1e-12);

    auto shuffled = records;
    std::swap(shuffled[0], shuffled[1]);
    EXPECT_THROW(leaf_loss(student, decoder, priv, shuffled, packet, cfg), ProtocolError);
}

TEST(LossGradientTest, BothLossesPassFiniteDifferences) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        auto decoder = linear_decoder(2, 5, trial);
        auto student = nn::init_params({{5, 7, 6, 3}, nn::Activation::relu}, 100 + trial);
        auto teacher = nn::init_params({{5, 4, 3}, nn::Activation::relu}, 200 + trial);
        auto records = random_records(rng, 6, 2, 3);
        auto packet = extract_logits(teacher, decoder, records);
        DistillConfig cfg;
        cfg.beta = 0.5 + trial;
        cfg.gamma = 0.3 * (trial + 1);
        cfg.temperature = 0.5 + 0.4 * trial;
        EXPECT_LT(nn::finite_difference_check(student, non_leaf_terms(decoder, records, packet, cfg), 1e-5)
                      .max_relative_error,
                  1e-4);
        std::vector<data::LabeledSample> priv;
        for (const auto& r : records) priv.push_back({ae::decode(decoder, r.eps), r.label, r.sample_id});
        EXPECT_LT(nn::finite_difference_check(student, leaf_terms(decoder, priv, records, packet, cfg), 1e-5)
                      .max_relative_error,
                  1e-4);
    }
}

TEST(DirectionalTest, OneRecordIsOneStep) {
    PairFixture f(1);
    DistillConfig cfg;
    cfg.lr = 0.1;
    auto shared = shared_records(f.cloud_store, f.device_store);
    auto updated = bsbodp_directional(f.cloud(), f.device(), shared, cfg, 1);
    auto packet = extract_logits(f.device_model, f.decoder, shared);
    auto grads = nn::backward(f.cloud_model, non_leaf_terms(f.decoder, shared, packet, cfg));
    EXPECT_EQ(updated, nn::sgd_step(f.cloud_model, grads, 0.1));
}

TEST(DirectionalTest, ZeroLearningRateLeavesStudent) {
    PairFixture f(6);
    DistillConfig cfg;
    cfg.lr = 0.0;
    auto shared = shared_records(f.cloud_store, f.device_store);
    EXPECT_EQ(bsbodp_directional(f.cloud(), f.device(), shared, cfg, 1), f.cloud_model);
    auto [a, b] = bsbodp(f.net, f.device(), f.cloud(), cfg, 3);
    EXPECT_EQ(a, f.device_model);
    EXPECT_EQ(b, f.cloud_model);
}

TEST(DirectionalTest, MatchesScriptedOracle) {
    PairFixture f(4);
    DistillConfig cfg;
    cfg.lr = 0.05;
    cfg.batch_size = 3;
    cfg.passes_per_exchange = 2;
    const std::uint64_t seed = 42;
    auto shared = shared_records(f.cloud_store, f.device_store);
    auto packet = extract_logits(f.device_model, f.decoder, shared);
    auto updated = bsbodp_directional(f.cloud(), f.device(), shared, cfg, seed);

    ScriptedStudent oracle(f.cloud_model);
    for (std::size_t pass = 0; pass < cfg.passes_per_exchange; ++pass) {
        auto order = shuffled_indices(shared.size(), derive_seed(seed, {pass}));
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<nn::Vector> xs, ts;
            std::vector<std::size_t> ys;
            for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
                const auto& r = shared[order[k]];
                xs.push_back(ae::decode(f.decoder, r.eps));
                ys.push_back(r.label);
                ts.push_back(packet.at(r.key()).z);
            }
            oracle.step(xs, ys, ts, cfg.beta, cfg.temperature, cfg.lr);
        }
    }
    oracle.expect_near(updated, 1e-12);
}

TEST(DirectionalTest, TeacherUntouchedAndDeterministic) {
    PairFixture f(10);
    auto teacher_before = f.device_model;
    auto shared = shared_records(f.cloud_store, f.device_store);
    auto a = bsbodp_directional(f.cloud(), f.device(), shared, {}, 7);
    auto b = bsbodp_directional(f.cloud(), f.device(), shared, {}, 7);
    EXPECT_EQ(f.device_model, teacher_before);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, f.cloud_model);
    EXPECT_THROW(bsbodp_directional(f.cloud(), f.device(), {}, {}, 7), ProtocolError);
}

TEST(DirectionalTest, LeafStudentReadsOnlyItsOwnShard) {
    PairFixture f(10);
    AccessAudit audit;
    ExchangeContext ctx{&audit, {}};
    auto shared = shared_records(f.device_store, f.cloud_store);
    bsbodp_directional(f.device(), f.cloud(), shared, {}, 7, ctx);
    EXPECT_EQ(audit.reads_by(kDevice), 10u);
    EXPECT_EQ(audit.reads_by(kCloud), 0u);
    EXPECT_EQ(audit.violations(), 0u);
    audit.record(kCloud, kDevice, false, 1);
    EXPECT_EQ(audit.violations(), 1u);
}

TEST(BsbodpTest, SharedSetIsTheChildStore) {
    PairFixture f(12);
    EXPECT_EQ(shared_records(f.cloud_store, f.device_store), std::vector<EmbeddingRecord>(f.device_store.records().begin(),
                                                                                          f.device_store.records().end()));
}

TEST(BsbodpTest, SecondPassUsesUpdatedFirstStudent) {
    PairFixture f(9);
    DistillConfig cfg;
    cfg.lr = 0.05;
    std::vector<std::pair<topo::NodeId, topo::NodeId>> packets;
    ExchangeContext ctx{nullptr, [&](topo::NodeId s, topo::NodeId t, const LogitsPacket&) { packets.emplace_back(s, t); }};
    auto [device_new, cloud_new] = bsbodp(f.net, f.device(), f.cloud(), cfg, 11, ctx);
    ASSERT_EQ(packets.size(), 2u);
    EXPECT_EQ(packets[0], std::make_pair(kDevice, kCloud));
    EXPECT_EQ(packets[1], std::make_pair(kCloud, kDevice));

    auto shared = shared_records(f.device_store, f.cloud_store);
    auto first = bsbodp_directional(f.device(), f.cloud(), shared, cfg, derive_seed(11, {1}));
    EXPECT_EQ(first, device_new);
    Participant updated{kDevice, first, f.decoder, f.device_store, &f.shard};
    EXPECT_EQ(bsbodp_directional(f.cloud(), updated, shared, cfg, derive_seed(11, {2})), cloud_new);
}

TEST(BsbodpTest, IdenticalNonLeafPeersGetIdenticalFirstPass) {
    PairFixture f(8);
    f.device_model = f.cloud_model;
    auto shared = shared_records(f.cloud_store, f.device_store);
    Participant a{kCloud, f.cloud_model, f.decoder, f.cloud_store, nullptr};
    Participant b{kDevice, f.device_model, f.decoder, f.device_store, nullptr};
    EXPECT_EQ(bsbodp_directional(a, b, shared, {}, 3), bsbodp_directional(b, a, shared, {}, 3));
}

TEST(BsbodpTest, RejectsNonAdjacentPair) {
    nn::ModelSpec spec{{2, 4, 2}, nn::Activation::relu};
    auto net = topo::build_tree(topo::balanced_layout({1, 1, 1}, {spec, spec, spec}));
    PairFixture f(2);
    Participant root{topo::NodeId{0}, f.cloud_model, f.decoder, f.cloud_store, nullptr};
    Participant leaf{topo::NodeId{2}, f.device_model, f.decoder, f.device_store, nullptr};
    EXPECT_THROW(bsbodp(net, root, leaf, {}, 1), ProtocolError);
}

TEST(DistillConfigTest, Defaults) {
    DistillConfig cfg;
    EXPECT_EQ(cfg.beta, 10.0);
    EXPECT_EQ(cfg.gamma, 1.0);
    EXPECT_EQ(cfg.temperature, 3.0);
    EXPECT_EQ(cfg.lr, 0.001);
    EXPECT_EQ(cfg.batch_size, 8u);
    EXPECT_EQ(cfg.passes_per_exchange, 1u);
    cfg.temperature = 0.0;
    EXPECT_THROW(cfg.validate(), ProtocolError);
}
