// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedagg/errors.hpp"
#include "fedagg/harness.hpp"
#include "fedagg/random.hpp"
#include "../support.hpp"

using namespace fedagg;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

struct Verdict {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Verdict()>& check) {
    auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = check();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!v.pass) ++failures;
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), v.detail.c_str(),
                secs);
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path out_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("fedagg_acceptance_" + name);
    fs::remove_all(dir);
    return dir;
}

harness::RunResult run(harness::ExperimentConfig cfg, const std::string& tag) {
    cfg.output_dir = out_dir(tag + "_" + std::to_string(cfg.seed));
    return harness::run_experiment(cfg);
}

double final_cloud(const harness::RunResult& r) { return r.rows.back().cloud_accuracy; }

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::string list(const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.3f", x);
    return "[" + s + "]";
}

// Mean final cloud accuracy over the five seeds for a config variant.
std::vector<double> cloud_over_seeds(const std::function<void(harness::ExperimentConfig&)>& edit, const std::string& tag) {
    std::vector<double> acc;
    for (auto seed : kSeeds) {
        auto cfg = testing::reference_config(seed);
        edit(cfg);
        acc.push_back(final_cloud(run(cfg, tag)));
    }
    return acc;
}

nn::Vector normal_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    nn::Vector v(n);
    for (double& x : v) x = g(rng);
    return v;
}

Verdict gradient_fidelity() {
    std::mt19937_64 rng(2024);
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    double worst = 0.0;
    std::size_t coords = 0;
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t classes = pick(2, 5), in = pick(3, 16), emb = pick(1, 2), depth = pick(1, 3);
        std::vector<std::size_t> widths{in};
        for (std::size_t d = 1; d < depth; ++d) widths.push_back(pick(2, 16));
        widths.push_back(classes);
        auto act = static_cast<nn::Activation>(trial % 3);
        auto student = nn::init_params({widths, act}, derive_seed(7, {std::uint64_t(trial)}));
        auto teacher = nn::init_params({{in, pick(2, 16), classes}, nn::Activation::relu}, trial + 1000);
        auto decoder = nn::init_params({{emb, in}, nn::Activation::identity}, trial + 2000);
        std::vector<protocol::EmbeddingRecord> records;
        std::vector<data::LabeledSample> priv;
        const std::size_t batch = pick(1, 8);
        for (std::size_t i = 0; i < batch; ++i) {
            std::size_t y = pick(0, classes - 1);
            records.push_back({normal_vector(rng, emb), y, topo::NodeId{1}, i});
            priv.push_back({normal_vector(rng, in), y, i});
        }
        auto packet = protocol::extract_logits(teacher, decoder, records);
        protocol::DistillConfig cfg;
        cfg.beta = std::uniform_real_distribution<double>(0.0, 20.0)(rng);
        cfg.gamma = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
        cfg.temperature = std::uniform_real_distribution<double>(0.5, 5.0)(rng);
        for (const auto& terms : {protocol::non_leaf_terms(decoder, records, packet, cfg),
                                  protocol::leaf_terms(decoder, priv, records, packet, cfg)}) {
            auto r = nn::finite_difference_check(student, terms, 1e-5);
            worst = std::max(worst, r.max_relative_error);
            coords += r.coordinates_checked;
        }
    }
    return {worst < 1e-4, fmt("max relative error %.2e over %zu coordinates (tolerance 1e-4)", worst, coords)};
}

Verdict loss_identities() {
    std::mt19937_64 rng(99);
    std::size_t bad_beta = 0, bad_gamma = 0, bad_kl = 0, bad_argmax = 0;
    double worst_beta = 0.0;
    for (int draw = 0; draw < 1000; ++draw) {
        std::size_t classes = 2 + draw % 4, in = 3 + draw % 5;
        auto student = nn::init_params({{in, 6, classes}, nn::Activation::relu}, draw);
        auto teacher = nn::init_params({{in, 5, classes}, nn::Activation::relu}, draw + 7);
        auto decoder = nn::init_params({{2, in}, nn::Activation::identity}, draw + 13);
        std::vector<protocol::EmbeddingRecord> records;
        std::vector<data::LabeledSample> priv;
        for (std::size_t i = 0; i < 4; ++i) {
            std::size_t y = rng() % classes;
            records.push_back({normal_vector(rng, 2), y, topo::NodeId{1}, i});
            priv.push_back({normal_vector(rng, in), y, i});
        }
        auto packet = protocol::extract_logits(teacher, decoder, records);

        protocol::DistillConfig cfg;
        cfg.beta = 0.0;
        double ce = 0.0;
        for (const auto& r : records)
            ce += nn::cross_entropy(nn::softmax_temperature(nn::forward(student, ae::decode(decoder, r.eps)), 1.0),
                                    r.label);
        ce /= 4.0;
        double d = std::abs(protocol::non_leaf_loss(student, decoder, records, packet, cfg) - ce);
        worst_beta = std::max(worst_beta, d);
        if (!(d < 1e-12)) ++bad_beta;

        cfg.beta = 10.0;
        cfg.gamma = 0.0;
        double local = 0.0;
        for (const auto& s : priv) local += nn::cross_entropy(nn::softmax_temperature(nn::forward(student, s.x), 1.0), s.y);
        local /= 4.0;
        if (std::abs(protocol::leaf_loss(student, decoder, priv, records, packet, cfg) - local) >= 1e-12) ++bad_gamma;

        auto z = normal_vector(rng, classes, 3.0);
        auto p = nn::softmax_temperature(z, 1.0);
        if (nn::kl_divergence(p, p) != 0.0) ++bad_kl;

        double t = std::uniform_real_distribution<double>(0.05, 20.0)(rng);
        auto pt = nn::softmax_temperature(z, t);
        auto arg = [](std::span<const double> v) { return std::max_element(v.begin(), v.end()) - v.begin(); };
        if (arg(pt.values()) != arg(z)) ++bad_argmax;
    }
    bool ok = bad_beta + bad_gamma + bad_kl + bad_argmax == 0;
    return {ok, fmt("1000 draws; failures beta=0:%zu gamma=0:%zu KL(p||p):%zu argmax:%zu; max |delta| beta=0 %.1e",
                    bad_beta, bad_gamma, bad_kl, bad_argmax, worst_beta)};
}

Verdict migration_properties() {
    std::mt19937_64 rng(31);
    auto eq = topo::ProtocolCompat::equivalence();
    std::size_t accepted = 0, attempted = 0, invalid = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto net = topo::build_tree(testing::random_layered_layout(rng, 3 + trial % 2, 30), true);
        for (int m = 0; m < 10; ++m) {
            std::vector<topo::NodeId> movable;
            for (const auto& [id, n] : net.nodes())
                if (n.tier >= 2) movable.push_back(id);
            auto v = movable[rng() % movable.size()];
            auto targets = net.tier(net.node(v).tier - 1);
            auto target = targets[rng() % targets.size()];
            ++attempted;
            if (!topo::can_migrate(net, v, target, eq)) continue;
            ++accepted;
            net = topo::migrate(net, v, target, eq);
            try {
                net.validate();
            } catch (const Error&) {
                ++invalid;
            }
        }
    }
    auto m = [](std::uint32_t x) { return nn::ModelSpec{{x, 1}, nn::Activation::relu}; };
    auto node = [&](std::uint32_t id, int tier, std::optional<std::uint32_t> parent) {
        topo::NodeLayout n{topo::NodeId{id}, tier, std::nullopt, m(id)};
        if (parent) n.parent = topo::NodeId{*parent};
        return n;
    };
    auto witness = topo::build_tree(
        {{node(10, 1, std::nullopt), node(9, 2, 10), node(5, 2, 10), node(8, 3, 9), node(7, 3, 9), node(4, 3, 5),
          node(3, 3, 5)}});
    auto size_le = [](const nn::ModelSpec& a, const nn::ModelSpec& b) { return a.input_width() <= b.input_width(); };
    auto verdict = topo::can_migrate(witness, topo::NodeId{7}, topo::NodeId{5}, topo::ProtocolCompat::partial_order(size_le));
    bool ok = accepted == attempted && invalid == 0 && !verdict;
    return {ok, fmt("%zu/%zu equivalence migrations accepted, %zu invalid trees; witness 7 -> 5 %s (%s)", accepted,
                    attempted, invalid, verdict ? "accepted" : "rejected", verdict.reason.c_str())};
}

}  // namespace

int main() {
    std::vector<harness::RunResult> fedagg_runs;

    report(1, "gradient fidelity", gradient_fidelity);
    report(2, "loss identities", loss_identities);
    report(3, "migration compatibility", migration_properties);

    report(4, "end-to-end learning", [&] {
        std::vector<double> cloud, local;
        for (auto seed : kSeeds) {
            auto cfg = testing::reference_config(seed);
            fedagg_runs.push_back(run(cfg, "fedagg"));
            cloud.push_back(final_cloud(fedagg_runs.back()));
            cfg.method = harness::Method::local;
            local.push_back(final_cloud(run(cfg, "local")));
        }
        std::size_t hits = 0;
        for (double a : cloud) hits += a >= 0.85;
        double margin = mean(cloud) - mean(local);
        return Verdict{hits >= 4 && margin >= 0.05,
                       fmt("cloud %s, %zu/5 seeds >= 0.85; local-only mean %.3f; margin %+.3f (need >= +0.05)",
                           list(cloud).c_str(), hits, mean(local), margin)};
    });

    report(5, "cloud-capacity trend", [&] {
        std::vector<double> large;
        for (const auto& r : fedagg_runs) large.push_back(final_cloud(r));
        auto small = cloud_over_seeds([](auto& c) { c.topology.models["cloud"] = c.topology.models["device"]; }, "small");
        return Verdict{mean(small) < mean(large), fmt("small cloud mean %.3f vs large cloud mean %.3f; gap %.3f",
                                                      mean(small), mean(large), mean(large) - mean(small))};
    });

    report(6, "beta sensitivity", [&] {
        auto with_beta = [](double beta) {
            return cloud_over_seeds([beta](auto& c) { c.distill.beta = beta; }, fmt("beta%g", beta));
        };
        std::vector<double> b10;
        for (const auto& r : fedagg_runs) b10.push_back(final_cloud(r));
        double m50 = mean(with_beta(50.0)), m10 = mean(b10), m1 = mean(with_beta(1.0)), m01 = mean(with_beta(0.1));
        return Verdict{m50 < m10 && m01 < m1,
                       fmt("beta=50 %.3f < beta=10 %.3f: %s; beta=0.1 %.3f < beta=1 %.3f: %s", m50, m10,
                           m50 < m10 ? "yes" : "no", m01, m1, m01 < m1 ? "yes" : "no")};
    });

    report(7, "HierFAVG baseline", [&] {
        // Convergence is judged at a 150-epoch horizon; the ordering at epoch 30.
        constexpr std::size_t kHorizon = 150;
        std::vector<double> at30, converged, fed30;
        for (const auto& r : fedagg_runs) fed30.push_back(final_cloud(r));
        for (auto seed : kSeeds) {
            auto cfg = testing::reference_config(seed);
            cfg.method = harness::Method::hierfavg;
            for (auto& t : cfg.topology.tiers) t.model = "device";
            cfg.epochs = kHorizon;
            auto r = run(cfg, "hierfavg");
            at30.push_back(r.rows[30].cloud_accuracy);
            converged.push_back(final_cloud(r));
        }
        bool ok = mean(converged) > 0.6 && mean(fed30) >= mean(at30);
        return Verdict{ok, fmt("HierFAVG epoch %zu mean %.3f %s (need > 0.6); epoch 30: FedAgg %.3f vs HierFAVG %.3f",
                               kHorizon, mean(converged), list(converged).c_str(), mean(fed30), mean(at30))};
    });

    report(8, "determinism", [&] {
        auto cfg = testing::reference_config(11);
        cfg.epochs = 20;
        auto read = [](const fs::path& p) {
            std::ifstream is(p);
            std::stringstream ss;
            ss << is.rdbuf();
            return ss.str();
        };
        auto a = read(run(cfg, "det_a").metrics_path);
        auto b = read(run(cfg, "det_b").metrics_path);

        auto straight = harness::build_scenario(cfg);
        orch::RunOptions opts;
        opts.train.seed = 5;
        std::stringstream ckpt;
        opts.after_epoch = [&](const orch::Federation& f, const orch::EpochMetrics& m) {
            if (m.epoch == 10) orch::write_checkpoint(ckpt, f, 10);
        };
        orch::run_fedagg(straight.federation, cfg.distill, 20, straight.test, opts);

        auto resumed = harness::build_scenario(cfg);
        orch::RunOptions ropts;
        ropts.train.seed = 5;
        ropts.start_epoch = orch::read_checkpoint(ckpt, resumed.federation);
        orch::run_fedagg(resumed.federation, cfg.distill, 20, resumed.test, ropts);
        std::size_t differing = 0;
        for (const auto& [id, st] : straight.federation.states)
            if (!(resumed.federation.state(id).model == st.model)) ++differing;
        bool ok = a == b && !a.empty() && differing == 0 && ropts.start_epoch == 10;
        return Verdict{ok, fmt("metrics files %s (%zu bytes); resumed-from-epoch-10 models differing at epoch 20: %zu",
                               a == b ? "byte-identical" : "DIFFER", a.size(), differing)};
    });

    report(9, "privacy boundary", [&] {
        std::size_t violations = 0;
        for (const auto& r : fedagg_runs) violations += r.privacy_violations;
        auto scenario = harness::build_scenario(testing::reference_config(1));
        orch::run_fedagg(scenario.federation, {}, 30, scenario.test);
        std::size_t non_leaf_reads = 0;
        for (const auto& [id, st] : scenario.federation.states)
            if (!scenario.federation.net.is_leaf(id)) non_leaf_reads += scenario.federation.audit.reads_by(id);
        bool ok = !fedagg_runs.empty() && violations == 0 && non_leaf_reads == 0 &&
                  scenario.federation.audit.total_reads() > 0;
        return Verdict{ok, fmt("violations across %zu criterion-4 runs: %zu; non-leaf reads %zu of %zu audited reads",
                               fedagg_runs.size(), violations, non_leaf_reads, scenario.federation.audit.total_reads())};
    });

    report(10, "Dirichlet heterogeneity", [&] {
        auto train = harness::load_or_generate(testing::reference_config(1)).train;
        std::vector<double> tv;
        for (double alpha : {0.1, 1.0, 3.0, 100.0}) {
            double sum = 0.0;
            for (std::uint64_t seed = 0; seed < 20; ++seed)
                sum += data::mean_label_tv_distance(train, data::dirichlet_partition(train, {8, alpha, seed}));
            tv.push_back(sum / 20.0);
        }
        bool ok = tv[0] > tv[1] && tv[1] > tv[2] && tv[2] > tv[3];
        return Verdict{ok, fmt("mean TV at alpha 0.1/1/3/100: %s", list(tv).c_str())};
    });

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
