#include "fedagg/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fedagg/errors.hpp"
#include "fedagg/random.hpp"

namespace fedagg::harness {

using nlohmann::json;

std::string_view to_string(Method m) {
    switch (m) {
        case Method::fedagg: return "fedagg";
        case Method::hierfavg: return "hierfavg";
        case Method::local: return "local";
    }
    return "fedagg";
}

namespace {

Method parse_method(const std::string& s) {
    for (auto m : {Method::fedagg, Method::hierfavg, Method::local})
        if (to_string(m) == s) return m;
    throw ConfigError("method", "expected one of fedagg, hierfavg, local; got '" + s + "'");
}

std::string_view to_string(orch::ExchangeSchedule s) {
    return s == orch::ExchangeSchedule::per_child ? "per_child" : "once_per_epoch";
}

// Walks one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        seen_.insert(key);
        return node_.contains(key);
    }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return node_.at(key);
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) return fallback;
        return convert<T>(node_.at(key), field(key));
    }

    template <typename T>
    std::optional<T> optional(const std::string& key) {
        if (!has(key) || node_.at(key).is_null()) return std::nullopt;
        return convert<T>(node_.at(key), field(key));
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(node_.contains(key) ? node_.at(key) : empty, field(key));
    }

    void finish() const {
        for (const auto& [key, value] : node_.items())
            if (!seen_.count(key)) throw ConfigError(field(key), "unknown key '" + key + "'");
    }

    template <typename T>
    static T convert(const json& v, const std::string& where) {
        try {
            if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
                bool nonneg = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
                if (!nonneg) throw ConfigError(where, "expected a nonnegative integer");
            } else if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError(where, "expected a number");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(where, "expected true or false");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(where, "expected a string");
            }
            return v.get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where, e.what());
        }
    }

private:
    const json& node_;
    std::string path_;
    std::set<std::string> seen_;
};

nn::ModelSpec parse_model(Section s) {
    nn::ModelSpec spec;
    if (!s.has("widths")) throw ConfigError(s.field("widths"), "missing layer widths");
    const json& widths = s.raw("widths");
    if (!widths.is_array()) throw ConfigError(s.field("widths"), "expected an array of positive integers");
    for (const auto& w : widths) spec.layer_widths.push_back(Section::convert<std::size_t>(w, s.field("widths")));
    try {
        spec.activation = nn::parse_activation(s.get<std::string>("activation", "relu"));
        spec.validate();
    } catch (const DimensionError& e) {
        throw ConfigError(s.field("widths"), e.what());
    }
    s.finish();
    return spec;
}

json model_json(const nn::ModelSpec& spec) {
    return json{{"widths", spec.layer_widths}, {"activation", std::string(nn::to_string(spec.activation))}};
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string shortest(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void validate(const ExperimentConfig& cfg) {
    const auto& d = cfg.dataset;
    if (!d.path) {
        if (d.classes < 2) throw ConfigError("dataset.classes", "need at least two classes");
        if (d.input_dim < 1) throw ConfigError("dataset.input_dim", "must be positive");
        if (d.samples < d.classes) throw ConfigError("dataset.samples", "need at least one sample per class");
        if (!(d.spread >= 0.0)) throw ConfigError("dataset.spread", "must be nonnegative");
    }
    if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0))
        throw ConfigError("dataset.test_fraction", "must lie in (0, 1)");
    if (d.path && !cfg.autoencoder.path && !cfg.autoencoder.public_path)
        throw ConfigError("autoencoder.public_path",
                          "a dataset loaded from a file needs a public dataset or a pre-trained autoencoder");
    if (!(cfg.autoencoder.lr >= 0.0)) throw ConfigError("autoencoder.lr", "must be nonnegative");
    if (cfg.autoencoder.batch_size == 0) throw ConfigError("autoencoder.batch_size", "must be positive");
    if (!(cfg.partition.alpha > 0.0)) throw ConfigError("partition.alpha", "must be positive");
    if (cfg.topology.tiers.size() < 2) throw ConfigError("topology.tiers", "need at least two tiers");
    if (cfg.topology.tiers.front().count != 1) throw ConfigError("topology.tiers", "tier 1 must hold exactly one cloud");
    for (std::size_t t = 0; t < cfg.topology.tiers.size(); ++t) {
        const auto& tier = cfg.topology.tiers[t];
        std::string where = "topology.tiers[" + std::to_string(t) + "]";
        if (tier.count == 0) throw ConfigError(where + ".count", "must be positive");
        cfg.resolve_model(tier.model);
    }
    if (cfg.partition.clients && *cfg.partition.clients != cfg.leaf_count())
        throw ConfigError("partition.clients", "K = " + std::to_string(*cfg.partition.clients) +
                                                   " does not match the topology's leaf count " +
                                                   std::to_string(cfg.leaf_count()));
    try {
        cfg.distill.validate();
    } catch (const ProtocolError& e) {
        throw ConfigError("distill", e.what());
    }
    cfg.baseline.validate();
    if (!d.path) {
        for (const auto& tier : cfg.topology.tiers) {
            auto spec = cfg.resolve_model(tier.model);
            if (spec.input_width() != d.input_dim || spec.output_width() != d.classes)
                throw ConfigError("topology.models." + tier.model,
                                  "model must map input_dim " + std::to_string(d.input_dim) + " to " +
                                      std::to_string(d.classes) + " classes");
        }
    }
    try {
        topology_layout(cfg);
    } catch (const TopologyError& e) {
        throw ConfigError("topology", e.what());
    }
    if (cfg.thresholds.empty()) throw ConfigError("report.thresholds", "need at least one threshold");
}

}  // namespace

nn::ModelSpec ExperimentConfig::resolve_model(const std::string& name) const {
    if (auto it = topology.models.find(name); it != topology.models.end()) return it->second;
    const std::size_t d = dataset.input_dim, c = dataset.classes;
    if (name == "small") return {{d, 8, c}, nn::Activation::relu};
    if (name == "medium") return {{d, 16, c}, nn::Activation::relu};
    if (name == "large") return {{d, 32, 16, c}, nn::Activation::relu};
    throw ConfigError("topology.models", "model name '" + name + "' does not resolve");
}

std::size_t ExperimentConfig::leaf_count() const { return topology.tiers.empty() ? 0 : topology.tiers.back().count; }

json ExperimentConfig::to_json() const {
    json d{{"classes", dataset.classes},
           {"input_dim", dataset.input_dim},
           {"samples", dataset.samples},
           {"spread", dataset.spread},
           {"test_fraction", dataset.test_fraction}};
    if (dataset.seed) d["seed"] = *dataset.seed;
    if (dataset.path) d["path"] = dataset.path->string();
    json a{{"hidden", autoencoder.hidden},
           {"embedding_dim", autoencoder.embedding_dim},
           {"public_samples", autoencoder.public_samples},
           {"public_components", autoencoder.public_components},
           {"epochs", autoencoder.epochs},
           {"lr", autoencoder.lr},
           {"batch_size", autoencoder.batch_size},
           {"parameter_budget", autoencoder.parameter_budget}};
    if (autoencoder.path) a["path"] = autoencoder.path->string();
    if (autoencoder.public_path) a["public_path"] = autoencoder.public_path->string();
    json tiers = json::array();
    for (const auto& t : topology.tiers) tiers.push_back({{"count", t.count}, {"model", t.model}});
    json models = json::object();
    for (const auto& t : topology.tiers) models[t.model] = model_json(resolve_model(t.model));
    json topo{{"tiers", tiers}, {"models", models}};
    if (topology.parents) {
        json parents = json::object();
        for (const auto& [child, parent] : *topology.parents) parents[std::to_string(child)] = parent;
        topo["parents"] = parents;
    }
    json part{{"clients", leaf_count()}, {"alpha", partition.alpha}};
    if (partition.seed) part["seed"] = *partition.seed;
    return json{{"schema", kConfigSchema},
                {"dataset", d},
                {"autoencoder", a},
                {"partition", part},
                {"topology", topo},
                {"method", std::string(harness::to_string(method))},
                {"distill",
                 {{"beta", distill.beta},
                  {"gamma", distill.gamma},
                  {"temperature", distill.temperature},
                  {"lr", distill.lr},
                  {"batch_size", distill.batch_size},
                  {"passes_per_exchange", distill.passes_per_exchange},
                  {"schedule", std::string(to_string(schedule))}}},
                {"baseline", {{"kappa1", baseline.kappa1}, {"kappa2", baseline.kappa2}}},
                {"epochs", epochs},
                {"seed", seed},
                {"output_dir", output_dir.string()},
                {"checkpoint_every", checkpoint_every},
                {"record_wall_time", record_wall_time},
                {"report", {{"thresholds", thresholds}}}};
}

std::string ExperimentConfig::hash() const {
    json j = to_json();
    j.erase("seed");
    j.erase("output_dir");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

ExperimentConfig parse_config(const json& doc) {
    ExperimentConfig cfg;
    Section root(doc, "");
    int schema = static_cast<int>(root.get<std::size_t>("schema", kConfigSchema));
    if (schema != kConfigSchema)
        throw ConfigError("schema", "unsupported schema " + std::to_string(schema) + ", expected " +
                                        std::to_string(kConfigSchema));
    cfg.seed = root.get<std::uint64_t>("seed", 0);
    cfg.epochs = root.get<std::size_t>("epochs", cfg.epochs);
    cfg.output_dir = root.get<std::string>("output_dir", ".");
    cfg.checkpoint_every = root.get<std::size_t>("checkpoint_every", 0);
    cfg.record_wall_time = root.get<bool>("record_wall_time", false);
    cfg.method = parse_method(root.get<std::string>("method", "fedagg"));

    if (!doc.contains("dataset")) throw ConfigError("dataset", "missing section");
    {
        auto s = root.child("dataset");
        auto& d = cfg.dataset;
        if (auto p = s.optional<std::string>("path")) d.path = *p;
        d.classes = s.get<std::size_t>("classes", d.classes);
        d.input_dim = s.get<std::size_t>("input_dim", d.input_dim);
        d.samples = s.get<std::size_t>("samples", d.samples);
        d.spread = s.get<double>("spread", d.spread);
        d.seed = s.optional<std::uint64_t>("seed");
        d.test_fraction = s.get<double>("test_fraction", d.test_fraction);
        s.finish();
    }
    {
        auto s = root.child("autoencoder");
        auto& a = cfg.autoencoder;
        if (auto p = s.optional<std::string>("path")) a.path = *p;
        if (auto p = s.optional<std::string>("public_path")) a.public_path = *p;
        a.hidden = s.get<std::size_t>("hidden", a.hidden);
        a.embedding_dim = s.get<std::size_t>("embedding_dim", a.embedding_dim);
        a.public_samples = s.get<std::size_t>("public_samples", a.public_samples);
        a.public_components = s.get<std::size_t>("public_components", a.public_components);
        a.epochs = s.get<std::size_t>("epochs", a.epochs);
        a.lr = s.get<double>("lr", a.lr);
        a.batch_size = s.get<std::size_t>("batch_size", a.batch_size);
        a.parameter_budget = s.get<std::size_t>("parameter_budget", a.parameter_budget);
        s.finish();
    }
    {
        auto s = root.child("partition");
        cfg.partition.clients = s.optional<std::size_t>("clients");
        cfg.partition.alpha = s.get<double>("alpha", cfg.partition.alpha);
        cfg.partition.seed = s.optional<std::uint64_t>("seed");
        s.finish();
    }
    if (!doc.contains("topology")) throw ConfigError("topology", "missing section");
    {
        auto s = root.child("topology");
        if (!s.has("tiers")) throw ConfigError("topology.tiers", "missing tier list");
        const json& tiers = s.raw("tiers");
        if (!tiers.is_array()) throw ConfigError("topology.tiers", "expected an array");
        for (std::size_t i = 0; i < tiers.size(); ++i) {
            Section t(tiers[i], "topology.tiers[" + std::to_string(i) + "]");
            TierSection tier;
            tier.count = t.get<std::size_t>("count", 0);
            if (!t.has("model")) throw ConfigError(t.field("model"), "missing model name");
            tier.model = t.get<std::string>("model", "");
            t.finish();
            cfg.topology.tiers.push_back(std::move(tier));
        }
        if (s.has("models")) {
            const json& models = s.raw("models");
            if (!models.is_object()) throw ConfigError("topology.models", "expected an object");
            for (const auto& [name, body] : models.items())
                cfg.topology.models[name] = parse_model(Section(body, "topology.models." + name));
        }
        if (s.has("parents")) {
            const json& parents = s.raw("parents");
            if (!parents.is_object()) throw ConfigError("topology.parents", "expected an object of child: parent");
            std::map<std::uint32_t, std::uint32_t> map;
            for (const auto& [child, parent] : parents.items()) {
                std::uint32_t c = 0;
                auto res = std::from_chars(child.data(), child.data() + child.size(), c);
                if (res.ec != std::errc{} || res.ptr != child.data() + child.size())
                    throw ConfigError("topology.parents", "node id '" + child + "' is not an integer");
                map[c] = static_cast<std::uint32_t>(Section::convert<std::size_t>(parent, "topology.parents." + child));
            }
            cfg.topology.parents = std::move(map);
        }
        s.finish();
    }
    {
        auto s = root.child("distill");
        auto& d = cfg.distill;
        d.beta = s.get<double>("beta", d.beta);
        d.gamma = s.get<double>("gamma", d.gamma);
        d.temperature = s.get<double>("temperature", d.temperature);
        d.lr = s.get<double>("lr", d.lr);
        d.batch_size = s.get<std::size_t>("batch_size", d.batch_size);
        d.passes_per_exchange = s.get<std::size_t>("passes_per_exchange", d.passes_per_exchange);
        auto schedule = s.get<std::string>("schedule", "per_child");
        if (schedule == "per_child") cfg.schedule = orch::ExchangeSchedule::per_child;
        else if (schedule == "once_per_epoch") cfg.schedule = orch::ExchangeSchedule::once_per_epoch;
        else throw ConfigError("distill.schedule", "expected per_child or once_per_epoch");
        s.finish();
    }
    {
        auto s = root.child("baseline");
        cfg.baseline.kappa1 = s.get<std::size_t>("kappa1", cfg.baseline.kappa1);
        cfg.baseline.kappa2 = s.get<std::size_t>("kappa2", cfg.baseline.kappa2);
        s.finish();
    }
    {
        auto s = root.child("report");
        if (s.has("thresholds")) {
            const json& th = s.raw("thresholds");
            if (!th.is_array()) throw ConfigError("report.thresholds", "expected an array of accuracies");
            cfg.thresholds.clear();
            for (const auto& v : th) cfg.thresholds.push_back(Section::convert<double>(v, "report.thresholds"));
        }
        s.finish();
    }
    root.finish();
    validate(cfg);
    return cfg;
}

ExperimentConfig parse_config_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, column = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                column = 1;
            } else {
                ++column;
            }
        }
        throw ConfigError("", "parse error at line " + std::to_string(line) + ", column " + std::to_string(column) +
                                  ": " + e.what());
    }
    return parse_config(doc);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

topo::TreeLayout topology_layout(const ExperimentConfig& cfg) {
    std::vector<std::size_t> counts;
    std::vector<nn::ModelSpec> specs;
    for (const auto& t : cfg.topology.tiers) {
        counts.push_back(t.count);
        specs.push_back(cfg.resolve_model(t.model));
    }
    topo::TreeLayout layout = topo::balanced_layout(counts, specs);
    if (cfg.topology.parents) {
        std::set<std::uint32_t> ids;
        for (const auto& n : layout.nodes) ids.insert(n.id.value);
        for (const auto& [child, parent] : *cfg.topology.parents)
            if (!ids.count(child)) throw TopologyError("parents map names unknown node " + std::to_string(child));
        for (auto& n : layout.nodes) {
            auto it = cfg.topology.parents->find(n.id.value);
            if (it != cfg.topology.parents->end()) n.parent = topo::NodeId{it->second};
        }
    }
    topo::build_tree(layout);
    return layout;
}

Datasets load_or_generate(const ExperimentConfig& cfg) {
    data::Dataset full = cfg.dataset.path ? data::load_dataset(*cfg.dataset.path)
                                          : data::generate_synthetic(cfg.dataset.classes, cfg.dataset.input_dim,
                                                                     cfg.dataset.samples, cfg.dataset.spread,
                                                                     cfg.dataset_seed());
    auto [train, test] = data::split_train_test(full, cfg.dataset.test_fraction, derive_seed(cfg.dataset_seed(), {7}));
    return {std::move(train), std::move(test)};
}

data::Dataset public_dataset(const ExperimentConfig& cfg) {
    if (cfg.autoencoder.public_path) return data::load_dataset(*cfg.autoencoder.public_path);
    data::MixtureSpec spec;
    spec.classes = cfg.dataset.classes;
    spec.components =
        cfg.autoencoder.public_components ? cfg.autoencoder.public_components : 2 * cfg.dataset.classes;
    spec.input_dim = cfg.dataset.input_dim;
    spec.n = cfg.autoencoder.public_samples;
    spec.spread = cfg.dataset.spread;
    spec.means_seed = data::synthetic_means_seed(cfg.dataset_seed());
    spec.sample_seed = derive_seed(cfg.dataset_seed(), {0x7075626c});
    spec.first_sample_id = 1ULL << 40;
    return data::generate_mixture(spec);
}

ae::AutoencoderParams pretrain_autoencoder(const ExperimentConfig& cfg) {
    if (cfg.autoencoder.path) {
        std::ifstream is(*cfg.autoencoder.path);
        if (!is) throw IoError("cannot open autoencoder " + cfg.autoencoder.path->string());
        return orch::read_autoencoder(is);
    }
    data::Dataset pub = public_dataset(cfg);
    ae::AutoencoderSpec spec;
    try {
        spec = ae::default_spec(pub.input_dim, cfg.autoencoder.hidden, cfg.autoencoder.embedding_dim);
        spec.parameter_budget = cfg.autoencoder.parameter_budget;
        spec.validate();
    } catch (const DimensionError& e) {
        throw ConfigError("autoencoder", e.what());
    }
    ae::PretrainOptions opts{cfg.autoencoder.epochs, cfg.autoencoder.lr, cfg.autoencoder.batch_size};
    auto features = pub.features();
    return ae::pretrain(spec, features, opts, derive_seed(cfg.seed, {0x6165}));
}

Scenario build_scenario(const ExperimentConfig& cfg) {
    Datasets ds = load_or_generate(cfg);
    ae::AutoencoderParams autoencoder = pretrain_autoencoder(cfg);
    topo::EecNet net = topo::build_tree(topology_layout(cfg));
    auto leaves = net.leaves();
    data::PartitionConfig pc{leaves.size(), cfg.partition.alpha, cfg.partition_seed()};
    auto shards = data::dirichlet_partition(ds.train, pc, leaves);
    return {orch::make_federation(std::move(net), autoencoder, std::move(shards), derive_seed(cfg.seed, {0x6d6f64})),
            std::move(ds.test)};
}

std::string metrics_header(std::size_t tiers) {
    std::string h = "schema,epoch,method,cloud_accuracy";
    for (std::size_t t = 1; t <= tiers; ++t) h += ",tier" + std::to_string(t) + "_accuracy";
    return h + ",wall_time_ms,config_hash";
}

std::string format_metrics_row(const MetricsRow& row) {
    std::string line = std::to_string(kMetricsSchema) + "," + std::to_string(row.epoch) + "," +
                       std::string(to_string(row.method)) + "," + shortest(row.cloud_accuracy);
    for (double a : row.tier_accuracy) line += "," + shortest(a);
    return line + "," + std::to_string(row.wall_time_ms) + "," + row.config_hash;
}

std::filesystem::path metrics_path(const ExperimentConfig& cfg) {
    return cfg.output_dir / ("metrics_" + cfg.hash() + "_" + std::to_string(cfg.seed) + ".csv");
}

RunResult run_experiment(const ExperimentConfig& cfg, const RunRequest& request) {
    Scenario scenario = build_scenario(cfg);
    auto& fed = scenario.federation;
    const std::string hash = cfg.hash();
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) throw IoError("cannot create output directory " + cfg.output_dir.string());

    RunResult result;
    result.metrics_path = metrics_path(cfg);
    orch::RunOptions options;
    options.train.seed = derive_seed(cfg.seed, {0x747261696e});
    options.train.schedule = cfg.schedule;
    if (request.resume) options.start_epoch = orch::load_checkpoint(*request.resume, fed);

    auto clock_start = std::chrono::steady_clock::now();
    options.after_epoch = [&](const orch::Federation& f, const orch::EpochMetrics& m) {
        MetricsRow row{m.epoch, cfg.method, m.cloud_accuracy, m.tier_accuracy, 0, hash};
        if (cfg.record_wall_time)
            row.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - clock_start)
                                   .count();
        result.rows.push_back(std::move(row));
        if (cfg.checkpoint_every && m.epoch > 0 && m.epoch % cfg.checkpoint_every == 0) {
            auto path = cfg.output_dir /
                        ("checkpoint_" + hash + "_" + std::to_string(cfg.seed) + "_e" + std::to_string(m.epoch) + ".txt");
            orch::save_checkpoint(path, f, m.epoch);
            result.checkpoints.push_back(path);
        }
    };

    switch (cfg.method) {
        case Method::fedagg:
            orch::run_fedagg(fed, cfg.distill, cfg.epochs, scenario.test, options);
            break;
        case Method::hierfavg:
            orch::run_hierfavg(fed, cfg.baseline, {cfg.distill.lr, cfg.distill.batch_size}, cfg.epochs, scenario.test,
                               options);
            break;
        case Method::local: {
            // One row per epoch with the mean device accuracy reported on every tier column.
            auto tiers = static_cast<std::size_t>(fed.net.tier_count());
            if (options.start_epoch == 0) {
                double acc0 = 0.0;
                for (auto leaf : fed.net.leaves()) acc0 += orch::evaluate(fed.state(leaf).model, scenario.test);
                acc0 /= static_cast<double>(fed.net.leaves().size());
                options.after_epoch(fed, {0, acc0, std::vector<double>(tiers, acc0)});
            }
            for (std::size_t e = options.start_epoch + 1; e <= cfg.epochs; ++e) {
                auto acc = orch::run_local_only(fed, {cfg.distill.lr, cfg.distill.batch_size}, 1, scenario.test,
                                                derive_seed(options.train.seed, {e}));
                double mean = 0.0;
                for (const auto& [id, a] : acc) mean += a;
                mean /= static_cast<double>(acc.size());
                options.after_epoch(fed, {e, mean, std::vector<double>(tiers, mean)});
            }
            break;
        }
    }
    result.privacy_violations = fed.audit.violations();

    std::ofstream os(result.metrics_path);
    if (!os) throw IoError("cannot write " + result.metrics_path.string());
    os << metrics_header(static_cast<std::size_t>(fed.net.tier_count())) << '\n';
    for (const auto& row : result.rows) os << format_metrics_row(row) << '\n';
    if (!os) throw IoError("failed writing " + result.metrics_path.string());
    return result;
}

MetricsSeries read_metrics(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open metrics file " + path.string());
    MetricsSeries series;
    if (!std::getline(is, series.header)) throw IoError(path.string() + ": empty metrics file");
    if (series.header.rfind("schema,epoch,method,cloud_accuracy", 0) != 0)
        throw DataError(path.string() + ": not a fedagg metrics file");
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() < 4 || cells[0] != std::to_string(kMetricsSchema))
            throw DataError(path.string() + " line " + std::to_string(lineno) + ": unsupported metrics row");
        try {
            series.method = cells[2];
            series.cloud.emplace_back(std::stoul(cells[1]), std::stod(cells[3]));
        } catch (const std::exception&) {
            throw DataError(path.string() + " line " + std::to_string(lineno) + ": malformed metrics row");
        }
    }
    if (series.cloud.empty()) throw DataError(path.string() + ": no metrics rows");
    return series;
}

RunSummary summarize(const MetricsSeries& series, const std::string& label, const std::vector<double>& thresholds) {
    RunSummary s{label, series.method, series.cloud.back().second, 0.0, series.cloud.back().first, {}};
    for (const auto& [epoch, acc] : series.cloud) s.best_accuracy = std::max(s.best_accuracy, acc);
    for (double th : thresholds) {
        std::optional<std::size_t> first;
        for (const auto& [epoch, acc] : series.cloud)
            if (acc >= th) {
                first = epoch;
                break;
            }
        s.first_epoch_reaching.push_back(first);
    }
    return s;
}

std::vector<RunSummary> compare_runs(const std::vector<std::filesystem::path>& paths,
                                     const std::vector<double>& thresholds) {
    if (paths.size() < 2) throw DataError("compare needs at least two metrics files");
    std::vector<RunSummary> out;
    std::string header;
    for (const auto& p : paths) {
        auto series = read_metrics(p);
        if (header.empty()) header = series.header;
        else if (series.header != header)
            throw DataError("schema mismatch: " + p.string() + " has columns '" + series.header + "', expected '" +
                            header + "'");
        out.push_back(summarize(series, p.stem().string(), thresholds));
    }
    return out;
}

std::string format_report(const std::vector<RunSummary>& summaries, const std::vector<double>& thresholds) {
    std::ostringstream os;
    os << "run,method,final_epoch,final_accuracy,best_accuracy";
    for (double th : thresholds) os << ",epoch_to_" << shortest(th);
    os << '\n';
    for (const auto& s : summaries) {
        os << s.label << ',' << s.method << ',' << s.final_epoch << ',' << shortest(s.final_accuracy) << ','
           << shortest(s.best_accuracy);
        for (const auto& e : s.first_epoch_reaching) os << ',' << (e ? std::to_string(*e) : "-");
        os << '\n';
    }
    return os.str();
}

}  // namespace fedagg::harness
