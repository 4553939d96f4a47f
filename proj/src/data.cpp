#include "fedagg/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "fedagg/errors.hpp"
#include "fedagg/random.hpp"

namespace fedagg::data {

std::vector<std::size_t> Dataset::label_counts() const {
    std::vector<std::size_t> counts(classes, 0);
    for (const auto& s : samples) ++counts.at(s.y);
    return counts;
}

std::vector<nn::Vector> Dataset::features() const {
    std::vector<nn::Vector> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.x);
    return out;
}

std::vector<nn::Vector> mixture_means(std::size_t components, std::size_t input_dim, double spread,
                                      std::uint64_t seed) {
    if (components == 0 || input_dim == 0) throw DataError("mixture needs components and a positive dimension");
    if (!(spread >= 0.0)) throw DataError("spread must be nonnegative");
    const double separation = std::max(4.0 * spread, 1.0);
    // The box only grows on rejections, so the first k centres do not depend
    // on how many components are requested in total.
    double half_width = separation;
    Rng rng(seed);
    std::vector<nn::Vector> means;
    std::size_t failures = 0;
    while (means.size() < components) {
        nn::Vector m(input_dim);
        for (double& v : m) v = (2.0 * uniform01(rng) - 1.0) * half_width;
        bool ok = std::all_of(means.begin(), means.end(), [&](const nn::Vector& o) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < input_dim; ++i) d2 += (m[i] - o[i]) * (m[i] - o[i]);
            return d2 >= separation * separation;
        });
        if (ok) {
            means.push_back(std::move(m));
        } else if (++failures % 256 == 0) {
            half_width *= 1.25;
        }
    }
    return means;
}

Dataset generate_mixture(const MixtureSpec& spec) {
    if (spec.classes < 2) throw DataError("need at least two classes");
    if (spec.components < spec.classes) throw DataError("need at least one mixture component per class");
    if (spec.n < spec.classes) throw DataError("need at least one sample per class");
    auto means = mixture_means(spec.components, spec.input_dim, spec.spread, spec.means_seed);
    Rng rng(spec.sample_seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset ds{spec.input_dim, spec.classes, {}};
    ds.samples.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        std::size_t c = i % spec.components;
        LabeledSample s{means[c], c % spec.classes, spec.first_sample_id + i};
        if (spec.spread > 0.0)
            for (double& v : s.x) v += spec.spread * noise(rng);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::uint64_t synthetic_means_seed(std::uint64_t seed) { return derive_seed(seed, {0x6d65616e}); }

Dataset generate_synthetic(std::size_t classes, std::size_t input_dim, std::size_t n, double spread,
                           std::uint64_t seed) {
    MixtureSpec spec;
    spec.classes = classes;
    spec.components = classes;
    spec.input_dim = input_dim;
    spec.n = n;
    spec.spread = spread;
    spec.means_seed = synthetic_means_seed(seed);
    spec.sample_seed = derive_seed(seed, {0x73616d70});
    return generate_mixture(spec);
}

std::vector<ClientDataset> dirichlet_partition(const Dataset& dataset, const PartitionConfig& cfg,
                                               const std::vector<topo::NodeId>& clients) {
    const std::size_t k = clients.size();
    if (k == 0 || cfg.clients != k) throw DataError("client list does not match the partition's client count");
    if (!(cfg.alpha > 0.0)) throw DataError("Dirichlet alpha must be positive");
    if (dataset.size() < k)
        throw DataError("cannot split " + std::to_string(dataset.size()) + " samples over " + std::to_string(k) +
                        " clients");

    std::vector<std::vector<std::size_t>> by_class(dataset.classes);
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class.at(dataset.samples[i].y).push_back(i);
    Rng rng(derive_seed(cfg.seed, {0x64697269}));
    for (auto& members : by_class) {
        auto order = shuffled_indices(members.size(), rng());
        std::vector<std::size_t> shuffled(members.size());
        for (std::size_t i = 0; i < order.size(); ++i) shuffled[i] = members[order[i]];
        members = std::move(shuffled);
    }

    std::gamma_distribution<double> gamma(cfg.alpha, 1.0);
    for (std::size_t attempt = 0; attempt < kPartitionRetryBudget; ++attempt) {
        std::vector<std::vector<std::size_t>> assigned(k);
        for (const auto& members : by_class) {
            std::vector<double> props(k);
            double total = 0.0;
            for (double& p : props) total += (p = gamma(rng));
            if (!(total > 0.0)) {
                // All draws underflowed (tiny alpha); the mass goes to one client.
                std::fill(props.begin(), props.end(), 0.0);
                props[rng() % k] = 1.0;
                total = 1.0;
            }
            double cumulative = 0.0;
            std::size_t begin = 0;
            for (std::size_t c = 0; c < k; ++c) {
                cumulative += props[c] / total;
                std::size_t end = c + 1 == k ? members.size()
                                             : std::min(members.size(), static_cast<std::size_t>(std::llround(
                                                                            cumulative * members.size())));
                end = std::max(end, begin);
                for (std::size_t i = begin; i < end; ++i) assigned[c].push_back(members[i]);
                begin = end;
            }
        }
        if (std::any_of(assigned.begin(), assigned.end(), [](const auto& a) { return a.empty(); })) continue;
        std::vector<ClientDataset> parts;
        parts.reserve(k);
        for (std::size_t c = 0; c < k; ++c) {
            std::sort(assigned[c].begin(), assigned[c].end());
            ClientDataset part{clients[c], {}};
            for (auto i : assigned[c]) part.samples.push_back(dataset.samples[i]);
            parts.push_back(std::move(part));
        }
        return parts;
    }
    throw DataError("could not give every client a sample within " + std::to_string(kPartitionRetryBudget) +
                    " Dirichlet redraws");
}

std::vector<ClientDataset> dirichlet_partition(const Dataset& dataset, const PartitionConfig& cfg) {
    std::vector<topo::NodeId> clients;
    for (std::size_t i = 0; i < cfg.clients; ++i) clients.push_back(topo::NodeId{static_cast<std::uint32_t>(i)});
    return dirichlet_partition(dataset, cfg, clients);
}

double mean_label_tv_distance(const Dataset& dataset, std::span<const ClientDataset> parts) {
    if (parts.empty() || dataset.size() == 0) throw DataError("TV distance needs data and clients");
    auto global = dataset.label_counts();
    double sum = 0.0;
    for (const auto& part : parts) {
        std::vector<double> local(dataset.classes, 0.0);
        for (const auto& s : part.samples) local[s.y] += 1.0;
        double tv = 0.0;
        for (std::size_t c = 0; c < dataset.classes; ++c)
            tv += std::abs(local[c] / static_cast<double>(part.size()) -
                           static_cast<double>(global[c]) / static_cast<double>(dataset.size()));
        sum += 0.5 * tv;
    }
    return sum / static_cast<double>(parts.size());
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DataError("test fraction must lie in (0, 1)");
    std::vector<std::vector<std::size_t>> by_class(dataset.classes);
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class.at(dataset.samples[i].y).push_back(i);
    std::vector<bool> to_test(dataset.size(), false);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& members = by_class[c];
        auto order = shuffled_indices(members.size(), derive_seed(seed, {c}));
        auto take = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
        for (std::size_t i = 0; i < take; ++i) to_test[members[order[i]]] = true;
    }
    Dataset train{dataset.input_dim, dataset.classes, {}};
    Dataset test{dataset.input_dim, dataset.classes, {}};
    for (std::size_t i = 0; i < dataset.size(); ++i)
        (to_test[i] ? test : train).samples.push_back(dataset.samples[i]);
    return {std::move(train), std::move(test)};
}

namespace {

void append_double(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

double parse_double(std::string_view token, std::size_t line) {
    double v = 0.0;
    auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc{} || res.ptr != token.data() + token.size())
        throw IoError("dataset line " + std::to_string(line) + ": bad number '" + std::string(token) + "'");
    return v;
}

}  // namespace

void write_dataset(std::ostream& os, const Dataset& dataset) {
    os << "fedagg-dataset 1\n" << dataset.size() << ' ' << dataset.input_dim << ' ' << dataset.classes << '\n';
    std::string line;
    for (const auto& s : dataset.samples) {
        line = std::to_string(s.sample_id) + ' ' + std::to_string(s.y);
        for (double v : s.x) {
            line += ' ';
            append_double(line, v);
        }
        line += '\n';
        os << line;
    }
}

Dataset read_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "fedagg-dataset 1") throw IoError("dataset: missing 'fedagg-dataset 1' header");
    std::size_t n = 0;
    Dataset ds;
    if (!std::getline(is, line)) throw IoError("dataset: missing size line");
    {
        std::istringstream hs(line);
        if (!(hs >> n >> ds.input_dim >> ds.classes)) throw IoError("dataset line 2: expected 'n input_dim classes'");
    }
    ds.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lineno = i + 3;
        if (!std::getline(is, line)) throw IoError("dataset: expected " + std::to_string(n) + " records");
        std::istringstream ls(line);
        LabeledSample s;
        if (!(ls >> s.sample_id >> s.y)) throw IoError("dataset line " + std::to_string(lineno) + ": bad record");
        if (s.y >= ds.classes) throw IoError("dataset line " + std::to_string(lineno) + ": label out of range");
        std::string token;
        while (ls >> token) s.x.push_back(parse_double(token, lineno));
        if (s.x.size() != ds.input_dim)
            throw IoError("dataset line " + std::to_string(lineno) + ": expected " + std::to_string(ds.input_dim) +
                          " features");
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    write_dataset(os, dataset);
    if (!os) throw IoError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    return read_dataset(is);
}

}  // namespace fedagg::data
