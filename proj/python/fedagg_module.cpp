#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fedagg/errors.hpp"
#include "fedagg/harness.hpp"

namespace py = pybind11;
using namespace fedagg;

namespace {

py::dict row_to_dict(const harness::MetricsRow& row) {
    py::dict d;
    d["epoch"] = row.epoch;
    d["method"] = std::string(harness::to_string(row.method));
    d["cloud_accuracy"] = row.cloud_accuracy;
    d["tier_accuracy"] = row.tier_accuracy;
    d["wall_time_ms"] = row.wall_time_ms;
    d["config_hash"] = row.config_hash;
    return d;
}

topo::TreeLayout layout_from_parents(const std::map<std::uint32_t, std::optional<std::uint32_t>>& parents,
                                     const std::map<std::uint32_t, int>& tiers,
                                     const std::map<std::uint32_t, std::uint32_t>& sizes) {
    topo::TreeLayout layout;
    for (const auto& [id, parent] : parents) {
        // Model(x) is a single layer of input width x, so sub-capacity reduces to x <= y.
        std::size_t width = sizes.count(id) ? sizes.at(id) : 1;
        topo::NodeLayout n{topo::NodeId{id}, tiers.at(id), std::nullopt, {{width, 1}, nn::Activation::relu}};
        if (parent) n.parent = topo::NodeId{*parent};
        layout.nodes.push_back(n);
    }
    return layout;
}

}  // namespace

PYBIND11_MODULE(_fedagg, m) {
    m.doc() = "Hierarchical knowledge agglomeration over end-edge-cloud trees";

    auto base = py::register_exception<Error>(m, "FedaggError");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<TopologyError>(m, "TopologyError", base.ptr());
    py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<BottleneckConstraintError>(m, "BottleneckConstraintError", base.ptr());

    m.def(
        "softmax",
        [](const std::vector<double>& logits, double temperature) {
            auto p = nn::softmax_temperature(logits, temperature);
            return std::vector<double>(p.values().begin(), p.values().end());
        },
        py::arg("logits"), py::arg("temperature") = 1.0);

    m.def(
        "distillation_loss",
        [](const std::vector<double>& student, std::size_t label, const std::vector<double>& teacher, double beta,
           double temperature) {
            auto v = nn::evaluate_loss(nn::DistillationLoss{label, teacher, beta, temperature}, student);
            return py::make_tuple(v.value, v.gradient);
        },
        py::arg("student_logits"), py::arg("label"), py::arg("teacher_logits"), py::arg("beta"),
        py::arg("temperature"), "Returns (loss, gradient with respect to the student logits).");

    m.def(
        "generate_synthetic",
        [](std::size_t classes, std::size_t input_dim, std::size_t n, double spread, std::uint64_t seed) {
            auto ds = data::generate_synthetic(classes, input_dim, n, spread, seed);
            std::vector<std::size_t> labels;
            for (const auto& s : ds.samples) labels.push_back(s.y);
            return py::make_tuple(ds.features(), labels);
        },
        py::arg("classes"), py::arg("input_dim"), py::arg("n"), py::arg("spread"), py::arg("seed"),
        "Returns (features, labels).");

    m.def(
        "dirichlet_label_tv",
        [](const std::vector<std::size_t>& labels, std::size_t clients, double alpha, std::uint64_t seed) {
            data::Dataset ds{1, 0, {}};
            for (std::size_t i = 0; i < labels.size(); ++i) {
                ds.classes = std::max(ds.classes, labels[i] + 1);
                ds.samples.push_back({{0.0}, labels[i], i});
            }
            auto parts = data::dirichlet_partition(ds, {clients, alpha, seed});
            std::vector<std::size_t> sizes;
            for (const auto& p : parts) sizes.push_back(p.size());
            return py::make_tuple(data::mean_label_tv_distance(ds, parts), sizes);
        },
        py::arg("labels"), py::arg("clients"), py::arg("alpha"), py::arg("seed"),
        "Partitions the labels and returns (mean total-variation distance, shard sizes).");

    m.def(
        "can_migrate",
        [](const std::map<std::uint32_t, std::optional<std::uint32_t>>& parents, const std::map<std::uint32_t, int>& tiers,
           std::uint32_t node, std::uint32_t new_parent, const std::string& protocol,
           const std::map<std::uint32_t, std::uint32_t>& sizes) {
            auto net = topo::build_tree(layout_from_parents(parents, tiers, sizes), true);
            auto compat = protocol == "equivalence" ? topo::ProtocolCompat::equivalence()
                                                    : topo::ProtocolCompat::partial_order();
            auto verdict = topo::can_migrate(net, topo::NodeId{node}, topo::NodeId{new_parent}, compat);
            return py::make_tuple(static_cast<bool>(verdict), verdict.reason);
        },
        py::arg("parents"), py::arg("tiers"), py::arg("node"), py::arg("new_parent"),
        py::arg("protocol") = "equivalence", py::arg("sizes") = std::map<std::uint32_t, std::uint32_t>{},
        "Parents maps node id to parent id (None for the cloud); sizes gives Model(x) for the partial order.");

    m.def(
        "parse_config",
        [](const std::string& text) { return harness::parse_config_text(text).to_json().dump(); },
        py::arg("text"), "Validates a JSON config and returns the fully resolved config as JSON text.");

    m.def(
        "config_hash", [](const std::string& text) { return harness::parse_config_text(text).hash(); },
        py::arg("text"));

    m.def(
        "run",
        [](const std::string& text, std::optional<std::uint64_t> seed, std::optional<std::string> output_dir) {
            auto cfg = harness::parse_config_text(text);
            if (seed) cfg.seed = *seed;
            if (output_dir) cfg.output_dir = *output_dir;
            harness::RunResult result;
            {
                py::gil_scoped_release release;
                result = harness::run_experiment(cfg);
            }
            py::list rows;
            for (const auto& r : result.rows) rows.append(row_to_dict(r));
            py::dict out;
            out["metrics_path"] = result.metrics_path.string();
            out["rows"] = rows;
            out["privacy_violations"] = result.privacy_violations;
            return out;
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("output_dir") = py::none(),
        "Runs one experiment from JSON config text and writes its metrics CSV.");

    m.def(
        "compare",
        [](const std::vector<std::filesystem::path>& paths, const std::vector<double>& thresholds) {
            return harness::format_report(harness::compare_runs(paths, thresholds), thresholds);
        },
        py::arg("paths"), py::arg("thresholds") = std::vector<double>{0.6, 0.8});
}
