// fedagg command-line driver.
//
// Exit codes: 0 ok, 1 usage, 2 configuration, 3 runtime failure, 4 I/O.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedagg/errors.hpp"
#include "fedagg/harness.hpp"

namespace {

enum Exit : int { ok = 0, usage = 1, config = 2, runtime = 3, io = 4 };

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::string> out;
};

fedagg::harness::ExperimentConfig load(const Overrides& o) {
    auto cfg = fedagg::harness::load_config(o.config_path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.out) cfg.output_dir = *o.out;
    return cfg;
}

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config_path, "experiment configuration (JSON)")->required();
    cmd->add_option("--seed", o.seed, "override the global seed");
    cmd->add_option("--out", o.out, "override the output directory");
}

int run(const Overrides& o, const std::optional<std::string>& resume) {
    auto cfg = load(o);
    fedagg::harness::RunRequest req;
    if (resume) req.resume = *resume;
    auto result = fedagg::harness::run_experiment(cfg, req);
    const auto& last = result.rows.back();
    std::printf("method=%s epochs=%zu cloud_accuracy=%.4f privacy_violations=%zu\n",
                std::string(fedagg::harness::to_string(cfg.method)).c_str(), last.epoch, last.cloud_accuracy,
                result.privacy_violations);
    std::printf("metrics: %s\n", result.metrics_path.string().c_str());
    for (const auto& c : result.checkpoints) std::printf("checkpoint: %s\n", c.string().c_str());
    return ok;
}

int pretrain(const Overrides& o, const std::string& target) {
    auto cfg = load(o);
    auto autoencoder = fedagg::harness::pretrain_autoencoder(cfg);
    std::ofstream os(target);
    if (!os) throw fedagg::IoError("cannot write " + target);
    fedagg::orch::write_autoencoder(os, autoencoder);
    if (!os) throw fedagg::IoError("failed writing " + target);
    auto pub = fedagg::harness::public_dataset(cfg);
    std::printf("autoencoder: %s reconstruction_gap=%.6f\n", target.c_str(),
                fedagg::ae::reconstruction_gap(autoencoder, pub.features()));
    return ok;
}

int gen_data(const Overrides& o, const std::string& target, bool public_set) {
    auto cfg = load(o);
    cfg.dataset.path.reset();
    auto ds = public_set ? fedagg::harness::public_dataset(cfg)
                         : fedagg::data::generate_synthetic(cfg.dataset.classes, cfg.dataset.input_dim,
                                                            cfg.dataset.samples, cfg.dataset.spread,
                                                            cfg.dataset_seed());
    fedagg::data::save_dataset(target, ds);
    std::printf("dataset: %s samples=%zu\n", target.c_str(), ds.size());
    return ok;
}

int compare(const std::vector<std::string>& files, const std::vector<double>& thresholds) {
    std::vector<std::filesystem::path> paths(files.begin(), files.end());
    auto summaries = fedagg::harness::compare_runs(paths, thresholds);
    std::fputs(fedagg::harness::format_report(summaries, thresholds).c_str(), stdout);
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical federated distillation over edge-cloud trees"};
    app.require_subcommand(1);

    Overrides o;
    std::optional<std::string> resume;
    auto* run_cmd = app.add_subcommand("run", "train one method and write a metrics CSV");
    add_common(run_cmd, o);
    run_cmd->add_option("--epochs", o.epochs, "override the epoch count");
    run_cmd->add_option("--resume", resume, "continue from a checkpoint file");

    std::vector<std::string> files;
    std::vector<double> thresholds{0.6, 0.8};
    auto* compare_cmd = app.add_subcommand("compare", "summarise metrics files from several runs");
    compare_cmd->add_option("files", files, "metrics CSV files")->required()->expected(2, -1);
    compare_cmd->add_option("--thresholds", thresholds, "accuracy targets for epochs-to-target")->delimiter(',');

    std::string ae_target;
    auto* ae_cmd = app.add_subcommand("pretrain-ae", "pretrain the shared autoencoder on the public set");
    add_common(ae_cmd, o);
    ae_cmd->add_option("-o,--output", ae_target, "autoencoder file to write")->required();

    std::string data_target;
    bool public_set = false;
    auto* data_cmd = app.add_subcommand("gen-data", "write the synthetic dataset described by a config");
    add_common(data_cmd, o);
    data_cmd->add_option("-o,--output", data_target, "dataset file to write")->required();
    data_cmd->add_flag("--public", public_set, "write the public autoencoder dataset instead");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? ok : usage;
    }

    try {
        if (*run_cmd) return run(o, resume);
        if (*compare_cmd) return compare(files, thresholds);
        if (*ae_cmd) return pretrain(o, ae_target);
        if (*data_cmd) return gen_data(o, data_target, public_set);
    } catch (const fedagg::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return config;
    } catch (const fedagg::IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return io;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return runtime;
    }
    return usage;
}
