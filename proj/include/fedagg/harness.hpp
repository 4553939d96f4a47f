#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedagg/autoencoder.hpp"
#include "fedagg/data.hpp"
#include "fedagg/nn.hpp"
#include "fedagg/orchestrator.hpp"
#include "fedagg/protocol.hpp"
#include "fedagg/topology.hpp"

namespace fedagg::harness {

inline constexpr int kConfigSchema = 1;
inline constexpr int kMetricsSchema = 1;

struct DatasetSection {
    std::optional<std::filesystem::path> path;
    std::size_t classes = 4;
    std::size_t input_dim = 8;
    std::size_t samples = 1000;
    double spread = 1.0;
    std::optional<std::uint64_t> seed;  // defaults to the global seed
    double test_fraction = 0.2;
};

struct AutoencoderSection {
    std::optional<std::filesystem::path> path;         // pre-trained parameters
    std::optional<std::filesystem::path> public_path;  // public dataset file
    std::size_t hidden = 16;
    std::size_t embedding_dim = 0;  // 0 selects max(2, input_dim / 4)
    std::size_t public_samples = 2000;
    std::size_t public_components = 0;  // 0 selects 2 * classes
    std::size_t epochs = 50;
    double lr = 0.01;
    std::size_t batch_size = 8;
    std::size_t parameter_budget = ae::kDefaultParameterBudget;
};

struct PartitionSection {
    std::optional<std::size_t> clients;  // must equal the leaf count
    double alpha = 1.0;
    std::optional<std::uint64_t> seed;
};

struct TierSection {
    std::size_t count = 1;
    std::string model;
};

struct TopologySection {
    std::vector<TierSection> tiers;
    std::map<std::string, nn::ModelSpec> models;  // user-defined, override built-ins
    std::optional<std::map<std::uint32_t, std::uint32_t>> parents;
};

enum class Method { fedagg, hierfavg, local };

std::string_view to_string(Method m);

struct ExperimentConfig {
    DatasetSection dataset;
    AutoencoderSection autoencoder;
    PartitionSection partition;
    TopologySection topology;
    Method method = Method::fedagg;
    protocol::DistillConfig distill;
    orch::ExchangeSchedule schedule = orch::ExchangeSchedule::per_child;
    orch::BaselineConfig baseline;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = ".";
    std::size_t checkpoint_every = 0;
    bool record_wall_time = false;
    std::vector<double> thresholds = {0.6, 0.8};

    std::uint64_t dataset_seed() const { return dataset.seed.value_or(seed); }
    std::uint64_t partition_seed() const { return partition.seed.value_or(seed); }

    // Resolves a model name against user models, then built-ins
    // small [d, 8, C], medium [d, 16, C], large [d, 32, 16, C].
    nn::ModelSpec resolve_model(const std::string& name) const;
    std::size_t leaf_count() const;

    // Fully resolved configuration, defaults included. Dataset and partition
    // seeds appear only when set, so the hash below is seed-independent.
    nlohmann::json to_json() const;
    // FNV-1a of to_json() without seed and output_dir, as 16 hex digits.
    std::string hash() const;
};

// Throws ConfigError naming the offending field; unknown keys are rejected.
ExperimentConfig parse_config(const nlohmann::json& doc);
// Throws ConfigError with line and column on malformed JSON.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

topo::TreeLayout topology_layout(const ExperimentConfig& cfg);

struct Datasets {
    data::Dataset train;
    data::Dataset test;
};

Datasets load_or_generate(const ExperimentConfig& cfg);

// Broad public dataset for autoencoder pretraining: a mixture with more
// components than the task, disjoint in sample ids from the task data.
data::Dataset public_dataset(const ExperimentConfig& cfg);

ae::AutoencoderParams pretrain_autoencoder(const ExperimentConfig& cfg);

struct Scenario {
    orch::Federation federation;
    data::Dataset test;
};

// Data, autoencoder, topology and partition, ready to train.
Scenario build_scenario(const ExperimentConfig& cfg);

struct MetricsRow {
    std::size_t epoch = 0;
    Method method = Method::fedagg;
    double cloud_accuracy = 0.0;
    std::vector<double> tier_accuracy;
    std::int64_t wall_time_ms = 0;
    std::string config_hash;
};

std::string metrics_header(std::size_t tiers);
std::string format_metrics_row(const MetricsRow& row);

struct RunRequest {
    std::optional<std::filesystem::path> resume;  // checkpoint to continue from
};

struct RunResult {
    std::filesystem::path metrics_path;
    std::vector<MetricsRow> rows;
    std::size_t privacy_violations = 0;
    std::vector<std::filesystem::path> checkpoints;
};

std::filesystem::path metrics_path(const ExperimentConfig& cfg);

RunResult run_experiment(const ExperimentConfig& cfg, const RunRequest& request = {});

struct RunSummary {
    std::string label;  // file stem
    std::string method;
    double final_accuracy = 0.0;
    double best_accuracy = 0.0;
    std::size_t final_epoch = 0;
    std::vector<std::optional<std::size_t>> first_epoch_reaching;  // per threshold
};

struct MetricsSeries {
    std::string header;
    std::string method;
    std::vector<std::pair<std::size_t, double>> cloud;  // (epoch, accuracy)
};

MetricsSeries read_metrics(const std::filesystem::path& path);
RunSummary summarize(const MetricsSeries& series, const std::string& label, const std::vector<double>& thresholds);
std::vector<RunSummary> compare_runs(const std::vector<std::filesystem::path>& paths,
                                     const std::vector<double>& thresholds);
// One line per run; unreached thresholds print as "-".
std::string format_report(const std::vector<RunSummary>& summaries, const std::vector<double>& thresholds);

}  // namespace fedagg::harness
