#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "critmap/dataset.hpp"
#include "critmap/model.hpp"

namespace critmap {

enum class Metric {
    cosine,          // mean cosine distance between clean and randomized softmax vectors
    accuracy_delta,  // clean accuracy minus randomized accuracy
};

std::string_view to_string(Metric metric);
Metric metric_from_string(std::string_view name);

struct RunConfig {
    std::uint64_t base_seed = 0;
    int n_trials = 3;
    std::int64_t n_samples = 10000;  // clipped to the dataset size by with_defaults()
    int batch_size = 64;
    Metric metric = Metric::cosine;
    bool clamp_accuracy_delta = true;  // negative accuracy changes read as 0

    void validate(std::int64_t dataset_size) const;
    bool operator==(const RunConfig&) const = default;
};

struct CriticalityStats {
    std::string layer_id;
    std::vector<double> per_trial;
    double mean = 0.0;
    double stddev = 0.0;     // sample standard deviation (n - 1); 0 for a single trial
    double std_error = 0.0;  // stddev / sqrt(n_trials)

    bool operator==(const CriticalityStats&) const = default;
};

struct CriticalityProfile {
    std::string model_id;
    RunConfig config;
    std::vector<CriticalityStats> entries;
    double clean_accuracy = 0.0;

    bool operator==(const CriticalityProfile&) const = default;
};

/// 1 - <p,q> / (|p| |q|), clamped to [0, 1]. Exactly 0 when p == q.
double cosine_distance(std::span<const double> p, std::span<const double> q);

/// Softmax outputs of a model over a dataset, row-major [N, classes].
struct Predictions {
    std::vector<double> probs;
    std::vector<int> argmax;
    std::int64_t correct = 0;
    int classes = 0;

    std::span<const double> row(std::int64_t i) const {
        return {probs.data() + i * classes, static_cast<std::size_t>(classes)};
    }
};

Predictions predict(const ModelGraph& model, const Dataset& data, int batch_size,
                    const ParamOverlay* overlay = nullptr);

/// Fresh parameters for a conv/linear layer drawn from its stored InitSpec with
/// Rng(mix(seed, hash64(layer_id))). The model is not modified.
ParamOverlay randomize_layer(const ModelGraph& model, std::string_view layer_id, std::uint64_t seed);

/// Criticality of one randomization given cached clean predictions.
double trial_value(const Predictions& clean, const Predictions& randomized, const Dataset& data, Metric metric,
                   bool clamp_accuracy_delta = true);

double criticality_trial(const ModelGraph& model, std::string_view layer_id, const Dataset& subset,
                         std::uint64_t seed, Metric metric, int batch_size = 64, bool clamp_accuracy_delta = true);

/// Mean, sample std and standard error of per-trial values.
CriticalityStats summarize(std::string layer_id, std::vector<double> per_trial);

/// Seed of trial t: mix(base_seed, t).
std::uint64_t trial_seed(std::uint64_t base_seed, int trial);

CriticalityStats layer_criticality(const ModelGraph& model, std::string_view layer_id, const Dataset& subset,
                                   const RunConfig& config);

/// Evaluation subset indices: subsample(size, n_samples, mix(base_seed, hash64("subset"))).
std::vector<std::int64_t> evaluation_subset(std::int64_t dataset_size, const RunConfig& config);

/// Full protocol: one shared subset, clean predictions computed once, every
/// (layer, trial) job evaluated on up to `jobs` worker threads. Results are
/// merged by layer order and trial index.
CriticalityProfile profile_model(const ModelGraph& model, const Dataset& dataset, const RunConfig& config,
                                 std::string model_id = "model", int jobs = 1);

double mean_model_criticality(const CriticalityProfile& profile);

/// Per-layer profile mean minus baseline mean, in profile layer order.
std::vector<double> delta_to_baseline(const CriticalityProfile& profile, const CriticalityProfile& baseline);

/// Pearson correlation of average ranks (ties share the mean rank).
double spearman(std::span<const double> xs, std::span<const double> ys);

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> values);

}  // namespace critmap
