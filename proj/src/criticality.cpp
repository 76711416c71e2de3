#include "critmap/criticality.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "critmap/rng.hpp"

namespace critmap {

namespace {

// Neumaier-compensated sum over values sorted ascending, so the result does not
// depend on the order the values were produced in.
double order_free_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double sum = 0.0, comp = 0.0;
    for (double v : values) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v))
            comp += (sum - t) + v;
        else
            comp += (v - t) + sum;
        sum = t;
    }
    return sum + comp;
}

// Runs fn(i) for i in [0, count) on up to `jobs` threads; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(jobs, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

std::string_view to_string(Metric metric) { return metric == Metric::cosine ? "cosine" : "accuracy_delta"; }

Metric metric_from_string(std::string_view name) {
    if (name == "cosine") return Metric::cosine;
    if (name == "accuracy_delta") return Metric::accuracy_delta;
    fail(ErrorKind::parameter, "unknown metric '" + std::string(name) + "'");
}

void RunConfig::validate(std::int64_t dataset_size) const {
    require(n_trials >= 1, ErrorKind::parameter, "n_trials must be >= 1");
    require(n_samples >= 1, ErrorKind::parameter, "n_samples must be >= 1");
    require(n_samples <= dataset_size, ErrorKind::parameter,
            "n_samples " + std::to_string(n_samples) + " exceeds dataset size " + std::to_string(dataset_size));
    require(batch_size >= 1, ErrorKind::parameter, "batch_size must be >= 1");
}

double cosine_distance(std::span<const double> p, std::span<const double> q) {
    require(p.size() == q.size() && !p.empty(), ErrorKind::parameter, "cosine_distance: vectors must match in length");
    double dot = 0.0, pp = 0.0, qq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        dot += p[i] * q[i];
        pp += p[i] * p[i];
        qq += q[i] * q[i];
    }
    require(pp > 0.0 && qq > 0.0, ErrorKind::parameter, "cosine_distance: zero vector");
    // For p == q, dot == pp == qq and sqrt(pp * pp) == pp exactly, so the result is 0.
    const double d = 1.0 - dot / std::sqrt(pp * qq);
    return std::clamp(d, 0.0, 1.0);
}

Predictions predict(const ModelGraph& model, const Dataset& data, int batch_size, const ParamOverlay* overlay) {
    require(data.size() >= 1, ErrorKind::parameter, "cannot evaluate an empty dataset");
    require(batch_size >= 1, ErrorKind::parameter, "batch_size must be >= 1");
    Predictions out;
    out.classes = model.num_classes();
    out.probs.reserve(static_cast<std::size_t>(data.size() * out.classes));
    out.argmax.reserve(static_cast<std::size_t>(data.size()));
    for (std::int64_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::int64_t end = std::min<std::int64_t>(begin + batch_size, data.size());
        Tensor batch = slice_images(data, begin, end);
        if (model.dtype() != DType::f32) batch = batch.to(model.dtype());
        const Tensor logits = forward(model, batch, overlay);
        const auto probs = kernels::softmax(logits).to_vector();
        out.probs.insert(out.probs.end(), probs.begin(), probs.end());
        for (int y : kernels::argmax_rows(logits)) out.argmax.push_back(y);
    }
    for (std::int64_t i = 0; i < data.size(); ++i)
        if (out.argmax[static_cast<std::size_t>(i)] == data.labels[static_cast<std::size_t>(i)]) ++out.correct;
    return out;
}

ParamOverlay randomize_layer(const ModelGraph& model, std::string_view layer_id, std::uint64_t seed) {
    require(model.contains(layer_id), ErrorKind::target, "unknown layer '" + std::string(layer_id) + "'");
    const auto& spec = model.layer(layer_id);
    require(spec.randomizable(), ErrorKind::target,
            "layer '" + spec.id + "' of kind " + std::string(to_string(spec.kind)) + " cannot be randomized");
    Rng rng(mix(seed, hash64(layer_id)));
    return ParamOverlay{spec.id, sample_layer_params(model, layer_id, rng)};
}

double trial_value(const Predictions& clean, const Predictions& randomized, const Dataset& data, Metric metric,
                   bool clamp_accuracy_delta) {
    const std::int64_t n = data.size();
    require(n >= 1, ErrorKind::parameter, "empty evaluation subset");
    require(static_cast<std::int64_t>(clean.argmax.size()) == n && static_cast<std::int64_t>(randomized.argmax.size()) == n,
            ErrorKind::parameter, "prediction count does not match subset");
    if (metric == Metric::cosine) {
        std::vector<double> distances(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) distances[static_cast<std::size_t>(i)] = cosine_distance(clean.row(i), randomized.row(i));
        return order_free_sum(std::move(distances)) / static_cast<double>(n);
    }
    const double delta = static_cast<double>(clean.correct - randomized.correct) / static_cast<double>(n);
    return clamp_accuracy_delta ? std::max(0.0, delta) : delta;
}

double criticality_trial(const ModelGraph& model, std::string_view layer_id, const Dataset& subset,
                         std::uint64_t seed, Metric metric, int batch_size, bool clamp_accuracy_delta) {
    require(subset.size() >= 1, ErrorKind::parameter, "empty evaluation subset");
    const auto overlay = randomize_layer(model, layer_id, seed);
    const auto clean = predict(model, subset, batch_size);
    const auto randomized = predict(model, subset, batch_size, &overlay);
    return trial_value(clean, randomized, subset, metric, clamp_accuracy_delta);
}

CriticalityStats summarize(std::string layer_id, std::vector<double> per_trial) {
    require(!per_trial.empty(), ErrorKind::parameter, "no trials to summarize");
    CriticalityStats s;
    s.layer_id = std::move(layer_id);
    const double n = static_cast<double>(per_trial.size());
    const auto [lo, hi] = std::minmax_element(per_trial.begin(), per_trial.end());
    s.mean = std::clamp(order_free_sum(per_trial) / n, *lo, *hi);
    if (per_trial.size() > 1) {
        std::vector<double> sq;
        sq.reserve(per_trial.size());
        for (double v : per_trial) sq.push_back((v - s.mean) * (v - s.mean));
        s.stddev = std::sqrt(order_free_sum(std::move(sq)) / (n - 1.0));
        s.std_error = s.stddev / std::sqrt(n);
    }
    s.per_trial = std::move(per_trial);
    return s;
}

std::uint64_t trial_seed(std::uint64_t base_seed, int trial) { return mix(base_seed, static_cast<std::uint64_t>(trial)); }

CriticalityStats layer_criticality(const ModelGraph& model, std::string_view layer_id, const Dataset& subset,
                                   const RunConfig& config) {
    config.validate(subset.size());
    const auto clean = predict(model, subset, config.batch_size);
    std::vector<double> values;
    for (int t = 0; t < config.n_trials; ++t) {
        const auto overlay = randomize_layer(model, layer_id, trial_seed(config.base_seed, t));
        const auto randomized = predict(model, subset, config.batch_size, &overlay);
        values.push_back(trial_value(clean, randomized, subset, config.metric, config.clamp_accuracy_delta));
    }
    return summarize(std::string(layer_id), std::move(values));
}

std::vector<std::int64_t> evaluation_subset(std::int64_t dataset_size, const RunConfig& config) {
    return subsample(dataset_size, config.n_samples, mix(config.base_seed, hash64("subset")));
}

CriticalityProfile profile_model(const ModelGraph& model, const Dataset& dataset, const RunConfig& config,
                                 std::string model_id, int jobs) {
    dataset.validate();
    config.validate(dataset.size());
    const auto indices = evaluation_subset(dataset.size(), config);
    const Dataset subset = gather(dataset, indices);

    const auto clean = predict(model, subset, config.batch_size);
    const auto layers = randomizable_layers(model);
    const std::size_t trials = static_cast<std::size_t>(config.n_trials);
    std::vector<double> values(layers.size() * trials);

    parallel_for(values.size(), jobs, [&](std::size_t job) {
        const auto& id = layers[job / trials];
        const int t = static_cast<int>(job % trials);
        const auto overlay = randomize_layer(model, id, trial_seed(config.base_seed, t));
        const auto randomized = predict(model, subset, config.batch_size, &overlay);
        values[job] = trial_value(clean, randomized, subset, config.metric, config.clamp_accuracy_delta);
    });

    CriticalityProfile profile;
    profile.model_id = std::move(model_id);
    profile.config = config;
    profile.clean_accuracy = static_cast<double>(clean.correct) / static_cast<double>(subset.size());
    for (std::size_t l = 0; l < layers.size(); ++l)
        profile.entries.push_back(summarize(
            layers[l], std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(l * trials),
                                           values.begin() + static_cast<std::ptrdiff_t>((l + 1) * trials))));
    return profile;
}

double mean_model_criticality(const CriticalityProfile& profile) {
    require(!profile.entries.empty(), ErrorKind::parameter, "profile has no entries");
    double sum = 0.0;
    for (const auto& e : profile.entries) sum += e.mean;
    return sum / static_cast<double>(profile.entries.size());
}

std::vector<double> delta_to_baseline(const CriticalityProfile& profile, const CriticalityProfile& baseline) {
    require(profile.entries.size() == baseline.entries.size(), ErrorKind::alignment,
            "profiles '" + profile.model_id + "' and '" + baseline.model_id + "' cover different layer sets");
    std::vector<double> out;
    out.reserve(profile.entries.size());
    for (std::size_t i = 0; i < profile.entries.size(); ++i) {
        require(profile.entries[i].layer_id == baseline.entries[i].layer_id, ErrorKind::alignment,
                "layer mismatch at position " + std::to_string(i) + ": '" + profile.entries[i].layer_id + "' vs '" +
                    baseline.entries[i].layer_id + "'");
        out.push_back(profile.entries[i].mean - baseline.entries[i].mean);
    }
    return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
    require(xs.size() == ys.size(), ErrorKind::parameter, "spearman: length mismatch");
    require(xs.size() >= 2, ErrorKind::parameter, "spearman: need at least two observations");
    for (std::size_t i = 0; i < xs.size(); ++i)
        require(std::isfinite(xs[i]) && std::isfinite(ys[i]), ErrorKind::parameter, "spearman: non-finite input");
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    const double mean = (n + 1.0) / 2.0;  // mean of average ranks is always (n + 1) / 2
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = rx[i] - mean, dy = ry[i] - mean;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    require(sxx > 0.0 && syy > 0.0, ErrorKind::degenerate, "spearman: constant input has no ranking");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace critmap
