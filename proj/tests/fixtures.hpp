#pragma once

// Small hand-built graphs shared by the unit and acceptance tests.

#include <string>
#include <utility>
#include <vector>

#include "critmap/dataset.hpp"
#include "critmap/model.hpp"

namespace fixtures {

struct NamedModel {
    std::string name;
    critmap::ModelGraph model;
};

/// One tiny f64 graph per layer kind, each ending in a [3]-class output:
/// conv, batchnorm, relu, maxpool, global_avg_pool, linear, residual_add.
std::vector<NamedModel> per_kind_models(std::uint64_t seed);

/// The default mini-ResNet converted to f64.
critmap::ModelGraph mini_resnet_f64(std::uint64_t seed);

/// Uniform [0,1) batch of the model's input shape, in the model's dtype.
critmap::Tensor random_batch(const critmap::ModelGraph& model, std::int64_t n, std::uint64_t seed);
std::vector<int> random_labels(std::int64_t n, int classes, std::uint64_t seed);

/// Randomizes the batchnorm running statistics so inference-mode tests do not
/// sit on the identity transform.
void perturb_running_stats(critmap::ModelGraph& model, std::uint64_t seed);

}  // namespace fixtures
