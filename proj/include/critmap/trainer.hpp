#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "critmap/dataset.hpp"
#include "critmap/model.hpp"
#include "critmap/rng.hpp"

namespace critmap {

enum class TrainMode { standard, adversarial, augmented };
enum class Norm { linf, l2 };

std::string_view to_string(TrainMode mode);
std::string_view to_string(Norm norm);
TrainMode train_mode_from_string(std::string_view name);
Norm norm_from_string(std::string_view name);

/// Projected gradient ascent on the cross-entropy, eps measured in pixel units ([0,1] scale).
struct PgdConfig {
    double eps = 0.0;
    std::optional<double> alpha;  // step size; defaults to 2.5 * eps / steps
    int steps = 3;
    Norm norm = Norm::linf;
    bool random_start = true;

    double step_size() const { return alpha.value_or(2.5 * eps / steps); }
    void validate() const;
};

struct AugmentConfig {
    double noise_sigma = 0.0;
    double flip_prob = 0.0;  // horizontal flip probability per sample
    int crop_pad = 0;        // zero-pad then crop back at a random offset

    bool any() const { return noise_sigma > 0.0 || flip_prob > 0.0 || crop_pad > 0; }
};

struct TrainConfig {
    int epochs = 10;
    int batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;  // applied to conv/linear weights only
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::standard;
    PgdConfig pgd;
    AugmentConfig augment;
    int lr_step = 0;  // multiply lr by lr_gamma every lr_step epochs (0 = constant)
    double lr_gamma = 0.1;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    ModelGraph model;
    std::vector<EpochRecord> log;
};

/// Mini-batch SGD with momentum on mean cross-entropy. Batch order per epoch is a
/// Fisher-Yates shuffle seeded from (seed, epoch). Adversarial mode replaces every
/// minibatch by its PGD perturbation before the gradient step; augmented mode
/// applies augment() first.
TrainResult train(ModelGraph model, const Dataset& data, const TrainConfig& config);

/// train() for a config in adversarial mode.
TrainResult train_adversarial(ModelGraph model, const Dataset& data, const TrainConfig& config);

/// Returns x_adv with |x_adv - x| <= eps in the chosen norm and every pixel in [0,1].
/// eps == 0 returns x unchanged without consuming randomness.
Tensor pgd_attack(const ModelGraph& model, const Tensor& x, std::span<const int> labels, const PgdConfig& config,
                  Rng& rng, NormMode mode = NormMode::running_stats);

Tensor augment(const Tensor& batch, const AugmentConfig& config, Rng& rng);
Tensor flip_horizontal(const Tensor& batch);

double evaluate_accuracy(const ModelGraph& model, const Dataset& data, int batch_size = 128);
/// Accuracy on PGD-perturbed inputs (attack in inference mode).
double robust_accuracy(const ModelGraph& model, const Dataset& data, const PgdConfig& attack, std::uint64_t seed,
                       int batch_size = 128);

}  // namespace critmap
