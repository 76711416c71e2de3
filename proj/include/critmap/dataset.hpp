#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "critmap/tensor.hpp"

namespace critmap {

/// Labeled image set: images [N,C,H,W] float32 in [0,1], labels in [0, num_classes).
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    int num_classes = 0;

    std::int64_t size() const noexcept { return static_cast<std::int64_t>(labels.size()); }
    Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

    /// Throws validation error on any inconsistency.
    void validate() const;
};

/// Rows `indices` of the dataset, in the given order.
Dataset gather(const Dataset& data, std::span<const std::int64_t> indices);

/// Contiguous slice [begin, end) as a batch tensor.
Tensor slice_images(const Dataset& data, std::int64_t begin, std::int64_t end);

/// n distinct indices drawn uniformly without replacement from [0, population)
/// by a partial Fisher-Yates shuffle seeded with `seed`.
std::vector<std::int64_t> subsample(std::int64_t population, std::int64_t n, std::uint64_t seed);

/// Class-conditional blocky images. Each class owns a prototype drawn at
/// `cells` x `cells` resolution and upsampled by nearest neighbour; a sample is
///   clamp(0.5 + margin * (prototype - 0.5) + texture * pattern + N(0, noise^2), 0, 1)
/// where `pattern` is a per-class full-resolution field of random signs.
/// Labels cycle 0, 1, ..., classes-1 so every class has n/classes samples (+1).
struct SynthConfig {
    int classes = 4;
    std::int64_t n = 512;
    int channels = 3;
    int size = 16;
    int cells = 4;
    double margin = 1.0;
    double noise = 0.15;
    std::uint64_t seed = 0;
    double texture = 0.0;  // amplitude of a per-class pixel-level +-1 pattern added on top
};

Dataset synthetic_dataset(const SynthConfig& config);

}  // namespace critmap
