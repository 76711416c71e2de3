#include "critmap/dataset.hpp"

#include <algorithm>
#include <numeric>

#include "critmap/rng.hpp"

namespace critmap {

void Dataset::validate() const {
    require(images.rank() == 4, ErrorKind::validation, "images must be [N,C,H,W]");
    require(images.dtype() == DType::f32, ErrorKind::validation, "images must be float32");
    require(images.dim(0) == size(), ErrorKind::validation, "image count does not match label count");
    require(num_classes >= 1, ErrorKind::validation, "num_classes must be positive");
    for (int y : labels)
        require(y >= 0 && y < num_classes, ErrorKind::validation,
                "label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
}

Dataset gather(const Dataset& data, std::span<const std::int64_t> indices) {
    const std::int64_t per = data.images.numel() / std::max<std::int64_t>(data.size(), 1);
    Shape shape = data.images.shape();
    shape[0] = static_cast<std::int64_t>(indices.size());
    Dataset out;
    out.num_classes = data.num_classes;
    out.labels.reserve(indices.size());
    std::vector<float> buf;
    buf.reserve(static_cast<std::size_t>(per) * indices.size());
    auto src = data.images.data<float>();
    for (auto i : indices) {
        require(i >= 0 && i < data.size(), ErrorKind::parameter, "sample index out of range");
        buf.insert(buf.end(), src.begin() + i * per, src.begin() + (i + 1) * per);
        out.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
    }
    out.images = Tensor(std::move(shape), std::move(buf));
    return out;
}

Tensor slice_images(const Dataset& data, std::int64_t begin, std::int64_t end) {
    require(0 <= begin && begin < end && end <= data.size(), ErrorKind::parameter, "invalid batch range");
    const std::int64_t per = data.images.numel() / data.size();
    Shape shape = data.images.shape();
    shape[0] = end - begin;
    auto src = data.images.data<float>();
    return Tensor(std::move(shape), std::vector<float>(src.begin() + begin * per, src.begin() + end * per));
}

std::vector<std::int64_t> subsample(std::int64_t population, std::int64_t n, std::uint64_t seed) {
    require(n >= 0 && n <= population, ErrorKind::parameter,
            "cannot draw " + std::to_string(n) + " samples from " + std::to_string(population));
    std::vector<std::int64_t> pool(static_cast<std::size_t>(population));
    std::iota(pool.begin(), pool.end(), std::int64_t{0});
    Rng rng(seed);
    for (std::int64_t i = 0; i < n; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(population - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(n));
    return pool;
}

Dataset synthetic_dataset(const SynthConfig& cfg) {
    require(cfg.classes >= 1 && cfg.n >= 1 && cfg.channels >= 1 && cfg.size >= 1, ErrorKind::parameter,
            "synthetic dataset needs positive classes, n, channels and size");
    require(cfg.cells >= 1 && cfg.cells <= cfg.size, ErrorKind::parameter, "cells must lie in [1, size]");
    require(cfg.margin >= 0.0 && cfg.noise >= 0.0 && cfg.texture >= 0.0, ErrorKind::parameter,
            "margin, noise and texture must be non-negative");

    const std::int64_t plane = std::int64_t{cfg.size} * cfg.size;
    const std::int64_t per = plane * cfg.channels;
    Rng proto_rng(mix(cfg.seed, hash64("prototypes")));
    std::vector<double> protos(static_cast<std::size_t>(cfg.classes * per));
    for (int c = 0; c < cfg.classes; ++c)
        for (int ch = 0; ch < cfg.channels; ++ch) {
            std::vector<double> coarse(static_cast<std::size_t>(cfg.cells * cfg.cells));
            for (auto& v : coarse) v = proto_rng.uniform();
            for (int y = 0; y < cfg.size; ++y)
                for (int x = 0; x < cfg.size; ++x) {
                    const int cy = y * cfg.cells / cfg.size, cx = x * cfg.cells / cfg.size;
                    protos[static_cast<std::size_t>(c * per + ch * plane + y * cfg.size + x)] =
                        coarse[static_cast<std::size_t>(cy * cfg.cells + cx)];
                }
        }

    std::vector<double> pattern(static_cast<std::size_t>(cfg.classes * per), 0.0);
    if (cfg.texture != 0.0) {
        Rng pattern_rng(mix(cfg.seed, hash64("texture")));
        for (auto& v : pattern) v = pattern_rng.uniform() < 0.5 ? -1.0 : 1.0;
    }

    Rng noise_rng(mix(cfg.seed, hash64("noise")));
    std::vector<float> pixels(static_cast<std::size_t>(cfg.n * per));
    Dataset out;
    out.num_classes = cfg.classes;
    out.labels.resize(static_cast<std::size_t>(cfg.n));
    for (std::int64_t i = 0; i < cfg.n; ++i) {
        const int label = static_cast<int>(i % cfg.classes);
        out.labels[static_cast<std::size_t>(i)] = label;
        for (std::int64_t j = 0; j < per; ++j) {
            const auto k = static_cast<std::size_t>(label * per + j);
            const double v =
                0.5 + cfg.margin * (protos[k] - 0.5) + cfg.texture * pattern[k] + cfg.noise * noise_rng.normal();
            pixels[static_cast<std::size_t>(i * per + j)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    out.images = Tensor({cfg.n, cfg.channels, cfg.size, cfg.size}, std::move(pixels));
    return out;
}

}  // namespace critmap
