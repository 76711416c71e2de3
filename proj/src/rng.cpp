#include "critmap/rng.hpp"

#include <cmath>
#include <numbers>

namespace critmap {

double Rng::normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(1.0 - u1));
    return radius * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t bound) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
}

namespace {

template <typename Draw>
Tensor fill(std::int64_t n, DType dtype, Draw&& draw) {
    require(n >= 1, ErrorKind::parameter, "draw count must be positive");
    Tensor out({n}, dtype);
    dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        for (auto& x : out.data<T>()) x = static_cast<T>(draw());
    });
    return out;
}

}  // namespace

Tensor rng_draw(Rng& rng, const NormalDist& dist, std::int64_t n, DType dtype) {
    require(dist.stddev > 0.0 && std::isfinite(dist.stddev) && std::isfinite(dist.mean), ErrorKind::parameter,
            "normal distribution needs finite mean and sigma > 0");
    return fill(n, dtype, [&] { return rng.normal(dist.mean, dist.stddev); });
}

Tensor rng_draw(Rng& rng, const UniformDist& dist, std::int64_t n, DType dtype) {
    require(dist.low < dist.high && std::isfinite(dist.low) && std::isfinite(dist.high), ErrorKind::parameter,
            "uniform distribution needs finite a < b");
    return fill(n, dtype, [&] { return rng.uniform(dist.low, dist.high); });
}

}  // namespace critmap
