#pragma once

#include <string>

#include "critmap/rng.hpp"
#include "critmap/tensor.hpp"

namespace critmap {

enum class InitFamily { kaiming_normal, kaiming_uniform, xavier_uniform, normal, uniform, zeros, ones };
enum class FanMode { fan_in, fan_out };
enum class LayerKind { conv, batchnorm, relu, maxpool, global_avg_pool, linear, residual_add };

std::string_view to_string(InitFamily family);
std::string_view to_string(FanMode mode);
std::string_view to_string(LayerKind kind);
InitFamily init_family_from_string(std::string_view name);
FanMode fan_mode_from_string(std::string_view name);
LayerKind layer_kind_from_string(std::string_view name);

/// Distribution used to draw a parameter tensor, both at construction time
/// and when a layer is re-randomized.
///
///   kaiming_normal   N(0, (gain * sqrt(2 / fan))^2)
///   kaiming_uniform  U(-gain * sqrt(6 / fan), +gain * sqrt(6 / fan))
///   xavier_uniform   U(-gain * sqrt(6 / (fan_in + fan_out)), ...)
///   normal           N(p0, p1^2)          (p0 = mu, p1 = sigma)
///   uniform          U(p0, p1)            (p0 = a, p1 = b)
///   zeros / ones     constant
///
/// `fan` is fan_in or fan_out according to fan_mode.
struct InitSpec {
    InitFamily family = InitFamily::kaiming_normal;
    FanMode fan_mode = FanMode::fan_out;
    double gain = 1.0;
    double p0 = 0.0;
    double p1 = 1.0;

    static InitSpec kaiming_normal(FanMode mode = FanMode::fan_out, double gain = 1.0) {
        return {InitFamily::kaiming_normal, mode, gain, 0.0, 1.0};
    }
    static InitSpec kaiming_uniform(FanMode mode = FanMode::fan_in, double gain = 1.0) {
        return {InitFamily::kaiming_uniform, mode, gain, 0.0, 1.0};
    }
    static InitSpec xavier_uniform(double gain = 1.0) { return {InitFamily::xavier_uniform, FanMode::fan_in, gain, 0.0, 1.0}; }
    static InitSpec normal(double mu, double sigma) { return {InitFamily::normal, FanMode::fan_in, 1.0, mu, sigma}; }
    static InitSpec uniform(double a, double b) { return {InitFamily::uniform, FanMode::fan_in, 1.0, a, b}; }
    static InitSpec zeros() { return {InitFamily::zeros, FanMode::fan_in, 1.0, 0.0, 0.0}; }
    static InitSpec ones() { return {InitFamily::ones, FanMode::fan_in, 1.0, 0.0, 0.0}; }

    bool operator==(const InitSpec&) const = default;
};

struct Fans {
    std::int64_t fan_in = 0;
    std::int64_t fan_out = 0;
    bool operator==(const Fans&) const = default;
};

/// conv [K,C,kh,kw]: (C*kh*kw, K*kh*kw); linear [O,F]: (F, O).
Fans fan(const Shape& shape, LayerKind kind);

/// Theoretical (mean, stddev) of the per-element distribution.
std::pair<double, double> init_moments(const InitSpec& spec, const Fans& fans);

/// Draws a tensor of `shape` in row-major order. Fans come from `fans`; the
/// overload without it derives them from the shape (rank 2 linear, rank 4 conv).
Tensor sample_init(const InitSpec& spec, const Shape& shape, Rng& rng, const Fans& fans, DType dtype = DType::f32);
Tensor sample_init(const InitSpec& spec, const Shape& shape, Rng& rng, DType dtype = DType::f32);

}  // namespace critmap
