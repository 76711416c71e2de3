#include "critmap/init.hpp"

#include <array>
#include <cmath>

namespace critmap {

namespace {

constexpr std::array<std::pair<InitFamily, std::string_view>, 7> kFamilies{{
    {InitFamily::kaiming_normal, "kaiming_normal"},
    {InitFamily::kaiming_uniform, "kaiming_uniform"},
    {InitFamily::xavier_uniform, "xavier_uniform"},
    {InitFamily::normal, "normal"},
    {InitFamily::uniform, "uniform"},
    {InitFamily::zeros, "zeros"},
    {InitFamily::ones, "ones"},
}};

constexpr std::array<std::pair<LayerKind, std::string_view>, 7> kKinds{{
    {LayerKind::conv, "conv"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::relu, "relu"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::global_avg_pool, "global_avg_pool"},
    {LayerKind::linear, "linear"},
    {LayerKind::residual_add, "residual_add"},
}};

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E value) {
    for (const auto& [v, name] : table)
        if (v == value) return name;
    return "unknown";
}

template <typename E, std::size_t N>
E value_of(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view name, const char* what) {
    for (const auto& [v, n] : table)
        if (n == name) return v;
    fail(ErrorKind::parameter, std::string("unknown ") + what + " '" + std::string(name) + "'");
}

double selected_fan(const InitSpec& spec, const Fans& fans) {
    const auto f = spec.fan_mode == FanMode::fan_in ? fans.fan_in : fans.fan_out;
    require(f > 0, ErrorKind::parameter, "initialization needs a positive fan");
    return static_cast<double>(f);
}

}  // namespace

std::string_view to_string(InitFamily family) { return name_of(kFamilies, family); }
std::string_view to_string(FanMode mode) { return mode == FanMode::fan_in ? "fan_in" : "fan_out"; }
std::string_view to_string(LayerKind kind) { return name_of(kKinds, kind); }
InitFamily init_family_from_string(std::string_view name) { return value_of(kFamilies, name, "init family"); }
LayerKind layer_kind_from_string(std::string_view name) { return value_of(kKinds, name, "layer kind"); }

FanMode fan_mode_from_string(std::string_view name) {
    if (name == "fan_in") return FanMode::fan_in;
    if (name == "fan_out") return FanMode::fan_out;
    fail(ErrorKind::parameter, "unknown fan mode '" + std::string(name) + "'");
}

Fans fan(const Shape& shape, LayerKind kind) {
    if (kind == LayerKind::conv) {
        require(shape.size() == 4, ErrorKind::shape, "conv fan needs a [K,C,kh,kw] shape, got " + shape_string(shape));
        const auto receptive = shape[2] * shape[3];
        return {shape[1] * receptive, shape[0] * receptive};
    }
    if (kind == LayerKind::linear) {
        require(shape.size() == 2, ErrorKind::shape, "linear fan needs an [O,F] shape, got " + shape_string(shape));
        return {shape[1], shape[0]};
    }
    fail(ErrorKind::shape, "fan is defined for conv and linear shapes only");
}

std::pair<double, double> init_moments(const InitSpec& spec, const Fans& fans) {
    switch (spec.family) {
        case InitFamily::kaiming_normal:
            return {0.0, spec.gain * std::sqrt(2.0 / selected_fan(spec, fans))};
        case InitFamily::kaiming_uniform: {
            const double bound = spec.gain * std::sqrt(6.0 / selected_fan(spec, fans));
            return {0.0, bound / std::sqrt(3.0)};
        }
        case InitFamily::xavier_uniform: {
            const auto total = fans.fan_in + fans.fan_out;
            require(fans.fan_in > 0 && fans.fan_out > 0, ErrorKind::parameter, "initialization needs a positive fan");
            const double bound = spec.gain * std::sqrt(6.0 / static_cast<double>(total));
            return {0.0, bound / std::sqrt(3.0)};
        }
        case InitFamily::normal:
            return {spec.p0, spec.p1};
        case InitFamily::uniform:
            return {0.5 * (spec.p0 + spec.p1), (spec.p1 - spec.p0) / std::sqrt(12.0)};
        case InitFamily::zeros:
            return {0.0, 0.0};
        case InitFamily::ones:
            return {1.0, 0.0};
    }
    return {0.0, 0.0};
}

Tensor sample_init(const InitSpec& spec, const Shape& shape, Rng& rng, const Fans& fans, DType dtype) {
    const auto n = shape_numel(shape);
    switch (spec.family) {
        case InitFamily::zeros:
            return Tensor(shape, dtype);
        case InitFamily::ones:
            return Tensor::full(shape, 1.0, dtype);
        case InitFamily::kaiming_normal:
        case InitFamily::normal: {
            require(spec.gain > 0.0, ErrorKind::parameter, "gain must be positive");
            const auto [mean, stddev] = init_moments(spec, fans);
            return rng_draw(rng, NormalDist{mean, stddev}, n, dtype).reshape(shape);
        }
        case InitFamily::kaiming_uniform:
        case InitFamily::xavier_uniform: {
            require(spec.gain > 0.0, ErrorKind::parameter, "gain must be positive");
            const double bound = init_moments(spec, fans).second * std::sqrt(3.0);
            return rng_draw(rng, UniformDist{-bound, bound}, n, dtype).reshape(shape);
        }
        case InitFamily::uniform:
            return rng_draw(rng, UniformDist{spec.p0, spec.p1}, n, dtype).reshape(shape);
    }
    fail(ErrorKind::parameter, "unhandled init family");
}

Tensor sample_init(const InitSpec& spec, const Shape& shape, Rng& rng, DType dtype) {
    const bool needs_fan = spec.family == InitFamily::kaiming_normal || spec.family == InitFamily::kaiming_uniform ||
                           spec.family == InitFamily::xavier_uniform;
    Fans fans{};
    if (needs_fan) fans = fan(shape, shape.size() == 4 ? LayerKind::conv : LayerKind::linear);
    return sample_init(spec, shape, rng, fans, dtype);
}

}  // namespace critmap
