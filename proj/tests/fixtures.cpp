#include "fixtures.hpp"

#include "critmap/rng.hpp"

namespace fixtures {

using namespace critmap;

namespace {

LayerSpec conv_spec(std::string id, std::string in, std::int64_t cin, std::int64_t cout, int k, int stride, int pad,
                    bool bias) {
    LayerSpec s{std::move(id), LayerKind::conv, {}, InitSpec::kaiming_normal(FanMode::fan_in), InitSpec::uniform(-0.5, 0.5),
                {std::move(in)}};
    s.hyper.in_channels = cin;
    s.hyper.out_channels = cout;
    s.hyper.kernel = k;
    s.hyper.stride = stride;
    s.hyper.padding = pad;
    s.hyper.bias = bias;
    return s;
}

LayerSpec simple(std::string id, LayerKind kind, std::vector<std::string> in) {
    return {std::move(id), kind, {}, InitSpec::zeros(), InitSpec::zeros(), std::move(in)};
}

LayerSpec bn_spec(std::string id, std::string in) {
    // Non-trivial gamma/beta so their gradients are exercised away from 1 and 0.
    return {std::move(id), LayerKind::batchnorm, {}, InitSpec::uniform(0.5, 1.5), InitSpec::uniform(-0.5, 0.5),
            {std::move(in)}};
}

ModelGraph finish(ModelGraph g, std::uint64_t seed) {
    g.validate();
    g.initialize(seed);
    perturb_running_stats(g, seed);
    return g;
}

}  // namespace

std::vector<NamedModel> per_kind_models(std::uint64_t seed) {
    const Shape in{2, 5, 5};
    const std::string x(kInputId);
    std::vector<NamedModel> out;
    {
        ModelGraph g(in, 3, DType::f64);
        g.add_layer(conv_spec("conv", x, 2, 3, 3, 2, 1, true));
        g.add_layer(simple("pool", LayerKind::global_avg_pool, {"conv"}));
        out.push_back({"conv", finish(std::move(g), seed)});
    }
    {
        ModelGraph g(in, 3, DType::f64);
        g.add_layer(conv_spec("conv", x, 2, 3, 3, 1, 0, false));
        g.add_layer(bn_spec("bn", "conv"));
        g.add_layer(simple("pool", LayerKind::global_avg_pool, {"bn"}));
        out.push_back({"batchnorm", finish(std::move(g), seed)});
    }
    {
        ModelGraph g(in, 3, DType::f64);
        g.add_layer(conv_spec("conv", x, 2, 3, 3, 1, 1, true));
        g.add_layer(simple("relu", LayerKind::relu, {"conv"}));
        g.add_layer(simple("pool", LayerKind::global_avg_pool, {"relu"}));
        out.push_back({"relu", finish(std::move(g), seed)});
    }
    {
        ModelGraph g(in, 3, DType::f64);
        g.add_layer(conv_spec("conv", x, 2, 3, 3, 1, 1, true));
        LayerSpec mp = simple("maxpool", LayerKind::maxpool, {"conv"});
        mp.hyper.kernel = 3;
        mp.hyper.stride = 2;
        mp.hyper.padding = 1;
        g.add_layer(std::move(mp));
        g.add_layer(simple("pool", LayerKind::global_avg_pool, {"maxpool"}));
        out.push_back({"maxpool", finish(std::move(g), seed)});
    }
    {
        ModelGraph g(in, 3, DType::f64);
        g.add_layer(conv_spec("conv", x, 2, 4, 1, 1, 0, false));
        g.add_layer(simple("gap", LayerKind::global_avg_pool, {"conv"}));
        LayerSpec fc{"fc", LayerKind::linear, {}, InitSpec::xavier_uniform(), InitSpec::uniform(-0.5, 0.5), {"gap"}};
        fc.hyper.out_features = 3;
        fc.hyper.bias = true;
        g.add_layer(std::move(fc));
        out.push_back({"global_avg_pool", finish(std::move(g), seed)});
    }
    {
        ModelGraph g(in, 3, DType::f64);
        LayerSpec fc{"fc", LayerKind::linear, {}, InitSpec::kaiming_uniform(), InitSpec::uniform(-0.5, 0.5), {x}};
        fc.hyper.out_features = 3;
        fc.hyper.bias = true;
        g.add_layer(std::move(fc));
        out.push_back({"linear", finish(std::move(g), seed)});
    }
    {
        ModelGraph g(in, 3, DType::f64);
        g.add_layer(conv_spec("a", x, 2, 3, 3, 1, 1, true));
        g.add_layer(conv_spec("b", x, 2, 3, 1, 1, 0, false));
        g.add_layer(simple("add", LayerKind::residual_add, {"a", "b"}));
        g.add_layer(simple("pool", LayerKind::global_avg_pool, {"add"}));
        out.push_back({"residual_add", finish(std::move(g), seed)});
    }
    return out;
}

ModelGraph mini_resnet_f64(std::uint64_t seed) {
    ArchConfig cfg = mini_resnet_config();
    cfg.dtype = DType::f64;
    ModelGraph g = build_model(cfg, seed);
    perturb_running_stats(g, seed);
    return g;
}

Tensor random_batch(const ModelGraph& model, std::int64_t n, std::uint64_t seed) {
    Shape shape{n};
    shape.insert(shape.end(), model.input_shape().begin(), model.input_shape().end());
    Tensor t(shape, model.dtype());
    Rng rng(seed);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform());
    return t;
}

std::vector<int> random_labels(std::int64_t n, int classes, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& y : labels) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    return labels;
}

void perturb_running_stats(ModelGraph& model, std::uint64_t seed) {
    Rng rng(mix(seed, hash64("running")));
    for (const auto& l : model.layers()) {
        if (l.kind != LayerKind::batchnorm) continue;
        auto& p = model.mutable_params(l.id);
        for (std::int64_t c = 0; c < l.hyper.in_channels; ++c) {
            p.at("running_mean").set(c, rng.uniform(-0.3, 0.3));
            p.at("running_var").set(c, rng.uniform(0.5, 2.0));
        }
    }
}

}  // namespace fixtures
