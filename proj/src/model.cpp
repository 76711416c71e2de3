#include "critmap/model.hpp"

#include <cmath>
#include <set>

#include "critmap/rng.hpp"

namespace critmap {

namespace {

bool is_learnable(LayerKind kind, const std::string& name) {
    if (kind == LayerKind::batchnorm) return name == "gamma" || name == "beta";
    return name == "weight" || name == "bias";
}

}  // namespace

ModelGraph::ModelGraph(Shape input_shape, int num_classes, DType dtype)
    : input_shape_(std::move(input_shape)), num_classes_(num_classes), dtype_(dtype) {
    require(!input_shape_.empty(), ErrorKind::config, "input shape must be non-empty");
    shape_numel(input_shape_);
    require(num_classes_ >= 1, ErrorKind::config, "num_classes must be positive");
}

Shape ModelGraph::infer_output(const LayerSpec& spec, const std::vector<Shape>& in) const {
    const auto& h = spec.hyper;
    const Shape& x = in.front();
    auto need_chw = [&] {
        require(x.size() == 3, ErrorKind::config, spec.id + ": expects a [C,H,W] input, got " + shape_string(x));
    };
    switch (spec.kind) {
        case LayerKind::conv: {
            need_chw();
            require(h.in_channels == x[0], ErrorKind::config,
                    spec.id + ": in_channels " + std::to_string(h.in_channels) + " != input channels " +
                        std::to_string(x[0]));
            require(h.out_channels >= 1 && h.kernel >= 1 && h.stride >= 1 && h.padding >= 0, ErrorKind::config,
                    spec.id + ": invalid conv hyperparameters");
            const auto span_h = x[1] + 2 * h.padding - h.kernel;
            const auto span_w = x[2] + 2 * h.padding - h.kernel;
            require(span_h >= 0 && span_w >= 0, ErrorKind::config, spec.id + ": kernel does not fit the input");
            return {h.out_channels, span_h / h.stride + 1, span_w / h.stride + 1};
        }
        case LayerKind::batchnorm:
            require(h.in_channels == x[0], ErrorKind::config, spec.id + ": channel count mismatch");
            require(h.eps >= 0.0 && h.momentum >= 0.0 && h.momentum <= 1.0, ErrorKind::config,
                    spec.id + ": invalid batchnorm eps/momentum");
            return x;
        case LayerKind::relu:
            return x;
        case LayerKind::maxpool: {
            need_chw();
            require(h.kernel >= 1 && h.stride >= 1 && h.padding >= 0 && 2 * h.padding <= h.kernel, ErrorKind::config,
                    spec.id + ": invalid pooling window");
            const auto span_h = x[1] + 2 * h.padding - h.kernel;
            const auto span_w = x[2] + 2 * h.padding - h.kernel;
            require(span_h >= 0 && span_w >= 0, ErrorKind::config, spec.id + ": pooling window does not fit");
            return {x[0], span_h / h.stride + 1, span_w / h.stride + 1};
        }
        case LayerKind::global_avg_pool:
            need_chw();
            return {x[0]};
        case LayerKind::linear:
            require(h.in_features == shape_numel(x), ErrorKind::config,
                    spec.id + ": in_features " + std::to_string(h.in_features) + " != flattened input " +
                        std::to_string(shape_numel(x)));
            require(h.out_features >= 1, ErrorKind::config, spec.id + ": out_features must be positive");
            return {h.out_features};
        case LayerKind::residual_add:
            require(in[0] == in[1], ErrorKind::config,
                    spec.id + ": residual inputs differ " + shape_string(in[0]) + " vs " + shape_string(in[1]));
            return x;
    }
    fail(ErrorKind::config, spec.id + ": unknown layer kind");
}

std::map<std::string, Shape> ModelGraph::param_shapes(const LayerSpec& spec) const {
    const auto& h = spec.hyper;
    std::map<std::string, Shape> shapes;
    switch (spec.kind) {
        case LayerKind::conv:
            shapes["weight"] = {h.out_channels, h.in_channels, h.kernel, h.kernel};
            if (h.bias) shapes["bias"] = {h.out_channels};
            break;
        case LayerKind::linear:
            shapes["weight"] = {h.out_features, h.in_features};
            if (h.bias) shapes["bias"] = {h.out_features};
            break;
        case LayerKind::batchnorm:
            for (const char* n : {"gamma", "beta", "running_mean", "running_var"}) shapes[n] = {h.in_channels};
            break;
        default:
            break;
    }
    return shapes;
}

void ModelGraph::add_layer(LayerSpec spec) {
    require(!spec.id.empty() && spec.id != kInputId, ErrorKind::config, "layer id must be non-empty and not 'input'");
    require(!index_.contains(spec.id), ErrorKind::config, "duplicate layer id '" + spec.id + "'");
    const std::size_t arity = spec.kind == LayerKind::residual_add ? 2 : 1;
    require(spec.inputs.size() == arity, ErrorKind::config,
            spec.id + ": expects " + std::to_string(arity) + " input(s), got " + std::to_string(spec.inputs.size()));

    std::vector<int> indices;
    std::vector<Shape> in_shapes;
    for (const auto& src : spec.inputs) {
        if (src == kInputId) {
            indices.push_back(-1);
            in_shapes.push_back(input_shape_);
            continue;
        }
        auto it = index_.find(src);
        require(it != index_.end(), ErrorKind::config,
                spec.id + ": input '" + src + "' is not an earlier layer (graph must be acyclic and ordered)");
        indices.push_back(static_cast<int>(it->second));
        in_shapes.push_back(out_shapes_[it->second]);
    }

    // Fill channel/feature counts that can be inferred from the input.
    if (spec.kind == LayerKind::batchnorm && spec.hyper.in_channels == 0) spec.hyper.in_channels = in_shapes[0].at(0);
    if (spec.kind == LayerKind::linear && spec.hyper.in_features == 0) spec.hyper.in_features = shape_numel(in_shapes[0]);
    if (spec.kind == LayerKind::batchnorm && spec.weight_init == InitSpec::kaiming_normal())
        spec.weight_init = InitSpec::ones();

    Shape out = infer_output(spec, in_shapes);

    ParamSet params;
    for (const auto& [name, shape] : param_shapes(spec)) params.emplace(name, Tensor(shape, dtype_));
    if (spec.kind == LayerKind::batchnorm) {
        params["gamma"] = Tensor::full({spec.hyper.in_channels}, 1.0, dtype_);
        params["running_var"] = Tensor::full({spec.hyper.in_channels}, 1.0, dtype_);
    }

    index_.emplace(spec.id, layers_.size());
    if (spec.parameterized()) params_.emplace(spec.id, std::move(params));
    out_shapes_.push_back(std::move(out));
    input_index_.push_back(std::move(indices));
    layers_.push_back(std::move(spec));
}

void ModelGraph::validate() const {
    require(!layers_.empty(), ErrorKind::config, "model has no layers");
    std::vector<bool> consumed(layers_.size(), false);
    for (const auto& ins : input_index_)
        for (int i : ins)
            if (i >= 0) consumed[static_cast<std::size_t>(i)] = true;
    std::size_t sinks = 0;
    for (bool c : consumed) sinks += c ? 0 : 1;
    require(sinks == 1 && !consumed.back(), ErrorKind::config,
            "model must have exactly one output layer and it must be last");
    require(out_shapes_.back() == Shape{num_classes_}, ErrorKind::config,
            "output layer produces " + shape_string(out_shapes_.back()) + ", expected [" +
                std::to_string(num_classes_) + "]");
}

const LayerSpec& ModelGraph::layer(std::string_view id) const { return layers_[index_of(id)]; }

std::size_t ModelGraph::index_of(std::string_view id) const {
    auto it = index_.find(id);
    require(it != index_.end(), ErrorKind::lookup, "unknown layer id '" + std::string(id) + "'");
    return it->second;
}

bool ModelGraph::contains(std::string_view id) const { return index_.find(id) != index_.end(); }

const ParamSet& ModelGraph::params(std::string_view id) const {
    auto it = params_.find(id);
    require(it != params_.end(), ErrorKind::lookup, "layer '" + std::string(id) + "' has no parameters");
    return it->second;
}

ParamSet& ModelGraph::mutable_params(std::string_view id) {
    auto it = params_.find(id);
    require(it != params_.end(), ErrorKind::lookup, "layer '" + std::string(id) + "' has no parameters");
    return it->second;
}

ParamSet sample_layer_params(const ModelGraph& model, std::string_view layer_id, Rng& rng) {
    const auto& spec = model.layer(layer_id);
    require(spec.parameterized(), ErrorKind::lookup, "layer '" + std::string(layer_id) + "' has no parameters");
    const auto& current = model.params(layer_id);
    ParamSet out;
    if (spec.kind == LayerKind::batchnorm) {
        const Shape shape{spec.hyper.in_channels};
        out["gamma"] = sample_init(spec.weight_init, shape, rng, Fans{1, 1}, model.dtype());
        out["beta"] = sample_init(spec.bias_init, shape, rng, Fans{1, 1}, model.dtype());
        return out;
    }
    const Shape& wshape = current.at("weight").shape();
    const Fans fans = fan(wshape, spec.kind);
    out["weight"] = sample_init(spec.weight_init, wshape, rng, fans, model.dtype());
    if (auto it = current.find("bias"); it != current.end())
        out["bias"] = sample_init(spec.bias_init, it->second.shape(), rng, fans, model.dtype());
    return out;
}

void ModelGraph::initialize(std::uint64_t seed) {
    for (const auto& spec : layers_) {
        if (!spec.parameterized()) continue;
        Rng rng(mix(seed, hash64(spec.id)));
        auto fresh = sample_layer_params(*this, spec.id, rng);
        auto& p = params_.at(spec.id);
        for (auto& [name, t] : fresh) p[name] = std::move(t);
        if (spec.kind == LayerKind::batchnorm) {
            p["running_mean"] = Tensor({spec.hyper.in_channels}, dtype_);
            p["running_var"] = Tensor::full({spec.hyper.in_channels}, 1.0, dtype_);
        }
    }
}

ModelGraph ModelGraph::to(DType dtype) const {
    ModelGraph out = *this;
    out.dtype_ = dtype;
    for (auto& [id, set] : out.params_)
        for (auto& [name, t] : set) t = t.to(dtype);
    return out;
}

// --- architecture ---------------------------------------------------------

ArchConfig mini_resnet_config() { return ArchConfig{}; }

namespace {

struct GraphBuilder {
    ModelGraph& g;
    const ArchConfig& cfg;

    std::string conv(const std::string& id, const std::string& in, std::int64_t cin, std::int64_t cout, int k,
                     int stride, int pad) {
        LayerSpec s{id, LayerKind::conv, {}, cfg.conv_init, cfg.bias_init, {in}};
        s.hyper.in_channels = cin;
        s.hyper.out_channels = cout;
        s.hyper.kernel = k;
        s.hyper.stride = stride;
        s.hyper.padding = pad;
        s.hyper.bias = cfg.conv_bias;
        g.add_layer(std::move(s));
        return id;
    }
    std::string bn(const std::string& id, const std::string& in, std::int64_t c) {
        LayerSpec s{id, LayerKind::batchnorm, {}, InitSpec::ones(), InitSpec::zeros(), {in}};
        s.hyper.in_channels = c;
        s.hyper.eps = cfg.bn_eps;
        s.hyper.momentum = cfg.bn_momentum;
        g.add_layer(std::move(s));
        return id;
    }
    std::string simple(const std::string& id, LayerKind kind, std::vector<std::string> in) {
        LayerSpec s{id, kind, {}, InitSpec::zeros(), InitSpec::zeros(), std::move(in)};
        g.add_layer(std::move(s));
        return id;
    }
};

}  // namespace

ModelGraph build_model(const ArchConfig& cfg, std::uint64_t seed) {
    require(cfg.input_shape.size() == 3, ErrorKind::config, "input shape must be [C,H,W]");
    require(cfg.num_classes >= 1 && cfg.stem_channels >= 1 && cfg.stem_kernel >= 1 && cfg.stem_stride >= 1,
            ErrorKind::config, "invalid stem/classes configuration");
    require(!cfg.stages.empty(), ErrorKind::config, "at least one stage is required");
    require(cfg.expansion >= 1, ErrorKind::config, "expansion must be positive");
    for (const auto& st : cfg.stages)
        require(st.blocks >= 1 && st.width >= 1 && st.stride >= 1, ErrorKind::config,
                "every stage needs blocks >= 1, width >= 1 and stride >= 1");

    ModelGraph g(cfg.input_shape, cfg.num_classes, cfg.dtype);
    g.set_name("resnet");
    GraphBuilder b{g, cfg};

    std::string x = b.conv("stem.conv", std::string(kInputId), cfg.input_shape[0], cfg.stem_channels, cfg.stem_kernel,
                           cfg.stem_stride, cfg.stem_kernel / 2);
    x = b.bn("stem.bn", x, cfg.stem_channels);
    x = b.simple("stem.relu", LayerKind::relu, {x});
    if (cfg.stem_pool) {
        LayerSpec pool{"stem.pool", LayerKind::maxpool, {}, InitSpec::zeros(), InitSpec::zeros(), {x}};
        pool.hyper.kernel = 3;
        pool.hyper.stride = 2;
        pool.hyper.padding = 1;
        g.add_layer(std::move(pool));
        x = "stem.pool";
    }

    std::int64_t channels = cfg.stem_channels;
    const bool bottleneck = cfg.block == BlockKind::bottleneck;
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const auto& st = cfg.stages[s];
        const std::int64_t out = bottleneck ? std::int64_t{st.width} * cfg.expansion : st.width;
        for (int blk = 0; blk < st.blocks; ++blk) {
            const std::string p = "stage" + std::to_string(s + 1) + ".block" + std::to_string(blk) + ".";
            const int stride = blk == 0 ? st.stride : 1;
            const std::string in = x;
            std::string y;
            if (bottleneck) {
                y = b.conv(p + "conv1", in, channels, st.width, 1, 1, 0);
                y = b.bn(p + "bn1", y, st.width);
                y = b.simple(p + "relu1", LayerKind::relu, {y});
                y = b.conv(p + "conv2", y, st.width, st.width, 3, stride, 1);
                y = b.bn(p + "bn2", y, st.width);
                y = b.simple(p + "relu2", LayerKind::relu, {y});
                y = b.conv(p + "conv3", y, st.width, out, 1, 1, 0);
                y = b.bn(p + "bn3", y, out);
            } else {
                y = b.conv(p + "conv1", in, channels, out, 3, stride, 1);
                y = b.bn(p + "bn1", y, out);
                y = b.simple(p + "relu1", LayerKind::relu, {y});
                y = b.conv(p + "conv2", y, out, out, 3, 1, 1);
                y = b.bn(p + "bn2", y, out);
            }
            std::string skip = in;
            if (stride != 1 || channels != out) {
                skip = b.conv(p + "downsample", in, channels, out, 1, stride, 0);
                skip = b.bn(p + "downsample_bn", skip, out);
            }
            y = b.simple(p + "add", LayerKind::residual_add, {y, skip});
            x = b.simple(p + "relu_out", LayerKind::relu, {y});
            channels = out;
        }
    }
    x = b.simple("pool", LayerKind::global_avg_pool, {x});
    LayerSpec head{"head.fc", LayerKind::linear, {}, cfg.linear_init, cfg.bias_init, {x}};
    head.hyper.in_features = channels;
    head.hyper.out_features = cfg.num_classes;
    head.hyper.bias = cfg.head_bias;
    g.add_layer(std::move(head));

    g.validate();
    g.initialize(seed);
    return g;
}

ModelGraph build_linear_model(Shape input_shape, int num_classes, std::uint64_t seed, DType dtype) {
    ModelGraph g(std::move(input_shape), num_classes, dtype);
    g.set_name("linear");
    LayerSpec head{"head.fc", LayerKind::linear, {}, InitSpec::kaiming_normal(FanMode::fan_out), InitSpec::zeros(),
                   {std::string(kInputId)}};
    head.hyper.out_features = num_classes;
    head.hyper.bias = true;
    g.add_layer(std::move(head));
    g.validate();
    g.initialize(seed);
    return g;
}

// --- execution ------------------------------------------------------------

namespace {

void check_batch(const ModelGraph& model, const Tensor& batch) {
    Shape expected{batch.rank() > 0 ? batch.dim(0) : 0};
    expected.insert(expected.end(), model.input_shape().begin(), model.input_shape().end());
    require(batch.rank() == expected.size() && batch.shape() == expected, ErrorKind::shape,
            "batch shape " + shape_string(batch.shape()) + " does not match model input " +
                shape_string(model.input_shape()));
    require(batch.dtype() == model.dtype(), ErrorKind::shape, "batch dtype does not match model dtype");
}

const Tensor* find_param(const ParamSet& set, const char* name) {
    auto it = set.find(name);
    return it == set.end() ? nullptr : &it->second;
}

// Overlay params are only consulted for learnable tensors; batchnorm running
// statistics always come from the base model.
const Tensor& param(const ParamSet& base, const ParamSet* overlay, const char* name) {
    if (overlay)
        if (const auto* t = find_param(*overlay, name)) return *t;
    return base.at(name);
}

const Tensor* optional_param(const ParamSet& base, const ParamSet* overlay, const char* name) {
    if (overlay)
        if (const auto* t = find_param(*overlay, name)) return t;
    return find_param(base, name);
}

struct Tape {
    std::vector<Tensor> acts;
    std::map<std::size_t, kernels::BatchNormTrainResult> bn;
};

kernels::MaxPool pool_mode(const LayerHyper& h) { return {h.kernel, h.stride, h.padding}; }

Tensor eval_layer(const ModelGraph& model, std::size_t i, const std::vector<const Tensor*>& xs,
                  const ParamSet* overlay, NormMode mode, Tape* tape) {
    const auto& spec = model.layers()[i];
    const auto& h = spec.hyper;
    const Tensor& x = *xs[0];
    switch (spec.kind) {
        case LayerKind::conv: {
            const auto& p = model.params(spec.id);
            return kernels::conv2d(x, param(p, overlay, "weight"), optional_param(p, overlay, "bias"),
                                   {h.stride, h.padding});
        }
        case LayerKind::linear: {
            const auto& p = model.params(spec.id);
            return kernels::linear(x, param(p, overlay, "weight"), optional_param(p, overlay, "bias"));
        }
        case LayerKind::batchnorm: {
            const auto& p = model.params(spec.id);
            if (mode == NormMode::batch_stats) {
                auto r = kernels::batchnorm_train(x, param(p, overlay, "gamma"), param(p, overlay, "beta"), h.eps);
                Tensor out = r.output;
                if (tape) tape->bn.emplace(i, std::move(r));
                return out;
            }
            return kernels::batchnorm_infer(x, param(p, overlay, "gamma"), param(p, overlay, "beta"),
                                            p.at("running_mean"), p.at("running_var"), h.eps);
        }
        case LayerKind::relu:
            return kernels::relu(x);
        case LayerKind::maxpool:
            return kernels::maxpool(x, pool_mode(h));
        case LayerKind::global_avg_pool:
            return kernels::global_avg_pool(x);
        case LayerKind::residual_add:
            return kernels::add(x, *xs[1]);
    }
    fail(ErrorKind::config, "unknown layer kind");
}

Tensor run(const ModelGraph& model, const Tensor& batch, const ParamOverlay* overlay, NormMode mode, Tape* tape) {
    check_batch(model, batch);
    const auto& layers = model.layers();
    require(!layers.empty(), ErrorKind::config, "model has no layers");
    const ParamSet* overlay_params = nullptr;
    std::size_t overlay_index = layers.size();
    if (overlay) {
        overlay_index = model.index_of(overlay->layer_id);
        overlay_params = &overlay->params;
        const auto& base = model.params(overlay->layer_id);
        for (const auto& [name, t] : overlay->params) {
            auto it = base.find(name);
            require(it != base.end(), ErrorKind::lookup, "overlay tensor '" + name + "' not in layer " + overlay->layer_id);
            require(it->second.shape() == t.shape() && it->second.dtype() == t.dtype(), ErrorKind::shape,
                    "overlay tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(it->second.shape()));
        }
    }

    std::vector<Tensor> local;
    std::vector<Tensor>& acts = tape ? tape->acts : local;
    acts.assign(layers.size(), Tensor{});
    // Remaining consumer counts let inference drop activations early.
    std::vector<int> remaining(layers.size(), 0);
    for (std::size_t i = 0; i < layers.size(); ++i)
        for (int src : model.input_indices(i))
            if (src >= 0) ++remaining[static_cast<std::size_t>(src)];

    std::vector<const Tensor*> xs;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        xs.clear();
        for (int src : model.input_indices(i)) xs.push_back(src < 0 ? &batch : &acts[static_cast<std::size_t>(src)]);
        acts[i] = eval_layer(model, i, xs, i == overlay_index ? overlay_params : nullptr, mode, tape);
        if (!tape)
            for (int src : model.input_indices(i))
                if (src >= 0 && --remaining[static_cast<std::size_t>(src)] == 0) acts[static_cast<std::size_t>(src)] = Tensor{};
    }
    return acts.back();
}

void accumulate(Tensor& slot, Tensor g) {
    if (slot.empty())
        slot = std::move(g);
    else
        slot = kernels::add(slot, g);
}

struct BnInferGrads {
    Tensor input, gamma, beta;
};

BnInferGrads batchnorm_infer_backward(const Tensor& x, const ParamSet& p, double eps, const Tensor& gy) {
    const std::int64_t n = x.dim(0), c = x.dim(1);
    const std::int64_t s = x.numel() / (n * c);
    BnInferGrads g{Tensor(x.shape(), x.dtype()), Tensor({c}, x.dtype()), Tensor({c}, x.dtype())};
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xd = x.data<T>();
        auto gyd = gy.data<T>();
        auto gx = g.input.data<T>();
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double mean = static_cast<double>(p.at("running_mean").data<T>()[ch]);
            const double denom = std::sqrt(static_cast<double>(p.at("running_var").data<T>()[ch]) + eps);
            const double gamma = static_cast<double>(p.at("gamma").data<T>()[ch]);
            double sg = 0.0, sgx = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const std::int64_t off = (i * c + ch) * s;
                for (std::int64_t q = 0; q < s; ++q) {
                    const double gv = static_cast<double>(gyd[off + q]);
                    sg += gv;
                    sgx += gv * (static_cast<double>(xd[off + q]) - mean) / denom;
                    gx[off + q] = static_cast<T>(gv * gamma / denom);
                }
            }
            g.gamma.data<T>()[ch] = static_cast<T>(sgx);
            g.beta.data<T>()[ch] = static_cast<T>(sg);
        }
    });
    return g;
}

}  // namespace

Tensor forward(const ModelGraph& model, const Tensor& batch, const ParamOverlay* overlay) {
    return run(model, batch, overlay, NormMode::running_stats, nullptr);
}

std::vector<std::string> randomizable_layers(const ModelGraph& model) {
    std::vector<std::string> ids;
    for (const auto& l : model.layers())
        if (l.randomizable()) ids.push_back(l.id);
    return ids;
}

ParamSet get_params(const ModelGraph& model, std::string_view layer_id) {
    model.index_of(layer_id);
    return model.params(layer_id);
}

void set_params(ModelGraph& model, std::string_view layer_id, const ParamSet& snapshot) {
    const auto& spec = model.layer(layer_id);
    auto& target = model.mutable_params(layer_id);
    // Validate everything before mutating so a failed set leaves the layer intact.
    for (const auto& [name, current] : target) {
        if (!is_learnable(spec.kind, name)) continue;
        auto it = snapshot.find(name);
        require(it != snapshot.end(), ErrorKind::lookup, "snapshot lacks '" + name + "' for layer " + spec.id);
        require(it->second.shape() == current.shape(), ErrorKind::shape,
                spec.id + "/" + name + ": shape " + shape_string(it->second.shape()) + " != " +
                    shape_string(current.shape()));
        require(it->second.dtype() == current.dtype(), ErrorKind::shape, spec.id + "/" + name + ": dtype mismatch");
    }
    for (auto& [name, current] : target)
        if (is_learnable(spec.kind, name)) current = snapshot.at(name);
}

BackwardResult backward(const ModelGraph& model, const Tensor& batch, std::span<const int> labels, NormMode mode) {
    Tape tape;
    BackwardResult result;
    result.logits = run(model, batch, nullptr, mode, &tape);
    auto ce = kernels::cross_entropy(result.logits, labels);
    result.loss = ce.loss;
    result.correct = ce.correct;

    const auto& layers = model.layers();
    std::vector<Tensor> grads(layers.size());
    grads.back() = std::move(ce.grad_logits);
    result.input_grad = Tensor{};

    auto route = [&](int src, Tensor g) {
        if (src < 0)
            accumulate(result.input_grad, std::move(g));
        else
            accumulate(grads[static_cast<std::size_t>(src)], std::move(g));
    };

    for (std::size_t k = layers.size(); k-- > 0;) {
        if (grads[k].empty()) continue;
        const auto& spec = layers[k];
        const auto& ins = model.input_indices(k);
        const Tensor& x = ins[0] < 0 ? batch : tape.acts[static_cast<std::size_t>(ins[0])];
        const Tensor& gy = grads[k];
        switch (spec.kind) {
            case LayerKind::conv: {
                const auto& p = model.params(spec.id);
                auto g = kernels::conv2d_backward(x, p.at("weight"), p.contains("bias"), gy,
                                                  {spec.hyper.stride, spec.hyper.padding});
                auto& out = result.grads[spec.id];
                out["weight"] = std::move(g.weight);
                if (g.bias) out["bias"] = std::move(*g.bias);
                route(ins[0], std::move(g.input));
                break;
            }
            case LayerKind::linear: {
                const auto& p = model.params(spec.id);
                auto g = kernels::linear_backward(x, p.at("weight"), p.contains("bias"), gy);
                auto& out = result.grads[spec.id];
                out["weight"] = std::move(g.weight);
                if (g.bias) out["bias"] = std::move(*g.bias);
                route(ins[0], std::move(g.input));
                break;
            }
            case LayerKind::batchnorm: {
                const auto& p = model.params(spec.id);
                auto& out = result.grads[spec.id];
                if (mode == NormMode::batch_stats) {
                    const auto& fwd = tape.bn.at(k);
                    auto g = kernels::batchnorm_train_backward(x, p.at("gamma"), fwd, gy);
                    out["gamma"] = std::move(g.gamma);
                    out["beta"] = std::move(g.beta);
                    route(ins[0], std::move(g.input));
                } else {
                    auto g = batchnorm_infer_backward(x, p, spec.hyper.eps, gy);
                    out["gamma"] = std::move(g.gamma);
                    out["beta"] = std::move(g.beta);
                    route(ins[0], std::move(g.input));
                }
                break;
            }
            case LayerKind::relu:
                route(ins[0], kernels::relu_backward(tape.acts[k], gy));
                break;
            case LayerKind::maxpool:
                route(ins[0], kernels::maxpool_backward(x, pool_mode(spec.hyper), gy));
                break;
            case LayerKind::global_avg_pool:
                route(ins[0], kernels::global_avg_pool_backward(x.shape(), gy));
                break;
            case LayerKind::residual_add:
                route(ins[0], gy);
                route(ins[1], gy);
                break;
        }
        grads[k] = Tensor{};
    }
    if (result.input_grad.empty()) result.input_grad = Tensor(batch.shape(), batch.dtype());

    for (const auto& [idx, r] : tape.bn)
        result.batch_stats[layers[idx].id] = BatchStats{r.mean, r.var, r.count};
    return result;
}

void update_running_stats(ModelGraph& model, const std::map<std::string, BatchStats>& stats) {
    for (const auto& [id, s] : stats) {
        const auto& spec = model.layer(id);
        require(spec.kind == LayerKind::batchnorm, ErrorKind::lookup, id + " is not a batchnorm layer");
        auto& p = model.mutable_params(id);
        const double m = spec.hyper.momentum;
        const double unbias = s.count > 1 ? static_cast<double>(s.count) / static_cast<double>(s.count - 1) : 1.0;
        auto& rm = p.at("running_mean");
        auto& rv = p.at("running_var");
        for (std::int64_t c = 0; c < rm.numel(); ++c) {
            rm.set(c, (1.0 - m) * rm.at(c) + m * s.mean[c]);
            rv.set(c, (1.0 - m) * rv.at(c) + m * s.var[c] * unbias);
        }
    }
}

}  // namespace critmap
