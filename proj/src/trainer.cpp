#include "critmap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "critmap/criticality.hpp"

namespace critmap {

std::string_view to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::standard: return "standard";
        case TrainMode::adversarial: return "adversarial";
        case TrainMode::augmented: return "augmented";
    }
    return "unknown";
}

std::string_view to_string(Norm norm) { return norm == Norm::linf ? "linf" : "l2"; }

TrainMode train_mode_from_string(std::string_view name) {
    if (name == "standard") return TrainMode::standard;
    if (name == "adversarial" || name == "adv") return TrainMode::adversarial;
    if (name == "augmented" || name == "aug") return TrainMode::augmented;
    fail(ErrorKind::parameter, "unknown training mode '" + std::string(name) + "'");
}

Norm norm_from_string(std::string_view name) {
    if (name == "linf") return Norm::linf;
    if (name == "l2") return Norm::l2;
    fail(ErrorKind::parameter, "unsupported norm '" + std::string(name) + "'");
}

void PgdConfig::validate() const {
    require(std::isfinite(eps) && eps >= 0.0, ErrorKind::parameter, "pgd: eps must be >= 0");
    require(steps >= 1, ErrorKind::parameter, "pgd: steps must be >= 1");
    require(norm == Norm::linf || norm == Norm::l2, ErrorKind::parameter, "pgd: unsupported norm");
    if (alpha) require(*alpha > 0.0 && std::isfinite(*alpha), ErrorKind::parameter, "pgd: alpha must be > 0");
}

void TrainConfig::validate() const {
    require(epochs >= 0, ErrorKind::parameter, "epochs must be >= 0");
    require(batch_size >= 1, ErrorKind::parameter, "batch_size must be >= 1");
    require(lr >= 0.0 && momentum >= 0.0 && weight_decay >= 0.0, ErrorKind::parameter,
            "lr, momentum and weight_decay must be non-negative");
    require(lr_step >= 0 && lr_gamma > 0.0, ErrorKind::parameter, "invalid lr schedule");
    require(augment.noise_sigma >= 0.0 && augment.flip_prob >= 0.0 && augment.flip_prob <= 1.0 && augment.crop_pad >= 0,
            ErrorKind::parameter, "invalid augmentation settings");
    if (mode == TrainMode::adversarial) pgd.validate();
}

// --- PGD --------------------------------------------------------------------

namespace {

// Largest float in [lo, hi] closest to v (v already clamped in double).
float round_into(double v, double lo, double hi) {
    float f = static_cast<float>(v);
    while (static_cast<double>(f) > hi) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
    while (static_cast<double>(f) < lo) f = std::nextafter(f, std::numeric_limits<float>::infinity());
    return f;
}

template <typename T>
T store(double v, double lo, double hi) {
    if constexpr (std::is_same_v<T, float>)
        return round_into(v, lo, hi);
    else
        return std::clamp(v, lo, hi);
}

template <typename T>
double l2_distance(const T* a, const T* b, std::int64_t n) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

// Writes clamp(x + delta, 0, 1) into out, shrinking delta until the stored
// result is within the l2 ball of radius eps after rounding.
template <typename T>
void write_l2(const T* x, std::vector<double>& delta, double eps, T* out) {
    const auto n = static_cast<std::int64_t>(delta.size());
    double norm = 0.0;
    for (double d : delta) norm += d * d;
    norm = std::sqrt(norm);
    if (norm > eps) {
        const double s = eps / norm;
        for (double& d : delta) d *= s;
    }
    for (int attempt = 0; attempt < 64; ++attempt) {
        for (std::int64_t i = 0; i < n; ++i)
            out[i] = store<T>(std::clamp(static_cast<double>(x[i]) + delta[i], 0.0, 1.0), 0.0, 1.0);
        const double got = l2_distance(out, x, n);
        if (got <= eps) return;
        const double s = eps / got * (1.0 - 1e-6);
        for (double& d : delta) d *= s;
    }
    std::copy(x, x + n, out);
}

}  // namespace

Tensor pgd_attack(const ModelGraph& model, const Tensor& x, std::span<const int> labels, const PgdConfig& config,
                  Rng& rng, NormMode mode) {
    config.validate();
    require(x.rank() >= 2, ErrorKind::shape, "pgd: input must be batched");
    if (config.eps == 0.0) return x;

    const double eps = config.eps;
    const double alpha = config.step_size();
    const std::int64_t n = x.dim(0);
    const std::int64_t per = x.numel() / n;
    Tensor adv = x;

    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xd = x.data<T>();
        auto ad = adv.data<T>();
        std::vector<double> delta(static_cast<std::size_t>(per));

        auto project_linf = [&](std::int64_t i, double candidate) {
            const double xi = static_cast<double>(xd[i]);
            const double lo = std::max(xi - eps, 0.0), hi = std::min(xi + eps, 1.0);
            ad[i] = store<T>(std::clamp(candidate, lo, hi), lo, hi);
        };

        if (config.random_start) {
            if (config.norm == Norm::linf) {
                for (std::int64_t i = 0; i < x.numel(); ++i)
                    project_linf(i, static_cast<double>(xd[i]) + rng.uniform(-eps, eps));
            } else {
                for (std::int64_t s = 0; s < n; ++s) {
                    double norm = 0.0;
                    for (auto& d : delta) {
                        d = rng.normal();
                        norm += d * d;
                    }
                    norm = std::sqrt(norm);
                    const double radius = eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(per));
                    for (auto& d : delta) d = norm > 0.0 ? d / norm * radius : 0.0;
                    write_l2<T>(xd.data() + s * per, delta, eps, ad.data() + s * per);
                }
            }
        }

        for (int step = 0; step < config.steps; ++step) {
            const auto result = backward(model, adv, labels, mode);
            auto g = result.input_grad.data<T>();
            if (config.norm == Norm::linf) {
                for (std::int64_t i = 0; i < x.numel(); ++i) {
                    const double gi = static_cast<double>(g[i]);
                    const double sign = gi > 0.0 ? 1.0 : (gi < 0.0 ? -1.0 : 0.0);
                    project_linf(i, static_cast<double>(ad[i]) + alpha * sign);
                }
                continue;
            }
            for (std::int64_t s = 0; s < n; ++s) {
                const T* gs = g.data() + s * per;
                double gnorm = 0.0;
                for (std::int64_t i = 0; i < per; ++i) gnorm += static_cast<double>(gs[i]) * static_cast<double>(gs[i]);
                gnorm = std::sqrt(gnorm);
                if (gnorm == 0.0) continue;
                for (std::int64_t i = 0; i < per; ++i) {
                    const std::int64_t k = s * per + i;
                    delta[static_cast<std::size_t>(i)] = static_cast<double>(ad[k]) + alpha * static_cast<double>(gs[i]) / gnorm -
                                                         static_cast<double>(xd[k]);
                }
                write_l2<T>(xd.data() + s * per, delta, eps, ad.data() + s * per);
            }
        }
    });
    return adv;
}

// --- augmentation -------------------------------------------------------------

Tensor flip_horizontal(const Tensor& batch) {
    require(batch.rank() == 4, ErrorKind::shape, "flip expects [N,C,H,W]");
    Tensor out(batch.shape(), batch.dtype());
    const std::int64_t w = batch.dim(3);
    const std::int64_t rows = batch.numel() / w;
    dispatch(batch.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = batch.data<T>();
        auto dst = out.data<T>();
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < w; ++j) dst[r * w + j] = src[r * w + (w - 1 - j)];
    });
    return out;
}

Tensor augment(const Tensor& batch, const AugmentConfig& config, Rng& rng) {
    require(batch.rank() == 4, ErrorKind::shape, "augment expects [N,C,H,W]");
    if (!config.any()) return batch;
    const std::int64_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Tensor out = batch;
    dispatch(batch.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = batch.data<T>();
        auto dst = out.data<T>();
        const std::int64_t per = c * h * w;
        for (std::int64_t s = 0; s < n; ++s) {
            const T* in = src.data() + s * per;
            T* o = dst.data() + s * per;
            std::int64_t dy = 0, dx = 0;
            if (config.crop_pad > 0) {
                const auto span = static_cast<std::uint64_t>(2 * config.crop_pad + 1);
                dy = static_cast<std::int64_t>(rng.below(span)) - config.crop_pad;
                dx = static_cast<std::int64_t>(rng.below(span)) - config.crop_pad;
            }
            const bool flip = config.flip_prob > 0.0 && rng.uniform() < config.flip_prob;
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t x = 0; x < w; ++x) {
                        const std::int64_t sy = y + dy;
                        const std::int64_t sx0 = x + dx;
                        const std::int64_t sx = flip ? (w - 1 - sx0) : sx0;
                        const bool inside = sy >= 0 && sy < h && sx0 >= 0 && sx0 < w;
                        o[(ch * h + y) * w + x] = inside ? in[(ch * h + sy) * w + sx] : T(0);
                    }
            if (config.noise_sigma > 0.0)
                for (std::int64_t i = 0; i < per; ++i)
                    o[i] = static_cast<T>(std::clamp(static_cast<double>(o[i]) + rng.normal(0.0, config.noise_sigma), 0.0, 1.0));
        }
    });
    return out;
}

// --- training -----------------------------------------------------------------

namespace {

struct SgdState {
    std::map<std::string, std::vector<double>> velocity;
};

bool decays(LayerKind kind, const std::string& name) {
    return (kind == LayerKind::conv || kind == LayerKind::linear) && name == "weight";
}

void sgd_step(ModelGraph& model, const std::map<std::string, ParamSet>& grads, const TrainConfig& cfg, double lr,
              SgdState& state) {
    for (const auto& [id, set] : grads) {
        const auto kind = model.layer(id).kind;
        auto& params = model.mutable_params(id);
        for (const auto& [name, g] : set) {
            Tensor& p = params.at(name);
            auto& v = state.velocity[id + "/" + name];
            if (v.empty()) v.assign(static_cast<std::size_t>(p.numel()), 0.0);
            const double wd = decays(kind, name) ? cfg.weight_decay : 0.0;
            dispatch(p.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto pd = p.data<T>();
                auto gd = g.data<T>();
                for (std::size_t i = 0; i < v.size(); ++i) {
                    const double grad = static_cast<double>(gd[i]) + wd * static_cast<double>(pd[i]);
                    v[i] = cfg.momentum * v[i] + grad;
                    pd[i] = static_cast<T>(static_cast<double>(pd[i]) - lr * v[i]);
                }
            });
        }
    }
}

std::vector<std::int64_t> epoch_order(std::int64_t n, std::uint64_t seed, int epoch) {
    return subsample(n, n, mix(mix(seed, hash64("shuffle")), static_cast<std::uint64_t>(epoch)));
}

}  // namespace

TrainResult train(ModelGraph model, const Dataset& data, const TrainConfig& config) {
    config.validate();
    data.validate();
    require(data.size() >= 1, ErrorKind::parameter, "training set is empty");
    require(data.sample_shape() == model.input_shape(), ErrorKind::shape,
            "dataset samples " + shape_string(data.sample_shape()) + " do not match model input " +
                shape_string(model.input_shape()));
    require(data.num_classes == model.num_classes(), ErrorKind::parameter, "dataset/model class count mismatch");

    TrainResult result;
    SgdState state;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double lr = config.lr;
        if (config.lr_step > 0) lr *= std::pow(config.lr_gamma, epoch / config.lr_step);
        const auto order = epoch_order(data.size(), config.seed, epoch);
        double loss_sum = 0.0;
        std::int64_t correct = 0;
        std::uint64_t batch_index = 0;
        for (std::int64_t begin = 0; begin < data.size(); begin += config.batch_size, ++batch_index) {
            const std::int64_t end = std::min<std::int64_t>(begin + config.batch_size, data.size());
            const Dataset batch = gather(data, std::span(order).subspan(begin, end - begin));
            Tensor x = model.dtype() == DType::f32 ? batch.images : batch.images.to(model.dtype());
            const std::uint64_t batch_seed =
                mix(mix(config.seed, static_cast<std::uint64_t>(epoch)), batch_index);
            if (config.mode == TrainMode::augmented) {
                Rng rng(mix(batch_seed, hash64("augment")));
                x = augment(x, config.augment, rng);
            } else if (config.mode == TrainMode::adversarial) {
                Rng rng(mix(batch_seed, hash64("pgd")));
                x = pgd_attack(model, x, batch.labels, config.pgd, rng, NormMode::batch_stats);
            }
            auto step = backward(model, x, batch.labels, NormMode::batch_stats);
            if (!std::isfinite(step.loss))
                fail(ErrorKind::training, "non-finite loss in epoch " + std::to_string(epoch + 1));
            update_running_stats(model, step.batch_stats);
            sgd_step(model, step.grads, config, lr, state);
            loss_sum += step.loss * static_cast<double>(end - begin);
            correct += step.correct;
        }
        result.log.push_back({epoch + 1, "train", loss_sum / static_cast<double>(data.size()),
                              static_cast<double>(correct) / static_cast<double>(data.size())});
    }
    result.model = std::move(model);
    return result;
}

TrainResult train_adversarial(ModelGraph model, const Dataset& data, const TrainConfig& config) {
    require(config.mode == TrainMode::adversarial, ErrorKind::parameter, "train_adversarial needs adversarial mode");
    return train(std::move(model), data, config);
}

double evaluate_accuracy(const ModelGraph& model, const Dataset& data, int batch_size) {
    const auto p = predict(model, data, batch_size);
    return static_cast<double>(p.correct) / static_cast<double>(data.size());
}

double robust_accuracy(const ModelGraph& model, const Dataset& data, const PgdConfig& attack, std::uint64_t seed,
                       int batch_size) {
    require(data.size() >= 1, ErrorKind::parameter, "empty dataset");
    std::int64_t correct = 0;
    std::uint64_t b = 0;
    for (std::int64_t begin = 0; begin < data.size(); begin += batch_size, ++b) {
        const std::int64_t end = std::min<std::int64_t>(begin + batch_size, data.size());
        Tensor x = slice_images(data, begin, end);
        if (model.dtype() != DType::f32) x = x.to(model.dtype());
        std::span<const int> y(data.labels.data() + begin, static_cast<std::size_t>(end - begin));
        Rng rng(mix(seed, b));
        const Tensor adv = pgd_attack(model, x, y, attack, rng, NormMode::running_stats);
        const auto pred = kernels::argmax_rows(forward(model, adv));
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace critmap
