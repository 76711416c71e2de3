#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>

#include "critmap/tensor.hpp"

// Forward and backward numeric kernels. All kernels are pure: they read their
// inputs and return freshly allocated outputs. Inputs of a single call must
// share one dtype. Sums are accumulated in double regardless of dtype, and each
// sample of a batch is computed independently of the others, so results do not
// depend on how samples are grouped into batches.

namespace critmap::kernels {

struct Conv2dParams {
    int stride = 1;
    int padding = 0;
};

/// Output spatial extent of a strided window, or shape error if it does not fit.
std::int64_t window_extent(std::int64_t size, std::int64_t kernel, int stride, int padding);

/// Cross-correlation with zero padding. input [N,C,H,W], weight [K,C,kh,kw], bias [K].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, Conv2dParams params);

struct Conv2dGrads {
    Tensor input;
    Tensor weight;
    std::optional<Tensor> bias;
};
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias, const Tensor& grad_out,
                            Conv2dParams params);

/// Inference-mode normalization over axis 1 using running statistics.
Tensor batchnorm_infer(const Tensor& input, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                       const Tensor& running_var, double eps);

struct BatchNormTrainResult {
    Tensor output;
    std::vector<double> mean;     // per channel, over batch and spatial axes
    std::vector<double> var;      // biased variance
    std::vector<double> inv_std;  // 1 / sqrt(var + eps)
    std::int64_t count = 0;       // elements per channel
};
/// Training-mode normalization using the statistics of this batch.
BatchNormTrainResult batchnorm_train(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps);

struct BatchNormGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};
BatchNormGrads batchnorm_train_backward(const Tensor& input, const Tensor& gamma, const BatchNormTrainResult& fwd,
                                        const Tensor& grad_out);

struct Relu {};
struct MaxPool {
    int kernel = 2;
    int stride = 2;
    int padding = 0;
};
struct GlobalAvgPool {};
using PoolMode = std::variant<Relu, MaxPool, GlobalAvgPool>;

Tensor relu(const Tensor& input);
Tensor maxpool(const Tensor& input, const MaxPool& mode);
/// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& input);
Tensor activation_pool(const Tensor& input, const PoolMode& mode);

Tensor relu_backward(const Tensor& output, const Tensor& grad_out);
Tensor maxpool_backward(const Tensor& input, const MaxPool& mode, const Tensor& grad_out);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

/// x W^T + b. Inputs of rank > 2 are flattened to [N, F] first.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor* bias);

struct LinearGrads {
    Tensor input;  // same shape as the original input
    Tensor weight;
    std::optional<Tensor> bias;
};
LinearGrads linear_backward(const Tensor& input, const Tensor& weight, bool has_bias, const Tensor& grad_out);

Tensor add(const Tensor& a, const Tensor& b);

/// Row-wise softmax over [N,C] with max subtraction.
Tensor softmax(const Tensor& logits);

struct CrossEntropy {
    double loss = 0.0;     // mean over the batch
    Tensor grad_logits;    // (softmax - onehot) / N
    std::int64_t correct = 0;
};
CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Index of the largest entry in each row of [N,C]; first index wins ties.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace critmap::kernels
