#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "critmap/init.hpp"
#include "critmap/kernels.hpp"
#include "critmap/tensor.hpp"

namespace critmap {

/// Kind-specific hyperparameters. Only the fields relevant to a layer's kind are
/// meaningful; the rest stay at their defaults.
struct LayerHyper {
    std::int64_t in_channels = 0;  // conv, batchnorm (channels)
    std::int64_t out_channels = 0;  // conv
    int kernel = 1;                 // conv, maxpool
    int stride = 1;                 // conv, maxpool
    int padding = 0;                // conv, maxpool
    std::int64_t in_features = 0;   // linear
    std::int64_t out_features = 0;  // linear
    bool bias = false;              // conv, linear
    double eps = 1e-5;              // batchnorm
    double momentum = 0.1;          // batchnorm running-stat update

    bool operator==(const LayerHyper&) const = default;
};

struct LayerSpec {
    std::string id;
    LayerKind kind = LayerKind::relu;
    LayerHyper hyper;
    InitSpec weight_init = InitSpec::kaiming_normal();  // batchnorm: gamma
    InitSpec bias_init = InitSpec::zeros();             // batchnorm: beta
    std::vector<std::string> inputs;

    bool parameterized() const {
        return kind == LayerKind::conv || kind == LayerKind::linear || kind == LayerKind::batchnorm;
    }
    bool randomizable() const { return kind == LayerKind::conv || kind == LayerKind::linear; }
};

/// Named tensors of one layer: weight, bias, gamma, beta, running_mean, running_var.
using ParamSet = std::map<std::string, Tensor>;

/// Replacement parameters for a single layer, applied on top of a read-only model.
struct ParamOverlay {
    std::string layer_id;
    ParamSet params;
};

/// Id of the graph input, usable in LayerSpec::inputs.
inline constexpr std::string_view kInputId = "input";

class ModelGraph {
public:
    ModelGraph() = default;
    ModelGraph(Shape input_shape, int num_classes, DType dtype = DType::f32);

    /// Appends a layer after validating it against the layers added so far and
    /// allocates zero-filled parameters of the inferred shapes.
    void add_layer(LayerSpec spec);

    /// Draws every parameter from its layer's InitSpec using
    /// Rng(mix(seed, hash64(layer id))), weight first then bias. Batchnorm
    /// running statistics are reset to mean 0, variance 1.
    void initialize(std::uint64_t seed);

    /// Checks the single-output and head-shape invariants.
    void validate() const;

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    const LayerSpec& layer(std::string_view id) const;
    std::size_t index_of(std::string_view id) const;
    bool contains(std::string_view id) const;

    const ParamSet& params(std::string_view id) const;
    ParamSet& mutable_params(std::string_view id);

    /// Per-sample output shape of a layer (without the batch axis).
    const Shape& output_shape(std::size_t index) const { return out_shapes_.at(index); }
    /// Layer indices feeding layer `index`; -1 denotes the model input.
    const std::vector<int>& input_indices(std::size_t index) const { return input_index_.at(index); }

    const Shape& input_shape() const noexcept { return input_shape_; }
    int num_classes() const noexcept { return num_classes_; }
    DType dtype() const noexcept { return dtype_; }

    const std::string& name() const noexcept { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }

    ModelGraph to(DType dtype) const;

private:
    Shape infer_output(const LayerSpec& spec, const std::vector<Shape>& in_shapes) const;
    std::map<std::string, Shape> param_shapes(const LayerSpec& spec) const;

    Shape input_shape_;
    int num_classes_ = 0;
    DType dtype_ = DType::f32;
    std::string name_ = "model";
    std::vector<LayerSpec> layers_;
    std::vector<Shape> out_shapes_;
    std::vector<std::vector<int>> input_index_;
    std::map<std::string, std::size_t, std::less<>> index_;
    std::map<std::string, ParamSet, std::less<>> params_;
};

// --- architecture ---------------------------------------------------------

enum class BlockKind { bottleneck, basic };

struct StageConfig {
    int blocks = 2;
    int width = 4;   // bottleneck inner width; output is width * expansion
    int stride = 1;  // stride of the first block
};

/// ResNet-style topology: conv stem, residual stages, global pooling, linear head.
struct ArchConfig {
    Shape input_shape{3, 16, 16};
    int num_classes = 4;
    int stem_channels = 8;
    int stem_kernel = 3;
    int stem_stride = 1;
    bool stem_pool = true;  // 3x3 stride-2 max pool after the stem
    BlockKind block = BlockKind::bottleneck;
    int expansion = 4;
    std::vector<StageConfig> stages{{2, 4, 1}, {2, 8, 2}};
    bool conv_bias = false;
    bool head_bias = true;
    InitSpec conv_init = InitSpec::kaiming_normal(FanMode::fan_out);
    InitSpec linear_init = InitSpec::kaiming_normal(FanMode::fan_out);
    InitSpec bias_init = InitSpec::zeros();
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    DType dtype = DType::f32;
};

/// Stem 3->8, two bottleneck stages of two blocks, 4 classes, 3x16x16 input.
ArchConfig mini_resnet_config();

ModelGraph build_model(const ArchConfig& config, std::uint64_t seed);

/// A single linear layer "head.fc" over the flattened input.
ModelGraph build_linear_model(Shape input_shape, int num_classes, std::uint64_t seed, DType dtype = DType::f32);

// --- execution ------------------------------------------------------------

/// Inference-mode forward pass (batchnorm uses running statistics).
Tensor forward(const ModelGraph& model, const Tensor& batch, const ParamOverlay* overlay = nullptr);

/// Conv and linear layer ids in topological order.
std::vector<std::string> randomizable_layers(const ModelGraph& model);

/// Fresh learnable tensors for one conv/linear/batchnorm layer drawn from its
/// InitSpecs: weight then bias (batchnorm: gamma then beta).
ParamSet sample_layer_params(const ModelGraph& model, std::string_view layer_id, Rng& rng);

/// Deep copy of all tensors of a parameterized layer.
ParamSet get_params(const ModelGraph& model, std::string_view layer_id);

/// Replaces the learnable tensors of one layer (batchnorm: gamma and beta only).
void set_params(ModelGraph& model, std::string_view layer_id, const ParamSet& snapshot);

enum class NormMode {
    batch_stats,    // training: normalize with the statistics of the current batch
    running_stats,  // inference: normalize with stored running statistics
};

struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;  // biased
    std::int64_t count = 0;
};

struct BackwardResult {
    double loss = 0.0;  // mean cross-entropy
    std::int64_t correct = 0;
    Tensor logits;
    std::map<std::string, ParamSet> grads;  // learnable tensors only
    Tensor input_grad;
    std::map<std::string, BatchStats> batch_stats;  // filled in batch_stats mode
};

/// Exact reverse-mode gradients of the mean cross-entropy for every learnable
/// parameter and for the input batch.
BackwardResult backward(const ModelGraph& model, const Tensor& batch, std::span<const int> labels,
                        NormMode mode = NormMode::batch_stats);

/// Applies a momentum update of batchnorm running statistics from a training batch:
/// running = (1 - momentum) * running + momentum * batch, with the unbiased batch variance.
void update_running_stats(ModelGraph& model, const std::map<std::string, BatchStats>& stats);

}  // namespace critmap
