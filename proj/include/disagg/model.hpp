#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "disagg/dataio.hpp"
#include "disagg/nncore.hpp"

namespace disagg {

enum class Activation { lrelu, logsg };

/// One convolutional layer of the network: CONV -> BN -> activation -> GN,
/// with an optional pooling step after it or un-pooling step before it
/// (never both).
struct LayerSpec {
    int out_channels = 1;
    int kernel_size = 3;
    int dilation = 1;
    Activation activation = Activation::lrelu;
    bool has_bn = true;
    bool has_gn = true;
    int pool_after = 1;
    int unpool_before = 1;
};

/// Channel-concatenation link from an encoder block output (pre-pool) to a
/// decoder block input (post-unpool).
struct OuterSkip {
    int encoder_block = 0;
    int decoder_block = 0;
};

/// Channel-concatenation link between representation layers: the input of
/// layer `from_layer` is concatenated onto the input of layer `to_layer`.
struct InnerSkip {
    int from_layer = 0;
    int to_layer = 0;
};

enum class Part { encoder, decoder };

/// Element-wise addition of a block's first-layer output onto its
/// last-layer output; requires equal channel counts.
struct ResidualLink {
    Part part = Part::encoder;
    int block = 0;
};

struct ModelConfig {
    int window = 512;
    LayerSpec input_layer;
    std::vector<std::vector<LayerSpec>> encoder_blocks;
    std::vector<LayerSpec> representation_layers;
    std::vector<std::vector<LayerSpec>> decoder_blocks;
    std::vector<OuterSkip> outer_skips;
    std::vector<InnerSkip> inner_skips;
    std::vector<ResidualLink> residuals;
    int output_kernel = 1;
    bool first_hidden_sigmoid = true;
    double lrelu_alpha = 0.01;
    double gn_sigma = 0.05;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.99;

    /// Small encoder-decoder: 4 encoder blocks x 2 layers, base width 16
    /// doubling per block, kernel 3, dilations cycling 1,2,4,8, pooling 2
    /// per block, 2 representation layers, mirrored decoder.
    static ModelConfig desk_preset(int window = 512);

    /// Full-size network: 46 conv layers in five parts, ~41M trainable
    /// parameters, pooling factors 2,2,2,2,3 so the default 3-hour window
    /// at 1 Hz divides evenly.
    static ModelConfig paper_preset(int window = 10800);

    static ModelConfig preset(const std::string& name, int window = 0);
};

std::string config_to_kv(const ModelConfig& cfg);
ModelConfig config_from_kv(const std::string& text);

/// Trainable parameter count (conv kernels and biases, BN gamma and beta)
/// computed by shape propagation only; validates the whole layer graph.
size_t count_trainable_parameters(const ModelConfig& cfg);

/// Glorot uniform tensor: i.i.d. on [-L, L] with L = sqrt(6/(fan_in+fan_out)).
template <typename T>
Tensor3<T> init_glorot(int fan_out_channels, int fan_in_channels,
                       int kernel_size, Rng& rng);

struct TrainMeta {
    long long epoch = 0;
    uint64_t seed = 0;
    std::vector<double> loss_history;
};

namespace detail {

struct GraphNode {
    enum class Kind { input, conv, bn, act, gn, pool, unpool, concat, add };
    Kind kind = Kind::input;
    int in0 = -1;
    int in1 = -1;
    int param = -1;   // conv/bn parameter slot
    int aux = -1;     // pool cache slot
    int factor = 1;   // pool/unpool
    Activation act = Activation::lrelu;
    int channels = 0;  // static output shape
    int length = 0;
    std::string name;
};

struct Graph {
    std::vector<GraphNode> nodes;
    // static shapes of the parameter tensors, in creation order
    struct ConvShape { int out_ch, in_ch, k, dilation; std::string name; };
    struct BnShape { int channels; std::string name; };
    std::vector<ConvShape> convs;
    std::vector<BnShape> bns;
    int pool_slots = 0;
};

Graph compile_graph(const ModelConfig& cfg);

}  // namespace detail

template <typename T>
class Model {
  public:
    /// Builds and Glorot-initializes all parameters from the seed.
    static Model build(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    size_t parameter_count() const;  // trainable scalars

    /// x: (B, 1, window) standardized aggregate power. Returns the posterior
    /// (B, 1, window), every element in (0, 1). Train mode retains the
    /// intermediates needed by backward and injects activation noise.
    Tensor3<T> forward(const Tensor3<T>& x, Phase phase);

    /// Reverse traversal of the layer graph; gradients of fan-out points
    /// (skip/residual sources) accumulate over all consumers. Adds into the
    /// parameter gradient buffers (see zero_grad).
    void backward(const Tensor3<T>& grad_posterior);

    const Tensor3<T>& input_gradient() const;

    struct ParamView {
        std::string name;
        T* value;
        T* grad;
        size_t size;
    };
    std::vector<ParamView> trainable_params();
    void zero_grad();

    /// Decision rule on the posterior: state 1 iff posterior >= 0.5.
    ActivationProfile predict_profile(const Tensor3<T>& x_window);

    /// Value snapshot of every tensor (parameters and running statistics).
    std::vector<std::vector<T>> save_state() const;
    void load_state(const std::vector<std::vector<T>>& state);

    void save_checkpoint(const std::string& path,
                         const std::map<std::string, std::vector<T>>& extra = {}) const;
    static Model load_checkpoint(const std::string& path,
                                 std::map<std::string, std::vector<T>>* extra = nullptr,
                                 const ModelConfig* expected = nullptr);

    void reseed_noise(uint64_t seed) { rng_ = Rng(seed); }

    // Input standardization constants, fitted on the training fold and
    // persisted with the checkpoint.
    double input_mean = 0.0;
    double input_std = 1.0;
    bool has_standardizer = false;

    TrainMeta meta;

  private:
    Model() : rng_(0) {}

    struct ConvLayer {
        ConvParams<T> p;
        Tensor3<T> grad_kernel;
        std::vector<T> grad_bias;
        std::string name;
    };
    struct BnLayer {
        BatchNormParams<T> p;
        std::vector<T> grad_gamma;
        std::vector<T> grad_beta;
        BatchNormCache<T> cache;
        std::string name;
    };

    ModelConfig cfg_;
    detail::Graph graph_;
    std::vector<ConvLayer> convs_;
    std::vector<BnLayer> bns_;
    std::vector<PoolIndices> pool_caches_;
    Rng rng_;

    // forward context
    std::vector<Tensor3<T>> node_out_;
    std::vector<Tensor3<T>> node_grad_;
    bool have_forward_ = false;
    Phase forward_phase_ = Phase::infer;

    void allocate_params(uint64_t seed);
    Tensor3<T>& grad_buf(int node);
};

}  // namespace disagg
