#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "diffbench/core.hpp"

namespace diffbench::nn {

// ---------------------------------------------------------------------------
// Layer descriptors. A Network is an ordered list of these plus one flat
// parameter vector; param_layout maps each layer to its slice.
// ---------------------------------------------------------------------------

enum class Activation { relu, silu, sigmoid };

struct Dense {
    size_t in = 0, out = 0;
};
struct Conv {
    size_t in_ch = 0, out_ch = 0, kernel = 3, stride = 1;  // 'same' zero padding
};
struct Act {
    Activation fn = Activation::relu;
};
struct Dropout {
    double rate = 0.0;  // inverted dropout; identity in eval mode
};
struct Flatten {};
// Per-sample, per-channel standardization over the spatial extent. No
// learned parameters; identical in train and eval mode.
struct ChannelNorm {};
struct GlobalAvgPool {};

using LayerSpec = std::variant<Dense, Conv, Act, Dropout, Flatten, ChannelNorm, GlobalAvgPool>;

std::string layer_name(const LayerSpec& spec);

enum class Mode { train, eval };

// Cached intermediates from one forward pass; required by backward().
struct ForwardTrace {
    bool valid = false;
    Mode mode = Mode::eval;
    std::vector<ImageBatch> layer_inputs;          // input to each layer
    std::vector<std::vector<double>> dropout_masks;  // per layer; empty unless dropout
};

struct Gradients {
    std::vector<double> params;
    ImageBatch input;
};

class Network {
public:
    Network() = default;
    Network(Shape3 input_shape, std::vector<LayerSpec> layers);

    // He-scaled weights, zero biases; consumes the generator sequentially.
    void initialize(Rng& rng);

    size_t param_count() const { return params_.size(); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    const std::vector<LayerSpec>& layers() const { return layers_; }
    Shape3 input_shape() const { return input_shape_; }
    Shape3 output_shape() const { return shapes_.back(); }
    Shape3 shape_after(size_t layer) const { return shapes_[layer + 1]; }

    size_t layer_offset(size_t i) const { return offsets_[i]; }
    size_t layer_param_count(size_t i) const;

    // Train mode needs rng when any dropout layer has rate > 0. Pass trace
    // to cache the intermediates required by backward().
    ImageBatch forward(const ImageBatch& input, Mode mode, Rng* rng = nullptr,
                       ForwardTrace* trace = nullptr) const;

    // Gradient of the scalar implied by upstream (dL/doutput) with respect
    // to the parameters and the network input.
    Gradients backward(const ForwardTrace& trace, const ImageBatch& upstream) const;

private:
    Shape3 input_shape_{};
    std::vector<LayerSpec> layers_;
    std::vector<Shape3> shapes_;   // shapes_[i] = input shape of layer i; back() = output
    std::vector<size_t> offsets_;  // param_layout
    std::vector<double> params_;
};

// Free-function spellings used throughout the training code.
ImageBatch forward(const Network& net, const ImageBatch& input, Mode mode, Rng* rng = nullptr,
                   ForwardTrace* trace = nullptr);
Gradients backward(const Network& net, const ForwardTrace& trace, const ImageBatch& upstream);

// ---------------------------------------------------------------------------
// Losses. Gradients are with respect to the predictions and already carry
// the 1/n mean factor.
// ---------------------------------------------------------------------------

struct LossResult {
    double loss = 0.0;
    std::vector<double> grad;
};

// Binary cross entropy on probabilities in (0,1); inputs are clamped away
// from {0,1} by 1e-7.
LossResult bce_loss(const std::vector<double>& probs, const std::vector<double>& labels);
LossResult mse_loss(const std::vector<double>& pred, const std::vector<double>& target);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    uint64_t step_count = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState fresh(size_t n, double lr);
};

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state);

// ---------------------------------------------------------------------------
// Checkpoint format: "DBNN" magic, u32 version, input shape, length-prefixed
// layer records, then the parameter vector as little-endian f64.
// ---------------------------------------------------------------------------

void save_network(const std::string& path, const Network& net);
Network load_network(const std::string& path);

}  // namespace diffbench::nn
