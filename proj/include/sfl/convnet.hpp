#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sfl/numkit.hpp"

namespace sfl {

using Label = int;

// Layer descriptors. Convolutions and pooling are "valid" (no padding).
struct ConvLayer {
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    bool operator==(const ConvLayer&) const = default;
};
struct ReluLayer {
    bool operator==(const ReluLayer&) const = default;
};
struct MaxPoolLayer {
    std::size_t kernel = 2;
    std::size_t stride = 2;
    bool operator==(const MaxPoolLayer&) const = default;
};
struct FlattenLayer {
    bool operator==(const FlattenLayer&) const = default;
};
struct FcLayer {
    std::size_t out_dim = 0;
    bool operator==(const FcLayer&) const = default;
};
struct SoftmaxLayer {
    bool operator==(const SoftmaxLayer&) const = default;
};

using Layer = std::variant<ConvLayer, ReluLayer, MaxPoolLayer, FlattenLayer, FcLayer, SoftmaxLayer>;

std::string layer_name(const Layer& layer);

// Per-sample activation shape: {C, H, W} for spatial tensors, {D} after flatten.
using ActShape = std::vector<std::size_t>;

enum class TapId { ConvLast, FcPenultimate, Head };

std::string tap_name(TapId tap);
TapId parse_tap(const std::string& name);

struct NetSpec {
    std::vector<Layer> layers;
    std::size_t in_channels = 1;
    std::size_t in_height = 16;
    std::size_t in_width = 16;
    std::size_t class_count = 2;

    /// Throws ContractError unless the final layers are fc(class_count) then
    /// softmax, there is an fc in front of the head, and every intermediate
    /// shape is positive.
    void validate() const;

    // shapes()[0] is the input shape, shapes()[i + 1] the output of layer i.
    std::vector<ActShape> shapes() const;

    std::size_t head_index() const;  // index of the final fc
    // Index of the layer whose output is the tap.
    std::size_t tap_layer(TapId tap) const;
    std::size_t tap_width(TapId tap) const;
    std::size_t input_size() const { return in_channels * in_height * in_width; }

    bool operator==(const NetSpec&) const = default;
};

/// conv(8,3)-relu-pool(2)-conv(16,3)-relu-pool(2)-flatten-fc(64)-relu-fc(classes)-softmax
NetSpec desk_spec(std::size_t channels, std::size_t size, std::size_t classes,
                  std::size_t penultimate = 64);

/// Weights and biases per layer; tensors are empty for parameter-free layers.
/// Conv weights are [out, in, k, k]; fc weights are [out, in].
struct NetParams {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    bool all_finite() const;
    std::size_t parameter_count() const;
    friend bool operator==(const NetParams&, const NetParams&) = default;
};

struct Network {
    NetSpec spec;
    NetParams params;
};

NetParams init_params(const NetSpec& spec, Rng& rng);

// Throws DimensionError unless every tensor has the shape the NetSpec implies.
void validate_params(const NetSpec& spec, const NetParams& params);

/// Activations at the tap, one row per sample. Pure and reentrant.
Tensor forward(const NetParams& params, const NetSpec& spec, const Tensor& batch, TapId tap);
Tensor forward(const Network& net, const Tensor& batch, TapId tap);

// Logits of the final fc (pre-softmax).
Tensor forward_logits(const NetParams& params, const NetSpec& spec, const Tensor& batch);

struct LossAndGrads {
    double loss = 0.0;
    NetParams grads;
};

/// Mean cross-entropy and its exact gradient. Layers with index below
/// freeze_below receive exactly-zero gradients.
LossAndGrads loss_and_grads(const NetParams& params, const NetSpec& spec, const Tensor& batch,
                            std::span<const Label> labels,
                            std::optional<std::size_t> freeze_below = std::nullopt);

double mean_cross_entropy(const NetParams& params, const NetSpec& spec, const Tensor& batch,
                          std::span<const Label> labels);

struct StepSchedule {
    double factor = 0.1;
    std::size_t every_n_epochs = 20;
};

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 30;
    // nullopt = constant schedule.
    std::optional<StepSchedule> lr_schedule = StepSchedule{};
    std::uint64_t seed = 0;
    std::optional<std::size_t> freeze_below;

    void validate() const;
    double rate_at(std::size_t epoch) const;
};

/// SGD with heavy-ball momentum: v ← m·v − lr·(g + wd·w); w ← w + v.
/// Weight decay is applied to weights only, not biases.
class SgdMomentum {
public:
    SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
              bool decay) const;
    void step(NetParams& params, const NetParams& grads, NetParams& velocity, double lr,
              std::optional<std::size_t> freeze_below) const;

private:
    double momentum_;
    double weight_decay_;
};

struct TrainResult {
    NetParams params;
    std::vector<double> loss_history;  // one mean loss per epoch
};

/// Trains on `images` [N, C, H, W] with `labels`. Epoch order is a seeded
/// shuffle, so the run is deterministic given cfg.seed.
TrainResult train(const NetParams& params, const NetSpec& spec, const Tensor& images,
                  std::span<const Label> labels, const TrainConfig& cfg);

/// Replaces the final fc with a freshly initialized one of new_class_count
/// outputs. Every other parameter is copied bit-exactly.
Network reinit_head(const Network& net, std::size_t new_class_count, Rng& rng);

// Fine-tuning preset: the same config with the learning rate divided by 10.
TrainConfig finetune_config(TrainConfig cfg);

// Arg-max with ties broken by lowest index.
std::size_t argmax(std::span<const double> v);

}  // namespace sfl
