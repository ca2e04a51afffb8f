#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advdet/common.hpp"
#include "advdet/dataio.hpp"

namespace advdet {

enum class Activation { relu, gelu };
enum class Head { softmax_classifier, linear_reconstruction };

/// gelu(x) = x·Φ(x) with the exact normal CDF.
double gelu(double x);
/// Φ(x) + x·φ(x)
double gelu_prime(double x);

double activate(Activation a, double x);
double activate_prime(Activation a, double x);

struct NetworkSpec {
    std::vector<std::size_t> layer_sizes;  // input width first
    std::vector<Activation> activations;   // one per hidden layer
    Head head = Head::softmax_classifier;
    std::uint64_t seed = 0;

    std::size_t num_layers() const { return layer_sizes.empty() ? 0 : layer_sizes.size() - 1; }
    void validate() const;

    static NetworkSpec classifier(std::size_t input, std::vector<std::size_t> hidden,
                                  std::size_t classes, Activation act, std::uint64_t seed);
    bool operator==(const NetworkSpec&) const = default;
};

struct DenseLayer {
    Matrix weights;  // out × in
    Vector bias;
    bool operator==(const DenseLayer&) const = default;
};

struct Network {
    NetworkSpec spec;
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const { return spec.layer_sizes.front(); }
    std::size_t output_dim() const { return spec.layer_sizes.back(); }
    bool operator==(const Network&) const = default;
};

/// Weights uniform in ±1/√fan_in from the spec's seed, biases zero.
Network make_network(const NetworkSpec& spec);

/// Per-layer values kept for backward passes and saliency maps.
/// post[0] is the input; pre[l] = W_l·post[l] + b_l; post[l+1] = act(pre[l])
/// for hidden layers and the identity for the final layer.
struct Trace {
    std::vector<Vector> pre;
    std::vector<Vector> post;
};

struct ForwardResult {
    Vector logits;  // network output (reconstruction for linear heads)
    Vector probs;   // softmax(logits); empty for reconstruction heads
    Trace trace;
};

Vector softmax(std::span<const double> logits);

ForwardResult forward(const Network& net, std::span<const double> x);
Vector logits(const Network& net, std::span<const double> x);
int predict(const Network& net, std::span<const double> x);

struct ParamGrads {
    std::vector<DenseLayer> layers;

    static ParamGrads zeros_like(const Network& net);
    void add(const ParamGrads& other);
    void scale(double s);
};

/// Backpropagates dL/d(output) through the recorded trace. Accumulates
/// parameter gradients into `grads` when non-null; returns dL/dx.
Vector backward(const Network& net, const Trace& trace, std::span<const double> output_grad,
                ParamGrads* grads);

struct LossGrads {
    double loss = 0.0;
    ParamGrads params;
    Vector input_grad;
};

/// Cross-entropy −log p[target] for softmax classifiers.
LossGrads loss_and_grads(const Network& net, std::span<const double> x, int target);
/// Mean squared error against `target` for reconstruction heads.
LossGrads loss_and_grads(const Network& net, std::span<const double> x,
                         std::span<const double> target);

struct AdamState {
    std::size_t t = 0;
    ParamGrads m;
    ParamGrads v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double lr = 1e-3;
    double eps = 1e-8;

    static AdamState for_network(const Network& net);
};

void adam_step(AdamState& state, Network& net, const ParamGrads& grads);

struct TrainOptions {
    std::size_t epochs = 5;
    std::size_t batch = 32;
    std::uint64_t seed = 1;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    double train_accuracy = 0.0;
};

Network train_classifier(const Dataset& data, const NetworkSpec& spec, const TrainOptions& opts,
                         TrainReport* report = nullptr);

double accuracy(const Network& net, const Dataset& data);

/// Encoder d→hidden→bottleneck, decoder (bottleneck + K)→hidden→d. The decoder
/// sees the bottleneck code concatenated with the frozen classifier's logits.
struct AutoencoderNet {
    Network encoder;
    Network decoder;
    Network classifier;

    std::size_t bottleneck() const { return encoder.output_dim(); }
};

struct AutoencoderOptions {
    std::size_t hidden = 256;
    std::size_t bottleneck = 10;
    TrainOptions train{};
};

AutoencoderNet train_autoencoder(const Dataset& data, const Network& classifier,
                                 const AutoencoderOptions& opts, TrainReport* report = nullptr);

AutoencoderNet make_autoencoder(std::size_t dim, const Network& classifier, std::size_t hidden,
                                std::size_t bottleneck, std::uint64_t seed);

Vector reconstruct(const AutoencoderNet& ae, std::span<const double> x);

/// MSE(reconstruct(x), x) and its gradient with respect to x through the full
/// graph: encoder, classifier logits, and the direct target term.
double reconstruction_loss(const AutoencoderNet& ae, std::span<const double> x, Vector* grad);

/// Mean-squared reconstruction loss and decoder/encoder parameter gradients
/// for one example; `logits` are the classifier's (held constant).
double autoencoder_loss_and_grads(const AutoencoderNet& ae, std::span<const double> x,
                                  std::span<const double> logits, ParamGrads* enc_grads,
                                  ParamGrads* dec_grads);

/// NET1 checkpoint: "NET1" then little-endian doubles: layer count + sizes,
/// activation codes, head code, seed, then W (row-major) and b per layer.
void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace advdet
