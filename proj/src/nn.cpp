#include "advdet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "advdet/binary_io.hpp"

namespace advdet {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Indices of the nonzero entries when the vector is mostly zero (MNIST
// backgrounds); empty result means "use the dense loop".
std::vector<std::size_t> sparse_support(std::span<const double> x) {
    std::vector<std::size_t> nz;
    nz.reserve(x.size() / 2);
    for (std::size_t j = 0; j < x.size(); ++j)
        if (x[j] != 0.0) nz.push_back(j);
    if (nz.size() * 2 > x.size()) nz.clear();
    return nz;
}

bool is_dense(const std::vector<std::size_t>& nz, std::span<const double> x) {
    return nz.empty() && std::any_of(x.begin(), x.end(), [](double v) { return v != 0.0; });
}

Vector affine(const DenseLayer& layer, std::span<const double> x) {
    const auto& w = layer.weights;
    Vector y(layer.bias);
    const auto nz = sparse_support(x);
    if (is_dense(nz, x)) {
        for (std::size_t i = 0; i < w.rows(); ++i) y[i] += dot(w.row(i), x);
    } else {
        for (std::size_t i = 0; i < w.rows(); ++i) {
            const double* row = w.row(i).data();
            double s = 0.0;
            for (std::size_t j : nz) s += row[j] * x[j];
            y[i] += s;
        }
    }
    return y;
}

void accumulate_outer(Matrix& gw, std::span<const double> delta, std::span<const double> x) {
    const auto nz = sparse_support(x);
    const bool dense = is_dense(nz, x);
    for (std::size_t i = 0; i < gw.rows(); ++i) {
        const double di = delta[i];
        if (di == 0.0) continue;
        double* row = gw.row(i).data();
        if (dense) {
            for (std::size_t j = 0; j < x.size(); ++j) row[j] += di * x[j];
        } else {
            for (std::size_t j : nz) row[j] += di * x[j];
        }
    }
}

}  // namespace

double gelu(double x) { return x * 0.5 * std::erfc(-x * kInvSqrt2); }

double gelu_prime(double x) {
    const double cdf = 0.5 * std::erfc(-x * kInvSqrt2);
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

double activate(Activation a, double x) {
    return a == Activation::relu ? std::max(0.0, x) : gelu(x);
}

double activate_prime(Activation a, double x) {
    return a == Activation::relu ? (x > 0.0 ? 1.0 : 0.0) : gelu_prime(x);
}

void NetworkSpec::validate() const {
    if (layer_sizes.size() < 2)
        throw Error(ErrorCode::ShapeMismatch, "network needs an input and an output width");
    if (activations.size() != layer_sizes.size() - 2)
        throw Error(ErrorCode::ShapeMismatch,
                    "expected " + std::to_string(layer_sizes.size() - 2) +
                        " hidden activations, got " + std::to_string(activations.size()));
    for (auto w : layer_sizes)
        if (w == 0) throw Error(ErrorCode::ShapeMismatch, "zero layer width");
    if (head == Head::softmax_classifier && layer_sizes.back() < 2)
        throw Error(ErrorCode::ShapeMismatch, "classifier needs at least two classes");
}

NetworkSpec NetworkSpec::classifier(std::size_t input, std::vector<std::size_t> hidden,
                                    std::size_t classes, Activation act, std::uint64_t seed) {
    NetworkSpec s;
    s.layer_sizes.push_back(input);
    for (auto h : hidden) s.layer_sizes.push_back(h);
    s.layer_sizes.push_back(classes);
    s.activations.assign(hidden.size(), act);
    s.head = Head::softmax_classifier;
    s.seed = seed;
    return s;
}

Network make_network(const NetworkSpec& spec) {
    spec.validate();
    Network net;
    net.spec = spec;
    std::mt19937_64 rng(spec.seed);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const std::size_t in = spec.layer_sizes[l];
        const std::size_t out = spec.layer_sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        DenseLayer layer{Matrix(out, in), Vector(out, 0.0)};
        for (double& w : layer.weights.data()) w = dist(rng);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

Vector softmax(std::span<const double> z) {
    Vector p(z.begin(), z.end());
    if (p.empty()) return p;
    const double m = *std::max_element(p.begin(), p.end());
    double sum = 0.0;
    for (double& v : p) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : p) v /= sum;
    return p;
}

ForwardResult forward(const Network& net, std::span<const double> x) {
    require_dim(x.size(), net.input_dim(), "network input");
    ForwardResult r;
    const std::size_t layers = net.layers.size();
    r.trace.pre.reserve(layers);
    r.trace.post.reserve(layers + 1);
    r.trace.post.emplace_back(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
        Vector pre = affine(net.layers[l], r.trace.post.back());
        Vector post = pre;
        if (l + 1 < layers) {
            const Activation a = net.spec.activations[l];
            for (double& v : post) v = activate(a, v);
        }
        r.trace.pre.push_back(std::move(pre));
        r.trace.post.push_back(std::move(post));
    }
    r.logits = r.trace.post.back();
    for (double v : r.logits)
        if (!std::isfinite(v))
            throw Error(ErrorCode::NonFiniteActivation, "network output is not finite");
    if (net.spec.head == Head::softmax_classifier) r.probs = softmax(r.logits);
    return r;
}

Vector logits(const Network& net, std::span<const double> x) { return forward(net, x).logits; }

int predict(const Network& net, std::span<const double> x) {
    const Vector z = logits(net, x);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

ParamGrads ParamGrads::zeros_like(const Network& net) {
    ParamGrads g;
    for (const auto& layer : net.layers)
        g.layers.push_back({Matrix(layer.weights.rows(), layer.weights.cols()),
                            Vector(layer.bias.size(), 0.0)});
    return g;
}

void ParamGrads::add(const ParamGrads& other) {
    if (other.layers.size() != layers.size())
        throw Error(ErrorCode::ShapeMismatch, "gradient layer counts differ");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& w = layers[l].weights.data();
        const auto& ow = other.layers[l].weights.data();
        if (w.size() != ow.size()) throw Error(ErrorCode::ShapeMismatch, "weight shapes differ");
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += ow[i];
        for (std::size_t i = 0; i < layers[l].bias.size(); ++i)
            layers[l].bias[i] += other.layers[l].bias[i];
    }
}

void ParamGrads::scale(double s) {
    for (auto& layer : layers) {
        for (double& w : layer.weights.data()) w *= s;
        for (double& b : layer.bias) b *= s;
    }
}

Vector backward(const Network& net, const Trace& trace, std::span<const double> output_grad,
                ParamGrads* grads) {
    const std::size_t layers = net.layers.size();
    require_dim(output_grad.size(), net.output_dim(), "output gradient");
    Vector delta(output_grad.begin(), output_grad.end());
    for (std::size_t l = layers; l-- > 0;) {
        if (grads != nullptr) {
            accumulate_outer(grads->layers[l].weights, delta, trace.post[l]);
            auto& gb = grads->layers[l].bias;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += delta[i];
        }
        Vector upstream = matvec_transposed(net.layers[l].weights, delta);
        if (l > 0) {
            const Activation a = net.spec.activations[l - 1];
            const Vector& pre = trace.pre[l - 1];
            for (std::size_t i = 0; i < upstream.size(); ++i)
                upstream[i] *= activate_prime(a, pre[i]);
        }
        delta = std::move(upstream);
    }
    return delta;
}

LossGrads loss_and_grads(const Network& net, std::span<const double> x, int target) {
    if (net.spec.head != Head::softmax_classifier)
        throw Error(ErrorCode::InvalidArgument, "class target given to a reconstruction head");
    if (target < 0 || static_cast<std::size_t>(target) >= net.output_dim())
        throw Error(ErrorCode::InvalidArgument, "target class " + std::to_string(target) +
                                                    " out of range");
    const auto fwd = forward(net, x);
    LossGrads out;
    // log-softmax directly for accuracy when p[target] underflows
    const double m = *std::max_element(fwd.logits.begin(), fwd.logits.end());
    double lse = 0.0;
    for (double z : fwd.logits) lse += std::exp(z - m);
    out.loss = m + std::log(lse) - fwd.logits[target];
    Vector g = fwd.probs;
    g[target] -= 1.0;
    out.params = ParamGrads::zeros_like(net);
    out.input_grad = backward(net, fwd.trace, g, &out.params);
    return out;
}

LossGrads loss_and_grads(const Network& net, std::span<const double> x,
                         std::span<const double> target) {
    if (net.spec.head != Head::linear_reconstruction)
        throw Error(ErrorCode::InvalidArgument, "reconstruction target given to a classifier");
    require_dim(target.size(), net.output_dim(), "reconstruction target");
    const auto fwd = forward(net, x);
    const double d = static_cast<double>(target.size());
    LossGrads out;
    Vector g(target.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double diff = fwd.logits[i] - target[i];
        out.loss += diff * diff / d;
        g[i] = 2.0 * diff / d;
    }
    out.params = ParamGrads::zeros_like(net);
    out.input_grad = backward(net, fwd.trace, g, &out.params);
    return out;
}

AdamState AdamState::for_network(const Network& net) {
    AdamState s;
    s.m = ParamGrads::zeros_like(net);
    s.v = ParamGrads::zeros_like(net);
    return s;
}

void adam_step(AdamState& state, Network& net, const ParamGrads& grads) {
    if (grads.layers.size() != net.layers.size() || state.m.layers.size() != net.layers.size())
        throw Error(ErrorCode::ShapeMismatch, "Adam state/gradients do not match the network");
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
        if (p.size() != g.size() || p.size() != m.size())
            throw Error(ErrorCode::ShapeMismatch, "parameter and gradient shapes differ");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        update(net.layers[l].weights.data(), grads.layers[l].weights.data(),
               state.m.layers[l].weights.data(), state.v.layers[l].weights.data());
        update(net.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias,
               state.v.layers[l].bias);
    }
}

Network train_classifier(const Dataset& data, const NetworkSpec& spec, const TrainOptions& opts,
                         TrainReport* report) {
    if (spec.head != Head::softmax_classifier)
        throw Error(ErrorCode::InvalidArgument, "train_classifier needs a softmax head");
    if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "no training examples");
    require_dim(data.dim(), spec.layer_sizes.front(), "classifier input width");
    Network net = make_network(spec);
    AdamState adam = AdamState::for_network(net);
    std::mt19937_64 rng(opts.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = std::max<std::size_t>(1, opts.batch);

    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            ParamGrads acc = ParamGrads::zeros_like(net);
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                const auto fwd = forward(net, data.examples[i]);
                const int y = data.labels[i];
                epoch_loss += -std::log(std::max(fwd.probs[y], 1e-300));
                Vector g = fwd.probs;
                g[y] -= 1.0;
                backward(net, fwd.trace, g, &acc);
            }
            acc.scale(1.0 / static_cast<double>(end - start));
            adam_step(adam, net, acc);
        }
        if (report != nullptr)
            report->epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    if (report != nullptr) report->train_accuracy = accuracy(net, data);
    return net;
}

double accuracy(const Network& net, const Dataset& data) {
    if (data.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (predict(net, data.examples[i]) == data.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

AutoencoderNet make_autoencoder(std::size_t dim, const Network& classifier, std::size_t hidden,
                                std::size_t bottleneck, std::uint64_t seed) {
    require_dim(classifier.input_dim(), dim, "classifier input width");
    NetworkSpec enc{{dim, hidden, bottleneck}, {Activation::gelu}, Head::linear_reconstruction, seed};
    NetworkSpec dec{{bottleneck + classifier.output_dim(), hidden, dim},
                    {Activation::gelu},
                    Head::linear_reconstruction,
                    seed + 1};
    return {make_network(enc), make_network(dec), classifier};
}

namespace {

Vector decoder_input(std::span<const double> code, std::span<const double> logits) {
    Vector in(code.begin(), code.end());
    in.insert(in.end(), logits.begin(), logits.end());
    return in;
}

}  // namespace

double autoencoder_loss_and_grads(const AutoencoderNet& ae, std::span<const double> x,
                                  std::span<const double> logits, ParamGrads* enc_grads,
                                  ParamGrads* dec_grads) {
    const auto enc = forward(ae.encoder, x);
    const auto dec = forward(ae.decoder, decoder_input(enc.logits, logits));
    const double d = static_cast<double>(x.size());
    double loss = 0.0;
    Vector g(x.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double diff = dec.logits[i] - x[i];
        loss += diff * diff / d;
        g[i] = 2.0 * diff / d;
    }
    const Vector g_in = backward(ae.decoder, dec.trace, g, dec_grads);
    if (enc_grads != nullptr) {
        const std::span<const double> g_code(g_in.data(), ae.bottleneck());
        backward(ae.encoder, enc.trace, g_code, enc_grads);
    }
    return loss;
}

AutoencoderNet train_autoencoder(const Dataset& data, const Network& classifier,
                                 const AutoencoderOptions& opts, TrainReport* report) {
    if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "no training examples");
    AutoencoderNet ae =
        make_autoencoder(data.dim(), classifier, opts.hidden, opts.bottleneck, opts.train.seed);

    // The classifier is frozen, so its logits are fixed per example.
    std::vector<Vector> cached_logits;
    cached_logits.reserve(data.size());
    for (const auto& x : data.examples) cached_logits.push_back(logits(classifier, x));

    AdamState enc_adam = AdamState::for_network(ae.encoder);
    AdamState dec_adam = AdamState::for_network(ae.decoder);
    std::mt19937_64 rng(opts.train.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = std::max<std::size_t>(1, opts.train.batch);

    for (std::size_t epoch = 0; epoch < opts.train.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            ParamGrads ge = ParamGrads::zeros_like(ae.encoder);
            ParamGrads gd = ParamGrads::zeros_like(ae.decoder);
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                epoch_loss +=
                    autoencoder_loss_and_grads(ae, data.examples[i], cached_logits[i], &ge, &gd);
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            ge.scale(inv);
            gd.scale(inv);
            adam_step(enc_adam, ae.encoder, ge);
            adam_step(dec_adam, ae.decoder, gd);
        }
        if (report != nullptr)
            report->epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    return ae;
}

Vector reconstruct(const AutoencoderNet& ae, std::span<const double> x) {
    require_dim(x.size(), ae.encoder.input_dim(), "autoencoder input");
    const Vector code = logits(ae.encoder, x);
    const Vector z = logits(ae.classifier, x);
    return logits(ae.decoder, decoder_input(code, z));
}

double reconstruction_loss(const AutoencoderNet& ae, std::span<const double> x, Vector* grad) {
    require_dim(x.size(), ae.encoder.input_dim(), "autoencoder input");
    const auto enc = forward(ae.encoder, x);
    const auto clf = forward(ae.classifier, x);
    const auto dec = forward(ae.decoder, decoder_input(enc.logits, clf.logits));
    const double d = static_cast<double>(x.size());
    double loss = 0.0;
    Vector g(x.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double diff = dec.logits[i] - x[i];
        loss += diff * diff / d;
        g[i] = 2.0 * diff / d;
    }
    if (grad != nullptr) {
        const Vector g_in = backward(ae.decoder, dec.trace, g, nullptr);
        const std::size_t b = ae.bottleneck();
        const Vector g_enc =
            backward(ae.encoder, enc.trace, std::span<const double>(g_in.data(), b), nullptr);
        const Vector g_clf = backward(
            ae.classifier, clf.trace,
            std::span<const double>(g_in.data() + b, g_in.size() - b), nullptr);
        grad->assign(x.size(), 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) (*grad)[i] = g_enc[i] + g_clf[i] - g[i];
    }
    return loss;
}

void save_network(const Network& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + path.string());
    out.write("NET1", 4);
    const auto& s = net.spec;
    binio::write_double(out, static_cast<double>(s.layer_sizes.size()));
    for (auto w : s.layer_sizes) binio::write_double(out, static_cast<double>(w));
    for (auto a : s.activations) binio::write_double(out, a == Activation::relu ? 0.0 : 1.0);
    binio::write_double(out, s.head == Head::softmax_classifier ? 0.0 : 1.0);
    // Seeds above 2^53 would not survive the double encoding.
    binio::write_double(out, static_cast<double>(s.seed & ((std::uint64_t{1} << 53) - 1)));
    for (const auto& layer : net.layers) {
        binio::write_doubles(out, layer.weights.data());
        binio::write_doubles(out, layer.bias);
    }
    if (!out) throw Error(ErrorCode::FileNotFound, "write failed for " + path.string());
}

Network load_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FileNotFound, path.string());
    binio::expect_magic(in, "NET1", path.string());
    NetworkSpec s;
    const std::size_t count = binio::read_size(in, "layer count");
    if (count < 2 || count > 64) throw Error(ErrorCode::BadFormat, path.string() + ": layer count");
    for (std::size_t i = 0; i < count; ++i) s.layer_sizes.push_back(binio::read_size(in, "width"));
    for (std::size_t i = 0; i + 2 < count; ++i)
        s.activations.push_back(binio::read_size(in, "activation") == 0 ? Activation::relu
                                                                         : Activation::gelu);
    s.head = binio::read_size(in, "head") == 0 ? Head::softmax_classifier
                                               : Head::linear_reconstruction;
    s.seed = binio::read_size(in, "seed");
    Network net = make_network(s);
    for (auto& layer : net.layers) {
        binio::read_doubles(in, layer.weights.data(), "weights");
        binio::read_doubles(in, layer.bias, "bias");
    }
    return net;
}

}  // namespace advdet
