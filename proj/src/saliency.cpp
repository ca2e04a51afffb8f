#include "advdet/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace advdet {
namespace {

void require_activation(const Network& net, Activation want, ErrorCode code, const char* mode) {
    for (Activation a : net.spec.activations)
        if (a != want)
            throw Error(code, std::string(mode) + " saliency needs " +
                                  (want == Activation::relu ? "ReLU" : "GELU") +
                                  " hidden layers throughout");
}

double gate(SaliencyMode mode, Activation act, double f, double r) {
    switch (mode) {
        case SaliencyMode::vanilla: return activate_prime(act, f) * r;
        case SaliencyMode::guided: return (f > 0.0 && r > 0.0) ? r : 0.0;
        case SaliencyMode::modified: return (f > 0.0 && r > 0.0) ? 1.0 : 0.0;
        case SaliencyMode::gelu_modified: return gelu_prime(f) * gelu_prime(r);
    }
    return 0.0;
}

SaliencyMap run(const Network& net, std::span<const double> x, int cls, SaliencyMode mode,
                GateRecord* gates) {
    if (cls < 0 || static_cast<std::size_t>(cls) >= net.output_dim())
        throw Error(ErrorCode::InvalidArgument, "saliency class " + std::to_string(cls) +
                                                    " out of range");
    const auto fwd = forward(net, x);
    Vector r(net.output_dim(), 0.0);
    r[static_cast<std::size_t>(cls)] = 1.0;
    if (gates != nullptr) gates->clear();
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        r = matvec_transposed(net.layers[l].weights, r);
        if (l == 0) break;
        const Activation act = net.spec.activations[l - 1];
        const Vector& f = fwd.trace.pre[l - 1];
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = gate(mode, act, f[i], r[i]);
        if (gates != nullptr) gates->push_back(r);
    }
    return {std::move(r), mode, cls};
}

std::uint8_t round_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

std::ofstream open_image(const std::filesystem::path& path, const char* magic, std::size_t width,
                         std::size_t height) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + path.string());
    out << magic << '\n' << width << ' ' << height << "\n255\n";
    return out;
}

}  // namespace

std::string_view to_string(SaliencyMode mode) {
    switch (mode) {
        case SaliencyMode::vanilla: return "vanilla";
        case SaliencyMode::guided: return "guided";
        case SaliencyMode::modified: return "modified";
        case SaliencyMode::gelu_modified: return "gelu_modified";
    }
    return "unknown";
}

SaliencyMode parse_saliency_mode(std::string_view name) {
    for (auto m : {SaliencyMode::vanilla, SaliencyMode::guided, SaliencyMode::modified,
                   SaliencyMode::gelu_modified})
        if (to_string(m) == name) return m;
    throw Error(ErrorCode::InvalidArgument, "unknown saliency mode '" + std::string(name) + "'");
}

SaliencyMap vanilla_saliency(const Network& net, std::span<const double> x, int cls) {
    return run(net, x, cls, SaliencyMode::vanilla, nullptr);
}

SaliencyMap guided_backprop(const Network& net, std::span<const double> x, int cls) {
    require_activation(net, Activation::relu, ErrorCode::RequiresRelu, "guided");
    return run(net, x, cls, SaliencyMode::guided, nullptr);
}

SaliencyMap modified_saliency(const Network& net, std::span<const double> x, int cls,
                              GateRecord* gates) {
    require_activation(net, Activation::relu, ErrorCode::RequiresRelu, "modified");
    return run(net, x, cls, SaliencyMode::modified, gates);
}

SaliencyMap gelu_modified_saliency(const Network& net, std::span<const double> x, int cls,
                                   GateRecord* gates) {
    require_activation(net, Activation::gelu, ErrorCode::RequiresGelu, "gelu_modified");
    return run(net, x, cls, SaliencyMode::gelu_modified, gates);
}

SaliencyMap compute_saliency(const Network& net, std::span<const double> x, int cls,
                             SaliencyMode mode) {
    switch (mode) {
        case SaliencyMode::vanilla: return vanilla_saliency(net, x, cls);
        case SaliencyMode::guided: return guided_backprop(net, x, cls);
        case SaliencyMode::modified: return modified_saliency(net, x, cls);
        case SaliencyMode::gelu_modified: return gelu_modified_saliency(net, x, cls);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown saliency mode");
}

std::vector<std::uint8_t> positive_map(std::span<const double> values) {
    double peak = 0.0;
    for (double v : values) peak = std::max(peak, v);
    std::vector<std::uint8_t> out(values.size(), 0);
    if (!(peak > 0.0)) return out;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i] > 0.0) out[i] = round_byte(255.0 * values[i] / peak);
    return out;
}

std::vector<std::uint8_t> to_gray(std::span<const double> values, double lo, double hi) {
    std::vector<std::uint8_t> out(values.size(), 0);
    if (!(hi > lo)) return out;
    for (std::size_t i = 0; i < values.size(); ++i)
        out[i] = round_byte(255.0 * (values[i] - lo) / (hi - lo));
    return out;
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels) {
    require_dim(pixels.size(), width * height, "PGM pixels");
    auto out = open_image(path, "P5", width, height);
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_signed_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::span<const double> values) {
    require_dim(values.size(), width * height, "PPM values");
    double peak = 0.0;
    for (double v : values) peak = std::max(peak, std::abs(v));
    std::vector<std::uint8_t> rgb(3 * values.size(), 0);
    if (peak > 0.0)
        for (std::size_t i = 0; i < values.size(); ++i) {
            const std::uint8_t m = round_byte(255.0 * std::abs(values[i]) / peak);
            rgb[3 * i + (values[i] < 0.0 ? 0 : 2)] = values[i] == 0.0 ? 0 : m;
        }
    auto out = open_image(path, "P6", width, height);
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

}  // namespace advdet
