#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "advdet/common.hpp"
#include "advdet/nn.hpp"

namespace advdet {

enum class SaliencyMode { vanilla, guided, modified, gelu_modified };

std::string_view to_string(SaliencyMode mode);
SaliencyMode parse_saliency_mode(std::string_view name);

struct SaliencyMap {
    Vector values;
    SaliencyMode mode = SaliencyMode::vanilla;
    int cls = 0;
};

/// Gate outputs per hidden layer, last hidden layer first.
using GateRecord = std::vector<Vector>;

/// ∂logit[cls]/∂x.
SaliencyMap vanilla_saliency(const Network& net, std::span<const double> x, int cls);
/// Hidden gate (f > 0)(R > 0)·R. ReLU networks only.
SaliencyMap guided_backprop(const Network& net, std::span<const double> x, int cls);
/// Hidden gate (f > 0)(R > 0), propagated through transposed weights. ReLU only.
SaliencyMap modified_saliency(const Network& net, std::span<const double> x, int cls,
                              GateRecord* gates = nullptr);
/// Hidden gate g′(f)·g′(R). GELU networks only.
SaliencyMap gelu_modified_saliency(const Network& net, std::span<const double> x, int cls,
                                   GateRecord* gates = nullptr);

SaliencyMap compute_saliency(const Network& net, std::span<const double> x, int cls,
                             SaliencyMode mode);

/// Negatives zeroed, then max-normalised to 0..255 with round-half-up.
std::vector<std::uint8_t> positive_map(std::span<const double> values);

/// Affine map of [lo, hi] onto 0..255, clamped, round-half-up.
std::vector<std::uint8_t> to_gray(std::span<const double> values, double lo, double hi);

/// Binary P5.
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels);
/// Binary P6 of a signed map: red = negative magnitude, blue = positive, both
/// scaled by the largest magnitude.
void write_signed_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::span<const double> values);

}  // namespace advdet
