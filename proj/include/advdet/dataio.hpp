#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advdet/common.hpp"

namespace advdet {

struct PixelRange {
    double lo = 0.0;
    double hi = 1.0;
    double width() const { return hi - lo; }
    bool operator==(const PixelRange&) const = default;
};

struct ImageShape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::size_t size() const { return height * width * channels; }
    bool operator==(const ImageShape&) const = default;
};

/// Labeled flat image vectors. CIFAR-style images are stored channel-major
/// (all R, then all G, then all B).
struct Dataset {
    std::vector<Vector> examples;
    std::vector<int> labels;
    PixelRange pixel_range;
    ImageShape shape;
    int num_classes = 0;
    std::string name;

    std::size_t size() const { return examples.size(); }
    std::size_t dim() const { return shape.size(); }

    /// Throws if any invariant (pixel range, common length, label bounds) is broken.
    void validate() const;

    /// Contiguous slice [begin, begin + count), clamped to the dataset size.
    Dataset slice(std::size_t begin, std::size_t count) const;
};

/// A dataset with the training-split mean subtracted from every example.
struct CenteredDataset {
    Dataset base;
    Vector mean;
    std::vector<Vector> centered;
};

Dataset parse_idx(std::span<const std::uint8_t> image_bytes,
                  std::span<const std::uint8_t> label_bytes, std::string name = "mnist");

Dataset parse_cifar10(std::span<const std::uint8_t> batch_bytes, std::string name = "cifar10");

/// Inverse of parse_idx for single-channel [0,1] datasets; pixels are rounded to bytes.
std::vector<std::uint8_t> encode_idx_images(const Dataset& data);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& data);

/// Seeded oriented-bar templates with pixel noise. A one-pixel frame is kept
/// at zero so the data has an exact null space, like MNIST's empty border.
Dataset make_synthetic(std::uint64_t seed, std::size_t n, std::size_t side, int classes);

std::pair<CenteredDataset, std::vector<CenteredDataset>> center_data(
    const Dataset& train, std::span<const Dataset> others);

/// Reads a whole file; `.gz` files are inflated transparently.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

struct TrainTestSplit {
    Dataset train;
    Dataset test;
};

/// Loads the four standard MNIST IDX files (optionally gzipped) from `dir`.
TrainTestSplit load_mnist_dir(const std::filesystem::path& dir);

/// True when `dir` holds all four MNIST files (plain or .gz).
bool mnist_available(const std::filesystem::path& dir);

/// Concatenates CIFAR-10 binary batches.
Dataset load_cifar10_batches(std::span<const std::filesystem::path> files);

}  // namespace advdet
