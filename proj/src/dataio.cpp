#include "advdet/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace advdet {
namespace {

constexpr std::uint32_t kIdxImageMagic = 2051;
constexpr std::uint32_t kIdxLabelMagic = 2049;
constexpr std::size_t kCifarPixels = 3072;
constexpr std::size_t kCifarRecord = kCifarPixels + 1;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset,
                        const char* field) {
    if (bytes.size() < offset + 4)
        throw Error(ErrorCode::TruncatedFile, std::string("header field '") + field + "' is cut off");
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::filesystem::path find_variant(const std::filesystem::path& dir, const std::string& stem) {
    for (const auto& candidate : {stem, stem + ".gz"}) {
        auto p = dir / candidate;
        if (std::filesystem::exists(p)) return p;
    }
    // The canonical distribution also circulates with '.' instead of '-'.
    std::string dotted = stem;
    std::replace(dotted.begin(), dotted.end(), '-', '.');
    for (const auto& candidate : {dotted, dotted + ".gz"}) {
        auto p = dir / candidate;
        if (std::filesystem::exists(p)) return p;
    }
    return {};
}

}  // namespace

void Dataset::validate() const {
    if (labels.size() != examples.size())
        throw Error(ErrorCode::CountMismatch, "labels.len != examples.len in '" + name + "'");
    const std::size_t d = dim();
    for (std::size_t i = 0; i < examples.size(); ++i) {
        require_dim(examples[i].size(), d, "example " + std::to_string(i));
        for (double v : examples[i])
            if (!(v >= pixel_range.lo && v <= pixel_range.hi))
                throw Error(ErrorCode::InvalidArgument,
                            "pixel outside range in example " + std::to_string(i));
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw Error(ErrorCode::InvalidArgument, "label out of range in example " +
                                                        std::to_string(i));
    }
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
    Dataset out;
    out.pixel_range = pixel_range;
    out.shape = shape;
    out.num_classes = num_classes;
    out.name = name;
    begin = std::min(begin, size());
    const std::size_t end = std::min(size(), begin + count);
    out.examples.assign(examples.begin() + begin, examples.begin() + end);
    out.labels.assign(labels.begin() + begin, labels.begin() + end);
    return out;
}

Dataset parse_idx(std::span<const std::uint8_t> image_bytes,
                  std::span<const std::uint8_t> label_bytes, std::string name) {
    const auto image_magic = read_be32(image_bytes, 0, "image magic");
    if (image_magic != kIdxImageMagic)
        throw Error(ErrorCode::BadMagic, "image magic is " + std::to_string(image_magic) +
                                             ", expected 2051");
    const auto label_magic = read_be32(label_bytes, 0, "label magic");
    if (label_magic != kIdxLabelMagic)
        throw Error(ErrorCode::BadMagic, "label magic is " + std::to_string(label_magic) +
                                             ", expected 2049");

    const std::size_t count = read_be32(image_bytes, 4, "image count");
    const std::size_t rows = read_be32(image_bytes, 8, "rows");
    const std::size_t cols = read_be32(image_bytes, 12, "cols");
    const std::size_t label_count = read_be32(label_bytes, 4, "label count");
    if (count != label_count)
        throw Error(ErrorCode::CountMismatch, "image count " + std::to_string(count) +
                                                  " != label count " + std::to_string(label_count));

    const std::size_t pixels = rows * cols;
    if (image_bytes.size() < 16 + count * pixels)
        throw Error(ErrorCode::TruncatedFile,
                    "image data holds " + std::to_string(image_bytes.size() - 16) +
                        " bytes, header declares " + std::to_string(count * pixels));
    if (label_bytes.size() < 8 + count)
        throw Error(ErrorCode::TruncatedFile,
                    "label data holds " + std::to_string(label_bytes.size() - 8) +
                        " bytes, header declares " + std::to_string(count));

    Dataset data;
    data.name = std::move(name);
    data.shape = {rows, cols, 1};
    data.pixel_range = {0.0, 1.0};
    data.examples.reserve(count);
    data.labels.reserve(count);
    int max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        Vector x(pixels);
        const auto* src = image_bytes.data() + 16 + i * pixels;
        for (std::size_t p = 0; p < pixels; ++p) x[p] = src[p] / 255.0;
        data.examples.push_back(std::move(x));
        const int label = label_bytes[8 + i];
        max_label = std::max(max_label, label);
        data.labels.push_back(label);
    }
    data.num_classes = std::max(10, max_label + 1);
    return data;
}

Dataset parse_cifar10(std::span<const std::uint8_t> batch_bytes, std::string name) {
    if (batch_bytes.empty() || batch_bytes.size() % kCifarRecord != 0)
        throw Error(ErrorCode::TruncatedFile,
                    "CIFAR-10 batch length " + std::to_string(batch_bytes.size()) +
                        " is not a positive multiple of 3073");
    const std::size_t count = batch_bytes.size() / kCifarRecord;
    Dataset data;
    data.name = std::move(name);
    data.shape = {32, 32, 3};
    data.pixel_range = {0.0, 1.0};
    data.num_classes = 10;
    for (std::size_t i = 0; i < count; ++i) {
        const auto* rec = batch_bytes.data() + i * kCifarRecord;
        data.labels.push_back(rec[0]);
        Vector x(kCifarPixels);
        for (std::size_t p = 0; p < kCifarPixels; ++p) x[p] = rec[1 + p] / 255.0;
        data.examples.push_back(std::move(x));
    }
    return data;
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& data) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + data.size() * data.dim());
    write_be32(out, kIdxImageMagic);
    write_be32(out, static_cast<std::uint32_t>(data.size()));
    write_be32(out, static_cast<std::uint32_t>(data.shape.height));
    write_be32(out, static_cast<std::uint32_t>(data.shape.width));
    for (const auto& x : data.examples)
        for (double v : x)
            out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& data) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + data.size());
    write_be32(out, kIdxLabelMagic);
    write_be32(out, static_cast<std::uint32_t>(data.size()));
    for (int label : data.labels) out.push_back(static_cast<std::uint8_t>(label));
    return out;
}

Dataset make_synthetic(std::uint64_t seed, std::size_t n, std::size_t side, int classes) {
    if (classes < 2) throw Error(ErrorCode::InvalidArgument, "synthetic data needs >= 2 classes");
    if (side < 4) throw Error(ErrorCode::InvalidArgument, "synthetic side must be >= 4");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.06);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const double center = (static_cast<double>(side) - 1.0) / 2.0;
    const double width = std::max(0.8, static_cast<double>(side) / 10.0);
    const double half_length = static_cast<double>(side) * 0.38;

    Dataset data;
    data.name = "synthetic";
    data.shape = {side, side, 1};
    data.pixel_range = {0.0, 1.0};
    data.num_classes = classes;
    data.examples.reserve(n);
    data.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        // Round-robin labels so every class appears once n >= classes.
        const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
        const double angle = std::numbers::pi * label / classes;
        const double shift = (unit(rng) - 0.5) * 1.5;
        const double gain = 0.75 + 0.25 * unit(rng);
        const double ca = std::cos(angle);
        const double sa = std::sin(angle);
        Vector x(side * side, 0.0);
        for (std::size_t r = 1; r + 1 < side; ++r) {
            for (std::size_t c = 1; c + 1 < side; ++c) {
                const double dy = static_cast<double>(r) - center;
                const double dx = static_cast<double>(c) - center;
                const double along = dx * ca + dy * sa;
                const double across = -dx * sa + dy * ca - shift;
                double v = 0.0;
                if (std::abs(along) <= half_length)
                    v = gain * std::exp(-0.5 * (across * across) / (width * width));
                v += noise(rng);
                x[r * side + c] = std::clamp(v, 0.0, 1.0);
            }
        }
        data.examples.push_back(std::move(x));
        data.labels.push_back(label);
    }
    return data;
}

std::pair<CenteredDataset, std::vector<CenteredDataset>> center_data(
    const Dataset& train, std::span<const Dataset> others) {
    const std::size_t d = train.dim();
    Vector mean(d, 0.0);
    for (const auto& x : train.examples) {
        require_dim(x.size(), d, "training example");
        for (std::size_t j = 0; j < d; ++j) mean[j] += x[j];
    }
    if (!train.examples.empty())
        for (double& m : mean) m /= static_cast<double>(train.size());

    auto center = [&](const Dataset& data) {
        require_dim(data.dim(), d, "dataset '" + data.name + "' dimension");
        CenteredDataset out;
        out.base = data;
        out.mean = mean;
        out.centered.reserve(data.size());
        for (const auto& x : data.examples) {
            require_dim(x.size(), d, "example of '" + data.name + "'");
            Vector c(d);
            for (std::size_t j = 0; j < d; ++j) c[j] = x[j] - mean[j];
            out.centered.push_back(std::move(c));
        }
        return out;
    };

    std::vector<CenteredDataset> rest;
    rest.reserve(others.size());
    for (const auto& o : others) rest.push_back(center(o));
    return {center(train), std::move(rest)};
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw Error(ErrorCode::FileNotFound, path.string());
    if (path.extension() == ".gz") {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (f == nullptr) throw Error(ErrorCode::FileNotFound, path.string());
        std::vector<std::uint8_t> out;
        std::uint8_t buf[1 << 16];
        int got = 0;
        while ((got = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + got);
        const bool failed = got < 0;
        gzclose(f);
        if (failed) throw Error(ErrorCode::BadFormat, "corrupt gzip stream in " + path.string());
        return out;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FileNotFound, path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool mnist_available(const std::filesystem::path& dir) {
    for (const char* stem : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"})
        if (find_variant(dir, stem).empty()) return false;
    return true;
}

TrainTestSplit load_mnist_dir(const std::filesystem::path& dir) {
    auto need = [&](const std::string& stem) {
        auto p = find_variant(dir, stem);
        if (p.empty()) throw Error(ErrorCode::FileNotFound, (dir / stem).string());
        return p;
    };
    const auto train_images = read_file_bytes(need("train-images-idx3-ubyte"));
    const auto train_labels = read_file_bytes(need("train-labels-idx1-ubyte"));
    const auto test_images = read_file_bytes(need("t10k-images-idx3-ubyte"));
    const auto test_labels = read_file_bytes(need("t10k-labels-idx1-ubyte"));
    return {parse_idx(train_images, train_labels, "mnist-train"),
            parse_idx(test_images, test_labels, "mnist-test")};
}

Dataset load_cifar10_batches(std::span<const std::filesystem::path> files) {
    Dataset all;
    bool first = true;
    for (const auto& f : files) {
        auto part = parse_cifar10(read_file_bytes(f), f.filename().string());
        if (first) {
            all = std::move(part);
            all.name = "cifar10";
            first = false;
            continue;
        }
        all.examples.insert(all.examples.end(), part.examples.begin(), part.examples.end());
        all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    }
    if (first) throw Error(ErrorCode::EmptyDataset, "no CIFAR-10 batch files given");
    return all;
}

}  // namespace advdet
