#pragma once

// Data ingestion (IDX files and a synthetic blob generator), label/image noise
// injection with ground-truth bookkeeping, and non-IID client partitioning.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedss/error.hpp"
#include "fedss/matrix.hpp"
#include "fedss/rng.hpp"

namespace fedss {

struct LabeledDataset {
    Matrix images;                       // n x (rows * cols), pixels in [0, 1]
    std::vector<int> labels;
    std::vector<std::uint8_t> noise_flag;  // 1 = injected noise
    std::vector<int> origin_label;       // label before injection
    std::size_t image_rows = 0;
    std::size_t image_cols = 0;
    std::size_t class_count = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t input_dim() const { return images.cols(); }

    std::size_t noisy_count() const {
        return static_cast<std::size_t>(std::count(noise_flag.begin(), noise_flag.end(), std::uint8_t{1}));
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(class_count, 0);
        for (int y : labels) ++counts[static_cast<std::size_t>(y)];
        return counts;
    }

    LabeledDataset subset(std::span<const std::size_t> indices) const {
        LabeledDataset out;
        out.images = images.gather(indices);
        out.image_rows = image_rows;
        out.image_cols = image_cols;
        out.class_count = class_count;
        for (auto i : indices) {
            out.labels.push_back(labels[i]);
            out.noise_flag.push_back(noise_flag[i]);
            out.origin_label.push_back(origin_label[i]);
        }
        return out;
    }
};

struct ClientShard {
    std::size_t client_id = 0;
    std::vector<std::size_t> indices;  // ascending, into the parent dataset

    std::size_t size() const { return indices.size(); }
};

/// Half-up rounding used for every quota.
inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

class IdxError : public InputError {
public:
    enum class Kind { bad_magic, truncated, count_mismatch, io };

    IdxError(Kind kind, const std::string& what) : InputError(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    if (bytes.size() < offset + 4) throw IdxError(IdxError::Kind::truncated, "idx: truncated header");
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IdxError(IdxError::Kind::io, "idx: cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

struct IdxImages {
    std::size_t rows = 0, cols = 0;
    Matrix pixels;  // count x (rows * cols), scaled to [0, 1]
};

inline IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
    const auto magic = detail::read_be32(bytes, 0);
    if (magic != kIdxImageMagic) throw IdxError(IdxError::Kind::bad_magic, "idx: bad image magic");
    const std::size_t count = detail::read_be32(bytes, 4);
    IdxImages out;
    out.rows = detail::read_be32(bytes, 8);
    out.cols = detail::read_be32(bytes, 12);
    const std::size_t dim = out.rows * out.cols;
    if (bytes.size() < 16 + count * dim) throw IdxError(IdxError::Kind::truncated, "idx: truncated image data");
    out.pixels = Matrix(count, dim);
    for (std::size_t i = 0; i < count * dim; ++i) out.pixels.data()[i] = bytes[16 + i] / 255.0;
    return out;
}

inline std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
    const auto magic = detail::read_be32(bytes, 0);
    if (magic != kIdxLabelMagic) throw IdxError(IdxError::Kind::bad_magic, "idx: bad label magic");
    const std::size_t count = detail::read_be32(bytes, 4);
    if (bytes.size() < 8 + count) throw IdxError(IdxError::Kind::truncated, "idx: truncated label data");
    return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

inline LabeledDataset idx_dataset(std::span<const std::uint8_t> image_bytes,
                                  std::span<const std::uint8_t> label_bytes) {
    auto imgs = parse_idx_images(image_bytes);
    auto labels = parse_idx_labels(label_bytes);
    if (labels.size() != imgs.pixels.rows())
        throw IdxError(IdxError::Kind::count_mismatch,
                       "idx: " + std::to_string(imgs.pixels.rows()) + " images but " +
                           std::to_string(labels.size()) + " labels");
    LabeledDataset ds;
    ds.images = std::move(imgs.pixels);
    ds.image_rows = imgs.rows;
    ds.image_cols = imgs.cols;
    ds.class_count = labels.empty() ? 0 : static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
    ds.origin_label = labels;
    ds.labels = std::move(labels);
    ds.noise_flag.assign(ds.labels.size(), 0);
    return ds;
}

inline LabeledDataset load_idx(const std::string& image_path, const std::string& label_path) {
    const auto img = detail::read_file(image_path);
    const auto lbl = detail::read_file(label_path);
    return idx_dataset(img, lbl);
}

/// Encodes a dataset back to IDX bytes; pixels are rounded to the nearest byte.
inline std::vector<std::uint8_t> encode_idx_images(const Matrix& pixels, std::size_t rows, std::size_t cols) {
    std::vector<std::uint8_t> out;
    detail::write_be32(out, kIdxImageMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(pixels.rows()));
    detail::write_be32(out, static_cast<std::uint32_t>(rows));
    detail::write_be32(out, static_cast<std::uint32_t>(cols));
    for (double v : pixels.data())
        out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    return out;
}

inline std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels) {
    std::vector<std::uint8_t> out;
    detail::write_be32(out, kIdxLabelMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
    for (int y : labels) out.push_back(static_cast<std::uint8_t>(y));
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

/// Noise-free template of class `cls`: a bright Gaussian blob whose position
/// depends only on (cls, class_count, variant). Variant 0 places blobs on an
/// outer ring; other variants use a smaller, rotated ring so their templates
/// never coincide with variant 0 (used as an open-set source).
inline std::vector<double> synth_template(std::size_t cls, std::size_t class_count, std::size_t side,
                                          std::size_t variant = 0) {
    const double s = static_cast<double>(side);
    const double centre = (s - 1.0) / 2.0;
    const double ring = s * 0.3 / (1.0 + static_cast<double>(variant));
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(class_count) +
                         static_cast<double>(variant) * std::numbers::pi / static_cast<double>(class_count);
    const double cy = centre + ring * std::sin(angle);
    const double cx = centre + ring * std::cos(angle);
    const double sigma = std::max(s / 8.0, 0.75);
    std::vector<double> t(side * side);
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
            const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
            t[r * side + c] = 0.9 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    return t;
}

/// per_class samples of each class, class-major order, each the class template
/// plus uniform noise in [-0.1, 0.1] clipped to [0, 1].
inline LabeledDataset synth_generate(std::size_t class_count, std::size_t per_class, std::size_t image_side,
                                     std::uint64_t seed, std::size_t variant = 0) {
    if (class_count < 2) throw ConfigError("synth: class_count must be at least 2");
    if (image_side < 2) throw ConfigError("synth: image_side must be at least 2");
    auto rng = stream(seed, "synth", variant);
    LabeledDataset ds;
    ds.image_rows = ds.image_cols = image_side;
    ds.class_count = class_count;
    const std::size_t dim = image_side * image_side;
    ds.images = Matrix(class_count * per_class, dim);
    std::size_t row = 0;
    for (std::size_t c = 0; c < class_count; ++c) {
        const auto tmpl = synth_template(c, class_count, image_side, variant);
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            auto px = ds.images.row(row);
            for (std::size_t p = 0; p < dim; ++p) px[p] = std::clamp(tmpl[p] + uniform_real(rng, -0.1, 0.1), 0.0, 1.0);
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    ds.origin_label = ds.labels;
    ds.noise_flag.assign(ds.labels.size(), 0);
    return ds;
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

enum class NoiseKind { none, closed_set, open_set };

inline void check_rate(double rate) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("noise rate must lie in [0, 1]");
}

/// Relabels exactly round(rate * n) distinct samples with a label drawn
/// uniformly from the other k - 1 classes.
inline LabeledDataset inject_closed_set(LabeledDataset ds, double rate, std::uint64_t seed) {
    check_rate(rate);
    if (ds.class_count < 2) throw ConfigError("closed-set noise needs at least two classes");
    auto rng = stream(seed, "noise.closed");
    const auto quota = round_half_up(rate * static_cast<double>(ds.size()));
    for (auto i : sample_without_replacement(rng, ds.size(), quota)) {
        const auto shift = 1 + uniform_index(rng, ds.class_count - 1);
        ds.labels[i] = static_cast<int>((static_cast<std::size_t>(ds.origin_label[i]) + shift) % ds.class_count);
        ds.noise_flag[i] = 1;
    }
    return ds;
}

/// For each class c, replaces the images of round(rate * n_c) class-c samples
/// with images from `source`, keeping their labels. Source images are used
/// without replacement until exhausted, then with replacement.
inline LabeledDataset inject_open_set(LabeledDataset ds, const LabeledDataset& source, double rate,
                                      std::uint64_t seed) {
    check_rate(rate);
    if (source.size() == 0) throw ConfigError("open-set source dataset is empty");
    if (source.input_dim() != ds.input_dim()) throw ConfigError("open-set source image size differs from dataset");
    auto rng = stream(seed, "noise.open");
    const auto pool = permutation(rng, source.size());
    std::size_t next = 0;
    for (std::size_t c = 0; c < ds.class_count; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (static_cast<std::size_t>(ds.labels[i]) == c) members.push_back(i);
        const auto quota = round_half_up(rate * static_cast<double>(members.size()));
        for (auto pick : sample_without_replacement(rng, members.size(), quota)) {
            const std::size_t src = next < pool.size() ? pool[next++] : uniform_index(rng, source.size());
            auto dst = ds.images.row(members[pick]);
            auto from = source.images.row(src);
            std::copy(from.begin(), from.end(), dst.begin());
            ds.noise_flag[members[pick]] = 1;
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

struct PartitionScheme {
    enum class Kind { dirichlet, shard };
    Kind kind = Kind::dirichlet;
    double alpha = 0.5;
    std::size_t shards_per_client = 2;
    friend bool operator==(const PartitionScheme&, const PartitionScheme&) = default;
};

namespace detail {

inline std::vector<double> dirichlet(Engine& rng, std::size_t n, double alpha) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> p(n);
    double sum = 0.0;
    for (auto& v : p) sum += (v = gamma(rng));
    if (sum <= 0.0) {
        p.assign(n, 0.0);
        p[uniform_index(rng, n)] = 1.0;
        return p;
    }
    for (auto& v : p) v /= sum;
    return p;
}

}  // namespace detail

inline std::vector<ClientShard> partition_noniid(const LabeledDataset& ds, std::size_t clients,
                                                 const PartitionScheme& scheme, std::uint64_t seed) {
    if (clients < 1) throw ConfigError("partition: client count must be at least 1");
    if (clients > ds.size())
        throw ConfigError("partition: " + std::to_string(clients) + " clients but only " +
                          std::to_string(ds.size()) + " samples");
    auto rng = stream(seed, "partition");
    std::vector<std::vector<std::size_t>> owned(clients);

    if (scheme.kind == PartitionScheme::Kind::dirichlet) {
        if (!(scheme.alpha > 0.0)) throw ConfigError("partition.alpha must be positive");
        for (std::size_t c = 0; c < ds.class_count; ++c) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < ds.size(); ++i)
                if (static_cast<std::size_t>(ds.labels[i]) == c) members.push_back(i);
            const auto order = permutation(rng, members.size());
            const auto p = detail::dirichlet(rng, clients, scheme.alpha);
            double cum = 0.0;
            std::size_t begin = 0;
            for (std::size_t k = 0; k < clients; ++k) {
                cum += p[k];
                const std::size_t end = k + 1 == clients ? members.size()
                                                         : std::min(members.size(), round_half_up(cum * static_cast<double>(members.size())));
                for (std::size_t j = begin; j < end; ++j) owned[k].push_back(members[order[j]]);
                begin = std::max(begin, end);
            }
        }
        // Repair: hand one sample from the currently largest client to each empty one.
        for (auto& target : owned) {
            if (!target.empty()) continue;
            auto donor = std::max_element(owned.begin(), owned.end(),
                                          [](const auto& a, const auto& b) { return a.size() < b.size(); });
            target.push_back(donor->back());
            donor->pop_back();
        }
    } else {
        const std::size_t per = scheme.shards_per_client;
        if (per < 1) throw ConfigError("partition.shards_per_client must be at least 1");
        const std::size_t shard_count = clients * per;
        if (shard_count > ds.size())
            throw ConfigError("partition: more shards than samples");
        std::vector<std::size_t> order(ds.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return ds.labels[a] < ds.labels[b]; });
        const auto shard_order = permutation(rng, shard_count);
        for (std::size_t s = 0; s < shard_count; ++s) {
            const std::size_t shard = shard_order[s];
            const std::size_t begin = shard * ds.size() / shard_count;
            const std::size_t end = (shard + 1) * ds.size() / shard_count;
            auto& dst = owned[s / per];
            dst.insert(dst.end(), order.begin() + static_cast<std::ptrdiff_t>(begin),
                       order.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }

    std::vector<ClientShard> shards(clients);
    for (std::size_t k = 0; k < clients; ++k) {
        shards[k].client_id = k;
        shards[k].indices = std::move(owned[k]);
        std::sort(shards[k].indices.begin(), shards[k].indices.end());
    }
    return shards;
}

}  // namespace fedss
