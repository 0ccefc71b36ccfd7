#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "idda/image_io.hpp"
#include "idda/rng.hpp"
#include "idda/tensor.hpp"

namespace idda {

/// Labeled source domain: x is [n, ...sample shape], labels[i] < num_classes.
struct LabeledSet {
  Tensor<float> x;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
};

/// Unlabeled target domain. hidden_labels exist for evaluation only and are
/// never handed to the training step.
struct UnlabeledSet {
  Tensor<float> x;
  std::optional<std::vector<std::size_t>> hidden_labels;

  std::size_t size() const { return x.empty() ? 0 : x.rows(); }
};

struct DomainPair {
  LabeledSet source;
  UnlabeledSet target;
};

// ---------------------------------------------------------------------------
// Synthetic benchmarks

struct SyntheticShiftConfig {
  std::size_t num_classes = 3;
  std::size_t modes_per_class = 2;
  /// Radius of the circle the default mode centers are placed on.
  double center_radius = 4.0;
  /// Explicit mode centers (num_classes * modes_per_class of them, class
  /// major). Empty means evenly spaced on the circle, classes interleaved.
  std::vector<std::array<double, 2>> centers;
  double cov_scale = 0.5;
  double rotation_deg = 30.0;
  std::array<double, 2> translation{0.0, 0.0};
  std::size_t n_source = 600;
  std::size_t n_target = 600;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes == 0 || modes_per_class == 0) throw Error("synthetic: classes and modes must be positive");
    if (n_source == 0 || n_target == 0) throw Error("synthetic: n_source and n_target must be positive");
    if (!(cov_scale > 0.0) || !std::isfinite(cov_scale)) throw Error("synthetic: degenerate covariance scale");
    if (!centers.empty() && centers.size() != num_classes * modes_per_class) {
      throw Error("synthetic: expected " + std::to_string(num_classes * modes_per_class) + " centers");
    }
  }

  /// Center of mode j of class c (before any domain shift).
  std::array<double, 2> center(std::size_t c, std::size_t j) const {
    if (!centers.empty()) return centers[c * modes_per_class + j];
    const std::size_t slot = j * num_classes + c;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(slot) /
                         static_cast<double>(num_classes * modes_per_class);
    return {center_radius * std::cos(angle), center_radius * std::sin(angle)};
  }
};

inline std::array<double, 2> rotate_translate(std::array<double, 2> p, double degrees,
                                              std::array<double, 2> shift = {0.0, 0.0},
                                              std::array<double, 2> pivot = {0.0, 0.0}) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double x = p[0] - pivot[0], y = p[1] - pivot[1];
  return {std::cos(a) * x - std::sin(a) * y + pivot[0] + shift[0],
          std::sin(a) * x + std::cos(a) * y + pivot[1] + shift[1]};
}

namespace detail {

/// Class sequence with counts balanced to within one, in shuffled order.
inline std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i % classes;
  rng.shuffle(y.begin(), y.end());
  return y;
}

}  // namespace detail

/// Class-conditional Gaussian mixture; the target domain is a fresh sample of
/// the same mixture pushed through the configured rotation and translation.
inline DomainPair gen_gaussian_modes(const SyntheticShiftConfig& cfg) {
  cfg.validate();
  auto draw = [&](std::size_t n, const char* stream, bool shifted, std::vector<std::size_t>& labels) {
    Rng rng(cfg.seed, stream);
    labels = detail::balanced_labels(n, cfg.num_classes, rng);
    Tensor<float> x({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t mode = static_cast<std::size_t>(rng.below(cfg.modes_per_class));
      const auto c = cfg.center(labels[i], mode);
      std::array<double, 2> p{c[0] + cfg.cov_scale * rng.normal(), c[1] + cfg.cov_scale * rng.normal()};
      if (shifted) p = rotate_translate(p, cfg.rotation_deg, cfg.translation);
      x[2 * i] = static_cast<float>(p[0]);
      x[2 * i + 1] = static_cast<float>(p[1]);
    }
    return x;
  };
  DomainPair d;
  d.source.num_classes = cfg.num_classes;
  d.source.x = draw(cfg.n_source, "gaussian/source", false, d.source.labels);
  std::vector<std::size_t> hidden;
  d.target.x = draw(cfg.n_target, "gaussian/target", true, hidden);
  d.target.hidden_labels = std::move(hidden);
  return d;
}

/// Two interleaved half circles (upper moon class 0, lower moon class 1).
/// The target is a fresh draw rotated by shift_angle degrees about the
/// center of the data.
inline DomainPair gen_two_moons(double shift_angle_deg, std::size_t n_source, std::size_t n_target,
                                double noise, std::uint64_t seed) {
  if (!(noise >= 0.0)) throw Error("two_moons: noise must be >= 0");
  if (n_source == 0 || n_target == 0) throw Error("two_moons: sample counts must be positive");
  const std::array<double, 2> pivot{0.5, 0.25};
  auto draw = [&](std::size_t n, const char* stream, double angle, std::vector<std::size_t>& labels) {
    Rng rng(seed, stream);
    labels = detail::balanced_labels(n, 2, rng);
    Tensor<float> x({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      const double t = std::numbers::pi * rng.uniform();
      std::array<double, 2> p = labels[i] == 0 ? std::array<double, 2>{std::cos(t), std::sin(t)}
                                               : std::array<double, 2>{1.0 - std::cos(t), 0.5 - std::sin(t)};
      p[0] += noise * rng.normal();
      p[1] += noise * rng.normal();
      p = rotate_translate(p, angle, {0.0, 0.0}, pivot);
      x[2 * i] = static_cast<float>(p[0]);
      x[2 * i + 1] = static_cast<float>(p[1]);
    }
    return x;
  };
  DomainPair d;
  d.source.num_classes = 2;
  d.source.x = draw(n_source, "moons/source", 0.0, d.source.labels);
  std::vector<std::size_t> hidden;
  d.target.x = draw(n_target, "moons/target", shift_angle_deg, hidden);
  d.target.hidden_labels = std::move(hidden);
  return d;
}

// ---------------------------------------------------------------------------
// IDX files (big-endian headers, unsigned byte payload)

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::vector<std::uint8_t>> images;
};

namespace detail {

inline std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

inline void write_all(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace detail

inline IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw Error("idx images: truncated header");
  if (detail::be32(bytes, 0) != kIdxImageMagic) throw Error("idx images: wrong magic");
  const std::uint32_t count = detail::be32(bytes, 4);
  IdxImages out;
  out.rows = detail::be32(bytes, 8);
  out.cols = detail::be32(bytes, 12);
  const std::size_t stride = std::size_t{out.rows} * out.cols;
  if (bytes.size() - 16 < std::size_t{count} * stride) throw Error("idx images: truncated payload");
  out.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto first = bytes.begin() + static_cast<std::ptrdiff_t>(16 + i * stride);
    out.images.emplace_back(first, first + static_cast<std::ptrdiff_t>(stride));
  }
  return out;
}

inline std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw Error("idx labels: truncated header");
  if (detail::be32(bytes, 0) != kIdxLabelMagic) throw Error("idx labels: wrong magic");
  const std::uint32_t count = detail::be32(bytes, 4);
  if (bytes.size() - 8 < count) throw Error("idx labels: truncated payload");
  return std::vector<std::uint8_t>(bytes.begin() + 8, bytes.begin() + 8 + count);
}

inline std::vector<std::uint8_t> serialize_idx_images(const IdxImages& imgs) {
  std::vector<std::uint8_t> b;
  detail::put_be32(b, kIdxImageMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(imgs.images.size()));
  detail::put_be32(b, imgs.rows);
  detail::put_be32(b, imgs.cols);
  for (const auto& im : imgs.images) b.insert(b.end(), im.begin(), im.end());
  return b;
}

inline std::vector<std::uint8_t> serialize_idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  detail::put_be32(b, kIdxLabelMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

inline void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                      const IdxImages& imgs, const std::vector<std::uint8_t>& labels) {
  detail::write_all(images_path, serialize_idx_images(imgs));
  detail::write_all(labels_path, serialize_idx_labels(labels));
}

/// Reads an IDX image/label pair into [n, 1, rows, cols] with pixels / 255.
/// At most `limit` samples are kept when limit > 0.
inline LabeledSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                           std::size_t limit = 0) {
  const IdxImages imgs = parse_idx_images(detail::read_all(images_path));
  const std::vector<std::uint8_t> labels = parse_idx_labels(detail::read_all(labels_path));
  if (imgs.images.size() != labels.size()) {
    throw Error("idx: image count " + std::to_string(imgs.images.size()) + " does not match label count " +
                std::to_string(labels.size()));
  }
  if (imgs.images.empty()) throw Error("idx: no samples");
  const std::size_t n = limit > 0 ? std::min(limit, imgs.images.size()) : imgs.images.size();
  const std::size_t stride = std::size_t{imgs.rows} * imgs.cols;
  LabeledSet out;
  out.x = Tensor<float>({n, 1, imgs.rows, imgs.cols});
  out.labels.resize(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < stride; ++p) {
      out.x[i * stride + p] = static_cast<float>(imgs.images[i][p]) / 255.0f;
    }
    out.labels[i] = labels[i];
    max_label = std::max<std::size_t>(max_label, labels[i]);
  }
  out.num_classes = std::max<std::size_t>(10, max_label + 1);
  return out;
}

/// Repeats a single-channel image set across three channels so it can share
/// a network with RGB targets.
inline Tensor<float> gray_to_rgb(const Tensor<float>& x) {
  if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("gray_to_rgb: expected [n, 1, h, w]");
  const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
  Tensor<float> out({n, 3, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      std::copy(x.data() + i * plane, x.data() + (i + 1) * plane, out.data() + (i * 3 + c) * plane);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// MNIST-M style target synthesis

/// Procedural patches: smooth low-frequency RGB noise.
struct ProceduralPatches {
  std::size_t grid = 4;
};

/// Patches cropped from photos.
struct ImagePatches {
  std::vector<RgbImage> images;
};

using PatchSource = std::variant<ProceduralPatches, ImagePatches>;

namespace detail {

inline void procedural_patch(const ProceduralPatches& src, std::size_t h, std::size_t w, Rng& rng,
                             std::vector<float>& patch) {
  const std::size_t g = std::max<std::size_t>(src.grid, 2);
  std::vector<double> coarse(3 * g * g);
  for (std::size_t c = 0; c < 3; ++c) {
    const double base = rng.uniform();
    for (std::size_t k = 0; k < g * g; ++k) {
      coarse[c * g * g + k] = std::clamp(base + 0.35 * (rng.uniform() - 0.5) * 2.0, 0.0, 1.0);
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      const double fy = static_cast<double>(i) * static_cast<double>(g - 1) / static_cast<double>(h - 1);
      const std::size_t y0 = std::min(static_cast<std::size_t>(fy), g - 2);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t j = 0; j < w; ++j) {
        const double fx = static_cast<double>(j) * static_cast<double>(g - 1) / static_cast<double>(w - 1);
        const std::size_t x0 = std::min(static_cast<std::size_t>(fx), g - 2);
        const double tx = fx - static_cast<double>(x0);
        const double* q = coarse.data() + c * g * g;
        const double v = (1 - ty) * ((1 - tx) * q[y0 * g + x0] + tx * q[y0 * g + x0 + 1]) +
                         ty * ((1 - tx) * q[(y0 + 1) * g + x0] + tx * q[(y0 + 1) * g + x0 + 1]);
        patch[(c * h + i) * w + j] = static_cast<float>(v);
      }
    }
  }
}

inline void image_patch(const ImagePatches& src, std::size_t h, std::size_t w, Rng& rng,
                        std::vector<float>& patch) {
  const RgbImage& img = src.images[rng.below(src.images.size())];
  if (img.height < h || img.width < w) throw Error("patch image smaller than the digit");
  const std::size_t r0 = rng.below(img.height - h + 1);
  const std::size_t c0 = rng.below(img.width - w + 1);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) patch[(c * h + i) * w + j] = img.channel(r0 + i, c0 + j, c);
    }
  }
}

}  // namespace detail

/// Blends each single-channel digit over a random colour patch as
/// out = |patch - digit| per channel. Each sample draws from its own stream
/// (seed, index), so the result does not depend on processing order.
inline UnlabeledSet synth_mnist_m(const LabeledSet& source, const PatchSource& patches, std::uint64_t seed) {
  const Tensor<float>& x = source.x;
  if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("synth_mnist_m: source images must be [n, 1, h, w]");
  if (const auto* ip = std::get_if<ImagePatches>(&patches); ip && ip->images.empty()) {
    throw Error("synth_mnist_m: empty patch set");
  }
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), plane = h * w;
  UnlabeledSet out;
  out.x = Tensor<float>({n, 3, h, w});
  std::vector<float> patch(3 * plane);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, "mnist_m", i);
    std::visit(
        [&](const auto& src) {
          using S = std::decay_t<decltype(src)>;
          if constexpr (std::is_same_v<S, ProceduralPatches>) {
            detail::procedural_patch(src, h, w, rng, patch);
          } else {
            detail::image_patch(src, h, w, rng, patch);
          }
        },
        patches);
    const float* digit = x.data() + i * plane;
    float* dst = out.x.data() + i * 3 * plane;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < plane; ++p) dst[c * plane + p] = std::abs(patch[c * plane + p] - digit[p]);
    }
  }
  out.hidden_labels = source.labels;
  return out;
}

}  // namespace idda
