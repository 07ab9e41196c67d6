#pragma once

// Diagonal 2x2 down-sampling into two sub-images, Gaussian corruption and
// up-sampling back to the parent resolution.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "smoothcert/error.hpp"
#include "smoothcert/rng.hpp"

namespace smoothcert {

struct Shape3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  constexpr std::size_t size() const { return channels * height * width; }
  constexpr std::size_t plane() const { return height * width; }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::string to_string(const Shape3& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

/// C x H x W image stored channel-major. Clean images hold values in [0, 1];
/// noised images are exempt from that check.
class ImageTensor {
 public:
  static ImageTensor clean(Shape3 shape, std::vector<double> data) {
    ImageTensor t(shape, std::move(data), false);
    for (double v : t.data_) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw DomainError("clean image value outside [0,1]: " + std::to_string(v));
      }
    }
    return t;
  }

  static ImageTensor noised(Shape3 shape, std::vector<double> data) {
    return ImageTensor(shape, std::move(data), true);
  }

  static ImageTensor filled(Shape3 shape, double value) {
    return clean(shape, std::vector<double>(shape.size(), value));
  }

  const Shape3& shape() const { return shape_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }
  bool is_noised() const { return noised_; }
  std::span<const double> data() const { return data_; }

  double at(std::size_t c, std::size_t row, std::size_t col) const {
    return data_[(c * shape_.height + row) * shape_.width + col];
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  ImageTensor(Shape3 shape, std::vector<double> data, bool noised)
      : shape_(shape), data_(std::move(data)), noised_(noised) {
    if (shape.channels == 0 || shape.height == 0 || shape.width == 0) {
      throw DomainError("image dimensions must be positive");
    }
    if (data_.size() != shape.size()) {
      throw DomainError("image data length " + std::to_string(data_.size()) +
                        " does not match shape " + to_string(shape));
    }
  }

  Shape3 shape_;
  std::vector<double> data_;
  bool noised_ = false;
};

struct PixelCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  friend constexpr bool operator==(const PixelCoord&, const PixelCoord&) = default;
  friend constexpr auto operator<=>(const PixelCoord&, const PixelCoord&) = default;
};

/// Two disjoint pixel sets covering the (even-padded) grid. Entry
/// r * (padded_width / 2) + c of each list is pixel (r, c) of that sub-image.
struct PartitionIndex {
  std::vector<PixelCoord> left_indices;
  std::vector<PixelCoord> right_indices;
  std::size_t source_height = 0;
  std::size_t source_width = 0;
  std::size_t padded_height = 0;
  std::size_t padded_width = 0;

  std::size_t sub_height() const { return padded_height; }
  std::size_t sub_width() const { return padded_width / 2; }
  bool is_padded() const {
    return padded_height != source_height || padded_width != source_width;
  }
  /// True for positions that only exist because of edge-replication padding.
  bool is_replicated(PixelCoord p) const {
    return p.row >= source_height || p.col >= source_width;
  }
};

/// Each 2x2 block at even offsets sends its main diagonal to the left set and
/// its anti-diagonal to the right set. Odd sizes are padded up to even.
inline PartitionIndex make_diagonal_partition(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw DomainError("partition needs positive dimensions");
  PartitionIndex idx;
  idx.source_height = height;
  idx.source_width = width;
  idx.padded_height = height + height % 2;
  idx.padded_width = width + width % 2;
  const std::size_t half = idx.padded_height * idx.padded_width / 2;
  idx.left_indices.reserve(half);
  idx.right_indices.reserve(half);
  for (std::size_t r = 0; r < idx.padded_height; ++r) {
    for (std::size_t c = 0; c < idx.padded_width; ++c) {
      if (r % 2 == c % 2) {
        idx.left_indices.push_back({r, c});
      } else {
        idx.right_indices.push_back({r, c});
      }
    }
  }
  return idx;
}

struct SubImagePair {
  ImageTensor left;
  ImageTensor right;
  Shape3 parent_shape;  // padded parent
};

/// Edge-replication padding to the partition's padded grid.
inline ImageTensor pad_to(const ImageTensor& x, std::size_t padded_h, std::size_t padded_w) {
  if (x.height() == padded_h && x.width() == padded_w) return x;
  const Shape3 out_shape{x.channels(), padded_h, padded_w};
  std::vector<double> out(out_shape.size());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t r = 0; r < padded_h; ++r) {
      const std::size_t sr = std::min(r, x.height() - 1);
      for (std::size_t col = 0; col < padded_w; ++col) {
        out[(c * padded_h + r) * padded_w + col] = x.at(c, sr, std::min(col, x.width() - 1));
      }
    }
  }
  if (x.is_noised()) return ImageTensor::noised(out_shape, std::move(out));
  return ImageTensor::clean(out_shape, std::move(out));
}

inline SubImagePair downsample(const ImageTensor& x, const PartitionIndex& idx) {
  if (x.height() != idx.source_height || x.width() != idx.source_width) {
    throw DomainError("downsample: image " + to_string(x.shape()) +
                      " does not match partition source " +
                      std::to_string(idx.source_height) + "x" +
                      std::to_string(idx.source_width));
  }
  const ImageTensor padded = pad_to(x, idx.padded_height, idx.padded_width);
  const Shape3 sub_shape{x.channels(), idx.sub_height(), idx.sub_width()};
  auto gather = [&](const std::vector<PixelCoord>& coords) {
    std::vector<double> out(sub_shape.size());
    const std::size_t plane = sub_shape.plane();
    for (std::size_t c = 0; c < x.channels(); ++c) {
      for (std::size_t k = 0; k < coords.size(); ++k) {
        out[c * plane + k] = padded.at(c, coords[k].row, coords[k].col);
      }
    }
    return out;
  };
  if (x.is_noised()) {
    return {ImageTensor::noised(sub_shape, gather(idx.left_indices)),
            ImageTensor::noised(sub_shape, gather(idx.right_indices)), padded.shape()};
  }
  return {ImageTensor::clean(sub_shape, gather(idx.left_indices)),
          ImageTensor::clean(sub_shape, gather(idx.right_indices)), padded.shape()};
}

/// Inverse of downsample: scatters both sub-images back into the padded grid.
inline ImageTensor reassemble(const SubImagePair& pair, const PartitionIndex& idx) {
  const Shape3& ps = pair.parent_shape;
  std::vector<double> out(ps.size());
  const std::size_t plane = pair.left.shape().plane();
  auto scatter = [&](const ImageTensor& sub, const std::vector<PixelCoord>& coords) {
    for (std::size_t c = 0; c < ps.channels; ++c) {
      for (std::size_t k = 0; k < coords.size(); ++k) {
        out[(c * ps.height + coords[k].row) * ps.width + coords[k].col] =
            sub.data()[c * plane + k];
      }
    }
  };
  scatter(pair.left, idx.left_indices);
  scatter(pair.right, idx.right_indices);
  if (pair.left.is_noised() || pair.right.is_noised()) {
    return ImageTensor::noised(ps, std::move(out));
  }
  return ImageTensor::clean(ps, std::move(out));
}

/// x + eps with eps ~ N(0, sigma^2 I); no clamping.
inline ImageTensor add_gaussian_noise(const ImageTensor& x, double sigma, RandomStream& stream) {
  if (!(sigma > 0.0)) throw DomainError("add_gaussian_noise: sigma must be positive");
  std::vector<double> out(x.size());
  stream.fill_standard_normal(out);
  const auto src = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i] + sigma * out[i];
  return ImageTensor::noised(x.shape(), std::move(out));
}

enum class Interpolation { bilinear, nearest };

inline std::string to_string(Interpolation m) {
  return m == Interpolation::bilinear ? "bilinear" : "nearest";
}

/// Per-axis sampling table for up-sampling with half-pixel centers
/// (align_corners = false).
struct AxisPlan {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;  // weight of hi

  static AxisPlan make(std::size_t in, std::size_t out, Interpolation method) {
    AxisPlan p;
    p.lo.resize(out);
    p.hi.resize(out);
    p.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      if (in == out) {
        p.lo[i] = p.hi[i] = i;
        p.frac[i] = 0.0;
        continue;
      }
      const double center = (static_cast<double>(i) + 0.5) * scale;
      if (method == Interpolation::nearest) {
        const auto j = std::min(static_cast<std::size_t>(std::floor(center)), in - 1);
        p.lo[i] = p.hi[i] = j;
        p.frac[i] = 0.0;
        continue;
      }
      const double src = std::clamp(center - 0.5, 0.0, static_cast<double>(in - 1));
      const auto j = static_cast<std::size_t>(std::floor(src));
      p.lo[i] = j;
      p.hi[i] = std::min(j + 1, in - 1);
      p.frac[i] = src - static_cast<double>(j);
    }
    return p;
  }
};

/// Precomputed up-sampling from one shape to another; reused across the
/// Monte Carlo loop.
class ResizePlan {
 public:
  ResizePlan(Shape3 from, std::size_t target_h, std::size_t target_w, Interpolation method)
      : from_(from), to_{from.channels, target_h, target_w} {
    if (target_h < from.height || target_w < from.width) {
      throw DomainError("resize_to: down-scaling from " + to_string(from) + " to " +
                        std::to_string(target_h) + "x" + std::to_string(target_w) +
                        " is not supported");
    }
    rows_ = AxisPlan::make(from.height, target_h, method);
    cols_ = AxisPlan::make(from.width, target_w, method);
    identity_ = target_h == from.height && target_w == from.width;
  }

  const Shape3& from() const { return from_; }
  const Shape3& to() const { return to_; }

  void apply(std::span<const double> src, std::span<double> dst) const {
    if (identity_) {
      std::copy(src.begin(), src.end(), dst.begin());
      return;
    }
    const std::size_t in_plane = from_.plane();
    const std::size_t out_plane = to_.plane();
    for (std::size_t c = 0; c < from_.channels; ++c) {
      const double* in = src.data() + c * in_plane;
      double* out = dst.data() + c * out_plane;
      for (std::size_t i = 0; i < to_.height; ++i) {
        const double* row_lo = in + rows_.lo[i] * from_.width;
        const double* row_hi = in + rows_.hi[i] * from_.width;
        const double fy = rows_.frac[i];
        for (std::size_t j = 0; j < to_.width; ++j) {
          const std::size_t a = cols_.lo[j];
          const std::size_t b = cols_.hi[j];
          const double fx = cols_.frac[j];
          const double top = row_lo[a] + fx * (row_lo[b] - row_lo[a]);
          const double bottom = row_hi[a] + fx * (row_hi[b] - row_hi[a]);
          out[i * to_.width + j] = top + fy * (bottom - top);
        }
      }
    }
  }

 private:
  Shape3 from_;
  Shape3 to_;
  AxisPlan rows_;
  AxisPlan cols_;
  bool identity_ = false;
};

inline ImageTensor resize_to(const ImageTensor& sub, std::size_t target_h, std::size_t target_w,
                             Interpolation method = Interpolation::bilinear) {
  const ResizePlan plan(sub.shape(), target_h, target_w, method);
  std::vector<double> out(plan.to().size());
  plan.apply(sub.data(), out);
  if (sub.is_noised()) return ImageTensor::noised(plan.to(), std::move(out));
  return ImageTensor::clean(plan.to(), std::move(out));
}

}  // namespace smoothcert
