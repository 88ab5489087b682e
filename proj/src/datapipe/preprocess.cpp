#include "pasfuse/datapipe/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pasfuse {

namespace {

void require_extents(const Volume& v) {
  for (Index e : v.extents)
    if (e <= 0) throw DataError(DataError::Kind::invalid, "volume has a zero extent");
  if (v.voxels.size() != v.size()) throw DataError(DataError::Kind::invalid, "volume size mismatch");
}

// 1D cubic resampling weights for one output axis.
struct Taps {
  std::vector<std::array<Index, 4>> index;
  std::vector<std::array<double, 4>> weight;
};

Taps cubic_taps(Index in, Index out, double scale) {
  Taps t;
  t.index.resize(static_cast<std::size_t>(out));
  t.weight.resize(static_cast<std::size_t>(out));
  for (Index o = 0; o < out; ++o) {
    const double x = (o + 0.5) / scale - 0.5;
    const double base = std::floor(x);
    for (int k = 0; k < 4; ++k) {
      const double pos = base - 1 + k;
      t.index[o][k] = std::clamp<Index>(static_cast<Index>(pos), 0, in - 1);
      t.weight[o][k] = catmull_rom(x - pos);
    }
  }
  return t;
}

// Resample along one axis of a row-major [a0, a1, a2] grid.
Volume resample_axis(const Volume& v, int axis, Index out, double scale) {
  std::array<Index, 3> e = v.extents;
  const Taps taps = cubic_taps(e[axis], out, scale);
  std::array<Index, 3> oe = e;
  oe[axis] = out;
  Volume r(oe);
  for (Index i = 0; i < oe[0]; ++i) {
    for (Index j = 0; j < oe[1]; ++j) {
      for (Index k = 0; k < oe[2]; ++k) {
        std::array<Index, 3> idx{i, j, k};
        const Index o = idx[axis];
        double acc = 0;
        for (int t = 0; t < 4; ++t) {
          idx[axis] = taps.index[o][t];
          acc += taps.weight[o][t] * v(idx[0], idx[1], idx[2]);
        }
        r(i, j, k) = static_cast<float>(acc);
      }
    }
  }
  r.hwd_axes = v.hwd_axes;
  r.spacing = v.spacing;
  return r;
}

Volume to_hwd(const Volume& v) {
  if (v.hwd_axes == std::array<int, 3>{0, 1, 2}) return v;
  const auto& a = v.hwd_axes;
  Volume r({v.extents[a[0]], v.extents[a[1]], v.extents[a[2]]});
  std::array<Index, 3> src{};
  for (Index i = 0; i < r.extents[0]; ++i) {
    for (Index j = 0; j < r.extents[1]; ++j) {
      for (Index k = 0; k < r.extents[2]; ++k) {
        src[a[0]] = i;
        src[a[1]] = j;
        src[a[2]] = k;
        r(i, j, k) = v(src[0], src[1], src[2]);
      }
    }
  }
  r.spacing = {v.spacing[a[0]], v.spacing[a[1]], v.spacing[a[2]]};
  return r;
}

double bilinear(const Image& img, Index c, double y, double x) {
  const Index h = img.extents[0], w = img.extents[1];
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  auto at = [&](Index i, Index j) {
    return static_cast<double>(img(c, std::clamp<Index>(i, 0, h - 1), std::clamp<Index>(j, 0, w - 1)));
  };
  const Index i0 = static_cast<Index>(fy), j0 = static_cast<Index>(fx);
  return (1 - ty) * ((1 - tx) * at(i0, j0) + tx * at(i0, j0 + 1)) +
         ty * ((1 - tx) * at(i0 + 1, j0) + tx * at(i0 + 1, j0 + 1));
}

}  // namespace

double catmull_rom(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
  if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
  return 0;
}

Volume resample_cubic(const Volume& v, const std::array<Index, 3>& out,
                      const std::array<double, 3>& scale) {
  require_extents(v);
  Volume r = v;
  for (int axis = 0; axis < 3; ++axis) {
    if (out[axis] == r.extents[axis] && scale[axis] == 1.0) continue;
    r = resample_axis(r, axis, out[axis], scale[axis]);
  }
  return r;
}

Image resize_bilinear(const Image& img, const std::array<Index, 2>& out) {
  if (out == img.extents) return img;
  Image r(img.channels, out);
  const double sy = static_cast<double>(img.extents[0]) / out[0];
  const double sx = static_cast<double>(img.extents[1]) / out[1];
  for (Index c = 0; c < img.channels; ++c)
    for (Index i = 0; i < out[0]; ++i)
      for (Index j = 0; j < out[1]; ++j)
        r(c, i, j) = static_cast<float>(bilinear(img, c, (i + 0.5) * sy - 0.5, (j + 0.5) * sx - 0.5));
  return r;
}

void minmax_normalize(Buffer<float>& values) {
  if (values.size() == 0) return;
  const float lo = values.minCoeff(), hi = values.maxCoeff();
  if (!(hi > lo)) {
    values.setZero();
    return;
  }
  const double range = static_cast<double>(hi) - lo;
  for (Index i = 0; i < values.size(); ++i) {
    const double x = (static_cast<double>(values[i]) - lo) / range;
    values[i] = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
}

Volume preprocess_mri(const Volume& raw, const std::array<Index, 3>& target) {
  require_extents(raw);
  const Volume v = to_hwd(raw);
  double s = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) s = std::min(s, static_cast<double>(target[a]) / v.extents[a]);
  std::array<Index, 3> content{};
  for (int a = 0; a < 3; ++a) {
    content[a] = std::clamp<Index>(std::llround(v.extents[a] * s), 1, target[a]);
  }
  Volume scaled = resample_cubic(v, content, {s, s, s});
  minmax_normalize(scaled.voxels);
  Volume out(target);
  std::array<Index, 3> before{};
  for (int a = 0; a < 3; ++a) before[a] = (target[a] - content[a]) / 2;
  for (Index i = 0; i < content[0]; ++i)
    for (Index j = 0; j < content[1]; ++j)
      for (Index k = 0; k < content[2]; ++k)
        out(i + before[0], j + before[1], k + before[2]) = scaled(i, j, k);
  return out;
}

Image preprocess_us(const Image& raw, const std::array<Index, 2>& target) {
  if (raw.extents[0] <= 0 || raw.extents[1] <= 0) {
    throw DataError(DataError::Kind::invalid, "image has a zero extent");
  }
  if (raw.channels != 1) throw DataError(DataError::Kind::invalid, "US preprocessing expects one channel");
  Buffer<float> gray = raw.pixels;
  minmax_normalize(gray);
  for (Index i = 0; i < gray.size(); ++i) gray[i] = quantize_u8(gray[i]);
  Image rgb(3, raw.extents);
  for (Index c = 0; c < 3; ++c) rgb.pixels.segment(c * rgb.plane(), rgb.plane()) = gray;
  Image out = resize_bilinear(rgb, target);
  for (Index i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = std::clamp(std::floor(out.pixels[i] + 0.5f), 0.0f, 255.0f) / 255.0f;
  }
  return out;
}

// Augmentation ------------------------------------------------------------------

Volume flip(const Volume& v, int axis) {
  Volume r = v;
  const auto& e = v.extents;
  for (Index i = 0; i < e[0]; ++i)
    for (Index j = 0; j < e[1]; ++j)
      for (Index k = 0; k < e[2]; ++k) {
        std::array<Index, 3> s{i, j, k};
        s[axis] = e[axis] - 1 - s[axis];
        r(i, j, k) = v(s[0], s[1], s[2]);
      }
  return r;
}

Volume rot90(const Volume& v, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return v;
  if (k % 2 == 1 && v.extents[0] != v.extents[1]) {
    throw DataError(DataError::Kind::invalid, "quarter-turn needs a square H-W plane");
  }
  Volume r = v;
  const Index n = v.extents[0], m = v.extents[1];
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j)
      for (Index d = 0; d < v.extents[2]; ++d) {
        // Counter-clockwise quarter turns of the (row, column) plane.
        Index si = i, sj = j;
        if (k == 1) {
          si = j;
          sj = m - 1 - i;
        } else if (k == 2) {
          si = n - 1 - i;
          sj = m - 1 - j;
        } else {
          si = n - 1 - j;
          sj = i;
        }
        r(i, j, d) = v(si, sj, d);
      }
  return r;
}

Volume zoom(const Volume& v, double factor) {
  Volume r = v;
  const auto& e = v.extents;
  std::array<double, 3> c{};
  for (int a = 0; a < 3; ++a) c[a] = (e[a] - 1) / 2.0;
  auto sample = [](double x) {
    const double f = std::floor(x);
    return std::pair<Index, double>{static_cast<Index>(f), x - f};
  };
  auto at = [&](Index i, Index j, Index k) -> double {
    if (i < 0 || j < 0 || k < 0 || i >= e[0] || j >= e[1] || k >= e[2]) return 0.0;
    return v(i, j, k);
  };
  for (Index i = 0; i < e[0]; ++i)
    for (Index j = 0; j < e[1]; ++j)
      for (Index k = 0; k < e[2]; ++k) {
        auto [i0, ti] = sample((i - c[0]) / factor + c[0]);
        auto [j0, tj] = sample((j - c[1]) / factor + c[1]);
        auto [k0, tk] = sample((k - c[2]) / factor + c[2]);
        double acc = 0;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj)
            for (int dk = 0; dk < 2; ++dk) {
              const double w = (di ? ti : 1 - ti) * (dj ? tj : 1 - tj) * (dk ? tk : 1 - tk);
              if (w != 0) acc += w * at(i0 + di, j0 + dj, k0 + dk);
            }
        r(i, j, k) = static_cast<float>(acc);
      }
  return r;
}

MriAugment sample_mri_augment(Rng& rng) {
  MriAugment a;
  a.flip_h = rng.bernoulli(0.5);
  a.flip_w = rng.bernoulli(0.5);
  a.quarter_turns = static_cast<int>(rng.below(4));
  a.zoom = rng.uniform(kZoomLow, kZoomHigh);
  return a;
}

Volume apply(const Volume& v, const MriAugment& a) {
  Volume r = v;
  if (a.flip_h) r = flip(r, 0);
  if (a.flip_w) r = flip(r, 1);
  // Non-square planes only take half turns so the shape is kept.
  int k = a.quarter_turns;
  if (r.extents[0] != r.extents[1]) k &= 2;
  r = rot90(r, k);
  if (a.zoom != 1.0) r = zoom(r, a.zoom);
  return r;
}

Volume augment_mri(const Volume& v, Rng& rng) { return apply(v, sample_mri_augment(rng)); }

Image flip_horizontal(const Image& img) {
  Image r = img;
  const Index w = img.extents[1];
  for (Index c = 0; c < img.channels; ++c)
    for (Index i = 0; i < img.extents[0]; ++i)
      for (Index j = 0; j < w; ++j) r(c, i, j) = img(c, i, w - 1 - j);
  return r;
}

Image rotate(const Image& img, double degrees) {
  if (degrees == 0.0) return img;
  Image r(img.channels, img.extents);
  const Index h = img.extents[0], w = img.extents[1];
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double t = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(t), sn = std::sin(t);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) {
      // Inverse map of the output pixel into the source.
      const double dy = i - cy, dx = j - cx;
      const double sy = cs * dy + sn * dx + cy;
      const double sx = -sn * dy + cs * dx + cx;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double ty = sy - fy, tx = sx - fx;
      const Index i0 = static_cast<Index>(fy), j0 = static_cast<Index>(fx);
      for (Index c = 0; c < img.channels; ++c) {
        auto at = [&](Index a, Index b) -> double {
          if (a < 0 || b < 0 || a >= h || b >= w) return 0.0;
          return img(c, a, b);
        };
        r(c, i, j) = static_cast<float>((1 - ty) * ((1 - tx) * at(i0, j0) + tx * at(i0, j0 + 1)) +
                                        ty * ((1 - tx) * at(i0 + 1, j0) + tx * at(i0 + 1, j0 + 1)));
      }
    }
  return r;
}

UsAugment sample_us_augment(Rng& rng) {
  UsAugment a;
  a.flip = rng.bernoulli(0.5);
  a.degrees = rng.uniform(-kMaxUsRotation, kMaxUsRotation);
  return a;
}

Image apply(const Image& img, const UsAugment& a) {
  Image r = a.flip ? flip_horizontal(img) : img;
  return rotate(r, a.degrees);
}

Image augment_us(const Image& img, Rng& rng) { return apply(img, sample_us_augment(rng)); }

}  // namespace pasfuse
