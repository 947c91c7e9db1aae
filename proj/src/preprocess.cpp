#include "cardioseg/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace cardioseg {

void PreprocessConfig::validate() const {
  for (double s : {target_spacing.z, target_spacing.y, target_spacing.x})
    if (!(s > 0) || !std::isfinite(s)) throw ParameterError("target spacing must be positive");
  if (!(pct_lo >= 0 && pct_lo < pct_hi && pct_hi <= 100))
    throw ParameterError("percentiles must increase strictly within [0, 100]");
  if (!(clip_lo < clip_hi)) throw ParameterError("clip range must be increasing");
  if (height == 0 || width == 0 || train_depth == 0) throw ParameterError("target extents must be positive");
  if (clahe.bins < 2 || clahe.tiles_y == 0 || clahe.tiles_x == 0 || !(clahe.clip_limit > 0))
    throw ParameterError("invalid CLAHE settings");
}

// ---------------------------------------------------------------------------
// CLAHE

namespace {

struct TileGrid {
  std::size_t n;
  std::vector<std::size_t> start;  // n + 1 boundaries
  std::vector<double> center;

  TileGrid(std::size_t extent, std::size_t tiles) : n(std::min(tiles, extent)) {
    for (std::size_t i = 0; i <= n; ++i) start.push_back(i * extent / n);
    for (std::size_t i = 0; i < n; ++i) center.push_back(0.5 * double(start[i] + start[i + 1] - 1));
  }

  // Neighbouring tiles and the weight of the second one.
  void locate(std::size_t p, std::size_t& a, std::size_t& b, double& t) const {
    const double x = double(p);
    if (x <= center.front()) {
      a = b = 0;
      t = 0;
      return;
    }
    if (x >= center.back()) {
      a = b = n - 1;
      t = 0;
      return;
    }
    a = 0;
    while (center[a + 1] < x) ++a;
    b = a + 1;
    t = (x - center[a]) / (center[b] - center[a]);
  }
};

}  // namespace

std::vector<double> clahe_slice(std::span<const double> slice, std::size_t h, std::size_t w,
                                const ClaheConfig& cfg) {
  if (slice.size() != h * w) throw SizeError("clahe_slice: slice size does not match extents");
  std::vector<double> out(slice.begin(), slice.end());
  if (out.empty()) return out;
  const auto [mn_it, mx_it] = std::minmax_element(slice.begin(), slice.end());
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx > mn)) return out;

  const std::size_t bins = cfg.bins;
  std::vector<std::size_t> bin(slice.size());
  for (std::size_t i = 0; i < slice.size(); ++i)
    bin[i] = std::min(bins - 1, std::size_t((slice[i] - mn) / (mx - mn) * double(bins)));

  const TileGrid gy(h, cfg.tiles_y), gx(w, cfg.tiles_x);
  std::vector<std::vector<double>> maps(gy.n * gx.n, std::vector<double>(bins));
  for (std::size_t ty = 0; ty < gy.n; ++ty)
    for (std::size_t tx = 0; tx < gx.n; ++tx) {
      std::vector<double> hist(bins, 0.0);
      for (std::size_t y = gy.start[ty]; y < gy.start[ty + 1]; ++y)
        for (std::size_t x = gx.start[tx]; x < gx.start[tx + 1]; ++x) hist[bin[y * w + x]] += 1.0;
      const double area = double((gy.start[ty + 1] - gy.start[ty]) * (gx.start[tx + 1] - gx.start[tx]));
      const double limit = std::max(1.0, cfg.clip_limit * area);
      double excess = 0;
      for (auto& c : hist)
        if (c > limit) {
          excess += c - limit;
          c = limit;
        }
      const double share = excess / double(bins);
      auto& map = maps[ty * gx.n + tx];
      double cdf = 0;
      for (std::size_t k = 0; k < bins; ++k) {
        cdf += hist[k] + share;
        map[k] = cdf / area;
      }
    }

  for (std::size_t y = 0; y < h; ++y) {
    std::size_t y0, y1;
    double ty;
    gy.locate(y, y0, y1, ty);
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t x0, x1;
      double tx;
      gx.locate(x, x0, x1, tx);
      const std::size_t k = bin[y * w + x];
      const double top = (1 - tx) * maps[y0 * gx.n + x0][k] + tx * maps[y0 * gx.n + x1][k];
      const double bottom = (1 - tx) * maps[y1 * gx.n + x0][k] + tx * maps[y1 * gx.n + x1][k];
      out[y * w + x] = (1 - ty) * top + ty * bottom;
    }
  }

  const auto [omn, omx] = std::minmax_element(out.begin(), out.end());
  const double lo = *omn, hi = *omx;
  if (!(hi > lo)) return std::vector<double>(slice.begin(), slice.end());
  for (auto& v : out) v = mn + (v - lo) / (hi - lo) * (mx - mn);
  // Pin the extremes so the range is reproduced exactly.
  *std::min_element(out.begin(), out.end()) = mn;
  *std::max_element(out.begin(), out.end()) = mx;
  return out;
}

// ---------------------------------------------------------------------------
// Intensity

double percentile(std::span<const double> values, double pct) {
  if (values.empty()) throw DataError("percentile of an empty set");
  if (!(pct >= 0 && pct <= 100)) throw ParameterError("percentile outside [0, 100]");
  std::vector<double> v(values.begin(), values.end());
  const double pos = pct / 100.0 * double(v.size() - 1);
  const std::size_t i = std::size_t(std::floor(pos));
  std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(i), v.end());
  const double a = v[i];
  if (i + 1 >= v.size() || pos == double(i)) return a;
  const double b = *std::min_element(v.begin() + std::ptrdiff_t(i) + 1, v.end());
  return a + (pos - double(i)) * (b - a);
}

ImageVolume normalize_percentile(const ImageVolume& v, double lo_pct, double hi_pct) {
  if (v.size() == 0) throw DataError("normalize_percentile: empty volume");
  if (!(lo_pct >= 0 && lo_pct < hi_pct && hi_pct <= 100))
    throw ParameterError("percentiles must increase strictly within [0, 100]");
  const double lo = percentile(v.data, lo_pct), hi = percentile(v.data, hi_pct);
  ImageVolume out(v.depth, v.height, v.width, 0.0);
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out.data[i] = std::clamp((v.data[i] - lo) / (hi - lo), 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Geometry

namespace {

// Source coordinate of output cell j when cells shrink by `ratio` (new/old size).
inline double source_coord(std::size_t j, double ratio, std::size_t n_src) {
  const double x = (double(j) + 0.5) * ratio - 0.5;
  return std::clamp(x, 0.0, double(n_src - 1));
}

struct Axis {
  std::vector<std::size_t> lo, hi;
  std::vector<double> t;
  Axis(std::size_t n_dst, std::size_t n_src, double ratio) {
    for (std::size_t j = 0; j < n_dst; ++j) {
      const double x = source_coord(j, ratio, n_src);
      const std::size_t a = std::size_t(std::floor(x));
      lo.push_back(a);
      hi.push_back(std::min(a + 1, n_src - 1));
      t.push_back(x - double(a));
    }
  }
};

std::vector<std::size_t> nearest_axis(std::size_t n_dst, std::size_t n_src, double ratio) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < n_dst; ++j)
    idx.push_back(std::min(n_src - 1, std::size_t(std::floor(source_coord(j, ratio, n_src) + 0.5))));
  return idx;
}

ImageVolume linear(const ImageVolume& v, std::size_t z, std::size_t h, std::size_t w, double rz, double ry,
                   double rx) {
  const Axis az(z, v.depth, rz), ay(h, v.height, ry), ax(w, v.width, rx);
  // Separable passes: x, then y, then z.
  std::vector<double> px(v.depth * v.height * w);
  for (std::size_t r = 0; r < v.depth * v.height; ++r)
    for (std::size_t j = 0; j < w; ++j) {
      const double a = v.data[r * v.width + ax.lo[j]], b = v.data[r * v.width + ax.hi[j]];
      px[r * w + j] = a + ax.t[j] * (b - a);
    }
  std::vector<double> py(v.depth * h * w);
  for (std::size_t k = 0; k < v.depth; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double a = px[(k * v.height + ay.lo[i]) * w + j], b = px[(k * v.height + ay.hi[i]) * w + j];
        py[(k * h + i) * w + j] = a + ay.t[i] * (b - a);
      }
  ImageVolume out(z, h, w);
  for (std::size_t k = 0; k < z; ++k)
    for (std::size_t p = 0; p < h * w; ++p) {
      const double a = py[az.lo[k] * h * w + p], b = py[az.hi[k] * h * w + p];
      out.data[k * h * w + p] = a + az.t[k] * (b - a);
    }
  return out;
}

LabelVolume nearest(const LabelVolume& v, std::size_t z, std::size_t h, std::size_t w, double rz, double ry,
                    double rx) {
  const auto iz = nearest_axis(z, v.depth, rz), iy = nearest_axis(h, v.height, ry), ix = nearest_axis(w, v.width, rx);
  LabelVolume out(z, h, w);
  for (std::size_t k = 0; k < z; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(k, i, j) = v.at(iz[k], iy[i], ix[j]);
  return out;
}

std::size_t new_extent(std::size_t n, double old_sp, double new_sp) {
  return std::max<std::size_t>(1, std::size_t(std::llround(double(n) * old_sp / new_sp)));
}

void check_target(std::size_t z, std::size_t h, std::size_t w) {
  if (z == 0 || h == 0 || w == 0) throw ParameterError("resample target extents must be positive");
}

}  // namespace

ImageVolume resample_linear(const ImageVolume& v, std::size_t z, std::size_t h, std::size_t w) {
  check_target(z, h, w);
  return linear(v, z, h, w, double(v.depth) / double(z), double(v.height) / double(h), double(v.width) / double(w));
}

LabelVolume resample_nearest(const LabelVolume& v, std::size_t z, std::size_t h, std::size_t w) {
  check_target(z, h, w);
  return nearest(v, z, h, w, double(v.depth) / double(z), double(v.height) / double(h), double(v.width) / double(w));
}

VolumeStudy resample(const VolumeStudy& study, const Spacing& target) {
  for (double s : {target.z, target.y, target.x})
    if (!(s > 0) || !std::isfinite(s)) throw ParameterError("target spacing must be positive");
  const Spacing& sp = study.spacing;
  const std::size_t z = new_extent(study.image.depth, sp.z, target.z);
  const std::size_t h = new_extent(study.image.height, sp.y, target.y);
  const std::size_t w = new_extent(study.image.width, sp.x, target.x);
  const double rz = target.z / sp.z, ry = target.y / sp.y, rx = target.x / sp.x;
  VolumeStudy out;
  out.patient_id = study.patient_id;
  out.phase = study.phase;
  out.spacing = target;
  out.image = linear(study.image, z, h, w, rz, ry, rx);
  if (study.labels) out.labels = nearest(*study.labels, z, h, w, rz, ry, rx);
  return out;
}

namespace {

inline std::ptrdiff_t center_offset(std::size_t from, std::size_t to) {
  return from >= to ? std::ptrdiff_t((from - to) / 2) : -std::ptrdiff_t((to - from) / 2);
}

}  // namespace

template <typename T>
Volume<T> crop_or_pad(const Volume<T>& v, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ParameterError("crop_or_pad: target extents must be positive");
  const auto oy = center_offset(v.height, h), ox = center_offset(v.width, w);
  Volume<T> out(v.depth, h, w, T{});
  for (std::size_t z = 0; z < v.depth; ++z)
    for (std::size_t y = 0; y < h; ++y) {
      const auto sy = std::ptrdiff_t(y) + oy;
      if (sy < 0 || sy >= std::ptrdiff_t(v.height)) continue;
      for (std::size_t x = 0; x < w; ++x) {
        const auto sx = std::ptrdiff_t(x) + ox;
        if (sx < 0 || sx >= std::ptrdiff_t(v.width)) continue;
        out.at(z, y, x) = v.at(z, std::size_t(sy), std::size_t(sx));
      }
    }
  return out;
}

template <typename T>
Volume<T> fit_depth(const Volume<T>& v, std::size_t z) {
  if (z == 0) throw ParameterError("fit_depth: target depth must be positive");
  if (v.depth == 0) throw DataError("fit_depth: empty volume");
  const auto oz = center_offset(v.depth, z);
  Volume<T> out(z, v.height, v.width);
  for (std::size_t k = 0; k < z; ++k) {
    const auto src = std::clamp<std::ptrdiff_t>(std::ptrdiff_t(k) + oz, 0, std::ptrdiff_t(v.depth) - 1);
    auto s = v.slice(std::size_t(src));
    std::copy(s.begin(), s.end(), out.slice(k).begin());
  }
  return out;
}

template ImageVolume crop_or_pad(const ImageVolume&, std::size_t, std::size_t);
template LabelVolume crop_or_pad(const LabelVolume&, std::size_t, std::size_t);
template ImageVolume fit_depth(const ImageVolume&, std::size_t);
template LabelVolume fit_depth(const LabelVolume&, std::size_t);

// ---------------------------------------------------------------------------

PreparedStudy preprocess(const VolumeStudy& study, const PreprocessConfig& cfg) {
  cfg.validate();
  study.validate();
  VolumeStudy s = study;
  if (cfg.use_clahe)
    for (std::size_t z = 0; z < s.image.depth; ++z) {
      auto eq = clahe_slice(s.image.slice(z), s.image.height, s.image.width, cfg.clahe);
      std::copy(eq.begin(), eq.end(), s.image.slice(z).begin());
    }
  s.image = normalize_percentile(s.image, cfg.pct_lo, cfg.pct_hi);
  for (auto& v : s.image.data) v = std::clamp(v, cfg.clip_lo, cfg.clip_hi);
  s = resample(s, cfg.target_spacing);

  PreparedStudy out;
  out.grid = {study.image.depth, study.image.height, study.image.width, s.image.height, s.image.width};
  s.image = crop_or_pad(s.image, cfg.height, cfg.width);
  if (s.labels) s.labels = crop_or_pad(*s.labels, cfg.height, cfg.width);
  out.study = std::move(s);
  return out;
}

LabelVolume restore_native(const LabelVolume& prediction, const GridRecord& grid) {
  auto uncropped = crop_or_pad(prediction, grid.resampled_height, grid.resampled_width);
  return resample_nearest(uncropped, grid.depth, grid.height, grid.width);
}

}  // namespace cardioseg
