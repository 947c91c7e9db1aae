#include "cardioseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cardioseg {

Sample stack_slices(const VolumeStudy& study, std::size_t n, std::size_t z) {
  if (n % 2 == 0) throw ParameterError("slice stack size must be odd, got " + std::to_string(n));
  const auto& img = study.image;
  if (z >= img.depth) throw ParameterError("slice index " + std::to_string(z) + " outside the volume");
  Sample s;
  s.channels = n;
  s.depth = 1;
  s.height = img.height;
  s.width = img.width;
  s.image.reserve(n * img.plane());
  const auto half = std::ptrdiff_t(n / 2);
  for (std::ptrdiff_t k = -half; k <= half; ++k) {
    const auto src = std::clamp<std::ptrdiff_t>(std::ptrdiff_t(z) + k, 0, std::ptrdiff_t(img.depth) - 1);
    auto sl = img.slice(std::size_t(src));
    s.image.insert(s.image.end(), sl.begin(), sl.end());
  }
  if (study.labels) {
    auto t = study.labels->slice(z);
    s.labels.assign(t.begin(), t.end());
  }
  return s;
}

Sample volume_sample(const VolumeStudy& study) {
  Sample s;
  s.channels = 1;
  s.depth = study.image.depth;
  s.height = study.image.height;
  s.width = study.image.width;
  s.image = study.image.data;
  if (study.labels) s.labels = study.labels->data;
  return s;
}

void AugmentConfig::validate() const {
  if (!(max_rotation_deg >= 0 && max_rotation_deg <= 180)) throw ParameterError("rotation range must lie in [0, 180]");
  if (!(min_scale > 0 && min_scale <= max_scale)) throw ParameterError("scale range must be positive and ordered");
  if (!(probability >= 0 && probability <= 1)) throw ParameterError("augmentation probability must lie in [0, 1]");
}

AffineParams sample_affine(const AugmentConfig& cfg, Rng& rng) {
  // Always draw all three numbers so the stream does not depend on the outcome.
  const double gate = uniform01(rng);
  const double a = uniform01(rng), b = uniform01(rng);
  if (!cfg.enabled || gate >= cfg.probability) return {};
  return {(2 * a - 1) * cfg.max_rotation_deg, cfg.min_scale + b * (cfg.max_scale - cfg.min_scale)};
}

Sample apply_affine(const Sample& s, const AffineParams& p) {
  if (p.angle_deg == 0.0 && p.scale == 1.0) return s;
  if (!(p.scale > 0)) throw ParameterError("augmentation scale must be positive");
  const std::size_t h = s.height, w = s.width, plane = h * w;
  const double rad = p.angle_deg * std::numbers::pi / 180.0;
  double c = std::cos(rad), sn = std::sin(rad);
  // Exact quarter turns keep label permutations exact.
  const double q = p.angle_deg / 90.0;
  if (q == std::round(q)) {
    const long k = ((long(q) % 4) + 4) % 4;
    const double cs[4] = {1, 0, -1, 0}, ss[4] = {0, 1, 0, -1};
    c = cs[k];
    sn = ss[k];
  }
  const double cy = 0.5 * double(h - 1), cx = 0.5 * double(w - 1);

  // Inverse map: output (x, y) samples the source at c + R(-angle)(q - c) / scale.
  std::vector<double> srcx(plane), srcy(plane);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = double(x) - cx, dy = double(y) - cy;
      srcx[y * w + x] = cx + (c * dx + sn * dy) / p.scale;
      srcy[y * w + x] = cy + (-sn * dx + c * dy) / p.scale;
    }

  Sample out = s;
  const std::size_t planes = s.channels * s.depth;
  for (std::size_t k = 0; k < planes; ++k) {
    const double* in = s.image.data() + k * plane;
    double* dst = out.image.data() + k * plane;
    auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> double {
      if (y < 0 || x < 0 || y >= std::ptrdiff_t(h) || x >= std::ptrdiff_t(w)) return 0.0;
      return in[std::size_t(y) * w + std::size_t(x)];
    };
    for (std::size_t i = 0; i < plane; ++i) {
      const double fx = std::floor(srcx[i]), fy = std::floor(srcy[i]);
      const double tx = srcx[i] - fx, ty = srcy[i] - fy;
      const auto x0 = std::ptrdiff_t(fx), y0 = std::ptrdiff_t(fy);
      const double top = (1 - tx) * px(y0, x0) + (tx > 0 ? tx * px(y0, x0 + 1) : 0.0);
      const double bottom = ty > 0 ? (1 - tx) * px(y0 + 1, x0) + (tx > 0 ? tx * px(y0 + 1, x0 + 1) : 0.0) : 0.0;
      dst[i] = (1 - ty) * top + ty * bottom;
    }
  }
  if (!s.labels.empty())
    for (std::size_t k = 0; k < s.depth; ++k) {
      const std::uint8_t* in = s.labels.data() + k * plane;
      std::uint8_t* dst = out.labels.data() + k * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double ry = std::floor(srcy[i] + 0.5), rx = std::floor(srcx[i] + 0.5);
        const bool inside = ry >= 0 && rx >= 0 && ry < double(h) && rx < double(w);
        dst[i] = inside ? in[std::size_t(ry) * w + std::size_t(rx)] : 0;
      }
    }
  return out;
}

Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) { return apply_affine(s, sample_affine(cfg, rng)); }

std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& patient_id, Phase phase,
                          std::uint64_t epoch, std::uint64_t slice) {
  auto mix = [](std::uint64_t x) {  // splitmix64 finalizer
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  };
  std::uint64_t id_hash = 0xCBF29CE484222325ull;  // FNV-1a
  for (unsigned char ch : patient_id) id_hash = (id_hash ^ ch) * 0x100000001B3ull;
  std::uint64_t h = mix(global_seed);
  for (std::uint64_t v : {id_hash, std::uint64_t(phase == Phase::ED ? 0 : 1), epoch, slice}) h = mix(h ^ v);
  return h;
}

}  // namespace cardioseg
