#include "cardioseg/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "cardioseg/layers.hpp"

namespace cardioseg {

namespace {

struct Anatomy {
  double cy, cx;                   // LV centre at the base, pixels
  double drift_y, drift_x;         // centre shift from base to apex
  double r_lv, r_epi, r_rv;        // ED radii at the base
  double rv_offset;                // RV centre distance from the LV centre
  double rv_angle;                 // direction of the RV, radians
  double es_lv, es_rv;             // ES radius factors
  double taper;                    // apex radius factor
};

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double gaussian(Rng& rng) {
  // Box-Muller on the fixed-recipe uniforms.
  const double u1 = 1.0 - uniform01(rng), u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void render(VolumeStudy& s, const Anatomy& a, bool es, Rng& rng, double noise_sd) {
  const std::size_t Z = s.image.depth, H = s.image.height, W = s.image.width;
  const double L = double(std::min(H, W));
  s.labels = LabelVolume(Z, H, W);
  const double lv_factor = es ? a.es_lv : 1.0;
  const double rv_factor = es ? a.es_rv : 1.0;

  // Smooth multiplicative bias field.
  const double ph1 = uniform(rng, 0, 2 * std::numbers::pi), ph2 = uniform(rng, 0, 2 * std::numbers::pi);
  const double amp = uniform(rng, 0.05, 0.15);
  const double mean[4] = {0.15, 0.80, 0.35, 0.95};  // background, RV, MYO, LV

  for (std::size_t z = 0; z < Z; ++z) {
    const double f = Z > 1 ? double(z) / double(Z - 1) : 0.0;  // 0 at the base, 1 at the apex
    const double shrink = 1.0 - (1.0 - a.taper) * f * f;
    const double cy = a.cy + a.drift_y * f, cx = a.cx + a.drift_x * f;
    const double r_lv = std::max(2.0, a.r_lv * shrink * lv_factor);
    // Keep the myocardial area roughly constant between phases.
    const double wall = a.r_epi * a.r_epi - a.r_lv * a.r_lv;
    const double r_epi = std::max(r_lv + 2.0, std::sqrt(r_lv * r_lv + wall * shrink * shrink));
    const double r_rv = a.r_rv * (1.0 - 0.5 * f) * rv_factor;
    const double ry = cy + a.rv_offset * shrink * std::sin(a.rv_angle);
    const double rx = cx + a.rv_offset * shrink * std::cos(a.rv_angle);

    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double d = std::hypot(double(y) - cy, double(x) - cx);
        const double drv = std::hypot(double(y) - ry, double(x) - rx);
        std::uint8_t l = kBackground;
        if (d <= r_lv) l = kLV;
        else if (d <= r_epi) l = kMYO;
        else if (drv <= r_rv) l = kRV;
        s.labels->at(z, y, x) = l;
        const double bias = 1.0 + amp * std::sin(2 * std::numbers::pi * double(x) / L + ph1) *
                                      std::cos(2 * std::numbers::pi * double(y) / L + ph2);
        const double v = (mean[l] + noise_sd * gaussian(rng)) * bias;
        // float-representable so that export and re-import are lossless
        s.image.at(z, y, x) = double(float(1000.0 * v));
      }
  }
}

}  // namespace

std::vector<VolumeStudy> generate_phantom(const PhantomConfig& cfg) {
  if (cfg.height < 32 || cfg.width < 32)
    throw ParameterError("phantom in-plane extents must be at least 32x32");
  if (cfg.depth < 1) throw ParameterError("phantom depth must be positive");
  for (double s : {cfg.spacing.z, cfg.spacing.y, cfg.spacing.x})
    if (!(s > 0)) throw ParameterError("phantom spacing must be positive");
  if (!(cfg.noise_sd >= 0)) throw ParameterError("phantom noise must be nonnegative");

  std::vector<VolumeStudy> out;
  const double L = double(std::min(cfg.height, cfg.width));
  for (std::size_t p = 0; p < cfg.count; ++p) {
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + p + 1);
    Anatomy a;
    a.r_lv = L * uniform(rng, 0.10, 0.13);
    a.r_epi = a.r_lv + std::max(2.5, L * uniform(rng, 0.045, 0.06));
    a.r_rv = a.r_epi * uniform(rng, 0.9, 1.1);
    a.rv_offset = a.r_epi + 0.6 * a.r_rv;
    a.rv_angle = std::numbers::pi + uniform(rng, -0.35, 0.35);
    a.cy = 0.5 * double(cfg.height) + L * uniform(rng, -0.04, 0.04);
    a.cx = 0.5 * double(cfg.width) + L * uniform(rng, 0.02, 0.08);
    a.drift_y = L * uniform(rng, -0.03, 0.03);
    a.drift_x = L * uniform(rng, -0.03, 0.03);
    a.es_lv = uniform(rng, 0.65, 0.8);
    a.es_rv = uniform(rng, 0.7, 0.85);
    a.taper = uniform(rng, 0.55, 0.7);

    char id[32];
    std::snprintf(id, sizeof id, "patient%03zu", p + 1);
    for (Phase ph : {Phase::ED, Phase::ES}) {
      VolumeStudy s;
      s.image = ImageVolume(cfg.depth, cfg.height, cfg.width);
      s.spacing = cfg.spacing;
      s.patient_id = id;
      s.phase = ph;
      render(s, a, ph == Phase::ES, rng, cfg.noise_sd);
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace cardioseg
