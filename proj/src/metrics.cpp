#include "cardioseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

namespace cardioseg {

namespace {

void check_same(const LabelVolume& a, const LabelVolume& b) {
  if (!a.same_extents(b)) throw SizeError("masks have different extents");
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas f(q) + (s (p - q))^2 along one line.
void edt_line(const double* f, double* d, std::size_t n, std::size_t stride, double s,
              std::vector<std::size_t>& v, std::vector<double>& z) {
  const double s2 = s * s;
  v.clear();
  z.clear();
  for (std::size_t q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == kInf) continue;
    while (!v.empty()) {
      const std::size_t r = v.back();
      const double fr = f[r * stride];
      const double x = ((fq + s2 * double(q) * double(q)) - (fr + s2 * double(r) * double(r))) /
                       (2.0 * s2 * double(q - r));
      if (x <= z.back()) {
        v.pop_back();
        z.pop_back();
      } else {
        v.push_back(q);
        z.push_back(x);
        break;
      }
    }
    if (v.empty()) {
      v.push_back(q);
      z.push_back(-kInf);
    }
  }
  if (v.empty()) {
    for (std::size_t p = 0; p < n; ++p) d[p * stride] = kInf;
    return;
  }
  std::vector<double> tmp(n);
  std::size_t k = 0;
  for (std::size_t p = 0; p < n; ++p) {
    while (k + 1 < v.size() && z[k + 1] < double(p)) ++k;
    // Neighbouring parabolas may tie near a breakpoint; take the exact min.
    double best = f[v[k] * stride] + s2 * (double(p) - double(v[k])) * (double(p) - double(v[k]));
    if (k + 1 < v.size()) {
      const double dq = double(p) - double(v[k + 1]);
      best = std::min(best, f[v[k + 1] * stride] + s2 * dq * dq);
    }
    tmp[p] = best;
  }
  for (std::size_t p = 0; p < n; ++p) d[p * stride] = tmp[p];
}

// Squared distance in mm from every voxel to the nearest feature voxel.
std::vector<double> squared_edt(const std::vector<bool>& feature, std::size_t Z, std::size_t H, std::size_t W,
                                const Spacing& sp) {
  std::vector<double> g(Z * H * W);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = feature[i] ? 0.0 : kInf;
  std::vector<std::size_t> v;
  std::vector<double> z;
  for (std::size_t k = 0; k < Z; ++k)
    for (std::size_t y = 0; y < H; ++y) {
      double* row = g.data() + (k * H + y) * W;
      edt_line(row, row, W, 1, sp.x, v, z);
    }
  for (std::size_t k = 0; k < Z; ++k)
    for (std::size_t x = 0; x < W; ++x) {
      double* col = g.data() + k * H * W + x;
      edt_line(col, col, H, W, sp.y, v, z);
    }
  for (std::size_t p = 0; p < H * W; ++p) edt_line(g.data() + p, g.data() + p, Z, H * W, sp.z, v, z);
  return g;
}

std::vector<bool> boundary(const LabelVolume& m) {
  const std::size_t Z = m.depth, H = m.height, W = m.width;
  std::vector<bool> b(m.size(), false);
  auto in = [&](std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) {
    if (z < 0 || y < 0 || x < 0 || z >= std::ptrdiff_t(Z) || y >= std::ptrdiff_t(H) || x >= std::ptrdiff_t(W))
      return false;
    return m.at(std::size_t(z), std::size_t(y), std::size_t(x)) != 0;
  };
  for (std::size_t z = 0; z < Z; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        if (!m.at(z, y, x)) continue;
        const auto zz = std::ptrdiff_t(z), yy = std::ptrdiff_t(y), xx = std::ptrdiff_t(x);
        b[(z * H + y) * W + x] = !in(zz - 1, yy, xx) || !in(zz + 1, yy, xx) || !in(zz, yy - 1, xx) ||
                                 !in(zz, yy + 1, xx) || !in(zz, yy, xx - 1) || !in(zz, yy, xx + 1);
      }
  return b;
}

double directed(const std::vector<bool>& from, const std::vector<bool>& to, const LabelVolume& shape,
                const Spacing& sp) {
  const auto d = squared_edt(to, shape.depth, shape.height, shape.width, sp);
  double worst = 0;
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from[i]) worst = std::max(worst, d[i]);
  return std::sqrt(worst);
}

}  // namespace

LabelVolume binary_mask(const LabelVolume& labels, std::uint8_t cls) {
  LabelVolume m(labels.depth, labels.height, labels.width);
  for (std::size_t i = 0; i < labels.size(); ++i) m.data[i] = labels.data[i] == cls;
  return m;
}

double dice_score(const LabelVolume& a, const LabelVolume& b) {
  check_same(a, b);
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

double hausdorff_mm(const LabelVolume& a, const LabelVolume& b, const Spacing& spacing) {
  check_same(a, b);
  for (double s : {spacing.z, spacing.y, spacing.x})
    if (!(s > 0)) throw ParameterError("spacing must be positive");
  const bool ea = std::all_of(a.data.begin(), a.data.end(), [](auto v) { return v == 0; });
  const bool eb = std::all_of(b.data.begin(), b.data.end(), [](auto v) { return v == 0; });
  if (ea || eb) return kInf;
  const auto ba = boundary(a), bb = boundary(b);
  return std::max(directed(ba, bb, a, spacing), directed(bb, ba, a, spacing));
}

double structure_volume_ml(const LabelVolume& labels, std::uint8_t cls, const Spacing& spacing) {
  const auto n = std::count(labels.data.begin(), labels.data.end(), cls);
  return double(n) * spacing.voxel_mm3() / 1000.0;
}

double ejection_fraction(double edv_ml, double esv_ml) {
  if (!(edv_ml > 0)) throw DegenerateStudyError("end-diastolic volume must be positive to compute an ejection fraction");
  return 100.0 * (edv_ml - esv_ml) / edv_ml;
}

double myocardial_mass_g(double myo_volume_ml, double density) {
  if (!(myo_volume_ml >= 0)) throw ParameterError("myocardial volume must be nonnegative");
  return myo_volume_ml * density;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw SizeError("pearson: vectors differ in length");
  if (x.size() < 2) throw StatisticsError("pearson: needs at least two pairs");
  const double n = double(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw UndefinedCorrelationError("correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

ClinicalStats clinical_stats(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw SizeError("clinical_stats: vectors differ in length");
  if (pred.size() < 3) throw StatisticsError("clinical_stats: needs at least three pairs");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (!std::isfinite(pred[i]) || !std::isfinite(truth[i])) throw StatisticsError("clinical_stats: non-finite value");
  ClinicalStats s;
  try {
    s.cc = pearson(pred, truth);
  } catch (const UndefinedCorrelationError&) {
  }
  const double n = double(pred.size());
  std::vector<double> d(pred.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = pred[i] - truth[i];
  s.bias = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0;
  for (double v : d) ss += (v - s.bias) * (v - s.bias);
  const double sd = std::sqrt(ss / (n - 1));
  s.loa_lo = s.bias - 1.96 * sd;
  s.loa_hi = s.bias + 1.96 * sd;
  return s;
}

std::string structure_name(std::uint8_t s) {
  switch (s) {
    case kLV: return "LV";
    case kRV: return "RV";
    case kMYO: return "MYO";
    default: return "BG";
  }
}

// ---------------------------------------------------------------------------

namespace {

std::size_t structure_index(std::uint8_t s) { return s == kLV ? 0 : s == kRV ? 1 : 2; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; }

}  // namespace

EvaluationReport evaluate_cohort(const std::vector<VolumeStudy>& predictions, const std::vector<VolumeStudy>& truths,
                                 double density) {
  std::map<std::string, const VolumeStudy*> pred_by_id, truth_by_id;
  for (const auto& p : predictions) pred_by_id[p.id()] = &p;
  for (const auto& t : truths) truth_by_id[t.id()] = &t;
  std::vector<std::string> unmatched;
  for (const auto& [id, _] : truth_by_id)
    if (!pred_by_id.count(id)) unmatched.push_back(id + " (no prediction)");
  for (const auto& [id, _] : pred_by_id)
    if (!truth_by_id.count(id)) unmatched.push_back(id + " (no ground truth)");
  if (pred_by_id.size() != predictions.size() || truth_by_id.size() != truths.size())
    throw PairingError("duplicate study ids");
  if (!unmatched.empty()) {
    std::string msg = "unmatched studies:";
    for (const auto& u : unmatched) msg += " " + u;
    throw PairingError(msg);
  }

  EvaluationReport rep;
  double sum_d[3][2] = {}, sum_h[3][2] = {};
  std::size_t n_d[3][2] = {}, n_h[3][2] = {};
  struct Volumes {
    double lv = 0, rv = 0, myo = 0;
  };
  std::map<std::string, std::map<Phase, std::pair<Volumes, Volumes>>> vols;  // patient -> phase -> (pred, truth)

  for (const auto& [id, t] : truth_by_id) {
    const VolumeStudy& p = *pred_by_id.at(id);
    if (!t->labels || !p.labels) throw DataError("study " + id + " lacks a label volume");
    if (!p.labels->same_extents(*t->labels)) throw SizeError("study " + id + ": prediction and truth extents differ");
    for (std::uint8_t s : kStructures) {
      const auto mp = binary_mask(*p.labels, s), mt = binary_mask(*t->labels, s);
      StructureResult r;
      r.study_id = id;
      r.structure = s;
      r.phase = t->phase;
      r.dice = dice_score(mp, mt);
      r.hausdorff_mm = hausdorff_mm(mp, mt, t->spacing);
      r.empty_prediction = std::all_of(mp.data.begin(), mp.data.end(), [](auto v) { return v == 0; });
      r.empty_truth = std::all_of(mt.data.begin(), mt.data.end(), [](auto v) { return v == 0; });
      rep.empty_predictions += r.empty_prediction;
      const std::size_t si = structure_index(s), pi = t->phase == Phase::ED ? 0 : 1;
      sum_d[si][pi] += r.dice;
      ++n_d[si][pi];
      if (std::isfinite(r.hausdorff_mm)) {
        sum_h[si][pi] += r.hausdorff_mm;
        ++n_h[si][pi];
      } else {
        ++rep.flagged[si][pi];
      }
      rep.results.push_back(r);
    }
    auto& slot = vols[t->patient_id][t->phase];
    for (auto [lab, sp, out] : {std::tuple{&*p.labels, &t->spacing, &slot.first},
                                std::tuple{&*t->labels, &t->spacing, &slot.second}}) {
      out->lv = structure_volume_ml(*lab, kLV, *sp);
      out->rv = structure_volume_ml(*lab, kRV, *sp);
      out->myo = structure_volume_ml(*lab, kMYO, *sp);
    }
  }
  for (int s = 0; s < 3; ++s)
    for (int ph = 0; ph < 2; ++ph) {
      rep.mean_dice[s][ph] = n_d[s][ph] ? sum_d[s][ph] / double(n_d[s][ph]) : std::nan("");
      rep.mean_hausdorff[s][ph] = n_h[s][ph] ? sum_h[s][ph] / double(n_h[s][ph]) : std::nan("");
    }

  std::vector<double> lv_p, lv_t, rv_p, rv_t, mass_p, mass_t;
  for (const auto& [patient, phases] : vols) {
    if (!phases.count(Phase::ED) || !phases.count(Phase::ES)) continue;
    const auto& ed = phases.at(Phase::ED);
    const auto& es = phases.at(Phase::ES);
    try {
      const double a = ejection_fraction(ed.first.lv, es.first.lv), b = ejection_fraction(ed.second.lv, es.second.lv);
      const double c = ejection_fraction(ed.first.rv, es.first.rv), d = ejection_fraction(ed.second.rv, es.second.rv);
      lv_p.push_back(a);
      lv_t.push_back(b);
      rv_p.push_back(c);
      rv_t.push_back(d);
    } catch (const DegenerateStudyError&) {
      rep.degenerate.push_back(patient);
    }
    mass_p.push_back(myocardial_mass_g(ed.first.myo, density));
    mass_t.push_back(myocardial_mass_g(ed.second.myo, density));
  }
  for (auto [name, p, t] : {std::tuple{"LV_EF", &lv_p, &lv_t}, std::tuple{"RV_EF", &rv_p, &rv_t},
                            std::tuple{"MYO_mass", &mass_p, &mass_t}}) {
    CohortStats c;
    c.metric = name;
    c.n = p->size();
    if (c.n >= 3) c.stats = clinical_stats(*p, *t);
    rep.clinical.push_back(c);
  }
  return rep;
}

std::string EvaluationReport::table() const {
  const char* names[3] = {"LV", "RV", "MYO"};
  std::string out = "Distance metrics (" + std::to_string(results.size() / 3) + " studies)\n";
  out += pad("", 8) + "  " + std::string("Dice") + std::string(6 * 9 - 4, ' ') + "  Hausdorff (mm)\n";
  out += pad("", 8);
  for (int block = 0; block < 2; ++block) {
    out += "  ";
    for (auto n : names)
      for (const char* ph : {"ED", "ES"}) out += pad(std::string(n) + " " + ph, 9);
  }
  out += "\n" + pad("mean", 8) + "  ";
  for (int s = 0; s < 3; ++s)
    for (int p = 0; p < 2; ++p) out += pad(fmt("%.3f", mean_dice[s][p]), 9);
  out += "  ";
  for (int s = 0; s < 3; ++s)
    for (int p = 0; p < 2; ++p) out += pad(fmt("%.2f", mean_hausdorff[s][p]), 9);
  out += "\n" + pad("flagged", 8) + "  " + pad("", 54) + "  ";
  for (int s = 0; s < 3; ++s)
    for (int p = 0; p < 2; ++p) out += pad(std::to_string(flagged[s][p]), 9);
  out += "\n\nClinical metrics\n";
  out += pad("", 10) + pad("n", 5) + pad("CC", 9) + pad("Bias", 10) + pad("LOA", 22) + "\n";
  for (const auto& c : clinical) {
    out += pad(c.metric, 10) + pad(std::to_string(c.n), 5);
    if (!c.stats) {
      out += pad("n/a", 9) + pad("n/a", 10) + pad("n/a", 22) + "\n";
      continue;
    }
    out += pad(c.stats->cc ? fmt("%.3f", *c.stats->cc) : "undef", 9) + pad(fmt("%.2f", c.stats->bias), 10) +
           pad(fmt("%.2f", c.stats->loa_lo) + "," + fmt("%.2f", c.stats->loa_hi), 22) + "\n";
  }
  out += "\nempty predictions: " + std::to_string(empty_predictions) + "\n";
  if (!degenerate.empty()) {
    out += "excluded (degenerate):";
    for (const auto& d : degenerate) out += " " + d;
    out += "\n";
  }
  return out;
}

std::string EvaluationReport::csv() const {
  std::string out = "study_id,structure,phase,dice,hausdorff_mm,flags\n";
  for (const auto& r : results) {
    std::string flags;
    if (r.empty_prediction) flags += "empty_prediction";
    if (r.empty_truth) flags += std::string(flags.empty() ? "" : ";") + "empty_truth";
    out += r.study_id + "," + structure_name(r.structure) + "," + to_string(r.phase) + "," + fmt("%.6f", r.dice) +
           "," + (std::isfinite(r.hausdorff_mm) ? fmt("%.6f", r.hausdorff_mm) : "inf") + "," + flags + "\n";
  }
  out += "metric,cc,bias,loa_lo,loa_hi\n";
  for (const auto& c : clinical) {
    if (!c.stats) {
      out += c.metric + ",,,,\n";
      continue;
    }
    out += c.metric + "," + (c.stats->cc ? fmt("%.6f", *c.stats->cc) : "") + "," + fmt("%.6f", c.stats->bias) + "," +
           fmt("%.6f", c.stats->loa_lo) + "," + fmt("%.6f", c.stats->loa_hi) + "\n";
  }
  return out;
}

}  // namespace cardioseg
