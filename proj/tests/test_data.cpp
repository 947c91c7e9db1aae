#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "cardioseg/augment.hpp"
#include "cardioseg/dataset.hpp"
#include "cardioseg/keyvalue.hpp"
#include "cardioseg/nifti.hpp"
#include "cardioseg/phantom.hpp"
#include "cardioseg/preprocess.hpp"
#include "doctest.h"

using namespace cardioseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cardioseg_data_" + name);
  fs::remove_all(p);
  return p;
}

// Hand-assembled NIfTI-1 header, independent of the library writer.
std::vector<unsigned char> raw_header(std::int16_t datatype, std::int16_t bitpix, const std::int16_t dims[4],
                                      const float pix[3], float slope = 0, float inter = 0,
                                      const char* magic = "n+1") {
  std::vector<unsigned char> h(352, 0);
  auto put = [&](std::size_t off, const void* v, std::size_t n) { std::memcpy(h.data() + off, v, n); };
  const std::int32_t sz = 348;
  put(0, &sz, 4);
  const std::int16_t dim[8] = {dims[0], dims[1], dims[2], dims[3], 1, 1, 1, 1};
  put(40, dim, 16);
  put(70, &datatype, 2);
  put(72, &bitpix, 2);
  const float pixdim[8] = {1, pix[0], pix[1], pix[2], 0, 0, 0, 0};
  put(76, pixdim, 32);
  const float off = 352;
  put(108, &off, 4);
  put(112, &slope, 4);
  put(116, &inter, 4);
  put(344, magic, 4);
  return h;
}

template <typename U>
void append(std::vector<unsigned char>& b, U v) {
  unsigned char raw[sizeof(U)];
  std::memcpy(raw, &v, sizeof(U));
  b.insert(b.end(), raw, raw + sizeof(U));
}

void dump(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

ImageVolume ramp_volume(std::size_t z, std::size_t h, std::size_t w) {
  ImageVolume v(z, h, w);
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = double(i);
  return v;
}

// 4-connected flood fill of `passable` pixels from the slice border.
std::vector<bool> reach_from_border(const LabelVolume& l, std::size_t z, std::uint8_t wall) {
  const std::size_t H = l.height, W = l.width;
  std::vector<bool> seen(H * W, false);
  std::deque<std::size_t> q;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if ((y == 0 || x == 0 || y == H - 1 || x == W - 1) && l.at(z, y, x) != wall) {
        seen[y * W + x] = true;
        q.push_back(y * W + x);
      }
  while (!q.empty()) {
    const std::size_t p = q.front();
    q.pop_front();
    const std::size_t y = p / W, x = p % W;
    const std::ptrdiff_t dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      const auto ny = std::ptrdiff_t(y) + dy[k], nx = std::ptrdiff_t(x) + dx[k];
      if (ny < 0 || nx < 0 || ny >= std::ptrdiff_t(H) || nx >= std::ptrdiff_t(W)) continue;
      const std::size_t np = std::size_t(ny) * W + std::size_t(nx);
      if (seen[np] || l.data[z * H * W + np] == wall) continue;
      seen[np] = true;
      q.push_back(np);
    }
  }
  return seen;
}

std::size_t count_label(const LabelVolume& l, std::uint8_t c) { return std::size_t(std::count(l.data.begin(), l.data.end(), c)); }

}  // namespace

TEST_CASE("read a handcrafted float32 NIfTI file") {
  const auto p = scratch("hand.nii");
  const std::int16_t dims[4] = {3, 2, 2, 2};
  const float pix[3] = {1.5f, 1.5f, 10.0f};
  auto b = raw_header(16, 32, dims, pix);
  for (int i = 0; i < 8; ++i) append<float>(b, 0.5f * float(i) - 1.0f);
  dump(p, b);
  auto s = read_nifti(p);
  CHECK(s.image.depth == 2);
  CHECK(s.image.height == 2);
  CHECK(s.image.width == 2);
  CHECK(s.spacing == Spacing{10.0, 1.5, 1.5});
  // x varies fastest on disk, which is the last index here.
  CHECK(s.image.at(0, 0, 1) == 0.5 * 1 - 1.0);
  CHECK(s.image.at(0, 1, 0) == 0.5 * 2 - 1.0);
  CHECK(s.image.at(1, 0, 0) == 0.5 * 4 - 1.0);
  CHECK(s.image.at(1, 1, 1) == 0.5 * 7 - 1.0);
}

TEST_CASE("NIfTI header rules") {
  const auto p = scratch("rules.nii");
  const std::int16_t dims[4] = {3, 3, 1, 1};
  const float pix[3] = {1, 1, 1};

  auto b = raw_header(4, 16, dims, pix, 2.0f, 1.0f);
  for (std::int16_t v : {-3, 0, 7}) append(b, v);
  dump(p, b);
  auto s = read_nifti(p);
  CHECK(s.image.data == std::vector<double>{-5, 1, 15});

  b = raw_header(4, 16, dims, pix, 0.0f, 5.0f);  // zero slope: no scaling
  for (std::int16_t v : {-3, 0, 7}) append(b, v);
  dump(p, b);
  CHECK(read_nifti(p).image.data == std::vector<double>{-3, 0, 7});

  b = raw_header(16, 32, dims, pix, 0, 0, "ni1");
  for (int i = 0; i < 3; ++i) append<float>(b, 1.0f);
  dump(p, b);
  CHECK_THROWS_AS(read_nifti(p), FormatError);

  b = raw_header(64, 64, dims, pix);  // float64
  for (int i = 0; i < 3; ++i) append<double>(b, 1.0);
  dump(p, b);
  CHECK_THROWS_AS(read_nifti(p), UnsupportedError);

  const std::int16_t two_d[4] = {2, 3, 1, 1};
  b = raw_header(2, 8, two_d, pix);
  for (int i = 0; i < 3; ++i) append<std::uint8_t>(b, 1);
  dump(p, b);
  CHECK_THROWS_AS(read_nifti(p), UnsupportedError);

  b = raw_header(2, 8, dims, pix);
  append<std::uint8_t>(b, 1);  // two voxels short
  dump(p, b);
  CHECK_THROWS_AS(read_nifti(p), FormatError);

  CHECK_THROWS_AS(read_nifti(scratch("absent.nii")), IoError);
}

TEST_CASE("NIfTI single-frame 4-D and gzip input") {
  const auto p = scratch("frame.nii.gz");
  std::int16_t dims[4] = {4, 2, 1, 1};
  const float pix[3] = {1, 2, 3};
  auto b = raw_header(512, 16, dims, pix);
  append<std::uint16_t>(b, 65535);
  append<std::uint16_t>(b, 3);
  gzFile f = gzopen(p.string().c_str(), "wb");
  gzwrite(f, b.data(), unsigned(b.size()));
  gzclose(f);
  auto s = read_nifti(p);
  CHECK(s.image.data == std::vector<double>{65535, 3});
  CHECK(s.spacing == Spacing{3, 2, 1});
}

TEST_CASE("NIfTI round trip for every supported datatype") {
  std::mt19937_64 rng(3);
  for (auto [type, lo, hi] : {std::tuple{NiftiType::uint8, 0, 255}, std::tuple{NiftiType::int16, -32768, 32767},
                              std::tuple{NiftiType::uint16, 0, 65535}, std::tuple{NiftiType::float32, -1000, 1000}})
    for (const char* name : {"rt.nii", "rt.nii.gz"}) {
      ImageVolume v(3, 4, 5);
      std::uniform_int_distribution<int> d(lo, hi);
      for (auto& x : v.data) x = type == NiftiType::float32 ? double(float(d(rng)) / 7.0f) : double(d(rng));
      const Spacing sp{8.0, 1.25, 0.75};
      const auto p = scratch(name);
      write_nifti(p, v, sp, type);
      auto back = read_nifti(p);
      CHECK(back.image.data == v.data);
      CHECK(back.image.same_extents(v));
      CHECK(back.spacing == sp);
    }
  ImageVolume bad(1, 1, 2);
  bad.data = {0.5, 1.0};
  CHECK_THROWS_AS(write_nifti(scratch("bad.nii"), bad, Spacing{}, NiftiType::uint8), DataError);
  CHECK_THROWS_AS(to_label_volume(bad), LabelError);
}

TEST_CASE("CLAHE") {
  std::vector<double> flat(64, 3.25);
  CHECK(clahe_slice(flat, 8, 8) == flat);

  // Single tile, no clipping: classical histogram equalization of distinct
  // values, i.e. min + rank / (n - 1) * range.
  std::vector<double> ramp(16);
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = double(i * i);
  std::vector<std::size_t> order(16);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(5);
  std::shuffle(ramp.begin(), ramp.end(), rng);
  ClaheConfig global{256, 1, 1, 1.0};
  auto eq = clahe_slice(ramp, 4, 4, global);
  for (std::size_t i = 0; i < 16; ++i) {
    const double rank = double(std::count_if(ramp.begin(), ramp.end(), [&](double v) { return v < ramp[i]; }));
    CHECK(eq[i] == doctest::Approx(rank / 15.0 * 225.0).epsilon(1e-12));
  }

  // Range preservation on random slices with the default tiling.
  std::normal_distribution<double> n(100, 30);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 32}, {20, 37}, {5, 3}}) {
    std::vector<double> s(h * w);
    for (auto& v : s) v = n(rng);
    auto out = clahe_slice(s, h, w);
    CHECK(*std::min_element(out.begin(), out.end()) == *std::min_element(s.begin(), s.end()));
    CHECK(*std::max_element(out.begin(), out.end()) == *std::max_element(s.begin(), s.end()));
  }
}

TEST_CASE("percentile normalization") {
  ImageVolume v(1, 1, 101);
  for (std::size_t i = 0; i <= 100; ++i) v.data[i] = double(i);
  CHECK(percentile(v.data, 1) == 1.0);
  CHECK(percentile(v.data, 99) == 99.0);
  CHECK(percentile(std::vector<double>{0, 10}, 25) == 2.5);
  auto n = normalize_percentile(v, 1, 99);
  CHECK(n.data[50] == doctest::Approx(49.0 / 98.0).epsilon(1e-15));
  CHECK(n.data[0] == 0.0);
  CHECK(n.data[100] == 1.0);
  auto full = normalize_percentile(v, 0, 100);
  for (std::size_t i = 0; i <= 100; ++i) CHECK(full.data[i] == doctest::Approx(double(i) / 100.0));
  ImageVolume flat(2, 2, 2, 7.0);
  for (double x : normalize_percentile(flat, 1, 99).data) CHECK(x == 0.0);
  CHECK_THROWS_AS(normalize_percentile(v, 99, 1), ParameterError);
}

TEST_CASE("resampling") {
  VolumeStudy s;
  s.image = ramp_volume(3, 4, 5);
  s.labels = LabelVolume(3, 4, 5);
  for (std::size_t i = 0; i < s.labels->size(); ++i) s.labels->data[i] = std::uint8_t(i % 4);
  s.spacing = {10, 1.5, 1.5};

  auto same = resample(s, s.spacing);
  CHECK(same.image.data == s.image.data);
  CHECK(same.labels->data == s.labels->data);

  auto fine = resample(s, {10, 0.75, 0.75});
  CHECK(fine.image.same_extents(3, 8, 10));
  CHECK(fine.spacing == Spacing{10, 0.75, 0.75});
  std::set<int> before(s.labels->data.begin(), s.labels->data.end()), after(fine.labels->data.begin(), fine.labels->data.end());
  CHECK(std::includes(before.begin(), before.end(), after.begin(), after.end()));

  // 1-D: [0, 10] at spacing 2 onto spacing 1, cell-centred with edge clamping.
  VolumeStudy line;
  line.image = ImageVolume(1, 1, 2);
  line.image.data = {0, 10};
  line.spacing = {1, 1, 2};
  auto up = resample(line, {1, 1, 1});
  CHECK(up.image.data == std::vector<double>{0, 2.5, 7.5, 10});

  CHECK(resample(s, {10, 3.0, 100.0}).image.same_extents(3, 2, 1));
  CHECK_THROWS_AS(resample(s, {10, 0, 1}), ParameterError);
}

TEST_CASE("crop or pad") {
  ImageVolume big = ramp_volume(1, 300, 300);
  auto c = crop_or_pad(big, 256, 256);
  CHECK(c.same_extents(1, 256, 256));
  CHECK(c.at(0, 0, 0) == big.at(0, 22, 22));
  CHECK(c.at(0, 255, 255) == big.at(0, 277, 277));

  ImageVolume small(1, 200, 200, 1.0);
  auto p = crop_or_pad(small, 256, 256);
  for (std::size_t y = 0; y < 256; ++y)
    for (std::size_t x = 0; x < 256; ++x) {
      const bool inside = y >= 28 && y < 228 && x >= 28 && x < 228;
      CHECK(p.at(0, y, x) == (inside ? 1.0 : 0.0));
    }
  CHECK(crop_or_pad(p, 200, 200).data == small.data);

  auto same = ramp_volume(2, 16, 16);
  CHECK(crop_or_pad(same, 16, 16).data == same.data);

  LabelVolume l(3, 2, 2);
  for (std::size_t z = 0; z < 3; ++z) std::fill(l.slice(z).begin(), l.slice(z).end(), std::uint8_t(z + 1));
  auto deep = fit_depth(l, 7);
  std::vector<int> firsts;
  for (std::size_t z = 0; z < 7; ++z) firsts.push_back(deep.at(z, 0, 0));
  CHECK(firsts == std::vector<int>{1, 1, 1, 2, 3, 3, 3});
  auto shallow = fit_depth(l, 1);
  CHECK(shallow.at(0, 1, 1) == 2);
}

TEST_CASE("slice stacking") {
  VolumeStudy s;
  s.image = ImageVolume(4, 2, 2);
  for (std::size_t z = 0; z < 4; ++z) std::fill(s.image.slice(z).begin(), s.image.slice(z).end(), double(z));
  s.labels = LabelVolume(4, 2, 2, 1);
  s.labels->at(2, 0, 0) = 3;

  auto one = stack_slices(s, 1, 2);
  CHECK(one.channels == 1);
  CHECK(one.image == std::vector<double>(4, 2.0));
  CHECK(one.labels == std::vector<std::uint8_t>{3, 1, 1, 1});

  auto edge = stack_slices(s, 3, 0);
  std::vector<double> firsts;
  for (std::size_t c = 0; c < 3; ++c) firsts.push_back(edge.image[c * 4]);
  CHECK(firsts == std::vector<double>{0, 0, 1});

  auto five = stack_slices(s, 5, 2);
  firsts.clear();
  for (std::size_t c = 0; c < 5; ++c) firsts.push_back(five.image[c * 4]);
  CHECK(firsts == std::vector<double>{0, 1, 2, 3, 3});

  CHECK_THROWS_AS(stack_slices(s, 2, 1), ParameterError);
  CHECK_THROWS_AS(stack_slices(s, 3, 4), ParameterError);
}

TEST_CASE("augmentation") {
  Sample s;
  s.channels = 1;
  s.depth = 1;
  s.height = s.width = 3;
  s.image = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  s.labels = {1, 1, 0, 2, 0, 0, 3, 0, 0};

  auto id = apply_affine(s, {0.0, 1.0});
  CHECK(id.image == s.image);
  CHECK(id.labels == s.labels);

  // +90 degrees: out[y][x] = in[2 - x][y].
  auto r = apply_affine(s, {90.0, 1.0});
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) {
      CHECK(r.labels[y * 3 + x] == s.labels[(2 - x) * 3 + y]);
      CHECK(r.image[y * 3 + x] == s.image[(2 - x) * 3 + y]);
    }

  AugmentConfig cfg;
  Rng rng(9);
  std::mt19937_64 fill(2);
  Sample big;
  big.channels = 3;
  big.depth = 1;
  big.height = big.width = 24;
  big.image.resize(3 * 24 * 24);
  big.labels.resize(24 * 24);
  for (auto& v : big.image) v = double(fill() % 100);
  for (auto& v : big.labels) v = std::uint8_t(fill() % 3);
  for (int i = 0; i < 50; ++i) {
    auto p = sample_affine(cfg, rng);
    CHECK(std::abs(p.angle_deg) <= 15.0);
    CHECK(p.scale >= 0.9);
    CHECK(p.scale <= 1.1);
    auto a = apply_affine(big, p);
    std::set<int> before(big.labels.begin(), big.labels.end());
    before.insert(0);
    for (auto v : a.labels) CHECK(before.count(v) == 1);
    CHECK(a.image.size() == big.image.size());
  }

  Rng r1(sample_seed(1, "patient001", Phase::ED, 3, 4)), r2(sample_seed(1, "patient001", Phase::ED, 3, 4));
  CHECK(augment(big, cfg, r1).image == augment(big, cfg, r2).image);
  CHECK(sample_seed(1, "patient001", Phase::ED, 3, 4) != sample_seed(1, "patient001", Phase::ES, 3, 4));
  CHECK(sample_seed(1, "patient001", Phase::ED, 3, 4) != sample_seed(1, "patient002", Phase::ED, 3, 4));
  CHECK(sample_seed(1, "patient001", Phase::ED, 3, 4) != sample_seed(1, "patient001", Phase::ED, 4, 4));

  AugmentConfig off;
  off.probability = 0.0;
  Rng r3(1);
  CHECK(augment(big, off, r3).image == big.image);
}

TEST_CASE("phantom anatomy") {
  PhantomConfig cfg;
  cfg.count = 4;
  cfg.depth = 6;
  cfg.seed = 21;
  auto studies = generate_phantom(cfg);
  REQUIRE(studies.size() == 8);
  for (std::size_t i = 0; i < studies.size(); ++i) {
    const auto& s = studies[i];
    s.validate();
    CHECK(s.phase == (i % 2 ? Phase::ES : Phase::ED));
    std::set<int> labels(s.labels->data.begin(), s.labels->data.end());
    CHECK(labels == std::set<int>{0, 1, 2, 3});
    for (std::size_t z = 0; z < s.image.depth; ++z) {
      // No 4-connected path avoiding the myocardium joins the border to the LV.
      auto reach = reach_from_border(*s.labels, z, kMYO);
      for (std::size_t p = 0; p < s.image.plane(); ++p)
        if (s.labels->data[z * s.image.plane() + p] == kLV) CHECK_FALSE(reach[p]);
    }
  }
  for (std::size_t p = 0; p < 4; ++p)
    CHECK(count_label(*studies[2 * p + 1].labels, kLV) < count_label(*studies[2 * p].labels, kLV));
  CHECK(studies[0].patient_id == "patient001");
  CHECK(studies[7].patient_id == "patient004");

  auto again = generate_phantom(cfg);
  for (std::size_t i = 0; i < studies.size(); ++i) {
    CHECK(again[i].image.data == studies[i].image.data);
    CHECK(again[i].labels->data == studies[i].labels->data);
  }
  cfg.width = 31;
  CHECK_THROWS_AS(generate_phantom(cfg), ParameterError);
}

TEST_CASE("dataset directories") {
  PhantomConfig cfg;
  cfg.count = 2;
  cfg.depth = 3;
  cfg.height = cfg.width = 32;
  auto studies = generate_phantom(cfg);
  const auto root = scratch("dataset");
  write_dataset(root, studies);
  CHECK(fs::exists(root / "patient001_ED" / "image.nii"));
  CHECK(fs::exists(root / "patient002_ES" / "label.nii"));
  auto back = read_dataset(root);
  REQUIRE(back.size() == studies.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id() == studies[i].id());
    CHECK(back[i].image.data == studies[i].image.data);
    CHECK(back[i].labels->data == studies[i].labels->data);
    CHECK(back[i].spacing == studies[i].spacing);
  }
  CHECK(patient_ids(back) == std::vector<std::string>{"patient001", "patient002"});

  std::ofstream(root / "patient001_ED" / "info.txt") << "patient_id = x\nphase = mid\n";
  CHECK_THROWS_AS(read_dataset(root), DataError);
  CHECK_THROWS_AS(read_dataset(scratch("nowhere")), IoError);
}

TEST_CASE("key = value files") {
  auto kv = parse_key_values("# comment\n a = 1 \n\nb=two words # tail\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"a", "1"});
  CHECK(*find_value(kv, "b") == "two words");
  CHECK(find_value(kv, "c") == nullptr);
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), FormatError);
  CHECK_THROWS_AS(parse_key_values("novalue\n"), FormatError);
}

TEST_CASE("preprocessing pipeline") {
  PhantomConfig pc;
  pc.count = 1;
  pc.depth = 5;
  pc.height = 48;
  pc.width = 40;
  pc.spacing = {8.0, 1.25, 1.8};
  const auto study = generate_phantom(pc)[0];

  PreprocessConfig cfg;
  cfg.height = cfg.width = 64;
  auto prepared = preprocess(study, cfg);
  const auto& s = prepared.study;
  CHECK(s.image.height == 64);
  CHECK(s.image.width == 64);
  CHECK(s.image.depth == 4);  // round(5 * 8 / 10)
  for (double v : s.image.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  std::set<int> labels(s.labels->data.begin(), s.labels->data.end());
  CHECK(labels.size() <= 4);
  CHECK(*labels.rbegin() <= 3);

  auto native = restore_native(*s.labels, prepared.grid);
  CHECK(native.same_extents(study.image));

  // The geometric stages are idempotent on their own output.
  auto again = resample(s, cfg.target_spacing);
  CHECK(again.image.data == s.image.data);
  CHECK(crop_or_pad(again.image, 64, 64).data == s.image.data);
  auto clipped = s.image;
  for (auto& v : clipped.data) v = std::clamp(v, cfg.clip_lo, cfg.clip_hi);
  CHECK(clipped.data == s.image.data);

  PreprocessConfig bad;
  bad.pct_lo = 50;
  bad.pct_hi = 50;
  CHECK_THROWS_AS(preprocess(study, bad), ParameterError);
}
