#include "cardioseg/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <limits>

#include "binary_io.hpp"

namespace cardioseg {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDataOffset = 352;

std::vector<unsigned char> read_maybe_gzip(const std::filesystem::path& path) {
  // gzread passes plain files through unchanged.
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) throw FormatError(path.string() + ": " + msg);
  return out;
}

bool is_gzip_name(const std::filesystem::path& path) { return path.extension() == ".gz"; }

std::size_t bytes_per_voxel(std::int16_t code) {
  switch (code) {
    case 2: return 1;
    case 4:
    case 512: return 2;
    case 16: return 4;
    default: return 0;
  }
}

}  // namespace

VolumeStudy read_nifti(const std::filesystem::path& path) {
  const auto bytes = read_maybe_gzip(path);
  const std::string what = "NIfTI file " + path.string();
  detail::ByteReader r(bytes.data(), bytes.size(), what);
  if (bytes.size() < kHeaderSize) throw FormatError(what + ": truncated header");
  if (std::string(reinterpret_cast<const char*>(bytes.data()) + 344, 4) != std::string("n+1\0", 4))
    throw FormatError(what + ": bad magic");
  const auto sizeof_hdr = r.get_at<std::int32_t>(0);
  if (sizeof_hdr != std::int32_t(kHeaderSize)) {
    if (sizeof_hdr == 0x5C010000) throw UnsupportedError(what + ": big-endian files are not supported");
    throw FormatError(what + ": header size " + std::to_string(sizeof_hdr));
  }

  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = r.get_at<std::int16_t>(40 + 2 * i);
  if (!(dim[0] == 3 || (dim[0] == 4 && dim[4] == 1)))
    throw UnsupportedError(what + ": only 3-D volumes are supported (dim[0]=" + std::to_string(dim[0]) + ")");
  for (int i = 1; i <= 3; ++i)
    if (dim[i] < 1) throw FormatError(what + ": nonpositive extent");
  const auto datatype = r.get_at<std::int16_t>(70);
  const std::size_t bpv = bytes_per_voxel(datatype);
  if (bpv == 0) throw UnsupportedError(what + ": unsupported datatype " + std::to_string(datatype));

  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = r.get_at<float>(76 + 4 * i);
  Spacing sp{std::abs(double(pixdim[3])), std::abs(double(pixdim[2])), std::abs(double(pixdim[1]))};
  if (!(sp.x > 0 && sp.y > 0 && sp.z > 0) || !std::isfinite(sp.voxel_mm3()))
    throw FormatError(what + ": nonpositive voxel spacing");

  const auto vox_offset = r.get_at<float>(108);
  const double slope = r.get_at<float>(112);
  const double inter = r.get_at<float>(116);
  if (!(vox_offset >= float(kHeaderSize)) || vox_offset != std::floor(vox_offset))
    throw FormatError(what + ": bad vox_offset");

  // NIfTI stores x fastest, then y, then z: exactly row-major [Z, H, W].
  VolumeStudy s;
  s.image = ImageVolume(std::size_t(dim[3]), std::size_t(dim[2]), std::size_t(dim[1]));
  s.spacing = sp;
  r.seek(std::size_t(vox_offset));
  if (r.remaining() / bpv < s.image.size()) throw FormatError(what + ": unexpected end of data");
  const bool scale = slope != 0.0 && std::isfinite(slope) && std::isfinite(inter);
  for (auto& v : s.image.data) {
    double raw = 0;
    switch (datatype) {
      case 2: raw = r.get<std::uint8_t>(); break;
      case 4: raw = r.get<std::int16_t>(); break;
      case 512: raw = r.get<std::uint16_t>(); break;
      case 16: raw = r.get<float>(); break;
    }
    v = scale ? raw * slope + inter : raw;
  }
  return s;
}

namespace {

template <typename U>
void put_checked(detail::ByteWriter& w, double v, const std::string& what) {
  if constexpr (std::is_floating_point_v<U>) {
    w.put<U>(U(v));
  } else {
    if (v != std::floor(v) || v < double(std::numeric_limits<U>::min()) || v > double(std::numeric_limits<U>::max()))
      throw DataError(what + ": value " + std::to_string(v) + " does not fit the output datatype");
    w.put<U>(U(v));
  }
}

}  // namespace

void write_nifti(const std::filesystem::path& path, const ImageVolume& image, const Spacing& spacing,
                 NiftiType type) {
  const std::string what = "NIfTI file " + path.string();
  if (image.size() == 0) throw DataError(what + ": empty volume");
  for (auto e : {image.depth, image.height, image.width})
    if (e > std::size_t(std::numeric_limits<std::int16_t>::max())) throw UnsupportedError(what + ": extent too large");
  const auto code = std::int16_t(type);
  const std::size_t bpv = bytes_per_voxel(code);

  detail::ByteWriter w;
  w.put<std::int32_t>(std::int32_t(kHeaderSize));
  w.pad_to(39);
  w.put<std::uint8_t>(0);  // dim_info
  const std::int16_t dim[8] = {3, std::int16_t(image.width), std::int16_t(image.height), std::int16_t(image.depth),
                               1, 1, 1, 1};
  for (auto d : dim) w.put<std::int16_t>(d);
  w.pad_to(70);
  w.put<std::int16_t>(code);
  w.put<std::int16_t>(std::int16_t(8 * bpv));
  w.pad_to(76);
  const float pixdim[8] = {1.0f, float(spacing.x), float(spacing.y), float(spacing.z), 1, 1, 1, 1};
  for (auto p : pixdim) w.put<float>(p);
  w.put<float>(float(kDataOffset));  // vox_offset
  w.put<float>(0.0f);                // scl_slope
  w.put<float>(0.0f);                // scl_inter
  w.pad_to(123);
  w.put<std::uint8_t>(2 | 8);  // xyzt_units: mm, s
  w.pad_to(254);
  w.put<std::int16_t>(0);  // sform_code
  w.pad_to(280);
  // srow: a plain scaling affine, for viewers that ignore pixdim.
  const float srow[3][4] = {{float(spacing.x), 0, 0, 0}, {0, float(spacing.y), 0, 0}, {0, 0, float(spacing.z), 0}};
  for (auto& row : srow)
    for (float v : row) w.put<float>(v);
  w.pad_to(344);
  w.put_bytes("n+1\0", 4);
  w.pad_to(kDataOffset);  // empty extension block

  for (double v : image.data) {
    switch (type) {
      case NiftiType::uint8: put_checked<std::uint8_t>(w, v, what); break;
      case NiftiType::int16: put_checked<std::int16_t>(w, v, what); break;
      case NiftiType::uint16: put_checked<std::uint16_t>(w, v, what); break;
      case NiftiType::float32: put_checked<float>(w, v, what); break;
    }
  }

  if (!is_gzip_name(path)) {
    detail::write_file_bytes(path.string(), w.bytes());
    return;
  }
  // Fixed level and no name/mtime in the gzip header keep output reproducible.
  gzFile f = gzopen(path.string().c_str(), "wb6");
  if (!f) throw IoError("cannot write " + path.string());
  const auto& b = w.bytes();
  const int n = gzwrite(f, b.data(), unsigned(b.size()));
  if (gzclose(f) != Z_OK || n != int(b.size())) throw IoError("cannot write " + path.string());
}

void write_nifti(const std::filesystem::path& path, const LabelVolume& labels, const Spacing& spacing) {
  ImageVolume v(labels.depth, labels.height, labels.width);
  std::copy(labels.data.begin(), labels.data.end(), v.data.begin());
  write_nifti(path, v, spacing, NiftiType::uint8);
}

LabelVolume to_label_volume(const ImageVolume& v) {
  LabelVolume out(v.depth, v.height, v.width);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v.data[i];
    if (!(x >= 0 && x <= 255) || x != std::floor(x))
      throw LabelError("label value " + std::to_string(x) + " is not a small nonnegative integer");
    out.data[i] = std::uint8_t(x);
  }
  return out;
}

}  // namespace cardioseg
