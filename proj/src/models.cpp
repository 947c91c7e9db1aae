#include "cardioseg/models.hpp"

#include <cmath>
#include <map>

#include "binary_io.hpp"

namespace cardioseg {

ModelConfig ModelConfig::default_2d(std::size_t slices) {
  ModelConfig c;
  c.dims = 2;
  c.in_channels = slices;
  return c;
}

ModelConfig ModelConfig::default_3d() {
  ModelConfig c;
  c.dims = 3;
  c.in_channels = 1;
  c.max_width = 256;
  return c;
}

void ModelConfig::validate() const {
  if (dims != 2 && dims != 3) throw ParameterError("model dims must be 2 or 3");
  if (num_classes < 2) throw ParameterError("num_classes must be at least 2");
  if (depth < 1) throw ParameterError("depth must be at least 1");
  if (base_width < 1) throw ParameterError("base_width must be positive");
  if (max_width != 0 && max_width < base_width) throw ParameterError("max_width below base_width");
  if (dims == 2 && in_channels != 1 && in_channels != 3 && in_channels != 5)
    throw ParameterError("2-D models take 1, 3 or 5 input slices");
  if (dims == 3 && in_channels != 1) throw ParameterError("3-D models take one input channel");
  for (double r : {dropout_last, dropout_second_last})
    if (!(r >= 0.0 && r < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
}

std::size_t ModelConfig::width_at(std::size_t level) const {
  std::size_t w = base_width << level;
  return max_width ? std::min(w, max_width) : w;
}

// ---------------------------------------------------------------------------

template <typename T>
SegmentationModel<T>::SegmentationModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), rng_(seed) {
  config_.validate();
  std::size_t in_ch = config_.in_channels;
  for (std::size_t l = 0; l < config_.depth; ++l) {
    encoder_.push_back(make_level(in_ch, config_.width_at(l)));
    in_ch = config_.width_at(l);
  }
  base_ = make_level(in_ch, config_.width_at(config_.depth));
  up_.resize(config_.depth);
  decoder_.resize(config_.depth);
  for (std::size_t l = config_.depth; l-- > 0;) {
    const std::size_t w = config_.width_at(l);
    up_[l] = make_upconv(config_.width_at(l + 1), w);
    decoder_[l] = make_level(2 * w, w);
  }
  head_ = make_conv(config_.width_at(0), config_.num_classes, 1);
}

template <typename T>
ConvParams<T> SegmentationModel<T>::make_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel) {
  const std::size_t rank = std::size_t(config_.dims);
  Shape ws{out_ch, in_ch};
  std::size_t fan_in = in_ch;
  for (std::size_t d = 0; d < rank; ++d) {
    ws.push_back(kernel);
    fan_in *= kernel;
  }
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / double(fan_in)));
  std::vector<T> w(numel(ws));
  for (auto& v : w) v = T(normal(rng_));
  ConvParams<T> p;
  p.weight = Tensor<T>::from(ws, std::move(w), true);
  p.bias = Tensor<T>::zeros({out_ch}, true);
  p.stride.assign(rank, 1);
  p.padding.assign(rank, kernel / 2);
  return p;
}

template <typename T>
ConvParams<T> SegmentationModel<T>::make_upconv(std::size_t in_ch, std::size_t out_ch) {
  Shape ws{in_ch, out_ch};
  std::vector<std::size_t> stride;
  if (config_.dims == 3) stride = {1, 2, 2};
  else stride = {2, 2};
  for (auto s : stride) ws.push_back(s);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / double(in_ch)));
  std::vector<T> w(numel(ws));
  for (auto& v : w) v = T(normal(rng_));
  ConvParams<T> p;
  p.weight = Tensor<T>::from(ws, std::move(w), true);
  p.bias = Tensor<T>::zeros({out_ch}, true);
  p.stride = stride;
  p.padding.assign(stride.size(), 0);
  return p;
}

template <typename T>
typename SegmentationModel<T>::Level SegmentationModel<T>::make_level(std::size_t in_ch, std::size_t width) {
  Level l;
  l.first = Block{make_conv(in_ch, width, 3), BatchNormParams<T>::make(width), make_conv(width, width, 3)};
  l.second = Block{make_conv(width, width, 3), BatchNormParams<T>::make(width), make_conv(width, width, 3)};
  return l;
}

template <typename T>
Tensor<T> SegmentationModel<T>::run_block(Block& b, const Tensor<T>& x) {
  return conv(relu(batchnorm(conv(x, b.conv_a), b.bn, mode_)), b.conv_b);
}

template <typename T>
Tensor<T> SegmentationModel<T>::run_level(Level& l, const Tensor<T>& x) {
  return run_block(l.second, run_block(l.first, x));
}

template <typename T>
void SegmentationModel<T>::check_input(const Tensor<T>& input) const {
  const std::size_t want_rank = std::size_t(config_.dims) + 2;
  if (input.dim() != want_rank)
    throw SizeError("model expects a rank-" + std::to_string(want_rank) + " input, got " + to_string(input.shape()));
  if (input.shape()[1] != config_.in_channels)
    throw SizeError("model expects " + std::to_string(config_.in_channels) + " input channels, got " +
                    std::to_string(input.shape()[1]));
  const std::size_t m = config_.spatial_multiple();
  const std::size_t h = input.shape()[want_rank - 2], w = input.shape()[want_rank - 1];
  if (h % m != 0 || w % m != 0)
    throw SizeError("in-plane extents " + std::to_string(h) + "x" + std::to_string(w) +
                    " must be multiples of " + std::to_string(m));
}

template <typename T>
Tensor<T> SegmentationModel<T>::forward(const Tensor<T>& input) {
  check_input(input);
  const std::vector<std::size_t> pool =
      config_.dims == 3 ? std::vector<std::size_t>{1, 2, 2} : std::vector<std::size_t>{2, 2};
  const std::size_t depth = config_.depth;
  std::vector<Tensor<T>> skips;
  Tensor<T> x = input;
  for (std::size_t l = 0; l < depth; ++l) {
    x = run_level(encoder_[l], x);
    if (l + 1 == depth) x = dropout(x, config_.dropout_last, mode_, rng_);
    else if (l + 2 == depth) x = dropout(x, config_.dropout_second_last, mode_, rng_);
    skips.push_back(x);
    x = maxpool(x, pool, pool);
  }
  x = run_level(base_, x);
  for (std::size_t l = depth; l-- > 0;) {
    x = upconv(x, up_[l]);
    x = concat<T>({skips[l], x}, 1);
    x = run_level(decoder_[l], x);
  }
  return conv(x, head_);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> SegmentationModel<T>::state() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto add_conv = [&](const std::string& name, const ConvParams<T>& c) {
    out.emplace_back(name + ".weight", c.weight);
    out.emplace_back(name + ".bias", c.bias);
  };
  auto add_level = [&](const std::string& name, const Level& l) {
    const Block* blocks[2] = {&l.first, &l.second};
    for (int i = 0; i < 2; ++i) {
      const std::string b = name + ".block" + std::to_string(i);
      add_conv(b + ".conv_a", blocks[i]->conv_a);
      out.emplace_back(b + ".bn.gamma", blocks[i]->bn.gamma);
      out.emplace_back(b + ".bn.beta", blocks[i]->bn.beta);
      out.emplace_back(b + ".bn.running_mean", blocks[i]->bn.running_mean);
      out.emplace_back(b + ".bn.running_var", blocks[i]->bn.running_var);
      add_conv(b + ".conv_b", blocks[i]->conv_b);
    }
  };
  for (std::size_t l = 0; l < encoder_.size(); ++l) add_level("enc" + std::to_string(l), encoder_[l]);
  add_level("base", base_);
  for (std::size_t l = decoder_.size(); l-- > 0;) {
    add_conv("dec" + std::to_string(l) + ".up", up_[l]);
    add_level("dec" + std::to_string(l), decoder_[l]);
  }
  add_conv("head", head_);
  return out;
}

template <typename T>
std::vector<Tensor<T>> SegmentationModel<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : state())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

template <typename T>
std::size_t SegmentationModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

template class SegmentationModel<float>;
template class SegmentationModel<double>;

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
void save_checkpoint(const SegmentationModel<T>& model, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.put_bytes("CSEG", 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  auto state = model.state();
  w.put<std::uint32_t>(std::uint32_t(state.size()));
  for (const auto& [name, t] : state) {
    w.put<std::uint16_t>(std::uint16_t(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(std::uint8_t(t.dim()));
    for (auto e : t.shape()) w.put<std::uint64_t>(e);
    for (T v : t.data()) w.put<float>(float(v));
  }
  detail::write_file_bytes(path.string(), w.bytes());
}

template <typename T>
SegmentationModel<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  const auto bytes = detail::read_file_bytes(path.string());
  detail::ByteReader r(bytes.data(), bytes.size(), "checkpoint " + path.string());
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != "CSEG") throw FormatError("checkpoint " + path.string() + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, std::pair<Shape, std::vector<float>>> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.get<std::uint16_t>(), '\0');
    r.get_bytes(name.data(), name.size());
    Shape shape(r.get<std::uint8_t>());
    for (auto& e : shape) e = r.get<std::uint64_t>();
    const std::size_t n = numel(shape);
    if (n > r.remaining() / sizeof(float)) throw FormatError("checkpoint " + path.string() + ": unexpected end of data");
    std::vector<float> values(n);
    for (auto& v : values) v = r.get<float>();
    stored.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint " + path.string() + ": trailing bytes");

  SegmentationModel<T> model(config, 0);
  auto state = model.state();
  if (state.size() != stored.size())
    throw CompatibilityError("checkpoint holds " + std::to_string(stored.size()) + " tensors, model needs " +
                             std::to_string(state.size()));
  for (auto& [name, t] : state) {
    auto it = stored.find(name);
    if (it == stored.end()) throw CompatibilityError("checkpoint lacks tensor " + name);
    if (it->second.first != t.shape())
      throw CompatibilityError("tensor " + name + " has shape " + to_string(it->second.first) + ", model needs " +
                               to_string(t.shape()));
    auto dst = t.data_mut();
    std::copy(it->second.second.begin(), it->second.second.end(), dst.begin());
  }
  return model;
}

template void save_checkpoint(const SegmentationModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const SegmentationModel<double>&, const std::filesystem::path&);
template SegmentationModel<float> load_checkpoint(const std::filesystem::path&, const ModelConfig&);
template SegmentationModel<double> load_checkpoint(const std::filesystem::path&, const ModelConfig&);

}  // namespace cardioseg
