#pragma once

// Encoder-decoder segmentation networks in 2-D and 3-D.
//
// Each level runs two conv_bn_relu blocks (conv, bn, relu, conv). Encoder
// levels double the width from `base_width` and pool by 2 in-plane; the 3-D
// network never pools along Z, so it accepts any slice count. Decoder levels
// upsample with a stride-2 transposed convolution, concatenate the matching
// encoder output and run another level. A final 1x1 conv maps to classes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cardioseg/layers.hpp"

namespace cardioseg {

struct ModelConfig {
  int dims = 2;
  std::size_t in_channels = 3;
  std::size_t num_classes = 4;
  std::size_t base_width = 32;
  std::size_t depth = 4;
  std::size_t max_width = 0;  // 0 = unlimited
  double dropout_last = 0.5;
  double dropout_second_last = 0.3;

  static ModelConfig default_2d(std::size_t slices = 3);
  static ModelConfig default_3d();

  /// Throws ParameterError on any violated invariant.
  void validate() const;
  /// Feature width at encoder level `level`; `level == depth` is the base.
  std::size_t width_at(std::size_t level) const;
  /// In-plane extents must be multiples of this.
  std::size_t spatial_multiple() const { return std::size_t(1) << depth; }
};

template <typename T>
class SegmentationModel {
 public:
  SegmentationModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Logits [B, num_classes, spatial...] with the input's spatial extents.
  Tensor<T> forward(const Tensor<T>& input);

  void set_mode(Mode mode) { mode_ = mode; }
  Mode mode() const { return mode_; }

  /// Trainable tensors, in a stable order.
  std::vector<Tensor<T>> parameters() const;
  std::size_t parameter_count() const;
  /// Every persistent tensor (parameters and batch-norm running statistics)
  /// with its checkpoint name.
  std::vector<std::pair<std::string, Tensor<T>>> state() const;

  Rng& dropout_rng() { return rng_; }

 private:
  struct Block {
    ConvParams<T> conv_a;
    BatchNormParams<T> bn;
    ConvParams<T> conv_b;
  };
  struct Level {
    Block first, second;
  };

  Level make_level(std::size_t in_ch, std::size_t width);
  ConvParams<T> make_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel);
  ConvParams<T> make_upconv(std::size_t in_ch, std::size_t out_ch);
  Tensor<T> run_block(Block& b, const Tensor<T>& x);
  Tensor<T> run_level(Level& l, const Tensor<T>& x);
  void check_input(const Tensor<T>& input) const;

  ModelConfig config_;
  Mode mode_ = Mode::train;
  Rng rng_;
  std::vector<Level> encoder_;
  Level base_;
  std::vector<ConvParams<T>> up_;
  std::vector<Level> decoder_;
  ConvParams<T> head_;
};

template <typename T>
SegmentationModel<T> build_model(const ModelConfig& config, std::uint64_t seed = 0) {
  return SegmentationModel<T>(config, seed);
}

/// Binary checkpoint: "CSEG", u32 version, u32 tensor count, then per
/// tensor u16 name length, name bytes, u8 rank, u64 extents, float32 data.
/// All integers little-endian.
template <typename T>
void save_checkpoint(const SegmentationModel<T>& model, const std::filesystem::path& path);

/// Throws FormatError for damaged files and CompatibilityError when the
/// stored tensors do not match `config`.
template <typename T>
SegmentationModel<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace cardioseg
