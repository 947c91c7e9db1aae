#include "cardioseg/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>

namespace cardioseg {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;

using Dims3 = std::array<std::size_t, 3>;

// Every spatial layout is handled as (D, H, W); 2-D tensors get D = 1.
struct Layout {
  std::size_t batch = 0, channels = 0;
  Dims3 spatial{1, 1, 1};
  std::size_t rank = 0;  // 2 or 3
  std::size_t volume() const { return spatial[0] * spatial[1] * spatial[2]; }
};

Layout layout_of(const Shape& s, const char* op) {
  if (s.size() != 4 && s.size() != 5)
    throw SizeError(std::string(op) + ": expected [B,C,H,W] or [B,C,D,H,W], got " + to_string(s));
  Layout l;
  l.batch = s[0];
  l.channels = s[1];
  l.rank = s.size() - 2;
  if (l.rank == 2) {
    l.spatial = {1, s[2], s[3]};
  } else {
    l.spatial = {s[2], s[3], s[4]};
  }
  return l;
}

Dims3 lift(const std::vector<std::size_t>& v, std::size_t rank, std::size_t fill, const char* what) {
  if (v.size() != rank)
    throw SizeError(std::string(what) + ": expected " + std::to_string(rank) + " entries, got " +
                    std::to_string(v.size()));
  if (rank == 2) return {fill, v[0], v[1]};
  return {v[0], v[1], v[2]};
}

Shape make_shape(std::size_t b, std::size_t c, const Dims3& sp, std::size_t rank) {
  if (rank == 2) return {b, c, sp[1], sp[2]};
  return {b, c, sp[0], sp[1], sp[2]};
}

// col[(c, kz, ky, kx), (z, y, x)] = in[c, z + kz - pz, y + ky - py, x + kx - px]
template <typename T>
void im2col(const T* in, std::size_t channels, const Dims3& in_sp, const Dims3& k, const Dims3& pad,
            const Dims3& out_sp, T* col) {
  const std::size_t out_vol = out_sp[0] * out_sp[1] * out_sp[2];
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t kz = 0; kz < k[0]; ++kz)
      for (std::size_t ky = 0; ky < k[1]; ++ky)
        for (std::size_t kx = 0; kx < k[2]; ++kx, ++row) {
          T* dst = col + row * out_vol;
          for (std::size_t z = 0; z < out_sp[0]; ++z) {
            const std::ptrdiff_t iz = std::ptrdiff_t(z + kz) - std::ptrdiff_t(pad[0]);
            for (std::size_t y = 0; y < out_sp[1]; ++y) {
              const std::ptrdiff_t iy = std::ptrdiff_t(y + ky) - std::ptrdiff_t(pad[1]);
              T* d = dst + (z * out_sp[1] + y) * out_sp[2];
              if (iz < 0 || iz >= std::ptrdiff_t(in_sp[0]) || iy < 0 || iy >= std::ptrdiff_t(in_sp[1])) {
                std::fill_n(d, out_sp[2], T(0));
                continue;
              }
              const T* s = in + ((c * in_sp[0] + iz) * in_sp[1] + iy) * in_sp[2];
              for (std::size_t x = 0; x < out_sp[2]; ++x) {
                const std::ptrdiff_t ix = std::ptrdiff_t(x + kx) - std::ptrdiff_t(pad[2]);
                d[x] = (ix < 0 || ix >= std::ptrdiff_t(in_sp[2])) ? T(0) : s[ix];
              }
            }
          }
        }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, const Dims3& in_sp, const Dims3& k, const Dims3& pad,
                const Dims3& out_sp, T* in) {
  const std::size_t out_vol = out_sp[0] * out_sp[1] * out_sp[2];
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t kz = 0; kz < k[0]; ++kz)
      for (std::size_t ky = 0; ky < k[1]; ++ky)
        for (std::size_t kx = 0; kx < k[2]; ++kx, ++row) {
          const T* src = col + row * out_vol;
          for (std::size_t z = 0; z < out_sp[0]; ++z) {
            const std::ptrdiff_t iz = std::ptrdiff_t(z + kz) - std::ptrdiff_t(pad[0]);
            if (iz < 0 || iz >= std::ptrdiff_t(in_sp[0])) continue;
            for (std::size_t y = 0; y < out_sp[1]; ++y) {
              const std::ptrdiff_t iy = std::ptrdiff_t(y + ky) - std::ptrdiff_t(pad[1]);
              if (iy < 0 || iy >= std::ptrdiff_t(in_sp[1])) continue;
              const T* s = src + (z * out_sp[1] + y) * out_sp[2];
              T* d = in + ((c * in_sp[0] + iz) * in_sp[1] + iy) * in_sp[2];
              for (std::size_t x = 0; x < out_sp[2]; ++x) {
                const std::ptrdiff_t ix = std::ptrdiff_t(x + kx) - std::ptrdiff_t(pad[2]);
                if (ix >= 0 && ix < std::ptrdiff_t(in_sp[2])) d[ix] += s[x];
              }
            }
          }
        }
}

}  // namespace

template <typename T>
BatchNormParams<T> BatchNormParams<T>::make(std::size_t channels) {
  BatchNormParams p;
  p.gamma = Tensor<T>::ones({channels}, true);
  p.beta = Tensor<T>::zeros({channels}, true);
  p.running_mean = Tensor<T>::zeros({channels});
  p.running_var = Tensor<T>::ones({channels});
  return p;
}

template struct BatchNormParams<float>;
template struct BatchNormParams<double>;

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv(const Tensor<T>& input, const ConvParams<T>& p) {
  const Layout in = layout_of(input.shape(), "conv");
  const Shape& ws = p.weight.shape();
  if (ws.size() != in.rank + 2)
    throw SizeError("conv: kernel rank " + to_string(ws) + " does not match input " + to_string(input.shape()));
  if (ws[1] != in.channels)
    throw SizeError("conv: weight expects " + std::to_string(ws[1]) + " input channels, got " +
                    std::to_string(in.channels));
  const std::size_t out_ch = ws[0];
  if (p.bias.numel() != out_ch) throw SizeError("conv: bias length differs from output channels");
  const Dims3 k = in.rank == 2 ? Dims3{1, ws[2], ws[3]} : Dims3{ws[2], ws[3], ws[4]};
  if (!p.stride.empty())
    for (auto s : p.stride)
      if (s != 1) throw ParameterError("conv: only stride 1 is supported");
  const Dims3 pad = p.padding.empty() ? Dims3{0, 0, 0} : lift(p.padding, in.rank, 0, "conv padding");

  Dims3 out_sp{};
  for (int d = 0; d < 3; ++d) {
    const std::ptrdiff_t e = std::ptrdiff_t(in.spatial[d] + 2 * pad[d]) - std::ptrdiff_t(k[d]) + 1;
    if (e < 1) throw SizeError("conv: spatial extent below 1 after padding for input " + to_string(input.shape()));
    out_sp[d] = std::size_t(e);
  }
  const std::size_t ck = in.channels * k[0] * k[1] * k[2];
  const std::size_t out_vol = out_sp[0] * out_sp[1] * out_sp[2];
  const std::size_t in_vol = in.volume();

  std::vector<T> out(in.batch * out_ch * out_vol);
  std::vector<T> col(ck * out_vol);
  CMatMap<T> W(p.weight.data().data(), out_ch, ck);
  auto bias = p.bias.data();
  for (std::size_t b = 0; b < in.batch; ++b) {
    im2col(input.data().data() + b * in.channels * in_vol, in.channels, in.spatial, k, pad, out_sp, col.data());
    MatMap<T> O(out.data() + b * out_ch * out_vol, out_ch, out_vol);
    O.noalias() = W * CMatMap<T>(col.data(), ck, out_vol);
    for (std::size_t o = 0; o < out_ch; ++o) O.row(o).array() += bias[o];
  }

  auto xi = input.impl(), wi = p.weight.impl();
  const std::size_t batch = in.batch, channels = in.channels;
  const Dims3 in_sp = in.spatial;
  return make_result<T>(
      make_shape(in.batch, out_ch, out_sp, in.rank), std::move(out), "conv", {input, p.weight, p.bias},
      [=](std::span<const T> g, std::span<const std::span<T>> gin) {
        std::vector<T> col(ck * out_vol), gcol;
        CMatMap<T> W(wi->data.data(), out_ch, ck);
        if (!gin[0].empty()) gcol.resize(ck * out_vol);
        for (std::size_t b = 0; b < batch; ++b) {
          CMatMap<T> G(g.data() + b * out_ch * out_vol, out_ch, out_vol);
          if (!gin[1].empty()) {
            im2col(xi->data.data() + b * channels * in_vol, channels, in_sp, k, pad, out_sp, col.data());
            MatMap<T>(gin[1].data(), out_ch, ck).noalias() += G * CMatMap<T>(col.data(), ck, out_vol).transpose();
          }
          if (!gin[2].empty())
            for (std::size_t o = 0; o < out_ch; ++o) gin[2][o] += G.row(o).sum();
          if (!gin[0].empty()) {
            MatMap<T>(gcol.data(), ck, out_vol).noalias() = W.transpose() * G;
            col2im_add(gcol.data(), channels, in_sp, k, pad, out_sp, gin[0].data() + b * channels * in_vol);
          }
        }
      });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormParams<T>& p, Mode mode) {
  const Layout in = layout_of(input.shape(), "batchnorm");
  const std::size_t C = in.channels, S = in.volume(), B = in.batch;
  if (p.gamma.numel() != C || p.beta.numel() != C || p.running_mean.numel() != C || p.running_var.numel() != C)
    throw SizeError("batchnorm: parameter length differs from channel count " + std::to_string(C));
  const std::size_t count = B * S;
  if (mode == Mode::train && count < 2)
    throw StatisticsError("batchnorm: train mode needs more than one value per channel");

  auto x = input.data();
  auto gamma = p.gamma.data(), beta = p.beta.data();
  auto invstd = std::make_shared<std::vector<T>>(C);
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> out(x.size());
  for (std::size_t c = 0; c < C; ++c) {
    T mu, var;
    if (mode == Mode::train) {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < S; ++i) s += x[(b * C + c) * S + i];
      const double m = s / double(count);
      double v = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < S; ++i) {
          const double d = x[(b * C + c) * S + i] - m;
          v += d * d;
        }
      mu = T(m);
      var = T(v / double(count));
      auto rm = p.running_mean.data_mut();
      auto rv = p.running_var.data_mut();
      rm[c] = (T(1) - p.momentum) * rm[c] + p.momentum * mu;
      rv[c] = (T(1) - p.momentum) * rv[c] + p.momentum * T(v / double(count - 1));
    } else {
      mu = p.running_mean.data()[c];
      var = p.running_var.data()[c];
    }
    const T is = T(1) / std::sqrt(var + p.epsilon);
    (*invstd)[c] = is;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < S; ++i) {
        const std::size_t j = (b * C + c) * S + i;
        const T h = (x[j] - mu) * is;
        (*xhat)[j] = h;
        out[j] = gamma[c] * h + beta[c];
      }
  }

  auto gi = p.gamma.impl();
  const bool train = mode == Mode::train;
  return make_result<T>(input.shape(), std::move(out), "batchnorm", {input, p.gamma, p.beta},
                        [=](std::span<const T> g, std::span<const std::span<T>> gin) {
                          const auto& gamma = gi->data;
                          const auto& h = *xhat;
                          for (std::size_t c = 0; c < C; ++c) {
                            T sum_g = 0, sum_gh = 0;
                            for (std::size_t b = 0; b < B; ++b)
                              for (std::size_t i = 0; i < S; ++i) {
                                const std::size_t j = (b * C + c) * S + i;
                                sum_g += g[j];
                                sum_gh += g[j] * h[j];
                              }
                            if (!gin[1].empty()) gin[1][c] += sum_gh;
                            if (!gin[2].empty()) gin[2][c] += sum_g;
                            if (gin[0].empty()) continue;
                            const T scale = gamma[c] * (*invstd)[c];
                            const T n = T(count);
                            for (std::size_t b = 0; b < B; ++b)
                              for (std::size_t i = 0; i < S; ++i) {
                                const std::size_t j = (b * C + c) * S + i;
                                gin[0][j] += train ? scale * (g[j] - sum_g / n - h[j] * sum_gh / n)
                                                   : scale * g[j];
                              }
                          }
                        });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  auto xi = input.impl();
  return make_result<T>(input.shape(), std::move(out), "relu", {input},
                        [xi](std::span<const T> g, std::span<const std::span<T>> gin) {
                          const auto& x = xi->data;
                          for (std::size_t i = 0; i < gin[0].size(); ++i)
                            if (x[i] > T(0)) gin[0][i] += g[i];
                        });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool(const Tensor<T>& input, const std::vector<std::size_t>& window,
                  const std::vector<std::size_t>& stride) {
  const Layout in = layout_of(input.shape(), "maxpool");
  const Dims3 win = lift(window, in.rank, 1, "maxpool window");
  const Dims3 st = lift(stride, in.rank, 1, "maxpool stride");
  Dims3 out_sp{};
  for (int d = 0; d < 3; ++d) {
    if (st[d] == 0 || win[d] == 0) throw ParameterError("maxpool: zero window or stride");
    if (in.spatial[d] % st[d] != 0 || win[d] > in.spatial[d])
      throw SizeError("maxpool: extent " + std::to_string(in.spatial[d]) + " not divisible by stride " +
                      std::to_string(st[d]));
    out_sp[d] = (in.spatial[d] - win[d]) / st[d] + 1;
  }
  const std::size_t planes = in.batch * in.channels;
  const std::size_t out_vol = out_sp[0] * out_sp[1] * out_sp[2];
  std::vector<T> out(planes * out_vol);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  auto x = input.data();
  const Dims3 sp = in.spatial;
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t z = 0; z < out_sp[0]; ++z)
      for (std::size_t y = 0; y < out_sp[1]; ++y)
        for (std::size_t xo = 0; xo < out_sp[2]; ++xo) {
          std::size_t best = 0;
          bool first = true;
          for (std::size_t a = 0; a < win[0]; ++a)
            for (std::size_t b = 0; b < win[1]; ++b)
              for (std::size_t c = 0; c < win[2]; ++c) {
                const std::size_t j =
                    ((pl * sp[0] + z * st[0] + a) * sp[1] + y * st[1] + b) * sp[2] + xo * st[2] + c;
                if (first || x[j] > x[best]) {
                  best = j;
                  first = false;
                }
              }
          const std::size_t o = ((pl * out_sp[0] + z) * out_sp[1] + y) * out_sp[2] + xo;
          out[o] = x[best];
          (*argmax)[o] = best;
        }
  return make_result<T>(make_shape(in.batch, in.channels, out_sp, in.rank), std::move(out), "maxpool", {input},
                        [argmax](std::span<const T> g, std::span<const std::span<T>> gin) {
                          if (gin[0].empty()) return;
                          for (std::size_t o = 0; o < argmax->size(); ++o) gin[0][(*argmax)[o]] += g[o];
                        });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> upconv(const Tensor<T>& input, const ConvParams<T>& p) {
  const Layout in = layout_of(input.shape(), "upconv");
  const Shape& ws = p.weight.shape();
  if (ws.size() != in.rank + 2) throw SizeError("upconv: kernel rank does not match input " + to_string(input.shape()));
  if (ws[0] != in.channels)
    throw SizeError("upconv: weight expects " + std::to_string(ws[0]) + " input channels, got " +
                    std::to_string(in.channels));
  const std::size_t out_ch = ws[1];
  if (p.bias.numel() != out_ch) throw SizeError("upconv: bias length differs from output channels");
  const Dims3 k = in.rank == 2 ? Dims3{1, ws[2], ws[3]} : Dims3{ws[2], ws[3], ws[4]};
  if (!p.stride.empty() && lift(p.stride, in.rank, 1, "upconv stride") != k)
    throw ParameterError("upconv: stride must equal the kernel extent");
  const Dims3 out_sp{in.spatial[0] * k[0], in.spatial[1] * k[1], in.spatial[2] * k[2]};
  const std::size_t kvol = k[0] * k[1] * k[2];
  const std::size_t ok = out_ch * kvol;
  const std::size_t S = in.volume();
  const std::size_t out_vol = out_sp[0] * out_sp[1] * out_sp[2];
  const Dims3 sp = in.spatial;

  // Maps the (o*kvol + kk, s) column entry to its output offset within a batch item.
  auto scatter_index = [=](std::size_t o, std::size_t kk, std::size_t s) {
    const std::size_t kz = kk / (k[1] * k[2]), ky = (kk / k[2]) % k[1], kx = kk % k[2];
    const std::size_t z = s / (sp[1] * sp[2]), y = (s / sp[2]) % sp[1], x = s % sp[2];
    return ((o * out_sp[0] + z * k[0] + kz) * out_sp[1] + y * k[1] + ky) * out_sp[2] + x * k[2] + kx;
  };

  std::vector<T> out(in.batch * out_ch * out_vol);
  std::vector<T> cols(ok * S);
  CMatMap<T> W(p.weight.data().data(), in.channels, ok);
  auto bias = p.bias.data();
  for (std::size_t b = 0; b < in.batch; ++b) {
    MatMap<T>(cols.data(), ok, S).noalias() =
        W.transpose() * CMatMap<T>(input.data().data() + b * in.channels * S, in.channels, S);
    T* dst = out.data() + b * out_ch * out_vol;
    for (std::size_t o = 0; o < out_ch; ++o)
      for (std::size_t kk = 0; kk < kvol; ++kk) {
        const T* src = cols.data() + (o * kvol + kk) * S;
        for (std::size_t s = 0; s < S; ++s) dst[scatter_index(o, kk, s)] = src[s] + bias[o];
      }
  }

  auto xi = input.impl(), wi = p.weight.impl();
  const std::size_t batch = in.batch, channels = in.channels;
  return make_result<T>(
      make_shape(in.batch, out_ch, out_sp, in.rank), std::move(out), "upconv", {input, p.weight, p.bias},
      [=](std::span<const T> g, std::span<const std::span<T>> gin) {
        std::vector<T> gcols(ok * S);
        CMatMap<T> W(wi->data.data(), channels, ok);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* gb = g.data() + b * out_ch * out_vol;
          for (std::size_t o = 0; o < out_ch; ++o)
            for (std::size_t kk = 0; kk < kvol; ++kk) {
              T* dst = gcols.data() + (o * kvol + kk) * S;
              for (std::size_t s = 0; s < S; ++s) dst[s] = gb[scatter_index(o, kk, s)];
            }
          CMatMap<T> G(gcols.data(), ok, S);
          if (!gin[0].empty())
            MatMap<T>(gin[0].data() + b * channels * S, channels, S).noalias() += W * G;
          if (!gin[1].empty())
            MatMap<T>(gin[1].data(), channels, ok).noalias() +=
                CMatMap<T>(xi->data.data() + b * channels * S, channels, S) * G.transpose();
          if (!gin[2].empty())
            for (std::size_t o = 0; o < out_ch; ++o)
              gin[2][o] += G.block(o * kvol, 0, kvol, S).sum();
        }
      });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout: rate must lie in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return input;
  const T scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(input.numel());
  for (auto& m : *mask) m = uniform01(rng) < rate ? T(0) : scale;
  auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * (*mask)[i];
  return make_result<T>(input.shape(), std::move(out), "dropout", {input},
                        [mask](std::span<const T> g, std::span<const std::span<T>> gin) {
                          for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] * (*mask)[i];
                        });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& input) {
  if (input.dim() < 2) throw SizeError("softmax_channels: need [B,C,...]");
  const std::size_t B = input.shape()[0], C = input.shape()[1];
  if (C < 2) throw SizeError("softmax_channels: need at least two channels");
  const std::size_t S = input.numel() / (B * C);
  auto x = input.data();
  auto probs = std::make_shared<std::vector<T>>(x.size());
  auto& p = *probs;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t base = b * C * S + s;
      T m = x[base];
      for (std::size_t c = 1; c < C; ++c) m = std::max(m, x[base + c * S]);
      T z = 0;
      for (std::size_t c = 0; c < C; ++c) z += (p[base + c * S] = std::exp(x[base + c * S] - m));
      for (std::size_t c = 0; c < C; ++c) p[base + c * S] /= z;
    }
  std::vector<T> out = p;
  return make_result<T>(input.shape(), std::move(out), "softmax", {input},
                        [probs, B, C, S](std::span<const T> g, std::span<const std::span<T>> gin) {
                          const auto& p = *probs;
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t s = 0; s < S; ++s) {
                              const std::size_t base = b * C * S + s;
                              T dot = 0;
                              for (std::size_t c = 0; c < C; ++c) dot += g[base + c * S] * p[base + c * S];
                              for (std::size_t c = 0; c < C; ++c)
                                gin[0][base + c * S] += p[base + c * S] * (g[base + c * S] - dot);
                            }
                        });
}

#define CARDIOSEG_INSTANTIATE_LAYERS(T)                                                        \
  template Tensor<T> conv(const Tensor<T>&, const ConvParams<T>&);                             \
  template Tensor<T> batchnorm(const Tensor<T>&, BatchNormParams<T>&, Mode);                   \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> maxpool(const Tensor<T>&, const std::vector<std::size_t>&,               \
                             const std::vector<std::size_t>&);                                 \
  template Tensor<T> upconv(const Tensor<T>&, const ConvParams<T>&);                           \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, Rng&);                            \
  template Tensor<T> softmax_channels(const Tensor<T>&);

CARDIOSEG_INSTANTIATE_LAYERS(float)
CARDIOSEG_INSTANTIATE_LAYERS(double)

}  // namespace cardioseg
