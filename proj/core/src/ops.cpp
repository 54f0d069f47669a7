#include "ipose/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ipose/error.hpp"

namespace ipose {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Upper bound on the im2col scratch buffer, in doubles.
constexpr std::size_t kMaxColumnBuffer = std::size_t{1} << 22;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_string(t.shape()));
  }
}

struct Dims4 {
  std::size_t b, c, h, w;
};

Dims4 dims4(const Tensor& t) { return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)}; }

template <typename F>
Tensor unary(const Tensor& x, F&& forward, const char* name,
             std::function<void(const Tensor&, std::span<const double>, std::span<const double>)>
                 backward) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return Tensor::from_op(
      x.shape(), std::move(out), {x},
      [x, backward = std::move(backward)](std::span<const double> g, std::span<const double> y) {
        if (x.requires_grad()) backward(x, g, y);
      },
      name);
}

// Copies rows [y0, y0 + rows) of every (c, ky, kx) shifted plane into `cols`
// laid out as [C*k*k, rows*W].
void im2col(const double* in, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t k, std::size_t y0, std::size_t rows, double* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  const std::size_t tile = rows * width;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = in + c * height * width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = cols + ((c * k + ky) * k + kx) * tile;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::size_t r = 0; r < rows; ++r) {
          double* row = dst + r * width;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y0 + r + ky) - pad;
          if (sy < 0 || sy >= h || x_lo >= x_hi) {
            std::fill(row, row + width, 0.0);
            continue;
          }
          const double* src = plane + sy * w;
          std::fill(row, row + x_lo, 0.0);
          std::copy(src + x_lo + dx, src + x_hi + dx, row + x_lo);
          std::fill(row + x_hi, row + w, 0.0);
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds `cols` back into the input gradient.
void col2im(const double* cols, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t k, std::size_t y0, std::size_t rows, double* grad_in) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  const std::size_t tile = rows * width;
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = grad_in + c * height * width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* src = cols + ((c * k + ky) * k + kx) * tile;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y0 + r + ky) - pad;
          if (sy < 0 || sy >= h) continue;
          const double* row = src + r * width;
          double* dst = plane + sy * w;
          for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) dst[x + dx] += row[x];
        }
      }
    }
  }
}

std::size_t rows_per_tile(std::size_t ckk, std::size_t height, std::size_t width) {
  const std::size_t per_row = std::max<std::size_t>(1, ckk * width);
  return std::clamp<std::size_t>(kMaxColumnBuffer / per_row, 1, height);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return Tensor::from_op(
      a.shape(), std::move(out), {a, b},
      [a, b](std::span<const double> g, std::span<const double>) {
        for (const Tensor* t : {&a, &b}) {
          if (!t->requires_grad()) continue;
          auto gt = t->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return Tensor::from_op(
      a.shape(), std::move(out), {a, b},
      [a, b](std::span<const double> g, std::span<const double>) {
        if (a.requires_grad()) {
          auto ga = a.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return Tensor::from_op(
      a.shape(), std::move(out), {a, b},
      [a, b](std::span<const double> g, std::span<const double>) {
        if (a.requires_grad()) {
          auto ga = a.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.at(i);
        }
        if (b.requires_grad()) {
          auto gb = b.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.at(i);
        }
      },
      "mul");
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double v) { return v * factor; }, "scale",
      [factor](const Tensor& x, std::span<const double> g, std::span<const double>) {
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
      });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double v) { return v * v; }, "square",
      [](const Tensor& x, std::span<const double> g, std::span<const double>) {
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * x.at(i) * g[i];
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, "relu",
      [](const Tensor& in, std::span<const double> g, std::span<const double>) {
        auto gx = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (in.at(i) > 0.0) gx[i] += g[i];
        }
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      "sigmoid",
      [](const Tensor& in, std::span<const double> g, std::span<const double> y) {
        auto gx = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
      });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::from_op(
      {}, {total}, {x},
      [x](std::span<const double> g, std::span<const double>) {
        if (!x.requires_grad()) return;
        auto gx = x.grad_buffer();
        for (auto& v : gx) v += g[0];
      },
      "sum");
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                     shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::from_op(
      std::move(shape), std::move(out), {x},
      [x](std::span<const double> g, std::span<const double>) {
        if (!x.requires_grad()) return;
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("flatten: scalar input");
  const std::size_t batch = x.dim(0);
  return reshape(x, {batch, batch ? x.numel() / batch : 0});
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels", "first operand");
  require_rank(b, 4, "concat_channels", "second operand");
  const auto da = dims4(a);
  const auto db = dims4(b);
  if (da.b != db.b || da.h != db.h || da.w != db.w) {
    throw ShapeError("concat_channels: shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ outside the channel axis");
  }
  const std::size_t plane = da.h * da.w;
  const std::size_t ca = da.c * plane;
  const std::size_t cb = db.c * plane;
  std::vector<double> out(da.b * (ca + cb));
  for (std::size_t n = 0; n < da.b; ++n) {
    std::copy_n(a.data().begin() + n * ca, ca, out.begin() + n * (ca + cb));
    std::copy_n(b.data().begin() + n * cb, cb, out.begin() + n * (ca + cb) + ca);
  }
  return Tensor::from_op(
      {da.b, da.c + db.c, da.h, da.w}, std::move(out), {a, b},
      [a, b, ca, cb, batch = da.b](std::span<const double> g, std::span<const double>) {
        if (a.requires_grad()) {
          auto ga = a.grad_buffer();
          for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t i = 0; i < ca; ++i) ga[n * ca + i] += g[n * (ca + cb) + i];
          }
        }
        if (b.requires_grad()) {
          auto gb = b.grad_buffer();
          for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t i = 0; i < cb; ++i) gb[n * cb + i] += g[n * (ca + cb) + ca + i];
          }
        }
      },
      "concat_channels");
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  const auto in = dims4(input);
  const std::size_t filters = kernel.dim(0);
  const std::size_t k = kernel.dim(2);
  if (kernel.dim(1) != in.c) {
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels but kernel " +
                     shape_string(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " +
                     shape_string(kernel.shape()));
  }
  if (in.h == 0 || in.w == 0) throw ShapeError("conv2d: empty spatial extent");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != filters)) {
    throw ShapeError("conv2d: bias shape " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(filters) + " filters");
  }

  const std::size_t hw = in.h * in.w;
  const std::size_t ckk = in.c * k * k;
  const std::size_t tile_rows = rows_per_tile(ckk, in.h, in.w);
  std::vector<double> out(in.b * filters * hw, 0.0);
  std::vector<double> cols(k == 1 ? 0 : ckk * tile_rows * in.w);

  Eigen::Map<const RowMat> weights(kernel.data().data(), filters, ckk);
  for (std::size_t n = 0; n < in.b; ++n) {
    const double* x = input.data().data() + n * in.c * hw;
    double* y = out.data() + n * filters * hw;
    for (std::size_t y0 = 0; y0 < in.h; y0 += tile_rows) {
      const std::size_t rows = std::min(tile_rows, in.h - y0);
      const auto t = static_cast<Eigen::Index>(rows * in.w);
      StridedMap dst(y + y0 * in.w, filters, t, Eigen::OuterStride<>(hw));
      if (k == 1) {
        ConstStridedMap src(x + y0 * in.w, ckk, t, Eigen::OuterStride<>(hw));
        dst.noalias() = weights * src;
      } else {
        im2col(x, in.c, in.h, in.w, k, y0, rows, cols.data());
        Eigen::Map<const RowMat> src(cols.data(), ckk, t);
        dst.noalias() = weights * src;
      }
    }
    if (bias.defined()) {
      for (std::size_t f = 0; f < filters; ++f) {
        const double b = bias.at(f);
        double* plane = y + f * hw;
        for (std::size_t i = 0; i < hw; ++i) plane[i] += b;
      }
    }
  }

  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::from_op(
      {in.b, filters, in.h, in.w}, std::move(out), std::move(inputs),
      [input, kernel, bias, in, filters, k, hw, ckk, tile_rows](std::span<const double> g,
                                                              std::span<const double>) {
        const bool want_x = input.requires_grad();
        const bool want_w = kernel.requires_grad();
        const bool want_b = bias.defined() && bias.requires_grad();
        if (want_b) {
          auto gb = bias.grad_buffer();
          for (std::size_t n = 0; n < in.b; ++n) {
            for (std::size_t f = 0; f < filters; ++f) {
              const double* plane = g.data() + (n * filters + f) * hw;
              double acc = 0.0;
              for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
              gb[f] += acc;
            }
          }
        }
        if (!want_x && !want_w) return;

        Eigen::Map<const RowMat> weights(kernel.data().data(), filters, ckk);
        std::vector<double> cols(ckk * tile_rows * in.w);
        std::vector<double> dcols(want_x ? ckk * tile_rows * in.w : 0);
        double* gw = want_w ? kernel.grad_buffer().data() : nullptr;
        double* gx = want_x ? input.grad_buffer().data() : nullptr;
        for (std::size_t n = 0; n < in.b; ++n) {
          const double* x = input.data().data() + n * in.c * hw;
          const double* gy = g.data() + n * filters * hw;
          for (std::size_t y0 = 0; y0 < in.h; y0 += tile_rows) {
            const std::size_t rows = std::min(tile_rows, in.h - y0);
            const auto t = static_cast<Eigen::Index>(rows * in.w);
            ConstStridedMap gtile(gy + y0 * in.w, filters, t, Eigen::OuterStride<>(hw));
            if (k == 1) {
              if (want_w) {
                ConstStridedMap src(x + y0 * in.w, ckk, t, Eigen::OuterStride<>(hw));
                Eigen::Map<RowMat> dw(gw, filters, ckk);
                dw.noalias() += gtile * src.transpose();
              }
              if (want_x) {
                StridedMap dx(gx + n * in.c * hw + y0 * in.w, ckk, t, Eigen::OuterStride<>(hw));
                dx.noalias() += weights.transpose() * gtile;
              }
              continue;
            }
            if (want_w) {
              im2col(x, in.c, in.h, in.w, k, y0, rows, cols.data());
              Eigen::Map<const RowMat> src(cols.data(), ckk, t);
              Eigen::Map<RowMat> dw(gw, filters, ckk);
              dw.noalias() += gtile * src.transpose();
            }
            if (want_x) {
              Eigen::Map<RowMat> dc(dcols.data(), ckk, t);
              dc.noalias() = weights.transpose() * gtile;
              col2im(dcols.data(), in.c, in.h, in.w, k, y0, rows, gx + n * in.c * hw);
            }
          }
        }
      },
      "conv2d");
}

// ---------------------------------------------------------------------------
// Batch normalisation

void BatchNormState::reset(std::size_t channels) {
  running_mean.assign(channels, 0.0);
  running_var.assign(channels, 1.0);
  initialized = true;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode) {
  require_rank(input, 4, "batch_norm", "input");
  const auto d = dims4(input);
  if (gamma.shape() != Shape{d.c} || beta.shape() != Shape{d.c}) {
    throw ShapeError("batch_norm: gamma/beta must have shape [" + std::to_string(d.c) + "]");
  }
  if (state.initialized && state.running_mean.size() != d.c) {
    throw ShapeError("batch_norm: running statistics hold " +
                     std::to_string(state.running_mean.size()) + " channels, input has " +
                     std::to_string(d.c));
  }
  const std::size_t hw = d.h * d.w;
  const std::size_t count = d.b * hw;
  std::vector<double> mean_c(d.c), inv_std(d.c);

  if (mode == Mode::kTrain) {
    if (count < 2) {
      throw ShapeError("batch_norm: train mode needs at least 2 values per channel, got " +
                       std::to_string(count));
    }
    if (!state.initialized) state.reset(d.c);
    for (std::size_t c = 0; c < d.c; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < d.b; ++n) {
        const double* p = input.data().data() + (n * d.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t n = 0; n < d.b; ++n) {
        const double* p = input.data().data() + (n * d.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double var = v / static_cast<double>(count);
      mean_c[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + state.epsilon);
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mu;
      state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * var;
    }
  } else {
    if (!state.initialized) {
      throw ConfigError("batch_norm: infer mode requires initialised running statistics");
    }
    for (std::size_t c = 0; c < d.c; ++c) {
      mean_c[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
    }
  }

  std::vector<double> xhat(input.numel());
  std::vector<double> out(input.numel());
  for (std::size_t n = 0; n < d.b; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (n * d.c + c) * hw;
      const double g = gamma.at(c), b = beta.at(c);
      for (std::size_t i = 0; i < hw; ++i) {
        const double xh = (input.at(base + i) - mean_c[c]) * inv_std[c];
        xhat[base + i] = xh;
        out[base + i] = g * xh + b;
      }
    }
  }

  const bool train = mode == Mode::kTrain;
  return Tensor::from_op(
      input.shape(), std::move(out), {input, gamma, beta},
      [input, gamma, beta, d, hw, count, train, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](std::span<const double> g, std::span<const double>) {
        std::vector<double> sum_dy(d.c, 0.0), sum_dy_xhat(d.c, 0.0);
        for (std::size_t n = 0; n < d.b; ++n) {
          for (std::size_t c = 0; c < d.c; ++c) {
            const std::size_t base = (n * d.c + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy[c] += g[base + i];
              sum_dy_xhat[c] += g[base + i] * xhat[base + i];
            }
          }
        }
        if (gamma.requires_grad()) {
          auto gg = gamma.grad_buffer();
          for (std::size_t c = 0; c < d.c; ++c) gg[c] += sum_dy_xhat[c];
        }
        if (beta.requires_grad()) {
          auto gb = beta.grad_buffer();
          for (std::size_t c = 0; c < d.c; ++c) gb[c] += sum_dy[c];
        }
        if (!input.requires_grad()) return;
        auto gx = input.grad_buffer();
        const double inv_count = 1.0 / static_cast<double>(count);
        for (std::size_t n = 0; n < d.b; ++n) {
          for (std::size_t c = 0; c < d.c; ++c) {
            const std::size_t base = (n * d.c + c) * hw;
            const double s = gamma.at(c) * inv_std[c];
            if (train) {
              const double m_dy = sum_dy[c] * inv_count;
              const double m_dyx = sum_dy_xhat[c] * inv_count;
              for (std::size_t i = 0; i < hw; ++i) {
                gx[base + i] += s * (g[base + i] - m_dy - xhat[base + i] * m_dyx);
              }
            } else {
              for (std::size_t i = 0; i < hw; ++i) gx[base + i] += s * g[base + i];
            }
          }
        }
      },
      "batch_norm");
}

Tensor batch_norm_infer(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                        const BatchNormState& state) {
  BatchNormState copy = state;
  return batch_norm(input, gamma, beta, copy, Mode::kInfer);
}

// ---------------------------------------------------------------------------
// Sampling

Tensor max_pool2(const Tensor& input) {
  require_rank(input, 4, "max_pool2", "input");
  const auto d = dims4(input);
  if (d.h % 2 != 0 || d.w % 2 != 0) {
    throw ShapeError("max_pool2: spatial size " + std::to_string(d.h) + "x" +
                     std::to_string(d.w) + " is not even");
  }
  const std::size_t oh = d.h / 2, ow = d.w / 2;
  std::vector<double> out(d.b * d.c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const double* x = input.data().data();
  for (std::size_t p = 0; p < d.b * d.c; ++p) {
    const std::size_t in_base = p * d.h * d.w;
    const std::size_t out_base = p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t first = in_base + 2 * i * d.w + 2 * j;
        const std::size_t cand[4] = {first, first + 1, first + d.w, first + d.w + 1};
        std::size_t best = cand[0];
        for (int q = 1; q < 4; ++q) {
          if (x[cand[q]] > x[best]) best = cand[q];
        }
        out[out_base + i * ow + j] = x[best];
        argmax[out_base + i * ow + j] = best;
      }
    }
  }
  return Tensor::from_op(
      {d.b, d.c, oh, ow}, std::move(out), {input},
      [input, argmax = std::move(argmax)](std::span<const double> g, std::span<const double>) {
        if (!input.requires_grad()) return;
        auto gx = input.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
      },
      "max_pool2");
}

Tensor upsample2(const Tensor& input) {
  require_rank(input, 4, "upsample2", "input");
  const auto d = dims4(input);
  const std::size_t oh = d.h * 2, ow = d.w * 2;
  std::vector<double> out(d.b * d.c * oh * ow);
  for (std::size_t p = 0; p < d.b * d.c; ++p) {
    const double* src = input.data().data() + p * d.h * d.w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] = src[(y / 2) * d.w + x / 2];
    }
  }
  return Tensor::from_op(
      {d.b, d.c, oh, ow}, std::move(out), {input},
      [input, d, oh, ow](std::span<const double> g, std::span<const double>) {
        if (!input.requires_grad()) return;
        auto gx = input.grad_buffer();
        for (std::size_t p = 0; p < d.b * d.c; ++p) {
          double* dst = gx.data() + p * d.h * d.w;
          const double* src = g.data() + p * oh * ow;
          for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) dst[(y / 2) * d.w + x / 2] += src[y * ow + x];
          }
        }
      },
      "upsample2");
}

// ---------------------------------------------------------------------------
// Dense

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "dense", "input");
  require_rank(weight, 2, "dense", "weight");
  const std::size_t batch = input.dim(0), in_dim = input.dim(1), out_dim = weight.dim(1);
  if (weight.dim(0) != in_dim) {
    throw ShapeError("dense: input " + shape_string(input.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{out_dim}) {
    throw ShapeError("dense: bias shape " + shape_string(bias.shape()) + ", expected [" +
                     std::to_string(out_dim) + "]");
  }
  std::vector<double> out(batch * out_dim);
  const auto b = static_cast<Eigen::Index>(batch);
  const auto di = static_cast<Eigen::Index>(in_dim);
  const auto dk = static_cast<Eigen::Index>(out_dim);
  Eigen::Map<const RowMat> x(input.data().data(), b, di);
  Eigen::Map<const RowMat> w(weight.data().data(), di, dk);
  Eigen::Map<RowMat> y(out.data(), b, dk);
  y.noalias() = x * w;
  if (bias.defined()) {
    for (Eigen::Index n = 0; n < b; ++n) {
      for (Eigen::Index k = 0; k < dk; ++k) y(n, k) += bias.at(static_cast<std::size_t>(k));
    }
  }
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::from_op(
      {batch, out_dim}, std::move(out), std::move(inputs),
      [input, weight, bias, b, di, dk](std::span<const double> g, std::span<const double>) {
        Eigen::Map<const RowMat> gy(g.data(), b, dk);
        if (input.requires_grad()) {
          Eigen::Map<RowMat> gx(input.grad_buffer().data(), b, di);
          Eigen::Map<const RowMat> w(weight.data().data(), di, dk);
          gx.noalias() += gy * w.transpose();
        }
        if (weight.requires_grad()) {
          Eigen::Map<RowMat> gw(weight.grad_buffer().data(), di, dk);
          Eigen::Map<const RowMat> x(input.data().data(), b, di);
          gw.noalias() += x.transpose() * gy;
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_buffer();
          for (Eigen::Index n = 0; n < b; ++n) {
            for (Eigen::Index k = 0; k < dk; ++k) gb[static_cast<std::size_t>(k)] += gy(n, k);
          }
        }
      },
      "dense");
}

// ---------------------------------------------------------------------------
// Softmax

Tensor spatial_softmax(const Tensor& input) {
  require_rank(input, 4, "spatial_softmax", "input");
  const auto d = dims4(input);
  const std::size_t hw = d.h * d.w;
  if (hw == 0) throw ShapeError("spatial_softmax: empty maps");
  std::vector<double> out(input.numel());
  for (std::size_t p = 0; p < d.b * d.c; ++p) {
    const double* x = input.data().data() + p * hw;
    double* y = out.data() + p * hw;
    const double peak = *std::max_element(x, x + hw);
    double total = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      y[i] = std::exp(x[i] - peak);
      total += y[i];
    }
    const double inv = 1.0 / total;
    for (std::size_t i = 0; i < hw; ++i) y[i] *= inv;
  }
  return Tensor::from_op(
      input.shape(), std::move(out), {input},
      [input, d, hw](std::span<const double> g, std::span<const double> y) {
        if (!input.requires_grad()) return;
        auto gx = input.grad_buffer();
        for (std::size_t p = 0; p < d.b * d.c; ++p) {
          const std::size_t base = p * hw;
          double dot = 0.0;
          for (std::size_t i = 0; i < hw; ++i) dot += g[base + i] * y[base + i];
          for (std::size_t i = 0; i < hw; ++i) gx[base + i] += y[base + i] * (g[base + i] - dot);
        }
      },
      "spatial_softmax");
}

}  // namespace ipose
