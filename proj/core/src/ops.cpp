#include "fedrecon/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "fedrecon/error.hpp"

namespace fedrecon::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b, const std::string& what = "") {
  throw Error(ErrorKind::kShapeMismatch, std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                                             shape_to_string(b) + (what.empty() ? "" : " (" + what + ")"));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw Error(ErrorKind::kShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) +
                                               " input, got " + shape_to_string(t.shape()));
  }
}

bool wants_grad(const std::shared_ptr<detail::Node>& n) { return n->requires_grad; }

struct ConvGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, ksize, stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_ch * ksize * ksize; }
  std::size_t positions() const { return out_h * out_w; }
};

// cols[(c * k + ky) * k + kx, oy * out_w + ox] = input[c, oy * s + ky - pad, ox * s + kx - pad]
void im2col(const ConvGeometry& g, const double* image, double* cols) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const double* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.ksize; ++ky) {
      for (std::size_t kx = 0; kx < g.ksize; ++kx) {
        double* row = cols + ((c * g.ksize + ky) * g.ksize + kx) * positions;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* image) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    double* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.ksize; ++ky) {
      for (std::size_t kx = 0; kx < g.ksize; ++kx) {
        const double* row = cols + ((c * g.ksize + ky) * g.ksize + kx) * positions;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Forward, typename Backward>
Tensor unary(const char* op, const Tensor& x, Forward f, Backward df) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return Tensor::from_op(x.shape(), std::move(out), op, {x}, [df](detail::Node& self) {
    auto& parent = *self.parents[0];
    double* g = parent.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * df(parent.data[i], self.data[i]);
  });
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  return conv2d(input, kernel, Tensor(), stride, padding);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank("conv2d", input, 4);
  require_rank("conv2d", kernel, 4);
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (ks[1] != is[1]) shape_error("conv2d", is, ks, "input channels must match kernel");
  if (ks[2] != ks[3]) shape_error("conv2d", is, ks, "kernel must be square");
  if (stride == 0) throw Error(ErrorKind::kInvalidArgument, "conv2d: stride must be positive");
  if (bias.defined() && bias.shape() != Shape{ks[0]}) shape_error("conv2d", ks, bias.shape(), "bias");
  if (is[2] + 2 * padding < ks[2] || is[3] + 2 * padding < ks[3]) shape_error("conv2d", is, ks, "kernel larger than input");

  ConvGeometry g{is[0], is[1], is[2], is[3], ks[0], ks[2], stride, padding, 0, 0};
  g.out_h = (g.height + 2 * padding - g.ksize) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.ksize) / stride + 1;

  const std::size_t in_plane = g.in_ch * g.height * g.width;
  const std::size_t out_plane = g.out_ch * g.positions();
  std::vector<double> out(g.batch * out_plane);
  std::vector<double> cols(g.patch() * g.positions());
  ConstMatrixMap w(kernel.data().data(), g.out_ch, g.patch());
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, input.data().data() + n * in_plane, cols.data());
    MatrixMap y(out.data() + n * out_plane, g.out_ch, g.positions());
    y.noalias() = w * ConstMatrixMap(cols.data(), g.patch(), g.positions());
    if (bias.defined()) {
      for (std::size_t o = 0; o < g.out_ch; ++o) y.row(o).array() += bias.data()[o];
    }
  }

  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::from_op({g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), "conv2d", std::move(inputs),
                         [g, in_plane, out_plane](detail::Node& self) {
                           auto& x = *self.parents[0];
                           auto& k = *self.parents[1];
                           ConstMatrixMap w(k.data.data(), g.out_ch, g.patch());
                           std::vector<double> cols(g.patch() * g.positions());
                           for (std::size_t n = 0; n < g.batch; ++n) {
                             ConstMatrixMap dy(self.grad.data() + n * out_plane, g.out_ch, g.positions());
                             if (wants_grad(self.parents[1])) {
                               im2col(g, x.data.data() + n * in_plane, cols.data());
                               MatrixMap dw(k.grad_buffer(), g.out_ch, g.patch());
                               dw.noalias() += dy * ConstMatrixMap(cols.data(), g.patch(), g.positions()).transpose();
                             }
                             if (wants_grad(self.parents[0])) {
                               MatrixMap dcols(cols.data(), g.patch(), g.positions());
                               dcols.noalias() = w.transpose() * dy;
                               col2im_add(g, cols.data(), x.grad_buffer() + n * in_plane);
                             }
                             if (self.parents.size() > 2 && wants_grad(self.parents[2])) {
                               double* db = self.parents[2]->grad_buffer();
                               // Plain loop: Eigen's redux peels by alignment, which would
                               // make the rounding depend on where the buffer landed.
                               const double* rows = self.grad.data() + n * out_plane;
                               for (std::size_t o = 0; o < g.out_ch; ++o) {
                                 double acc = 0.0;
                                 for (std::size_t j = 0; j < g.positions(); ++j) acc += rows[o * g.positions() + j];
                                 db[o] += acc;
                               }
                             }
                           }
                         });
}

Tensor upsample_nearest2(const Tensor& input) {
  require_rank("upsample_nearest2", input, 4);
  const Shape s = input.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  std::vector<double> out(planes * 4 * h * w);
  auto in = input.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) out[(p * 2 * h + y) * 2 * w + x] = in[(p * h + y / 2) * w + x / 2];
    }
  }
  return Tensor::from_op({s[0], s[1], 2 * h, 2 * w}, std::move(out), "upsample_nearest2", {input},
                         [planes, h, w](detail::Node& self) {
                           double* g = self.parents[0]->grad_buffer();
                           for (std::size_t p = 0; p < planes; ++p) {
                             for (std::size_t y = 0; y < 2 * h; ++y) {
                               for (std::size_t x = 0; x < 2 * w; ++x) {
                                 g[(p * h + y / 2) * w + x / 2] += self.grad[(p * 2 * h + y) * 2 * w + x];
                               }
                             }
                           }
                         });
}

Tensor maxpool2(const Tensor& input) {
  require_rank("maxpool2", input, 4);
  const Shape s = input.shape();
  if (s[2] % 2 != 0 || s[3] % 2 != 0) {
    throw Error(ErrorKind::kShapeMismatch, "maxpool2: spatial dims must be even, got " + shape_to_string(s));
  }
  const std::size_t planes = s[0] * s[1], h = s[2] / 2, w = s[3] / 2;
  std::vector<double> out(planes * h * w);
  std::vector<std::size_t> argmax(out.size());
  auto in = input.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t best = (p * s[2] + 2 * y) * s[3] + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (p * s[2] + 2 * y + dy) * s[3] + 2 * x + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (p * h + y) * w + x;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  return Tensor::from_op({s[0], s[1], h, w}, std::move(out), "maxpool2", {input},
                         [argmax = std::move(argmax)](detail::Node& self) {
                           double* g = self.parents[0]->grad_buffer();
                           for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                         });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank("concat_channels", a, 4);
  require_rank("concat_channels", b, 4);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) shape_error("concat_channels", sa, sb, "batch and spatial dims must match");
  const std::size_t plane = sa[2] * sa[3];
  const std::size_t chunk_a = sa[1] * plane, chunk_b = sb[1] * plane;
  std::vector<double> out(sa[0] * (chunk_a + chunk_b));
  for (std::size_t n = 0; n < sa[0]; ++n) {
    std::copy_n(a.data().data() + n * chunk_a, chunk_a, out.data() + n * (chunk_a + chunk_b));
    std::copy_n(b.data().data() + n * chunk_b, chunk_b, out.data() + n * (chunk_a + chunk_b) + chunk_a);
  }
  const std::size_t batch = sa[0];
  return Tensor::from_op({sa[0], sa[1] + sb[1], sa[2], sa[3]}, std::move(out), "concat_channels", {a, b},
                         [batch, chunk_a, chunk_b](detail::Node& self) {
                           for (std::size_t side = 0; side < 2; ++side) {
                             auto& parent = *self.parents[side];
                             if (!parent.requires_grad) continue;
                             double* g = parent.grad_buffer();
                             const std::size_t chunk = side == 0 ? chunk_a : chunk_b;
                             const std::size_t offset = side == 0 ? 0 : chunk_a;
                             for (std::size_t n = 0; n < batch; ++n) {
                               const double* src = self.grad.data() + n * (chunk_a + chunk_b) + offset;
                               for (std::size_t i = 0; i < chunk; ++i) g[n * chunk + i] += src[i];
                             }
                           }
                         });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank("global_avg_pool", input, 4);
  const Shape s = input.shape();
  const std::size_t planes = s[0] * s[1], area = s[2] * s[3];
  std::vector<double> out(planes);
  auto in = input.data();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < area; ++i) acc += in[p * area + i];
    out[p] = acc / static_cast<double>(area);
  }
  return Tensor::from_op({s[0], s[1]}, std::move(out), "global_avg_pool", {input}, [planes, area](detail::Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const double v = self.grad[p] / static_cast<double>(area);
      for (std::size_t i = 0; i < area; ++i) g[p * area + i] += v;
    }
  });
}

Tensor relu(const Tensor& input) {
  return unary("relu", input, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& input, double slope) {
  return unary("leaky_relu", input, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& input) {
  return unary(
      "sigmoid", input,
      [](double v) { return std::clamp(1.0 / (1.0 + std::exp(-v)), kProbClamp, 1.0 - kProbClamp); },
      [](double x, double y) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        if (s <= kProbClamp || s >= 1.0 - kProbClamp) return 0.0;
        return y * (1.0 - y);
      });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", input, 2);
  require_rank("linear", weight, 2);
  const Shape si = input.shape(), sw = weight.shape();
  if (si[1] != sw[1]) shape_error("linear", si, sw, "input features must match weight columns");
  if (bias.shape() != Shape{sw[0]}) shape_error("linear", sw, bias.shape(), "bias");
  const std::size_t batch = si[0], in_f = si[1], out_f = sw[0];
  std::vector<double> out(batch * out_f);
  MatrixMap y(out.data(), batch, out_f);
  y.noalias() = ConstMatrixMap(input.data().data(), batch, in_f) * ConstMatrixMap(weight.data().data(), out_f, in_f).transpose();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < out_f; ++o) y(n, o) += bias.data()[o];
  }
  return Tensor::from_op({batch, out_f}, std::move(out), "linear", {input, weight, bias},
                         [batch, in_f, out_f](detail::Node& self) {
                           ConstMatrixMap dy(self.grad.data(), batch, out_f);
                           auto& x = *self.parents[0];
                           auto& w = *self.parents[1];
                           if (x.requires_grad) {
                             MatrixMap(x.grad_buffer(), batch, in_f).noalias() += dy * ConstMatrixMap(w.data.data(), out_f, in_f);
                           }
                           if (w.requires_grad) {
                             MatrixMap(w.grad_buffer(), out_f, in_f).noalias() += dy.transpose() * ConstMatrixMap(x.data.data(), batch, in_f);
                           }
                           auto& b = *self.parents[2];
                           if (b.requires_grad) {
                             double* g = b.grad_buffer();
                             for (std::size_t n = 0; n < batch; ++n) {
                               for (std::size_t o = 0; o < out_f; ++o) g[o] += dy(n, o);
                             }
                           }
                         });
}

Tensor l1_loss(const Tensor& pred, const Tensor& ref) {
  require_same_shape("l1_loss", pred, ref);
  auto p = pred.data();
  auto r = ref.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - r[i]);
  return Tensor::from_op({1}, {acc}, "l1_loss", {pred, ref}, [](detail::Node& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    const double up = self.grad[0];
    double* ga = a.requires_grad ? a.grad_buffer() : nullptr;
    double* gb = b.requires_grad ? b.grad_buffer() : nullptr;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      const double d = a.data[i] - b.data[i];
      const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (ga) ga[i] += up * sign;
      if (gb) gb[i] -= up * sign;
    }
  });
}

Tensor bce_terms(const Tensor& p, double label) {
  if (label != 0.0 && label != 1.0) {
    throw Error(ErrorKind::kInvalidArgument, "bce_terms: label must be 0 or 1, got " + std::to_string(label));
  }
  for (double v : p.data()) {
    if (!(v > 0.0 && v < 1.0)) {
      throw Error(ErrorKind::kDomain, "bce_terms: probability " + std::to_string(v) + " outside (0, 1)");
    }
  }
  if (label == 1.0) {
    return unary("bce_terms", p, [](double v) { return -std::log(v); }, [](double x, double) { return -1.0 / x; });
  }
  return unary("bce_terms", p, [](double v) { return -std::log1p(-v); },
               [](double x, double) { return 1.0 / (1.0 - x); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::from_op(a.shape(), std::move(out), "add", {a, b}, [](detail::Node& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      double* g = parent->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor::from_op(a.shape(), std::move(out), "sub", {a, b}, [](detail::Node& self) {
    for (std::size_t side = 0; side < 2; ++side) {
      auto& parent = *self.parents[side];
      if (!parent.requires_grad) continue;
      const double sign = side == 0 ? 1.0 : -1.0;
      double* g = parent.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor::from_op(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node& self) {
    auto& x = *self.parents[0];
    auto& y = *self.parents[1];
    if (x.requires_grad) {
      double* g = x.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y.data[i];
    }
    if (y.requires_grad) {
      double* g = y.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return Tensor::from_op({1}, {acc}, "sum", {a}, [](detail::Node& self) {
    auto& parent = *self.parents[0];
    double* g = parent.grad_buffer();
    for (std::size_t i = 0; i < parent.data.size(); ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::from_op(std::move(shape), std::move(out), "reshape", {a}, [](detail::Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace fedrecon::ad
