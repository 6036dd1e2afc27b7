// SPDX-License-Identifier: Apache-2.0
#include "iga/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace iga::ops {

namespace {

using MatR = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecMap = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>>;

using detail::Node;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                     " vs " + to_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + to_string(a.shape()));
  }
}

std::vector<real> copy_values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Unary op whose derivative depends on (input, output) pointwise.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<real> out(a.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::from_op(a.shape(), std::move(out), {a}, [deriv](Node& self) {
    auto& x = *self.inputs[0];
    if (!x.active) return;
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * deriv(x.value[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto out = copy_values(a);
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->active) continue;
      auto g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto out = copy_values(a);
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (self.inputs[0]->active) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->active) {
      auto g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto out = copy_values(a);
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.active) {
      auto g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.active) {
      auto g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Tensor blend(const Tensor& a, const Tensor& b, const Tensor& mask) {
  require_same_shape(a, b, "blend");
  require_same_shape(a, mask, "blend");
  std::vector<real> out(a.size());
  const auto ad = a.data();
  const auto bd = b.data();
  const auto md = mask.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = md[i] * ad[i] + (real(1) - md[i]) * bd[i];
  }
  return Tensor::from_op(a.shape(), std::move(out), {a, b, mask}, [](Node& self) {
    const auto& an = *self.inputs[0];
    const auto& bn = *self.inputs[1];
    const auto& mn = *self.inputs[2];
    if (self.inputs[0]->active) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mn.value[i];
    }
    if (self.inputs[1]->active) {
      auto g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (real(1) - mn.value[i]);
    }
    if (self.inputs[2]->active) {
      auto g = self.inputs[2]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (an.value[i] - bn.value[i]);
    }
  });
}

Tensor scale(const Tensor& a, real s) {
  return unary(a, [s](real x) { return s * x; }, [s](real, real) { return s; });
}

Tensor add_scalar(const Tensor& a, real s) {
  return unary(a, [s](real x) { return x + s; }, [](real, real) { return real(1); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](real x) { return x > 0 ? x : real(0); },
      [](real x, real) { return x > 0 ? real(1) : real(0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](real x) {
        if (x >= 0) return real(1) / (real(1) + std::exp(-x));
        const real e = std::exp(x);
        return e / (real(1) + e);
      },
      [](real, real y) { return y * (real(1) - y); });
}

Tensor log(const Tensor& a) {
  return unary(a, [](real x) { return std::log(x); }, [](real x, real) { return real(1) / x; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](real x) { return x * x; }, [](real x, real) { return real(2) * x; });
}

Tensor clamp(const Tensor& a, real lo, real hi) {
  return unary(
      a, [lo, hi](real x) { return std::clamp(x, lo, hi); },
      [lo, hi](real x, real) { return (x > lo && x < hi) ? real(1) : real(0); });
}

Tensor logit(const Tensor& a, real eps) {
  const real lo = eps;
  const real hi = real(1) - eps;
  return unary(
      a,
      [lo, hi](real x) {
        const real c = std::clamp(x, lo, hi);
        return std::log(c / (real(1) - c));
      },
      [lo, hi](real x, real) {
        return (x > lo && x < hi) ? real(1) / (x * (real(1) - x)) : real(0);
      });
}

Tensor sum(const Tensor& a) {
  real s = 0;
  for (real v : a.data()) s += v;
  return Tensor::from_op(Shape{}, {s}, {a}, [](Node& self) {
    auto& x = *self.inputs[0];
    if (!x.active) return;
    auto g = x.grad_buffer();
    const real go = self.grad[0];
    for (auto& v : g) v += go;
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), real(1) / static_cast<real>(a.size()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  if (a.size() == 0) throw ShapeError("mse of empty tensors");
  const auto ad = a.data();
  const auto bd = b.data();
  const real inv_n = real(1) / static_cast<real>(a.size());
  real s = 0;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const real d = ad[i] - bd[i];
    s += d * d;
  }
  return Tensor::from_op(Shape{}, {s * inv_n}, {a, b}, [inv_n](Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    const real go = self.grad[0] * real(2) * inv_n;
    if (x.active) {
      auto g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * (x.value[i] - y.value[i]);
    }
    if (y.active) {
      auto g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go * (x.value[i] - y.value[i]);
    }
  });
}

Tensor add_all(std::span<const Tensor> terms) {
  real s = 0;
  for (const auto& t : terms) s += t.item();
  std::vector<Tensor> inputs(terms.begin(), terms.end());
  return Tensor::from_op(Shape{}, {s}, std::move(inputs), [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->active) in->grad_buffer()[0] += self.grad[0];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  return Tensor::from_op(std::move(shape), copy_values(a), {a}, [](Node& self) {
    auto& x = *self.inputs[0];
    if (!x.active) return;
    auto g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto n = a.dim(0), m = a.dim(1), p = b.dim(1);
  if (b.dim(0) != m) {
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<real> out(n * p);
  MapR(out.data(), n, p).noalias() = CMapR(a.data().data(), n, m) * CMapR(b.data().data(), m, p);
  return Tensor::from_op(Shape{n, p}, std::move(out), {a, b}, [n, m, p](Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    CMapR go(self.grad.data(), n, p);
    if (x.active) {
      MapR(x.grad_buffer().data(), n, m).noalias() += go * CMapR(y.value.data(), m, p).transpose();
    }
    if (y.active) {
      MapR(y.grad_buffer().data(), m, p).noalias() += CMapR(x.value.data(), n, m).transpose() * go;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(b, 1, "linear");
  auto y = matmul(x, w);
  const auto n = y.dim(0), p = y.dim(1);
  if (b.dim(0) != p) {
    throw ShapeError("linear: bias " + to_string(b.shape()) + " for output width " +
                     std::to_string(p));
  }
  auto out = copy_values(y);
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) out[i * p + j] += bd[j];
  return Tensor::from_op(y.shape(), std::move(out), {y, b}, [n, p](Node& self) {
    auto& yy = *self.inputs[0];
    auto& bb = *self.inputs[1];
    if (yy.active) {
      auto g = yy.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bb.active) {
      auto g = bb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) g[j] += self.grad[i * p + j];
    }
  });
}

namespace {

struct ConvGeom {
  std::size_t c, h, w, o, kh, kw, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t plane() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && pad == 0; }
  std::size_t hp() const { return h + 2 * pad; }
  std::size_t wp() const { return w + 2 * pad; }
  std::size_t wide() const { return oh * wp(); }
  // Slack so that the last shifted view stays inside the buffer.
  std::size_t padded_size() const { return c * hp() * wp() + kw; }
};

using StridedMap = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;

// [kh*kw][O][C] copy of an [O][C][kh][kw] kernel.
std::vector<real> tap_weights(std::span<const real> w, const ConvGeom& g) {
  const std::size_t taps = g.kh * g.kw;
  std::vector<real> out(w.size());
  for (std::size_t oc = 0; oc < g.o; ++oc)
    for (std::size_t ci = 0; ci < g.c; ++ci)
      for (std::size_t t = 0; t < taps; ++t)
        out[(t * g.o + oc) * g.c + ci] = w[(oc * g.c + ci) * taps + t];
  return out;
}

void pad_image(const real* x, const ConvGeom& g, real* xp) {
  std::fill_n(xp, g.padded_size(), real(0));
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t r = 0; r < g.h; ++r)
      std::copy_n(x + (ci * g.h + r) * g.w, g.w, xp + (ci * g.hp() + r + g.pad) * g.wp() + g.pad);
}

void unpad_add(const real* xp, const ConvGeom& g, real* x) {
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t r = 0; r < g.h; ++r) {
      const real* src = xp + (ci * g.hp() + r + g.pad) * g.wp() + g.pad;
      real* dst = x + (ci * g.h + r) * g.w;
      for (std::size_t j = 0; j < g.w; ++j) dst[j] += src[j];
    }
}

// [C, oh*Wp] view of the padded input shifted by tap t.
CStridedMap shifted(const real* xp, const ConvGeom& g, std::size_t t) {
  const std::size_t off = (t / g.kw) * g.wp() + t % g.kw;
  return CStridedMap(xp + off, g.c, g.wide(), Eigen::OuterStride<>(g.hp() * g.wp()));
}

StridedMap shifted_mut(real* xp, const ConvGeom& g, std::size_t t) {
  const std::size_t off = (t / g.kw) * g.wp() + t % g.kw;
  return StridedMap(xp + off, g.c, g.wide(), Eigen::OuterStride<>(g.hp() * g.wp()));
}

}  // namespace

// Stride-1 convolution as a sum of kh*kw GEMMs over shifted views of a
// zero-padded input. Rows of the padded image are Wp wide, so each view is a
// plain strided matrix; the last Wp - ow columns of every output row are
// scratch and get dropped.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " vs kernel " +
                     to_string(w.shape()));
  }
  const bool has_bias = b.size() > 0;
  if (has_bias && (b.rank() != 1 || b.dim(0) != w.dim(0))) {
    throw ShapeError("conv2d: bias " + to_string(b.shape()));
  }
  ConvGeom g{x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), pad, 0, 0};
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.oh = g.h + 2 * pad - g.kh + 1;
  g.ow = g.w + 2 * pad - g.kw + 1;
  const std::size_t n = x.dim(0);
  std::vector<real> out(n * g.o * g.plane());

  if (g.pointwise()) {
    CMapR wm(w.data().data(), g.o, g.c);
    for (std::size_t i = 0; i < n; ++i) {
      MapR om(out.data() + i * g.o * g.plane(), g.o, g.plane());
      om.noalias() = wm * CMapR(x.data().data() + i * g.c * g.plane(), g.c, g.plane());
      if (has_bias) {
        for (std::size_t oc = 0; oc < g.o; ++oc) om.row(oc).array() += b.data()[oc];
      }
    }
  } else {
    const auto taps = tap_weights(w.data(), g);
    std::vector<real> xp(g.padded_size()), wide(g.o * g.wide());
    for (std::size_t i = 0; i < n; ++i) {
      pad_image(x.data().data() + i * g.c * g.h * g.w, g, xp.data());
      MapR ym(wide.data(), g.o, g.wide());
      ym.setZero();
      for (std::size_t t = 0; t < g.kh * g.kw; ++t) {
        ym.noalias() += CMapR(taps.data() + t * g.o * g.c, g.o, g.c) * shifted(xp.data(), g, t);
      }
      real* oi = out.data() + i * g.o * g.plane();
      for (std::size_t oc = 0; oc < g.o; ++oc) {
        const real bias = has_bias ? b.data()[oc] : real(0);
        for (std::size_t r = 0; r < g.oh; ++r) {
          const real* src = wide.data() + oc * g.wide() + r * g.wp();
          real* dst = oi + oc * g.plane() + r * g.ow;
          for (std::size_t j = 0; j < g.ow; ++j) dst[j] = src[j] + bias;
        }
      }
    }
  }

  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return Tensor::from_op(
      Shape{n, g.o, g.oh, g.ow}, std::move(out), std::move(inputs), [g, n, has_bias](Node& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        Node* bn = has_bias ? self.inputs[2].get() : nullptr;
        if (bn && bn->active) {
          auto gb = bn->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t oc = 0; oc < g.o; ++oc) {
              const real* go = self.grad.data() + (i * g.o + oc) * g.plane();
              gb[oc] += std::accumulate(go, go + g.plane(), real(0));
            }
        }
        if (!xn.active && !wn.active) return;
        if (g.pointwise()) {
          CMapR wm(wn.value.data(), g.o, g.c);
          for (std::size_t i = 0; i < n; ++i) {
            CMapR go(self.grad.data() + i * g.o * g.plane(), g.o, g.plane());
            const real* xi = xn.value.data() + i * g.c * g.plane();
            if (wn.active) {
              MapR(wn.grad_buffer().data(), g.o, g.c).noalias() +=
                  go * CMapR(xi, g.c, g.plane()).transpose();
            }
            if (xn.active) {
              MapR(xn.grad_buffer().data() + i * g.c * g.plane(), g.c, g.plane()).noalias() +=
                  wm.transpose() * go;
            }
          }
          return;
        }
        const auto taps = tap_weights(wn.value, g);
        std::vector<real> dtaps(wn.active ? taps.size() : 0, real(0));
        std::vector<real> xp(g.padded_size()), dxp(xn.active ? g.padded_size() : 0);
        std::vector<real> wide(g.o * g.wide(), real(0));
        for (std::size_t i = 0; i < n; ++i) {
          const real* go = self.grad.data() + i * g.o * g.plane();
          for (std::size_t oc = 0; oc < g.o; ++oc)
            for (std::size_t r = 0; r < g.oh; ++r)
              std::copy_n(go + oc * g.plane() + r * g.ow, g.ow,
                          wide.data() + oc * g.wide() + r * g.wp());
          CMapR gw(wide.data(), g.o, g.wide());
          if (wn.active) {
            pad_image(xn.value.data() + i * g.c * g.h * g.w, g, xp.data());
            for (std::size_t t = 0; t < g.kh * g.kw; ++t) {
              MapR(dtaps.data() + t * g.o * g.c, g.o, g.c).noalias() +=
                  gw * shifted(xp.data(), g, t).transpose();
            }
          }
          if (xn.active) {
            std::fill(dxp.begin(), dxp.end(), real(0));
            for (std::size_t t = 0; t < g.kh * g.kw; ++t) {
              shifted_mut(dxp.data(), g, t).noalias() +=
                  CMapR(taps.data() + t * g.o * g.c, g.o, g.c).transpose() * gw;
            }
            unpad_add(dxp.data(), g, xn.grad_buffer().data() + i * g.c * g.h * g.w);
          }
        }
        if (wn.active) {
          auto gwt = wn.grad_buffer();
          for (std::size_t oc = 0; oc < g.o; ++oc)
            for (std::size_t ci = 0; ci < g.c; ++ci)
              for (std::size_t t = 0; t < g.kh * g.kw; ++t)
                gwt[(oc * g.c + ci) * g.kh * g.kw + t] += dtaps[(t * g.o + oc) * g.c + ci];
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, bool update_stats) {
  require_rank(x, 4, "batch_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.size() != c || beta.size() != c || state.running_mean.size() != c ||
      state.running_var.size() != c) {
    throw ShapeError("batch_norm: parameter width does not match " + to_string(x.shape()));
  }
  const std::size_t count = n * hw;
  std::vector<real> mu(c), inv_std(c);
  const auto xd = x.data();
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0, s2 = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const real* p = xd.data() + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
      }
      const double m = s / static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        const real* p = xd.data() + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) s2 += (p[j] - m) * (p[j] - m);
      }
      const double var = s2 / static_cast<double>(count);
      mu[ch] = static_cast<real>(m);
      inv_std[ch] = static_cast<real>(1.0 / std::sqrt(var + state.eps));
      if (update_stats) {
        const double unbiased = count > 1 ? s2 / static_cast<double>(count - 1) : var;
        state.running_mean[ch] = static_cast<real>((1 - state.momentum) * state.running_mean[ch] +
                                                   state.momentum * m);
        state.running_var[ch] = static_cast<real>((1 - state.momentum) * state.running_var[ch] +
                                                  state.momentum * unbiased);
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = real(1) / std::sqrt(state.running_var[ch] + state.eps);
    }
  }

  std::vector<real> xhat(x.size()), out(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * hw;
      const real gm = gamma.data()[ch], bt = beta.data()[ch];
      for (std::size_t j = 0; j < hw; ++j) {
        const real v = (xd[off + j] - mu[ch]) * inv_std[ch];
        xhat[off + j] = v;
        out[off + j] = gm * v + bt;
      }
    }
  }

  return Tensor::from_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, count,
       training](Node& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (i * c + ch) * hw;
            double a = 0, b = 0;
            for (std::size_t j = 0; j < hw; ++j) {
              a += self.grad[off + j];
              b += self.grad[off + j] * xhat[off + j];
            }
            sum_dy[ch] += a;
            sum_dy_xhat[ch] += b;
          }
        }
        if (gn.active) {
          auto g = gn.grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) g[ch] += static_cast<real>(sum_dy_xhat[ch]);
        }
        if (bn.active) {
          auto g = bn.grad_buffer();
          for (std::size_t ch = 0; ch < c; ++ch) g[ch] += static_cast<real>(sum_dy[ch]);
        }
        if (!xn.active) return;
        auto gx = xn.grad_buffer();
        const real inv_count = real(1) / static_cast<real>(count);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (i * c + ch) * hw;
            const real k = gn.value[ch] * inv_std[ch];
            if (training) {
              const real m1 = static_cast<real>(sum_dy[ch]) * inv_count;
              const real m2 = static_cast<real>(sum_dy_xhat[ch]) * inv_count;
              for (std::size_t j = 0; j < hw; ++j) {
                gx[off + j] += k * (self.grad[off + j] - m1 - xhat[off + j] * m2);
              }
            } else {
              for (std::size_t j = 0; j < hw; ++j) gx[off + j] += k * self.grad[off + j];
            }
          }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<real> out(n * c);
  const auto xd = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    real s = 0;
    for (std::size_t j = 0; j < hw; ++j) s += xd[i * hw + j];
    out[i] = s / static_cast<real>(hw);
  }
  return Tensor::from_op(Shape{n, c}, std::move(out), {x}, [n, c, hw](Node& self) {
    auto& xn = *self.inputs[0];
    if (!xn.active) return;
    auto g = xn.grad_buffer();
    const real inv = real(1) / static_cast<real>(hw);
    for (std::size_t i = 0; i < n * c; ++i) {
      const real v = self.grad[i] * inv;
      for (std::size_t j = 0; j < hw; ++j) g[i * hw + j] += v;
    }
  });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const auto& s0 = parts.front().shape();
  if (s0.size() != 4) throw ShapeError("concat_channels: expected NCHW");
  std::size_t total_c = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ShapeError("concat_channels: " + to_string(s) + " vs " + to_string(s0));
    }
    widths.push_back(s[1]);
    total_c += s[1];
  }
  const std::size_t n = s0[0], hw = s0[2] * s0[3];
  std::vector<real> out(n * total_c * hw);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c_off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto d = parts[k].data();
      const std::size_t len = widths[k] * hw;
      std::copy_n(d.data() + i * len, len, out.data() + (i * total_c + c_off) * hw);
      c_off += widths[k];
    }
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::from_op(Shape{n, total_c, s0[2], s0[3]}, std::move(out), std::move(inputs),
                         [widths, n, hw, total_c](Node& self) {
                           std::size_t c_off = 0;
                           for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                             auto& in = *self.inputs[k];
                             const std::size_t len = widths[k] * hw;
                             if (in.active) {
                               auto g = in.grad_buffer();
                               for (std::size_t i = 0; i < n; ++i) {
                                 const real* src = self.grad.data() + (i * total_c + c_off) * hw;
                                 real* dst = g.data() + i * len;
                                 for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
                               }
                             }
                             c_off += widths[k];
                           }
                         });
}

Tensor expand_spatial(const Tensor& m, std::size_t height, std::size_t width) {
  require_rank(m, 2, "expand_spatial");
  const std::size_t n = m.dim(0), l = m.dim(1), hw = height * width;
  std::vector<real> out(n * l * hw);
  const auto md = m.data();
  for (std::size_t i = 0; i < n * l; ++i) std::fill_n(out.data() + i * hw, hw, md[i]);
  return Tensor::from_op(Shape{n, l, height, width}, std::move(out), {m}, [n, l, hw](Node& self) {
    auto& mn = *self.inputs[0];
    if (!mn.active) return;
    auto g = mn.grad_buffer();
    for (std::size_t i = 0; i < n * l; ++i) {
      real s = 0;
      for (std::size_t j = 0; j < hw; ++j) s += self.grad[i * hw + j];
      g[i] += s;
    }
  });
}

Tensor separable_map(const Tensor& x, std::span<const real> ph, std::size_t out_h,
                     std::span<const real> pw, std::size_t out_w) {
  require_rank(x, 4, "separable_map");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (ph.size() != out_h * h || pw.size() != out_w * w) {
    throw ShapeError("separable_map: operator sizes do not match " + to_string(x.shape()));
  }
  std::vector<real> phv(ph.begin(), ph.end()), pwv(pw.begin(), pw.end());
  std::vector<real> out(n * c * out_h * out_w);
  CMapR phm(phv.data(), out_h, h), pwm(pwv.data(), out_w, w);
  for (std::size_t p = 0; p < n * c; ++p) {
    MapR(out.data() + p * out_h * out_w, out_h, out_w).noalias() =
        phm * CMapR(x.data().data() + p * h * w, h, w) * pwm.transpose();
  }
  return Tensor::from_op(Shape{n, c, out_h, out_w}, std::move(out), {x},
                         [phv = std::move(phv), pwv = std::move(pwv), n, c, h, w, out_h,
                          out_w](Node& self) {
                           auto& xn = *self.inputs[0];
                           if (!xn.active) return;
                           auto g = xn.grad_buffer();
                           CMapR phm(phv.data(), out_h, h), pwm(pwv.data(), out_w, w);
                           for (std::size_t p = 0; p < n * c; ++p) {
                             MapR(g.data() + p * h * w, h, w).noalias() +=
                                 phm.transpose() *
                                 CMapR(self.grad.data() + p * out_h * out_w, out_h, out_w) * pwm;
                           }
                         });
}

Tensor block_map8(const Tensor& x, std::span<const std::vector<real>> per_channel) {
  require_rank(x, 4, "block_map8");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 8 != 0 || w % 8 != 0) {
    throw ShapeError("block_map8: spatial dims must be multiples of 8, got " +
                     to_string(x.shape()));
  }
  if (per_channel.size() != c) throw ShapeError("block_map8: one operator per channel required");
  for (const auto& op : per_channel) {
    if (op.size() != 64 * 64) throw ShapeError("block_map8: operators must be 64x64");
  }
  std::vector<std::vector<real>> ops(per_channel.begin(), per_channel.end());
  const std::size_t bh = h / 8, bw = w / 8, nb = bh * bw;

  // Gathers blocks of one plane into a [64, nb] matrix and back.
  auto gather = [=](const real* plane, real* blocks) {
    for (std::size_t bi = 0; bi < bh; ++bi)
      for (std::size_t bj = 0; bj < bw; ++bj)
        for (std::size_t u = 0; u < 8; ++u)
          for (std::size_t v = 0; v < 8; ++v)
            blocks[(u * 8 + v) * nb + bi * bw + bj] = plane[(bi * 8 + u) * w + bj * 8 + v];
  };
  auto scatter_add = [=](const real* blocks, real* plane) {
    for (std::size_t bi = 0; bi < bh; ++bi)
      for (std::size_t bj = 0; bj < bw; ++bj)
        for (std::size_t u = 0; u < 8; ++u)
          for (std::size_t v = 0; v < 8; ++v)
            plane[(bi * 8 + u) * w + bj * 8 + v] += blocks[(u * 8 + v) * nb + bi * bw + bj];
  };

  std::vector<real> out(x.size(), real(0));
  std::vector<real> in_blocks(64 * nb), out_blocks(64 * nb);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * h * w;
      gather(x.data().data() + off, in_blocks.data());
      MapR(out_blocks.data(), 64, nb).noalias() =
          CMapR(ops[ch].data(), 64, 64) * CMapR(in_blocks.data(), 64, nb);
      scatter_add(out_blocks.data(), out.data() + off);
    }
  }
  return Tensor::from_op(x.shape(), std::move(out), {x},
                         [ops = std::move(ops), gather, scatter_add, n, c, h, w, nb](Node& self) {
                           auto& xn = *self.inputs[0];
                           if (!xn.active) return;
                           auto g = xn.grad_buffer();
                           std::vector<real> gb(64 * nb), xb(64 * nb);
                           for (std::size_t i = 0; i < n; ++i) {
                             for (std::size_t ch = 0; ch < c; ++ch) {
                               const std::size_t off = (i * c + ch) * h * w;
                               gather(self.grad.data() + off, gb.data());
                               MapR(xb.data(), 64, nb).noalias() =
                                   CMapR(ops[ch].data(), 64, 64).transpose() *
                                   CMapR(gb.data(), 64, nb);
                               scatter_add(xb.data(), g.data() + off);
                             }
                           }
                         });
}

}  // namespace iga::ops
