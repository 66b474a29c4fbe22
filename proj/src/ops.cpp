/* Copyright 2026 The anchordistill Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include "anchordistill/ops.hpp"

#include <algorithm>
#include <cmath>

#include "anchordistill/errors.hpp"

namespace ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

detail::Node& parent(detail::Node& self, std::size_t i) { return *self.parents[i]; }

// Splits a shape around `axis` into (outer, n, inner) extents.
struct AxisSplit {
  Index outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, Index axis) {
  const auto rank = static_cast<Index>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         to_string(shape));
  }
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.n = shape[static_cast<std::size_t>(axis)];
  for (Index i = axis + 1; i < rank; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return make_result(a.shape(), a.values() + b.values(), {a, b}, [](detail::Node& self) {
    parent(self, 0).accumulate(self.grad);
    parent(self, 1).accumulate(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return make_result(a.shape(), a.values() - b.values(), {a, b}, [](detail::Node& self) {
    parent(self, 0).accumulate(self.grad);
    parent(self, 1).accumulate(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return make_result(a.shape(), a.values().cwiseProduct(b.values()), {a, b},
                     [](detail::Node& self) {
                       auto& pa = parent(self, 0);
                       auto& pb = parent(self, 1);
                       pa.accumulate(self.grad.cwiseProduct(pb.values));
                       pb.accumulate(self.grad.cwiseProduct(pa.values));
                     });
}

Tensor scale(const Tensor& a, double factor) {
  return make_result(a.shape(), a.values() * factor, {a}, [factor](detail::Node& self) {
    parent(self, 0).accumulate(self.grad * factor);
  });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return make_result(a.shape(), (a.values().array() + offset).matrix(), {a},
                     [](detail::Node& self) { parent(self, 0).accumulate(self.grad); });
}

Tensor sum(const Tensor& a) {
  return make_result(Shape{}, Vector::Constant(1, a.values().sum()), {a},
                     [](detail::Node& self) {
                       auto& p = parent(self, 0);
                       p.accumulate(Vector::Constant(p.values.size(), self.grad[0]));
                     });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean of an empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  return make_result(Shape{}, Vector::Constant(1, a.values().sum() * inv), {a},
                     [inv](detail::Node& self) {
                       auto& p = parent(self, 0);
                       p.accumulate(Vector::Constant(p.values.size(), self.grad[0] * inv));
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  return make_result(std::move(shape), a.values(), {a},
                     [](detail::Node& self) { parent(self, 0).accumulate(self.grad); });
}

Tensor relu(const Tensor& a) {
  return make_result(a.shape(), a.values().cwiseMax(0.0), {a}, [](detail::Node& self) {
    auto& p = parent(self, 0);
    p.accumulate((p.values.array() > 0.0).select(self.grad.array(), 0.0).matrix());
  });
}

Tensor softplus(const Tensor& a) {
  Vector out = a.values().unaryExpr([](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& p = parent(self, 0);
    Vector sig = p.values.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    p.accumulate(self.grad.cwiseProduct(sig));
  });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  const bool batched = input.dim() == 4;
  if (!batched && input.dim() != 3) {
    throw DimensionError("conv2d: input must be [C,H,W] or [N,C,H,W], got " +
                         to_string(input.shape()));
  }
  if (weight.dim() != 4 || weight.extent(2) != weight.extent(3)) {
    throw DimensionError("conv2d: weight must be [C_out,C_in,k,k], got " +
                         to_string(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw ParameterError("conv2d: stride >= 1, padding >= 0");
  const Index n_img = batched ? input.extent(0) : 1;
  const Index ci = input.extent(-3), h = input.extent(-2), w = input.extent(-1);
  const Index co = weight.extent(0), k = weight.extent(2);
  if (weight.extent(1) != ci) {
    throw DimensionError("conv2d: input has " + std::to_string(ci) +
                         " channels, weight expects " + std::to_string(weight.extent(1)));
  }
  if (k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd");
  if (bias.dim() != 1 || bias.extent(0) != co) {
    throw DimensionError("conv2d: bias must be [" + std::to_string(co) + "]");
  }
  const Index ho = (h + 2 * padding - k) / stride + 1;
  const Index wo = (w + 2 * padding - k) / stride + 1;
  if (h + 2 * padding < k || w + 2 * padding < k || ho < 1 || wo < 1) {
    throw DimensionError("conv2d: empty output for input " + to_string(input.shape()));
  }

  const Index kk = ci * k * k, pixels = ho * wo, total = n_img * pixels;
  // im2col for the whole batch: column n * pixels + q holds the receptive
  // field of output pixel q of image n.
  auto col = std::make_shared<RowMatrix>(RowMatrix::Zero(kk, total));
  const Vector& in = input.values();
  for (Index c = 0; c < ci; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        double* row = col->row((c * k + ky) * k + kx).data();
        for (Index n = 0; n < n_img; ++n) {
          const double* src = in.data() + (n * ci + c) * h * w;
          double* dst = row + n * pixels;
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            const double* line = src + iy * w;
            for (Index ox = 0; ox < wo; ++ox) {
              const Index ix = ox * stride - padding + kx;
              if (ix >= 0 && ix < w) dst[oy * wo + ox] = line[ix];
            }
          }
        }
      }
    }
  }
  ConstRowMap wmat(weight.values().data(), co, kk);
  RowMatrix product(co, total);
  product.noalias() = wmat * *col;
  product.colwise() += bias.values();
  Vector out(n_img * co * pixels);
  for (Index n = 0; n < n_img; ++n) {
    RowMap(out.data() + n * co * pixels, co, pixels) = product.middleCols(n * pixels, pixels);
  }

  Shape out_shape = batched ? Shape{n_img, co, ho, wo} : Shape{co, ho, wo};
  return make_result(
      std::move(out_shape), std::move(out), {input, weight, bias},
      [=](detail::Node& self) {
        auto& pin = parent(self, 0);
        auto& pw = parent(self, 1);
        auto& pb = parent(self, 2);
        RowMatrix g(co, total);
        for (Index n = 0; n < n_img; ++n) {
          g.middleCols(n * pixels, pixels) = ConstRowMap(self.grad.data() + n * co * pixels, co, pixels);
        }
        if (pw.requires_grad) {
          RowMatrix dw(co, kk);
          dw.noalias() = g * col->transpose();
          pw.accumulate(Eigen::Map<const Vector>(dw.data(), co * kk));
        }
        if (pb.requires_grad) pb.accumulate(g.rowwise().sum());
        if (!pin.requires_grad) return;
        ConstRowMap wm(pw.values.data(), co, kk);
        RowMatrix dcol(kk, total);
        dcol.noalias() = wm.transpose() * g;
        Vector din = Vector::Zero(pin.values.size());
        for (Index c = 0; c < ci; ++c) {
          for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
              const double* row = dcol.row((c * k + ky) * k + kx).data();
              for (Index n = 0; n < n_img; ++n) {
                double* dst = din.data() + (n * ci + c) * h * w;
                const double* src = row + n * pixels;
                for (Index oy = 0; oy < ho; ++oy) {
                  const Index iy = oy * stride - padding + ky;
                  if (iy < 0 || iy >= h) continue;
                  double* line = dst + iy * w;
                  for (Index ox = 0; ox < wo; ++ox) {
                    const Index ix = ox * stride - padding + kx;
                    if (ix >= 0 && ix < w) line[ix] += src[oy * wo + ox];
                  }
                }
              }
            }
          }
        }
        pin.accumulate(din);
      });
}

PoolResult masked_average_pool(const Tensor& feature, const Tensor& mask, PoolMode mode) {
  const bool batched = feature.dim() == 4;
  if (!batched && feature.dim() != 3) {
    throw DimensionError("masked_average_pool: feature must be [C,H,W] or [N,C,H,W]");
  }
  const Index n_img = batched ? feature.extent(0) : 1;
  const Index c = feature.extent(-3), h = feature.extent(-2), w = feature.extent(-1);
  const Shape want = batched ? Shape{n_img, h, w} : Shape{h, w};
  if (mask.shape() != want) {
    throw DimensionError("masked_average_pool: mask " + to_string(mask.shape()) +
                         " does not match feature grid " + to_string(want));
  }
  const Vector& m = mask.values();
  for (Index i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0 && m[i] != 1.0) throw ValidationError("masked_average_pool: mask not binary");
  }
  const double area = m.sum();
  PoolResult result;
  result.present = area > 0.0;
  if (!result.present) {
    result.value = Tensor::zeros(Shape{c});
    return result;
  }
  const double denom =
      mode == PoolMode::masked_mean ? area : static_cast<double>(n_img * h * w);
  const Index hw = h * w;
  Vector out = Vector::Zero(c);
  for (Index n = 0; n < n_img; ++n) {
    ConstRowMap f(feature.values().data() + n * c * hw, c, hw);
    out.noalias() += f * m.segment(n * hw, hw);
  }
  out /= denom;
  auto mask_values = std::make_shared<const Vector>(m);
  result.value = make_result(Shape{c}, std::move(out), {feature},
                             [=](detail::Node& self) {
                               auto& pf = parent(self, 0);
                               Vector d(pf.values.size());
                               for (Index n = 0; n < n_img; ++n) {
                                 RowMap dm(d.data() + n * c * hw, c, hw);
                                 dm.noalias() = (self.grad / denom) *
                                                mask_values->segment(n * hw, hw).transpose();
                               }
                               pf.accumulate(d);
                             });
  return result;
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack of zero tensors");
  const Shape& inner = parts.front().shape();
  const Index len = parts.front().size();
  Vector out(len * static_cast<Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].shape() != inner) throw DimensionError("stack: mismatched shapes");
    out.segment(static_cast<Index>(i) * len, len) = parts[i].values();
  }
  Shape shape{static_cast<Index>(parts.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return make_result(std::move(shape), std::move(out),
                     std::vector<Tensor>(parts.begin(), parts.end()),
                     [len](detail::Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         self.parents[i]->accumulate(
                             self.grad.segment(static_cast<Index>(i) * len, len));
                       }
                     });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
  if (a.dim() != 1 || a.shape() != b.shape() || a.size() < 1) {
    throw DimensionError("cosine_similarity: need equal-length vectors, got " +
                         to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  if (!(eps > 0.0)) throw ParameterError("cosine_similarity: eps must be positive");
  const double na = a.values().norm(), nb = b.values().norm();
  const double da = std::max(na, eps), db = std::max(nb, eps);
  const double cos = a.values().dot(b.values()) / (da * db);
  return make_result(Shape{}, Vector::Constant(1, cos), {a, b}, [=](detail::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    const double g = self.grad[0];
    if (pa.requires_grad) {
      Vector d = pb.values / (da * db);
      if (na > eps) d -= cos * pa.values / (na * na);
      pa.accumulate(g * d);
    }
    if (pb.requires_grad) {
      Vector d = pa.values / (da * db);
      if (nb > eps) d -= cos * pb.values / (nb * nb);
      pb.accumulate(g * d);
    }
  });
}

Tensor channel_cosine(const Tensor& feature, const Tensor& anchors, double eps) {
  const bool batched = feature.dim() == 4;
  if (!batched && feature.dim() != 3) {
    throw DimensionError("channel_cosine: feature must be [C,H,W] or [N,C,H,W]");
  }
  if (anchors.dim() != 2 || anchors.extent(1) != feature.extent(-3)) {
    throw DimensionError("channel_cosine: anchors " + to_string(anchors.shape()) +
                         " incompatible with feature " + to_string(feature.shape()));
  }
  if (!(eps > 0.0)) throw ParameterError("channel_cosine: eps must be positive");
  const Index n_img = batched ? feature.extent(0) : 1;
  const Index c = feature.extent(-3), hw = feature.extent(-2) * feature.extent(-1);
  const Index p = anchors.extent(0);

  ConstRowMap a(anchors.values().data(), p, c);
  const Eigen::ArrayXd anorm = a.rowwise().norm().array();
  const Eigen::ArrayXd adiv = anorm.max(eps);
  Vector out(n_img * p * hw);
  auto fnorms = std::make_shared<Eigen::ArrayXXd>(hw, n_img);
  for (Index n = 0; n < n_img; ++n) {
    ConstRowMap f(feature.values().data() + n * c * hw, c, hw);
    fnorms->col(n) = f.colwise().norm().transpose().array();
    const Eigen::ArrayXd fdiv = fnorms->col(n).max(eps);
    RowMap o(out.data() + n * p * hw, p, hw);
    o.noalias() = a * f;
    o.array().colwise() /= adiv;
    o.array().rowwise() /= fdiv.transpose();
  }
  Shape shape = batched ? Shape{n_img, p, feature.extent(-2), feature.extent(-1)}
                        : Shape{p, feature.extent(-2), feature.extent(-1)};
  return make_result(
      std::move(shape), out, {feature, anchors}, [=](detail::Node& self) {
        auto& pf = parent(self, 0);
        auto& pa = parent(self, 1);
        ConstRowMap am(pa.values.data(), p, c);
        Vector dfeat = pf.requires_grad ? Vector(pf.values.size()) : Vector();
        RowMatrix danc = RowMatrix::Zero(p, c);
        Eigen::ArrayXd anchor_acc = Eigen::ArrayXd::Zero(p);
        for (Index n = 0; n < n_img; ++n) {
          ConstRowMap f(pf.values.data() + n * c * hw, c, hw);
          ConstRowMap g(self.grad.data() + n * p * hw, p, hw);
          ConstRowMap o(out.data() + n * p * hw, p, hw);
          const Eigen::ArrayXd fn = fnorms->col(n);
          const Eigen::ArrayXd fdiv = fn.max(eps);
          RowMatrix gs = g;
          gs.array().colwise() /= adiv;
          gs.array().rowwise() /= fdiv.transpose();
          const RowMatrix go = g.cwiseProduct(o);
          if (pf.requires_grad) {
            RowMap df(dfeat.data() + n * c * hw, c, hw);
            df.noalias() = am.transpose() * gs;
            Eigen::ArrayXd coef = go.colwise().sum().transpose().array();
            coef = (fn > eps).select(coef / (fn * fn), 0.0);
            df.array() -= f.array().rowwise() * coef.transpose();
          }
          if (pa.requires_grad) {
            danc.noalias() += gs * f.transpose();
            anchor_acc += go.rowwise().sum().array();
          }
        }
        pf.accumulate(dfeat);
        if (pa.requires_grad) {
          const Eigen::ArrayXd coef = (anorm > eps).select(anchor_acc / (anorm * anorm), 0.0);
          danc.array() -= am.array().colwise() * coef;
          pa.accumulate(Eigen::Map<const Vector>(danc.data(), p * c));
        }
      });
}

Tensor softmax_temperature(const Tensor& logits, double tau, Index axis) {
  if (!(tau > 0.0)) throw ParameterError("softmax_temperature: tau must be positive");
  const AxisSplit s = split_axis(logits.shape(), axis);
  // Each outer block is an n x inner row-major matrix; slices are its columns.
  const Index block = s.n * s.inner;
  Vector y(logits.size());
  for (Index o = 0; o < s.outer; ++o) {
    ConstRowMap x(logits.values().data() + o * block, s.n, s.inner);
    RowMap e(y.data() + o * block, s.n, s.inner);
    const Eigen::RowVectorXd mx = x.colwise().maxCoeff();
    e = ((x.rowwise() - mx) / tau).array().exp().matrix();
    const Eigen::RowVectorXd z = e.colwise().sum();
    e.array().rowwise() /= z.array();
  }
  return make_result(logits.shape(), y, {logits}, [=](detail::Node& self) {
    Vector d(y.size());
    for (Index o = 0; o < s.outer; ++o) {
      ConstRowMap yb(y.data() + o * block, s.n, s.inner);
      ConstRowMap g(self.grad.data() + o * block, s.n, s.inner);
      RowMap db(d.data() + o * block, s.n, s.inner);
      const Eigen::RowVectorXd dot = yb.cwiseProduct(g).colwise().sum();
      db = (yb.array() * (g.rowwise() - dot).array() / tau).matrix();
    }
    parent(self, 0).accumulate(d);
  });
}

Tensor kl_divergence(const Tensor& p, const Tensor& q, Index axis) {
  require_same_shape(p, q, "kl_divergence");
  const AxisSplit s = split_axis(p.shape(), axis);
  constexpr double tol = 1e-6;
  const Index slices = s.outer * s.inner;
  if (slices == 0 || s.n == 0) throw DimensionError("kl_divergence: empty input");
  if (p.values().minCoeff() < 0.0 || q.values().minCoeff() < 0.0) {
    throw ValidationError("kl_divergence: negative mass");
  }
  const Index block = s.n * s.inner;
  for (Index o = 0; o < s.outer; ++o) {
    ConstRowMap pb(p.values().data() + o * block, s.n, s.inner);
    ConstRowMap qb(q.values().data() + o * block, s.n, s.inner);
    if ((pb.colwise().sum().array() - 1.0).abs().maxCoeff() > tol ||
        (qb.colwise().sum().array() - 1.0).abs().maxCoeff() > tol) {
      throw ValidationError("kl_divergence: slice is not normalized");
    }
  }
  const Eigen::ArrayXd a = p.values().array() + kKlSmoothing;
  const Eigen::ArrayXd b = q.values().array() + kKlSmoothing;
  auto log_ratio = std::make_shared<const Eigen::ArrayXd>((a / b).log());
  const double total = (p.values().array() * *log_ratio).sum();
  const double inv = 1.0 / static_cast<double>(slices);
  return make_result(Shape{}, Vector::Constant(1, total * inv), {p, q},
                     [inv, log_ratio](detail::Node& self) {
                       auto& pp = parent(self, 0);
                       auto& pq = parent(self, 1);
                       const double g = self.grad[0] * inv;
                       const Eigen::ArrayXd pv = pp.values.array();
                       if (pp.requires_grad) {
                         pp.accumulate((g * (*log_ratio + pv / (pv + kKlSmoothing))).matrix());
                       }
                       if (pq.requires_grad) {
                         pq.accumulate((-g * pv / (pq.values.array() + kKlSmoothing)).matrix());
                       }
                     });
}

Tensor sigmoid_focal_loss(const Tensor& logits, const Tensor& targets, double alpha,
                          double gamma) {
  require_same_shape(logits, targets, "sigmoid_focal_loss");
  const Vector& x = logits.values();
  const Vector& t = targets.values();
  auto log_sigmoid = [](double v) {  // log(sigmoid(v)), stable
    return v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
  };
  double total = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-x[i]));
    if (t[i] > 0.5) {
      total += -alpha * std::pow(1.0 - p, gamma) * log_sigmoid(x[i]);
    } else {
      total += -(1.0 - alpha) * std::pow(p, gamma) * log_sigmoid(-x[i]);
    }
  }
  auto target = std::make_shared<const Vector>(t);
  return make_result(Shape{}, Vector::Constant(1, total), {logits}, [=](detail::Node& self) {
    auto& pl = parent(self, 0);
    Vector d(pl.values.size());
    for (Index i = 0; i < d.size(); ++i) {
      const double v = pl.values[i];
      const double p = 1.0 / (1.0 + std::exp(-v));
      if ((*target)[i] > 0.5) {
        d[i] = alpha * std::pow(1.0 - p, gamma) * (gamma * p * log_sigmoid(v) - (1.0 - p));
      } else {
        d[i] = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * log_sigmoid(-v));
      }
    }
    pl.accumulate(self.grad[0] * d);
  });
}

Tensor weighted_l1(const Tensor& pred, const Tensor& target, const Tensor& weight) {
  require_same_shape(pred, target, "weighted_l1");
  require_same_shape(pred, weight, "weighted_l1");
  const Eigen::ArrayXd diff = pred.values().array() - target.values().array();
  const double total = (weight.values().array() * diff.abs()).sum();
  auto slope = std::make_shared<const Vector>(
      (weight.values().array() * diff.sign()).matrix());
  return make_result(Shape{}, Vector::Constant(1, total), {pred}, [slope](detail::Node& self) {
    parent(self, 0).accumulate(self.grad[0] * *slope);
  });
}

}  // namespace ad
