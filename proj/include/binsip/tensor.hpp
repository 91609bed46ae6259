// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-tensor engine with reverse-mode differentiation. A Tape
// records each forward op; backward replays the records in exact reverse
// order, accumulating gradients additively (calling backward twice without
// resetting doubles the gradients).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "binsip/common.hpp"
#include "binsip/rng.hpp"

namespace binsip::ag {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, zero-initialized
  bool requires_grad = false;
  std::string name;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Value-semantic handle to a tensor node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false, std::string name = "") {
    Tensor t;
    t.d = std::make_shared<TensorData>();
    t.d->shape = std::move(shape);
    t.d->value.assign(static_cast<std::size_t>(numel(t.d->shape)), 0.0);
    t.d->requires_grad = requires_grad;
    t.d->name = std::move(name);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false,
                     std::string name = "") {
    Tensor t = zeros(std::move(shape), requires_grad, std::move(name));
    if (static_cast<std::int64_t>(values.size()) != numel(t.d->shape))
      throw std::invalid_argument("Tensor::from: value count does not match shape " +
                                  shape_str(t.d->shape));
    t.d->value = std::move(values);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false,
                      std::string name = "") {
    Tensor t = zeros(std::move(shape), requires_grad, std::move(name));
    for (auto& v : t.d->value) v = stddev * rng.normal();
    return t;
  }

  bool defined() const { return static_cast<bool>(d); }
  const Shape& shape() const { return d->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(d->value.size()); }
  std::vector<double>& value() { return d->value; }
  const std::vector<double>& value() const { return d->value; }
  std::vector<double>& grad() {
    d->ensure_grad();
    return d->grad;
  }
  bool requires_grad() const { return d->requires_grad; }
  const std::string& name() const { return d->name; }
  double item() const {
    if (d->value.size() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
    return d->value[0];
  }

  std::shared_ptr<TensorData> d;
};

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  bool initialized = false;

  void init(std::int64_t channels) {
    running_mean.assign(static_cast<std::size_t>(channels), 0.0);
    running_var.assign(static_cast<std::size_t>(channels), 1.0);
    initialized = true;
  }
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  // Seeds d(loss)/d(loss) = 1 and replays records in reverse. Gradients
  // accumulate into every tensor with requires_grad set.
  void backward(const Tensor& scalar_out) {
    if (scalar_out.size() != 1) throw std::invalid_argument("backward: output must be scalar");
    if (!grad_enabled_) throw std::logic_error("backward: tape recorded with grad disabled");
    scalar_out.d->ensure_grad();
    scalar_out.d->grad[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  }

  std::size_t num_records() const { return records_.size(); }

  // ---- elementwise ----

  Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = result(a.shape(), {a, b});
    for (std::size_t i = 0; i < out.d->value.size(); ++i)
      out.d->value[i] = a.d->value[i] + b.d->value[i];
    if (out.requires_grad()) {
      record([ad = a.d, bd = b.d, od = out.d] {
        if (ad->requires_grad) {
          ad->ensure_grad();
          for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
        }
        if (bd->requires_grad) {
          bd->ensure_grad();
          for (std::size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] += od->grad[i];
        }
      });
    }
    return out;
  }

  Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = result(a.shape(), {a, b});
    for (std::size_t i = 0; i < out.d->value.size(); ++i)
      out.d->value[i] = a.d->value[i] - b.d->value[i];
    if (out.requires_grad()) {
      record([ad = a.d, bd = b.d, od = out.d] {
        if (ad->requires_grad) {
          ad->ensure_grad();
          for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
        }
        if (bd->requires_grad) {
          bd->ensure_grad();
          for (std::size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] -= od->grad[i];
        }
      });
    }
    return out;
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = result(a.shape(), {a, b});
    for (std::size_t i = 0; i < out.d->value.size(); ++i)
      out.d->value[i] = a.d->value[i] * b.d->value[i];
    if (out.requires_grad()) {
      record([ad = a.d, bd = b.d, od = out.d] {
        if (ad->requires_grad) {
          ad->ensure_grad();
          for (std::size_t i = 0; i < od->grad.size(); ++i)
            ad->grad[i] += od->grad[i] * bd->value[i];
        }
        if (bd->requires_grad) {
          bd->ensure_grad();
          for (std::size_t i = 0; i < od->grad.size(); ++i)
            bd->grad[i] += od->grad[i] * ad->value[i];
        }
      });
    }
    return out;
  }

  Tensor scale(const Tensor& a, double s) {
    Tensor out = result(a.shape(), {a});
    for (std::size_t i = 0; i < out.d->value.size(); ++i) out.d->value[i] = s * a.d->value[i];
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d, s] {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += s * od->grad[i];
      });
    }
    return out;
  }

  Tensor relu(const Tensor& a) {
    Tensor out = result(a.shape(), {a});
    for (std::size_t i = 0; i < out.d->value.size(); ++i)
      out.d->value[i] = a.d->value[i] > 0.0 ? a.d->value[i] : 0.0;
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d] {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i)
          if (ad->value[i] > 0.0) ad->grad[i] += od->grad[i];
      });
    }
    return out;
  }

  Tensor sigmoid(const Tensor& a) {
    Tensor out = result(a.shape(), {a});
    for (std::size_t i = 0; i < out.d->value.size(); ++i)
      out.d->value[i] = 1.0 / (1.0 + std::exp(-a.d->value[i]));
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d] {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i)
          ad->grad[i] += od->grad[i] * od->value[i] * (1.0 - od->value[i]);
      });
    }
    return out;
  }

  Tensor tanh(const Tensor& a) {
    Tensor out = result(a.shape(), {a});
    for (std::size_t i = 0; i < out.d->value.size(); ++i)
      out.d->value[i] = std::tanh(a.d->value[i]);
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d] {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i)
          ad->grad[i] += od->grad[i] * (1.0 - od->value[i] * od->value[i]);
      });
    }
    return out;
  }

  // Inverted dropout with a per-call seed; identity in eval mode.
  Tensor dropout(const Tensor& a, double rate, std::uint64_t seed, bool train) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!train || rate == 0.0) return a;
    Tensor out = result(a.shape(), {a});
    auto mask = std::make_shared<std::vector<double>>(a.d->value.size());
    Rng rng(seed);
    const double keep = 1.0 - rate;
    for (std::size_t i = 0; i < mask->size(); ++i)
      (*mask)[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    for (std::size_t i = 0; i < out.d->value.size(); ++i)
      out.d->value[i] = a.d->value[i] * (*mask)[i];
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d, mask] {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i)
          ad->grad[i] += od->grad[i] * (*mask)[i];
      });
    }
    return out;
  }

  // ---- shape ----

  Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
      throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                                  shape_str(shape));
    Tensor out = result(std::move(shape), {a});
    out.d->value = a.d->value;
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d] {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
      });
    }
    return out;
  }

  // [B, C, L] -> [B, L, C]
  Tensor transpose_bcl_blc(const Tensor& a) {
    if (a.shape().size() != 3) throw std::invalid_argument("transpose_bcl_blc: rank-3 required");
    const std::int64_t b = a.shape()[0], c = a.shape()[1], l = a.shape()[2];
    Tensor out = result({b, l, c}, {a});
    for (std::int64_t i = 0; i < b; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        for (std::int64_t k = 0; k < l; ++k)
          out.d->value[static_cast<std::size_t>((i * l + k) * c + j)] =
              a.d->value[static_cast<std::size_t>((i * c + j) * l + k)];
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d, b, c, l] {
        ad->ensure_grad();
        for (std::int64_t i = 0; i < b; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            for (std::int64_t k = 0; k < l; ++k)
              ad->grad[static_cast<std::size_t>((i * c + j) * l + k)] +=
                  od->grad[static_cast<std::size_t>((i * l + k) * c + j)];
      });
    }
    return out;
  }

  Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t count) {
    if (a.shape().size() != 2) throw std::invalid_argument("slice_rows: rank-2 required");
    const std::int64_t rows = a.shape()[0], cols = a.shape()[1];
    if (begin < 0 || begin + count > rows) throw std::invalid_argument("slice_rows: out of range");
    Tensor out = result({count, cols}, {a});
    std::copy(a.d->value.begin() + begin * cols, a.d->value.begin() + (begin + count) * cols,
              out.d->value.begin());
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d, begin, cols, count] {
        ad->ensure_grad();
        for (std::int64_t i = 0; i < count * cols; ++i)
          ad->grad[static_cast<std::size_t>(begin * cols + i)] += od->grad[static_cast<std::size_t>(i)];
      });
    }
    return out;
  }

  Tensor concat_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_rows: empty input");
    const std::int64_t cols = xs[0].shape()[1];
    std::int64_t rows = 0;
    bool requires = false;
    for (const auto& x : xs) {
      if (x.shape().size() != 2 || x.shape()[1] != cols)
        throw std::invalid_argument("concat_rows: column mismatch");
      rows += x.shape()[0];
      requires = requires || x.requires_grad();
    }
    Tensor out = Tensor::zeros({rows, cols}, grad_enabled_ && requires);
    std::int64_t at = 0;
    std::vector<std::pair<std::shared_ptr<TensorData>, std::int64_t>> offsets;
    for (const auto& x : xs) {
      std::copy(x.d->value.begin(), x.d->value.end(), out.d->value.begin() + at * cols);
      offsets.emplace_back(x.d, at);
      at += x.shape()[0];
    }
    if (out.requires_grad()) {
      record([offsets, od = out.d, cols] {
        for (const auto& [xd, off] : offsets) {
          if (!xd->requires_grad) continue;
          xd->ensure_grad();
          for (std::size_t i = 0; i < xd->grad.size(); ++i)
            xd->grad[i] += od->grad[static_cast<std::size_t>(off * cols) + i];
        }
      });
    }
    return out;
  }

  Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> idx) {
    if (a.shape().size() != 2) throw std::invalid_argument("gather_rows: rank-2 required");
    const std::int64_t rows = a.shape()[0], cols = a.shape()[1];
    for (auto i : idx)
      if (i < 0 || i >= rows) throw std::invalid_argument("gather_rows: index out of range");
    Tensor out = result({static_cast<std::int64_t>(idx.size()), cols}, {a});
    for (std::size_t g = 0; g < idx.size(); ++g)
      std::copy(a.d->value.begin() + idx[g] * cols, a.d->value.begin() + (idx[g] + 1) * cols,
                out.d->value.begin() + static_cast<std::int64_t>(g) * cols);
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d, idx = std::move(idx), cols] {
        ad->ensure_grad();
        for (std::size_t g = 0; g < idx.size(); ++g)
          for (std::int64_t j = 0; j < cols; ++j)
            ad->grad[static_cast<std::size_t>(idx[g] * cols + j)] +=
                od->grad[static_cast<std::size_t>(static_cast<std::int64_t>(g) * cols + j)];
      });
    }
    return out;
  }

  // ---- linear algebra ----

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
      throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                  shape_str(b.shape()));
    const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out = result({m, n}, {a, b});
    matmul_values(a.d->value.data(), b.d->value.data(), out.d->value.data(), m, k, n);
    if (out.requires_grad()) {
      record([ad = a.d, bd = b.d, od = out.d, m, k, n] {
        if (ad->requires_grad) {
          ad->ensure_grad();  // dA += G * B^T
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
              const double g = od->grad[static_cast<std::size_t>(i * n + j)];
              if (g == 0.0) continue;
              for (std::int64_t p = 0; p < k; ++p)
                ad->grad[static_cast<std::size_t>(i * k + p)] +=
                    g * bd->value[static_cast<std::size_t>(p * n + j)];
            }
        }
        if (bd->requires_grad) {
          bd->ensure_grad();  // dB += A^T * G
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t p = 0; p < k; ++p) {
              const double av = ad->value[static_cast<std::size_t>(i * k + p)];
              if (av == 0.0) continue;
              for (std::int64_t j = 0; j < n; ++j)
                bd->grad[static_cast<std::size_t>(p * n + j)] +=
                    av * od->grad[static_cast<std::size_t>(i * n + j)];
            }
        }
      });
    }
    return out;
  }

  // x [N, Din] * W [Din, Dout] + bias [Dout]
  Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[0] ||
        bias.shape() != Shape{w.shape()[1]})
      throw std::invalid_argument("linear: incompatible shapes " + shape_str(x.shape()) + ", " +
                                  shape_str(w.shape()) + ", " + shape_str(bias.shape()));
    const std::int64_t n = x.shape()[0], din = x.shape()[1], dout = w.shape()[1];
    Tensor out = result({n, dout}, {x, w, bias});
    matmul_values(x.d->value.data(), w.d->value.data(), out.d->value.data(), n, din, dout);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < dout; ++j)
        out.d->value[static_cast<std::size_t>(i * dout + j)] += bias.d->value[static_cast<std::size_t>(j)];
    if (out.requires_grad()) {
      record([xd = x.d, wd = w.d, bd = bias.d, od = out.d, n, din, dout] {
        if (xd->requires_grad) {
          xd->ensure_grad();
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < dout; ++j) {
              const double g = od->grad[static_cast<std::size_t>(i * dout + j)];
              if (g == 0.0) continue;
              for (std::int64_t p = 0; p < din; ++p)
                xd->grad[static_cast<std::size_t>(i * din + p)] +=
                    g * wd->value[static_cast<std::size_t>(p * dout + j)];
            }
        }
        if (wd->requires_grad) {
          wd->ensure_grad();
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t p = 0; p < din; ++p) {
              const double xv = xd->value[static_cast<std::size_t>(i * din + p)];
              if (xv == 0.0) continue;
              for (std::int64_t j = 0; j < dout; ++j)
                wd->grad[static_cast<std::size_t>(p * dout + j)] +=
                    xv * od->grad[static_cast<std::size_t>(i * dout + j)];
            }
        }
        if (bd->requires_grad) {
          bd->ensure_grad();
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < dout; ++j)
              bd->grad[static_cast<std::size_t>(j)] +=
                  od->grad[static_cast<std::size_t>(i * dout + j)];
        }
      });
    }
    return out;
  }

  // Valid-padding 1-D convolution: x [B, Cin, L], w [Cout, Cin, K], bias [Cout].
  Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride) {
    if (x.shape().size() != 3 || w.shape().size() != 3)
      throw std::invalid_argument("conv1d: x and w must be rank-3");
    const std::int64_t b = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
    const std::int64_t cout = w.shape()[0], k = w.shape()[2];
    if (w.shape()[1] != cin)
      throw std::invalid_argument("conv1d: channel mismatch " + shape_str(x.shape()) + " vs " +
                                  shape_str(w.shape()));
    if (bias.shape() != Shape{cout}) throw std::invalid_argument("conv1d: bad bias shape");
    if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
    if (len < k)
      throw std::invalid_argument("conv1d: input length " + std::to_string(len) +
                                  " shorter than kernel " + std::to_string(k));
    const std::int64_t lout = (len - k) / stride + 1;
    Tensor out = result({b, cout, lout}, {x, w, bias});
    for (std::int64_t ib = 0; ib < b; ++ib) {
      const double* xb = x.d->value.data() + ib * cin * len;
      double* ob = out.d->value.data() + ib * cout * lout;
      for (std::int64_t co = 0; co < cout; ++co) {
        const double* wc = w.d->value.data() + co * cin * k;
        const double bv = bias.d->value[static_cast<std::size_t>(co)];
        for (std::int64_t t = 0; t < lout; ++t) {
          double acc = bv;
          const double* xt = xb + t * stride;
          for (std::int64_t ci = 0; ci < cin; ++ci) {
            const double* xc = xt + ci * len;
            const double* wk = wc + ci * k;
            for (std::int64_t kk = 0; kk < k; ++kk) acc += xc[kk] * wk[kk];
          }
          ob[co * lout + t] = acc;
        }
      }
    }
    if (out.requires_grad()) {
      record([xd = x.d, wd = w.d, bd = bias.d, od = out.d, b, cin, len, cout, k, lout, stride] {
        if (xd->requires_grad) xd->ensure_grad();
        if (wd->requires_grad) wd->ensure_grad();
        if (bd->requires_grad) bd->ensure_grad();
        for (std::int64_t ib = 0; ib < b; ++ib) {
          const double* xb = xd->value.data() + ib * cin * len;
          double* xgb = xd->requires_grad ? xd->grad.data() + ib * cin * len : nullptr;
          const double* gb = od->grad.data() + ib * cout * lout;
          for (std::int64_t co = 0; co < cout; ++co) {
            const double* wc = wd->value.data() + co * cin * k;
            double* wgc = wd->requires_grad ? wd->grad.data() + co * cin * k : nullptr;
            for (std::int64_t t = 0; t < lout; ++t) {
              const double g = gb[co * lout + t];
              if (g == 0.0) continue;
              if (bd->requires_grad) bd->grad[static_cast<std::size_t>(co)] += g;
              const std::int64_t x0 = t * stride;
              for (std::int64_t ci = 0; ci < cin; ++ci) {
                const double* xc = xb + ci * len + x0;
                if (xgb) {
                  double* xg = xgb + ci * len + x0;
                  const double* wk = wc + ci * k;
                  for (std::int64_t kk = 0; kk < k; ++kk) xg[kk] += g * wk[kk];
                }
                if (wgc) {
                  double* wg = wgc + ci * k;
                  for (std::int64_t kk = 0; kk < k; ++kk) wg[kk] += g * xc[kk];
                }
              }
            }
          }
        }
      });
    }
    return out;
  }

  // ---- normalization ----

  // Batch normalization over a [B, C, L] tensor, statistics per channel over
  // (B, L). Train mode uses batch statistics and updates the running ones;
  // eval mode is a pure affine map from the running statistics.
  Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     BatchNormState& state, bool train) {
    if (x.shape().size() != 3) throw std::invalid_argument("batchnorm1d: rank-3 required");
    const std::int64_t b = x.shape()[0], c = x.shape()[1], l = x.shape()[2];
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
      throw std::invalid_argument("batchnorm1d: parameter shape mismatch");
    if (!state.initialized) state.init(c);

    Tensor out = result(x.shape(), {x, gamma, beta});
    const std::int64_t m = b * l;

    auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c), 0.0);
    auto istd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c), 0.0);

    for (std::int64_t j = 0; j < c; ++j) {
      double mu, var;
      if (train) {
        double s = 0.0;
        for (std::int64_t ib = 0; ib < b; ++ib)
          for (std::int64_t t = 0; t < l; ++t)
            s += x.d->value[static_cast<std::size_t>((ib * c + j) * l + t)];
        mu = s / static_cast<double>(m);
        double v = 0.0;
        for (std::int64_t ib = 0; ib < b; ++ib)
          for (std::int64_t t = 0; t < l; ++t) {
            const double dv = x.d->value[static_cast<std::size_t>((ib * c + j) * l + t)] - mu;
            v += dv * dv;
          }
        var = v / static_cast<double>(m);
        state.running_mean[static_cast<std::size_t>(j)] =
            (1.0 - state.momentum) * state.running_mean[static_cast<std::size_t>(j)] +
            state.momentum * mu;
        state.running_var[static_cast<std::size_t>(j)] =
            (1.0 - state.momentum) * state.running_var[static_cast<std::size_t>(j)] +
            state.momentum * var;
      } else {
        mu = state.running_mean[static_cast<std::size_t>(j)];
        var = state.running_var[static_cast<std::size_t>(j)];
      }
      (*mean)[static_cast<std::size_t>(j)] = mu;
      (*istd)[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(var + state.eps);
    }

    for (std::int64_t ib = 0; ib < b; ++ib)
      for (std::int64_t j = 0; j < c; ++j) {
        const double mu = (*mean)[static_cast<std::size_t>(j)];
        const double is = (*istd)[static_cast<std::size_t>(j)];
        const double ga = gamma.d->value[static_cast<std::size_t>(j)];
        const double be = beta.d->value[static_cast<std::size_t>(j)];
        for (std::int64_t t = 0; t < l; ++t) {
          const std::size_t i = static_cast<std::size_t>((ib * c + j) * l + t);
          out.d->value[i] = ga * (x.d->value[i] - mu) * is + be;
        }
      }

    if (out.requires_grad()) {
      record([xd = x.d, gd = gamma.d, bd = beta.d, od = out.d, mean, istd, b, c, l, m, train] {
        if (xd->requires_grad) xd->ensure_grad();
        if (gd->requires_grad) gd->ensure_grad();
        if (bd->requires_grad) bd->ensure_grad();
        for (std::int64_t j = 0; j < c; ++j) {
          const double mu = (*mean)[static_cast<std::size_t>(j)];
          const double is = (*istd)[static_cast<std::size_t>(j)];
          const double ga = gd->value[static_cast<std::size_t>(j)];
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::int64_t ib = 0; ib < b; ++ib)
            for (std::int64_t t = 0; t < l; ++t) {
              const std::size_t i = static_cast<std::size_t>((ib * c + j) * l + t);
              const double xhat = (xd->value[i] - mu) * is;
              sum_g += od->grad[i];
              sum_gx += od->grad[i] * xhat;
            }
          if (gd->requires_grad) gd->grad[static_cast<std::size_t>(j)] += sum_gx;
          if (bd->requires_grad) bd->grad[static_cast<std::size_t>(j)] += sum_g;
          if (xd->requires_grad) {
            for (std::int64_t ib = 0; ib < b; ++ib)
              for (std::int64_t t = 0; t < l; ++t) {
                const std::size_t i = static_cast<std::size_t>((ib * c + j) * l + t);
                const double xhat = (xd->value[i] - mu) * is;
                if (train) {
                  xd->grad[i] += ga * is *
                                 (od->grad[i] - sum_g / static_cast<double>(m) -
                                  xhat * sum_gx / static_cast<double>(m));
                } else {
                  xd->grad[i] += ga * is * od->grad[i];
                }
              }
          }
        }
      });
    }
    return out;
  }

  // ---- softmax / losses ----

  // Softmax along the last axis.
  Tensor softmax(const Tensor& x) {
    const std::int64_t cols = x.shape().back();
    const std::int64_t rows = x.size() / cols;
    Tensor out = result(x.shape(), {x});
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* xr = x.d->value.data() + r * cols;
      double* yr = out.d->value.data() + r * cols;
      double mx = xr[0];
      for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
      double s = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        s += yr[j];
      }
      for (std::int64_t j = 0; j < cols; ++j) yr[j] /= s;
    }
    if (out.requires_grad()) {
      record([xd = x.d, od = out.d, rows, cols] {
        xd->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* y = od->value.data() + r * cols;
          const double* g = od->grad.data() + r * cols;
          double dot = 0.0;
          for (std::int64_t j = 0; j < cols; ++j) dot += g[j] * y[j];
          for (std::int64_t j = 0; j < cols; ++j)
            xd->grad[static_cast<std::size_t>(r * cols + j)] += y[j] * (g[j] - dot);
        }
      });
    }
    return out;
  }

  // Mean categorical cross-entropy of rows of logits against integer targets,
  // computed in the log domain.
  Tensor log_softmax_xent(const Tensor& logits, std::vector<std::int64_t> targets) {
    if (logits.shape().size() != 2)
      throw std::invalid_argument("log_softmax_xent: rank-2 logits required");
    const std::int64_t n = logits.shape()[0], k = logits.shape()[1];
    if (static_cast<std::int64_t>(targets.size()) != n)
      throw std::invalid_argument("log_softmax_xent: target count mismatch");
    for (auto t : targets)
      if (t < 0 || t >= k) throw std::invalid_argument("log_softmax_xent: target out of range");
    Tensor out = result({1}, {logits});
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double* row = logits.d->value.data() + i * k;
      double mx = row[0];
      for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double s = 0.0;
      for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
      total += std::log(s) + mx - row[targets[static_cast<std::size_t>(i)]];
    }
    out.d->value[0] = total / static_cast<double>(n);
    if (out.requires_grad()) {
      record([ld = logits.d, od = out.d, targets = std::move(targets), n, k] {
        ld->ensure_grad();
        const double g = od->grad[0] / static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i) {
          const double* row = ld->value.data() + i * k;
          double mx = row[0];
          for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
          double s = 0.0;
          for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
          for (std::int64_t j = 0; j < k; ++j) {
            const double p = std::exp(row[j] - mx) / s;
            const double ind = j == targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
            ld->grad[static_cast<std::size_t>(i * k + j)] += g * (p - ind);
          }
        }
      });
    }
    return out;
  }

  Tensor mse(const Tensor& pred, const Tensor& target) {
    check_same_shape("mse", pred, target);
    Tensor out = result({1}, {pred, target});
    double total = 0.0;
    for (std::size_t i = 0; i < pred.d->value.size(); ++i) {
      const double dv = pred.d->value[i] - target.d->value[i];
      total += dv * dv;
    }
    const double n = static_cast<double>(pred.d->value.size());
    out.d->value[0] = total / n;
    if (out.requires_grad()) {
      record([pd = pred.d, td = target.d, od = out.d, n] {
        const double g = od->grad[0] * 2.0 / n;
        if (pd->requires_grad) {
          pd->ensure_grad();
          for (std::size_t i = 0; i < pd->value.size(); ++i)
            pd->grad[i] += g * (pd->value[i] - td->value[i]);
        }
        if (td->requires_grad) {
          td->ensure_grad();
          for (std::size_t i = 0; i < td->value.size(); ++i)
            td->grad[i] -= g * (pd->value[i] - td->value[i]);
        }
      });
    }
    return out;
  }

  // ---- reductions ----

  Tensor sum_all(const Tensor& a) {
    Tensor out = result({1}, {a});
    out.d->value[0] = std::accumulate(a.d->value.begin(), a.d->value.end(), 0.0);
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d] {
        ad->ensure_grad();
        for (auto& g : ad->grad) g += od->grad[0];
      });
    }
    return out;
  }

  Tensor mean_all(const Tensor& a) {
    Tensor out = result({1}, {a});
    const double n = static_cast<double>(a.d->value.size());
    out.d->value[0] = std::accumulate(a.d->value.begin(), a.d->value.end(), 0.0) / n;
    if (out.requires_grad()) {
      record([ad = a.d, od = out.d, n] {
        ad->ensure_grad();
        for (auto& g : ad->grad) g += od->grad[0] / n;
      });
    }
    return out;
  }

  // row-wise dot product of two [G, F] tensors -> [G]
  Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
    check_same_shape("rowwise_dot", a, b);
    if (a.shape().size() != 2) throw std::invalid_argument("rowwise_dot: rank-2 required");
    const std::int64_t g = a.shape()[0], f = a.shape()[1];
    Tensor out = result({g}, {a, b});
    for (std::int64_t i = 0; i < g; ++i) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < f; ++j)
        acc += a.d->value[static_cast<std::size_t>(i * f + j)] *
               b.d->value[static_cast<std::size_t>(i * f + j)];
      out.d->value[static_cast<std::size_t>(i)] = acc;
    }
    if (out.requires_grad()) {
      record([ad = a.d, bd = b.d, od = out.d, g, f] {
        if (ad->requires_grad) ad->ensure_grad();
        if (bd->requires_grad) bd->ensure_grad();
        for (std::int64_t i = 0; i < g; ++i) {
          const double gi = od->grad[static_cast<std::size_t>(i)];
          if (gi == 0.0) continue;
          for (std::int64_t j = 0; j < f; ++j) {
            const std::size_t at = static_cast<std::size_t>(i * f + j);
            if (ad->requires_grad) ad->grad[at] += gi * bd->value[at];
            if (bd->requires_grad) bd->grad[at] += gi * ad->value[at];
          }
        }
      });
    }
    return out;
  }

  // Hooks for fused ops implemented outside the Tape: allocate an output that
  // inherits requires_grad from `inputs`, then register a hand-written
  // backward closure (runs in reverse order with the built-in ops).
  Tensor custom_result(Shape shape, std::initializer_list<Tensor> inputs) {
    return result(std::move(shape), inputs);
  }
  void record_backward(std::function<void()> fn) { record(std::move(fn)); }

  // Straight-through value replacement: forward emits `values`, backward
  // copies the output gradient onto x unchanged.
  Tensor passthrough(const Tensor& x, std::vector<double> values) {
    if (static_cast<std::int64_t>(values.size()) != x.size())
      throw std::invalid_argument("passthrough: size mismatch");
    Tensor out = result(x.shape(), {x});
    out.d->value = std::move(values);
    if (out.requires_grad()) {
      record([xd = x.d, od = out.d] {
        xd->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i];
      });
    }
    return out;
  }

 private:
  static void matmul_values(const double* a, const double* b, double* out, std::int64_t m,
                            std::int64_t k, std::int64_t n) {
    std::fill(out, out + m * n, 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* br = b + p * n;
        double* orow = out + i * n;
        for (std::int64_t j = 0; j < n; ++j) orow[j] += av * br[j];
      }
    }
  }

  static void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                  " vs " + shape_str(b.shape()));
  }

  Tensor result(Shape shape, std::initializer_list<Tensor> inputs) {
    bool requires = false;
    if (grad_enabled_) {
      for (const auto& t : inputs) requires = requires || t.requires_grad();
    }
    return Tensor::zeros(std::move(shape), requires);
  }

  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

  bool grad_enabled_;
  std::vector<std::function<void()>> records_;
};

}  // namespace binsip::ag
