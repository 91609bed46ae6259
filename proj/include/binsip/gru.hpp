// SPDX-License-Identifier: Apache-2.0
//
// Gated recurrent unit as a fused tape op with hand-written backprop through
// time. Gate order r, z, n; causal by construction.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "binsip/rng.hpp"
#include "binsip/tensor.hpp"

namespace binsip::ag {

struct GruLayerParams {
  Tensor w_ih;  // [3H, Din]
  Tensor w_hh;  // [3H, H]
  Tensor b_ih;  // [3H]
  Tensor b_hh;  // [3H]
};

struct GruStack {
  std::vector<GruLayerParams> layers;
  std::int64_t hidden = 0;
};

inline GruStack make_gru(int n_layers, std::int64_t input_dim, std::int64_t hidden, Rng& rng,
                         const std::string& name_prefix = "gru") {
  GruStack stack;
  stack.hidden = hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (int layer = 0; layer < n_layers; ++layer) {
    const std::int64_t din = layer == 0 ? input_dim : hidden;
    auto uniform_tensor = [&](Shape shape, const std::string& nm) {
      Tensor t = Tensor::zeros(std::move(shape), true, nm);
      for (auto& v : t.value()) v = rng.uniform(-bound, bound);
      return t;
    };
    const std::string p = name_prefix + std::to_string(layer);
    stack.layers.push_back({uniform_tensor({3 * hidden, din}, p + ".w_ih"),
                            uniform_tensor({3 * hidden, hidden}, p + ".w_hh"),
                            uniform_tensor({3 * hidden}, p + ".b_ih"),
                            uniform_tensor({3 * hidden}, p + ".b_hh")});
  }
  return stack;
}

// One GRU layer over a [T, Din] sequence with initial state h0 [H].
inline Tensor gru_layer(Tape& tape, const Tensor& x, const GruLayerParams& p, const Tensor& h0) {
  if (x.shape().size() != 2) throw std::invalid_argument("gru_layer: x must be [T, Din]");
  const std::int64_t t_len = x.shape()[0];
  const std::int64_t din = x.shape()[1];
  const std::int64_t h3 = p.w_ih.shape()[0];
  const std::int64_t hidden = h3 / 3;
  if (p.w_ih.shape() != Shape{3 * hidden, din} || p.w_hh.shape() != Shape{3 * hidden, hidden} ||
      p.b_ih.shape() != Shape{3 * hidden} || p.b_hh.shape() != Shape{3 * hidden} ||
      h0.shape() != Shape{hidden})
    throw std::invalid_argument("gru_layer: parameter shape mismatch");

  Tensor out = tape.custom_result({t_len, hidden}, {x, p.w_ih, p.w_hh, p.b_ih, p.b_hh, h0});

  struct Saved {
    std::vector<double> r, z, n, gh_n, h;  // each [T, H]
  };
  auto saved = std::make_shared<Saved>();
  const std::size_t th = static_cast<std::size_t>(t_len * hidden);
  saved->r.resize(th);
  saved->z.resize(th);
  saved->n.resize(th);
  saved->gh_n.resize(th);
  saved->h.resize(th);

  const double* wih = p.w_ih.value().data();
  const double* whh = p.w_hh.value().data();
  const double* bih = p.b_ih.value().data();
  const double* bhh = p.b_hh.value().data();
  const double* xv = x.value().data();

  std::vector<double> h_prev(h0.value());
  std::vector<double> gi(static_cast<std::size_t>(3 * hidden));
  std::vector<double> gh(static_cast<std::size_t>(3 * hidden));
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };

  for (std::int64_t t = 0; t < t_len; ++t) {
    const double* xt = xv + t * din;
    for (std::int64_t i = 0; i < 3 * hidden; ++i) {
      double acc = bih[i];
      const double* row = wih + i * din;
      for (std::int64_t j = 0; j < din; ++j) acc += row[j] * xt[j];
      gi[static_cast<std::size_t>(i)] = acc;
    }
    for (std::int64_t i = 0; i < 3 * hidden; ++i) {
      double acc = bhh[i];
      const double* row = whh + i * hidden;
      for (std::int64_t j = 0; j < hidden; ++j) acc += row[j] * h_prev[static_cast<std::size_t>(j)];
      gh[static_cast<std::size_t>(i)] = acc;
    }
    for (std::int64_t j = 0; j < hidden; ++j) {
      const std::size_t at = static_cast<std::size_t>(t * hidden + j);
      const double r = sigmoid(gi[static_cast<std::size_t>(j)] + gh[static_cast<std::size_t>(j)]);
      const double z = sigmoid(gi[static_cast<std::size_t>(hidden + j)] +
                               gh[static_cast<std::size_t>(hidden + j)]);
      const double ghn = gh[static_cast<std::size_t>(2 * hidden + j)];
      const double n = std::tanh(gi[static_cast<std::size_t>(2 * hidden + j)] + r * ghn);
      const double h = (1.0 - z) * n + z * h_prev[static_cast<std::size_t>(j)];
      saved->r[at] = r;
      saved->z[at] = z;
      saved->n[at] = n;
      saved->gh_n[at] = ghn;
      saved->h[at] = h;
      out.value()[at] = h;
    }
    std::copy(saved->h.begin() + t * hidden, saved->h.begin() + (t + 1) * hidden, h_prev.begin());
  }

  if (out.requires_grad()) {
    tape.record_backward([xd = x.d, wihd = p.w_ih.d, whhd = p.w_hh.d, bihd = p.b_ih.d,
                          bhhd = p.b_hh.d, h0d = h0.d, od = out.d, saved, t_len, din, hidden] {
      if (xd->requires_grad) xd->ensure_grad();
      if (wihd->requires_grad) wihd->ensure_grad();
      if (whhd->requires_grad) whhd->ensure_grad();
      if (bihd->requires_grad) bihd->ensure_grad();
      if (bhhd->requires_grad) bhhd->ensure_grad();
      if (h0d->requires_grad) h0d->ensure_grad();

      std::vector<double> dh_carry(static_cast<std::size_t>(hidden), 0.0);
      std::vector<double> da_r(static_cast<std::size_t>(hidden));
      std::vector<double> da_z(static_cast<std::size_t>(hidden));
      std::vector<double> da_n(static_cast<std::size_t>(hidden));
      std::vector<double> dghn(static_cast<std::size_t>(hidden));

      for (std::int64_t t = t_len - 1; t >= 0; --t) {
        const double* h_prev = t == 0 ? h0d->value.data() : saved->h.data() + (t - 1) * hidden;
        for (std::int64_t j = 0; j < hidden; ++j) {
          const std::size_t at = static_cast<std::size_t>(t * hidden + j);
          const double dh = od->grad[at] + dh_carry[static_cast<std::size_t>(j)];
          const double r = saved->r[at], z = saved->z[at], n = saved->n[at];
          const double ghn = saved->gh_n[at];
          const double dn = dh * (1.0 - z);
          const double dz = dh * (h_prev[j] - n);
          const double dan = dn * (1.0 - n * n);
          const double dr = dan * ghn;
          da_r[static_cast<std::size_t>(j)] = dr * r * (1.0 - r);
          da_z[static_cast<std::size_t>(j)] = dz * z * (1.0 - z);
          da_n[static_cast<std::size_t>(j)] = dan;
          dghn[static_cast<std::size_t>(j)] = dan * r;
          dh_carry[static_cast<std::size_t>(j)] = dh * z;  // direct path to h_{t-1}
        }

        const double* xt = xd->value.data() + t * din;
        auto accumulate_block = [&](const std::vector<double>& da, std::int64_t block,
                                    const std::vector<double>& dhh) {
          // input-side weights/bias
          if (wihd->requires_grad) {
            for (std::int64_t j = 0; j < hidden; ++j) {
              const double g = da[static_cast<std::size_t>(j)];
              if (g == 0.0) continue;
              double* row = wihd->grad.data() + (block * hidden + j) * din;
              for (std::int64_t i = 0; i < din; ++i) row[i] += g * xt[i];
            }
          }
          if (bihd->requires_grad) {
            for (std::int64_t j = 0; j < hidden; ++j)
              bihd->grad[static_cast<std::size_t>(block * hidden + j)] +=
                  da[static_cast<std::size_t>(j)];
          }
          // hidden-side weights/bias use dhh (equals da except the n block)
          if (whhd->requires_grad) {
            for (std::int64_t j = 0; j < hidden; ++j) {
              const double g = dhh[static_cast<std::size_t>(j)];
              if (g == 0.0) continue;
              double* row = whhd->grad.data() + (block * hidden + j) * hidden;
              for (std::int64_t i = 0; i < hidden; ++i) row[i] += g * h_prev[i];
            }
          }
          if (bhhd->requires_grad) {
            for (std::int64_t j = 0; j < hidden; ++j)
              bhhd->grad[static_cast<std::size_t>(block * hidden + j)] +=
                  dhh[static_cast<std::size_t>(j)];
          }
        };
        accumulate_block(da_r, 0, da_r);
        accumulate_block(da_z, 1, da_z);
        accumulate_block(da_n, 2, dghn);

        if (xd->requires_grad) {
          double* dxt = xd->grad.data() + t * din;
          for (std::int64_t j = 0; j < hidden; ++j) {
            const double gr = da_r[static_cast<std::size_t>(j)];
            const double gz = da_z[static_cast<std::size_t>(j)];
            const double gn = da_n[static_cast<std::size_t>(j)];
            const double* wr = wihd->value.data() + j * din;
            const double* wz = wihd->value.data() + (hidden + j) * din;
            const double* wn = wihd->value.data() + (2 * hidden + j) * din;
            for (std::int64_t i = 0; i < din; ++i) dxt[i] += gr * wr[i] + gz * wz[i] + gn * wn[i];
          }
        }

        // recurrent gradient into h_{t-1}
        for (std::int64_t j = 0; j < hidden; ++j) {
          const double gr = da_r[static_cast<std::size_t>(j)];
          const double gz = da_z[static_cast<std::size_t>(j)];
          const double gh = dghn[static_cast<std::size_t>(j)];
          const double* wr = whhd->value.data() + j * hidden;
          const double* wz = whhd->value.data() + (hidden + j) * hidden;
          const double* wn = whhd->value.data() + (2 * hidden + j) * hidden;
          for (std::int64_t i = 0; i < hidden; ++i)
            dh_carry[static_cast<std::size_t>(i)] += gr * wr[i] + gz * wz[i] + gh * wn[i];
        }
      }
      if (h0d->requires_grad) {
        for (std::int64_t j = 0; j < hidden; ++j)
          h0d->grad[static_cast<std::size_t>(j)] += dh_carry[static_cast<std::size_t>(j)];
      }
    });
  }
  return out;
}

// Stacked GRU over a [T, Din] sequence; state0 is [layers, H].
inline Tensor gru_forward(Tape& tape, const Tensor& x, const GruStack& stack,
                          const Tensor& state0) {
  if (state0.shape() != Shape{static_cast<std::int64_t>(stack.layers.size()), stack.hidden})
    throw std::invalid_argument("gru_forward: state0 must be [layers, hidden]");
  Tensor h = x;
  for (std::size_t layer = 0; layer < stack.layers.size(); ++layer) {
    Tensor h0 = tape.reshape(
        tape.slice_rows(state0, static_cast<std::int64_t>(layer), 1), {stack.hidden});
    h = gru_layer(tape, h, stack.layers[layer], h0);
  }
  return h;
}

}  // namespace binsip::ag
