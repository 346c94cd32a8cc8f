// Copyright 2026 The msbert Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "msbert/ops.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "msbert/error.hpp"

namespace msbert {
namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw Error(std::string(op) + ": rank-2 operand required, got " +
                shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                " vs " + shape_string(b.shape()));
  }
}

// Adds `factor * g` into the gradient of node `id` when it needs one.
void accumulate(Tape& tape, std::size_t id, const Tensor& g, double factor = 1.0) {
  if (!tape.needs_grad(id)) return;
  Tensor& dst = tape.grad_of(id);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * g[i];
}

template <typename Fn, typename Deriv>
Var unary(Var x, Fn fn, Deriv deriv) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fn(in[i]);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi, deriv](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& xin = t.value(xi);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_of(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xin[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    accumulate(t, ai, g);
    accumulate(t, bi, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    accumulate(t, ai, g);
    accumulate(t, bi, g, -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs_grad(ai)) {
      const Tensor& bv = t.value(bi);
      Tensor& ga = t.grad_of(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(bi)) {
      const Tensor& av = t.value(ai);
      Tensor& gb = t.grad_of(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  const std::size_t ai = a.id();
  return a.tape().record(std::move(out), {a}, [ai, factor](Tape& t, std::size_t self) {
    accumulate(t, ai, t.grad_of(self), factor);
  });
}

Var add_row(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols()) {
    throw Error("add_row: bias of size " + std::to_string(bv.size()) +
                " for rows of width " + std::to_string(xv.cols()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bv[j];
  }
  const std::size_t xi = x.id(), bi = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [xi, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    accumulate(t, xi, g);
    if (t.needs_grad(bi)) {
      Tensor& gb = t.grad_of(bi);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
      }
    }
  });
}

Var add_constant(Var x, const Tensor& offset) {
  require_same_shape(x.value(), offset, "add_constant");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += offset[i];
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi](Tape& t, std::size_t self) {
    accumulate(t, xi, t.grad_of(self));
  });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = msbert::matmul(av, bv);
  const std::size_t ai = a.id(), bi = b.id();
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  return a.tape().record(std::move(out), {a, b},
                         [ai, bi, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs_grad(ai)) gemm_nt(g.data(), t.value(bi).data(), t.grad_of(ai).data(), m, n, k);
    if (t.needs_grad(bi)) gemm_tn(t.value(ai).data(), g.data(), t.grad_of(bi).data(), m, k, n);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  if (av.dim(1) != bv.dim(1)) {
    throw Error("matmul_nt: incompatible shapes " + shape_string(av.shape()) +
                " and " + shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor out({m, n});
  gemm_nt(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b},
                         [ai, bi, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs_grad(ai)) gemm_nn(g.data(), t.value(bi).data(), t.grad_of(ai).data(), m, n, k);
    if (t.needs_grad(bi)) gemm_tn(g.data(), t.value(ai).data(), t.grad_of(bi).data(), m, n, k);
  });
}

Var linear(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "linear");
  require_matrix(wv, "linear");
  if (xv.dim(1) != wv.dim(0) || bv.size() != wv.dim(1)) {
    throw Error("linear: input " + shape_string(xv.shape()) + ", weight " +
                shape_string(wv.shape()) + ", bias " + shape_string(bv.shape()));
  }
  const std::size_t m = xv.dim(0), k = xv.dim(1), n = wv.dim(1);
  Tensor out({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) = bv[j];
  }
  gemm_nn(xv.data(), wv.data(), out.data(), m, k, n);
  const std::size_t xi = x.id(), wi = weight.id(), bi = bias.id();
  return x.tape().record(std::move(out), {x, weight, bias},
                         [xi, wi, bi, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs_grad(xi)) gemm_nt(g.data(), t.value(wi).data(), t.grad_of(xi).data(), m, n, k);
    if (t.needs_grad(wi)) gemm_tn(t.value(xi).data(), g.data(), t.grad_of(wi).data(), m, k, n);
    if (t.needs_grad(bi)) {
      Tensor& gb = t.grad_of(bi);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += g.at(r, j);
      }
    }
  });
}

Var gelu(Var x) {
  return unary(
      x, [](double v) { return gelu(v); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var softmax(Var x) {
  const Tensor& xv = x.value();
  Tensor out = msbert::softmax(xv, xv.rank() - 1);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_of(xi);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      auto gxr = gx.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < yr.size(); ++j) gxr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  Tensor out = msbert::layer_norm(xv, gain.value(), bias.value(), eps);
  const std::size_t rows = xv.rows(), width = xv.cols();
  std::vector<double> inv(rows);
  Tensor normalized(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(width);
    inv[r] = 1.0 / std::sqrt(var + eps);
    auto nr = normalized.row(r);
    for (std::size_t j = 0; j < width; ++j) nr[j] = (in[j] - mean) * inv[r];
  }
  const std::size_t xi = x.id(), gi = gain.id(), bi = bias.id();
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [xi, gi, bi, rows, width, inv = std::move(inv),
       normalized = std::move(normalized)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& gainv = t.value(gi);
        if (t.needs_grad(gi)) {
          Tensor& gg = t.grad_of(gi);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) gg[j] += g.at(r, j) * normalized.at(r, j);
          }
        }
        if (t.needs_grad(bi)) {
          Tensor& gb = t.grad_of(bi);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) gb[j] += g.at(r, j);
          }
        }
        if (t.needs_grad(xi)) {
          Tensor& gx = t.grad_of(xi);
          const double nw = static_cast<double>(width);
          std::vector<double> dxhat(width);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
              dxhat[j] = g.at(r, j) * gainv[j];
              sum_d += dxhat[j];
              sum_dx += dxhat[j] * normalized.at(r, j);
            }
            for (std::size_t j = 0; j < width; ++j) {
              gx.at(r, j) += inv[r] / nw *
                             (nw * dxhat[j] - sum_d - normalized.at(r, j) * sum_dx);
            }
          }
        }
      });
}

Var dropout(Var x, double rate, Rng& rng, Mode mode) {
  if (rate < 0.0 || rate >= 1.0) {
    throw Error("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  const Tensor& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(xv.size());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x},
                         [xi, mask = std::move(mask)](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& g = t.grad_of(self);
    Tensor& gx = t.grad_of(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  require_matrix(tv, "embedding");
  const std::size_t width = tv.dim(1);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.dim(0)) {
      throw Error("embedding: id " + std::to_string(ids[i]) +
                  " outside table of " + std::to_string(tv.dim(0)) + " rows");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  (void)width;
  return gather_rows(table, rows);
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  require_matrix(xv, "gather_rows");
  const std::size_t width = xv.dim(1);
  Tensor out({rows.size(), width});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.dim(0)) {
      throw Error("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    }
    auto src = xv.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t xi = x.id();
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  return x.tape().record(std::move(out), {x},
                         [xi, picked = std::move(picked)](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& g = t.grad_of(self);
    Tensor& gx = t.grad_of(xi);
    for (std::size_t i = 0; i < picked.size(); ++i) {
      auto src = g.row(i);
      auto dst = gx.row(picked[i]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t width) {
  const Tensor& xv = x.value();
  require_matrix(xv, "slice_cols");
  if (start + width > xv.dim(1)) {
    throw Error("slice_cols: columns [" + std::to_string(start) + ", " +
                std::to_string(start + width) + ") exceed width " +
                std::to_string(xv.dim(1)));
  }
  const std::size_t rows = xv.dim(0), total = xv.dim(1);
  Tensor out({rows, width});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < width; ++j) out.at(r, j) = xv.at(r, start + j);
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x},
                         [xi, start, width, rows, total](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const Tensor& g = t.grad_of(self);
    Tensor& gx = t.grad_of(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < width; ++j) gx[r * total + start + j] += g.at(r, j);
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no operands");
  const std::size_t rows = parts[0].value().rows();
  std::size_t width = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.value().dim(0) != rows) throw Error("concat_cols: row count mismatch");
    widths.push_back(p.value().dim(1));
    width += widths.back();
  }
  Tensor out({rows, width});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(r, offset + j) = pv.at(r, j);
    }
    offset += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(
      std::move(out), parts,
      [ids, widths, rows, width](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.needs_grad(ids[k])) {
            Tensor& gp = t.grad_of(ids[k]);
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < widths[k]; ++j) {
                gp[r * widths[k] + j] += g[r * width + offset + j];
              }
            }
          }
          offset += widths[k];
        }
      });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw Error("stack_rows: no operands");
  const std::size_t width = rows[0].value().size();
  Tensor out({rows.size(), width});
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& rv = rows[i].value();
    if (rv.size() != width) throw Error("stack_rows: width mismatch");
    std::copy(rv.values().begin(), rv.values().end(), out.row(i).begin());
    ids.push_back(rows[i].id());
  }
  return rows[0].tape().record(std::move(out), rows,
                               [ids, width](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs_grad(ids[i])) continue;
      Tensor& gr = t.grad_of(ids[i]);
      for (std::size_t j = 0; j < width; ++j) gr[j] += g[i * width + j];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi](Tape& t, std::size_t self) {
    accumulate(t, xi, t.grad_of(self));
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t xi = x.id();
  return x.tape().record(Tensor::scalar(total), {x}, [xi](Tape& t, std::size_t self) {
    if (!t.needs_grad(xi)) return;
    const double g = t.grad_of(self)[0];
    for (double& v : t.grad_of(xi).values()) v += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw Error("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "cross_entropy");
  const std::size_t rows = lv.dim(0), classes = lv.dim(1);
  if (targets.size() != rows) {
    throw Error("cross_entropy: " + std::to_string(targets.size()) +
                " targets for " + std::to_string(rows) + " rows");
  }
  Tensor probs = msbert::softmax(lv, 1);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= classes) {
      throw Error("cross_entropy: target " + std::to_string(targets[r]) +
                  " out of range for " + std::to_string(classes) + " classes");
    }
    total += msbert::cross_entropy(lv.row(r), static_cast<std::size_t>(targets[r]));
    ++counted;
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  std::vector<int> tgt(targets.begin(), targets.end());
  const std::size_t li = logits.id();
  return logits.tape().record(
      Tensor::scalar(total / denom), {logits},
      [li, probs = std::move(probs), tgt = std::move(tgt), ignore_index, denom,
       classes](Tape& t, std::size_t self) {
        if (!t.needs_grad(li)) return;
        const double g = t.grad_of(self)[0] / denom;
        Tensor& gl = t.grad_of(li);
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          if (tgt[r] == ignore_index) continue;
          for (std::size_t j = 0; j < classes; ++j) {
            gl[r * classes + j] += g * probs[r * classes + j];
          }
          gl[r * classes + static_cast<std::size_t>(tgt[r])] -= g;
        }
      });
}

}  // namespace msbert
