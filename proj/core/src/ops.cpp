#include "skewprune/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "skewprune/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace skewprune::ops {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + t.shape_str());
  }
}

void require_vector(const Tensor& t, int64_t n, const char* op) {
  if (t.rank() != 1 || t.shape[0] != n) {
    throw DimensionError(std::string(op) + ": expected a vector of length " + std::to_string(n) +
                         ", got " + t.shape_str());
  }
}

// out[m,n] += a[m,k] · b[k,n]. 32-bit accumulation, i-k-j loop order so the
// inner loop runs over contiguous rows of b and out.
void gemm_nn(const float* a, const float* b, float* out, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (m >= 64)
  for (int64_t i = 0; i < m; ++i) {
    float* orow = out + i * n;
    const float* arow = a + i * k;
    for (int64_t t = 0; t < k; ++t) {
      const float at = arow[t];
      const float* brow = b + t * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += at * brow[j];
    }
  }
}

// out[m,p] += a[m,n] · b[p,n]ᵀ (row-row dot products).
void gemm_nt(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p) {
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * n;
    float* orow = out + i * p;
    for (int64_t j = 0; j < p; ++j) {
      const float* brow = b + j * n;
      float s = 0.0f;
      for (int64_t t = 0; t < n; ++t) s += arow[t] * brow[t];
      orow[j] += s;
    }
  }
}

// out[k,n] += a[m,k]ᵀ · b[m,n].
void gemm_tn(const float* a, const float* b, float* out, int64_t m, int64_t k, int64_t n) {
  for (int64_t t = 0; t < m; ++t) {
    const float* arow = a + t * k;
    const float* brow = b + t * n;
    for (int64_t i = 0; i < k; ++i) {
      const float at = arow[i];
      float* orow = out + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += at * brow[j];
    }
  }
}

// 64-bit column sums of g [r,c], added into out [c].
void add_col_sums(const Tensor& g, int64_t r, int64_t c, Tensor& out) {
  std::vector<double> acc(static_cast<size_t>(c), 0.0);
  for (int64_t i = 0; i < r; ++i) {
    const float* row = g.data.data() + i * c;
    for (int64_t j = 0; j < c; ++j) acc[static_cast<size_t>(j)] += row[j];
  }
  for (int64_t j = 0; j < c; ++j) {
    out.data[static_cast<size_t>(j)] += static_cast<float>(acc[static_cast<size_t>(j)]);
  }
}

bool want_grad(Graph& g, std::initializer_list<Var> inputs) {
  if (!g.grad_enabled()) return false;
  for (Var v : inputs) {
    if (v.valid() && g.requires_grad(v)) return true;
  }
  return false;
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  require_rank2(ta, "matmul");
  require_rank2(tb, "matmul");
  if (ta.shape[1] != tb.shape[0]) {
    throw DimensionError("matmul: inner dims disagree, " + ta.shape_str() + " vs " +
                         tb.shape_str());
  }
  const int64_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
  Tensor out = Tensor::zeros({m, n});
  gemm_nn(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
  const bool rg = want_grad(g, {a, b});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    g.record([a, b, o, m, k, n](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      if (gr.requires_grad(a)) {
        gemm_nt(go->data.data(), gr.value(b).data.data(), gr.grad_buffer(a).data.data(), m, n, k);
      }
      if (gr.requires_grad(b)) {
        gemm_tn(gr.value(a).data.data(), go->data.data(), gr.grad_buffer(b).data.data(), m, k, n);
      }
    });
  }
  return o;
}

Var add(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  require_same_shape(ta, tb, "add");
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  const bool rg = want_grad(g, {a, b});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    g.record([a, b, o](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      for (Var v : {a, b}) {
        if (!gr.requires_grad(v)) continue;
        Tensor& dv = gr.grad_buffer(v);
        for (size_t i = 0; i < dv.data.size(); ++i) dv.data[i] += go->data[i];
      }
    });
  }
  return o;
}

Var add_row_bias(Var x, Var bias) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  const Tensor& tb = g.value(bias);
  require_rank2(tx, "add_row_bias");
  require_vector(tb, tx.shape[1], "add_row_bias");
  const int64_t r = tx.shape[0], c = tx.shape[1];
  Tensor out = tx;
  for (int64_t i = 0; i < r; ++i) {
    float* row = out.data.data() + i * c;
    for (int64_t j = 0; j < c; ++j) row[j] += tb.data[static_cast<size_t>(j)];
  }
  const bool rg = want_grad(g, {x, bias});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    g.record([x, bias, o, r, c](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      if (gr.requires_grad(x)) {
        Tensor& dx = gr.grad_buffer(x);
        for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += go->data[i];
      }
      if (gr.requires_grad(bias)) add_col_sums(*go, r, c, gr.grad_buffer(bias));
    });
  }
  return o;
}

Var scale(Var x, double factor) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  Tensor out = tx;
  for (auto& v : out.data) v = static_cast<float>(factor * v);
  const bool rg = want_grad(g, {x});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    g.record([x, o, factor](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      Tensor& dx = gr.grad_buffer(x);
      for (size_t i = 0; i < dx.data.size(); ++i) {
        dx.data[i] += static_cast<float>(factor * go->data[i]);
      }
    });
  }
  return o;
}

Var permute_rows(Var x, std::vector<int64_t> perm) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  require_rank2(tx, "permute_rows");
  const int64_t r = tx.shape[0], c = tx.shape[1];
  if (static_cast<int64_t>(perm.size()) != r) {
    throw DimensionError("permute_rows: perm length " + std::to_string(perm.size()) +
                         " != row count " + std::to_string(r));
  }
  for (const int64_t p : perm) {
    if (p < 0 || p >= r) {
      throw IndexError("permute_rows: index " + std::to_string(p) + " out of range [0," +
                       std::to_string(r) + ")");
    }
  }
  Tensor out = Tensor::zeros({r, c});
  for (int64_t i = 0; i < r; ++i) {
    const float* src = tx.data.data() + perm[static_cast<size_t>(i)] * c;
    std::copy(src, src + c, out.data.data() + i * c);
  }
  const bool rg = want_grad(g, {x});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    auto pp = std::make_shared<std::vector<int64_t>>(std::move(perm));
    g.record([x, o, pp, r, c](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      if (!gr.requires_grad(x)) return;
      Tensor& dx = gr.grad_buffer(x);
      for (int64_t i = 0; i < r; ++i) {
        float* dst = dx.data.data() + (*pp)[static_cast<size_t>(i)] * c;
        const float* src = go->data.data() + i * c;
        for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    });
  }
  return o;
}

Var reshape(Var x, std::vector<int64_t> new_shape) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  if (shape_numel(new_shape) != tx.numel()) {
    throw DimensionError("reshape: cannot view " + tx.shape_str() + " as " +
                         shape_to_string(new_shape));
  }
  Tensor out;
  out.shape = std::move(new_shape);
  out.data = tx.data;
  const bool rg = want_grad(g, {x});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    g.record([x, o](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      Tensor& dx = gr.grad_buffer(x);
      for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += go->data[i];
    });
  }
  return o;
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  if (tx.rank() < 1) throw DimensionError("layer_norm: rank-0 input");
  if (eps < 0.0) throw ArgumentError("layer_norm: eps must be non-negative");
  const int64_t c = tx.cols();
  const int64_t r = tx.rows();
  require_vector(g.value(gamma), c, "layer_norm gamma");
  require_vector(g.value(beta), c, "layer_norm beta");
  const Tensor& tg = g.value(gamma);
  const Tensor& tb = g.value(beta);

  Tensor out = Tensor::zeros(tx.shape);
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(2 * r));
  for (int64_t i = 0; i < r; ++i) {
    const float* row = tx.data.data() + i * c;
    double mean = 0.0;
    for (int64_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(2 * i)] = mean;
    (*stats)[static_cast<size_t>(2 * i + 1)] = inv;
    float* orow = out.data.data() + i * c;
    for (int64_t j = 0; j < c; ++j) {
      const double xhat = (row[j] - mean) * inv;
      orow[j] = static_cast<float>(xhat * tg.data[static_cast<size_t>(j)] +
                                   tb.data[static_cast<size_t>(j)]);
    }
  }
  const bool rg = want_grad(g, {x, gamma, beta});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    g.record([x, gamma, beta, o, stats, r, c](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      const Tensor& tx2 = gr.value(x);
      const Tensor& tg2 = gr.value(gamma);
      const bool wx = gr.requires_grad(x);
      const bool wg = gr.requires_grad(gamma);
      const bool wb = gr.requires_grad(beta);
      std::vector<double> acc_gamma(wg ? static_cast<size_t>(c) : 0, 0.0);
      std::vector<double> acc_beta(wb ? static_cast<size_t>(c) : 0, 0.0);
      std::vector<double> gx(static_cast<size_t>(c));
      std::vector<double> xh(static_cast<size_t>(c));
      for (int64_t i = 0; i < r; ++i) {
        const float* row = tx2.data.data() + i * c;
        const float* grow = go->data.data() + i * c;
        const double mean = (*stats)[static_cast<size_t>(2 * i)];
        const double inv = (*stats)[static_cast<size_t>(2 * i + 1)];
        double m1 = 0.0, m2 = 0.0;
        for (int64_t j = 0; j < c; ++j) {
          const size_t sj = static_cast<size_t>(j);
          xh[sj] = (row[j] - mean) * inv;
          gx[sj] = static_cast<double>(grow[j]) * tg2.data[sj];
          m1 += gx[sj];
          m2 += gx[sj] * xh[sj];
          if (wg) acc_gamma[sj] += static_cast<double>(grow[j]) * xh[sj];
          if (wb) acc_beta[sj] += grow[j];
        }
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        if (wx) {
          float* dxrow = gr.grad_buffer(x).data.data() + i * c;
          for (int64_t j = 0; j < c; ++j) {
            const size_t sj = static_cast<size_t>(j);
            dxrow[j] += static_cast<float>(inv * (gx[sj] - m1 - xh[sj] * m2));
          }
        }
      }
      if (wg) {
        Tensor& dg = gr.grad_buffer(gamma);
        for (int64_t j = 0; j < c; ++j) {
          dg.data[static_cast<size_t>(j)] += static_cast<float>(acc_gamma[static_cast<size_t>(j)]);
        }
      }
      if (wb) {
        Tensor& db = gr.grad_buffer(beta);
        for (int64_t j = 0; j < c; ++j) {
          db.data[static_cast<size_t>(j)] += static_cast<float>(acc_beta[static_cast<size_t>(j)]);
        }
      }
    });
  }
  return o;
}

Var gelu(Var x) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  Tensor out = Tensor::zeros(tx.shape);
  for (size_t i = 0; i < tx.data.size(); ++i) {
    const double v = tx.data[i];
    out.data[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  const bool rg = want_grad(g, {x});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    g.record([x, o](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      const Tensor& tx2 = gr.value(x);
      Tensor& dx = gr.grad_buffer(x);
      for (size_t i = 0; i < dx.data.size(); ++i) {
        const double v = tx2.data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        dx.data[i] += static_cast<float>(go->data[i] * (cdf + v * pdf));
      }
    });
  }
  return o;
}

Var softmax(Var x) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  if (tx.rank() < 1 || tx.cols() < 1) throw DimensionError("softmax: empty last axis");
  const int64_t c = tx.cols();
  const int64_t r = tx.rows();
  Tensor out = Tensor::zeros(tx.shape);
  for (int64_t i = 0; i < r; ++i) {
    const float* row = tx.data.data() + i * c;
    float* orow = out.data.data() + i * c;
    double mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (int64_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    for (int64_t j = 0; j < c; ++j) {
      orow[j] = static_cast<float>(std::exp(row[j] - mx) / denom);
    }
  }
  const bool rg = want_grad(g, {x});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    g.record([x, o, r, c](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      const Tensor& p = gr.value(o);
      Tensor& dx = gr.grad_buffer(x);
      for (int64_t i = 0; i < r; ++i) {
        const float* prow = p.data.data() + i * c;
        const float* grow = go->data.data() + i * c;
        float* dxrow = dx.data.data() + i * c;
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += static_cast<double>(grow[j]) * prow[j];
        for (int64_t j = 0; j < c; ++j) {
          dxrow[j] += static_cast<float>(prow[j] * (grow[j] - dot));
        }
      }
    });
  }
  return o;
}

Var sum_all(Var x) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  double s = 0.0;
  for (const float v : tx.data) s += v;
  Tensor out = Tensor::from({1}, {static_cast<float>(s)});
  const bool rg = want_grad(g, {x});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    g.record([x, o](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      const float gv = go->data[0];
      Tensor& dx = gr.grad_buffer(x);
      for (auto& v : dx.data) v += gv;
    });
  }
  return o;
}

Var weighted_sum(Var x, Tensor w) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  require_same_shape(tx, w, "weighted_sum");
  double s = 0.0;
  for (size_t i = 0; i < tx.data.size(); ++i) {
    s += static_cast<double>(tx.data[i]) * w.data[i];
  }
  Tensor out = Tensor::from({1}, {static_cast<float>(s)});
  const bool rg = want_grad(g, {x});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    auto wp = std::make_shared<Tensor>(std::move(w));
    g.record([x, o, wp](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      const float gv = go->data[0];
      Tensor& dx = gr.grad_buffer(x);
      for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += gv * wp->data[i];
    });
  }
  return o;
}

Var mean_pool_rows(Var x, int64_t group_size) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  require_rank2(tx, "mean_pool_rows");
  const int64_t r = tx.shape[0], c = tx.shape[1];
  if (group_size < 1 || r % group_size != 0) {
    throw DimensionError("mean_pool_rows: " + std::to_string(r) +
                         " rows not divisible into groups of " + std::to_string(group_size));
  }
  const int64_t groups = r / group_size;
  Tensor out = Tensor::zeros({groups, c});
  std::vector<double> acc(static_cast<size_t>(c));
  for (int64_t gi = 0; gi < groups; ++gi) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int64_t i = 0; i < group_size; ++i) {
      const float* row = tx.data.data() + (gi * group_size + i) * c;
      for (int64_t j = 0; j < c; ++j) acc[static_cast<size_t>(j)] += row[j];
    }
    float* orow = out.data.data() + gi * c;
    for (int64_t j = 0; j < c; ++j) {
      orow[j] = static_cast<float>(acc[static_cast<size_t>(j)] / static_cast<double>(group_size));
    }
  }
  const bool rg = want_grad(g, {x});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    g.record([x, o, group_size, c](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      const double inv = 1.0 / static_cast<double>(group_size);
      Tensor& dx = gr.grad_buffer(x);
      const int64_t rows = dx.shape[0];
      for (int64_t i = 0; i < rows; ++i) {
        const float* grow = go->data.data() + (i / group_size) * c;
        float* dxrow = dx.data.data() + i * c;
        for (int64_t j = 0; j < c; ++j) dxrow[j] += static_cast<float>(grow[j] * inv);
      }
    });
  }
  return o;
}

Var embedding_lookup(Var table, std::vector<int64_t> ids) {
  Graph& g = *table.graph;
  const Tensor& tt = g.value(table);
  require_rank2(tt, "embedding_lookup");
  const int64_t v = tt.shape[0], e = tt.shape[1];
  for (const int64_t id : ids) {
    if (id < 0 || id >= v) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(v) + ")");
    }
  }
  const int64_t n = static_cast<int64_t>(ids.size());
  Tensor out = Tensor::zeros({n, e});
  for (int64_t i = 0; i < n; ++i) {
    const float* src = tt.data.data() + ids[static_cast<size_t>(i)] * e;
    std::copy(src, src + e, out.data.data() + i * e);
  }
  const bool rg = want_grad(g, {table});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    auto idp = std::make_shared<std::vector<int64_t>>(std::move(ids));
    g.record([table, o, idp, e](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      Tensor& dt = gr.grad_buffer(table);
      for (size_t i = 0; i < idp->size(); ++i) {
        float* dst = dt.data.data() + (*idp)[i] * e;
        const float* src = go->data.data() + static_cast<int64_t>(i) * e;
        for (int64_t j = 0; j < e; ++j) dst[j] += src[j];
      }
    });
  }
  return o;
}

Var cross_entropy(Var logits, std::vector<int64_t> labels,
                  const std::vector<float>* class_weights) {
  Graph& g = *logits.graph;
  const Tensor& tl = g.value(logits);
  require_rank2(tl, "cross_entropy");
  const int64_t b = tl.shape[0], k = tl.shape[1];
  if (static_cast<int64_t>(labels.size()) != b) {
    throw ArgumentError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(b) + " logit rows");
  }
  if (b == 0) throw ArgumentError("cross_entropy: empty batch");
  for (const int64_t y : labels) {
    if (y < 0 || y >= k) {
      throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                       std::to_string(k) + ")");
    }
  }
  std::vector<float> weights;
  if (class_weights != nullptr) {
    if (static_cast<int64_t>(class_weights->size()) != k) {
      throw DimensionError("cross_entropy: class_weights length " +
                           std::to_string(class_weights->size()) + " != " + std::to_string(k) +
                           " classes");
    }
    weights = *class_weights;
  }

  double weight_total = 0.0;
  double loss = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    const float* row = tl.data.data() + i * k;
    double mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    const double wi =
        weights.empty() ? 1.0 : static_cast<double>(weights[static_cast<size_t>(labels[static_cast<size_t>(i)])]);
    weight_total += wi;
    loss += wi * (lse - row[labels[static_cast<size_t>(i)]]);
  }
  if (weight_total <= 0.0) {
    throw ArgumentError("cross_entropy: class weights sum to zero over the batch");
  }
  Tensor out = Tensor::from({1}, {static_cast<float>(loss / weight_total)});
  const bool rg = want_grad(g, {logits});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    auto lp = std::make_shared<std::vector<int64_t>>(std::move(labels));
    auto wp = std::make_shared<std::vector<float>>(std::move(weights));
    g.record([logits, o, lp, wp, b, k, weight_total](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      const double gv = go->data[0];
      const Tensor& tl2 = gr.value(logits);
      Tensor& dl = gr.grad_buffer(logits);
      for (int64_t i = 0; i < b; ++i) {
        const float* row = tl2.data.data() + i * k;
        float* drow = dl.data.data() + i * k;
        double mx = row[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
        const int64_t y = (*lp)[static_cast<size_t>(i)];
        const double wi = wp->empty() ? 1.0 : static_cast<double>((*wp)[static_cast<size_t>(y)]);
        const double coef = gv * wi / weight_total;
        for (int64_t j = 0; j < k; ++j) {
          const double p = std::exp(row[j] - mx) / denom;
          drow[j] += static_cast<float>(coef * (p - (j == y ? 1.0 : 0.0)));
        }
      }
    });
  }
  return o;
}

namespace {

// Shared state saved by window_msa forward for its backward closure.
struct MsaSaved {
  Tensor q, k, v;  // [NW·T × H·D], bias included
  Tensor p;        // attention probabilities, [NW × H × T × T] flat
};

}  // namespace

Var window_msa(Var x, Var w_q, Var b_q, Var w_k, Var b_k, Var w_v, Var b_v,
               Var rel_bias, std::vector<int64_t> rel_index,
               int64_t tokens_per_window, int64_t num_heads) {
  Graph& g = *x.graph;
  const Tensor& tx = g.value(x);
  require_rank2(tx, "window_msa");
  const int64_t rows = tx.shape[0], e = tx.shape[1];
  const int64_t t = tokens_per_window;
  const int64_t h = num_heads;
  if (t < 1 || h < 1) throw ArgumentError("window_msa: need tokens_per_window >= 1, heads >= 1");
  if (rows % t != 0) {
    throw DimensionError("window_msa: " + std::to_string(rows) +
                         " rows not divisible into windows of " + std::to_string(t));
  }
  const int64_t nw = rows / t;
  const Tensor& twq = g.value(w_q);
  const Tensor& twk = g.value(w_k);
  const Tensor& twv = g.value(w_v);
  for (const Tensor* w : {&twq, &twk, &twv}) {
    require_rank2(*w, "window_msa weights");
    if (w->shape[0] != e || !w->same_shape(twq)) {
      throw DimensionError("window_msa: q/k/v weights must share shape [" + std::to_string(e) +
                           "xH*D], got " + w->shape_str());
    }
  }
  const int64_t hd = twq.shape[1];
  if (hd % h != 0) {
    throw DimensionError("window_msa: projection width " + std::to_string(hd) +
                         " not divisible by " + std::to_string(h) + " heads");
  }
  const int64_t d = hd / h;
  require_vector(g.value(b_q), hd, "window_msa b_q");
  require_vector(g.value(b_k), hd, "window_msa b_k");
  require_vector(g.value(b_v), hd, "window_msa b_v");
  const bool use_rel = rel_bias.valid();
  int64_t rb_rows = 0;
  if (use_rel) {
    const Tensor& trb = g.value(rel_bias);
    require_rank2(trb, "window_msa rel_bias");
    if (trb.shape[1] != h) {
      throw DimensionError("window_msa: rel_bias head axis " + std::to_string(trb.shape[1]) +
                           " != " + std::to_string(h));
    }
    rb_rows = trb.shape[0];
    if (static_cast<int64_t>(rel_index.size()) != t * t) {
      throw DimensionError("window_msa: rel_index length " + std::to_string(rel_index.size()) +
                           " != tokens_per_window^2 = " + std::to_string(t * t));
    }
    for (const int64_t ri : rel_index) {
      if (ri < 0 || ri >= rb_rows) {
        throw IndexError("window_msa: rel_index entry " + std::to_string(ri) +
                         " out of range [0," + std::to_string(rb_rows) + ")");
      }
    }
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  auto saved = std::make_shared<MsaSaved>();
  auto project = [&](const Tensor& w, const Tensor& bias) {
    Tensor p = Tensor::zeros({rows, hd});
    gemm_nn(tx.data.data(), w.data.data(), p.data.data(), rows, e, hd);
    for (int64_t i = 0; i < rows; ++i) {
      float* row = p.data.data() + i * hd;
      for (int64_t j = 0; j < hd; ++j) row[j] += bias.data[static_cast<size_t>(j)];
    }
    return p;
  };
  saved->q = project(twq, g.value(b_q));
  saved->k = project(twk, g.value(b_k));
  saved->v = project(twv, g.value(b_v));
  saved->p = Tensor::zeros({nw, h, t, t});

  Tensor out = Tensor::zeros({rows, hd});
  const float* rbd = use_rel ? g.value(rel_bias).data.data() : nullptr;
#pragma omp parallel for schedule(static) if (nw >= 8)
  for (int64_t n = 0; n < nw; ++n) {
    std::vector<double> srow(static_cast<size_t>(t));
    for (int64_t hh = 0; hh < h; ++hh) {
      const int64_t head_off = hh * d;
      float* pwin = saved->p.data.data() + (n * h + hh) * t * t;
      for (int64_t i = 0; i < t; ++i) {
        const float* qrow = saved->q.data.data() + (n * t + i) * hd + head_off;
        for (int64_t j = 0; j < t; ++j) {
          const float* krow = saved->k.data.data() + (n * t + j) * hd + head_off;
          float dot = 0.0f;
          for (int64_t dd = 0; dd < d; ++dd) dot += qrow[dd] * krow[dd];
          double s = dot * inv_sqrt_d;
          if (use_rel) s += rbd[rel_index[static_cast<size_t>(i * t + j)] * h + hh];
          srow[static_cast<size_t>(j)] = s;
        }
        double mx = srow[0];
        for (int64_t j = 1; j < t; ++j) mx = std::max(mx, srow[static_cast<size_t>(j)]);
        double denom = 0.0;
        for (int64_t j = 0; j < t; ++j) denom += std::exp(srow[static_cast<size_t>(j)] - mx);
        float* prow = pwin + i * t;
        for (int64_t j = 0; j < t; ++j) {
          prow[j] = static_cast<float>(std::exp(srow[static_cast<size_t>(j)] - mx) / denom);
        }
        float* orow = out.data.data() + (n * t + i) * hd + head_off;
        for (int64_t j = 0; j < t; ++j) {
          const float pij = prow[j];
          const float* vrow = saved->v.data.data() + (n * t + j) * hd + head_off;
          for (int64_t dd = 0; dd < d; ++dd) orow[dd] += pij * vrow[dd];
        }
      }
    }
  }

  const bool rg = want_grad(g, {x, w_q, b_q, w_k, b_k, w_v, b_v, rel_bias});
  Var o = g.make_value(std::move(out), rg);
  if (rg) {
    auto rip = std::make_shared<std::vector<int64_t>>(std::move(rel_index));
    g.record([x, w_q, b_q, w_k, b_k, w_v, b_v, rel_bias, o, saved, rip, nw, t, h, d, hd, e, rows,
              inv_sqrt_d, use_rel, rb_rows](Graph& gr) {
      const Tensor* go = gr.grad_if_touched(o);
      if (!go) return;
      Tensor dq = Tensor::zeros({rows, hd});
      Tensor dk = Tensor::zeros({rows, hd});
      Tensor dv = Tensor::zeros({rows, hd});
      const bool want_rel = use_rel && gr.requires_grad(rel_bias);
      std::vector<double> drel(want_rel ? static_cast<size_t>(rb_rows * h) : 0, 0.0);
      std::vector<double> dprow(static_cast<size_t>(t));
      for (int64_t n = 0; n < nw; ++n) {
        for (int64_t hh = 0; hh < h; ++hh) {
          const int64_t head_off = hh * d;
          const float* pwin = saved->p.data.data() + (n * h + hh) * t * t;
          for (int64_t i = 0; i < t; ++i) {
            const float* grow = go->data.data() + (n * t + i) * hd + head_off;
            const float* prow = pwin + i * t;
            double rowdot = 0.0;
            for (int64_t j = 0; j < t; ++j) {
              const float* vrow = saved->v.data.data() + (n * t + j) * hd + head_off;
              float dp = 0.0f;
              for (int64_t dd = 0; dd < d; ++dd) dp += grow[dd] * vrow[dd];
              dprow[static_cast<size_t>(j)] = dp;
              rowdot += static_cast<double>(dp) * prow[j];
              // dV accumulates P^T · gO row by row.
              float* dvrow = dv.data.data() + (n * t + j) * hd + head_off;
              const float pij = prow[j];
              for (int64_t dd = 0; dd < d; ++dd) dvrow[dd] += pij * grow[dd];
            }
            float* dqrow = dq.data.data() + (n * t + i) * hd + head_off;
            const float* qrow = saved->q.data.data() + (n * t + i) * hd + head_off;
            for (int64_t j = 0; j < t; ++j) {
              const double ds = prow[j] * (dprow[static_cast<size_t>(j)] - rowdot);
              if (want_rel) {
                drel[static_cast<size_t>((*rip)[static_cast<size_t>(i * t + j)] * h + hh)] += ds;
              }
              const float coef = static_cast<float>(ds * inv_sqrt_d);
              const float* krow = saved->k.data.data() + (n * t + j) * hd + head_off;
              float* dkrow = dk.data.data() + (n * t + j) * hd + head_off;
              for (int64_t dd = 0; dd < d; ++dd) {
                dqrow[dd] += coef * krow[dd];
                dkrow[dd] += coef * qrow[dd];
              }
            }
          }
        }
      }
      const Tensor& tx2 = gr.value(x);
      struct Branch {
        const Tensor* dproj;
        Var w;
        Var b;
      };
      const Branch branches[3] = {{&dq, w_q, b_q}, {&dk, w_k, b_k}, {&dv, w_v, b_v}};
      for (const Branch& br : branches) {
        if (gr.requires_grad(x)) {
          gemm_nt(br.dproj->data.data(), gr.value(br.w).data.data(),
                  gr.grad_buffer(x).data.data(), rows, hd, e);
        }
        if (gr.requires_grad(br.w)) {
          gemm_tn(tx2.data.data(), br.dproj->data.data(), gr.grad_buffer(br.w).data.data(), rows,
                  e, hd);
        }
        if (gr.requires_grad(br.b)) add_col_sums(*br.dproj, rows, hd, gr.grad_buffer(br.b));
      }
      if (want_rel) {
        Tensor& db = gr.grad_buffer(rel_bias);
        for (size_t i = 0; i < drel.size(); ++i) db.data[i] += static_cast<float>(drel[i]);
      }
    });
  }
  return o;
}

}  // namespace skewprune::ops
