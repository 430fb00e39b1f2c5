#include "ftz/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace ftz {

namespace {

constexpr double kMaskValue = -1e30;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

using NodePtr = std::shared_ptr<TensorNode>;

// C[m,n] (+)= A[m,k] * B[k,n]
void mm_nn(double* c, const double* a, const double* b, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    if (!acc) std::fill(ci, ci + n, 0.0);
    const double* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double ap = ai[p];
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += ap * bp[j];
    }
  }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
void mm_nt(double* c, const double* a, const double* b, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double dot = 0.0;
      for (int p = 0; p < k; ++p) dot += ai[p] * bj[p];
      ci[j] = acc ? ci[j] + dot : dot;
    }
  }
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
void mm_tn(double* c, const double* a, const double* b, int m, int k, int n, bool acc) {
  if (!acc) std::fill(c, c + static_cast<size_t>(m) * n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double* ap = a + static_cast<size_t>(p) * m;
    const double* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

bool wants_grad(const TensorNode* n, uint64_t gen) {
  return n->requires_grad || (n->on_tape && n->tape_gen == gen);
}

void ensure_grad(const NodePtr& n) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
}

void finalize(Tensor& out, const char* op) {
  store_round_inplace(out.vec());
  if (finite_checks()) {
    for (double v : out.vec()) {
      if (!std::isfinite(v)) throw Error(std::string(op) + ": non-finite value in output");
    }
  }
}

bool recording_for(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active().recording()) return false;
  for (const Tensor* t : inputs) {
    if (tracks_grad(*t)) return true;
  }
  return false;
}

void mark_on_tape(Tensor& out) {
  out.node()->on_tape = true;
  out.node()->tape_gen = Tape::active().generation();
}

void record(const char* op, std::initializer_list<const Tensor*> inputs, Tensor& out,
            std::function<void()> rule) {
  std::vector<uint64_t> ids;
  ids.reserve(inputs.size());
  for (const Tensor* t : inputs) ids.push_back(t->id());
  mark_on_tape(out);
  Tape::active().record(TapeEntry{op, std::move(ids), out.id(), std::move(rule)});
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  mm_nn(out.data(), a.data(), b.data(), m, k, n, false);
  finalize(out, "matmul");
  if (recording_for({&a, &b})) {
    NodePtr an = a.handle(), bn = b.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("matmul", {&a, &b}, out, [an, bn, on, gen, m, k, n]() {
      if (on->grad.empty()) return;
      if (wants_grad(an.get(), gen)) {
        ensure_grad(an);
        mm_nt(an->grad.data(), on->grad.data(), bn->data.data(), m, n, k, true);
      }
      if (wants_grad(bn.get(), gen)) {
        ensure_grad(bn);
        mm_tn(bn->grad.data(), an->data.data(), on->grad.data(), k, m, n, true);
      }
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& x) {
  require_rank2(x, "transpose2d");
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m});
  const double* src = x.data();
  double* dst = out.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) dst[static_cast<size_t>(j) * m + i] = src[static_cast<size_t>(i) * n + j];
  }
  if (recording_for({&x})) {
    NodePtr xn = x.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("transpose2d", {&x}, out, [xn, on, gen, m, n]() {
      if (on->grad.empty() || !wants_grad(xn.get(), gen)) return;
      ensure_grad(xn);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          xn->grad[static_cast<size_t>(i) * n + j] += on->grad[static_cast<size_t>(j) * m + i];
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = out.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  finalize(out, "add");
  if (recording_for({&a, &b})) {
    NodePtr an = a.handle(), bn = b.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("add", {&a, &b}, out, [an, bn, on, gen, n]() {
      if (on->grad.empty()) return;
      if (wants_grad(an.get(), gen)) {
        ensure_grad(an);
        for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      }
      if (wants_grad(bn.get(), gen)) {
        ensure_grad(bn);
        for (size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = out.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  finalize(out, "mul");
  if (recording_for({&a, &b})) {
    NodePtr an = a.handle(), bn = b.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("mul", {&a, &b}, out, [an, bn, on, gen, n]() {
      if (on->grad.empty()) return;
      if (wants_grad(an.get(), gen)) {
        ensure_grad(an);
        for (size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->data[i];
      }
      if (wants_grad(bn.get(), gen)) {
        ensure_grad(bn);
        for (size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const size_t n = out.numel();
  const double* px = x.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) po[i] = px[i] * c;
  finalize(out, "scale");
  if (recording_for({&x})) {
    NodePtr xn = x.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("scale", {&x}, out, [xn, on, gen, c, n]() {
      if (on->grad.empty() || !wants_grad(xn.get(), gen)) return;
      ensure_grad(xn);
      for (size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i] * c;
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (x.rank() < 1 || b.rank() != 1 || x.dim(x.rank() - 1) != b.dim(0)) {
    throw DimensionError("add_rowvec: last extent of " + shape_str(x.shape()) + " must match " +
                         shape_str(b.shape()));
  }
  const int d = b.dim(0);
  const size_t outer = x.numel() / static_cast<size_t>(d);
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  const double* pb = b.data();
  double* po = out.data();
  for (size_t r = 0; r < outer; ++r) {
    const size_t base = r * static_cast<size_t>(d);
    for (int j = 0; j < d; ++j) po[base + j] = px[base + j] + pb[j];
  }
  finalize(out, "add_rowvec");
  if (recording_for({&x, &b})) {
    NodePtr xn = x.handle(), bn = b.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("add_rowvec", {&x, &b}, out, [xn, bn, on, gen, outer, d]() {
      if (on->grad.empty()) return;
      if (wants_grad(xn.get(), gen)) {
        ensure_grad(xn);
        const size_t n = xn->data.size();
        for (size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i];
      }
      if (wants_grad(bn.get(), gen)) {
        ensure_grad(bn);
        for (size_t r = 0; r < outer; ++r) {
          const size_t base = r * static_cast<size_t>(d);
          for (int j = 0; j < d; ++j) bn->grad[j] += on->grad[base + j];
        }
      }
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1) {
    throw DimensionError("softmax_lastdim: tensor has no last axis, shape " + shape_str(x.shape()));
  }
  const int d = x.dim(x.rank() - 1);
  const size_t slices = x.numel() / static_cast<size_t>(d);
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (size_t s = 0; s < slices; ++s) {
    const size_t base = s * static_cast<size_t>(d);
    double mx = px[base];
    for (int j = 1; j < d; ++j) mx = std::max(mx, px[base + j]);
    double sum = 0.0;
    for (int j = 0; j < d; ++j) {
      const double e = std::exp(px[base + j] - mx);
      po[base + j] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < d; ++j) po[base + j] *= inv;
  }
  finalize(out, "softmax_lastdim");
  if (recording_for({&x})) {
    NodePtr xn = x.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("softmax_lastdim", {&x}, out, [xn, on, gen, slices, d]() {
      if (on->grad.empty() || !wants_grad(xn.get(), gen)) return;
      ensure_grad(xn);
      for (size_t s = 0; s < slices; ++s) {
        const size_t base = s * static_cast<size_t>(d);
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += on->grad[base + j] * on->data[base + j];
        for (int j = 0; j < d; ++j) {
          xn->grad[base + j] += on->data[base + j] * (on->grad[base + j] - dot);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: tensor has no last axis");
  const int d = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                         shape_str(beta.shape()) + " must match last extent " + std::to_string(d));
  }
  if (!(eps > 0.0)) throw ConfigurationError("layer_norm: eps must be positive");
  const size_t rows = x.numel() / static_cast<size_t>(d);
  Tensor out = Tensor::zeros(x.shape());
  auto normalized = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.data();
  for (size_t r = 0; r < rows; ++r) {
    const size_t base = r * static_cast<size_t>(d);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += px[base + j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = px[base + j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (int j = 0; j < d; ++j) {
      const double xh = (px[base + j] - mean) * inv;
      (*normalized)[base + j] = xh;
      po[base + j] = xh * pg[j] + pb[j];
    }
  }
  finalize(out, "layer_norm");
  if (recording_for({&x, &gamma, &beta})) {
    NodePtr xn = x.handle(), gn = gamma.handle(), bn = beta.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("layer_norm", {&x, &gamma, &beta}, out,
           [xn, gn, bn, on, gen, rows, d, normalized, inv_std]() {
             if (on->grad.empty()) return;
             const bool wx = wants_grad(xn.get(), gen);
             const bool wg = wants_grad(gn.get(), gen);
             const bool wb = wants_grad(bn.get(), gen);
             if (wx) ensure_grad(xn);
             if (wg) ensure_grad(gn);
             if (wb) ensure_grad(bn);
             for (size_t r = 0; r < rows; ++r) {
               const size_t base = r * static_cast<size_t>(d);
               if (wx) {
                 double mean_gy = 0.0, mean_gyxh = 0.0;
                 for (int j = 0; j < d; ++j) {
                   const double gy = on->grad[base + j] * gn->data[j];
                   mean_gy += gy;
                   mean_gyxh += gy * (*normalized)[base + j];
                 }
                 mean_gy /= d;
                 mean_gyxh /= d;
                 const double inv = (*inv_std)[r];
                 for (int j = 0; j < d; ++j) {
                   const double gy = on->grad[base + j] * gn->data[j];
                   xn->grad[base + j] += (gy - mean_gy - (*normalized)[base + j] * mean_gyxh) * inv;
                 }
               }
               if (wg) {
                 for (int j = 0; j < d; ++j) {
                   gn->grad[j] += on->grad[base + j] * (*normalized)[base + j];
                 }
               }
               if (wb) {
                 for (int j = 0; j < d; ++j) bn->grad[j] += on->grad[base + j];
               }
             }
           });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const size_t n = out.numel();
  const double* px = x.data();
  double* po = out.data();
  for (size_t i = 0; i < n; ++i) {
    const double v = px[i];
    po[i] = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
  }
  finalize(out, "gelu");
  if (recording_for({&x})) {
    NodePtr xn = x.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("gelu", {&x}, out, [xn, on, gen, n]() {
      if (on->grad.empty() || !wants_grad(xn.get(), gen)) return;
      ensure_grad(xn);
      for (size_t i = 0; i < n; ++i) {
        const double v = xn->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        xn->grad[i] += on->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                            bool* all_ignored) {
  require_rank2(logits, "cross_entropy");
  const int rows = logits.dim(0), vocab = logits.dim(1);
  if (static_cast<int>(targets.size()) != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  int supervised = 0;
  for (int t : targets) {
    if (t == kIgnoreId) continue;
    if (t < 0 || t >= vocab) {
      throw IndexError("cross_entropy: target id " + std::to_string(t) + " out of range [0," +
                       std::to_string(vocab) + ")");
    }
    ++supervised;
  }
  if (all_ignored) *all_ignored = supervised == 0;
  if (supervised == 0) return Tensor::zeros({1});

  auto probs = std::make_shared<std::vector<double>>(logits.numel(), 0.0);
  const double* pl = logits.data();
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    if (targets[static_cast<size_t>(r)] == kIgnoreId) continue;
    const size_t base = static_cast<size_t>(r) * vocab;
    double mx = pl[base];
    for (int j = 1; j < vocab; ++j) mx = std::max(mx, pl[base + j]);
    double sum = 0.0;
    for (int j = 0; j < vocab; ++j) {
      const double e = std::exp(pl[base + j] - mx);
      (*probs)[base + j] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < vocab; ++j) (*probs)[base + j] *= inv;
    total += mx + std::log(sum) - pl[base + targets[static_cast<size_t>(r)]];
  }
  Tensor out = Tensor::from_data({1}, {total / supervised});
  finalize(out, "cross_entropy");
  if (recording_for({&logits})) {
    NodePtr ln = logits.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    auto tg = std::make_shared<std::vector<int>>(targets);
    record("cross_entropy", {&logits}, out, [ln, on, gen, tg, probs, rows, vocab, supervised]() {
      if (on->grad.empty() || !wants_grad(ln.get(), gen)) return;
      ensure_grad(ln);
      const double g = on->grad[0] / supervised;
      for (int r = 0; r < rows; ++r) {
        const int target = (*tg)[static_cast<size_t>(r)];
        if (target == kIgnoreId) continue;
        const size_t base = static_cast<size_t>(r) * vocab;
        for (int j = 0; j < vocab; ++j) {
          ln->grad[base + j] += g * ((*probs)[base + j] - (j == target ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  require_rank2(table, "embedding_lookup");
  const int vocab = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  if (n == 0) throw DimensionError("embedding_lookup: empty id list");
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " out of range [0," +
                       std::to_string(vocab) + ")");
    }
  }
  Tensor out = Tensor::zeros({n, d});
  const double* pt = table.data();
  double* po = out.data();
  for (int r = 0; r < n; ++r) {
    const double* src = pt + static_cast<size_t>(ids[static_cast<size_t>(r)]) * d;
    std::copy(src, src + d, po + static_cast<size_t>(r) * d);
  }
  if (recording_for({&table})) {
    NodePtr tn = table.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    auto idv = std::make_shared<std::vector<int>>(ids);
    record("embedding_lookup", {&table}, out, [tn, on, gen, idv, n, d]() {
      if (on->grad.empty() || !wants_grad(tn.get(), gen)) return;
      ensure_grad(tn);
      for (int r = 0; r < n; ++r) {
        double* dst = tn->grad.data() + static_cast<size_t>((*idv)[static_cast<size_t>(r)]) * d;
        const double* src = on->grad.data() + static_cast<size_t>(r) * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int row0, int nrows) {
  require_rank2(x, "slice_rows");
  const int m = x.dim(0), d = x.dim(1);
  if (row0 < 0 || nrows <= 0 || row0 + nrows > m) {
    throw DimensionError("slice_rows: range [" + std::to_string(row0) + "," +
                         std::to_string(row0 + nrows) + ") outside " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros({nrows, d});
  std::copy(x.data() + static_cast<size_t>(row0) * d,
            x.data() + static_cast<size_t>(row0 + nrows) * d, out.data());
  if (recording_for({&x})) {
    NodePtr xn = x.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("slice_rows", {&x}, out, [xn, on, gen, row0, nrows, d]() {
      if (on->grad.empty() || !wants_grad(xn.get(), gen)) return;
      ensure_grad(xn);
      const size_t count = static_cast<size_t>(nrows) * d;
      double* dst = xn->grad.data() + static_cast<size_t>(row0) * d;
      for (size_t i = 0; i < count; ++i) dst[i] += on->grad[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int col0, int ncols) {
  require_rank2(x, "slice_cols");
  const int m = x.dim(0), d = x.dim(1);
  if (col0 < 0 || ncols <= 0 || col0 + ncols > d) {
    throw DimensionError("slice_cols: range [" + std::to_string(col0) + "," +
                         std::to_string(col0 + ncols) + ") outside " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros({m, ncols});
  const double* px = x.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i) {
    std::copy(px + static_cast<size_t>(i) * d + col0, px + static_cast<size_t>(i) * d + col0 + ncols,
              po + static_cast<size_t>(i) * ncols);
  }
  if (recording_for({&x})) {
    NodePtr xn = x.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("slice_cols", {&x}, out, [xn, on, gen, m, d, col0, ncols]() {
      if (on->grad.empty() || !wants_grad(xn.get(), gen)) return;
      ensure_grad(xn);
      for (int i = 0; i < m; ++i) {
        double* dst = xn->grad.data() + static_cast<size_t>(i) * d + col0;
        const double* src = on->grad.data() + static_cast<size_t>(i) * ncols;
        for (int j = 0; j < ncols; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const int d = parts[0].dim(1);
  int total = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.dim(1) != d) {
      throw DimensionError("concat_rows: column mismatch, " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.dim(0);
  }
  Tensor out = Tensor::zeros({total, d});
  double* po = out.data();
  size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), po + offset);
    offset += p.numel();
  }
  bool track = false;
  if (Tape::active().recording()) {
    for (const Tensor& p : parts) track = track || tracks_grad(p);
  }
  if (track) {
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    std::vector<uint64_t> ids;
    for (const Tensor& p : parts) {
      nodes.push_back(p.handle());
      ids.push_back(p.id());
    }
    NodePtr on = out.handle();
    const uint64_t gen = Tape::active().generation();
    mark_on_tape(out);
    Tape::active().record(TapeEntry{"concat_rows", std::move(ids), out.id(), [nodes, on, gen]() {
      if (on->grad.empty()) return;
      size_t offset = 0;
      for (const NodePtr& p : nodes) {
        if (wants_grad(p.get(), gen)) {
          ensure_grad(p);
          for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += on->grad[offset + i];
        }
        offset += p->data.size();
      }
    }});
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const int m = parts[0].dim(0);
  int total = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != m) {
      throw DimensionError("concat_cols: row mismatch, " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({m, total});
  double* po = out.data();
  int col = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i) {
      std::copy(p.data() + static_cast<size_t>(i) * w, p.data() + static_cast<size_t>(i + 1) * w,
                po + static_cast<size_t>(i) * total + col);
    }
    col += w;
  }
  bool track = false;
  if (Tape::active().recording()) {
    for (const Tensor& p : parts) track = track || tracks_grad(p);
  }
  if (track) {
    std::vector<NodePtr> nodes;
    std::vector<uint64_t> ids;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
      nodes.push_back(p.handle());
      ids.push_back(p.id());
      widths.push_back(p.dim(1));
    }
    NodePtr on = out.handle();
    const uint64_t gen = Tape::active().generation();
    mark_on_tape(out);
    Tape::active().record(TapeEntry{"concat_cols", std::move(ids), out.id(),
                                    [nodes, on, gen, m, total, widths]() {
      if (on->grad.empty()) return;
      int col = 0;
      for (size_t pi = 0; pi < nodes.size(); ++pi) {
        const int w = widths[pi];
        const NodePtr& p = nodes[pi];
        if (wants_grad(p.get(), gen)) {
          ensure_grad(p);
          for (int i = 0; i < m; ++i) {
            const double* src = on->grad.data() + static_cast<size_t>(i) * total + col;
            double* dst = p->grad.data() + static_cast<size_t>(i) * w;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        col += w;
      }
    }});
  }
  return out;
}

Tensor interleave_rows(const Tensor& a, const Tensor& b) {
  require_rank2(a, "interleave_rows");
  require_rank2(b, "interleave_rows");
  if (a.shape() != b.shape()) {
    throw DimensionError("interleave_rows: shape mismatch, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const int n = a.dim(0), d = a.dim(1);
  Tensor out = Tensor::zeros({2 * n, d});
  double* po = out.data();
  for (int t = 0; t < n; ++t) {
    std::copy(a.data() + static_cast<size_t>(t) * d, a.data() + static_cast<size_t>(t + 1) * d,
              po + static_cast<size_t>(2 * t) * d);
    std::copy(b.data() + static_cast<size_t>(t) * d, b.data() + static_cast<size_t>(t + 1) * d,
              po + static_cast<size_t>(2 * t + 1) * d);
  }
  if (recording_for({&a, &b})) {
    NodePtr an = a.handle(), bn = b.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("interleave_rows", {&a, &b}, out, [an, bn, on, gen, n, d]() {
      if (on->grad.empty()) return;
      if (wants_grad(an.get(), gen)) {
        ensure_grad(an);
        for (int t = 0; t < n; ++t) {
          const double* src = on->grad.data() + static_cast<size_t>(2 * t) * d;
          double* dst = an->grad.data() + static_cast<size_t>(t) * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
      }
      if (wants_grad(bn.get(), gen)) {
        ensure_grad(bn);
        for (int t = 0; t < n; ++t) {
          const double* src = on->grad.data() + static_cast<size_t>(2 * t + 1) * d;
          double* dst = bn->grad.data() + static_cast<size_t>(t) * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double total = 0.0;
  for (double v : x.vec()) total += v;
  Tensor out = Tensor::from_data({1}, {total});
  finalize(out, "sum_all");
  if (recording_for({&x})) {
    NodePtr xn = x.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("sum_all", {&x}, out, [xn, on, gen]() {
      if (on->grad.empty() || !wants_grad(xn.get(), gen)) return;
      ensure_grad(xn);
      const double g = on->grad[0];
      for (double& gv : xn->grad) gv += g;
    });
  }
  return out;
}

Tensor extract_patches(const Tensor& image, int patch_size) {
  if (image.rank() != 3) {
    throw DimensionError("extract_patches: expected [C,S,S] image, got " + shape_str(image.shape()));
  }
  const int channels = image.dim(0), size = image.dim(1);
  if (image.dim(2) != size || patch_size <= 0 || size % patch_size != 0) {
    throw DimensionError("extract_patches: image " + shape_str(image.shape()) +
                         " not divisible into patches of " + std::to_string(patch_size));
  }
  const int grid = size / patch_size;
  const int patches = grid * grid;
  const int patch_dim = channels * patch_size * patch_size;
  Tensor out = Tensor::zeros({patches, patch_dim});
  const double* src = image.data();
  double* dst = out.data();
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      double* row = dst + static_cast<size_t>(gy * grid + gx) * patch_dim;
      for (int c = 0; c < channels; ++c) {
        for (int py = 0; py < patch_size; ++py) {
          const double* line =
              src + (static_cast<size_t>(c) * size + (gy * patch_size + py)) * size + gx * patch_size;
          std::copy(line, line + patch_size,
                    row + (static_cast<size_t>(c) * patch_size + py) * patch_size);
        }
      }
    }
  }
  if (recording_for({&image})) {
    NodePtr xn = image.handle(), on = out.handle();
    const uint64_t gen = Tape::active().generation();
    record("extract_patches", {&image}, out, [xn, on, gen, channels, size, patch_size, grid,
                                              patch_dim]() {
      if (on->grad.empty() || !wants_grad(xn.get(), gen)) return;
      ensure_grad(xn);
      for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
          const double* row = on->grad.data() + static_cast<size_t>(gy * grid + gx) * patch_dim;
          for (int c = 0; c < channels; ++c) {
            for (int py = 0; py < patch_size; ++py) {
              double* line = xn->grad.data() +
                             (static_cast<size_t>(c) * size + (gy * patch_size + py)) * size +
                             gx * patch_size;
              const double* prow = row + (static_cast<size_t>(c) * patch_size + py) * patch_size;
              for (int px = 0; px < patch_size; ++px) line[px] += prow[px];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                           bool causal) {
  require_rank2(q, "attention");
  require_rank2(k, "attention");
  require_rank2(v, "attention");
  const int d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d) {
    throw DimensionError("attention: width mismatch, q " + shape_str(q.shape()) + " k " +
                         shape_str(k.shape()) + " v " + shape_str(v.shape()));
  }
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: key/value row mismatch, " + shape_str(k.shape()) + " vs " +
                         shape_str(v.shape()));
  }
  if (heads < 1 || d % heads != 0) {
    throw ConfigurationError("attention: dim " + std::to_string(d) + " not divisible by " +
                             std::to_string(heads) + " heads");
  }
  const int nq = q.dim(0), nk = k.dim(0);
  if (causal && nq != nk) {
    throw DimensionError("attention: causal mask requires square scores, got " +
                         std::to_string(nq) + "x" + std::to_string(nk));
  }
  Tensor mask;
  if (causal) {
    mask = Tensor::zeros({nq, nk});
    double* pm = mask.data();
    for (int i = 0; i < nq; ++i) {
      for (int j = i + 1; j < nk; ++j) pm[static_cast<size_t>(i) * nk + j] = kMaskValue;
    }
  }
  const int head_dim = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * head_dim, head_dim);
    Tensor kh = slice_cols(k, h * head_dim, head_dim);
    Tensor vh = slice_cols(v, h * head_dim, head_dim);
    Tensor scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt);
    if (causal) scores = add(scores, mask);
    Tensor weights = softmax_lastdim(scores);
    outputs.push_back(matmul(weights, vh));
  }
  return concat_cols(outputs);
}

double max_abs(const Tensor& t) {
  double mx = 0.0;
  for (double v : t.vec()) mx = std::max(mx, std::abs(v));
  return mx;
}

}  // namespace ftz
