#pragma once

#include <vector>

#include "ftz/tensor.hpp"

namespace ftz {

// Label value meaning "no supervision at this position".
inline constexpr int kIgnoreId = -1;

// ---- differentiable kernels -------------------------------------------

// Standard matrix product, a:[m,k] x b:[k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose2d(const Tensor& x);

// Elementwise, equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

// x:[..., d] + b:[d], broadcast over leading axes.
Tensor add_rowvec(const Tensor& x, const Tensor& b);

// Numerically stable (max-subtracted) softmax over the last axis.
Tensor softmax_lastdim(const Tensor& x);

// Per-slice normalization over the last axis, then affine with gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Exact-erf GELU, x * Phi(x).
Tensor gelu(const Tensor& x);

// Mean negative log-softmax over positions whose target is not kIgnoreId.
// logits:[T,V], targets.size() == T. When every position is ignored the
// result is a 0-valued scalar and *all_ignored (if given) is set.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                            bool* all_ignored = nullptr);

// Row gather from table:[V,d]; gradient scatters back into the table.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

Tensor slice_rows(const Tensor& x, int row0, int nrows);
Tensor slice_cols(const Tensor& x, int col0, int ncols);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// [2N,d] with rows alternating a_t, b_t. Shapes must match exactly.
Tensor interleave_rows(const Tensor& a, const Tensor& b);

// Full reduction to a scalar.
Tensor sum_all(const Tensor& x);

// Rearranges an image [C,S,S] into [P, C*p*p] patch rows, grid row-major,
// each patch flattened channel-major.
Tensor extract_patches(const Tensor& image, int patch_size);

// Composite scaled-dot-product attention: q:[Nq,d], k,v:[Nk,d], d divisible
// by heads. Per head softmax(q k^T / sqrt(d/heads)) v, heads concatenated.
// causal masks key j > query i (requires Nq == Nk).
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           int heads, bool causal = false);

// ---- non-differentiating helpers --------------------------------------

double max_abs(const Tensor& t);

}  // namespace ftz
