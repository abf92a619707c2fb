#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ehrfuse/error.hpp"
#include "ehrfuse/matrix.hpp"
#include "ehrfuse/random.hpp"

namespace ehrfuse {

struct FusionConfig {
  std::size_t dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ffn_dim = 0;  // 0 selects 4 * dim
  double ln_eps = 1e-5;

  std::size_t head_dim() const noexcept { return dim / heads; }
  std::size_t hidden_dim() const noexcept { return ffn_dim == 0 ? 4 * dim : ffn_dim; }

  void validate() const {
    if (dim < 2) throw ConfigError("fusion.dim must be >= 2");
    if (layers < 1) throw ConfigError("fusion.layers must be >= 1");
    if (heads < 1 || dim % heads != 0) {
      throw ConfigError("fusion.heads must divide fusion.dim (" + std::to_string(dim) + " % " + std::to_string(heads) + ")");
    }
    if (!(ln_eps > 0.0)) throw ConfigError("fusion.ln_eps must be positive");
  }

  bool operator==(const FusionConfig&) const = default;
};

/// One encoder block. The per-head projections W_{h,q}, W_{h,k}, W_{h,v}
/// (d x d_k each) are stored side by side: head h owns columns
/// [h*d_k, (h+1)*d_k) of wq, wk and wv.
struct BlockParams {
  Matrix wq, wk, wv;    // d x H*d_k
  Matrix wo;            // H*d_k x d
  Matrix ln1_gamma, ln1_beta;
  Matrix w1, b1;        // d x d_ff, 1 x d_ff
  Matrix w2, b2;        // d_ff x d, 1 x d
  Matrix ln2_gamma, ln2_beta;

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "wq", self.wq);
    f(prefix + "wk", self.wk);
    f(prefix + "wv", self.wv);
    f(prefix + "wo", self.wo);
    f(prefix + "ln1_gamma", self.ln1_gamma);
    f(prefix + "ln1_beta", self.ln1_beta);
    f(prefix + "w1", self.w1);
    f(prefix + "b1", self.b1);
    f(prefix + "w2", self.w2);
    f(prefix + "b2", self.b2);
    f(prefix + "ln2_gamma", self.ln2_gamma);
    f(prefix + "ln2_beta", self.ln2_beta);
  }

  bool operator==(const BlockParams&) const = default;
};

struct FusionParams {
  Matrix cls;  // 1 x d
  std::vector<BlockParams> blocks;

  /// Visits every tensor in checkpoint order: cls, then each block.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("cls"), self.cls);
    for (std::size_t l = 0; l < self.blocks.size(); ++l) {
      BlockParams::visit(self.blocks[l], "block" + std::to_string(l) + ".", f);
    }
  }

  bool operator==(const FusionParams&) const = default;
};

/// Same shapes as `like`, all zeros.
inline FusionParams zeros_like(const FusionParams& like) {
  FusionParams out = like;
  FusionParams::visit(out, [](const std::string&, Matrix& m) { m.fill(0.0); });
  return out;
}

inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline void glorot_fill(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = glorot_bound(fan_in, fan_out);
  for (double& v : m.data) v = rng.uniform(-bound, bound);
}

/// Glorot-uniform weights (query/key/value bounds use the per-head d x d_k
/// shape), zero biases and betas, unit gammas, cls ~ N(0, 0.02^2).
inline FusionParams init_fusion_params(const FusionConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.dim;
  const std::size_t dk = config.head_dim();
  const std::size_t dff = config.hidden_dim();
  Rng rng(seed);
  FusionParams p;
  p.cls = Matrix(1, d);
  for (double& v : p.cls.data) v = rng.normal(0.0, 0.02);
  p.blocks.resize(config.layers);
  for (auto& b : p.blocks) {
    b.wq = Matrix(d, d);
    b.wk = Matrix(d, d);
    b.wv = Matrix(d, d);
    glorot_fill(b.wq, d, dk, rng);
    glorot_fill(b.wk, d, dk, rng);
    glorot_fill(b.wv, d, dk, rng);
    b.wo = Matrix(d, d);
    glorot_fill(b.wo, d, d, rng);
    b.ln1_gamma = Matrix(1, d, 1.0);
    b.ln1_beta = Matrix(1, d, 0.0);
    b.w1 = Matrix(d, dff);
    glorot_fill(b.w1, d, dff, rng);
    b.b1 = Matrix(1, dff, 0.0);
    b.w2 = Matrix(dff, d);
    glorot_fill(b.w2, dff, d, rng);
    b.b2 = Matrix(1, d, 0.0);
    b.ln2_gamma = Matrix(1, d, 1.0);
    b.ln2_beta = Matrix(1, d, 0.0);
  }
  return p;
}

/// Row-max-shifted softmax, in place.
inline void softmax_inplace(std::span<double> row) noexcept {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

/// Layer normalization of one vector with the population variance.
inline std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                                      std::span<const double> beta, double eps) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv_std = 1.0 / std::sqrt(var + eps);
  std::vector<double> y(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) y[c] = gamma[c] * (x[c] - mean) * inv_std + beta[c];
  return y;
}

struct LayerNormTrace {
  Matrix xhat;
  std::vector<double> inv_std;
};

inline Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps,
                              LayerNormTrace& trace) {
  const std::size_t d = x.cols;
  Matrix y(x.rows, d);
  trace.xhat = Matrix(x.rows, d);
  trace.inv_std.assign(x.rows, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    trace.inv_std[r] = inv_std;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (xr[c] - mean) * inv_std;
      trace.xhat(r, c) = xh;
      y(r, c) = gamma.data[c] * xh + beta.data[c];
    }
  }
  return y;
}

/// Given dL/dy, accumulates dgamma/dbeta and returns dL/dx.
inline Matrix layer_norm_rows_backward(const Matrix& dy, const Matrix& gamma, const LayerNormTrace& trace,
                                       Matrix& dgamma, Matrix& dbeta) {
  const std::size_t d = dy.cols;
  const double inv_d = 1.0 / static_cast<double>(d);
  Matrix dx(dy.rows, d);
  std::vector<double> g(d);
  for (std::size_t r = 0; r < dy.rows; ++r) {
    double mean_g = 0.0;
    double mean_gx = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = trace.xhat(r, c);
      dgamma.data[c] += dy(r, c) * xh;
      dbeta.data[c] += dy(r, c);
      g[c] = dy(r, c) * gamma.data[c];
      mean_g += g[c];
      mean_gx += g[c] * xh;
    }
    mean_g *= inv_d;
    mean_gx *= inv_d;
    for (std::size_t c = 0; c < d; ++c) {
      dx(r, c) = trace.inv_std[r] * (g[c] - mean_g - trace.xhat(r, c) * mean_gx);
    }
  }
  return dx;
}

struct AttentionTrace {
  Matrix q, k, v;
  std::vector<Matrix> probs;  // one (n x n) matrix per head
  Matrix heads;               // concatenated head outputs, n x H*d_k
};

/// Multi-head self-attention: head_h = softmax(Q_h K_h^T / sqrt(d_k)) V_h,
/// output = Concat(head_1..head_H) W_o. No positional information is added.
inline Matrix multi_head_attention(const Matrix& g, const BlockParams& block, std::size_t num_heads,
                                   AttentionTrace& trace) {
  if (!g.all_finite()) throw NumericalError("multi-head attention received a non-finite input");
  const std::size_t n = g.rows;
  const std::size_t dk = block.wq.cols / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  matmul(g, block.wq, trace.q);
  matmul(g, block.wk, trace.k);
  matmul(g, block.wv, trace.v);
  trace.probs.assign(num_heads, Matrix(n, n));
  trace.heads = Matrix(n, block.wq.cols);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t off = h * dk;
    Matrix& p = trace.probs[h];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += trace.q(i, off + c) * trace.k(j, off + c);
        p(i, j) = s * scale;
      }
      softmax_inplace(p.row(i));
      for (std::size_t j = 0; j < n; ++j) {
        const double pij = p(i, j);
        for (std::size_t c = 0; c < dk; ++c) trace.heads(i, off + c) += pij * trace.v(j, off + c);
      }
    }
  }
  return matmul(trace.heads, block.wo);
}

inline Matrix multi_head_attention(const Matrix& g, const BlockParams& block, std::size_t num_heads) {
  AttentionTrace trace;
  return multi_head_attention(g, block, num_heads, trace);
}

struct BlockTrace {
  Matrix input;  // g
  AttentionTrace attention;
  Matrix attended;  // u
  LayerNormTrace ln1;
  Matrix normed;  // r
  Matrix hidden_pre;
  Matrix hidden;  // ReLU(r W1 + b1)
  LayerNormTrace ln2;
  Matrix output;  // o
};

struct ForwardTrace {
  std::vector<BlockTrace> blocks;
};

struct FusionOutput {
  std::vector<double> patient;  // output row of the [CLS] position
  ForwardTrace trace;
};

/// z holds one row per cell (m x d). The learned [CLS] row is prepended.
inline FusionOutput fusion_forward(const FusionParams& params, const FusionConfig& config, const Matrix& z) {
  if (z.rows == 0) throw DataError("fusion forward needs at least one cell embedding");
  if (z.cols != config.dim) throw DataError("cell embedding width does not match fusion.dim");
  if (!z.all_finite()) throw NumericalError("fusion forward received non-finite cell embeddings");
  const std::size_t n = z.rows + 1;
  const std::size_t d = config.dim;
  FusionOutput out;
  out.trace.blocks.resize(params.blocks.size());
  Matrix g(n, d);
  std::copy(params.cls.data.begin(), params.cls.data.end(), g.data.begin());
  std::copy(z.data.begin(), z.data.end(), g.data.begin() + static_cast<std::ptrdiff_t>(d));
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const BlockParams& b = params.blocks[l];
    BlockTrace& t = out.trace.blocks[l];
    t.input = std::move(g);
    t.attended = multi_head_attention(t.input, b, config.heads, t.attention);
    Matrix res1 = t.attended;
    add_inplace(res1, t.input);
    t.normed = layer_norm_rows(res1, b.ln1_gamma, b.ln1_beta, config.ln_eps, t.ln1);
    matmul(t.normed, b.w1, t.hidden_pre);
    t.hidden = t.hidden_pre;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < t.hidden.cols; ++c) {
        t.hidden_pre(r, c) += b.b1.data[c];
        t.hidden(r, c) = std::max(0.0, t.hidden_pre(r, c));
      }
    }
    Matrix res2 = matmul(t.hidden, b.w2);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) res2(r, c) += b.b2.data[c] + t.normed(r, c);
    }
    t.output = layer_norm_rows(res2, b.ln2_gamma, b.ln2_beta, config.ln_eps, t.ln2);
    if (!t.output.all_finite()) throw NumericalError("non-finite activation in fusion block " + std::to_string(l));
    g = t.output;
  }
  out.patient.assign(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(d));
  return out;
}

/// Reverse pass for d(patient . grad_out). Parameter gradients are added into
/// `grads`; the gradient with respect to z is written to *grad_input if given.
inline void fusion_backward(const FusionParams& params, const FusionConfig& config, const ForwardTrace& trace,
                            std::span<const double> grad_out, FusionParams& grads, Matrix* grad_input = nullptr) {
  if (trace.blocks.size() != params.blocks.size() || grads.blocks.size() != params.blocks.size()) {
    throw DataError("fusion backward: trace/gradient block count does not match parameters");
  }
  if (grad_out.size() != config.dim) throw DataError("fusion backward: grad_out has the wrong length");
  const std::size_t n = trace.blocks.front().input.rows;
  const std::size_t d = config.dim;
  const std::size_t dk = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix d_out(n, d);
  std::copy(grad_out.begin(), grad_out.end(), d_out.data.begin());

  for (std::size_t l = params.blocks.size(); l-- > 0;) {
    const BlockParams& b = params.blocks[l];
    BlockParams& gb = grads.blocks[l];
    const BlockTrace& t = trace.blocks[l];

    // o = LN2(hidden W2 + b2 + r)
    Matrix d_res2 = layer_norm_rows_backward(d_out, b.ln2_gamma, t.ln2, gb.ln2_gamma, gb.ln2_beta);
    add_matmul_at_b(t.hidden, d_res2, gb.w2);
    add_column_sums(d_res2, gb.b2);
    Matrix d_hidden(n, b.w2.rows);
    add_matmul_a_bt(d_res2, b.w2, d_hidden);
    for (std::size_t i = 0; i < d_hidden.size(); ++i) {
      if (t.hidden_pre.data[i] <= 0.0) d_hidden.data[i] = 0.0;
    }
    add_matmul_at_b(t.normed, d_hidden, gb.w1);
    add_column_sums(d_hidden, gb.b1);
    Matrix d_normed = d_res2;
    add_matmul_a_bt(d_hidden, b.w1, d_normed);

    // r = LN1(u + g)
    Matrix d_res1 = layer_norm_rows_backward(d_normed, b.ln1_gamma, t.ln1, gb.ln1_gamma, gb.ln1_beta);
    Matrix d_input = d_res1;  // residual path

    // u = heads W_o
    const AttentionTrace& a = t.attention;
    add_matmul_at_b(a.heads, d_res1, gb.wo);
    Matrix d_heads(n, b.wo.rows);
    add_matmul_a_bt(d_res1, b.wo, d_heads);

    Matrix dq(n, d), dk_mat(n, d), dv(n, d);
    std::vector<double> dp(n);
    for (std::size_t h = 0; h < config.heads; ++h) {
      const std::size_t off = h * dk;
      const Matrix& p = a.probs[h];
      for (std::size_t i = 0; i < n; ++i) {
        // dP_ij = dHead_i . V_j ; dV_j += P_ij dHead_i
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dk; ++c) {
            s += d_heads(i, off + c) * a.v(j, off + c);
            dv(j, off + c) += p(i, j) * d_heads(i, off + c);
          }
          dp[j] = s;
          dot += s * p(i, j);
        }
        // softmax Jacobian, then the 1/sqrt(d_k) scale
        for (std::size_t j = 0; j < n; ++j) {
          const double ds = p(i, j) * (dp[j] - dot) * scale;
          if (ds == 0.0) continue;
          for (std::size_t c = 0; c < dk; ++c) {
            dq(i, off + c) += ds * a.k(j, off + c);
            dk_mat(j, off + c) += ds * a.q(i, off + c);
          }
        }
      }
    }
    add_matmul_at_b(t.input, dq, gb.wq);
    add_matmul_at_b(t.input, dk_mat, gb.wk);
    add_matmul_at_b(t.input, dv, gb.wv);
    add_matmul_a_bt(dq, b.wq, d_input);
    add_matmul_a_bt(dk_mat, b.wk, d_input);
    add_matmul_a_bt(dv, b.wv, d_input);
    d_out = std::move(d_input);
  }

  for (std::size_t c = 0; c < d; ++c) grads.cls.data[c] += d_out(0, c);
  if (grad_input != nullptr) {
    *grad_input = Matrix(n - 1, d);
    std::copy(d_out.data.begin() + static_cast<std::ptrdiff_t>(d), d_out.data.end(), grad_input->data.begin());
  }
}

}  // namespace ehrfuse
