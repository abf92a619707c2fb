#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ehrfuse/dataset.hpp"
#include "ehrfuse/error.hpp"
#include "ehrfuse/fusion.hpp"
#include "ehrfuse/matrix.hpp"
#include "ehrfuse/random.hpp"

namespace ehrfuse {

inline constexpr double kProbabilityFloor = 1e-12;

/// One-hidden-layer feed-forward head: ReLU(e W_h + b_h) W_o + b_o.
struct HeadParams {
  Matrix w_hidden, b_hidden;  // d x d_h, 1 x d_h
  Matrix w_out, b_out;        // d_h x outputs, 1 x outputs

  std::size_t outputs() const noexcept { return w_out.cols; }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("head.w_hidden"), self.w_hidden);
    f(std::string("head.b_hidden"), self.b_hidden);
    f(std::string("head.w_out"), self.w_out);
    f(std::string("head.b_out"), self.b_out);
  }

  bool operator==(const HeadParams&) const = default;
};

inline HeadParams init_head_params(std::size_t dim, std::size_t hidden, std::size_t outputs, std::uint64_t seed) {
  Rng rng(seed);
  HeadParams h;
  h.w_hidden = Matrix(dim, hidden);
  glorot_fill(h.w_hidden, dim, hidden, rng);
  h.b_hidden = Matrix(1, hidden);
  h.w_out = Matrix(hidden, outputs);
  glorot_fill(h.w_out, hidden, outputs, rng);
  h.b_out = Matrix(1, outputs);
  return h;
}

inline HeadParams zeros_like(const HeadParams& like) {
  HeadParams out = like;
  HeadParams::visit(out, [](const std::string&, Matrix& m) { m.fill(0.0); });
  return out;
}

struct HeadTrace {
  std::vector<double> input;
  std::vector<double> hidden_pre;
};

inline std::vector<double> head_forward(const HeadParams& head, std::span<const double> e, HeadTrace* trace = nullptr) {
  if (e.size() != head.w_hidden.rows) throw DataError("head input width does not match head parameters");
  const std::size_t dh = head.w_hidden.cols;
  std::vector<double> pre(head.b_hidden.data);
  for (std::size_t k = 0; k < e.size(); ++k) {
    const auto wrow = head.w_hidden.row(k);
    for (std::size_t c = 0; c < dh; ++c) pre[c] += e[k] * wrow[c];
  }
  std::vector<double> out(head.b_out.data);
  for (std::size_t c = 0; c < dh; ++c) {
    const double h = std::max(0.0, pre[c]);
    if (h == 0.0) continue;
    const auto wrow = head.w_out.row(c);
    for (std::size_t o = 0; o < out.size(); ++o) out[o] += h * wrow[o];
  }
  if (trace != nullptr) {
    trace->input.assign(e.begin(), e.end());
    trace->hidden_pre = std::move(pre);
  }
  return out;
}

/// Classification logits.
inline std::vector<double> classify(const HeadParams& head, std::span<const double> patient) {
  return head_forward(head, patient);
}

inline double regress(const HeadParams& head, std::span<const double> patient) {
  if (head.outputs() != 1) throw DataError("regression head must have exactly one output");
  return head_forward(head, patient).front();
}

/// Adds parameter gradients into `grads`, returns dL/de.
inline std::vector<double> head_backward(const HeadParams& head, const HeadTrace& trace,
                                         std::span<const double> grad_output, HeadParams& grads) {
  const std::size_t d = head.w_hidden.rows;
  const std::size_t dh = head.w_hidden.cols;
  std::vector<double> d_pre(dh, 0.0);
  for (std::size_t c = 0; c < dh; ++c) {
    const double h = std::max(0.0, trace.hidden_pre[c]);
    const auto wrow = head.w_out.row(c);
    auto grow = grads.w_out.row(c);
    double s = 0.0;
    for (std::size_t o = 0; o < grad_output.size(); ++o) {
      grow[o] += h * grad_output[o];
      s += wrow[o] * grad_output[o];
    }
    d_pre[c] = trace.hidden_pre[c] > 0.0 ? s : 0.0;
  }
  for (std::size_t o = 0; o < grad_output.size(); ++o) grads.b_out.data[o] += grad_output[o];
  std::vector<double> d_in(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const auto wrow = head.w_hidden.row(k);
    auto grow = grads.w_hidden.row(k);
    double s = 0.0;
    for (std::size_t c = 0; c < dh; ++c) {
      grow[c] += trace.input[k] * d_pre[c];
      s += wrow[c] * d_pre[c];
    }
    d_in[k] = s;
  }
  for (std::size_t c = 0; c < dh; ++c) grads.b_hidden.data[c] += d_pre[c];
  return d_in;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw DataError("softmax needs at least two logits");
  std::vector<double> p(logits.begin(), logits.end());
  softmax_inplace(p);
  return p;
}

struct LossValue {
  double value = 0.0;
  std::vector<double> per_sample;
};

/// -(1/N) sum_i w_{y_i} log p_i[y_i], with probabilities floored at 1e-12.
inline LossValue weighted_cross_entropy(const std::vector<std::vector<double>>& probs,
                                        const std::vector<std::size_t>& labels, const ClassWeights& weights) {
  if (probs.size() != labels.size()) throw DataError("cross entropy: probabilities and labels differ in length");
  if (probs.empty()) throw DataError("cross entropy needs at least one sample");
  LossValue out;
  out.per_sample.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto y = labels[i];
    if (y >= probs[i].size() || y >= weights.w.size()) throw DataError("cross entropy: label out of range");
    const double c = -weights.w[y] * std::log(std::max(probs[i][y], kProbabilityFloor));
    out.per_sample.push_back(c);
    out.value += c;
  }
  out.value /= static_cast<double>(probs.size());
  return out;
}

/// Gradient of w_y * -log softmax(logits)[y] with respect to the logits,
/// scaled by `scale`. Zero on the clamped branch.
inline std::vector<double> cross_entropy_logit_grad(std::span<const double> probs, std::size_t label, double weight,
                                                    double scale) {
  std::vector<double> g(probs.size(), 0.0);
  if (probs[label] < kProbabilityFloor) return g;
  for (std::size_t k = 0; k < probs.size(); ++k) g[k] = weight * scale * (probs[k] - (k == label ? 1.0 : 0.0));
  return g;
}

inline LossValue mse_loss(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw DataError("mse: predictions and targets differ in length");
  if (preds.empty()) throw DataError("mse needs at least one sample");
  LossValue out;
  out.per_sample.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = targets[i] - preds[i];
    out.per_sample.push_back(e * e);
    out.value += e * e;
  }
  out.value /= static_cast<double>(preds.size());
  return out;
}

}  // namespace ehrfuse
