#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "ehrfuse/cache.hpp"
#include "ehrfuse/error.hpp"
#include "ehrfuse/fusion.hpp"
#include "ehrfuse/heads.hpp"
#include "ehrfuse/schema.hpp"

namespace ehrfuse {

/// Fusion encoder plus prediction head.
struct Model {
  FusionConfig config;
  TaskKind task = TaskKind::classification;
  FusionParams fusion;
  HeadParams head;

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    FusionParams::visit(self.fusion, f);
    HeadParams::visit(self.head, f);
  }

  bool operator==(const Model&) const = default;
};

inline std::size_t output_count(TaskKind task, std::size_t num_classes) noexcept {
  return task == TaskKind::classification ? num_classes : 1;
}

/// Head hidden width equals d.
inline Model init_model(const FusionConfig& config, TaskKind task, std::size_t outputs, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  m.config.ffn_dim = config.hidden_dim();
  m.task = task;
  m.fusion = init_fusion_params(m.config, splitmix64(seed));
  m.head = init_head_params(config.dim, config.dim, outputs, splitmix64(seed + 1));
  return m;
}

inline Model zeros_like(const Model& like) {
  Model out = like;
  Model::visit(out, [](const std::string&, Matrix& m) { m.fill(0.0); });
  return out;
}

template <class M>
std::vector<Matrix*> tensor_list(M& params) {
  std::vector<Matrix*> out;
  M::visit(params, [&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

template <class M>
std::vector<const Matrix*> tensor_list(const M& params) {
  std::vector<const Matrix*> out;
  M::visit(params, [&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

inline std::size_t parameter_count(const Model& model) {
  std::size_t n = 0;
  for (const auto* t : tensor_list(model)) n += t->size();
  return n;
}

/// Copies one cache row into an m x d double matrix.
inline Matrix cell_rows(const CellEmbeddingMatrix& cache, std::size_t i) {
  Matrix z(cache.columns, cache.dim);
  const auto src = cache.row(i);
  std::copy(src.begin(), src.end(), z.data.begin());
  return z;
}

inline std::vector<double> predict(const Model& model, const Matrix& z) {
  const auto fused = fusion_forward(model.fusion, model.config, z);
  return head_forward(model.head, fused.patient);
}

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  std::uint64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

template <class M>
AdamState init_adam(const M& params) {
  AdamState s;
  for (const auto* t : tensor_list(params)) {
    s.first.emplace_back(t->rows, t->cols);
    s.second.emplace_back(t->rows, t->cols);
  }
  return s;
}

/// One bias-corrected Adam update; advances state.step first so the update
/// uses t = state.step.
template <class M>
void adam_step(M& params, const M& grads, AdamState& state, const AdamConfig& cfg) {
  auto p = tensor_list(params);
  const auto g = tensor_list(grads);
  if (p.size() != g.size() || p.size() != state.first.size()) throw DataError("adam: state does not match parameters");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto& pm = p[k]->data;
    const auto& gm = g[k]->data;
    auto& m1 = state.first[k].data;
    auto& m2 = state.second[k].data;
    if (pm.size() != gm.size() || pm.size() != m1.size()) throw DataError("adam: tensor shape mismatch");
    for (std::size_t i = 0; i < pm.size(); ++i) {
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * gm[i];
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * gm[i] * gm[i];
      const double mhat = m1[i] / c1;
      const double vhat = m2[i] / c2;
      pm[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// Checkpoint layout, little-endian:
//   "FMDL" | u32 version=1 | u32 dim | u32 layers | u32 heads | u32 ffn_dim |
//   f64 ln_eps | u32 task (0 classification, 1 regression) | u32 outputs |
//   u32 head hidden width | f64 parameters in Model::visit order
//   (cls; per block wq wk wv wo ln1_gamma ln1_beta w1 b1 w2 b2 ln2_gamma
//   ln2_beta; head w_hidden b_hidden w_out b_out), each tensor row-major.
inline constexpr std::array<char, 4> kModelMagic{'F', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

inline std::string encode_model(const Model& model) {
  std::string out(kModelMagic.data(), kModelMagic.size());
  detail::put_le<std::uint32_t>(out, kModelVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.config.dim));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.config.layers));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.config.heads));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.config.hidden_dim()));
  detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(model.config.ln_eps));
  detail::put_le<std::uint32_t>(out, model.task == TaskKind::classification ? 0u : 1u);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.head.outputs()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.head.w_hidden.cols));
  for (const auto* t : tensor_list(model)) {
    for (double v : t->data) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Model decode_model(const std::string& bytes) {
  constexpr std::size_t header = 4 + 4 * 5 + 8 + 4 * 3;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < header || std::memcmp(p, kModelMagic.data(), 4) != 0 ||
      detail::get_le<std::uint32_t>(p + 4) != kModelVersion) {
    throw DataError("incompatible checkpoint: bad magic, version or header");
  }
  FusionConfig cfg;
  cfg.dim = detail::get_le<std::uint32_t>(p + 8);
  cfg.layers = detail::get_le<std::uint32_t>(p + 12);
  cfg.heads = detail::get_le<std::uint32_t>(p + 16);
  cfg.ffn_dim = detail::get_le<std::uint32_t>(p + 20);
  cfg.ln_eps = std::bit_cast<double>(detail::get_le<std::uint64_t>(p + 24));
  const auto task = detail::get_le<std::uint32_t>(p + 32);
  const auto outputs = detail::get_le<std::uint32_t>(p + 36);
  const auto hidden = detail::get_le<std::uint32_t>(p + 40);
  if (task > 1 || outputs == 0 || hidden == 0) throw DataError("corrupt checkpoint: invalid head description");
  cfg.validate();
  Model m;
  m.config = cfg;
  m.task = task == 0 ? TaskKind::classification : TaskKind::regression;
  m.fusion = init_fusion_params(cfg, 0);
  m.head = init_head_params(cfg.dim, hidden, outputs, 0);
  std::size_t count = 0;
  for (const auto* t : tensor_list(m)) count += t->size();
  if (bytes.size() != header + 8 * count) throw DataError("corrupt checkpoint: parameter payload has the wrong length");
  const unsigned char* q = p + header;
  for (auto* t : tensor_list(m)) {
    for (double& v : t->data) {
      v = std::bit_cast<double>(detail::get_le<std::uint64_t>(q));
      q += 8;
    }
  }
  return m;
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
  detail::write_file(path, encode_model(model));
}

inline Model load_model(const std::filesystem::path& path) { return decode_model(detail::read_file(path)); }

}  // namespace ehrfuse
