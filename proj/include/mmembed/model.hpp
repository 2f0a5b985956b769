// SPDX-License-Identifier: Apache-2.0
//
// Parameters of the GRU language model and its visual variants, the GRU cell
// and the visual projection.
//
//   r_t = sigmoid(W_r [e_t, h_{t-1}] + b_r)
//   u_t = sigmoid(W_u [e_t, h_{t-1}] + b_u)
//   c_t = tanh(W_c [e_t, r_t * h_{t-1}] + b_c)
//   h_t = u_t * h_{t-1} + (1 - u_t) * c_t
//
// Output logits are U_M (W_d h_t) + b_M. In the shared variants U_M is the
// embedding table U_w itself, so decoding gradients land in the embeddings.
#ifndef MMEMBED_MODEL_HPP_
#define MMEMBED_MODEL_HPP_

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "mmembed/errors.hpp"
#include "mmembed/features.hpp"
#include "mmembed/tensor.hpp"

namespace mmembed {

enum class Variant {
  text,       ///< zero initial state, shared softmax
  a,          ///< visual initial state, shared softmax
  a_noshare,  ///< visual initial state, separate softmax matrix
  b,          ///< final-state regression onto the projected image
  c,          ///< embedding regression onto the projected image
};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::text: return "text";
    case Variant::a: return "a";
    case Variant::a_noshare: return "a-noshare";
    case Variant::b: return "b";
    case Variant::c: return "c";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::text, Variant::a, Variant::a_noshare, Variant::b, Variant::c}) {
    if (to_string(v) == s) return v;
  }
  if (s == "a_noshare") return Variant::a_noshare;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected text, a, a-noshare, b, c)");
}

inline bool shares_softmax(Variant v) { return v == Variant::text || v == Variant::a; }
inline bool uses_visual(Variant v) { return v != Variant::text; }
/// Variants whose GRU starts from the projected image.
inline bool visual_initial_state(Variant v) { return v == Variant::a || v == Variant::a_noshare; }

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t embed = 128;
  std::size_t state = 512;
  std::size_t feature = kDefaultFeatureDim;

  bool operator==(const ModelDims&) const = default;
};

/// Named view of one parameter tensor. Vectors are reported as n x 1.
template <class Real>
struct TensorRef {
  std::string_view name;
  std::size_t rows;
  std::size_t cols;
  std::span<Real> values;
};

/// Every trainable tensor of one model. Also used, zero-filled, as the
/// gradient buffer for the same model: shared variants then accumulate
/// decoder and embedding gradients into one table automatically.
template <class Real>
class ModelParams {
 public:
  ModelParams() = default;

  ModelParams(Variant variant, ModelDims dims) : variant_(variant), dims_(dims) {
    if (dims.vocab == 0 || dims.embed == 0 || dims.state == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (uses_visual(variant) && dims.feature == 0) {
      throw ConfigError("visual variants need a positive feature dimension");
    }
    const std::size_t in = dims.embed + dims.state;
    embedding = Matrix<Real>(dims.vocab, dims.embed);
    if (!shares_softmax(variant)) softmax_own_ = Matrix<Real>(dims.vocab, dims.embed);
    gate_reset = Matrix<Real>(dims.state, in);
    gate_update = Matrix<Real>(dims.state, in);
    gate_candidate = Matrix<Real>(dims.state, in);
    bias_reset.assign(dims.state, Real{0});
    bias_update.assign(dims.state, Real{0});
    bias_candidate.assign(dims.state, Real{0});
    decode = Matrix<Real>(dims.embed, dims.state);
    softmax_bias.assign(dims.vocab, Real{0});
    if (uses_visual(variant)) {
      const std::size_t out = variant == Variant::c ? dims.embed : dims.state;
      visual = Matrix<Real>(out, dims.feature);
      visual_bias.assign(out, Real{0});
    }
  }

  /// Same shapes, all zeros.
  ModelParams zeros_like() const { return ModelParams(variant_, dims_); }

  Variant variant() const noexcept { return variant_; }
  const ModelDims& dims() const noexcept { return dims_; }
  bool shared() const noexcept { return shares_softmax(variant_); }

  /// U_M. Aliases `embedding` in the shared variants.
  Matrix<Real>& softmax_weights() noexcept { return shared() ? embedding : softmax_own_; }
  const Matrix<Real>& softmax_weights() const noexcept {
    return shared() ? embedding : softmax_own_;
  }

  template <class F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }

  template <class F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const TensorRef<const Real>& t) { n += t.values.size(); });
    return n;
  }

  Matrix<Real> embedding;
  Matrix<Real> gate_reset;
  Matrix<Real> gate_update;
  Matrix<Real> gate_candidate;
  std::vector<Real> bias_reset;
  std::vector<Real> bias_update;
  std::vector<Real> bias_candidate;
  Matrix<Real> decode;
  std::vector<Real> softmax_bias;
  Matrix<Real> visual;
  std::vector<Real> visual_bias;

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    using R = std::conditional_t<std::is_const_v<Self>, const Real, Real>;
    auto mat = [&](std::string_view name, auto& m) {
      f(TensorRef<R>{name, m.rows(), m.cols(), m.values()});
    };
    auto vec = [&](std::string_view name, auto& v) {
      f(TensorRef<R>{name, v.size(), 1, std::span<R>(v)});
    };
    mat("embedding", self.embedding);
    if (!self.shared()) mat("softmax", self.softmax_own_);
    mat("gate_reset", self.gate_reset);
    mat("gate_update", self.gate_update);
    mat("gate_candidate", self.gate_candidate);
    vec("bias_reset", self.bias_reset);
    vec("bias_update", self.bias_update);
    vec("bias_candidate", self.bias_candidate);
    mat("decode", self.decode);
    vec("softmax_bias", self.softmax_bias);
    if (uses_visual(self.variant_)) {
      mat("visual", self.visual);
      vec("visual_bias", self.visual_bias);
    }
  }

  Variant variant_ = Variant::text;
  ModelDims dims_;
  Matrix<Real> softmax_own_;
};

/// Forward values of one GRU step, kept for the backward pass.
template <class Real>
struct GruCache {
  std::vector<Real> gate_input;       // [e_t, h_{t-1}]
  std::vector<Real> candidate_input;  // [e_t, r_t * h_{t-1}]
  std::vector<Real> h_prev;
  std::vector<Real> reset;
  std::vector<Real> update;
  std::vector<Real> candidate;
  std::vector<Real> h;
};

template <class Real>
GruCache<Real> gru_step(const ModelParams<Real>& p, std::span<const Real> e,
                        std::span<const Real> h_prev) {
  const std::size_t de = p.dims().embed;
  const std::size_t dh = p.dims().state;
  detail::require_shape(e.size() == de, "gru_step embedding", e.size(), de);
  detail::require_shape(h_prev.size() == dh, "gru_step state", h_prev.size(), dh);

  GruCache<Real> c;
  c.h_prev.assign(h_prev.begin(), h_prev.end());
  c.gate_input = concat<Real>(e, h_prev);
  c.reset = affine_forward<Real>(p.gate_reset, c.gate_input, p.bias_reset);
  c.update = affine_forward<Real>(p.gate_update, c.gate_input, p.bias_update);
  for (auto& v : c.reset) v = sigmoid(v);
  for (auto& v : c.update) v = sigmoid(v);

  c.candidate_input.assign(e.begin(), e.end());
  for (std::size_t i = 0; i < dh; ++i) c.candidate_input.push_back(c.reset[i] * h_prev[i]);
  c.candidate = affine_forward<Real>(p.gate_candidate, c.candidate_input, p.bias_candidate);
  for (auto& v : c.candidate) v = std::tanh(v);

  c.h.resize(dh);
  for (std::size_t i = 0; i < dh; ++i) {
    c.h[i] = c.update[i] * h_prev[i] + (Real{1} - c.update[i]) * c.candidate[i];
  }
  return c;
}

/// Backpropagates dL/dh_t through one step. Accumulates into the gate
/// gradients of `grads`, into `d_embed` (size d_e) and `d_h_prev` (size d_h).
template <class Real>
void gru_step_backward(const ModelParams<Real>& p, const GruCache<Real>& c,
                       std::span<const Real> dh, ModelParams<Real>& grads,
                       std::span<Real> d_embed, std::span<Real> d_h_prev) {
  const std::size_t de = p.dims().embed;
  const std::size_t ds = p.dims().state;
  detail::require_shape(dh.size() == ds, "gru_step_backward", dh.size(), ds);
  detail::require_shape(d_embed.size() == de, "gru_step_backward", d_embed.size(), de);
  detail::require_shape(d_h_prev.size() == ds, "gru_step_backward", d_h_prev.size(), ds);

  std::vector<Real> dz_update(ds), dz_candidate(ds);
  for (std::size_t i = 0; i < ds; ++i) {
    const Real du = dh[i] * (c.h_prev[i] - c.candidate[i]);
    const Real dc = dh[i] * (Real{1} - c.update[i]);
    d_h_prev[i] += dh[i] * c.update[i];
    dz_update[i] = du * c.update[i] * (Real{1} - c.update[i]);
    dz_candidate[i] = dc * (Real{1} - c.candidate[i] * c.candidate[i]);
  }

  std::vector<Real> d_cand_in(de + ds, Real{0});
  affine_backward<Real>(p.gate_candidate, c.candidate_input, dz_candidate, grads.gate_candidate,
                        grads.bias_candidate, d_cand_in);
  std::vector<Real> dz_reset(ds);
  for (std::size_t i = 0; i < ds; ++i) {
    const Real d_rh = d_cand_in[de + i];
    d_h_prev[i] += d_rh * c.reset[i];
    const Real dr = d_rh * c.h_prev[i];
    dz_reset[i] = dr * c.reset[i] * (Real{1} - c.reset[i]);
  }
  for (std::size_t i = 0; i < de; ++i) d_embed[i] += d_cand_in[i];

  std::vector<Real> d_gate_in(de + ds, Real{0});
  affine_backward<Real>(p.gate_update, c.gate_input, dz_update, grads.gate_update,
                        grads.bias_update, d_gate_in);
  affine_backward<Real>(p.gate_reset, c.gate_input, dz_reset, grads.gate_reset, grads.bias_reset,
                        d_gate_in);
  for (std::size_t i = 0; i < de; ++i) d_embed[i] += d_gate_in[i];
  for (std::size_t i = 0; i < ds; ++i) d_h_prev[i] += d_gate_in[de + i];
}

/// ReLU(W_I f + b_I): the image mapped into state space (A, A-noshare, B)
/// or embedding space (C).
template <class Real>
std::vector<Real> visual_projection(const ModelParams<Real>& p, const VisualFeature& f) {
  if (!uses_visual(p.variant())) throw ContractViolation("pure-text model has no visual projection");
  detail::require_shape(f.dim() == p.visual.cols(), "visual_projection", f.dim(), p.visual.cols());
  std::vector<Real> out(p.visual_bias.begin(), p.visual_bias.end());
  for (std::size_t r = 0; r < p.visual.rows(); ++r) {
    const auto w = p.visual.row(r);
    Real s{0};
    for (std::size_t j = 0; j < f.dim(); ++j) {
      if (f.bits[j]) s += w[j];
    }
    out[r] = relu(out[r] + s);
  }
  return out;
}

/// Backward of visual_projection given dL/d(output) and the forward output.
template <class Real>
void visual_projection_backward(const VisualFeature& f, std::span<const Real> projected,
                                std::span<const Real> d_out, ModelParams<Real>& grads) {
  for (std::size_t r = 0; r < projected.size(); ++r) {
    if (!(projected[r] > Real{0})) continue;
    const Real g = d_out[r];
    grads.visual_bias[r] += g;
    auto dw = grads.visual.row(r);
    for (std::size_t j = 0; j < f.dim(); ++j) {
      if (f.bits[j]) dw[j] += g;
    }
  }
}

/// Initial GRU state for a given image: the projected image for variants
/// A/A-noshare/B, zeros for the pure-text model.
template <class Real>
std::vector<Real> visual_init(const ModelParams<Real>& p, const VisualFeature* f) {
  if (p.variant() == Variant::text) return std::vector<Real>(p.dims().state, Real{0});
  if (p.variant() == Variant::c) {
    throw ContractViolation("variant c projects into embedding space, not state space");
  }
  if (f == nullptr) throw DataError("visual_init: missing visual feature");
  return visual_projection(p, *f);
}

}  // namespace mmembed

#endif  // MMEMBED_MODEL_HPP_
