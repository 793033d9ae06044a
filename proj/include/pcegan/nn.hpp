#pragma once

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcegan/autodiff.hpp"
#include "pcegan/tensor.hpp"

namespace pcegan {

// Named parameter set for a model. Order of registration is the order used
// for lifting onto a tape, gradient accumulation and checkpoint layout.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw std::logic_error("param exists: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(init)});
    return entries_.back().value;
  }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no param: " + name);
    return entries_[it->second].value;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

// Parameters of one model instance lifted onto a tape as leaf vars,
// in registration order.
template <typename T>
std::vector<Var> lift_params(Tape<T>& tape, const ParamStore<T>& params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& e : params.entries()) vars.push_back(tape.constant(e.value));
  return vars;
}

// Pointwise linear layer (a 1x1 graph convolution): y = x W + b,
// optionally followed by batch norm and leaky relu.
template <typename T>
struct LinearSpec {
  size_t w = 0, b = 0;          // indices into the param store order
  size_t gamma = 0, beta = 0;   // batch-norm params, if present
  bool bn = false;
  bool act = false;
  T slope = T(0.2);

  Var apply(Tape<T>& tape, const std::vector<Var>& p, Var x) const {
    Var y = tape.linear(x, p[w], p[b]);
    if (bn) y = tape.batchnorm(y, p[gamma], p[beta]);
    if (act) y = tape.leaky_relu(y, slope);
    return y;
  }
};

// Registers a linear layer's parameters. He-style uniform fan-in init;
// zero_w forces the weight and bias to zero (used for residual-identity
// initialization of final layers).
template <typename T, typename Rng>
LinearSpec<T> make_linear(ParamStore<T>& ps, const std::string& name, int in,
                          int out, Rng& rng, bool bn = false, bool act = false,
                          bool zero_w = false, T slope = T(0.2)) {
  LinearSpec<T> spec;
  T bound = static_cast<T>(std::sqrt(1.0 / std::max(1, in)));
  spec.w = ps.size();
  ps.add(name + ".w", zero_w ? Tensor<T>::zeros(in, out)
                             : uniform_tensor<T>(in, out, bound, rng));
  spec.b = ps.size();
  ps.add(name + ".b", Tensor<T>::zeros(1, out));
  spec.bn = bn;
  spec.act = act;
  spec.slope = slope;
  if (bn) {
    spec.gamma = ps.size();
    ps.add(name + ".gamma", Tensor<T>::full(1, out, T(1)));
    spec.beta = ps.size();
    ps.add(name + ".beta", Tensor<T>::zeros(1, out));
  }
  return spec;
}

// A stack of pointwise linear layers.
template <typename T>
struct MlpSpec {
  std::vector<LinearSpec<T>> layers;

  Var apply(Tape<T>& tape, const std::vector<Var>& p, Var x) const {
    for (const auto& l : layers) x = l.apply(tape, p, x);
    return x;
  }
};

// widths = {in, h1, ..., out}. All layers but the last get an activation;
// bn applies to all but the last as well.
template <typename T, typename Rng>
MlpSpec<T> make_mlp(ParamStore<T>& ps, const std::string& name,
                    const std::vector<int>& widths, Rng& rng, bool bn,
                    bool zero_final, T slope = T(0.2)) {
  if (widths.size() < 2) throw std::invalid_argument("mlp: need >= 2 widths");
  MlpSpec<T> m;
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    bool last = (i + 2 == widths.size());
    m.layers.push_back(make_linear(ps, name + ".l" + std::to_string(i),
                                   widths[i], widths[i + 1], rng, bn && !last,
                                   !last, last && zero_final, slope));
  }
  return m;
}

// Adam with per-parameter state. lr = 0 leaves parameters bit-identical.
template <typename T>
class Adam {
 public:
  Adam(T lr, T beta1 = T(0.5), T beta2 = T(0.9), T eps = T(1e-8))
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads) {
    if (grads.size() != params.size())
      throw std::invalid_argument("adam: gradient count mismatch");
    if (m_.empty()) {
      for (const auto& e : params.entries()) {
        m_.push_back(Tensor<T>::zeros(e.value.rows, e.value.cols));
        v_.push_back(Tensor<T>::zeros(e.value.rows, e.value.cols));
      }
    }
    ++t_;
    T c1 = T(1) - std::pow(b1_, static_cast<T>(t_));
    T c2 = T(1) - std::pow(b2_, static_cast<T>(t_));
    for (size_t i = 0; i < grads.size(); ++i) {
      auto& p = params.entries()[i].value;
      if (!p.same_shape(grads[i])) throw std::invalid_argument("adam: shape mismatch");
      for (size_t j = 0; j < p.size(); ++j) {
        T g = grads[i].v[j];
        m_[i].v[j] = b1_ * m_[i].v[j] + (T(1) - b1_) * g;
        v_[i].v[j] = b2_ * v_[i].v[j] + (T(1) - b2_) * g * g;
        T mh = m_[i].v[j] / c1;
        T vh = v_[i].v[j] / c2;
        p.v[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  long steps() const { return t_; }

 private:
  T lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Evaluates grads of `loss` wrt the lifted params and adds `scale_factor`
// times each into `accum` (plain tensors, outside the tape).
template <typename T>
void accumulate_param_grads(Tape<T>& tape, Var loss,
                            const std::vector<Var>& param_vars,
                            std::vector<Tensor<T>>& accum, T scale_factor) {
  auto gvars = tape.gradients(loss, param_vars);
  if (accum.empty()) {
    for (Var g : gvars)
      accum.push_back(Tensor<T>::zeros(tape.rows(g), tape.cols(g)));
  }
  for (size_t i = 0; i < gvars.size(); ++i) {
    const auto& g = tape.value(gvars[i]);
    for (size_t j = 0; j < g.size(); ++j) accum[i].v[j] += scale_factor * g.v[j];
  }
}

}  // namespace pcegan
