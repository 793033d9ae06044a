#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "pcegan/autodiff.hpp"
#include "pcegan/generator.hpp"
#include "pcegan/nn.hpp"

namespace pcegan {

// WGAN-GP critic: unbounded patch realism score over an attribute channel.
// Geometry enters only through the neighborhood graphs. No batch norm, no
// sigmoid; the score must stay differentiable for the gradient penalty.

struct CriticConfig {
  int k = 20;
  int w1 = 64;
  int w2 = 128;
  int mlp_hidden = 64;
  double slope = 0.2;

  std::map<std::string, std::string> to_meta() const {
    return {{"k", std::to_string(k)},
            {"w1", std::to_string(w1)},
            {"w2", std::to_string(w2)},
            {"mlp_hidden", std::to_string(mlp_hidden)},
            {"slope", std::to_string(slope)}};
  }

  static CriticConfig from_meta(const std::map<std::string, std::string>& m) {
    CriticConfig c;
    auto geti = [&](const char* key, int& out) {
      auto it = m.find(key);
      if (it != m.end()) out = std::stoi(it->second);
    };
    geti("k", c.k);
    geti("w1", c.w1);
    geti("w2", c.w2);
    geti("mlp_hidden", c.mlp_hidden);
    auto it = m.find("slope");
    if (it != m.end()) c.slope = std::stod(it->second);
    return c;
  }
};

template <typename T>
class CriticModel {
 public:
  CriticConfig cfg;
  ParamStore<T> params;

  explicit CriticModel(const CriticConfig& config, uint64_t init_seed = 2)
      : cfg(config) {
    std::mt19937_64 rng(init_seed);
    const T s = static_cast<T>(cfg.slope);
    stage1_ = make_linear<T>(params, "stage1", 2, cfg.w1, rng, false, true, false, s);
    stage2_ = make_linear<T>(params, "stage2", 2 * cfg.w1, cfg.w2, rng, false, true, false, s);
    attn_score_ = make_linear<T>(params, "attn.score", cfg.w2, 1, rng, false, false, false, s);
    attn_mix_ = make_linear<T>(params, "attn.mix", 2 * cfg.w2, cfg.w2, rng, false, true, false, s);
    head_ = make_mlp<T>(params, "head", {cfg.w2, cfg.mlp_hidden, cfg.mlp_hidden / 2, 1},
                        rng, false, false, s);
  }

  // attr: n x 1 attribute var (a leaf when input gradients are needed).
  // Returns a 1 x 1 score var.
  Var forward(Tape<T>& tape, const std::vector<Var>& p,
              const PatchContext<T>& ctx, Var attr) const {
    if (tape.rows(attr) < cfg.k)
      throw std::invalid_argument("critic: need n >= k points");
    const int n = ctx.n;
    Var e1 = dgc(tape, attr, ctx.knn_flat, ctx.k);
    Var f1 = tape.maxpool_groups(stage1_.apply(tape, p, e1), ctx.k);  // n x w1
    Var e2 = dgc(tape, f1, ctx.knn_flat, ctx.k);
    Var f2 = tape.maxpool_groups(stage2_.apply(tape, p, e2), ctx.k);  // n x w2
    // permutation-invariant self-attention mixing over the whole patch
    Var logits = attn_score_.apply(tape, p, f2);                  // n x 1
    Var a = tape.softmax_groups(logits, n);
    Var context = tape.matmul(a, f2, true, false);                // 1 x w2
    Var mixed = attn_mix_.apply(
        tape, p, tape.concat_cols(f2, tape.rowrep(context, n)));  // n x w2
    Var pooled = tape.maxpool_groups(mixed, n);                   // 1 x w2
    return head_.apply(tape, p, pooled);                          // 1 x 1
  }

 private:
  LinearSpec<T> stage1_, stage2_, attn_score_, attn_mix_;
  MlpSpec<T> head_;
};

}  // namespace pcegan
