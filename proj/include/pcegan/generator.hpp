#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pcegan/autodiff.hpp"
#include "pcegan/nn.hpp"
#include "pcegan/patch.hpp"
#include "pcegan/tensor.hpp"

namespace pcegan {

// Per-channel attribute enhancement network:
//   LFE (SCFE -> FR -> GRB) -> GSC (GFP -> FR -> GRB) -> FS,
// with a residual connection from the input attribute to the output.

struct GeneratorConfig {
  int k = 20;         // graph neighbors
  int scfe_lp = 64;   // L' per DGA head; each DGA outputs 2*L'
  int feat = 128;     // working feature width C
  int heads = 4;      // MGSA heads
  int gsce_h1 = 32;   // position encoder hidden widths
  int gsce_h2 = 64;
  int fs_hidden = 64;  // feature squeeze widths: feat -> fs_hidden -> fs_hidden2 -> 1
  int fs_hidden2 = 16;
  bool residual_output = true;
  bool zero_init_final = true;  // identity map at initialization
  bool gfp_softmax = false;     // normalize the GFP weight bracket over neighbors
  double slope = 0.2;

  std::map<std::string, std::string> to_meta() const {
    return {{"k", std::to_string(k)},
            {"scfe_lp", std::to_string(scfe_lp)},
            {"feat", std::to_string(feat)},
            {"heads", std::to_string(heads)},
            {"gsce_h1", std::to_string(gsce_h1)},
            {"gsce_h2", std::to_string(gsce_h2)},
            {"fs_hidden", std::to_string(fs_hidden)},
            {"fs_hidden2", std::to_string(fs_hidden2)},
            {"residual_output", residual_output ? "1" : "0"},
            {"zero_init_final", zero_init_final ? "1" : "0"},
            {"gfp_softmax", gfp_softmax ? "1" : "0"},
            {"slope", std::to_string(slope)}};
  }

  static GeneratorConfig from_meta(const std::map<std::string, std::string>& m) {
    GeneratorConfig c;
    auto geti = [&](const char* key, int& out) {
      auto it = m.find(key);
      if (it != m.end()) out = std::stoi(it->second);
    };
    geti("k", c.k);
    geti("scfe_lp", c.scfe_lp);
    geti("feat", c.feat);
    geti("heads", c.heads);
    geti("gsce_h1", c.gsce_h1);
    geti("gsce_h2", c.gsce_h2);
    geti("fs_hidden", c.fs_hidden);
    geti("fs_hidden2", c.fs_hidden2);
    auto getb = [&](const char* key, bool& out) {
      auto it = m.find(key);
      if (it != m.end()) out = it->second == "1";
    };
    getb("residual_output", c.residual_output);
    getb("zero_init_final", c.zero_init_final);
    getb("gfp_softmax", c.gfp_softmax);
    auto it = m.find("slope");
    if (it != m.end()) c.slope = std::stod(it->second);
    return c;
  }
};

// Raw GSCE input: the six concatenated 3-vectors of the position encoder.
inline std::array<double, 18> gsce_raw(const Vec3& pi, const Vec3& pik,
                                       const Vec3& pik_exp) {
  std::array<double, 18> out;
  for (int c = 0; c < 3; ++c) {
    out[c] = pi[c];
    out[3 + c] = pik[c];
    out[6 + c] = pik_exp[c];
    out[9 + c] = pi[c] - pik[c];
    out[12 + c] = pi[c] - pik_exp[c];
    out[15 + c] = pi[c] + pik[c] - pik_exp[c];
  }
  return out;
}

// Geometry-derived constants of one patch: graph indices, FR weights and
// normals, and the GSCE inputs built from the expanded neighborhood.
// All of it is fixed by the geometry, so it is computed once per patch.
template <typename T>
struct PatchContext {
  int n = 0;
  int k = 0;
  std::shared_ptr<const std::vector<int>> knn_flat;  // n*k, self included
  std::shared_ptr<const std::vector<int>> fr_flat;   // n*k, self excluded
  Tensor<T> fr_weights;  // (n*k)x1 normalized inverse neighbor distances
  Tensor<T> normals;     // nx3, +z hemisphere
  Tensor<T> pos_raw;     // (n*k)x18, empty when no grouped patch
  bool has_group = false;
};

namespace gen_detail {

inline Vec3 neighborhood_normal(const std::vector<Vec3>& pts,
                                const int* idx, int k) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int j = 0; j < k; ++j)
    mean += Eigen::Vector3d(pts[idx[j]][0], pts[idx[j]][1], pts[idx[j]][2]);
  mean /= k;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int j = 0; j < k; ++j) {
    Eigen::Vector3d d(pts[idx[j]][0], pts[idx[j]][1], pts[idx[j]][2]);
    d -= mean;
    cov += d * d.transpose();
  }
  if (cov.norm() < 1e-12) return {0.0, 0.0, 1.0};  // degenerate neighborhood
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  Eigen::Vector3d nrm = es.eigenvectors().col(0);  // smallest eigenvalue
  // sign-normalize toward the +z hemisphere
  if (nrm.z() < 0 || (nrm.z() == 0 && (nrm.x() < 0 || (nrm.x() == 0 && nrm.y() < 0))))
    nrm = -nrm;
  return {nrm.x(), nrm.y(), nrm.z()};
}

}  // namespace gen_detail

// neighbors: the grouped patch members; pass empty to skip GSC inputs
// (the forward pass then refuses to run, matching the grouped-patch
// precondition).
template <typename T>
PatchContext<T> build_patch_context(const Patch& patch,
                                    const std::vector<const Patch*>& neighbors,
                                    int k) {
  const int n = static_cast<int>(patch.size());
  if (k < 2 || k > n) throw std::invalid_argument("patch context: need 2 <= k <= n");
  PatchContext<T> ctx;
  ctx.n = n;
  ctx.k = k;

  ctx.knn_flat = std::make_shared<const std::vector<int>>(
      knn(patch.geometry, patch.geometry, k));

  // Self-excluded neighbor list for FR: query k+1 and drop the point itself
  // (fall back to dropping the last entry if duplicates hid it).
  if (k + 1 > n) throw std::invalid_argument("patch context: need k < n for FR");
  std::vector<int> with_self = knn(patch.geometry, patch.geometry, k + 1);
  auto fr = std::make_shared<std::vector<int>>();
  fr->reserve(static_cast<size_t>(n) * k);
  ctx.fr_weights = Tensor<T>(n * k, 1);
  for (int i = 0; i < n; ++i) {
    int taken = 0;
    bool dropped = false;
    for (int j = 0; j <= k && taken < k; ++j) {
      int cand = with_self[static_cast<size_t>(i) * (k + 1) + j];
      if (!dropped && cand == i) {
        dropped = true;
        continue;
      }
      fr->push_back(cand);
      ++taken;
    }
    double wsum = 0;
    std::array<double, 64> wbuf;
    std::vector<double> wdyn;
    double* w = k <= 64 ? wbuf.data() : (wdyn.resize(k), wdyn.data());
    for (int j = 0; j < k; ++j) {
      double d = std::sqrt(dist2(patch.geometry[i],
                                 patch.geometry[(*fr)[static_cast<size_t>(i) * k + j]]));
      w[j] = 1.0 / (d + 1e-12);
      wsum += w[j];
    }
    for (int j = 0; j < k; ++j)
      ctx.fr_weights.at(i * k + j, 0) = static_cast<T>(w[j] / wsum);
  }
  ctx.fr_flat = fr;

  // Plane-fit normals over the (self-included) knn neighborhood.
  ctx.normals = Tensor<T>(n, 3);
  for (int i = 0; i < n; ++i) {
    Vec3 nrm = gen_detail::neighborhood_normal(
        patch.geometry, ctx.knn_flat->data() + static_cast<size_t>(i) * k, k);
    for (int c = 0; c < 3; ++c) ctx.normals.at(i, c) = static_cast<T>(nrm[c]);
  }

  if (!neighbors.empty()) {
    std::vector<Vec3> expanded = patch.geometry;
    for (const Patch* nb : neighbors)
      expanded.insert(expanded.end(), nb->geometry.begin(), nb->geometry.end());
    std::vector<int> exp_knn = knn(patch.geometry, expanded, k);
    ctx.pos_raw = Tensor<T>(n * k, 18);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        const Vec3& pik = patch.geometry[(*ctx.knn_flat)[static_cast<size_t>(i) * k + j]];
        const Vec3& pik_exp = expanded[exp_knn[static_cast<size_t>(i) * k + j]];
        auto raw = gsce_raw(patch.geometry[i], pik, pik_exp);
        for (int c = 0; c < 18; ++c) ctx.pos_raw.at(i * k + j, c) = static_cast<T>(raw[c]);
      }
    ctx.has_group = true;
  }
  return ctx;
}

template <typename T>
PatchContext<T> build_patch_context(const std::vector<Patch>& patches,
                                    const GroupedPatch& group, int k) {
  std::vector<const Patch*> nbrs;
  nbrs.reserve(group.neighbors.size());
  for (int q : group.neighbors) nbrs.push_back(&patches[q]);
  return build_patch_context<T>(patches[group.center], nbrs, k);
}

// Edge features of the dynamic graph: concat(center, neighbor - center),
// (n*k) x 2L for an n x L feature map.
template <typename T>
Var dgc(Tape<T>& tape, Var features,
        const std::shared_ptr<const std::vector<int>>& knn_flat, int k) {
  int n = tape.rows(features);
  if (static_cast<int>(knn_flat->size()) != n * k)
    throw std::invalid_argument("dgc: index size mismatch");
  Var center = tape.grouprep(features, k);
  Var nbr = tape.gather_rows(features, knn_flat);
  return tape.concat_cols(center, tape.sub(nbr, center));
}

// Softmax attention over each point's k neighbors applied to VALUE rows.
template <typename T>
Var graph_attention(Tape<T>& tape, Var logits, Var value, int k) {
  Var a = tape.softmax_groups(logits, k);
  return tape.groupsum(tape.mul(tape.colrep(a, tape.cols(value)), value), k);
}

template <typename T>
class GeneratorModel {
 public:
  GeneratorConfig cfg;
  ParamStore<T> params;

  explicit GeneratorModel(const GeneratorConfig& config, uint64_t init_seed = 1)
      : cfg(config) {
    std::mt19937_64 rng(init_seed);
    const T s = static_cast<T>(cfg.slope);
    dga1_ = make_dga("scfe.dga1", 1, rng, s);
    dga2_ = make_dga("scfe.dga2", 2 * cfg.scfe_lp, rng, s);
    scfe_combine_ = make_linear<T>(params, "scfe.combine", 4 * cfg.scfe_lp,
                                   cfg.feat, rng, true, true, false, s);
    fr1_ = make_linear<T>(params, "lfe.fr", 2 * cfg.feat + 3, cfg.feat, rng, true,
                          true, false, s);
    grb1_ = make_grb("lfe.grb", rng, s);
    gfp_phi_ = make_mlp<T>(params, "gfp.phi", {cfg.feat, cfg.feat, cfg.feat}, rng,
                           false, cfg.zero_init_final, s);
    gfp_delta_ = make_mlp<T>(params, "gfp.delta", {cfg.feat, cfg.feat, cfg.feat},
                             rng, false, cfg.zero_init_final, s);
    gfp_eps_ = make_mlp<T>(params, "gfp.eps", {cfg.feat, cfg.feat, cfg.feat}, rng,
                           false, cfg.zero_init_final, s);
    gfp_alpha_ = make_mlp<T>(params, "gfp.alpha",
                             {18, cfg.gsce_h1, cfg.gsce_h2, cfg.feat}, rng, false,
                             cfg.zero_init_final, s);
    fr2_ = make_linear<T>(params, "gsc.fr", 2 * cfg.feat + 3, cfg.feat, rng, true,
                          true, false, s);
    grb2_ = make_grb("gsc.grb", rng, s);
    fs_ = make_mlp<T>(params, "fs", {cfg.feat, cfg.fs_hidden, cfg.fs_hidden2, 1},
                      rng, true, cfg.zero_init_final, s);
  }

  // attr: n x 1 attribute channel var. Returns the n x 1 enhanced channel
  // (unclamped; clamping is an inference-time fusion concern).
  Var forward(Tape<T>& tape, const std::vector<Var>& p,
              const PatchContext<T>& ctx, Var attr) const {
    if (!ctx.has_group)
      throw std::logic_error("generator: grouped patch context required");
    if (tape.rows(attr) != ctx.n || tape.cols(attr) != 1)
      throw std::invalid_argument("generator: attr must be n x 1");
    Var f = scfe(tape, p, ctx, attr);
    f = fr(tape, p, ctx, f, fr1_);
    f = grb(tape, p, ctx, f, grb1_);
    f = gfp(tape, p, ctx, f);
    f = fr(tape, p, ctx, f, fr2_);
    f = grb(tape, p, ctx, f, grb2_);
    Var out = fs_.apply(tape, p, f);
    if (cfg.residual_output) out = tape.add(attr, out);
    return out;
  }

  Var scfe(Tape<T>& tape, const std::vector<Var>& p, const PatchContext<T>& ctx,
           Var attr) const {
    Var d1 = dga(tape, p, ctx, attr, dga1_);
    Var d2 = dga(tape, p, ctx, d1, dga2_);
    // skip connection: both DGA outputs, combined to the working width
    return scfe_combine_.apply(tape, p, tape.concat_cols(d1, d2));
  }

  // Eq.-(7)-style neighbor correction over the expanded neighborhood.
  Var gfp(Tape<T>& tape, const std::vector<Var>& p, const PatchContext<T>& ctx,
          Var f_initial) const {
    if (!ctx.has_group) throw std::logic_error("gfp: grouped patch context required");
    Var f_nbr = tape.gather_rows(f_initial, ctx.knn_flat);       // (n*k) x C
    Var pos = gfp_alpha_.apply(tape, p, tape.constant(ctx.pos_raw));
    Var left = tape.add(
        tape.add(tape.grouprep(gfp_phi_.apply(tape, p, f_initial), ctx.k),
                 gfp_delta_.apply(tape, p, f_nbr)),
        pos);
    if (cfg.gfp_softmax) left = tape.softmax_groups(left, ctx.k);
    Var right = tape.add(gfp_eps_.apply(tape, p, f_nbr), pos);
    return tape.add(f_initial, tape.groupsum(tape.mul(left, right), ctx.k));
  }

  // Normal fusion plus inverse-distance-weighted neighbor aggregation.
  Var fr(Tape<T>& tape, const std::vector<Var>& p, const PatchContext<T>& ctx,
         Var f, const LinearSpec<T>& spec) const {
    Var nbr = tape.gather_rows(f, ctx.fr_flat);
    Var w = tape.colrep(tape.constant(ctx.fr_weights), tape.cols(f));
    Var agg = tape.groupsum(tape.mul(w, nbr), ctx.k);
    Var fused = tape.concat_cols(tape.concat_cols(f, agg),
                                 tape.constant(ctx.normals));
    return spec.apply(tape, p, fused);
  }

  struct GrbSpec {
    LinearSpec<T> c1, c2, c3, c4, c5;
  };

  Var grb(Tape<T>& tape, const std::vector<Var>& p, const PatchContext<T>& ctx,
          Var f, const GrbSpec& spec) const {
    Var edge = dgc(tape, f, ctx.knn_flat, ctx.k);  // (n*k) x 2C
    Var mid = spec.c3.apply(
        tape, p, spec.c2.apply(tape, p, spec.c1.apply(tape, p, edge)));
    Var res = tape.add(edge, mid);
    Var out = spec.c5.apply(tape, p, spec.c4.apply(tape, p, res));
    return tape.maxpool_groups(out, ctx.k);
  }

  struct DgaSpec {
    int in_l = 0;
    struct Head {
      LinearSpec<T> q1, q2, k1, k2, v;
    };
    std::vector<Head> heads;
    LinearSpec<T> combine;
  };

  Var dga(Tape<T>& tape, const std::vector<Var>& p, const PatchContext<T>& ctx,
          Var features, const DgaSpec& spec) const {
    Var edge = dgc(tape, features, ctx.knn_flat, ctx.k);
    std::vector<Var> outs;
    outs.reserve(spec.heads.size());
    for (const auto& h : spec.heads) {
      Var q = h.q2.apply(tape, p, h.q1.apply(tape, p, edge));  // (n*k) x 1
      Var kk = h.k2.apply(tape, p, h.k1.apply(tape, p, edge));
      Var v = h.v.apply(tape, p, edge);                        // (n*k) x L'
      Var logits = tape.leaky_relu(tape.add(q, kk), static_cast<T>(cfg.slope));
      outs.push_back(graph_attention(tape, logits, v, ctx.k));
    }
    Var cat = outs[0];
    for (size_t i = 1; i < outs.size(); ++i) cat = tape.concat_cols(cat, outs[i]);
    return spec.combine.apply(tape, p, cat);
  }

  const DgaSpec& dga1() const { return dga1_; }
  const DgaSpec& dga2() const { return dga2_; }
  const GrbSpec& grb1() const { return grb1_; }
  const GrbSpec& grb2() const { return grb2_; }

 private:
  DgaSpec dga1_, dga2_;
  LinearSpec<T> scfe_combine_;
  LinearSpec<T> fr1_, fr2_;
  GrbSpec grb1_, grb2_;
  MlpSpec<T> gfp_phi_, gfp_delta_, gfp_eps_, gfp_alpha_;
  MlpSpec<T> fs_;

  template <typename Rng>
  DgaSpec make_dga(const std::string& name, int in_l, Rng& rng, T s) {
    DgaSpec spec;
    spec.in_l = in_l;
    int lp = cfg.scfe_lp;
    for (int h = 0; h < cfg.heads; ++h) {
      std::string hn = name + ".h" + std::to_string(h);
      typename DgaSpec::Head head;
      head.q1 = make_linear<T>(params, hn + ".q1", 2 * in_l, lp, rng, true, true, false, s);
      head.q2 = make_linear<T>(params, hn + ".q2", lp, 1, rng, true, true, false, s);
      head.k1 = make_linear<T>(params, hn + ".k1", 2 * in_l, lp, rng, true, true, false, s);
      head.k2 = make_linear<T>(params, hn + ".k2", lp, 1, rng, true, true, false, s);
      head.v = make_linear<T>(params, hn + ".v", 2 * in_l, lp, rng, true, true, false, s);
      spec.heads.push_back(head);
    }
    spec.combine = make_linear<T>(params, name + ".combine", cfg.heads * lp,
                                  2 * lp, rng, true, true, false, s);
    return spec;
  }

  template <typename Rng>
  GrbSpec make_grb(const std::string& name, Rng& rng, T s) {
    GrbSpec spec;
    int c2 = 2 * cfg.feat;
    spec.c1 = make_linear<T>(params, name + ".c1", c2, c2, rng, true, true, false, s);
    spec.c2 = make_linear<T>(params, name + ".c2", c2, c2, rng, true, true, false, s);
    spec.c3 = make_linear<T>(params, name + ".c3", c2, c2, rng, true, true, false, s);
    spec.c4 = make_linear<T>(params, name + ".c4", c2, cfg.feat, rng, true, true, false, s);
    spec.c5 = make_linear<T>(params, name + ".c5", cfg.feat, cfg.feat, rng, true, true, false, s);
    return spec;
  }
};

}  // namespace pcegan
