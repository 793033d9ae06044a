#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pcegan/config.hpp"
#include "pcegan/critic.hpp"
#include "pcegan/generator.hpp"
#include "pcegan/metrics.hpp"
#include "pcegan/nn.hpp"
#include "pcegan/objectives.hpp"
#include "pcegan/patch.hpp"
#include "pcegan/pointcloud.hpp"

namespace pcegan {

enum class Channel { Y = 0, Cb = 1, Cr = 2 };

inline const char* channel_name(Channel c) {
  switch (c) {
    case Channel::Y: return "Y";
    case Channel::Cb: return "Cb";
    default: return "Cr";
  }
}

inline Channel channel_from_name(const std::string& s) {
  if (s == "Y" || s == "y") return Channel::Y;
  if (s == "Cb" || s == "cb") return Channel::Cb;
  if (s == "Cr" || s == "cr") return Channel::Cr;
  throw std::invalid_argument("unknown channel: " + s);
}

struct TrainConfig {
  int epochs = 30;
  int batch_size = 5;
  double lr_generator = 1e-4;
  double lr_discriminator = 1e-6;
  int n_critic = 1;  // critic updates per generator update
  int k = 20;
  int n = 2048;  // points per patch
  int ol = 2;    // overlap ratio
  int num_nei = 6;
  Channel channel = Channel::Y;
  uint64_t seed = 1;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double val_fraction = 0.1;
  long max_generator_steps = 0;  // 0 = run all epochs

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size >= 1");
    if (lr_generator < 0 || lr_discriminator < 0)
      throw std::invalid_argument("train config: negative learning rate");
    if (n_critic < 1) throw std::invalid_argument("train config: n_critic >= 1");
  }

  static TrainConfig from_config(const ConfigFile& cfg) {
    TrainConfig t;
    t.epochs = cfg.get_int("train.epochs", t.epochs);
    t.batch_size = cfg.get_int("train.batch_size", t.batch_size);
    t.lr_generator = cfg.get_double("train.lr_generator", t.lr_generator);
    t.lr_discriminator = cfg.get_double("train.lr_discriminator", t.lr_discriminator);
    t.n_critic = cfg.get_int("train.n_critic", t.n_critic);
    t.k = cfg.get_int("patch.k", t.k);
    t.n = cfg.get_int("patch.n", t.n);
    t.ol = cfg.get_int("patch.ol", t.ol);
    t.num_nei = cfg.get_int("patch.num_nei", t.num_nei);
    t.channel = channel_from_name(cfg.get_str("train.channel", "Y"));
    t.seed = static_cast<uint64_t>(cfg.get_long("train.seed", 1));
    t.adam_beta1 = cfg.get_double("train.adam_beta1", t.adam_beta1);
    t.adam_beta2 = cfg.get_double("train.adam_beta2", t.adam_beta2);
    t.val_fraction = cfg.get_double("train.val_fraction", t.val_fraction);
    t.max_generator_steps = cfg.get_long("train.max_generator_steps", 0);
    return t;
  }
};

// One training example: a distorted patch with its grouped-patch context
// and the original attribute channel as target.
template <typename T>
struct TrainSample {
  PatchContext<T> ctx;
  Tensor<T> distorted;  // n x 1
  Tensor<T> original;   // n x 1
};

template <typename T>
std::vector<TrainSample<T>> make_train_samples(const PatchSet& set,
                                               Channel channel, int k) {
  if (set.original.empty())
    throw std::invalid_argument("train samples: patch set lacks original attributes");
  const int c = static_cast<int>(channel);
  std::vector<TrainSample<T>> samples;
  samples.reserve(set.patches.size());
  for (size_t p = 0; p < set.patches.size(); ++p) {
    TrainSample<T> s;
    s.ctx = build_patch_context<T>(set.patches, set.groups[p], k);
    const int n = s.ctx.n;
    s.distorted = Tensor<T>(n, 1);
    s.original = Tensor<T>(n, 1);
    for (int i = 0; i < n; ++i) {
      s.distorted.at(i, 0) = static_cast<T>(set.patches[p].attributes[i][c]);
      s.original.at(i, 0) = static_cast<T>(set.original[p][i][c]);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

struct TrainLogRow {
  long step = 0;
  double loss_g = 0, loss_d = 0, rmse = 0, val_psnr = 0;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<TrainLogRow>& rows) {
  os << "# pcegan metrics csv v1\n";
  os << "step,L_G,L_D,RMSE,val_PSNR\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.9g\n", r.step, r.loss_g,
                  r.loss_d, r.rmse, r.val_psnr);
    os << buf;
  }
}

// Alternating WGAN-GP training of one channel's generator/critic pair.
template <typename T>
class Trainer {
 public:
  Trainer(const TrainConfig& tcfg, const GeneratorConfig& gcfg,
          const CriticConfig& ccfg, const LossConfig& lcfg)
      : cfg_(tcfg),
        loss_cfg_(lcfg),
        gen_(gcfg, tcfg.seed * 2 + 1),
        critic_(ccfg, tcfg.seed * 2 + 2) {
    cfg_.validate();
    loss_cfg_.validate();
  }

  GeneratorModel<T>& generator() { return gen_; }
  CriticModel<T>& critic() { return critic_; }
  const TrainConfig& config() const { return cfg_; }

  // Deterministic given the config seed. Per step: n_critic critic updates
  // with the generator frozen, then one generator update with the critic
  // frozen. Aborts on non-finite losses with a diagnostic.
  std::vector<TrainLogRow> train(const std::vector<TrainSample<T>>& data) {
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    std::mt19937_64 rng(cfg_.seed);
    // seed-deterministic held-out split
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    size_t n_val = std::min(data.size() - 1,
                            static_cast<size_t>(std::floor(cfg_.val_fraction *
                                                           data.size())));
    std::vector<size_t> val(order.begin(), order.begin() + n_val);
    std::vector<size_t> tr(order.begin() + n_val, order.end());

    Adam<T> adam_g(static_cast<T>(cfg_.lr_generator), static_cast<T>(cfg_.adam_beta1),
                   static_cast<T>(cfg_.adam_beta2));
    Adam<T> adam_d(static_cast<T>(cfg_.lr_discriminator),
                   static_cast<T>(cfg_.adam_beta1), static_cast<T>(cfg_.adam_beta2));

    std::vector<TrainLogRow> log;
    long step = 0;
    double val_psnr = validation_psnr(data, val);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::shuffle(tr.begin(), tr.end(), rng);
      for (size_t b0 = 0; b0 < tr.size(); b0 += cfg_.batch_size) {
        size_t b1 = std::min(tr.size(), b0 + cfg_.batch_size);
        std::vector<size_t> batch(tr.begin() + b0, tr.begin() + b1);
        double loss_d = 0;
        for (int c = 0; c < cfg_.n_critic; ++c)
          loss_d = critic_step(data, batch, adam_d, unif, rng);
        auto [loss_g, rmse] = generator_step(data, batch, adam_g);
        ++step;
        if (!std::isfinite(loss_g) || !std::isfinite(loss_d))
          throw std::runtime_error(diagnostic("non-finite loss", step, batch));
        if (val_due(step, epoch, b1 == tr.size()))
          val_psnr = validation_psnr(data, val);
        log.push_back({step, loss_g, loss_d, rmse, val_psnr});
        if (cfg_.max_generator_steps > 0 && step >= cfg_.max_generator_steps)
          return log;
      }
    }
    return log;
  }

  // Unclamped enhanced channel values for one sample.
  std::vector<double> enhance_sample(const TrainSample<T>& s) const {
    Tape<T> tape;
    auto p = lift_params(tape, gen_.params);
    Var out = gen_.forward(tape, p, s.ctx, tape.constant(s.distorted));
    const auto& v = tape.value(out);
    std::vector<double> r(v.size());
    for (size_t i = 0; i < v.size(); ++i) r[i] = static_cast<double>(v.v[i]);
    return r;
  }

  double validation_psnr(const std::vector<TrainSample<T>>& data,
                         const std::vector<size_t>& val) const {
    if (val.empty()) return 0;
    std::vector<double> enh, orig;
    for (size_t i : val) {
      auto e = enhance_sample(data[i]);
      for (size_t j = 0; j < e.size(); ++j) {
        enh.push_back(std::clamp(e[j], 0.0, 255.0));
        orig.push_back(static_cast<double>(data[i].original.v[j]));
      }
    }
    double p = psnr(enh, orig);
    return std::isfinite(p) ? p : kPsnrCap;
  }

 private:
  TrainConfig cfg_;
  LossConfig loss_cfg_;
  GeneratorModel<T> gen_;
  CriticModel<T> critic_;

  bool val_due(long, int, bool epoch_end) const { return epoch_end; }

  std::string diagnostic(const char* what, long step,
                         const std::vector<size_t>& batch) const {
    std::ostringstream os;
    os << "train: " << what << " at step " << step << " (batch:";
    for (size_t i : batch) os << ' ' << i;
    os << ")";
    return os.str();
  }

  Tensor<T> generator_output(const TrainSample<T>& s) const {
    Tape<T> tape;
    auto p = lift_params(tape, gen_.params);
    Var out = gen_.forward(tape, p, s.ctx, tape.constant(s.distorted));
    return tape.value(out);
  }

  double critic_step(const std::vector<TrainSample<T>>& data,
                     const std::vector<size_t>& batch, Adam<T>& adam,
                     std::uniform_real_distribution<double>& unif,
                     std::mt19937_64& rng) {
    std::vector<Tensor<T>> grads;
    double loss_total = 0;
    const T inv_b = T(1) / static_cast<T>(batch.size());
    for (size_t i : batch) {
      const TrainSample<T>& s = data[i];
      Tensor<T> fake = generator_output(s);  // generator frozen: plain values
      Tape<T> tape;
      auto p = lift_params(tape, critic_.params);
      auto score = [&](Tape<T>& t, Var x) { return critic_.forward(t, p, s.ctx, x); };
      Var sr = critic_.forward(tape, p, s.ctx, tape.constant(s.original));
      Var sf = critic_.forward(tape, p, s.ctx, tape.constant(fake));
      T u = static_cast<T>(unif(rng));
      Var gp = gradient_penalty<T>(tape, score, s.original, fake, u);
      Var loss = discriminator_loss(tape, sr, sf, gp,
                                    static_cast<T>(loss_cfg_.beta));
      loss_total += static_cast<double>(tape.value(loss).at(0, 0));
      accumulate_param_grads(tape, loss, p, grads, inv_b);
    }
    adam.step(critic_.params, grads);
    return loss_total / static_cast<double>(batch.size());
  }

  std::pair<double, double> generator_step(const std::vector<TrainSample<T>>& data,
                                           const std::vector<size_t>& batch,
                                           Adam<T>& adam) {
    std::vector<Tensor<T>> grads;
    double loss_total = 0, rmse_total = 0;
    const T inv_b = T(1) / static_cast<T>(batch.size());
    for (size_t i : batch) {
      const TrainSample<T>& s = data[i];
      Tape<T> tape;
      auto pg = lift_params(tape, gen_.params);
      auto pc = lift_params(tape, critic_.params);  // frozen: not updated
      Var enhanced = gen_.forward(tape, pg, s.ctx, tape.constant(s.distorted));
      Var rmse = rmse_loss(tape, enhanced, tape.constant(s.original));
      Var score = critic_.forward(tape, pc, s.ctx, enhanced);
      Var loss = generator_loss(tape, rmse, score, static_cast<T>(loss_cfg_.omega));
      loss_total += static_cast<double>(tape.value(loss).at(0, 0));
      rmse_total += static_cast<double>(tape.value(rmse).at(0, 0));
      accumulate_param_grads(tape, loss, pg, grads, inv_b);
    }
    adam.step(gen_.params, grads);
    return {loss_total / static_cast<double>(batch.size()),
            rmse_total / static_cast<double>(batch.size())};
  }
};

// ---- whole-cloud enhancement -------------------------------------------

// Applies per-channel generators patch-by-patch and fuses the results.
// The cloud must be YCbCr; geometry and point order pass through untouched.
// models[c] may be null, which leaves that channel at its input values.
template <typename T>
PointCloud enhance_cloud(const PointCloud& pc,
                         const std::array<const GeneratorModel<T>*, 3>& models,
                         int n_per_patch, int ol, int num_nei) {
  pc.validate();
  if (pc.color_space != ColorSpace::YCbCr)
    throw std::logic_error("enhance_cloud: expects a YCbCr cloud");
  const size_t N = pc.size();
  int m = static_cast<int>((N * static_cast<size_t>(ol)) / n_per_patch);
  if (m < 2) throw std::invalid_argument("enhance_cloud: cloud too small for patching");

  int k = 0;
  for (const auto* mdl : models) {
    if (!mdl) continue;
    if (k && mdl->cfg.k != k)
      throw std::logic_error("enhance_cloud: channel models disagree on k");
    k = mdl->cfg.k;
  }
  if (k == 0) throw std::logic_error("enhance_cloud: no channel model loaded");

  PatchSet set = build_patch_set(pc, m, ol, std::min(num_nei, m - 1));
  std::vector<PatchContext<T>> ctxs;
  ctxs.reserve(set.patches.size());
  for (size_t p = 0; p < set.patches.size(); ++p)
    ctxs.push_back(build_patch_context<T>(set.patches, set.groups[p], k));

  PointCloud out = pc;
  for (int c = 0; c < 3; ++c) {
    if (!models[c]) continue;
    const GeneratorModel<T>& mdl = *models[c];
    std::vector<EnhancedChannelPatch> enhanced;
    enhanced.reserve(set.patches.size());
    for (size_t p = 0; p < set.patches.size(); ++p) {
      const Patch& patch = set.patches[p];
      const int n = static_cast<int>(patch.size());
      Tensor<T> attr(n, 1);
      for (int i = 0; i < n; ++i)
        attr.at(i, 0) = static_cast<T>(patch.attributes[i][c]);
      Tape<T> tape;
      auto pv = lift_params(tape, mdl.params);
      Var o = mdl.forward(tape, pv, ctxs[p], tape.constant(attr));
      const auto& v = tape.value(o);
      EnhancedChannelPatch ep;
      ep.indices = &patch.indices;
      ep.values.resize(n);
      for (int i = 0; i < n; ++i) ep.values[i] = static_cast<double>(v.at(i, 0));
      enhanced.push_back(std::move(ep));
    }
    std::vector<double> fallback(N);
    for (size_t i = 0; i < N; ++i) fallback[i] = pc.attributes[i][c];
    std::vector<double> fused = fuse_patches(enhanced, N, fallback);
    for (size_t i = 0; i < N; ++i) out.attributes[i][c] = clamp255(fused[i]);
  }
  return out;
}

}  // namespace pcegan
