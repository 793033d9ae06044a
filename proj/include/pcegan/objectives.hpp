#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "pcegan/autodiff.hpp"
#include "pcegan/tensor.hpp"

namespace pcegan {

// Losses realizing the relaxed optimal-transport objective.
//
// Sign convention: the critic minimizes E[D(fake)] - E[D(real)] + beta*GP
// and the generator minimizes omega*L_RMSE - E[D(fake)], the standard
// WGAN-GP minimax pairing.

struct LossConfig {
  double beta = 10.0;   // gradient-penalty weight
  double omega = 60.0;  // RMSE expansion weight
  // omega plays the role of the relaxation balance weight, with RMSE as the
  // transport cost; recorded here for documentation only.

  void validate() const {
    if (beta <= 0 || omega <= 0)
      throw std::invalid_argument("loss config: beta, omega > 0");
  }
};

// ---- tape-level builders ----------------------------------------------

template <typename T>
Var rmse_loss(Tape<T>& tape, Var enhanced, Var original) {
  if (tape.rows(enhanced) != tape.rows(original) ||
      tape.cols(enhanced) != tape.cols(original))
    throw std::invalid_argument("rmse: length mismatch");
  Var d = tape.sub(enhanced, original);
  return tape.sqrt(tape.mean_all(tape.square(d)));
}

// Scores a single interpolate u*real + (1-u)*fake through `critic` and
// returns (||grad_x D(x)|| - 1)^2. The result is a tape var, so it can be
// differentiated again with respect to the critic parameters.
template <typename T>
Var gradient_penalty(Tape<T>& tape,
                     const std::function<Var(Tape<T>&, Var)>& critic,
                     const Tensor<T>& real, const Tensor<T>& fake, T u) {
  if (!real.same_shape(fake))
    throw std::invalid_argument("gradient penalty: shape mismatch");
  Tensor<T> interp(real.rows, real.cols);
  for (size_t i = 0; i < interp.size(); ++i)
    interp.v[i] = u * real.v[i] + (T(1) - u) * fake.v[i];
  Var x = tape.constant(std::move(interp));
  Var score = critic(tape, x);
  Var g = tape.gradients(score, {x})[0];
  Var norm = tape.sqrt(tape.sum_all(tape.square(g)));
  Var pen = tape.square(tape.addc(norm, T(-1)));
  if (!tape.value(pen).all_finite())
    throw std::runtime_error("gradient penalty: non-finite critic gradient");
  return pen;
}

template <typename T>
Var discriminator_loss(Tape<T>& tape, Var mean_real, Var mean_fake, Var gp, T beta) {
  return tape.add(tape.sub(mean_fake, mean_real), tape.scale(gp, beta));
}

template <typename T>
Var generator_loss(Tape<T>& tape, Var rmse, Var mean_fake_score, T omega) {
  return tape.sub(tape.scale(rmse, omega), mean_fake_score);
}

// ---- value-level convenience -------------------------------------------

inline double rmse_loss(const std::vector<double>& enhanced,
                        const std::vector<double>& original) {
  if (enhanced.size() != original.size())
    throw std::invalid_argument("rmse: length mismatch");
  if (enhanced.empty()) throw std::invalid_argument("rmse: empty input");
  double s = 0;
  for (size_t i = 0; i < enhanced.size(); ++i) {
    double d = enhanced[i] - original[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(enhanced.size()));
}

template <typename T>
T gradient_penalty_value(const std::function<Var(Tape<T>&, Var)>& critic,
                         const Tensor<T>& real, const Tensor<T>& fake, T u) {
  Tape<T> tape;
  return tape.value(gradient_penalty<T>(tape, critic, real, fake, u)).at(0, 0);
}

inline double discriminator_loss(const std::vector<double>& scores_real,
                                 const std::vector<double>& scores_fake,
                                 double gp, double beta) {
  if (scores_real.empty() || scores_fake.empty())
    throw std::invalid_argument("discriminator loss: empty scores");
  double mr = 0, mf = 0;
  for (double s : scores_real) mr += s;
  for (double s : scores_fake) mf += s;
  mr /= static_cast<double>(scores_real.size());
  mf /= static_cast<double>(scores_fake.size());
  return mf - mr + beta * gp;
}

inline double generator_loss(const std::vector<double>& enhanced,
                             const std::vector<double>& original,
                             const std::vector<double>& scores_fake,
                             double omega) {
  double mf = 0;
  for (double s : scores_fake) mf += s;
  mf /= static_cast<double>(scores_fake.size());
  return omega * rmse_loss(enhanced, original) - mf;
}

}  // namespace pcegan
