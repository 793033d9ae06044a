#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pcegan/autodiff.hpp"
#include "pcegan/tensor.hpp"

using namespace pcegan;

namespace {

// Central-difference gradient of a scalar-valued function of one tensor.
// Rebuilds the whole graph at each probe, so it is independent of the tape's
// backward pass.
Tensor<double> fd_gradient(const std::function<double(const Tensor<double>&)>& f,
                           Tensor<double> x, double h = 1e-6) {
  Tensor<double> g(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x.v[i];
    x.v[i] = keep + h;
    double fp = f(x);
    x.v[i] = keep - h;
    double fm = f(x);
    x.v[i] = keep;
    g.v[i] = (fp - fm) / (2 * h);
  }
  return g;
}

double max_rel_err(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::abs(a.v[i]), std::abs(b.v[i]), 1e-8});
    worst = std::max(worst, std::abs(a.v[i] - b.v[i]) / denom);
  }
  return worst;
}

Tensor<double> random_tensor(int r, int c, std::mt19937_64& rng, double lo = -2,
                             double hi = 2) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(r, c);
  for (auto& x : t.v) x = d(rng);
  return t;
}

// Checks tape gradients of a graph builder against finite differences of the
// same builder re-evaluated from scratch.
void check_gradient(
    const std::function<Var(Tape<double>&, Var)>& build, Tensor<double> x,
    double tol = 1e-6) {
  Tape<double> tape;
  Var leaf = tape.constant(x);
  Var y = build(tape, leaf);
  Var g = tape.gradients(y, {leaf})[0];
  auto fd = fd_gradient(
      [&](const Tensor<double>& probe) {
        Tape<double> t2;
        return t2.value(build(t2, t2.constant(probe))).at(0, 0);
      },
      x);
  INFO("analytic vs finite differences");
  REQUIRE(max_rel_err(tape.value(g), fd) < tol);
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Tape<double> tape;
  Var a = tape.constant(Tensor<double>::from(2, 2, {1, -2, 3, 0.5}));
  Var b = tape.constant(Tensor<double>::from(2, 2, {4, 1, -1, 2}));
  CHECK(tape.value(tape.add(a, b)).at(0, 0) == 5.0);
  CHECK(tape.value(tape.sub(a, b)).at(0, 1) == -3.0);
  CHECK(tape.value(tape.mul(a, b)).at(1, 0) == -3.0);
  CHECK(tape.value(tape.neg(a)).at(0, 1) == 2.0);
  CHECK(tape.value(tape.scale(a, 3.0)).at(1, 1) == 1.5);
  CHECK(tape.value(tape.addc(a, 1.0)).at(0, 0) == 2.0);
  CHECK(tape.value(tape.leaky_relu(a, 0.1)).at(0, 1) == Catch::Approx(-0.2));
  CHECK(tape.value(tape.maxc(a, 0.0)).at(0, 1) == 0.0);
}

TEST_CASE("matmul forward matches manual product") {
  Tape<double> tape;
  Var a = tape.constant(Tensor<double>::from(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = tape.constant(Tensor<double>::from(3, 2, {7, 8, 9, 10, 11, 12}));
  auto& m = tape.value(tape.matmul(a, b));
  // row 0: 1*7+2*9+3*11 = 58, 1*8+2*10+3*12 = 64
  CHECK(m.at(0, 0) == 58.0);
  CHECK(m.at(0, 1) == 64.0);
  CHECK(m.at(1, 0) == 139.0);
  CHECK(m.at(1, 1) == 154.0);
  // transpose flags
  auto& mt = tape.value(tape.matmul(b, a, true, true));
  CHECK(mt.at(0, 0) == 58.0);
  CHECK(mt.at(1, 0) == 64.0);
}

TEST_CASE("group and reduction ops forward") {
  Tape<double> tape;
  Var a = tape.constant(Tensor<double>::from(4, 2, {1, 2, 3, 4, 5, 6, 7, 8}));
  auto& gs = tape.value(tape.groupsum(a, 2));
  CHECK(gs.rows == 2);
  CHECK(gs.at(0, 0) == 4.0);
  CHECK(gs.at(1, 1) == 14.0);
  auto& cs = tape.value(tape.colsum(a));
  CHECK(cs.at(0, 0) == 16.0);
  auto& rs = tape.value(tape.rowsum(a));
  CHECK(rs.at(2, 0) == 11.0);
  auto& sa = tape.value(tape.sum_all(a));
  CHECK(sa.at(0, 0) == 36.0);

  Var small = tape.constant(Tensor<double>::from(2, 2, {1, 2, 3, 4}));
  auto& gr = tape.value(tape.grouprep(small, 3));
  CHECK(gr.rows == 6);
  CHECK(gr.at(2, 1) == 2.0);
  CHECK(gr.at(3, 0) == 3.0);
}

TEST_CASE("gather and scatter forward") {
  Tape<double> tape;
  Var a = tape.constant(Tensor<double>::from(3, 1, {10, 20, 30}));
  Var g = tape.gather_rows(a, std::vector<int>{2, 0, 2});
  CHECK(tape.value(g).at(0, 0) == 30.0);
  CHECK(tape.value(g).at(2, 0) == 30.0);
  Var s = tape.scatter_rows(g, std::make_shared<const std::vector<int>>(
                                   std::vector<int>{0, 0, 1}),
                            2);
  CHECK(tape.value(s).at(0, 0) == 40.0);  // 30 + 10 accumulated
  CHECK(tape.value(s).at(1, 0) == 30.0);
  CHECK_THROWS(tape.gather_rows(a, std::vector<int>{3}));
}

TEST_CASE("softmax groups: rows sum to one per block and column") {
  Tape<double> tape;
  std::mt19937_64 rng(5);
  Var a = tape.constant(random_tensor(6, 3, rng, -4, 4));
  auto& y = tape.value(tape.softmax_groups(a, 3));
  for (int g = 0; g < 2; ++g)
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int j = 0; j < 3; ++j) s += y.at(g * 3 + j, c);
      CHECK(s == Catch::Approx(1.0).epsilon(1e-12));
    }
  // large logits stay finite (stability)
  Var big = tape.constant(Tensor<double>::from(2, 1, {1000.0, 999.0}));
  CHECK(tape.value(tape.softmax_groups(big, 2)).all_finite());
}

TEST_CASE("maxpool groups picks the per-column block max") {
  Tape<double> tape;
  Var a = tape.constant(Tensor<double>::from(4, 2, {1, 9, 5, 2, -1, 0, 3, 7}));
  auto& y = tape.value(tape.maxpool_groups(a, 2));
  CHECK(y.at(0, 0) == 5.0);
  CHECK(y.at(0, 1) == 9.0);
  CHECK(y.at(1, 0) == 3.0);
  CHECK(y.at(1, 1) == 7.0);
}

TEST_CASE("concat and slice forward") {
  Tape<double> tape;
  Var a = tape.constant(Tensor<double>::from(2, 2, {1, 2, 3, 4}));
  Var b = tape.constant(Tensor<double>::from(2, 1, {5, 6}));
  Var c = tape.concat_cols(a, b);
  CHECK(tape.value(c).cols == 3);
  CHECK(tape.value(c).at(1, 2) == 6.0);
  auto& s = tape.value(tape.slice_cols(c, 1, 3));
  CHECK(s.at(0, 0) == 2.0);
  CHECK(s.at(0, 1) == 5.0);
}

TEST_CASE("first-order gradients match finite differences per primitive") {
  std::mt19937_64 rng(11);

  SECTION("elementwise chain") {
    check_gradient(
        [](Tape<double>& t, Var x) {
          Var y = t.mul(t.addc(x, 0.7), t.scale(x, -1.3));
          y = t.leaky_relu(y, 0.2);
          return t.sum_all(t.square(y));
        },
        random_tensor(3, 4, rng));
  }

  SECTION("powc and sqrt on positive input") {
    check_gradient(
        [](Tape<double>& t, Var x) {
          Var y = t.add(t.powc(x, 1.7), t.sqrt(x));
          return t.sum_all(y);
        },
        random_tensor(3, 3, rng, 0.5, 2.0));
  }

  SECTION("maxc away from the threshold") {
    check_gradient(
        [](Tape<double>& t, Var x) {
          return t.sum_all(t.square(t.maxc(x, 0.1)));
        },
        random_tensor(4, 2, rng));
  }

  SECTION("matmul with transpose flags") {
    Tensor<double> w = random_tensor(3, 5, rng);
    for (bool ta : {false, true})
      for (bool tb : {false, true}) {
        Tensor<double> x = ta ? random_tensor(3, 4, rng) : random_tensor(4, 3, rng);
        Tensor<double> wt = tb ? random_tensor(5, 3, rng) : w;
        check_gradient(
            [&, ta, tb](Tape<double>& t, Var xv) {
              Var wv = t.constant(wt);
              return t.sum_all(t.square(t.matmul(xv, wv, ta, tb)));
            },
            x);
      }
  }

  SECTION("reductions and broadcasts") {
    check_gradient(
        [](Tape<double>& t, Var x) {
          Var a = t.rowrep(t.colsum(x), 4);
          Var b = t.colrep(t.rowsum(x), 3);
          return t.sum_all(t.square(t.add(a, b)));
        },
        random_tensor(4, 3, rng));
  }

  SECTION("group sum and rep") {
    check_gradient(
        [](Tape<double>& t, Var x) {
          Var s = t.groupsum(x, 3);
          Var r = t.grouprep(s, 3);
          return t.sum_all(t.mul(x, r));
        },
        random_tensor(6, 2, rng));
  }

  SECTION("gather/scatter") {
    auto idx = std::make_shared<const std::vector<int>>(
        std::vector<int>{0, 2, 2, 1, 0, 3});
    check_gradient(
        [&](Tape<double>& t, Var x) {
          Var g = t.gather_rows(x, idx);
          Var s = t.scatter_rows(g, idx, 4);
          return t.sum_all(t.square(s));
        },
        random_tensor(4, 2, rng));
  }

  SECTION("softmax groups") {
    check_gradient(
        [](Tape<double>& t, Var x) {
          Var a = t.softmax_groups(x, 4);
          Var w = t.constant(Tensor<double>::from(8, 1, {1, 2, 3, 4, 5, 6, 7, 8}));
          return t.sum_all(t.square(t.mul(a, w)));
        },
        random_tensor(8, 1, rng));
  }

  SECTION("maxpool groups (unique values)") {
    Tensor<double> x = random_tensor(8, 2, rng);
    check_gradient(
        [](Tape<double>& t, Var v) {
          return t.sum_all(t.square(t.maxpool_groups(v, 4)));
        },
        x);
  }

  SECTION("concat and slice") {
    check_gradient(
        [](Tape<double>& t, Var x) {
          Var a = t.slice_cols(x, 0, 2);
          Var b = t.slice_cols(x, 2, 4);
          Var c = t.concat_cols(b, a);
          return t.sum_all(t.square(c));
        },
        random_tensor(3, 4, rng));
  }

  SECTION("sum_all / broadcast_all round trip") {
    check_gradient(
        [](Tape<double>& t, Var x) {
          Var s = t.sum_all(x);
          Var b = t.broadcast_all(s, 3, 2);
          return t.sum_all(t.mul(b, x));
        },
        random_tensor(3, 2, rng));
  }

  SECTION("batchnorm composite") {
    // Mix the normalized output with fixed per-row weights: a plain sum of
    // squares is nearly input-invariant, which starves finite differences.
    Tensor<double> mix = random_tensor(5, 2, rng);
    check_gradient(
        [&](Tape<double>& t, Var x) {
          Var gamma = t.constant(Tensor<double>::from(1, 2, {1.5, 0.5}));
          Var beta = t.constant(Tensor<double>::from(1, 2, {0.1, -0.3}));
          Var y = t.mul(t.batchnorm(x, gamma, beta), t.constant(mix));
          return t.sum_all(t.square(y));
        },
        random_tensor(5, 2, rng), 1e-5);
  }
}

TEST_CASE("second-order: gradient of a gradient-norm penalty") {
  // f(x) = sum(x^3). g = df/dx = 3x^2. P = sum(g^2) = sum(9x^4),
  // so dP/dx = 36x^3 analytically.
  Tensor<double> x0 = Tensor<double>::from(3, 1, {0.5, -1.2, 2.0});
  Tape<double> t2;
  Var x2 = t2.constant(x0);
  Var cube = t2.mul(t2.mul(x2, x2), x2);
  Var f2 = t2.sum_all(cube);
  Var g = t2.gradients(f2, {x2})[0];
  for (int i = 0; i < 3; ++i)
    CHECK(t2.value(g).at(i, 0) == Catch::Approx(3 * x0.at(i, 0) * x0.at(i, 0)));
  Var pen = t2.sum_all(t2.square(g));
  Var g2 = t2.gradients(pen, {x2})[0];
  for (int i = 0; i < 3; ++i)
    CHECK(t2.value(g2).at(i, 0) ==
          Catch::Approx(36 * std::pow(x0.at(i, 0), 3.0)).margin(1e-9));
}

TEST_CASE("second-order matches finite differences of the first-order gradient") {
  std::mt19937_64 rng(23);
  Tensor<double> w0 = random_tensor(3, 2, rng);
  Tensor<double> x0 = random_tensor(4, 3, rng);

  // penalty P(w) = (||d/dx sum(leaky(x w))||_2 - 1)^2, differentiated wrt w
  Tape<double> t;
  Var wv = t.constant(w0);
  Var xv = t.constant(x0);
  Var y = t.sum_all(t.leaky_relu(t.matmul(xv, wv), 0.2));
  Var gx = t.gradients(y, {xv})[0];
  Var norm = t.sqrt(t.sum_all(t.square(gx)));
  Var pen = t.square(t.addc(norm, -1.0));
  Var gw = t.gradients(pen, {wv})[0];

  auto fd = fd_gradient(
      [&](const Tensor<double>& w) {
        Tape<double> t2;
        Var wv2 = t2.constant(w);
        Var xv2 = t2.constant(x0);
        Var y2 = t2.sum_all(t2.leaky_relu(t2.matmul(xv2, wv2), 0.2));
        Var gx2 = t2.gradients(y2, {xv2})[0];
        Var norm2 = t2.sqrt(t2.sum_all(t2.square(gx2)));
        return t2.value(t2.square(t2.addc(norm2, -1.0))).at(0, 0);
      },
      w0);
  CHECK(max_rel_err(t.value(gw), fd) < 1e-5);
}

TEST_CASE("sqrt derivative is guarded at zero") {
  Tape<double> tape;
  Var x = tape.constant(Tensor<double>::from(1, 1, {0.0}));
  Var y = tape.sqrt(x);
  CHECK(tape.value(y).at(0, 0) == 0.0);  // forward stays exact
  Var g = tape.gradients(tape.sum_all(y), {x})[0];
  CHECK(std::isfinite(tape.value(g).at(0, 0)));
}

TEST_CASE("unreachable leaves get zero gradients of matching shape") {
  Tape<double> tape;
  Var a = tape.constant(Tensor<double>::from(2, 2, {1, 2, 3, 4}));
  Var b = tape.constant(Tensor<double>::from(3, 1, {1, 1, 1}));
  Var y = tape.sum_all(a);
  auto g = tape.gradients(y, {a, b});
  CHECK(tape.value(g[0]).at(1, 1) == 1.0);
  CHECK(tape.value(g[1]).rows == 3);
  for (double v : tape.value(g[1]).v) CHECK(v == 0.0);
}

TEST_CASE("gradients rejects non-scalar roots") {
  Tape<double> tape;
  Var a = tape.constant(Tensor<double>::from(2, 1, {1, 2}));
  CHECK_THROWS_AS(tape.gradients(a, {a}), std::invalid_argument);
}
