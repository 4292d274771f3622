#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "doctest.h"
#include "unite/autodiff/graph.hpp"
#include "unite/autodiff/linalg.hpp"
#include "unite/autodiff/ops.hpp"
#include "unite/error.hpp"

using namespace unite;
using namespace unite::ad;

namespace {

Tensor uniform(std::mt19937_64& rng, Tensor::Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = u(rng);
  return t;
}

Graph single_output(ParameterSet params, std::function<Var(Scope&)> f) {
  return Graph{std::move(params), [f](Scope& s) { return std::map<std::string, Var>{{"out", f(s)}}; }};
}

// Projects an arbitrary op result onto a scalar with fixed random weights so
// the finite-difference check covers the full Jacobian.
Var project(Var y, std::uint64_t seed) {
  if (y.value().rank() == 0) return y;
  std::mt19937_64 rng(seed * 7919 + 1);
  Var w = y.tape->constant(uniform(rng, y.shape(), -1.0, 1.0));
  return sum(mul(y, w));
}

using PrimitiveCase = std::function<Graph(std::uint64_t seed)>;

Graph unary_case(std::uint64_t seed, Tensor::Shape shape, double lo, double hi, std::function<Var(Var)> op) {
  std::mt19937_64 rng(seed);
  ParameterSet p;
  p.add("x", uniform(rng, shape, lo, hi));
  return single_output(p, [op, seed](Scope& s) { return project(op(s.param("x")), seed); });
}

Graph binary_case(std::uint64_t seed, Tensor::Shape sa, Tensor::Shape sb, std::function<Var(Var, Var)> op) {
  std::mt19937_64 rng(seed);
  ParameterSet p;
  p.add("a", uniform(rng, sa, -1.0, 1.0));
  p.add("b", uniform(rng, sb, -1.0, 1.0));
  return single_output(p, [op, seed](Scope& s) { return project(op(s.param("a"), s.param("b")), seed); });
}

std::map<std::string, PrimitiveCase> primitive_cases() {
  std::map<std::string, PrimitiveCase> cases;
  cases["matmul"] = [](auto s) { return binary_case(s, {3, 4}, {4, 2}, matmul); };
  cases["transpose"] = [](auto s) { return unary_case(s, {3, 2}, -1, 1, transpose); };
  cases["add"] = [](auto s) { return binary_case(s, {2, 3}, {2, 3}, add); };
  cases["sub"] = [](auto s) { return binary_case(s, {2, 3}, {2, 3}, sub); };
  cases["mul"] = [](auto s) { return binary_case(s, {2, 3}, {2, 3}, mul); };
  cases["add_row"] = [](auto s) { return binary_case(s, {3, 4}, {1, 4}, add_row); };
  cases["mul_row"] = [](auto s) { return binary_case(s, {3, 4}, {1, 4}, mul_row); };
  cases["add_col"] = [](auto s) { return binary_case(s, {3, 4}, {3, 1}, add_col); };
  cases["mul_col"] = [](auto s) { return binary_case(s, {3, 4}, {3, 1}, mul_col); };
  cases["mul_scalar"] = [](auto s) { return binary_case(s, {3, 2}, {}, mul_scalar); };
  cases["scale"] = [](auto s) { return unary_case(s, {2, 2}, -1, 1, [](Var x) { return scale(x, -2.5); }); };
  cases["add_scalar"] = [](auto s) { return unary_case(s, {2, 2}, -1, 1, [](Var x) { return add_scalar(x, 0.7); }); };
  cases["concat_cols"] = [](auto s) {
    return binary_case(s, {3, 2}, {3, 3}, [](Var a, Var b) { return concat_cols({a, b, a}); });
  };
  cases["exp"] = [](auto s) { return unary_case(s, {2, 3}, -2, 2, ad::exp); };
  cases["log"] = [](auto s) { return unary_case(s, {2, 3}, 0.5, 3, ad::log); };
  cases["sqrt"] = [](auto s) { return unary_case(s, {2, 3}, 0.5, 3, ad::sqrt); };
  cases["square"] = [](auto s) { return unary_case(s, {2, 3}, -2, 2, square); };
  cases["sigmoid"] = [](auto s) { return unary_case(s, {2, 3}, -4, 4, sigmoid); };
  cases["softplus"] = [](auto s) { return unary_case(s, {2, 3}, -4, 4, softplus); };
  cases["relu"] = [](auto s) { return unary_case(s, {2, 3}, -1, 1, relu); };
  cases["clamp_min"] = [](auto s) { return unary_case(s, {2, 3}, -1, 1, [](Var x) { return clamp_min(x, 0.1); }); };
  cases["softmax_rows"] = [](auto s) { return unary_case(s, {3, 4}, -2, 2, softmax_rows); };
  cases["layer_norm_rows"] = [](auto s) { return unary_case(s, {3, 5}, -2, 2, [](Var x) { return layer_norm_rows(x); }); };
  cases["sum"] = [](auto s) { return unary_case(s, {2, 3}, -1, 1, sum); };
  cases["mean"] = [](auto s) { return unary_case(s, {2, 3}, -1, 1, mean); };
  cases["sum_rows"] = [](auto s) { return unary_case(s, {3, 4}, -1, 1, sum_rows); };
  cases["diag"] = [](auto s) { return unary_case(s, {3, 3}, -1, 1, diag); };
  cases["sqdist"] = [](auto s) { return binary_case(s, {3, 2}, {4, 2}, sqdist); };
  cases["sqdist_self"] = [](auto s) { return unary_case(s, {4, 3}, -1, 1, [](Var x) { return sqdist(x, x); }); };
  cases["gather_rows"] = [](auto s) {
    return unary_case(s, {5, 3}, -1, 1, [](Var x) {
      const std::vector<std::size_t> ids{4, 0, 4, 2};
      return gather_rows(x, ids);
    });
  };
  cases["pool_segments"] = [](auto s) {
    return unary_case(s, {6, 2}, -1, 1, [](Var x) {
      const std::vector<double> w{0.5, 0.5, 0.0, 1.0 / 3, 1.0 / 3, 1.0 / 3};
      return pool_segments(x, w, 3);
    });
  };
  cases["cross_entropy"] = [](auto s) {
    return unary_case(s, {4, 2}, -2, 2, [](Var x) {
      const std::vector<int> y{0, 1, 1, 0};
      return cross_entropy(x, y);
    });
  };
  cases["attention"] = [](auto seed) {
    std::mt19937_64 rng(seed);
    ParameterSet p;
    for (const char* n : {"q", "k", "v"}) p.add(n, uniform(rng, {6, 4}, -1, 1));
    return single_output(p, [seed](Scope& s) {
      const std::vector<unsigned char> mask{1, 1, 0, 1, 0, 1};
      return project(attention(s.param("q"), s.param("k"), s.param("v"), 3, 2, mask), seed);
    });
  };
  cases["cholesky"] = [](auto seed) {
    std::mt19937_64 rng(seed);
    ParameterSet p;
    p.add("a", uniform(rng, {4, 4}, -1, 1));
    return single_output(p, [seed](Scope& s) {
      Var a = s.param("a");
      Var k = add(matmul(a, transpose(a)), s.tape().constant(Tensor::identity(4)));
      return project(cholesky(k), seed);
    });
  };
  cases["cholesky_raw_symmetric_input"] = [](auto seed) {
    std::mt19937_64 rng(seed);
    Tensor a = uniform(rng, {3, 3}, -0.3, 0.3);
    for (std::size_t i = 0; i < 3; ++i) {
      a(i, i) = 2.0 + a(i, i);
      for (std::size_t j = 0; j < i; ++j) a(j, i) = a(i, j);
    }
    ParameterSet p;
    p.add("k", a);
    return single_output(p, [seed](Scope& s) { return project(cholesky(s.param("k")), seed); });
  };
  for (Side side : {Side::lower, Side::lower_transposed}) {
    const std::string name = side == Side::lower ? "tri_solve" : "tri_solve_transposed";
    cases[name] = [side](auto seed) {
      std::mt19937_64 rng(seed);
      Tensor l = uniform(rng, {3, 3}, -1, 1);
      for (std::size_t i = 0; i < 3; ++i) {
        l(i, i) = 2.0 + std::abs(l(i, i));
        for (std::size_t j = i + 1; j < 3; ++j) l(i, j) = 0.0;
      }
      ParameterSet p;
      p.add("l", l);
      p.add("b", uniform(rng, {3, 2}, -1, 1));
      return single_output(p, [seed, side](Scope& s) { return project(tri_solve(s.param("l"), s.param("b"), side), seed); });
    };
  }
  return cases;
}

}  // namespace

TEST_CASE("evaluate: scalar examples") {
  ParameterSet p;
  p.add("x", Tensor::scalar(3.0));
  Graph square_graph = single_output(p, [](Scope& s) { return s.param("x") * s.param("x"); });
  CHECK(evaluate(square_graph, {}).at("out").item() == 9.0);

  Graph sig = single_output({}, [](Scope& s) { return sigmoid(s.input("z")); });
  CHECK(evaluate(sig, {{"z", Tensor::scalar(0.0)}}).at("out").item() == doctest::Approx(0.5).epsilon(1e-15));

  Graph sm = single_output({}, [](Scope& s) { return softmax_rows(s.input("z")); });
  const Tensor out = evaluate(sm, {{"z", Tensor::row({1.0, 1.0, 1.0})}}).at("out");
  for (double v : out.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("gradient: hand-derivable cases") {
  ParameterSet p;
  p.add("x", Tensor::scalar(3.0));
  Graph sq = single_output(p, [](Scope& s) { return s.param("x") * s.param("x"); });
  CHECK(gradient(sq, {}, "out").at("x").item() == doctest::Approx(6.0).epsilon(1e-15));

  ParameterSet q;
  q.add("x", Tensor::scalar(0.0));
  Graph sig = single_output(q, [](Scope& s) { return sigmoid(s.param("x")); });
  const double s0 = 1.0 / (1.0 + std::exp(-0.0));
  CHECK(gradient(sig, {}, "out").at("x").item() == doctest::Approx(s0 * (1.0 - s0)).epsilon(1e-15));
}

TEST_CASE("gradient: log det through the Cholesky path at the identity") {
  ParameterSet p;
  p.add("k", Tensor::identity(2));
  Graph logdet = single_output(p, [](Scope& s) { return 2.0 * sum(ad::log(diag(cholesky(s.param("k"))))); });
  const Tensor g = gradient(logdet, {}, "out").at("k");

  // Oracle: central differences of log det computed directly by Eigen, with
  // symmetric perturbations split evenly over (i,j) and (j,i).
  auto direct_logdet = [](Eigen::Matrix2d m) { return std::log(m.determinant()); };
  const double h = 1e-5;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      Eigen::Matrix2d up = Eigen::Matrix2d::Identity(), dn = Eigen::Matrix2d::Identity();
      if (i == j) {
        up(i, i) += h;
        dn(i, i) -= h;
      } else {
        up(i, j) += h / 2;
        up(j, i) += h / 2;
        dn(i, j) -= h / 2;
        dn(j, i) -= h / 2;
      }
      const double fd = (direct_logdet(up) - direct_logdet(dn)) / (2 * h);
      CHECK(g(i, j) == doctest::Approx(fd).epsilon(1e-8));
      CHECK(g(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-8));
    }
}

TEST_CASE("check_gradient: quadratic form and vacuous graph") {
  std::mt19937_64 rng(3);
  ParameterSet p;
  p.add("x", uniform(rng, {3, 1}, -1, 1));
  const Tensor a = Tensor::matrix(3, 3, {2, 0.5, 0, 0.5, 3, 0.2, 0, 0.2, 1});
  Graph quad = single_output(p, [a](Scope& s) {
    Var x = s.param("x");
    return sum(matmul(transpose(x), matmul(s.tape().constant(a), x)));
  });
  const auto report = check_gradient(quad, {}, "out", 1e-5, 1e-4);
  CHECK(report.checked == 3);
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.passed);

  Graph no_params = single_output({}, [](Scope& s) { return sum(s.input("z")); });
  const auto empty = check_gradient(no_params, {{"z", Tensor::row({1, 2})}}, "out", 1e-5, 1e-4);
  CHECK(empty.empty());
  CHECK(empty.passed);
}

TEST_CASE("check_gradient: rejects non-positive step") {
  Graph g = single_output({}, [](Scope& s) { return sum(s.input("z")); });
  CHECK_THROWS_AS(check_gradient(g, {{"z", Tensor::scalar(1)}}, "out", 0.0, 1e-4), ContractError);
}

TEST_CASE("property: every primitive matches central differences over 100 seeds") {
  for (auto& [name, make] : primitive_cases()) {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      const auto report = check_gradient(make(seed), {}, "out", 1e-6, 1e-4);
      worst = std::max(worst, report.max_rel_error);
    }
    INFO(name << " worst relative error " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("softmax rows sum to one; layer norm standardizes rows") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    Var x = t.input("x", uniform(rng, {5, 7}, -5, 5));
    const Tensor s = softmax_rows(x).value();
    const Tensor n = layer_norm_rows(x).value();
    for (std::size_t i = 0; i < 5; ++i) {
      double total = 0.0, mu = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        total += s(i, j);
        mu += n(i, j);
      }
      mu /= 7.0;
      for (std::size_t j = 0; j < 7; ++j) var += (n(i, j) - mu) * (n(i, j) - mu);
      var /= 7.0;
      CHECK(std::abs(total - 1.0) <= 1e-9);
      CHECK(std::abs(mu) <= 1e-7);
      CHECK(std::abs(var - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("evaluate is pure") {
  std::mt19937_64 rng(5);
  ParameterSet p;
  p.add("w", uniform(rng, {4, 4}, -1, 1));
  Graph g = single_output(p, [](Scope& s) {
    Var h = layer_norm_rows(matmul(s.input("x"), s.param("w")));
    return softmax_rows(h);
  });
  const Bindings b{{"x", uniform(rng, {3, 4}, -1, 1)}};
  const Tensor first = evaluate(g, b).at("out");
  const Tensor second = evaluate(g, b).at("out");
  CHECK(first == second);
  CHECK(p.at("w") == g.parameters.at("w"));
}

TEST_CASE("cholesky_solve examples") {
  const Tensor b = Tensor::column({0.3, -1.2, 4.0});
  CHECK(cholesky_solve(Tensor::identity(3), b) == b);

  const Tensor x1 = cholesky_solve(Tensor::matrix(2, 2, {2, 0, 0, 2}), Tensor::column({2, 4}));
  CHECK(x1[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(x1[1] == doctest::Approx(2.0).epsilon(1e-14));

  const Tensor x2 = cholesky_solve(Tensor::matrix(2, 2, {2, 1, 1, 2}), Tensor::column({3, 3}));
  CHECK(x2[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(x2[1] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("cholesky_solve residual and round trip on random SPD matrices") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 9;
    const Tensor a = uniform(rng, {n, n}, -1, 1);
    Tensor k({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t m = 0; m < n; ++m) k(i, j) += a(i, m) * a(j, m);
        if (i == j) k(i, j) += 1.0;
      }
    const Tensor l = cholesky_lower(k);
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t m = 0; m < n; ++m) s += l(i, m) * l(j, m);
        worst = std::max(worst, std::abs(s - k(i, j)));
      }
    CHECK(worst < 1e-8);

    const Tensor b = uniform(rng, {n, 2}, -1, 1);
    const Tensor x = cholesky_solve(k, b);
    double res = 0.0, bn = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 2; ++c) {
        double s = -b(i, c);
        for (std::size_t m = 0; m < n; ++m) s += k(i, m) * x(m, c);
        res += s * s;
        bn += b(i, c) * b(i, c);
      }
    CHECK(std::sqrt(res) <= 1e-8 * std::sqrt(bn));
  }
}

TEST_CASE("errors: not positive definite carries the pivot") {
  const Tensor k = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 1, 0, 1, 1});
  try {
    cholesky_lower(k);
    FAIL("expected NotPositiveDefinite");
  } catch (const NotPositiveDefinite& e) {
    CHECK(e.pivot() == 2);
    CHECK(std::string(e.what()).find("not positive definite") != std::string::npos);
  }
  Tape t;
  CHECK_THROWS_AS(cholesky(t.input("k", k)), NotPositiveDefinite);
}

TEST_CASE("errors: shape mismatch names the node") {
  Tape t;
  Var a = t.input("a", Tensor({2, 3}));
  Var b = t.input("b", Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("node #2") != std::string::npos);
    CHECK(msg.find("matmul") != std::string::npos);
  }
}

TEST_CASE("errors: gradient of a non-scalar output") {
  ParameterSet p;
  p.add("x", Tensor::row({1, 2}));
  Graph g = single_output(p, [](Scope& s) { return s.param("x") * 2.0; });
  CHECK_THROWS_AS(gradient(g, {}, "out"), ContractError);
}

TEST_CASE("errors: non-finite values abort naming the node") {
  Tape t;
  Var x = t.input("x", Tensor::row({-1.0, 2.0}));
  try {
    ad::log(x);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
  CHECK_THROWS_AS(t.input("y", Tensor::scalar(std::nan(""))), NumericalError);
}

TEST_CASE("frozen parameters enter as constants") {
  ParameterSet p;
  p.add("a", Tensor::scalar(2.0));
  p.add("b", Tensor::scalar(5.0), false);
  Graph g = single_output(p, [](Scope& s) { return s.param("a") * s.param("b"); });
  const GradientMap grads = gradient(g, {}, "out");
  CHECK(grads.size() == 1);
  CHECK(grads.at("a").item() == 5.0);
}
