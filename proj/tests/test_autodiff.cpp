#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "meshalign/adam.hpp"
#include "meshalign/gradcheck.hpp"
#include "meshalign/nn.hpp"
#include "meshalign/ops.hpp"

using namespace meshalign;

namespace {

Tensor<double> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("relu forward") {
  auto x = Tensor<double>::from({2}, {-1.0, 2.0});
  auto y = relu(x);
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 2.0);
}

TEST_CASE("matmul matches brute-force triple loop") {
  Rng rng(7);
  auto a = rand_tensor({2, 3}, rng);
  auto b = rand_tensor({3, 2}, rng);
  auto c = matmul(a, b);
  // independent oracle: explicit triple loop
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) {
      double s = 0.0;
      for (Index k = 0; k < 3; ++k) s += a.at(i * 3 + k) * b.at(k * 2 + j);
      CHECK(c.at(i * 2 + j) == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("matmul hand-computed 2x3 * 3x2") {
  auto a = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<double>::from({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  CHECK(c.at(0) == 58.0);
  CHECK(c.at(1) == 64.0);
  CHECK(c.at(2) == 139.0);
  CHECK(c.at(3) == 154.0);
}

TEST_CASE("shape mismatch raises descriptive error") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({3, 2});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add: shape mismatch"), Error);
  auto c = Tensor<double>::zeros({2, 2});
  CHECK_THROWS_WITH_AS(matmul(a, c), doctest::Contains("matmul"), Error);
}

TEST_CASE("backward: sum of squares") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0});
  x.set_requires_grad();
  Tape<double> tape;
  auto loss = sum(mul(x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward requires scalar loss") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0});
  x.set_requires_grad();
  Tape<double> tape;
  auto y = mul(x, x);
  CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("scalar"), Error);
}

TEST_CASE("second backward on consumed graph errors") {
  auto x = Tensor<double>::from({1}, {3.0});
  x.set_requires_grad();
  Tape<double> tape;
  auto loss = mul(x, x);
  tape.backward(loss);
  CHECK_THROWS_WITH_AS(tape.backward(loss), doctest::Contains("consumed"), Error);
}

TEST_CASE("detach blocks gradient flow") {
  auto x = Tensor<double>::from({2}, {1.5, -0.5});
  x.set_requires_grad();

  // f(x, detach(x)) = sum(x * detach(x)): d/dx = detach(x) (live path only)
  Tape<double> tape;
  auto d = detach(x);
  CHECK_FALSE(d.requires_grad());
  auto loss = sum(mul(x, d));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(1.5));
  CHECK(x.grad()[1] == doctest::Approx(-0.5));

  // pure detach path: zero grad
  x.zero_grad();
  Tape<double> tape2;
  auto loss2 = sum(mul(detach(x), detach(x)));
  tape2.backward(loss2);
  for (double g : x.grad_or_zeros()) CHECK(g == 0.0);
}

TEST_CASE("detach equals constant substitution") {
  Rng rng(11);
  auto x = rand_tensor({4}, rng, 0.5, 1.5);
  auto via_detach = [&](std::vector<Tensor<double>>& ins) {
    return sum(mul(mul(ins[0], ins[0]), detach(ins[0])));
  };
  Tensor<double> frozen = detach(x);
  auto via_const = [&](std::vector<Tensor<double>>& ins) {
    return sum(mul(mul(ins[0], ins[0]), frozen));
  };
  std::vector<Tensor<double>> a{x.clone_values().set_requires_grad()};
  std::vector<Tensor<double>> b{x.clone_values().set_requires_grad()};
  Tape<double> t1;
  auto l1 = via_detach(a);
  t1.backward(l1);
  Tape<double> t2;
  auto l2 = via_const(b);
  t2.backward(l2);
  for (Index i = 0; i < 4; ++i)
    CHECK(a[0].grad()[i] == doctest::Approx(b[0].grad()[i]).epsilon(1e-14));
}

TEST_CASE("gradcheck: every differentiable op at 1e-5") {
  Rng rng(3);
  const double tol = 1e-5;
  for (int inst = 0; inst < 10; ++inst) {
    auto a = rand_tensor({3, 4}, rng, 0.3, 1.7);  // positive, away from kinks
    auto b = rand_tensor({3, 4}, rng, 0.3, 1.7);
    a.set_requires_grad();
    b.set_requires_grad();

    auto check2 = [&](const char* name, auto fn) {
      std::vector<Tensor<double>> ins{a.clone_values().set_requires_grad(),
                                      b.clone_values().set_requires_grad()};
      auto rep = gradcheck<double>(
          [&fn](std::vector<Tensor<double>>& v) { return fn(v[0], v[1]); }, ins);
      INFO(name << " rel err " << rep.max_rel_err << " at " << rep.worst);
      CHECK(rep.max_rel_err <= tol);
    };
    auto check1 = [&](const char* name, auto fn) {
      std::vector<Tensor<double>> ins{a.clone_values().set_requires_grad()};
      auto rep = gradcheck<double>(
          [&fn](std::vector<Tensor<double>>& v) { return fn(v[0]); }, ins);
      INFO(name << " rel err " << rep.max_rel_err << " at " << rep.worst);
      CHECK(rep.max_rel_err <= tol);
    };

    check2("add", [](auto& x, auto& y) { return sum(add(x, y)); });
    check2("sub", [](auto& x, auto& y) { return sum(mul(sub(x, y), sub(x, y))); });
    check2("mul", [](auto& x, auto& y) { return sum(mul(x, y)); });
    check2("matmul", [](auto& x, auto& y) { return sum(matmul(x, transpose2d(y))); });
    check1("scale", [](auto& x) { return sum(scale(x, 2.5)); });
    check1("relu", [](auto& x) { return sum(relu(x)); });
    check1("abs", [](auto& x) { return sum(meshalign::abs(x)); });
    check1("log", [](auto& x) { return sum(meshalign::log(x)); });
    check1("exp", [](auto& x) { return sum(meshalign::exp(x)); });
    check1("sqrt", [](auto& x) { return sum(meshalign::sqrt(x)); });
    check1("reciprocal", [](auto& x) { return sum(reciprocal(x)); });
    check1("sum", [](auto& x) { return sum(x); });
    check1("mean", [](auto& x) { return mean(mul(x, x)); });
    check1("sinc_sqrt", [](auto& x) { return sum(sinc_sqrt(x)); });
    check1("versine_ratio", [](auto& x) { return sum(versine_ratio(x)); });
    check1("transpose2d", [](auto& x) { return sum(mul(transpose2d(x), transpose2d(x))); });
    check1("reshape", [](auto& x) { return sum(mul(reshape(x, {12}), reshape(x, {12}))); });
    check1("slice", [](auto& x) { return sum(mul(slice(x, 1, 1, 2), slice(x, 1, 1, 2))); });
    check2("concat", [](auto& x, auto& y) {
      auto c = concat<double>({x, y}, 0);
      return sum(mul(c, c));
    });
    check1("gather_rows", [](auto& x) {
      auto g = gather_rows(x, {2, 0, 2});
      return sum(mul(g, g));
    });
    check1("scatter_rows", [](auto& x) {
      auto s = scatter_rows(x, {4, 1, 4}, 6);
      return sum(mul(s, s));
    });
  }
}

TEST_CASE("gradcheck: sinc_sqrt and versine_ratio near zero") {
  for (double t0 : {1e-10, 1e-6, 9e-5, 1.1e-4, 1e-2}) {
    std::vector<Tensor<double>> ins{Tensor<double>::scalar(t0).set_requires_grad()};
    auto rep = gradcheck<double>(
        [](std::vector<Tensor<double>>& v) { return add(sinc_sqrt(v[0]), versine_ratio(v[0])); },
        ins, 1e-8);
    INFO("t0 = " << t0 << " rel " << rep.max_rel_err);
    CHECK(rep.max_rel_err <= 2e-4);  // FD noise at eps 1e-8 dominates
  }
}

TEST_CASE("gradcheck: conv2d and pooling") {
  Rng rng(5);
  auto x = rand_tensor({2, 6, 6}, rng);
  auto w = rand_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  auto b = rand_tensor({3}, rng, -0.1, 0.1);
  std::vector<Tensor<double>> ins{x.clone_values().set_requires_grad(),
                                  w.clone_values().set_requires_grad(),
                                  b.clone_values().set_requires_grad()};
  auto rep = gradcheck<double>(
      [](std::vector<Tensor<double>>& v) {
        auto y = conv2d(v[0], v[1], v[2], Index(2), Index(1));
        return sum(mul(y, y));
      },
      ins);
  INFO("conv2d rel err " << rep.max_rel_err);
  CHECK(rep.max_rel_err <= 1e-5);

  std::vector<Tensor<double>> ins2{x.clone_values().set_requires_grad()};
  auto rep2 = gradcheck<double>(
      [](std::vector<Tensor<double>>& v) {
        auto y = avgpool2d(v[0], Index(3), Index(3), Index(3), Index(3));
        auto g = global_avgpool(v[0]);
        return add(sum(mul(y, y)), sum(mul(g, g)));
      },
      ins2);
  CHECK(rep2.max_rel_err <= 1e-5);
}

TEST_CASE("gradcheck: random 3-layer MLP at 1e-6") {
  Rng rng(17);
  ParamRegistry<double> reg;
  Linear<double> l1(reg, "l1", 6, 8, rng);
  Linear<double> l2(reg, "l2", 8, 8, rng);
  Linear<double> l3(reg, "l3", 8, 1, rng);
  auto x = rand_tensor({6}, rng);

  std::vector<Tensor<double>> ins;
  ins.push_back(x.clone_values().set_requires_grad());
  for (auto& p : reg.all()) ins.push_back(p);

  auto rep = gradcheck<double>(
      [&](std::vector<Tensor<double>>& v) {
        // relu shifted into the smooth region to avoid kink crossings under FD
        auto h1 = relu(add_const(l1(v[0]), 0.3));
        auto h2 = relu(add_const(l2(h1), 0.3));
        return sum(l3(h2));
      },
      ins);
  INFO("mlp rel err " << rep.max_rel_err << " at " << rep.worst);
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("gradcheck on linear function is near machine precision") {
  auto x = Tensor<double>::from({3}, {0.4, -0.2, 1.0});
  std::vector<Tensor<double>> ins{x.set_requires_grad()};
  auto rep = gradcheck<double>(
      [](std::vector<Tensor<double>>& v) { return sum(scale(v[0], 3.0)); }, ins);
  CHECK(rep.max_rel_err <= 1e-9);
}

TEST_CASE("gradcheck with detach checks only the live path") {
  auto x = Tensor<double>::from({2}, {0.8, 1.2});
  std::vector<Tensor<double>> ins{x.set_requires_grad()};
  // f = sum(x) + sum(detach(x)^2): FD sees d/dx = 1 + 2x, autodiff sees 1 of
  // the live path, so check the live-path-only variant where the detached
  // branch is held fixed.
  Tensor<double> frozen_sq = [&] {
    auto d = detach(x);
    return mul(d, d);
  }();
  auto rep = gradcheck<double>(
      [&](std::vector<Tensor<double>>& v) { return add(sum(v[0]), sum(frozen_sq)); }, ins);
  CHECK(rep.max_rel_err <= 1e-9);
}

TEST_CASE("forward deterministic for fixed seed") {
  auto run = [] {
    Rng rng(42);
    auto a = rand_tensor({4, 4}, rng);
    auto b = rand_tensor({4, 4}, rng);
    auto y = matmul(relu(a), b);
    return y.values();
  };
  auto v1 = run();
  auto v2 = run();
  CHECK(std::memcmp(v1.data(), v2.data(), v1.size() * sizeof(double)) == 0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto w = Tensor<double>::from({2}, {1.0, -2.0});
  w.set_name("w").set_requires_grad();
  w.ensure_grad();
  AdamState<double> adam(AdamConfig<double>{0.1, 0.9, 0.999, 1e-8});
  std::vector<Tensor<double>> ps{w};
  adam.init(ps);
  adam.step_update(ps);
  CHECK(w.at(0) == 1.0);
  CHECK(w.at(1) == -2.0);
}

TEST_CASE("adam: single step on w^2 decreases w") {
  auto w = Tensor<double>::scalar(1.0);
  w.set_name("w").set_requires_grad();
  AdamState<double> adam(AdamConfig<double>{0.1, 0.9, 0.999, 1e-8});
  std::vector<Tensor<double>> ps{w};
  adam.init(ps);
  Tape<double> tape;
  auto loss = mul(w, w);
  tape.backward(loss);
  adam.step_update(ps);
  CHECK(w.value() < 1.0);
  CHECK(w.value() > 0.0);
}

TEST_CASE("adam: 200 steps reach the quadratic minimum") {
  // f(w) = (w - w*)^2 with w* = 0.7; closed-form minimum
  const double wstar = 0.7;
  auto w = Tensor<double>::scalar(-1.3);
  w.set_name("w").set_requires_grad();
  AdamState<double> adam(AdamConfig<double>{0.05, 0.9, 0.999, 1e-8});
  std::vector<Tensor<double>> ps{w};
  adam.init(ps);
  for (int i = 0; i < 200; ++i) {
    w.zero_grad();
    Tape<double> tape;
    auto d = add_const(w, -wstar);
    auto loss = mul(d, d);
    tape.backward(loss);
    adam.step_update(ps);
  }
  CHECK(std::fabs(w.value() - wstar) < 1e-3);
}

TEST_CASE("adam: NaN gradient errors with the parameter name") {
  auto w = Tensor<double>::scalar(1.0);
  w.set_name("bad_param").set_requires_grad();
  w.ensure_grad();
  w.grad()[0] = std::nan("");
  AdamState<double> adam;
  std::vector<Tensor<double>> ps{w};
  adam.init(ps);
  CHECK_THROWS_WITH_AS(adam.step_update(ps), doctest::Contains("bad_param"), Error);
}

TEST_CASE("grad table routes leaf gradients for ordered merging") {
  auto w = Tensor<double>::from({2}, {2.0, 3.0});
  w.set_name("w").set_requires_grad();
  GradTable<double> t1, t2;
  {
    Tape<double> tape;
    auto loss = sum(mul(w, w));
    tape.backward(loss, &t1);
  }
  {
    Tape<double> tape;
    auto loss = sum(mul(w, w));
    tape.backward(loss, &t2);
  }
  CHECK_FALSE(w.has_grad());  // shared buffer untouched
  const auto* g1 = t1.find(w);
  REQUIRE(g1 != nullptr);
  CHECK((*g1)[0] == doctest::Approx(4.0));
  CHECK((*g1)[1] == doctest::Approx(6.0));
  const auto* g2 = t2.find(w);
  REQUIRE(g2 != nullptr);
  CHECK((*g2)[0] == doctest::Approx(4.0));
}

TEST_CASE("nan detection") {
  auto t = Tensor<double>::from({2}, {1.0, std::nan("")});
  CHECK_FALSE(t.finite());
  auto u = Tensor<double>::from({2}, {1.0, 2.0});
  CHECK(u.finite());
}
