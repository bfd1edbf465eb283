#include <doctest.h>

#include <sstream>

#include "../support.hpp"

using namespace skim;
using skim::test::random_tensor;

TEST_CASE("primitive fixed points") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(tanh(Tensor::scalar(0.0)).item() == 0.0);
  const Tensor s = slice(Tensor::from({1, 2, 3, 4, 5}), 0, 1, 4);
  CHECK(std::vector<double>(s.data().begin(), s.data().end()) == std::vector<double>{2, 3, 4});
}

TEST_CASE("matmul by identity returns the operand") {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({3, 5}, rng);
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor r = matmul(eye, a);
  CHECK(skim::test::max_abs_diff(r.data(), a.data()) == 0.0);
}

TEST_CASE("shape mismatch names the primitive") {
  const Tensor a({2, 3}), b({2, 3});
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), ShapeError);
}

TEST_CASE("non-finite output raises a numeric fault") {
  CHECK_THROWS_AS(log(Tensor::from({0.0})), NumericFault);
}

TEST_CASE("backward of x*x at 3 gives 6") {
  Tensor x = Tensor::scalar(3.0, true);
  mul(x, x).backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward errors") {
  Tensor x = Tensor::from({1.0, 2.0}, true);
  CHECK_THROWS(square(x).backward());
  Tensor loss = sum(square(x));
  loss.backward();
  CHECK_THROWS(loss.backward());
}

TEST_CASE("gradients accumulate over branches") {
  Tensor x = Tensor::from({0.3, -0.7}, true);
  Tensor c = tanh(x);
  mean(add(mul_scalar(c, 2.0), square(c))).backward();
  for (std::size_t i = 0; i < 2; ++i) {
    const double t = std::tanh(x.data()[i]);
    const double expected = 0.5 * (2.0 + 2.0 * t) * (1.0 - t * t);
    CHECK(x.grad()[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("sum(sigmoid(Wx)) gradient matches finite differences") {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({4, 1}, rng);
  Tensor w = random_tensor({4, 4}, rng, 1.0, true);
  sum(sigmoid(matmul(w, x))).backward();
  const auto fd = finite_difference_gradient([&](const Tensor& wv) { return sum(sigmoid(matmul(wv, x))); }, w);
  CHECK(relative_error(w.grad(), fd) < 1e-6);
}

TEST_CASE("finite_difference_gradient examples") {
  const auto g = finite_difference_gradient([](const Tensor& x) { return sum(square(x)); }, Tensor::from({3.0}));
  CHECK(std::abs(g[0] - 6.0) < 1e-9);

  const auto t = finite_difference_gradient([](const Tensor& x) { return sum(tanh(x)); }, Tensor::from({0.0, 1.0}));
  CHECK(t[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(t[1] == doctest::Approx(1.0 - std::tanh(1.0) * std::tanh(1.0)).epsilon(1e-9));
  CHECK(t[1] == doctest::Approx(0.41997).epsilon(1e-4));

  const auto z = finite_difference_gradient([](const Tensor&) { return Tensor::scalar(4.0); }, Tensor::from({1, 2}));
  CHECK(z == std::vector<double>{0.0, 0.0});

  CHECK_THROWS_AS(finite_difference_gradient([](const Tensor& x) { return x; }, Tensor::from({1, 2})), ShapeError);
}

TEST_CASE("no-grad guard suppresses the tape") {
  Tensor x = Tensor::from({1.0}, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(square(x).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(square(x).requires_grad());
}

TEST_CASE("evaluation is deterministic") {
  std::mt19937_64 r1(5), r2(5);
  const Tensor a = random_tensor({6, 7}, r1), b = random_tensor({7, 3}, r1);
  const Tensor c = random_tensor({6, 7}, r2), d = random_tensor({7, 3}, r2);
  const Tensor x = tanh(matmul(a, b)), y = tanh(matmul(c, d));
  CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST_CASE("gemm counts m*n*k multiply-accumulates") {
  reset_mac_count();
  (void)matmul(Tensor({3, 4}, 1.0), Tensor({4, 5}, 1.0));
  CHECK(mac_count() == 60);
}

TEST_CASE("primitive gradients match finite differences") {
  std::mt19937_64 rng(21);
  const Tensor b = random_tensor({3, 4}, rng);
  const std::vector<std::function<Tensor(const Tensor&)>> fs = {
      [](const Tensor& x) { return sum(relu(x)); },
      [](const Tensor& x) { return sum(sqrt(add_scalar(square(x), 1.0))); },
      [](const Tensor& x) { return sum(log(add_scalar(square(x), 0.5))); },
      [&](const Tensor& x) { return sum(mul(x, b)); },
      [&](const Tensor& x) { return sum(square(matmul_nt(x, b))); },
      [](const Tensor& x) { return sum(square(transpose2d(x))); },
      [](const Tensor& x) { return sum(tanh(concat({x, square(x)}, 1))); },
      [](const Tensor& x) { return sum(square(pad_rows(reshape(x, {4, 3}), 2))); },
      [](const Tensor& x) { return sum(sigmoid(swap_axes01(reshape(x, {2, 3, 2})))); },
      [](const Tensor& x) { return mean(sub(x, square(x))); },
  };
  for (std::size_t i = 0; i < fs.size(); ++i) {
    CAPTURE(i);
    Tensor x = random_tensor({3, 4}, rng, 1.0, true);
    fs[i](x).backward();
    CHECK(relative_error(x.grad(), finite_difference_gradient(fs[i], x)) < 1e-6);
  }
}

TEST_CASE("tensor serialization round trip") {
  std::mt19937_64 rng(8);
  const Tensor t = random_tensor({2, 3, 4}, rng);
  std::stringstream s;
  write_tensor(s, t);
  CHECK(s.str().size() == serialized_size(t));
  const Tensor r = read_tensor(s);
  CHECK(r.shape() == t.shape());
  CHECK(std::equal(r.data().begin(), r.data().end(), t.data().begin()));
}
