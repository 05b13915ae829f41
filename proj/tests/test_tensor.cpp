#include <doctest.h>

#include <cmath>

#include "paraformer/errors.hpp"
#include "paraformer/grad_check.hpp"
#include "paraformer/ops.hpp"
#include "paraformer/rng.hpp"
#include "paraformer/tensor.hpp"

using namespace paraformer;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.normal();
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Independent oracle: naive i-j-k triple loop, k accumulated in increasing
// order (the same order the implementation documents).
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const int r = a.dim(0), k = a.dim(1), c = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(r) * c, 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(kk, j);
      out[static_cast<std::size_t>(i) * c + j] = acc;
    }
  return Tensor::from_data({r, c}, std::move(out));
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("matmul identity and zero") {
    Tensor i2 = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {3.5, -2, 7, 0.25});
    Tensor out = matmul(i2, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.data()[i] == m.data()[i]);

    Tensor z = Tensor::zeros({2, 1});
    Tensor zz = matmul(m, z);
    CHECK(zz.data()[0] == 0.0);
    CHECK(zz.data()[1] == 0.0);
  }

  TEST_CASE("matmul matches the triple-loop oracle bitwise") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = random_tensor({3, 4}, rng);
      Tensor b = random_tensor({4, 2}, rng);
      Tensor got = matmul(a, b);
      Tensor want = matmul_oracle(a, b);
      for (std::size_t i = 0; i < got.numel(); ++i) {
        CHECK(got.data()[i] == want.data()[i]);  // identical accumulation order
      }
    }
  }

  TEST_CASE("matmul dimension mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
  }

  TEST_CASE("softmax_rows basics") {
    Tensor x = Tensor::from_data({1, 3}, {0, 0, 0});
    Tensor y = softmax_rows(x);
    for (int j = 0; j < 3; ++j) CHECK(y.data()[j] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Tensor x2 = Tensor::from_data({1, 2}, {0.0, std::log(2.0)});
    Tensor y2 = softmax_rows(x2);
    CHECK(y2.data()[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(y2.data()[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));

    Tensor big = Tensor::from_data({1, 2}, {1000.0, 1000.0});
    Tensor yb = softmax_rows(big);
    CHECK(yb.data()[0] == doctest::Approx(0.5));
    CHECK(all_finite(yb));
  }

  TEST_CASE("softmax rows sum to one, including magnitude 1e3 entries") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor x = random_tensor({4, 5}, rng);
      double* d = x.data();
      for (std::size_t i = 0; i < x.numel(); ++i) d[i] *= 1000.0;
      Tensor y = softmax_rows(x);
      REQUIRE(all_finite(y));
      for (int i = 0; i < 4; ++i) {
        double s = 0.0;
        for (int j = 0; j < 5; ++j) {
          CHECK(y.at(i, j) >= 0.0);
          s += y.at(i, j);
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }

  TEST_CASE("layer_norm constant row collapses to beta") {
    Tensor x = Tensor::full({2, 4}, 3.25);
    Tensor y = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}));
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(0.0));
  }

  TEST_CASE("layer_norm on zero-mean unit-variance row is near-identity as eps -> 0") {
    Tensor x = Tensor::from_data({1, 2}, {1.0, -1.0});
    Tensor y = layer_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12);
    CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(y.data()[1] == doctest::Approx(-1.0).epsilon(1e-9));
  }

  TEST_CASE("layer_norm matches a scalar-loop oracle") {
    Rng rng(13);
    Tensor x = random_tensor({3, 6}, rng);
    Tensor gamma = random_tensor({6}, rng);
    Tensor beta = random_tensor({6}, rng);
    const double eps = 1e-5;
    Tensor y = layer_norm(x, gamma, beta, eps);
    for (int i = 0; i < 3; ++i) {
      double mean = 0.0;
      for (int j = 0; j < 6; ++j) mean += x.at(i, j);
      mean /= 6;
      double var = 0.0;
      for (int j = 0; j < 6; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
      var /= 6;
      for (int j = 0; j < 6; ++j) {
        const double want = gamma.data()[j] * (x.at(i, j) - mean) / std::sqrt(var + eps) +
                            beta.data()[j];
        CHECK(std::abs(y.at(i, j) - want) < 1e-10);
      }
    }
  }

  TEST_CASE("layer_norm rows have zero mean and unit variance") {
    Rng rng(17);
    Tensor x = random_tensor({5, 8}, rng);
    Tensor y = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}));
    for (int i = 0; i < 5; ++i) {
      double mean = 0.0;
      for (int j = 0; j < 8; ++j) mean += y.at(i, j);
      mean /= 8;
      CHECK(std::abs(mean) < 1e-8);
      double var = 0.0;
      for (int j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
      var /= 8;
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps-limited
    }
  }

  TEST_CASE("activation analytic points and unknown kind") {
    CHECK(activation_scalar(0.0, Activation::Sigmoid) == doctest::Approx(0.5));
    CHECK(activation_scalar(0.0, Activation::Gelu) == doctest::Approx(0.0));
    CHECK_THROWS_AS(activation_from_string("relu"), ConfigError);
  }

  TEST_CASE("activation gradients match finite differences") {
    Rng rng(19);
    for (Activation kind : {Activation::Sigmoid, Activation::Gelu}) {
      Tensor x = random_tensor({2, 3}, rng);
      const double err = grad_check([kind](const Tensor& t) { return sum(activation(t, kind)); }, x);
      CHECK(err < 1e-6);
    }
  }

  TEST_CASE("backward on sum(W*x) gives the broadcast-of-x gradient") {
    Tensor w = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    Tensor x = Tensor::from_data({2, 1}, {0.5, -1.5});
    sum(matmul(w, x)).backward();
    const std::vector<double> g = w.grad();
    for (int i = 0; i < 3; ++i) {
      CHECK(g[static_cast<std::size_t>(i) * 2 + 0] == 0.5);
      CHECK(g[static_cast<std::size_t>(i) * 2 + 1] == -1.5);
    }
  }

  TEST_CASE("loss independent of a tracked tensor leaves its grad exactly zero") {
    Tensor used = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor unused = Tensor::from_data({2}, {3.0, 4.0}, true);
    sum(mul(used, used)).backward();
    for (double v : unused.grad()) CHECK(v == 0.0);
    const std::vector<double> g = used.grad();
    CHECK(g[0] == 2.0);
    CHECK(g[1] == 4.0);
  }

  TEST_CASE("gradient accumulates additively across fan-out") {
    Tensor x = Tensor::from_data({2}, {1.0, -2.0}, true);
    sum(add(x, x)).backward();
    for (double v : x.grad()) CHECK(v == 2.0);
  }

  TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor y = add(x, x);
    CHECK_THROWS_AS(y.backward(), ShapeError);
  }

  TEST_CASE("grad_check exact quadratic") {
    Rng rng(23);
    Tensor x = random_tensor({5}, rng);
    const double err = grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x);
    CHECK(err < 1e-8);
  }

  TEST_CASE("grad_check matmul chain") {
    Rng rng(29);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 4}, rng);
    const double err = grad_check(
        [&b](const Tensor& t) { return sum(matmul(matmul(t, b), transpose(t))); }, a);
    CHECK(err < 1e-6);
  }

  TEST_CASE("grad_check covers every registered differentiable op") {
    Rng rng(31);
    auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f, Shape shape) {
      Tensor x = random_tensor(shape, rng);
      const double err = grad_check(f, x);
      INFO(name);
      CHECK(err < 1e-6);
    };
    Tensor other = random_tensor({4, 3}, rng);
    Tensor bias = random_tensor({3}, rng);
    Tensor gamma = random_tensor({4}, rng);
    Tensor beta = random_tensor({4}, rng);
    check("matmul", [&](const Tensor& t) { return sum(matmul(t, other)); }, {3, 4});
    check("add", [&](const Tensor& t) { return sum(add(t, mul(t, t))); }, {3, 3});
    check("add_rowwise_x", [&](const Tensor& t) { return sum(add_rowwise(t, bias)); }, {4, 3});
    check("scale", [&](const Tensor& t) { return sum(scale(t, -2.5)); }, {2, 3});
    check("transpose", [&](const Tensor& t) { return sum(matmul(transpose(t), t)); }, {3, 4});
    check("softmax_rows", [&](const Tensor& t) { return sum(mul(softmax_rows(t), softmax_rows(t))); },
          {3, 4});
    check("layer_norm", [&](const Tensor& t) { return sum(mul(layer_norm(t, gamma, beta), t)); },
          {5, 4});
    check("slice+reshape", [&](const Tensor& t) { return sum(reshape(slice_row(t, 1), {4})); },
          {3, 4});
    check("prepend_row", [&](const Tensor& t) { return sum(prepend_row(bias, t)); }, {2, 3});
    check("concat_cols", [&](const Tensor& t) { return sum(concat_cols({t, mul(t, t)})); }, {3, 2});
    check("cross_entropy", [&](const Tensor& t) { return cross_entropy(t, {1, 0, 2}); }, {3, 4});
  }

  TEST_CASE("rowwise bias gradient matches finite differences") {
    Rng rng(37);
    Tensor x = random_tensor({4, 3}, rng);
    Tensor bias = random_tensor({3}, rng);
    const double err =
        grad_check([&x](const Tensor& b) { return sum(mul(add_rowwise(x, b), add_rowwise(x, b))); },
                   bias);
    CHECK(err < 1e-6);
  }

  TEST_CASE("public ops keep finite inputs finite") {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor({4, 6}, rng);
      Tensor w = random_tensor({6, 6}, rng);
      Tensor y = softmax_rows(matmul(x, w));
      Tensor z = layer_norm(matmul(y, transpose(random_tensor({6, 6}, rng))),
                            Tensor::full({6}, 1.0), Tensor::zeros({6}));
      CHECK(all_finite(y));
      CHECK(all_finite(z));
    }
  }

  TEST_CASE("graph is cleared after backward") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor loss = sum(mul(x, x));
    loss.backward();
    CHECK(loss.node()->parents.empty());
    // second backward over the cleared graph only seeds the loss itself
    x.zero_grad();
    loss.backward();
    for (double v : x.grad()) CHECK(v == 0.0);
  }
}
