#include "geossl/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "support/gradcheck.hpp"

using namespace geossl;
using DTensor = TensorT<double>;

namespace {

// Independent triple-loop product in long double, j-inner-last order.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (int kk = 0; kk < k; ++kk)
        acc += static_cast<long double>(a[static_cast<std::size_t>(i) * k + kk]) *
               b[static_cast<std::size_t>(kk) * n + j];
      c[static_cast<std::size_t>(i) * n + j] = static_cast<double>(acc);
    }
  return c;
}

DTensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad) {
  DTensor t = DTensor::zeros(std::move(shape), requires_grad);
  for (auto& v : *t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST(Matmul, IdentityCase) {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto c = matmul(a, eye);
  EXPECT_EQ(c.shape, (std::vector<int>{2, 2}));
  EXPECT_FLOAT_EQ((*c.data)[0], 1.0f);
  EXPECT_FLOAT_EQ((*c.data)[1], 2.0f);
  EXPECT_FLOAT_EQ((*c.data)[2], 3.0f);
  EXPECT_FLOAT_EQ((*c.data)[3], 4.0f);
}

TEST(Matmul, MatchesNaiveOracle) {
  auto a = DTensor::from({2, 2}, {1, 2, 3, 4});
  auto b = DTensor::from({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  const auto expected = naive_matmul(*a.data, *b.data, 2, 2, 2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ((*c.data)[i], expected[i]);
  EXPECT_DOUBLE_EQ((*c.data)[0], 19.0);
  EXPECT_DOUBLE_EQ((*c.data)[3], 50.0);

  Rng rng(7);
  auto x = random_tensor({5, 4}, rng, false);
  auto y = random_tensor({4, 6}, rng, false);
  auto z = matmul(x, y);
  const auto oracle = naive_matmul(*x.data, *y.data, 5, 4, 6);
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR((*z.data)[i], oracle[i], 1e-12);
}

TEST(Matmul, ZeroAnnihilator) {
  Rng rng(3);
  auto a = random_tensor({3, 4}, rng, false);
  auto zeros = DTensor::zeros({4, 2});
  auto c = matmul(a, zeros);
  for (double v : *c.data) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  EXPECT_THROW(matmul(a, b), std::invalid_argument);
}

TEST(SoftmaxTemp, SymmetricLogits) {
  auto p = softmax_temp(Tensor::from({2}, {0, 0}), 1.0f);
  EXPECT_FLOAT_EQ((*p.data)[0], 0.5f);
  EXPECT_FLOAT_EQ((*p.data)[1], 0.5f);
}

TEST(SoftmaxTemp, ClosedFormTwoThirds) {
  auto p = softmax_temp(DTensor::from({2}, {std::log(2.0), 0.0}), 1.0);
  EXPECT_NEAR((*p.data)[0], 2.0 / 3.0, 1e-9);
  EXPECT_NEAR((*p.data)[1], 1.0 / 3.0, 1e-9);
}

TEST(SoftmaxTemp, SharpTemperatureLimit) {
  auto p = softmax_temp(DTensor::from({2}, {1.0, 0.0}), 0.01);
  EXPECT_GE((*p.data)[0], 1.0 - 1e-4);
}

TEST(SoftmaxTemp, InvalidTauThrows) {
  auto x = Tensor::zeros({2});
  EXPECT_THROW(softmax_temp(x, 0.0f), std::invalid_argument);
  EXPECT_THROW(softmax_temp(x, -1.0f), std::invalid_argument);
}

TEST(SoftmaxTemp, RowsSumToOneAndPositive) {
  Rng rng(11);
  auto x = random_tensor({6, 9}, rng, false);
  auto p = softmax_temp(x, 0.5);
  for (int r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (int j = 0; j < 9; ++j) {
      const double v = (*p.data)[static_cast<std::size_t>(r) * 9 + j];
      EXPECT_GT(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(LayerNorm, ConstantSliceGivesZeros) {
  auto x = Tensor::full({4}, 3.25f);
  auto gamma = Tensor::full({4}, 1.0f);
  auto beta = Tensor::zeros({4});
  auto y = layer_norm(x, gamma, beta, 1e-5f);
  for (float v : *y.data) EXPECT_NEAR(v, 0.0f, 1e-6f);
}

TEST(LayerNorm, UnitVarianceArithmetic) {
  auto x = DTensor::from({2}, {1.0, -1.0});
  auto y = layer_norm(x, DTensor::full({2}, 1.0), DTensor::zeros({2}), 1e-12);
  EXPECT_NEAR((*y.data)[0], 1.0, 1e-5);
  EXPECT_NEAR((*y.data)[1], -1.0, 1e-5);
}

TEST(LayerNorm, ZeroGammaCollapsesToBeta) {
  Rng rng(5);
  auto x = random_tensor({3, 5}, rng, false);
  auto y = layer_norm(x, DTensor::zeros({5}), DTensor::full({5}, 0.75), 1e-6);
  for (double v : *y.data) EXPECT_DOUBLE_EQ(v, 0.75);
}

TEST(LayerNorm, DimensionMismatchThrows) {
  auto x = Tensor::zeros({2, 4});
  EXPECT_THROW(layer_norm(x, Tensor::zeros({3}), Tensor::zeros({4}), 1e-5f), std::invalid_argument);
}

TEST(Gelu, PointValues) {
  auto y0 = gelu(Tensor::from({1}, {0.0f}));
  EXPECT_EQ((*y0.data)[0], 0.0f);

  auto y10 = gelu(DTensor::from({1}, {10.0}));
  EXPECT_NEAR((*y10.data)[0], 10.0, 1e-6);

  // x * Phi(1) via the error function.
  const double oracle = 1.0 * 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  auto y1 = gelu(DTensor::from({1}, {1.0}));
  EXPECT_NEAR((*y1.data)[0], oracle, 1e-3);
  EXPECT_NEAR(oracle, 0.8413, 1e-3);
}

TEST(CrossEntropy, PerfectMatchIsZero) {
  auto t = Tensor::from({2}, {1, 0});
  auto loss = cross_entropy(t, t);
  EXPECT_NEAR(loss.item(), 0.0f, 1e-6f);
}

TEST(CrossEntropy, ClosedFormLn2) {
  auto t = DTensor::from({2}, {1, 0});
  auto p = DTensor::from({2}, {0.5, 0.5});
  EXPECT_NEAR(cross_entropy(t, p).item(), std::log(2.0), 1e-9);
}

TEST(CrossEntropy, UniformEntropy) {
  auto u = DTensor::from({2}, {0.5, 0.5});
  EXPECT_NEAR(cross_entropy(u, u).item(), std::log(2.0), 1e-9);
}

TEST(CrossEntropy, NonSimplexThrows) {
  auto bad = Tensor::from({2}, {0.7f, 0.7f});
  auto ok = Tensor::from({2}, {0.5f, 0.5f});
  EXPECT_THROW(cross_entropy(bad, ok), std::invalid_argument);
  EXPECT_THROW(cross_entropy(ok, bad), std::invalid_argument);
}

TEST(CrossEntropy, GibbsInequality) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 6;
    std::vector<double> pv(k), qv(k);
    double ps = 0, qs = 0;
    for (int j = 0; j < k; ++j) {
      pv[j] = rng.uniform(1e-3, 1.0);
      qv[j] = rng.uniform(1e-3, 1.0);
      ps += pv[j];
      qs += qv[j];
    }
    for (int j = 0; j < k; ++j) {
      pv[j] /= ps;
      qv[j] /= qs;
    }
    auto p = DTensor::from({k}, pv);
    auto q = DTensor::from({k}, qv);
    const double ce_pq = cross_entropy(p, q).item();
    const double entropy = cross_entropy(p, p).item();
    EXPECT_GE(ce_pq, entropy - 1e-6);
  }
}

TEST(Backward, SquareDerivative) {
  auto x = Tensor::from({1}, {3.0f}, true);
  auto y = mul(x, x);
  backward(y);
  EXPECT_FLOAT_EQ((*x.grad)[0], 6.0f);
}

TEST(Backward, ConstantLeafGetsZeroGrad) {
  auto x = Tensor::from({1}, {3.0f}, true);
  auto c = Tensor::from({1}, {2.0f});
  auto y = mul(c, c);  // x does not participate
  backward(y);
  EXPECT_FLOAT_EQ((*x.grad)[0], 0.0f);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = Tensor::zeros({2, 2}, true);
  auto y = add(x, x);
  EXPECT_THROW(backward(y), std::invalid_argument);
}

TEST(Backward, MicroCompositeMatchesFiniteDifferences) {
  // matmul -> layer_norm -> softmax -> cross_entropy, float, step 1e-4.
  Rng rng(17);
  auto a = Tensor::zeros({3, 4}, true);
  auto b = Tensor::zeros({4, 4}, true);
  auto gamma = Tensor::full({4}, 1.0f, true);
  auto beta = Tensor::zeros({4}, true);
  for (auto* t : {&a, &b, &gamma, &beta})
    for (auto& v : *t->data) v += static_cast<float>(rng.uniform(-0.5, 0.5));
  auto target = Tensor::from({3, 4}, {0.25f, 0.25f, 0.25f, 0.25f, 0.7f, 0.1f, 0.1f, 0.1f,
                                      0.1f, 0.2f, 0.3f, 0.4f});

  auto make_loss = [&]() {
    auto h = layer_norm(matmul(a, b), gamma, beta, 1e-5f);
    auto p = softmax_temp(h, 1.0f);
    return cross_entropy(target, p);
  };
  const double err = testsupport::max_rel_grad_error<float>({&a, &b, &gamma, &beta}, make_loss,
                                                            1e-4, 1.0);
  EXPECT_LE(err, 1e-3);
}

TEST(Backward, DeterministicRepeatIsBitwise) {
  Rng rng(23);
  auto a = DTensor::zeros({4, 4}, true);
  auto b = DTensor::zeros({4, 4}, true);
  for (auto* t : {&a, &b})
    for (auto& v : *t->data) v = rng.uniform(-1.0, 1.0);
  auto run = [&]() {
    a.zero_grad();
    b.zero_grad();
    backward(reduce_mean(gelu(matmul(a, b))));
    return std::make_pair(*a.grad, *b.grad);
  };
  const auto first = run();
  const auto second = run();
  EXPECT_EQ(first.first, second.first);
  EXPECT_EQ(first.second, second.second);
}

// Per-kernel randomized gradient checks in double precision.
TEST(GradCheck, AllKernels) {
  Rng rng(29);
  const double step = 1e-6, floor = 1e-3, tol = 1e-5;

  {
    auto a = random_tensor({3, 4}, rng, true);
    auto b = random_tensor({4, 5}, rng, true);
    auto loss = [&]() { return reduce_mean(matmul(a, b)); };
    EXPECT_LE(testsupport::max_rel_grad_error<double>({&a, &b}, loss, step, floor), tol);
  }
  {
    auto x = random_tensor({4, 6}, rng, true);
    auto v = random_tensor({1, 6}, rng, true);
    auto loss = [&]() { return reduce_mean(gelu(add_rowvec(x, v))); };
    EXPECT_LE(testsupport::max_rel_grad_error<double>({&x, &v}, loss, step, floor), tol);
  }
  {
    auto x = random_tensor({3, 7}, rng, true);
    auto loss = [&]() { return reduce_mean(mul(softmax_temp(x, 0.3), x)); };
    EXPECT_LE(testsupport::max_rel_grad_error<double>({&x}, loss, step, floor), tol);
  }
  {
    auto x = random_tensor({3, 5}, rng, true);
    auto gamma = random_tensor({5}, rng, true);
    auto beta = random_tensor({5}, rng, true);
    auto loss = [&]() { return reduce_mean(gelu(layer_norm(x, gamma, beta, 1e-6))); };
    EXPECT_LE(testsupport::max_rel_grad_error<double>({&x, &gamma, &beta}, loss, step, floor), tol);
  }
  {
    auto x = random_tensor({4, 6}, rng, true);
    auto target = softmax_temp(random_tensor({4, 6}, rng, false), 1.0);
    auto loss = [&]() { return cross_entropy(target, softmax_temp(x, 0.7)); };
    EXPECT_LE(testsupport::max_rel_grad_error<double>({&x}, loss, step, floor), tol);
  }
  {
    auto x = random_tensor({6, 4}, rng, true);
    auto row = random_tensor({1, 4}, rng, true);
    const std::vector<int> idx = {1, 3, 3, 5};
    auto loss = [&]() {
      auto replaced = replace_rows(x, row, {0, 2});
      auto gathered = gather_rows(replaced, idx);
      return reduce_mean(mul(gathered, gathered));
    };
    EXPECT_LE(testsupport::max_rel_grad_error<double>({&x, &row}, loss, step, floor), tol);
  }
  {
    auto x = random_tensor({5, 6}, rng, true);
    auto loss = [&]() {
      auto top = slice_rows(x, 0, 2);
      auto bottom = slice_rows(x, 2, 3);
      auto left = slice_cols(x, 0, 3);
      auto right = slice_cols(x, 3, 3);
      auto a = matmul(top, transpose2d(bottom));
      auto b = matmul(transpose2d(left), right);
      return add(reduce_mean(a), reduce_mean(gelu(b)));
    };
    EXPECT_LE(testsupport::max_rel_grad_error<double>({&x}, loss, step, floor), tol);
  }
  {
    auto grid = random_tensor({9, 4}, rng, true);  // 3x3 -> 5x5 interpolation
    auto loss = [&]() { return reduce_mean(mul(interp_grid_rows(grid, 3, 5), interp_grid_rows(grid, 3, 5))); };
    EXPECT_LE(testsupport::max_rel_grad_error<double>({&grid}, loss, step, floor), tol);
  }
  {
    auto a = random_tensor({2, 5}, rng, true);
    auto b = random_tensor({3, 5}, rng, true);
    auto c = random_tensor({5, 3}, rng, true);
    auto loss = [&]() {
      auto rows = concat_rows<double>({a, b});
      auto cols = concat_cols<double>({transpose2d(rows), c});
      return reduce_mean(mul(cols, cols));
    };
    EXPECT_LE(testsupport::max_rel_grad_error<double>({&a, &b, &c}, loss, step, floor), tol);
  }
}

TEST(Sgd, OneStepArithmetic) {
  auto theta = Tensor::from({1}, {1.0f}, true);
  (*theta.grad)[0] = 0.5f;
  SgdT<float> opt(0.1f, 0.0f);
  opt.step({&theta});
  EXPECT_FLOAT_EQ((*theta.data)[0], 0.95f);
  EXPECT_FLOAT_EQ((*theta.grad)[0], 0.0f);  // cleared
}

TEST(Sgd, ZeroGradientLeavesParamUnchanged) {
  auto theta = Tensor::from({1}, {2.5f}, true);
  SgdT<float> opt(0.1f, 0.9f);
  opt.step({&theta});
  EXPECT_FLOAT_EQ((*theta.data)[0], 2.5f);
}

TEST(Sgd, MomentumHandUnrolled) {
  auto theta = Tensor::from({1}, {0.0f}, true);
  SgdT<float> opt(0.1f, 0.9f);
  (*theta.grad)[0] = 1.0f;
  opt.step({&theta});
  EXPECT_FLOAT_EQ((*theta.data)[0], -0.1f);
  (*theta.grad)[0] = 1.0f;
  opt.step({&theta});
  EXPECT_FLOAT_EQ((*theta.data)[0], -0.29f);
}

TEST(Sgd, InvalidHyperparametersThrow) {
  EXPECT_THROW(SgdT<float>(0.0f, 0.0f), std::invalid_argument);
  EXPECT_THROW(SgdT<float>(0.1f, 1.0f), std::invalid_argument);
  EXPECT_THROW(SgdT<float>(0.1f, -0.1f), std::invalid_argument);
}

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(Tensor::zeros({0, 2}), std::invalid_argument);
  auto t = Tensor::zeros({2, 3}, true);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.grad->size(), 6u);
}
