#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "aasist/grad_check.hpp"
#include "aasist/ops.hpp"
#include "aasist/rng.hpp"

using namespace aasist;

namespace {

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

// Random weighting of every output so gradients are non-trivial.
Tensor probe_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return sum(mul(y, randn(y.shape(), rng)));
}

void expect_grad_ok(const std::function<Tensor()>& fn, const std::vector<Tensor>& inputs, std::uint64_t seed) {
  GradCheckOptions o;
  o.seed = seed;
  const GradCheckReport r = grad_check(fn, inputs, o);
  EXPECT_TRUE(r.passed()) << "max rel error " << r.max_rel_error << " at input " << r.worst.input << "[" << r.worst.index
                          << "] analytic " << r.worst.analytic << " numeric " << r.worst.numeric;
  EXPECT_GT(r.checked, 0u);
}

}  // namespace

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_EQ(shape_str({2, 3}), "(2, 3)");
}

TEST(Tensor, GradHasValueShape) {
  Tensor p = Tensor::parameter({3, 2}, std::vector<double>(6, 1.0));
  EXPECT_EQ(p.grad().size(), p.size());
  backward(sum(scale(p, 2.0)));
  for (double g : p.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Tensor, NonFiniteOutputIsAnError) {
  Tensor x({1}, std::vector<double>{800.0});
  EXPECT_THROW(scale(x, 1e308), NumericError);
}

TEST(Selu, FixedPoints) {
  Tensor x({3}, std::vector<double>{0.0, 1.0, -20.0});
  Tensor y = selu(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 1.0507009873554805, 1e-15);
  EXPECT_NEAR(y[2], kSeluLambda * kSeluAlpha * (std::exp(-20.0) - 1.0), 1e-15);
  EXPECT_NEAR(y[2], -1.7581, 1e-4);
}

TEST(Softmax, MatchesDirectFormula) {
  Tensor y = softmax(Tensor({3}, std::vector<double>{1, 2, 3}), 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], std::exp(i + 1.0) / z, 1e-12);
  Tensor half = softmax(Tensor({2}, 0.0), 0);
  EXPECT_EQ(half[0], 0.5);
  EXPECT_EQ(half[1], 0.5);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  Rng rng(3);
  Tensor x = randn({4, 5, 6}, rng, 5.0);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tensor a = softmax(x, axis), b = softmax(add_along(x, Tensor({x.dim(axis)}, 17.0), axis), axis);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-12);
      EXPECT_GE(a[i], 0.0);
    }
  }
  Tensor s = softmax(x, 2);
  for (std::size_t r = 0; r < 20; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < 6; ++k) total += s[r * 6 + k];
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
  EXPECT_THROW(softmax(x, 3), ShapeError);
}

TEST(ElementwiseMax, BasicLaws) {
  Tensor a({2}, std::vector<double>{1, 5}), b({2}, std::vector<double>{4, 2});
  Tensor m = elementwise_max(a, b);
  EXPECT_EQ(m[0], 4.0);
  EXPECT_EQ(m[1], 5.0);
  Rng rng(5);
  Tensor x = randn({10}, rng), y = randn({10}, rng), z = randn({10}, rng);
  Tensor idem = elementwise_max(x, x);
  Tensor xy = elementwise_max(x, y), yx = elementwise_max(y, x);
  Tensor l = elementwise_max(elementwise_max(x, y), z), r = elementwise_max(x, elementwise_max(y, z));
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(idem[i], x[i]);
    EXPECT_EQ(xy[i], yx[i]);
    EXPECT_EQ(l[i], r[i]);
  }
  EXPECT_THROW(elementwise_max(a, Tensor({3}, 0.0)), ShapeError);
}

TEST(ElementwiseMax, GradientGoesToWinner) {
  Rng rng(8);
  Tensor a = randn({12}, rng), b = randn({12}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  backward(sum(elementwise_max(a, b)));
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(a.grad()[i], a[i] > b[i] ? 1.0 : 0.0);
    EXPECT_EQ(b.grad()[i], a[i] > b[i] ? 0.0 : 1.0);
  }
  expect_grad_ok([&] { return sum(elementwise_max(a, b)); }, {a, b}, 1);
}

TEST(ElementwiseMax, TiesRouteToFirstArgument) {
  Tensor a = Tensor::parameter({2}, {1.0, 2.0});
  Tensor b = Tensor::parameter({2}, {1.0, 2.0});
  backward(sum(elementwise_max(a, b)));
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(b.grad()[0], 0.0);
}

TEST(CoreOps, MaxpoolOfConstant) {
  Tensor x({2, 3, 4, 9}, 2.5);
  Tensor y = maxpool2d(x, 1, 3);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 4, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 2.5);
  EXPECT_EQ(maxpool2d(Tensor({1, 1, 1, 9}, 0.0), 1, 3).dim(3), 3u);
}

TEST(CoreOps, BatchNormOfStandardizedBatchIsIdentity) {
  // Two values per feature at +-1 give mean 0 and biased variance 1.
  Tensor x({4, 3}, std::vector<double>{1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1});
  Tensor gamma({3}, 1.0), beta({3}, 0.0);
  Tensor y = batch_norm_train(x, gamma, beta, 1, 1e-12);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-6);
}

TEST(CoreOps, Conv2dMatchesNaiveLoops) {
  Rng rng(11);
  // 3 channels, 5x7 image.
  const std::size_t B = 2, C = 3, H = 5, W = 7, O = 4, KH = 3, KW = 3, P = 1;
  Tensor x = randn({B, C, H, W}, rng), w = randn({O, C, KH, KW}, rng), bias = randn({O}, rng);
  Tensor y = conv2d(x, w, bias, P, P);
  ASSERT_EQ(y.shape(), (Shape{B, O, H, W}));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double acc = bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < KH; ++u)
              for (std::size_t v = 0; v < KW; ++v) {
                const long ii = static_cast<long>(i + u) - static_cast<long>(P);
                const long jj = static_cast<long>(j + v) - static_cast<long>(P);
                if (ii < 0 || jj < 0 || ii >= static_cast<long>(H) || jj >= static_cast<long>(W)) continue;
                acc += w[((o * C + c) * KH + u) * KW + v] * x[((b * C + c) * H + ii) * W + jj];
              }
          EXPECT_NEAR(y[((b * O + o) * H + i) * W + j], acc, 1e-10);
        }
}

TEST(CoreOps, Conv1dBankMatchesNaiveLoops) {
  Rng rng(12);
  Tensor x = randn({2, 20}, rng), k = randn({3, 5}, rng);
  Tensor y = conv1d_bank(x, k);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 16}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t t = 0; t < 16; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < 5; ++j) acc += k[f * 5 + j] * x[b * 20 + t + j];
        EXPECT_NEAR(y[(b * 3 + f) * 16 + t], acc, 1e-12);
      }
}

TEST(CoreOps, MatmulConcatAndReductions) {
  Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4}), b({2, 1}, std::vector<double>{5, 6});
  Tensor c = matmul(a, b);
  EXPECT_EQ(c[0], 17.0);
  EXPECT_EQ(c[1], 39.0);
  Tensor cat = concat({a, a}, 0);
  EXPECT_EQ(cat.shape(), (Shape{4, 2}));
  EXPECT_EQ(cat[6], 3.0);
  Tensor mx = reduce_max(a, 0), mn = reduce_mean(a, 1);
  EXPECT_EQ(mx[0], 3.0);
  EXPECT_EQ(mx[1], 4.0);
  EXPECT_EQ(mn[0], 1.5);
  EXPECT_EQ(mn[1], 3.5);
  EXPECT_THROW(matmul(a, Tensor({3, 1}, 0.0)), ShapeError);
  EXPECT_EQ(abs(Tensor({2}, std::vector<double>{-2, 3}))[0], 2.0);
  EXPECT_NEAR(sigmoid(Tensor({1}, 0.0))[0], 0.5, 1e-15);
}

TEST(Backward, ProductRule) {
  Tensor x = Tensor::parameter({}, {2.0}), y = Tensor::parameter({}, {3.0});
  backward(mul(x, y));
  EXPECT_EQ(x.grad()[0], 3.0);
  EXPECT_EQ(y.grad()[0], 2.0);
}

TEST(Backward, UnusedParameterHasZeroGradient) {
  Tensor used = Tensor::parameter({2}, {1.0, 2.0}), unused = Tensor::parameter({2}, {3.0, 4.0});
  backward(sum(mul(used, used)));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(used.grad()[1], 4.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  Tensor x = Tensor::parameter({}, {3.0});
  Tensor y = mul(x, x);  // used twice below
  Tensor z = add(y, y);
  Tape tape = Tape::record(z);
  EXPECT_EQ(tape.size(), 3u);  // x, y, z
  tape.backward();
  EXPECT_EQ(x.grad()[0], 12.0);
}

TEST(Backward, TapeIsTopologicallyOrdered) {
  Rng rng(2);
  Tensor a = randn({3}, rng), b = randn({3}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor loss = sum(mul(selu(add(a, b)), sigmoid(a)));
  Tape tape = Tape::record(loss);
  const auto& order = tape.order();
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (const auto& in : order[i]->inputs) {
      if (!in->requires_grad) continue;
      auto pos = std::find(order.begin(), order.end(), in.get());
      ASSERT_NE(pos, order.end());
      EXPECT_LT(static_cast<std::size_t>(pos - order.begin()), i);
    }
  }
  EXPECT_EQ(order.back(), loss.node());
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  NoGradGuard guard;
  Tensor y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Determinism, ForwardIsBitIdentical) {
  Rng rng(4);
  Tensor x = randn({2, 3, 4, 6}, rng), w = randn({5, 3, 3, 3}, rng), b = randn({5}, rng);
  auto run = [&] { return softmax(maxpool2d(selu(conv2d(x, w, b, 1, 1)), 1, 3), 3).values(); };
  EXPECT_EQ(run(), run());
}

// Every registered op against central finite differences, over 20 seeds.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed);
  Tensor a = randn({3, 4}, rng), b = randn({3, 4}, rng), v = randn({4}, rng), s = randn({3}, rng);
  Tensor k = randn({4, 2}, rng);
  const std::uint64_t ps = seed + 1000;
  expect_grad_ok([&] { return probe_sum(add(a, b), ps); }, {a, b}, seed);
  expect_grad_ok([&] { return probe_sum(sub(a, b), ps); }, {a, b}, seed);
  expect_grad_ok([&] { return probe_sum(mul(a, b), ps); }, {a, b}, seed);
  expect_grad_ok([&] { return probe_sum(scale(a, -1.7), ps); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(selu(a), ps); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(sigmoid(a), ps); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(abs(a), ps); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(elementwise_max(a, b), ps); }, {a, b}, seed);
  expect_grad_ok([&] { return probe_sum(add_along(a, v, 1), ps); }, {a, v}, seed);
  expect_grad_ok([&] { return probe_sum(mul_along(a, s, 0), ps); }, {a, s}, seed);
  expect_grad_ok([&] { return probe_sum(mul_rows(a, s), ps); }, {a, s}, seed);
  expect_grad_ok([&] { return mean(mul(a, a)); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(reduce_max(a, 1), ps); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(reduce_mean(a, 0), ps); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(softmax(a, 1), ps); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(softmax(a, 0), ps); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(reshape(a, {2, 6}), ps); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(transpose_last2(a), ps); }, {a}, seed);
  expect_grad_ok([&] { return probe_sum(concat({a, b}, 1), ps); }, {a, b}, seed);
  expect_grad_ok([&] { return probe_sum(matmul(a, k), ps); }, {a, k}, seed);

  Tensor g = randn({2, 4, 3}, rng), h = randn({2, 3, 5}, rng);
  expect_grad_ok([&] { return probe_sum(bmm(g, h), ps); }, {g, h}, seed);
  expect_grad_ok([&] { return probe_sum(gather_rows(g, {{3, 1}, {0, 2}}), ps); }, {g}, seed);

  Tensor gamma = randn({3}, rng), beta = randn({3}, rng);
  expect_grad_ok([&] { return probe_sum(batch_norm_train(g, gamma, beta, 2, 1e-5), ps); }, {g, gamma, beta}, seed);
  const std::vector<double> rm{0.1, -0.2, 0.3}, rv{1.5, 0.7, 2.0};
  expect_grad_ok([&] { return probe_sum(batch_norm_eval(g, gamma, beta, rm, rv, 2, 1e-5), ps); }, {g, gamma, beta},
                 seed);

  Tensor x = randn({2, 2, 3, 6}, rng), w = randn({3, 2, 3, 3}, rng), bias = randn({3}, rng);
  expect_grad_ok([&] { return probe_sum(conv2d(x, w, bias, 1, 1), ps); }, {x, w, bias}, seed);
  expect_grad_ok([&] { return probe_sum(conv2d(x, w, bias, 0, 1), ps); }, {x, w, bias}, seed);
  expect_grad_ok([&] { return probe_sum(maxpool2d(x, 1, 3), ps); }, {x}, seed);
  Tensor wave = randn({2, 15}, rng), kern = randn({3, 5}, rng);
  expect_grad_ok([&] { return probe_sum(conv1d_bank(wave, kern), ps); }, {wave, kern}, seed);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range(0, 20));

TEST(GradCheck, LinearFunctionIsExact) {
  Tensor x = Tensor::parameter({4}, {1.0, -2.0, 3.0, 0.5});
  Tensor c({4}, std::vector<double>{2.0, 3.0, -1.0, 4.0});
  const GradCheckReport r = grad_check([&] { return sum(mul(x, c)); }, {x});
  EXPECT_TRUE(r.passed());
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.checked, 4u);
}

TEST(GradCheck, DetectsWrongBackwardRule) {
  // Square with a deliberately wrong derivative of x instead of 2x.
  auto bad_square = [](const Tensor& x) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * x[i];
    return make_op("bad_square", x.shape(), std::move(y), {x}, [](detail::Node& out) {
      double* g = input_grad(out, 0);
      const auto& xv = input_value(out, 0);
      for (std::size_t i = 0; i < xv.size(); ++i) g[i] += out.grad[i] * xv[i];
    });
  };
  Tensor x = Tensor::parameter({3}, {1.0, 2.0, -3.0});
  const GradCheckReport r = grad_check([&] { return sum(bad_square(x)); }, {x});
  EXPECT_FALSE(r.passed());
  EXPECT_NEAR(r.max_rel_error, 0.5, 1e-6);
  EXPECT_EQ(r.failures.size(), 3u);
}

TEST(GradCheck, SubsamplesLargeInputs) {
  Rng rng(1);
  Tensor x = randn({50}, rng);
  GradCheckOptions o;
  o.max_per_input = 7;
  const GradCheckReport r = grad_check([&] { return sum(selu(x)); }, {x}, o);
  EXPECT_EQ(r.checked, 7u);
  EXPECT_TRUE(r.passed());
}

TEST(GradCheck, SeparatesKinksFromErrors) {
  // |x| at 3e-7: the step-1e-6 stencil straddles zero, the finer one does not.
  Tensor x = Tensor::parameter({2}, {3e-7, 2.0});
  GradCheckOptions o;
  o.max_kink_fraction = 1.0;
  GradCheckReport r = grad_check([&] { return sum(abs(x)); }, {x}, o);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_EQ(r.kinks, 1u);
  EXPECT_TRUE(r.failures.empty());
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_TRUE(r.passed());

  o.max_kink_fraction = 0.05;
  EXPECT_FALSE(grad_check([&] { return sum(abs(x)); }, {x}, o).passed());

  o.kink_step_ratio = 0.0;
  r = grad_check([&] { return sum(abs(x)); }, {x}, o);
  EXPECT_EQ(r.kinks, 0u);
  EXPECT_EQ(r.failures.size(), 1u);
}
