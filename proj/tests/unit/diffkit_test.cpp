#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "grad_cases.hpp"
#include "oracles.hpp"
#include "zigma/diffkit/io.hpp"
#include "zigma/diffkit/ops.hpp"
#include "zigma/diffkit/optim.hpp"
#include "zigma/diffkit/params.hpp"

namespace dk = zigma::diffkit;
using dk::Tensor;
using zigma::testing::grad_check;

namespace {

using Inputs = std::vector<Tensor>;

Tensor rnd(dk::Shape s, std::uint64_t seed, double scale = 1.0) {
  dk::Rng rng(seed);
  return Tensor::randn(std::move(s), rng, scale);
}

TEST(Elementwise, AddValues) {
  const Tensor c = Tensor::from({2}, {1, 2}) + Tensor::from({2}, {3, 4});
  EXPECT_EQ(c.values(), (std::vector<double>{4, 6}));
}

TEST(Elementwise, MulByZeroGivesZeroGrad) {
  Tensor x = Tensor::from({3}, {1, -2, 3}, true);
  const Tensor y = dk::mul(x, Tensor::scalar(0.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  dk::backward(dk::sum(y));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Elementwise, SiluSlopeAtZero) {
  Tensor x = Tensor::scalar(0.0, true);
  dk::backward(dk::silu(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.5);
  // finite difference of x * sigmoid(x)
  const double h = 1e-6;
  auto f = [](double v) { return v / (1.0 + std::exp(-v)); };
  EXPECT_NEAR((f(h) - f(-h)) / (2 * h), 0.5, 1e-9);
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
  try {
    dk::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL() << "expected ShapeError";
  } catch (const dk::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, ScalarBroadcastBothSides) {
  const Tensor a = Tensor::from({3}, {1, 2, 3});
  EXPECT_EQ((a - Tensor::scalar(1)).values(), (std::vector<double>{0, 1, 2}));
  EXPECT_EQ((Tensor::scalar(1) - a).values(), (std::vector<double>{0, -1, -2}));
}

TEST(Elementwise, DispatchMatchesNamedOps) {
  const Tensor a = rnd({4}, 1), b = rnd({4}, 2);
  EXPECT_EQ(dk::elementwise(dk::Elementwise::mul, a, b).values(), dk::mul(a, b).values());
  EXPECT_EQ(dk::elementwise(dk::Elementwise::softplus, a).values(), dk::softplus(a).values());
  EXPECT_THROW(dk::elementwise(dk::Elementwise::add, a), dk::ShapeError);
}

TEST(Matmul, IdentityAndSmallProduct) {
  const Tensor i2 = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(dk::matmul(i2, m).values(), m.values());
  EXPECT_EQ(dk::matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).values(),
            std::vector<double>{11});
  EXPECT_THROW(dk::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), dk::ShapeError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  const double err = grad_check([](const Inputs& in) { return dk::matmul(in[0], in[1]); },
                                {rnd({3, 4}, 3), rnd({4, 2}, 4)});
  EXPECT_LT(err, 1e-6);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  const Tensor y = dk::layer_norm(Tensor::from({1, 3}, {5, 5, 5}), Tensor::ones({3}), Tensor::zeros({3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowUnchanged) {
  const Tensor y = dk::layer_norm(Tensor::from({1, 2}, {1, -1}), Tensor::ones({2}), Tensor::zeros({2}), 0.0);
  EXPECT_DOUBLE_EQ(y.at(0), 1.0);
  EXPECT_DOUBLE_EQ(y.at(1), -1.0);
}

TEST(LayerNorm, Gradient) {
  const double err = grad_check(
      [](const Inputs& in) { return dk::layer_norm(in[0], in[1], in[2]); },
      {rnd({5, 6}, 5), rnd({6}, 6), rnd({6}, 7)});
  EXPECT_LT(err, 1e-5);
}

TEST(Backward, SumAndSquare) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  dk::backward(dk::sum(x));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1}));
  Tensor y = Tensor::from({2}, {1, 2}, true);
  dk::backward(dk::sum(dk::square(y)));
  EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Backward, RejectsNonScalarAndSecondPass) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(dk::backward(dk::square(x)), dk::ShapeError);
  const Tensor loss = dk::sum(dk::square(dk::exp(x)));
  dk::backward(loss);
  EXPECT_THROW(dk::backward(loss), dk::GraphError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  dk::NoGradGuard guard;
  const Tensor y = dk::sum(dk::square(x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node().parents.empty());
}

TEST(Backward, CompositeMlpGradient) {
  auto mlp = [](const Inputs& in) {
    const Tensor h = dk::tanh(dk::linear(in[0], in[1], in[2]));
    return dk::mse(dk::linear(h, in[3]), Tensor::zeros({4, 2}));
  };
  const double err = grad_check(mlp, {rnd({4, 3}, 1), rnd({3, 5}, 2), rnd({5}, 3), rnd({5, 2}, 4)});
  EXPECT_LT(err, 1e-4);
}

TEST(Backward, AccumulationIsLinearAcrossGraphs) {
  const Tensor base = rnd({6}, 9);
  auto f1 = [](const Tensor& x) { return dk::sum(dk::sigmoid(x)); };
  auto f2 = [](const Tensor& x) { return dk::sum(dk::mul(x, dk::tanh(x))); };
  Tensor a = base.clone().set_requires_grad(true);
  dk::backward(dk::add(f1(a), f2(a)));
  Tensor b = base.clone().set_requires_grad(true);
  dk::backward(f1(b));
  dk::backward(f2(b));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a.grad()[i], b.grad()[i], 1e-14);
}

class OpGradient : public ::testing::TestWithParam<zigma::testing::OpCase> {};

TEST_P(OpGradient, MatchesCentralDifferencesOnRandomSeeds) {
  const auto& c = GetParam();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_LT(grad_check(c.f, c.make(seed)), 1e-4) << c.name << " seed " << seed;
  }
}


INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(zigma::testing::op_gradient_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Ops, SoftmaxRowsSumToOne) {
  const Tensor p = dk::softmax_last(rnd({4, 7}, 3, 10.0));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += p.at(r * 7 + c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, CausalConvIgnoresFuture) {
  Tensor x = rnd({1, 8, 2}, 4);
  const Tensor w = rnd({2, 4}, 5), b = rnd({2}, 6);
  const Tensor y0 = dk::depthwise_causal_conv1d(x, w, b);
  x.data()[5 * 2] += 1.0;
  const Tensor y1 = dk::depthwise_causal_conv1d(x, w, b);
  for (std::size_t i = 0; i < 5 * 2; ++i) EXPECT_EQ(y0.at(i), y1.at(i));
  EXPECT_NE(y0.at(10), y1.at(10));
}

TEST(Ops, SplitMergeHeadsRoundTrip) {
  const Tensor x = rnd({2, 3, 8}, 1);
  EXPECT_EQ(dk::merge_heads(dk::split_heads(x, 4), 4).values(), x.values());
}

TEST(Optimizer, ClipHalvesGradientOfNormFour) {
  EXPECT_DOUBLE_EQ(dk::clip_scale_for(4.0, 2.0), 0.5);
  EXPECT_DOUBLE_EQ(dk::clip_scale_for(1.0, 2.0), 1.0);
  std::vector<Tensor> params{Tensor::from({2}, {0, 0}, true)};
  params[0].mutable_grad()[0] = 0.0;
  params[0].mutable_grad()[1] = 4.0;
  auto state = dk::init_adamw_state(params);
  const auto rep = dk::optimizer_step(params, state, dk::AdamWConfig{});
  EXPECT_DOUBLE_EQ(rep.grad_norm, 4.0);
  EXPECT_DOUBLE_EQ(rep.clip_scale, 0.5);
}

TEST(Optimizer, ZeroLearningRateLeavesParams) {
  std::vector<Tensor> params{rnd({5}, 1).set_requires_grad(true)};
  const auto before = params[0].values();
  for (double& g : params[0].mutable_grad()) g = 3.0;
  auto state = dk::init_adamw_state(params);
  dk::AdamWConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.1;
  EXPECT_TRUE(dk::optimizer_step(params, state, cfg).applied);
  EXPECT_EQ(params[0].values(), before);
}

TEST(Optimizer, FirstStepMatchesHandComputation) {
  // m = (1-b1) g, v = (1-b2) g^2, bias-corrected ratio g / (|g| + eps).
  std::vector<Tensor> params{Tensor::from({1}, {1.0}, true)};
  params[0].mutable_grad()[0] = 0.5;
  auto state = dk::init_adamw_state(params);
  dk::AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  dk::optimizer_step(params, state, cfg);
  const double expected = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
  EXPECT_NEAR(params[0].at(0), expected, 1e-15);
}

TEST(Optimizer, QuadraticConverges) {
  // loss = (p - 3)^2, minimiser 3
  std::vector<Tensor> params{Tensor::from({1}, {0.0}, true)};
  auto state = dk::init_adamw_state(params);
  dk::AdamWConfig cfg;
  cfg.lr = 5e-2;
  for (int i = 0; i < 1000; ++i) {
    params[0].zero_grad();
    dk::backward(dk::sum(dk::square(dk::add_scalar(params[0], -3.0))));
    dk::optimizer_step(params, state, cfg);
  }
  // Adam moves about lr per step, so 3 is reached after ~60 steps; the rest
  // is spent settling as the second moment keeps the early large gradients.
  EXPECT_LT(std::abs(params[0].at(0) - 3.0), 1e-3) << params[0].at(0);
}

TEST(Optimizer, NonFiniteGradientRejected) {
  std::vector<Tensor> params{Tensor::from({2}, {1, 2}, true)};
  params[0].mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  auto state = dk::init_adamw_state(params);
  const auto rep = dk::optimizer_step(params, state, dk::AdamWConfig{});
  EXPECT_FALSE(rep.applied);
  EXPECT_EQ(state.rejected, 1u);
  EXPECT_EQ(params[0].values(), (std::vector<double>{1, 2}));
}

TEST(Optimizer, EmaConvergesToStationaryWeights) {
  std::vector<Tensor> params{Tensor::from({1}, {0.0}, true)};
  auto state = dk::init_adamw_state(params);
  params[0].data()[0] = 2.0;  // weights jump once, then stay put
  dk::AdamWConfig cfg;
  cfg.lr = 0.0;
  cfg.ema_decay = 0.9;
  for (int i = 0; i < 400; ++i) {
    params[0].mutable_grad()[0] = 1.0;
    dk::optimizer_step(params, state, cfg);
  }
  EXPECT_NEAR(state.ema[0][0], 2.0, 1e-12);
}

TEST(Params, StoreRegistersAndCounts) {
  dk::ParameterStore store;
  store.add("a", Tensor::zeros({2, 3}));
  store.add("b", Tensor::zeros({4}));
  EXPECT_EQ(store.scalar_count(), 10u);
  EXPECT_TRUE(store.get("a").requires_grad());
  EXPECT_THROW(store.add("a", Tensor::zeros({1})), std::invalid_argument);
}

class TensorIo : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "zigma_io_test";
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(TensorIo, Float32SidecarAndValues) {
  const Tensor t = Tensor::from({2, 2}, {1.0, -0.5, 0.1, 3.0});
  dk::save_tensor(dir / "t", t);
  std::ifstream js(dir / "t.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j["dtype"], "float32");
  EXPECT_EQ(j["byte_order"], "LE");
  EXPECT_EQ(j["shape"], (std::vector<std::size_t>{2, 2}));
  EXPECT_EQ(std::filesystem::file_size(dir / "t.bin"), 16u);
  const Tensor back = dk::load_tensor(dir / "t");
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(back.at(i), static_cast<double>(static_cast<float>(t.at(i))));
}

TEST_F(TensorIo, Float64RoundTripIsExact) {
  const Tensor t = rnd({3, 5}, 11);
  dk::save_tensor(dir / "t", t, dk::Dtype::float64);
  EXPECT_EQ(dk::load_tensor(dir / "t").values(), t.values());
}

TEST(Allocation, CounterTracksBuffers) {
  const auto before = dk::alloc_stats().current_bytes;
  {
    const Tensor t = Tensor::zeros({1000});
    EXPECT_GE(dk::alloc_stats().current_bytes - before, 8000);
    EXPECT_GE(dk::alloc_stats().peak_bytes, dk::alloc_stats().current_bytes);
  }
  EXPECT_EQ(dk::alloc_stats().current_bytes, before);
}

}  // namespace
