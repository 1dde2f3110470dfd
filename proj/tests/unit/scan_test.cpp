#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "zigma/diffkit/ops.hpp"
#include "zigma/scan/permutation.hpp"
#include "zigma/scan/schemes.hpp"

namespace dk = zigma::diffkit;
namespace sc = zigma::scan;
using sc::Family;
using sc::Permutation;

namespace {

std::vector<sc::Index> order_of(const Permutation& p) { return {p.order().begin(), p.order().end()}; }

// Independent continuity count: Manhattan distance of consecutive cells.
std::size_t count_breaks(const Permutation& p, std::size_t w) {
  std::size_t breaks = 0;
  for (std::size_t k = 1; k < p.size(); ++k) {
    const long ax = static_cast<long>(p[k - 1] % w), ay = static_cast<long>(p[k - 1] / w);
    const long bx = static_cast<long>(p[k] % w), by = static_cast<long>(p[k] / w);
    if (std::abs(ax - bx) + std::abs(ay - by) != 1) ++breaks;
  }
  return breaks;
}

TEST(Permutation, RejectsNonBijections) {
  EXPECT_THROW(Permutation({0, 0, 1}), sc::NotBijectiveError);
  EXPECT_THROW(Permutation({0, 3, 1}), sc::NotBijectiveError);
}

TEST(Permutation, InverseLawAndCompose) {
  const Permutation p({2, 0, 1});
  EXPECT_TRUE(compose(p.inverse(), p).is_identity());
  EXPECT_EQ(compose(p, Permutation::identity(3)), p);
  EXPECT_EQ(order_of(compose(p, p)), (std::vector<sc::Index>{1, 2, 0}));
  EXPECT_THROW(compose(p, Permutation::identity(4)), std::invalid_argument);
}

TEST(Permutation, RandomAlgebra) {
  dk::Rng rng(5);
  for (std::size_t m : {4u, 64u, 1024u}) {
    for (int rep = 0; rep < 100; ++rep) {
      const auto p = Permutation::random(m, rng), q = Permutation::random(m, rng), r = Permutation::random(m, rng);
      ASSERT_TRUE(compose(p.inverse(), p).is_identity());
      ASSERT_TRUE(compose(p, p.inverse()).is_identity());
      ASSERT_EQ(compose(compose(p, q), r), compose(p, compose(q, r)));
      for (std::size_t k = 0; k < m; ++k) ASSERT_EQ(p.inverse_order()[p[k]], k);
    }
  }
}

TEST(Apply, SwapsAndRoundTrips) {
  const dk::Tensor x = dk::Tensor::from({1, 2, 1}, {10, 20});
  EXPECT_EQ(sc::apply(Permutation({1, 0}), x).values(), (std::vector<double>{20, 10}));
  EXPECT_EQ(sc::apply(Permutation::identity(2), x).values(), x.values());

  dk::Rng rng(1);
  const dk::Tensor t = dk::Tensor::randn({2, 16, 4}, rng);
  const auto p = Permutation::random(16, rng);
  EXPECT_EQ(sc::apply(p.inverse(), sc::apply(p, t)).values(), t.values());
  EXPECT_THROW(sc::apply(Permutation::identity(15), t), dk::ShapeError);
}

TEST(Apply, DoubleIndexEqualsTwoSteps) {
  dk::Rng rng(3);
  const auto o0 = Permutation::random(64, rng), o1 = Permutation::random(64, rng);
  const dk::Tensor x = dk::Tensor::randn({2, 64, 3}, rng);
  const dk::Tensor arranged = sc::apply(o0, x);
  const dk::Tensor two_step = sc::apply(o1, sc::apply(o0.inverse(), arranged));
  const dk::Tensor fused = sc::apply(compose(o0.inverse(), o1), arranged);
  EXPECT_EQ(two_step.values(), fused.values());
}

TEST(Apply, RowsMatchesTensorApply) {
  const Permutation p({2, 0, 1});
  const std::vector<double> rows{1, 2, 3, 4, 5, 6};
  EXPECT_EQ(sc::apply_rows(p, rows, 2), (std::vector<double>{5, 6, 1, 2, 3, 4}));
}

TEST(Sweep, RasterOrderAndRowWraps) {
  EXPECT_EQ(order_of(sc::sweep_2d(2, 2)), (std::vector<sc::Index>{0, 1, 2, 3}));
  for (std::size_t w = 1; w <= 6; ++w) {
    for (std::size_t h = 2; h <= 6; ++h) {
      const std::vector<std::size_t> dims{w, h};
      const auto rep = sc::validate(sc::sweep_2d(w, h), dims);
      EXPECT_EQ(rep.breaks, w == 1 ? 0 : h - 1) << w << "x" << h;
    }
  }
}

TEST(Zigzag, HandWalks) {
  EXPECT_EQ(order_of(sc::zigzag_2d(2, 2, 0)), (std::vector<sc::Index>{0, 1, 3, 2}));
  EXPECT_EQ(order_of(sc::zigzag_2d(3, 3, 0)), (std::vector<sc::Index>{0, 1, 2, 5, 4, 3, 6, 7, 8}));
  EXPECT_EQ(order_of(sc::zigzag_2d(3, 2, 1)), (std::vector<sc::Index>{0, 3, 4, 1, 2, 5}));
  EXPECT_THROW(sc::zigzag_2d(3, 3, 8), sc::SchemeError);
}

TEST(Zigzag, TwoByTwoVariantZeroIsUniqueSerpentine) {
  // Among all orderings of the 2x2 grid, exactly one starts top-left, moves
  // along the row first and stays continuous.
  std::vector<sc::Index> cells{0, 1, 2, 3};
  std::vector<std::vector<sc::Index>> hits;
  do {
    const Permutation p(cells);
    if (cells[0] == 0 && cells[1] == 1 && count_breaks(p, 2) == 0) hits.push_back(cells);
  } while (std::next_permutation(cells.begin(), cells.end()));
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0], order_of(sc::zigzag_2d(2, 2, 0)));
}

TEST(Zigzag, AllVariantsContinuousAndDistinct) {
  for (std::size_t w = 1; w <= 16; ++w) {
    for (std::size_t h = 1; h <= 16; ++h) {
      const std::vector<std::size_t> dims{w, h};
      std::set<std::vector<sc::Index>> seen;
      for (int v = 0; v < 8; ++v) {
        const auto p = sc::zigzag_2d(w, h, v);
        const auto rep = sc::validate(p, dims);
        ASSERT_TRUE(rep.is_space_filling);
        ASSERT_EQ(rep.breaks, 0u) << w << "x" << h << " v" << v;
        ASSERT_EQ(count_breaks(p, w), 0u);
        seen.insert(order_of(p));
      }
      if (w >= 2 && h >= 2) EXPECT_EQ(seen.size(), 8u) << w << "x" << h;
    }
  }
}

TEST(Hilbert, DegenerateAndSmall) {
  std::vector<sc::Index> line(5);
  std::iota(line.begin(), line.end(), 0);
  EXPECT_EQ(order_of(sc::hilbert_2d(5, 1, 0)), line);
  EXPECT_EQ(order_of(sc::hilbert_2d(1, 5, 0)), line);
  const std::vector<std::size_t> d2{2, 2};
  EXPECT_EQ(sc::validate(sc::hilbert_2d(2, 2, 0), d2).max_step, 1u);
  const std::vector<std::size_t> d8{8, 8};
  const auto rep = sc::validate(sc::hilbert_2d(8, 8, 0), d8);
  EXPECT_TRUE(rep.is_space_filling);
  EXPECT_EQ(rep.breaks, 0u);
}

TEST(Hilbert, ContinuousOnEveryRectangle) {
  for (std::size_t w = 1; w <= 32; ++w) {
    for (std::size_t h = 1; h <= 32; ++h) {
      for (int v = 0; v < 8; ++v) {
        const auto p = sc::hilbert_2d(w, h, v);
        ASSERT_EQ(p.size(), w * h);
        ASSERT_EQ(count_breaks(p, w), 0u) << w << "x" << h << " v" << v;
      }
    }
  }
}

TEST(Hilbert, SquareVariantsDistinct) {
  std::set<std::vector<sc::Index>> seen;
  for (int v = 0; v < 8; ++v) seen.insert(order_of(sc::hilbert_2d(8, 8, v)));
  EXPECT_EQ(seen.size(), 8u);
}

TEST(Validate, RandomShuffleBreaksContinuity) {
  dk::Rng rng(2);
  const std::vector<std::size_t> dims{8, 8};
  const auto rep = sc::validate(Permutation::random(64, rng), dims);
  EXPECT_GT(rep.breaks, 30u);
  EXPECT_TRUE(rep.is_space_filling);
}

TEST(Validate, ErrorsOnDuplicatesAndOutOfGrid) {
  const std::vector<std::size_t> dims{2, 2};
  const std::vector<sc::Index> dup{0, 1, 1, 2};
  const std::vector<sc::Index> out{0, 1, 2, 4};
  EXPECT_THROW(sc::validate(dup, dims), sc::NotBijectiveError);
  EXPECT_THROW(sc::validate(out, dims), sc::NotBijectiveError);
  const std::vector<sc::Index> partial{0, 1, 3};
  EXPECT_FALSE(sc::validate(partial, dims).is_space_filling);
}

TEST(ThreeD, SweepAndZigzag) {
  const std::vector<std::size_t> dims{2, 2, 2};
  const auto z = sc::zigzag_3d(2, 2, 2);
  const auto rep = sc::validate(z, dims);
  EXPECT_TRUE(rep.is_space_filling);
  EXPECT_EQ(rep.breaks, 0u);
  for (std::size_t t = 1; t <= 4; ++t) {
    for (std::size_t w = 1; w <= 4; ++w) {
      for (std::size_t h = 1; h <= 4; ++h) {
        const std::vector<std::size_t> d{t, w, h};
        ASSERT_EQ(sc::validate(sc::zigzag_3d(t, w, h), d).breaks, 0u);
        ASSERT_TRUE(sc::validate(sc::sweep_3d(t, w, h), d).is_space_filling);
      }
    }
  }
  EXPECT_THROW(sc::zigzag_3d(2, 2, 2, 1), sc::SchemeError);
}

TEST(ThreeD, TemporalSweepBackward) {
  EXPECT_EQ(sc::temporal_sweep(3, 1), (std::vector<std::size_t>{2, 1, 0}));
  EXPECT_EQ(sc::temporal_sweep(3, 0), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(ThreeD, FactorizedPlan) {
  const auto single = sc::factorized_plan(1, 3, 3, "s");
  ASSERT_EQ(single.steps.size(), 1u);
  EXPECT_EQ(single.steps[0].order, sc::zigzag_2d(3, 3, 0));

  const auto plan = sc::factorized_plan(3, 2, 2);
  ASSERT_EQ(plan.steps.size(), 3u);
  EXPECT_EQ(plan.steps[0].axis, 's');
  EXPECT_EQ(plan.steps[1].axis, 's');
  EXPECT_EQ(plan.steps[2].axis, 't');
  EXPECT_NE(plan.steps[0].order, plan.steps[1].order);
  // temporal step: the tokens of cell 0 come first, frames in order
  EXPECT_EQ(plan.steps[2].order[0], 0u);
  EXPECT_EQ(plan.steps[2].order[1], 4u);
  EXPECT_EQ(plan.steps[2].order[2], 8u);
  EXPECT_THROW(sc::factorized_plan(2, 2, 2, "sx"), sc::SchemeError);

  sc::ScanScheme scheme{Family::FactorizedST, 0, {2, 2, 2}, "st"};
  EXPECT_TRUE(std::holds_alternative<sc::FactorizedPlan>(sc::generate_3d(scheme)));
  EXPECT_THROW(sc::generate(scheme), sc::SchemeError);
}

TEST(SchemeForLayer, Modulo) {
  EXPECT_EQ(sc::scheme_for_layer(9, 8).variant, 1);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(sc::scheme_for_layer(i, 1).variant, 0);
  std::vector<int> v;
  for (std::size_t i = 0; i < 4; ++i) v.push_back(sc::scheme_for_layer(i, 2).variant);
  EXPECT_EQ(v, (std::vector<int>{0, 1, 0, 1}));
  EXPECT_THROW(sc::scheme_for_layer(0, 0), sc::SchemeError);
  EXPECT_THROW(sc::scheme_for_layer(0, 9), sc::SchemeError);
}

TEST(Schemes, GenerateDispatchAndNames) {
  for (auto f : {Family::Sweep, Family::Zigzag, Family::Hilbert, Family::Sweep3D, Family::Zigzag3D,
                 Family::FactorizedST}) {
    EXPECT_EQ(sc::parse_family(sc::family_name(f)), f);
  }
  EXPECT_THROW(sc::parse_family("spiral"), sc::SchemeError);
  sc::ScanScheme s{Family::Zigzag, 0, {3, 3}};
  EXPECT_EQ(sc::generate(s), sc::zigzag_2d(3, 3, 0));
  s.dims = {0, 3};
  EXPECT_THROW(sc::generate(s), sc::SchemeError);
}

TEST(Render, ArrowsForZigzag) {
  const std::string art = sc::render_arrows(sc::zigzag_2d(3, 2, 0), 3, 2);
  EXPECT_EQ(art, "> > v\n* < <\n");
}

}  // namespace
