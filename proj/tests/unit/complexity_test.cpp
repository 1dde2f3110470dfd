#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "zigma/complexity/complexity.hpp"

namespace cx = zigma::complexity;

namespace {

TEST(Formulas, SelfAttention) {
  EXPECT_EQ(cx::flops_self_attention({1, 1}), 6u);
  EXPECT_EQ(cx::flops_self_attention({1024, 768}), 4'026'531'840u);
  // quadratic term 2 M^2 D quadruples when M doubles
  const std::uint64_t d = 64;
  auto quad = [&](std::uint64_t m) { return cx::flops_self_attention({m, d}) - 4 * m * d * d; };
  EXPECT_EQ(quad(2048), 4 * quad(1024));
}

TEST(Formulas, Mamba) {
  EXPECT_EQ(cx::flops_zigzag({1024, 768, 16}), 478'150'656u);
  const cx::ComplexitySpec s{777, 96, 16};
  EXPECT_EQ(cx::flops_mamba(s, 2), 2 * cx::flops_mamba(s, 1));
  EXPECT_EQ(cx::flops_mamba(s, 5), 5 * cx::flops_mamba(s, 1));
  EXPECT_EQ(cx::flops_mamba({2 * s.M, s.D, s.N}, 1), 2 * cx::flops_mamba(s, 1));
  EXPECT_THROW(cx::flops_mamba(s, 0), std::invalid_argument);
  EXPECT_THROW(cx::flops_self_attention({0, 4}), std::invalid_argument);
  EXPECT_THROW(cx::flops_self_attention({std::uint64_t{1} << 40, 1 << 20}), std::overflow_error);
}

TEST(Crossover, DefiningPropertyAndExhaustiveScan) {
  for (std::uint64_t d : {1u, 8u, 64u, 768u, 1152u}) {
    for (std::uint64_t n : {1u, 4u, 16u, 64u}) {
      const std::uint64_t m = cx::crossover_tokens(d, n);
      EXPECT_GT(cx::flops_self_attention({m, d, n}), cx::flops_mamba({m, d, n}, 1));
      if (m > 1) EXPECT_LE(cx::flops_self_attention({m - 1, d, n}), cx::flops_mamba({m - 1, d, n}, 1));
    }
  }
  std::uint64_t first = 0;
  for (std::uint64_t m = 1; m <= 1'000'000 && !first; ++m) {
    if (cx::flops_self_attention({m, 768, 16}) > cx::flops_mamba({m, 768, 16}, 1)) first = m;
  }
  EXPECT_EQ(cx::crossover_tokens(768, 16), first);
  EXPECT_EQ(cx::crossover_tokens(64, 16), 177u);
}

TEST(Bench, SingleRepSinglePoint) {
  cx::BenchConfig cfg;
  cfg.kind = cx::LayerKind::mamba;
  cfg.tokens = {64};
  cfg.D = 16;
  cfg.reps = 1;
  const auto rows = cx::bench(cfg);
  ASSERT_EQ(rows.size(), 1u);
  ASSERT_TRUE(rows[0].wall_ms_median.has_value());
  EXPECT_GT(*rows[0].peak_bytes, 0);
  std::ostringstream csv;
  cx::write_csv(csv, rows);
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "kind,tokens,D,N,k,wall_ms_median,peak_bytes");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  const auto j = cx::to_json(rows, 1);
  EXPECT_EQ(j["rows"][0]["tokens"], 64);
  EXPECT_EQ(j["threads"], 1);
}

TEST(Bench, ZigzagVariantsShareParameterCount) {
  EXPECT_EQ(cx::bench_param_count(cx::LayerKind::zigzag, 64, 16, 1), cx::bench_param_count(cx::LayerKind::zigzag, 64, 16, 8));
  EXPECT_EQ(cx::bench_param_count(cx::LayerKind::kmamba, 64, 16, 4), 4 * cx::bench_param_count(cx::LayerKind::mamba, 64, 16, 1));
  for (auto k : {cx::LayerKind::attention, cx::LayerKind::mamba, cx::LayerKind::zigzag, cx::LayerKind::kmamba}) {
    cx::BenchConfig cfg;
    cfg.kind = k;
    cfg.tokens = {36};
    cfg.D = 8;
    cfg.k = 2;
    cfg.reps = 1;
    EXPECT_TRUE(cx::bench(cfg)[0].wall_ms_median.has_value()) << cx::kind_name(k);
  }
}

TEST(Bench, NullOnAllocationFailureKeepsGoing) {
  cx::BenchConfig cfg;
  cfg.kind = cx::LayerKind::mamba;
  cfg.tokens = {std::size_t{1} << 44, 16};  // a petabyte of activations
  cfg.D = 8;
  cfg.reps = 1;
  const auto rows = cx::bench(cfg);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_FALSE(rows[0].wall_ms_median.has_value());
  EXPECT_FALSE(rows[0].peak_bytes.has_value());
  EXPECT_TRUE(rows[1].wall_ms_median.has_value());
  std::ostringstream csv;
  cx::write_csv(csv, rows);
  EXPECT_NE(csv.str().find("mamba," + std::to_string(rows[0].tokens) + ",8,16,1,,\n"), std::string::npos);
  EXPECT_TRUE(cx::to_json(rows, 1)["rows"][0]["wall_ms_median"].is_null());
}

TEST(Bench, SlopeFit) {
  std::vector<cx::BenchRow> rows;
  for (std::size_t m : {100u, 200u, 400u, 800u}) {
    cx::BenchRow r;
    r.tokens = m;
    r.wall_ms_median = 3.0 * static_cast<double>(m) * static_cast<double>(m);
    rows.push_back(r);
  }
  EXPECT_NEAR(cx::loglog_slope(rows), 2.0, 1e-12);
}

}  // namespace
