#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "stats_oracle.hpp"
#include "svpipe/error.hpp"
#include "svpipe/stats.hpp"

namespace {

namespace st = svpipe::stats;
using svpipe::Mask;
using svpipe::StatsError;

std::vector<st::Pair> pairs_of(const nlohmann::json& c) {
    std::vector<st::Pair> p;
    const auto x = c.at("x").get<std::vector<double>>(), y = c.at("y").get<std::vector<double>>();
    for (std::size_t i = 0; i < x.size(); ++i) p.emplace_back(x[i], y[i]);
    return p;
}

Mask random_mask(std::mt19937_64& rng, int rows, int cols, double p) {
    Mask m(rows, cols);
    std::bernoulli_distribution b(p);
    for (auto& v : m.data) v = b(rng) ? 1 : 0;
    return m;
}

TEST(Overlap, Examples) {
    Mask a(10, 20), b(10, 20);
    for (int i = 0; i < 100; ++i) a.data[static_cast<std::size_t>(i)] = 1;
    for (int i = 50; i < 150; ++i) b.data[static_cast<std::size_t>(i)] = 1;
    EXPECT_DOUBLE_EQ(st::dice(a, b), 0.5);
    EXPECT_DOUBLE_EQ(st::iou(a, b), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(st::dice(a, a), 1.0);
    EXPECT_DOUBLE_EQ(st::iou(a, a), 1.0);
    Mask c(10, 20);
    for (int i = 150; i < 200; ++i) c.data[static_cast<std::size_t>(i)] = 1;
    EXPECT_DOUBLE_EQ(st::dice(a, c), 0.0);
    EXPECT_DOUBLE_EQ(st::iou(a, c), 0.0);
}

TEST(Overlap, BothEmptyIsPerfectAgreement) {
    Mask a(4, 4), b(4, 4);
    EXPECT_EQ(st::dice(a, b), 1.0);
    EXPECT_EQ(st::iou(a, b), 1.0);
}

TEST(Overlap, ShapeMismatchThrows) {
    EXPECT_THROW(st::dice(Mask(4, 4), Mask(4, 5)), StatsError);
    EXPECT_THROW(st::iou(Mask(2, 8), Mask(4, 4)), StatsError);
}

TEST(Overlap, DiceIouIdentityAndOrdering) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> p(0.0, 0.6);
    for (int t = 0; t < 1000; ++t) {
        const int r = 1 + static_cast<int>(rng() % 12), c = 1 + static_cast<int>(rng() % 12);
        const Mask a = random_mask(rng, r, c, p(rng)), b = random_mask(rng, r, c, p(rng));
        const double d = st::dice(a, b), j = st::iou(a, b);
        EXPECT_NEAR(d, 2 * j / (1 + j), 1e-12);
        EXPECT_GE(d, j);
        EXPECT_GE(j, 0.0);
        EXPECT_LE(d, 1.0);
        EXPECT_EQ(d, st::dice(b, a));
        EXPECT_EQ(j, st::iou(b, a));
    }
}

TEST(BlandAltman, HandComputedCases) {
    const auto same = st::bland_altman({{3, 3}, {5, 5}, {7, 7}});
    EXPECT_EQ(same.bias, 0);
    EXPECT_EQ(same.loa_low, 0);
    EXPECT_EQ(same.loa_high, 0);
    const auto pm = st::bland_altman({{1, 0}, {0, 1}});
    EXPECT_DOUBLE_EQ(pm.bias, 0);
    EXPECT_DOUBLE_EQ(pm.sd, std::sqrt(2.0));
    EXPECT_NEAR(pm.loa_high, 1.96 * std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(pm.loa_high, 2.772, 5e-4);
    const auto off = st::bland_altman({{10, 5}, {20, 15}, {8, 3}});
    EXPECT_DOUBLE_EQ(off.bias, 5);
    EXPECT_DOUBLE_EQ(off.loa_low, 5);
    EXPECT_DOUBLE_EQ(off.loa_high, 5);
    EXPECT_THROW(st::bland_altman({{1, 2}}), StatsError);
}

TEST(TTest, DegenerateAndSymmetricCases) {
    const auto t = st::paired_t_test({{1, 0}, {0, 1}, {2, 0}, {0, 2}});
    EXPECT_DOUBLE_EQ(t.t_stat, 0);
    EXPECT_DOUBLE_EQ(t.p_value, 1);
    EXPECT_THROW(st::paired_t_test({{2, 1}, {3, 2}}), StatsError);
    EXPECT_THROW(st::paired_t_test({{2, 1}}), StatsError);
}

TEST(Pearson, ExactLinearRelations) {
    std::vector<st::Pair> up, down;
    for (int i = 0; i < 10; ++i) {
        up.emplace_back(i, 2.0 * i + 1);
        down.emplace_back(i, -i);
    }
    EXPECT_NEAR(st::pearson_r(up), 1.0, 1e-15);
    EXPECT_NEAR(st::pearson_r(down), -1.0, 1e-15);
    EXPECT_THROW(st::pearson_r({{1, 2}, {1, 3}, {1, 4}}), StatsError);
}

TEST(ChiSquared, IndependentTableAndErrors) {
    const auto r = st::chi_squared({{2, 4, 6}, {3, 6, 9}});
    EXPECT_NEAR(r.chi2, 0.0, 1e-12);
    EXPECT_NEAR(r.p_value, 1.0, 1e-12);
    EXPECT_EQ(r.dof, 2);
    const auto k = st::chi_squared({{10, 20}, {20, 10}});
    EXPECT_NEAR(k.chi2, 20.0 / 3.0, 1e-12);
    EXPECT_THROW(st::chi_squared({{1, 2, 3}}), StatsError);
    EXPECT_THROW(st::chi_squared({{0, 0}, {1, 2}}), StatsError);
    EXPECT_THROW(st::chi_squared({{1, 2}, {3}}), StatsError);
}

TEST(Oracle, PairedStatisticsMatchReference) {
    const auto fx = svtest::load_stats_oracle();
    ASSERT_GE(fx.at("paired").size(), 20u);
    for (const auto& c : fx.at("paired")) {
        const auto p = pairs_of(c);
        const auto ba = st::bland_altman(p);
        EXPECT_TRUE(svtest::close_to(ba.bias, c.at("bias"), 1e-8));
        EXPECT_TRUE(svtest::close_to(ba.loa_low, c.at("loa_low"), 1e-8));
        EXPECT_TRUE(svtest::close_to(ba.loa_high, c.at("loa_high"), 1e-8));
        const auto t = st::paired_t_test(p);
        EXPECT_TRUE(svtest::close_to(t.t_stat, c.at("t_stat"), 1e-8)) << t.t_stat << " vs " << c.at("t_stat");
        EXPECT_TRUE(svtest::close_to(t.p_value, c.at("p_value"), 1e-8)) << t.p_value << " vs " << c.at("p_value");
        if (!c.at("pearson_r").is_null()) {
            EXPECT_TRUE(svtest::close_to(st::pearson_r(p), c.at("pearson_r"), 1e-8));
        }
    }
}

TEST(Oracle, ChiSquaredMatchesReference) {
    const auto fx = svtest::load_stats_oracle();
    ASSERT_GE(fx.at("chi_squared").size(), 20u);
    for (const auto& c : fx.at("chi_squared")) {
        const auto r = st::chi_squared(c.at("table").get<std::vector<std::vector<double>>>());
        EXPECT_TRUE(svtest::close_to(r.chi2, c.at("chi2"), 1e-8));
        EXPECT_TRUE(svtest::close_to(r.p_value, c.at("p_value"), 1e-8)) << r.p_value << " vs " << c.at("p_value");
        EXPECT_EQ(r.dof, c.at("dof").get<int>());
    }
}

TEST(Oracle, SpecialFunctionsMatchReferenceGrid) {
    const auto fx = svtest::load_stats_oracle();
    for (const auto& c : fx.at("incomplete_beta"))
        EXPECT_NEAR(st::incomplete_beta(c.at("a"), c.at("b"), c.at("x")), c.at("value").get<double>(), 1e-8);
    for (const auto& c : fx.at("gamma_p"))
        EXPECT_NEAR(st::gamma_p(c.at("a"), c.at("x")), c.at("value").get<double>(), 1e-8);
    for (const auto& c : fx.at("gamma_q"))
        EXPECT_NEAR(st::gamma_q(c.at("a"), c.at("x")), c.at("value").get<double>(), 1e-8);
    for (const auto& c : fx.at("student_t"))
        EXPECT_NEAR(st::student_t_two_sided_p(c.at("t"), c.at("dof")), c.at("value").get<double>(), 1e-8);
}

TEST(Properties, BiasAntisymmetricAndTestShiftInvariant) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(50, 10);
    for (int t = 0; t < 200; ++t) {
        std::vector<st::Pair> p, swapped, shifted;
        const double shift = n(rng);
        const int count = 3 + static_cast<int>(rng() % 20);
        for (int i = 0; i < count; ++i) {
            const double x = n(rng), y = n(rng);
            p.emplace_back(x, y);
            swapped.emplace_back(y, x);
            shifted.emplace_back(x + shift, y + shift);
        }
        const auto a = st::bland_altman(p), b = st::bland_altman(swapped);
        EXPECT_NEAR(a.bias, -b.bias, 1e-12);
        EXPECT_LE(a.loa_low, a.bias);
        EXPECT_LE(a.bias, a.loa_high);
        const auto t0 = st::paired_t_test(p), t1 = st::paired_t_test(shifted);
        EXPECT_NEAR(t0.p_value, t1.p_value, 1e-9);
        EXPECT_GE(t0.p_value, 0.0);
        EXPECT_LE(t0.p_value, 1.0);
    }
}

TEST(Summary, PercentilesInterpolateLinearly) {
    const auto s = st::summarize({4, 1, 3, 2, 5});
    EXPECT_EQ(s.median, 3);
    EXPECT_EQ(s.q1, 2);
    EXPECT_EQ(s.q3, 4);
    EXPECT_EQ(s.min, 1);
    EXPECT_EQ(s.max, 5);
    EXPECT_DOUBLE_EQ(st::median({1, 2, 3, 4}), 2.5);
    EXPECT_THROW(st::median({}), StatsError);
}

TEST(Plots, SvgContainsEveryPoint) {
    const std::vector<st::Pair> p{{100, 98}, {120, 125}, {90, 91}};
    const auto ba = st::bland_altman_svg(p, "EDV", "mL");
    EXPECT_NE(ba.find("<svg"), std::string::npos);
    std::size_t circles = 0;
    for (auto pos = ba.find("<circle"); pos != std::string::npos; pos = ba.find("<circle", pos + 1)) ++circles;
    EXPECT_EQ(circles, 3u);
    const auto sc = st::scatter_svg(p, "EDV <A&B>", "manual", "auto");
    EXPECT_NE(sc.find("&lt;A&amp;B&gt;"), std::string::npos);
}

}  // namespace
