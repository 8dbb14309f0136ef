#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

#include "perfaug/error.hpp"
#include "perfaug/metrics.hpp"
#include "perfaug/patterns.hpp"
#include "perfaug/synth.hpp"

using namespace perfaug;

namespace {

std::vector<double> uniform_sample(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

std::vector<double> normal_sample(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

// Nearest-rank neighbours on a sorted copy, interpolated at p * (n - 1).
double quantile_oracle(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const double lo = std::floor(pos), hi = std::ceil(pos);
    return v[static_cast<std::size_t>(lo)] + (pos - lo) * (v[static_cast<std::size_t>(hi)] - v[static_cast<std::size_t>(lo)]);
}

// Two-pass sums of squares.
double anova_f_oracle(const std::vector<std::vector<double>>& groups) {
    double total = 0.0, count = 0.0;
    for (const auto& g : groups)
        for (double x : g) {
            total += x;
            count += 1.0;
        }
    const double grand = total / count;
    double ssb = 0.0, ssw = 0.0;
    for (const auto& g : groups) {
        double s = 0.0;
        for (double x : g) s += x;
        const double mean = s / static_cast<double>(g.size());
        for (double x : g) {
            ssb += (mean - grand) * (mean - grand);
            ssw += (x - mean) * (x - mean);
        }
    }
    const double k = static_cast<double>(groups.size());
    return (ssb / (k - 1.0)) / (ssw / (count - k));
}

}  // namespace

TEST_CASE("RMSE and MAE") {
    std::vector<double> p{1, 0}, o{0, 0};
    CHECK(rmse(p, o) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(mae(p, o) == 0.5);
    CHECK(rmse(o, o) == 0.0);
    std::vector<double> half(6, 0.5), balanced{0, 1, 0, 1, 1, 0};
    CHECK(rmse(half, balanced) == 0.5);
    CHECK(mae(half, balanced) == 0.5);
    CHECK_THROWS_AS(rmse(p, std::vector<double>{1}), DimensionError);
    CHECK_THROWS_AS(mae(std::vector<double>{}, std::vector<double>{}), ValidationError);
}

TEST_CASE("normalize_dist") {
    CHECK(normalize_dist(std::vector<double>{2, 2}) == std::vector<double>{0.5, 0.5});
    CHECK(normalize_dist(std::vector<double>{1, 0, 3}) == std::vector<double>{0.25, 0, 0.75});
    CHECK_THROWS_AS(normalize_dist(std::vector<double>{0, 0}), ValidationError);
    CHECK_THROWS_AS(normalize_dist(std::vector<double>{1, -1}), ValidationError);
    auto v = normalize_dist(uniform_sample(37, 3));
    double s = 0.0;
    for (double x : v) s += x;
    CHECK(std::abs(s - 1.0) < 1e-12);
}

TEST_CASE("EMD of identical samples is zero and of adjacent point masses is one") {
    auto x = uniform_sample(100, 1);
    CHECK(emd(x, x).value == 0.0);
    auto r = emd(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0}, 2);
    CHECK(r.value == 1.0);
    CHECK(r.n_orig == 2);
    CHECK(r.n_aug == 1);
    CHECK(r.bins == 2);
    CHECK_THROWS_AS(emd(std::vector<double>{}, x), ValidationError);
    CHECK_THROWS_AS(emd(x, x, 0), ParameterError);
}

TEST_CASE("EMD is shifted to the nonnegative range for negative exponents") {
    std::vector<double> a{-0.3, -0.1, 0.2}, b{-0.2, 0.0, 0.1};
    auto r = emd(a, b, 10, PowerLawParameter::B);
    CHECK(r.shift == doctest::Approx(0.3));
    CHECK(r.parameter == PowerLawParameter::B);
    std::vector<double> a2{0.0, 0.2, 0.5}, b2{0.1, 0.3, 0.4};
    CHECK(r.value == doctest::Approx(emd(a2, b2, 10).value).epsilon(1e-12));
    CHECK(to_string(PowerLawParameter::B) == "b");
}

TEST_CASE("EMD is symmetric and obeys the triangle inequality on a shared grid") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        // Pin both endpoints in every sample so all three pairs share one grid.
        auto x = uniform_sample(30, 3 * seed + 1);
        auto y = uniform_sample(45, 3 * seed + 2);
        auto z = uniform_sample(25, 3 * seed + 3);
        for (auto* v : {&x, &y, &z}) {
            v->push_back(0.0);
            v->push_back(1.0);
        }
        const double xy = emd(x, y).value, yx = emd(y, x).value;
        const double yz = emd(y, z).value, xz = emd(x, z).value;
        CHECK(xy == doctest::Approx(yx).epsilon(1e-12));
        CHECK(xy >= 0.0);
        CHECK(xz <= xy + yz + 1e-12);
    }
}

TEST_CASE("quantiles and IQR") {
    std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8};
    CHECK(quantile(v, 0.25) == doctest::Approx(2.75));
    CHECK(quantile(v, 0.75) == doctest::Approx(6.25));
    CHECK(iqr(v) == doctest::Approx(3.5));
    CHECK(iqr(std::vector<double>(5, 0.7)) == 0.0);
    auto shifted = v;
    for (auto& x : shifted) x += 10.0;
    CHECK(iqr(shifted) == doctest::Approx(3.5));
    CHECK_THROWS_AS(iqr(std::vector<double>{1}), ValidationError);
    CHECK_THROWS_AS(quantile(v, 1.5), ParameterError);
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        auto r = uniform_sample(2 + seed * 3, seed, -5.0, 5.0);
        for (double p : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0})
            CHECK(quantile(r, p) == doctest::Approx(quantile_oracle(r, p)).epsilon(1e-12));
        CHECK(iqr(r) == doctest::Approx(quantile_oracle(r, 0.75) - quantile_oracle(r, 0.25)).epsilon(1e-12));
    }
}

TEST_CASE("bimodality coefficient reference distributions") {
    auto normal = bimodality_coefficient(normal_sample(10000, 11));
    CHECK(normal.bc == doctest::Approx(1.0 / 3.0).epsilon(0.06));
    CHECK(std::abs(normal.bc - 0.333) <= 0.02);
    CHECK_FALSE(normal.bimodal);
    auto uniform = bimodality_coefficient(uniform_sample(10000, 12));
    CHECK(std::abs(uniform.bc - 0.555) <= 0.02);
    CHECK(uniform.k == doctest::Approx(-1.2).epsilon(0.05));
    std::vector<double> two_point(10000);
    for (std::size_t n = 0; n < two_point.size(); ++n) two_point[n] = static_cast<double>(n % 2);
    auto tp = bimodality_coefficient(two_point);
    CHECK(tp.bc == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(tp.bimodal);
    CHECK_THROWS_AS(bimodality_coefficient(std::vector<double>{1, 2, 3}), ValidationError);
    CHECK_THROWS_AS(bimodality_coefficient(std::vector<double>(6, 1.0)), ValidationError);
}

TEST_CASE("bimodality coefficient is affine invariant") {
    auto v = normal_sample(200, 5);
    for (std::size_t n = 0; n < 60; ++n) v[n] += 3.0;
    const double bc = bimodality_coefficient(v).bc;
    CHECK(bc > 0.0);
    auto w = v;
    for (auto& x : w) x = 2.5 * x - 7.0;
    CHECK(bimodality_coefficient(w).bc == doctest::Approx(bc).epsilon(1e-10));
}

TEST_CASE("ANOVA degrees of freedom and F against a two-pass oracle") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        std::vector<std::vector<double>> groups;
        for (std::uint64_t g = 0; g < 6; ++g) {
            auto v = uniform_sample(10, seed * 100 + g);
            for (auto& x : v) x += 0.1 * static_cast<double>(g);
            groups.push_back(v);
        }
        auto r = anova_oneway(groups);
        CHECK(r.df_between == 5);
        CHECK(r.df_within == 54);
        CHECK(std::abs(r.f_value - anova_f_oracle(groups)) < 1e-10);
        CHECK(r.p_value >= 0.0);
        CHECK(r.p_value <= 1.0);
    }
}

TEST_CASE("ANOVA p-value matches the closed-form F(2, n) survival") {
    // With two numerator degrees of freedom, P(F > f) = (1 + 2 f / d2)^(-d2 / 2).
    std::vector<std::vector<double>> groups{uniform_sample(7, 1), uniform_sample(9, 2), uniform_sample(8, 3)};
    for (auto& x : groups[2]) x += 0.3;
    auto r = anova_oneway(groups);
    const double d2 = static_cast<double>(r.df_within);
    CHECK(r.p_value == doctest::Approx(std::pow(1.0 + 2.0 * r.f_value / d2, -d2 / 2.0)).epsilon(1e-10));
}

TEST_CASE("ANOVA degenerate inputs") {
    auto same = anova_oneway({{0.4, 0.4}, {0.4, 0.4, 0.4}});
    CHECK(same.f_value == 0.0);
    CHECK(same.p_value == 1.0);
    CHECK_THROWS_AS(anova_oneway({{0, 0, 0}, {1, 1, 1}}), ValidationError);
    CHECK_THROWS_AS(anova_oneway({{0, 1}}), ValidationError);
    CHECK_THROWS_AS(anova_oneway({{0, 1}, {2}}), ValidationError);
}

TEST_CASE("size range and sweep ordering") {
    auto sizes = size_range(1000, 20000, 1000);
    CHECK(sizes.size() == 20);
    CHECK(sizes.front() == 1000);
    CHECK(sizes.back() == 20000);
    CHECK_THROWS_AS(size_range(5, 1, 1), ParameterError);

    Matrix train(4, 5);
    for (int r = 0; r < 4; ++r)
        for (int j = 0; j < 5; ++j) train(r, j) = (0.2 + 0.1 * r) * std::pow(j + 1.0, 0.1 * r);
    Sampler tile = [&](std::size_t n) {
        Matrix m(static_cast<Eigen::Index>(n), 5);
        for (std::size_t r = 0; r < n; ++r) m.row(static_cast<Eigen::Index>(r)) = train.row(static_cast<Eigen::Index>(r % 4));
        return m;
    };
    auto out = emd_sweep(train, tile, {8, 4, 12}, 20);
    REQUIRE(out.size() == 6);
    const std::vector<std::size_t> order{8, 8, 4, 4, 12, 12};
    for (std::size_t n = 0; n < out.size(); ++n) {
        CHECK(out[n].size == order[n]);
        CHECK(out[n].emd.parameter == (n % 2 == 0 ? PowerLawParameter::A : PowerLawParameter::B));
        CHECK(out[n].emd.value < 1e-12);
        CHECK(out[n].bc_original.has_value());
    }
    Sampler short_sampler = [](std::size_t n) { return Matrix(static_cast<Eigen::Index>(n / 2), 5); };
    CHECK_THROWS_AS(emd_sweep(train, short_sampler, {4}), DimensionError);
}

TEST_CASE("bootstrap resampling of the training rows converges in EMD") {
    auto pop = generate_population(five_cluster_spec(1));
    std::vector<std::size_t> labels;
    for (const auto& l : pop.learners) labels.push_back(l.cluster);
    const Matrix train = cluster_rows(extract_slice(pop.truth, 0), labels, 1);
    std::mt19937_64 rng(17);
    Sampler bootstrap = [&](std::size_t n) {
        std::uniform_int_distribution<Eigen::Index> pick(0, train.rows() - 1);
        Matrix m(static_cast<Eigen::Index>(n), train.cols());
        for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) = train.row(pick(rng));
        return m;
    };
    auto out = emd_sweep(train, bootstrap, {20000});
    REQUIRE(out.size() == 2);
    for (const auto& e : out) CHECK(e.emd.value <= 0.05);
}

TEST_CASE("bootstrap EMD shrinks like the inverse square root of the sample size") {
    auto pop = generate_population(five_cluster_spec(1));
    std::vector<std::size_t> labels;
    for (const auto& l : pop.learners) labels.push_back(l.cluster);
    const Matrix train = cluster_rows(extract_slice(pop.truth, 0), labels, 1);
    double small = 0.0, large = 0.0;
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        std::mt19937_64 rng(seed);
        Sampler bootstrap = [&](std::size_t n) {
            std::uniform_int_distribution<Eigen::Index> pick(0, train.rows() - 1);
            Matrix m(static_cast<Eigen::Index>(n), train.cols());
            for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) = train.row(pick(rng));
            return m;
        };
        auto out = emd_sweep(train, bootstrap, {1000, 16000});
        small += out[0].emd.value + out[1].emd.value;
        large += out[2].emd.value + out[3].emd.value;
    }
    // Sixteen times the rows gives a quarter of the error in expectation.
    CHECK(large < small / 2.5);
    CHECK(large > small / 6.0);
}
