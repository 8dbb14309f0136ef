#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

#include "perfaug/error.hpp"
#include "perfaug/patterns.hpp"
#include "perfaug/synth.hpp"

using namespace perfaug;

namespace {

std::vector<double> curve(double a, double b, std::size_t m) {
    std::vector<double> y(m);
    for (std::size_t j = 0; j < m; ++j) y[j] = a * std::pow(static_cast<double>(j + 1), b);
    return y;
}

std::vector<ParamPoint> blobs(const std::vector<ParamPoint>& centres, std::size_t per, double sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sd);
    std::vector<ParamPoint> pts;
    for (const auto& c : centres)
        for (std::size_t r = 0; r < per; ++r) pts.push_back({c[0] + n(rng), c[1] + n(rng)});
    return pts;
}

// Silhouette over per-dimension standardized points, written out directly.
double silhouette_oracle(const std::vector<ParamPoint>& pts, const std::vector<std::size_t>& labels, std::size_t k) {
    const std::size_t n = pts.size();
    double mean[2] = {0, 0}, sd[2] = {0, 0};
    for (const auto& p : pts)
        for (int d = 0; d < 2; ++d) mean[d] += p[d] / static_cast<double>(n);
    for (const auto& p : pts)
        for (int d = 0; d < 2; ++d) sd[d] += (p[d] - mean[d]) * (p[d] - mean[d]) / static_cast<double>(n);
    std::vector<ParamPoint> z;
    for (const auto& p : pts) {
        ParamPoint q;
        for (int d = 0; d < 2; ++d) q[d] = sd[d] > 0 ? (p[d] - mean[d]) / std::sqrt(sd[d]) : 0.0;
        z.push_back(q);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sum(k, 0.0), cnt(k, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            sum[labels[j]] += std::hypot(z[i][0] - z[j][0], z[i][1] - z[j][1]);
            cnt[labels[j]] += 1.0;
        }
        if (cnt[labels[i]] == 0.0) continue;
        const double a = sum[labels[i]] / cnt[labels[i]];
        double b = INFINITY;
        for (std::size_t c = 0; c < k; ++c)
            if (c != labels[i] && cnt[c] > 0) b = std::min(b, sum[c] / cnt[c]);
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("noiseless power-law curves are recovered exactly") {
    const std::vector<std::pair<double, double>> cases{
        {0.5, 0.2}, {0.9, 0.01}, {0.1, 0.8}, {0.3, 0.0}, {0.7, -0.15}, {0.05, 1.2}, {0.45, 0.35}};
    for (auto [a, b] : cases) {
        auto y = curve(a, b, 9);
        auto fit = fit_power_law(y);
        CHECK(std::abs(fit.a - a) < 1e-6);
        CHECK(std::abs(fit.b - b) < 1e-6);
        CHECK(fit.sse < 1e-12);
    }
}

TEST_CASE("power-law fit is least squares in the original space") {
    std::vector<double> y{0.2, 0.5, 0.4, 0.7, 0.6, 0.8};
    auto fit = fit_power_law(y);
    auto sse = [&](double a, double b) {
        double s = 0.0;
        for (std::size_t j = 0; j < y.size(); ++j) {
            const double e = a * std::pow(static_cast<double>(j + 1), b) - y[j];
            s += e * e;
        }
        return s;
    };
    CHECK(fit.sse == doctest::Approx(sse(fit.a, fit.b)).epsilon(1e-10));
    for (double da : {-1e-3, 1e-3})
        for (double db : {-1e-3, 1e-3}) CHECK(sse(fit.a + da, fit.b + db) >= fit.sse);
}

TEST_CASE("power-law fit handles flat and clamped rows") {
    auto flat = fit_power_law(std::vector<double>(9, 0.4));
    CHECK(flat.a == doctest::Approx(0.4).epsilon(1e-9));
    CHECK(std::abs(flat.b) < 1e-9);
    auto zeros = fit_power_law(std::vector<double>(5, 0.0));
    CHECK(std::isfinite(zeros.a));
    CHECK(std::isfinite(zeros.b));
    CHECK_THROWS_AS(fit_power_law(std::vector<double>{0.5}), ValidationError);
    CHECK_THROWS_AS(fit_power_law(std::vector<double>{0.5, NAN}), ValidationError);
}

TEST_CASE("fit_rows fits each row") {
    Matrix rows(2, 9);
    for (int j = 0; j < 9; ++j) {
        rows(0, j) = 0.3 * std::pow(j + 1.0, 0.4);
        rows(1, j) = 0.8 * std::pow(j + 1.0, 0.05);
    }
    auto fits = fit_rows(rows);
    REQUIRE(fits.size() == 2);
    CHECK(fits[0].a == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(fits[1].b == doctest::Approx(0.05).epsilon(1e-6));
}

TEST_CASE("slices and cluster rows") {
    DenseTensor d = make_dense(3, 2, 4);
    for (std::size_t n = 0; n < d.probs.size(); ++n) d.probs[n] = static_cast<double>(n) / 100.0;
    Matrix s = extract_slice(d, 1);
    CHECK(s.rows() == 3);
    CHECK(s.cols() == 4);
    CHECK(s(2, 3) == d.at(2, 1, 3));
    CHECK_THROWS_AS(extract_slice(d, 2), IndexError);
    Matrix c = cluster_rows(s, {1, 0, 1}, 1);
    REQUIRE(c.rows() == 2);
    CHECK(c.row(1) == s.row(2));
    CHECK_THROWS_AS(cluster_rows(s, {0, 1}, 0), DimensionError);
}

TEST_CASE("k-means recovers separated blobs, monotonically and deterministically") {
    auto pts = blobs({{0.2, 0.1}, {0.8, 0.1}, {0.5, 0.6}}, 30, 0.02, 4);
    auto a = kmeanspp(pts, 3, 9);
    auto b = kmeanspp(pts, 3, 9);
    CHECK(a.labels == b.labels);
    CHECK(a.centroids == b.centroids);
    for (std::size_t n = 1; n < a.inertia_history.size(); ++n)
        CHECK(a.inertia_history[n] <= a.inertia_history[n - 1] + 1e-12);
    std::vector<std::size_t> truth;
    for (std::size_t c = 0; c < 3; ++c) truth.insert(truth.end(), 30, c);
    CHECK(cluster_purity(truth, a.labels) == 1.0);
    CHECK_THROWS_AS(kmeanspp(pts, 0, 1), ParameterError);
    CHECK_THROWS_AS(kmeanspp({{0, 0}}, 2, 1), ValidationError);
}

TEST_CASE("silhouette matches a direct computation") {
    auto pts = blobs({{0.2, 0.1}, {0.6, 0.4}}, 12, 0.15, 2);
    std::vector<std::size_t> labels;
    for (std::size_t n = 0; n < pts.size(); ++n) labels.push_back((n * 7) % 3);
    CHECK(mean_silhouette(pts, labels, 3) == doctest::Approx(silhouette_oracle(pts, labels, 3)).epsilon(1e-12));
    auto fit = kmeanspp(pts, 2, 3);
    CHECK(mean_silhouette(pts, fit.labels, 2) == doctest::Approx(silhouette_oracle(pts, fit.labels, 2)).epsilon(1e-12));
}

TEST_CASE("silhouette selection finds the number of blobs") {
    auto pts = blobs({{0.1, 0.1}, {0.9, 0.1}, {0.5, 0.9}, {0.9, 0.9}}, 20, 0.02, 6);
    auto sel = select_k(pts, 2, 7, 11);
    CHECK(sel.k == 4);
    CHECK(sel.candidates.size() == 6);
    CHECK_FALSE(sel.low_confidence);
    CHECK_THROWS_AS(select_k(pts, 1, 4, 1), ParameterError);
}

TEST_CASE("question clustering orders clusters by centroid a") {
    auto pop = generate_population(five_cluster_spec(1));
    ClusterOptions opt;
    opt.k = 5;
    auto qc = cluster_question(pop.truth, 2, opt);
    CHECK(qc.question == 2);
    CHECK(qc.fits.size() == 120);
    CHECK_FALSE(qc.selection.has_value());
    for (std::size_t c = 1; c < 5; ++c) CHECK(qc.assignment.centroids[c - 1][0] >= qc.assignment.centroids[c][0]);
    std::vector<std::size_t> truth;
    for (const auto& l : pop.learners) truth.push_back(l.cluster);
    CHECK(cluster_purity(truth, qc.assignment.labels) >= 0.9);
}

TEST_CASE("power-law fit never does worse than the best constant") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> y(9);
        for (auto& v : y) v = u(rng);
        double mean = 0.0;
        for (double v : y) mean += v / 9.0;
        double constant = 0.0;
        for (double v : y) constant += (v - mean) * (v - mean);
        auto fit = fit_power_law(y);
        CHECK(fit.sse <= constant + 1e-12);
        CHECK(fit.a > 0.0);
        CHECK(fit.sse >= 0.0);
    }
}

TEST_CASE("cluster labels survive positive rescaling of either dimension") {
    auto pts = blobs({{0.2, 0.1}, {0.7, 0.3}, {0.5, 0.05}}, 15, 0.04, 8);
    auto base = kmeanspp(pts, 3, 4);
    for (auto [c, d] : {std::pair{3.0, 0.5}, std::pair{0.01, 20.0}}) {
        auto scaled = pts;
        for (auto& p : scaled) p = {c * p[0], d * p[1]};
        CHECK(kmeanspp(scaled, 3, 4).labels == base.labels);
    }
    std::vector<std::size_t> sizes(3, 0);
    for (auto l : base.labels) {
        REQUIRE(l < 3);
        ++sizes[l];
    }
    CHECK(sizes[0] + sizes[1] + sizes[2] == pts.size());
    for (auto s : sizes) CHECK(s > 0);
}
