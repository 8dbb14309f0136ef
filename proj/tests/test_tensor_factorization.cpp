#include <cmath>
#include <vector>

#include "doctest.h"

#include "perfaug/error.hpp"
#include "perfaug/synth.hpp"
#include "perfaug/tensor_factorization.hpp"

using namespace perfaug;

namespace {

PerformanceTensor small_tensor() {
    PerformanceTensor t({"a", "b", "c", "d"}, {"x", "y", "z"}, 3);
    const int pattern[] = {1, 0, -1, 1, 1, 0, -1, 0, 1, 0, 1, 1, -1, -1, 1, 0, 0, 1,
                           1, 1, 1, -1, 0, 0, 0, -1, -1, 1, 0, 1, 1, -1, 0, 0, 1, -1};
    std::size_t n = 0;
    for (std::size_t u = 0; u < 4; ++u)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j, ++n)
                if (pattern[n] >= 0) t.set(u, i, j, pattern[n] ? Cell::One : Cell::Zero);
    return t;
}

// Parameters spread out enough that the rank hinge has active and inactive
// pairs away from its kink.
FactorizationModel spread_model(const PerformanceTensor& t, std::size_t rank) {
    auto m = init_model(t.num_learners(), t.num_questions(), t.num_attempts(), rank, 5);
    auto v = m.to_vector();
    for (std::size_t n = 0; n < v.size(); ++n) v[n] = 0.6 * std::sin(1.3 * static_cast<double>(n) + 0.4);
    m.from_vector(v);
    return m;
}

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t n = 0; n < analytic.size(); ++n) {
        const double scale = std::max({std::abs(analytic[n]), std::abs(numeric[n]), 1e-6});
        worst = std::max(worst, std::abs(analytic[n] - numeric[n]) / scale);
    }
    return worst;
}

}  // namespace

TEST_CASE("model vector round-trip and parameter count") {
    auto m = init_model(4, 3, 2, 2, 1);
    CHECK(m.parameter_count() == 4 * 2 + 2 * 2 * 3 + 4 + 3 + 2 + 1);
    auto v = m.to_vector();
    CHECK(v.size() == m.parameter_count());
    for (double& x : v) x += 0.25;
    FactorizationModel other = m;
    other.from_vector(v);
    CHECK(other.to_vector() == v);
    CHECK_THROWS_AS(other.from_vector({1.0}), DimensionError);
    CHECK_THROWS_AS(init_model(4, 3, 2, 0, 1), ParameterError);
}

TEST_CASE("logit follows the bilinear-plus-bias form") {
    auto t = small_tensor();
    auto m = spread_model(t, 2);
    const std::size_t u = 2, i = 1, j = 2;
    double z = m.learner_bias[u] + m.question_bias[i] + m.attempt_bias[j] + m.global_bias;
    for (std::size_t k = 0; k < 2; ++k) z += m.learner_features(u, k) * m.latent_at(k, j, i);
    CHECK(predict_logit(m, u, i, j) == doctest::Approx(z).epsilon(1e-14));
    CHECK(predict(m, u, i, j) == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-14));
    CHECK_THROWS_AS(predict(m, 4, 0, 0), IndexError);
}

TEST_CASE("sigmoid is stable at extremes") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(800.0) == 1.0);
    CHECK(sigmoid(3.0) + sigmoid(-3.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("zero model on an all-correct tensor costs lambda / 4") {
    PerformanceTensor t({"a", "b"}, {"x"}, 2);
    for (std::size_t u = 0; u < 2; ++u)
        for (std::size_t j = 0; j < 2; ++j) t.set(u, 0, j, Cell::One);
    auto m = init_model(2, 1, 2, 1, 3);
    m.from_vector(std::vector<double>(m.parameter_count(), 0.0));
    TfHyperParams hp;
    CHECK(objective(m, t, hp) == doctest::Approx(hp.lambda * 0.25).epsilon(1e-15));
}

TEST_CASE("empty tensor objective is the regularizer alone") {
    PerformanceTensor t({"a"}, {"x"}, 2);
    auto m = init_model(1, 1, 2, 1, 3);
    m.from_vector({2.0, 1.0, -1.0, 0.5, 0.0, 0.0, 0.0, 3.0});
    TfHyperParams hp;
    hp.eta = 0.0;
    const double expected = hp.lambda1 * 4.0 + hp.lambda2 * (1.0 + 1.0 + 0.25 + 9.0);
    CHECK(objective(m, t, hp) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("rank penalty matches a brute-force hinge sum") {
    auto t = small_tensor();
    auto m = spread_model(t, 2);
    double expected = 0.0;
    for (std::size_t u = 0; u < 4; ++u)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j + 1 < 3; ++j) expected += std::max(0.0, predict(m, u, i, j) - predict(m, u, i, j + 1));
    CHECK(expected > 0.0);
    CHECK(rank_penalty(m) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("objective gradient matches central differences") {
    auto t = small_tensor();
    TfHyperParams hp;
    hp.lambda = 0.1;
    hp.lambda1 = 1e-3;
    hp.lambda2 = 2e-3;
    hp.eta = 0.05;
    for (std::size_t rank : {1u, 2u}) {
        auto m = spread_model(t, rank);
        const auto analytic = objective_gradient(m, t, hp).to_vector();
        auto v = m.to_vector();
        std::vector<double> numeric(v.size());
        const double h = 1e-6;
        for (std::size_t n = 0; n < v.size(); ++n) {
            auto plus = v, minus = v;
            plus[n] += h;
            minus[n] -= h;
            FactorizationModel mp = m, mm = m;
            mp.from_vector(plus);
            mm.from_vector(minus);
            numeric[n] = (objective(mp, t, hp) - objective(mm, t, hp)) / (2.0 * h);
        }
        CHECK(max_relative_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("gradient covers parameters no cell touches") {
    PerformanceTensor t({"a", "b"}, {"x", "y"}, 2);
    t.set(0, 0, 0, Cell::One);
    auto m = spread_model(t, 1);
    TfHyperParams hp;
    hp.eta = 0.0;
    auto g = objective_gradient(m, t, hp);
    // Learner b has no observations: only its regularizer pulls on it.
    CHECK(g.learner_bias[1] == doctest::Approx(2.0 * hp.lambda2 * m.learner_bias[1]).epsilon(1e-14));
    CHECK(g.learner_features(1, 0) == doctest::Approx(2.0 * hp.lambda1 * m.learner_features(1, 0)).epsilon(1e-14));
}

TEST_CASE("per-cell losses average to the objective") {
    auto t = small_tensor();
    auto m = spread_model(t, 2);
    TfHyperParams hp;
    hp.lambda1 = 1e-3;
    hp.lambda2 = 1e-3;
    hp.eta = 0.0;
    const auto counts = detail::count_cells(t);
    double total = 0.0;
    for (const auto& c : t.observed()) total += detail::cell_loss(m, c, counts, hp);
    // Every parameter of this tensor is touched by some observation.
    CHECK(total / static_cast<double>(counts.total) == doctest::Approx(objective(m, t, hp)).epsilon(1e-12));
}

TEST_CASE("cell gradient matches central differences of the cell loss") {
    auto t = small_tensor();
    auto m = spread_model(t, 2);
    TfHyperParams hp;
    hp.lambda1 = 1e-3;
    hp.lambda2 = 1e-3;
    const auto counts = detail::count_cells(t);
    const auto cell = t.observed()[5];
    const auto g = detail::cell_gradient(m, cell, counts, hp);
    const double h = 1e-6;
    auto diff = [&](auto&& param) {
        const double keep = param(m);
        param(m) = keep + h;
        const double up = detail::cell_loss(m, cell, counts, hp);
        param(m) = keep - h;
        const double down = detail::cell_loss(m, cell, counts, hp);
        param(m) = keep;
        return (up - down) / (2.0 * h);
    };
    const std::size_t u = cell.learner, i = cell.question, j = cell.attempt;
    std::vector<double> analytic, numeric;
    for (std::size_t k = 0; k < 2; ++k) {
        analytic.push_back(g.features[k]);
        numeric.push_back(diff([&](FactorizationModel& x) -> double& { return x.learner_features(u, k); }));
        analytic.push_back(g.latent[k]);
        numeric.push_back(diff([&](FactorizationModel& x) -> double& { return x.latent_at(k, j, i); }));
    }
    analytic.insert(analytic.end(), {g.learner_bias, g.question_bias, g.attempt_bias, g.global_bias});
    numeric.push_back(diff([&](FactorizationModel& x) -> double& { return x.learner_bias[u]; }));
    numeric.push_back(diff([&](FactorizationModel& x) -> double& { return x.question_bias[i]; }));
    numeric.push_back(diff([&](FactorizationModel& x) -> double& { return x.attempt_bias[j]; }));
    numeric.push_back(diff([&](FactorizationModel& x) -> double& { return x.global_bias; }));
    CHECK(max_relative_error(analytic, numeric) < 1e-5);
}

TEST_CASE("zero learning rate leaves the initial model unchanged") {
    auto t = small_tensor();
    TfHyperParams hp;
    hp.lr = 0.0;
    hp.max_epochs = 3;
    auto r = fit(t, 2, hp);
    CHECK(r.model == init_model(4, 3, 3, 2, hp.seed));
}

TEST_CASE("fit lowers the objective and is deterministic") {
    auto pop = generate_population(five_cluster_spec(2));
    TfHyperParams hp;
    hp.max_epochs = 60;
    auto a = fit(pop.observed, 2, hp);
    auto b = fit(pop.observed, 2, hp);
    CHECK(a.model == b.model);
    CHECK(a.history == b.history);
    REQUIRE_FALSE(a.history.empty());
    CHECK(a.history.back() <= a.initial_objective);
    CHECK(a.model.all_finite());

    auto dense = impute(a.model);
    CHECK(dense.probs.size() == 120u * 10u * 9u);
    for (double p : dense.probs) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
    CHECK(dense.at(3, 4, 5) == doctest::Approx(predict(a.model, 3, 4, 5)).epsilon(1e-15));
}

TEST_CASE("fit stops early once the objective settles") {
    auto t = small_tensor();
    TfHyperParams hp;
    hp.tol = 1e-3;
    hp.max_epochs = 5000;
    auto r = fit(t, 1, hp);
    CHECK(r.converged);
    CHECK(r.history.size() < 5000u);
}

TEST_CASE("fit rejects bad inputs") {
    PerformanceTensor empty({"a"}, {"x"}, 1);
    CHECK_THROWS_AS(fit(empty, 1, TfHyperParams{}), ValidationError);
    TfHyperParams hp;
    hp.max_epochs = 0;
    CHECK_THROWS_AS(fit(small_tensor(), 1, hp), ParameterError);
    hp = {};
    hp.lr = -1.0;
    CHECK_THROWS_AS(fit(small_tensor(), 1, hp), ParameterError);
}

TEST_CASE("hyperparameter ranges") {
    TfHyperParams hp;
    CHECK_NOTHROW(hp.validate());
    hp.lambda = 0.5;
    CHECK_THROWS_AS(hp.validate(), ParameterError);
    hp = {};
    hp.lambda1 = 1e-3;
    CHECK_THROWS_AS(hp.validate(), ParameterError);
    hp = {};
    hp.lambda2 = 0.0;
    CHECK_THROWS_AS(hp.validate(), ParameterError);
    hp = {};
    hp.lr = 0.9;
    CHECK_THROWS_AS(hp.validate(), ParameterError);
}

TEST_CASE("grid search is independent of the worker count") {
    auto pop = generate_population(five_cluster_spec(3));
    TfHyperParams hp;
    hp.max_epochs = 20;
    auto serial = grid_search_k(pop.observed, 1, 3, hp, 3, 1);
    auto parallel = grid_search_k(pop.observed, 1, 3, hp, 3, 3);
    REQUIRE(serial.ranks == std::vector<std::size_t>{1, 2, 3});
    CHECK(serial.best_rank == parallel.best_rank);
    for (std::size_t n = 0; n < 3; ++n) CHECK(serial.scores[n].fold_rmse == parallel.scores[n].fold_rmse);
    std::size_t best = 0;
    for (std::size_t n = 1; n < 3; ++n)
        if (serial.scores[n].mean_rmse < serial.scores[best].mean_rmse) best = n;
    CHECK(serial.best_rank == serial.ranks[best]);
    CHECK_THROWS_AS(grid_search_k(pop.observed, 3, 2, hp), ParameterError);
}

TEST_CASE("predictions depend only on the sum of learner and global biases") {
    auto m = init_model(4, 3, 2, 2, 21);
    for (Eigen::Index u = 0; u < 4; ++u) m.learner_bias[u] = 0.1 * static_cast<double>(u) - 0.2;
    m.global_bias = 0.3;
    for (double c : {-1.5, 0.25, 4.0}) {
        auto shifted = m;
        shifted.learner_bias.array() += c;
        shifted.global_bias -= c;
        for (std::size_t u = 0; u < 4; ++u)
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 2; ++j)
                    CHECK(predict(shifted, u, i, j) == doctest::Approx(predict(m, u, i, j)).epsilon(1e-12));
    }
}
