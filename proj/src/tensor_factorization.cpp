#include "perfaug/tensor_factorization.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "perfaug/error.hpp"
#include "perfaug/random.hpp"

namespace perfaug {

std::vector<double> FactorizationModel::to_vector() const {
    std::vector<double> v;
    v.reserve(parameter_count());
    for (std::size_t u = 0; u < learners; ++u)
        for (std::size_t k = 0; k < rank; ++k) v.push_back(learner_features(u, k));
    v.insert(v.end(), latent.begin(), latent.end());
    v.insert(v.end(), learner_bias.begin(), learner_bias.end());
    v.insert(v.end(), question_bias.begin(), question_bias.end());
    v.insert(v.end(), attempt_bias.begin(), attempt_bias.end());
    v.push_back(global_bias);
    return v;
}

void FactorizationModel::from_vector(const std::vector<double>& values) {
    if (values.size() != parameter_count()) throw DimensionError("parameter vector has the wrong length");
    auto it = values.begin();
    for (std::size_t u = 0; u < learners; ++u)
        for (std::size_t k = 0; k < rank; ++k) learner_features(u, k) = *it++;
    for (double& x : latent) x = *it++;
    for (double& x : learner_bias) x = *it++;
    for (double& x : question_bias) x = *it++;
    for (double& x : attempt_bias) x = *it++;
    global_bias = *it;
}

std::size_t FactorizationModel::parameter_count() const {
    return learners * rank + latent.size() + learners + questions + attempts + 1;
}

bool FactorizationModel::all_finite() const {
    auto v = to_vector();
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool FactorizationModel::operator==(const FactorizationModel& o) const {
    return learners == o.learners && questions == o.questions && attempts == o.attempts && rank == o.rank &&
           to_vector() == o.to_vector();
}

void TfHyperParams::validate() const {
    auto in = [](double x, double lo, double hi) { return x >= lo && x <= hi; };
    if (!in(lambda, 1e-6, 1e-1)) throw ParameterError("lambda must lie in [1e-6, 1e-1]");
    if (!in(lambda1, 1e-9, 1e-4)) throw ParameterError("lambda1 must lie in [1e-9, 1e-4]");
    if (!in(lambda2, 1e-9, 1e-4)) throw ParameterError("lambda2 must lie in [1e-9, 1e-4]");
    if (!in(lr, 1e-2, 0.5)) throw ParameterError("learning rate must lie in [1e-2, 0.5]");
    if (!(eta >= 0.0)) throw ParameterError("eta must be nonnegative");
    if (max_epochs < 1) throw ParameterError("max_epochs must be at least 1");
    if (!(tol >= 0.0)) throw ParameterError("tol must be nonnegative");
}

double DenseTensor::at(std::size_t u, std::size_t i, std::size_t j) const {
    if (u >= learners || i >= questions || j >= attempts) throw IndexError("dense tensor index out of range");
    return probs[(u * questions + i) * attempts + j];
}

double& DenseTensor::at(std::size_t u, std::size_t i, std::size_t j) {
    if (u >= learners || i >= questions || j >= attempts) throw IndexError("dense tensor index out of range");
    return probs[(u * questions + i) * attempts + j];
}

DenseTensor make_dense(std::size_t learners, std::size_t questions, std::size_t attempts, double fill) {
    return DenseTensor{learners, questions, attempts, std::vector<double>(learners * questions * attempts, fill)};
}

FactorizationModel init_model(std::size_t learners, std::size_t questions, std::size_t attempts, std::size_t rank,
                              std::uint64_t seed) {
    if (rank < 1) throw ParameterError("rank K must be at least 1");
    if (learners < 1 || questions < 1 || attempts < 1) throw DimensionError("tensor dimensions must be at least 1");
    Rng rng = make_rng(seed, 0x1417);
    std::uniform_real_distribution<double> init(-0.05, 0.05);

    FactorizationModel m;
    m.learners = learners;
    m.questions = questions;
    m.attempts = attempts;
    m.rank = rank;
    m.learner_features.resize(static_cast<Eigen::Index>(learners), static_cast<Eigen::Index>(rank));
    for (std::size_t u = 0; u < learners; ++u)
        for (std::size_t k = 0; k < rank; ++k) m.learner_features(u, k) = init(rng);
    m.latent.resize(rank * attempts * questions);
    for (double& x : m.latent) x = init(rng);
    m.learner_bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(learners));
    m.question_bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(questions));
    m.attempt_bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(attempts));
    return m;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

double logit_unchecked(const FactorizationModel& m, std::size_t u, std::size_t i, std::size_t j) {
    double z = m.learner_bias[u] + m.question_bias[i] + m.attempt_bias[j] + m.global_bias;
    for (std::size_t k = 0; k < m.rank; ++k) z += m.learner_features(u, k) * m.latent_at(k, j, i);
    return z;
}

void check_dims(const FactorizationModel& m, const PerformanceTensor& t) {
    if (m.learners != t.num_learners() || m.questions != t.num_questions() || m.attempts != t.num_attempts())
        throw DimensionError("model and tensor dimensions differ");
}

FactorizationModel zeros_like(const FactorizationModel& m) {
    FactorizationModel g = m;
    g.learner_features.setZero();
    std::fill(g.latent.begin(), g.latent.end(), 0.0);
    g.learner_bias.setZero();
    g.question_bias.setZero();
    g.attempt_bias.setZero();
    g.global_bias = 0.0;
    return g;
}

// Adds `scale` * d logit(u,i,j) / d theta into g.
void add_logit_gradient(const FactorizationModel& m, std::size_t u, std::size_t i, std::size_t j, double scale,
                        FactorizationModel& g) {
    for (std::size_t k = 0; k < m.rank; ++k) {
        g.learner_features(u, k) += scale * m.latent_at(k, j, i);
        g.latent_at(k, j, i) += scale * m.learner_features(u, k);
    }
    g.learner_bias[u] += scale;
    g.question_bias[i] += scale;
    g.attempt_bias[j] += scale;
    g.global_bias += scale;
}

double regularizer(const FactorizationModel& m, const TfHyperParams& hp) {
    double latent_sq = 0.0;
    for (double x : m.latent) latent_sq += x * x;
    return hp.lambda1 * m.learner_features.squaredNorm() +
           hp.lambda2 * (latent_sq + m.learner_bias.squaredNorm() + m.question_bias.squaredNorm() +
                         m.attempt_bias.squaredNorm() + m.global_bias * m.global_bias);
}

// Regularizer gradient restricted to parameters no observed cell touches;
// the per-cell shares cover every other parameter.
void add_untouched_regularizer_gradient(const FactorizationModel& m, const detail::CellCounts& counts,
                                        const TfHyperParams& hp, double scale, FactorizationModel& g) {
    for (std::size_t u = 0; u < m.learners; ++u) {
        if (counts.learner[u]) continue;
        for (std::size_t k = 0; k < m.rank; ++k) g.learner_features(u, k) += scale * 2.0 * hp.lambda1 * m.learner_features(u, k);
        g.learner_bias[u] += scale * 2.0 * hp.lambda2 * m.learner_bias[u];
    }
    for (std::size_t i = 0; i < m.questions; ++i)
        if (!counts.question[i]) g.question_bias[i] += scale * 2.0 * hp.lambda2 * m.question_bias[i];
    for (std::size_t j = 0; j < m.attempts; ++j) {
        if (!counts.attempt[j]) g.attempt_bias[j] += scale * 2.0 * hp.lambda2 * m.attempt_bias[j];
        for (std::size_t i = 0; i < m.questions; ++i) {
            if (counts.attempt_question[j * m.questions + i]) continue;
            for (std::size_t k = 0; k < m.rank; ++k) g.latent_at(k, j, i) += scale * 2.0 * hp.lambda2 * m.latent_at(k, j, i);
        }
    }
    if (!counts.total) g.global_bias += scale * 2.0 * hp.lambda2 * m.global_bias;
}

void axpy(double alpha, const FactorizationModel& x, FactorizationModel& y) {
    y.learner_features += alpha * x.learner_features;
    for (std::size_t n = 0; n < y.latent.size(); ++n) y.latent[n] += alpha * x.latent[n];
    y.learner_bias += alpha * x.learner_bias;
    y.question_bias += alpha * x.question_bias;
    y.attempt_bias += alpha * x.attempt_bias;
    y.global_bias += alpha * x.global_bias;
}

}  // namespace

double predict_logit(const FactorizationModel& model, std::size_t u, std::size_t i, std::size_t j) {
    if (u >= model.learners || i >= model.questions || j >= model.attempts)
        throw IndexError("prediction index (" + std::to_string(u) + "," + std::to_string(i) + "," +
                         std::to_string(j) + ") out of range");
    return logit_unchecked(model, u, i, j);
}

double predict(const FactorizationModel& model, std::size_t u, std::size_t i, std::size_t j) {
    return sigmoid(predict_logit(model, u, i, j));
}

double rank_penalty(const FactorizationModel& model) {
    double total = 0.0;
    for (std::size_t u = 0; u < model.learners; ++u)
        for (std::size_t i = 0; i < model.questions; ++i) {
            double prev = sigmoid(logit_unchecked(model, u, i, 0));
            for (std::size_t j = 1; j < model.attempts; ++j) {
                const double next = sigmoid(logit_unchecked(model, u, i, j));
                total += std::max(0.0, prev - next);
                prev = next;
            }
        }
    return total;
}

FactorizationModel rank_penalty_gradient(const FactorizationModel& model) {
    FactorizationModel g = zeros_like(model);
    for (std::size_t u = 0; u < model.learners; ++u)
        for (std::size_t i = 0; i < model.questions; ++i)
            for (std::size_t j = 0; j + 1 < model.attempts; ++j) {
                const double p0 = sigmoid(logit_unchecked(model, u, i, j));
                const double p1 = sigmoid(logit_unchecked(model, u, i, j + 1));
                if (p0 <= p1) continue;
                add_logit_gradient(model, u, i, j, p0 * (1.0 - p0), g);
                add_logit_gradient(model, u, i, j + 1, -p1 * (1.0 - p1), g);
            }
    return g;
}

double objective(const FactorizationModel& model, const PerformanceTensor& tensor, const TfHyperParams& hp) {
    check_dims(model, tensor);
    double sq = 0.0;
    std::size_t n = 0;
    for (const auto& c : tensor.observed()) {
        const double e = sigmoid(logit_unchecked(model, c.learner, c.question, c.attempt)) - c.value;
        sq += e * e;
        ++n;
    }
    const double mse = n ? sq / static_cast<double>(n) : 0.0;
    const double rank_term = hp.eta != 0.0 ? hp.eta * rank_penalty(model) : 0.0;
    return hp.lambda * mse + regularizer(model, hp) + rank_term;
}

namespace detail {

CellCounts count_cells(const PerformanceTensor& tensor) {
    CellCounts c;
    c.learner.assign(tensor.num_learners(), 0);
    c.question.assign(tensor.num_questions(), 0);
    c.attempt.assign(tensor.num_attempts(), 0);
    c.attempt_question.assign(tensor.num_attempts() * tensor.num_questions(), 0);
    for (const auto& cell : tensor.observed()) {
        ++c.total;
        ++c.learner[cell.learner];
        ++c.question[cell.question];
        ++c.attempt[cell.attempt];
        ++c.attempt_question[cell.attempt * tensor.num_questions() + cell.question];
    }
    return c;
}

double cell_loss(const FactorizationModel& m, const ObservedCell& cell, const CellCounts& counts,
                 const TfHyperParams& hp) {
    const std::size_t u = cell.learner, i = cell.question, j = cell.attempt;
    const double n = static_cast<double>(counts.total);
    const double e = sigmoid(logit_unchecked(m, u, i, j)) - cell.value;
    double feat = 0.0, lat = 0.0;
    for (std::size_t k = 0; k < m.rank; ++k) {
        feat += m.learner_features(u, k) * m.learner_features(u, k);
        lat += m.latent_at(k, j, i) * m.latent_at(k, j, i);
    }
    const double n_u = static_cast<double>(counts.learner[u]);
    const double n_i = static_cast<double>(counts.question[i]);
    const double n_j = static_cast<double>(counts.attempt[j]);
    const double n_ji = static_cast<double>(counts.attempt_question[j * m.questions + i]);
    const double share = hp.lambda1 * feat / n_u +
                         hp.lambda2 * (lat / n_ji + m.learner_bias[u] * m.learner_bias[u] / n_u +
                                       m.question_bias[i] * m.question_bias[i] / n_i +
                                       m.attempt_bias[j] * m.attempt_bias[j] / n_j +
                                       m.global_bias * m.global_bias / n);
    return hp.lambda * e * e + n * share;
}

CellGradient cell_gradient(const FactorizationModel& m, const ObservedCell& cell, const CellCounts& counts,
                           const TfHyperParams& hp) {
    const std::size_t u = cell.learner, i = cell.question, j = cell.attempt;
    const double n = static_cast<double>(counts.total);
    const double p = sigmoid(logit_unchecked(m, u, i, j));
    const double dz = hp.lambda * 2.0 * (p - cell.value) * p * (1.0 - p);

    const double w_u = n / static_cast<double>(counts.learner[u]);
    const double w_i = n / static_cast<double>(counts.question[i]);
    const double w_j = n / static_cast<double>(counts.attempt[j]);
    const double w_ji = n / static_cast<double>(counts.attempt_question[j * m.questions + i]);

    CellGradient g;
    g.features.resize(m.rank);
    g.latent.resize(m.rank);
    for (std::size_t k = 0; k < m.rank; ++k) {
        g.features[k] = dz * m.latent_at(k, j, i) + 2.0 * hp.lambda1 * w_u * m.learner_features(u, k);
        g.latent[k] = dz * m.learner_features(u, k) + 2.0 * hp.lambda2 * w_ji * m.latent_at(k, j, i);
    }
    g.learner_bias = dz + 2.0 * hp.lambda2 * w_u * m.learner_bias[u];
    g.question_bias = dz + 2.0 * hp.lambda2 * w_i * m.question_bias[i];
    g.attempt_bias = dz + 2.0 * hp.lambda2 * w_j * m.attempt_bias[j];
    g.global_bias = dz + 2.0 * hp.lambda2 * m.global_bias;
    return g;
}

}  // namespace detail

FactorizationModel objective_gradient(const FactorizationModel& model, const PerformanceTensor& tensor,
                                      const TfHyperParams& hp) {
    check_dims(model, tensor);
    const auto counts = detail::count_cells(tensor);
    FactorizationModel g = zeros_like(model);
    const double inv_n = counts.total ? 1.0 / static_cast<double>(counts.total) : 0.0;
    for (const auto& c : tensor.observed()) {
        const auto cg = detail::cell_gradient(model, c, counts, hp);
        for (std::size_t k = 0; k < model.rank; ++k) {
            g.learner_features(c.learner, k) += inv_n * cg.features[k];
            g.latent_at(k, c.attempt, c.question) += inv_n * cg.latent[k];
        }
        g.learner_bias[c.learner] += inv_n * cg.learner_bias;
        g.question_bias[c.question] += inv_n * cg.question_bias;
        g.attempt_bias[c.attempt] += inv_n * cg.attempt_bias;
        g.global_bias += inv_n * cg.global_bias;
    }
    add_untouched_regularizer_gradient(model, counts, hp, 1.0, g);
    if (hp.eta != 0.0) axpy(hp.eta, rank_penalty_gradient(model), g);
    return g;
}

FitResult fit(const PerformanceTensor& tensor, std::size_t rank, const TfHyperParams& hp) {
    if (!(hp.lr >= 0.0) || !(hp.lambda >= 0.0) || !(hp.lambda1 >= 0.0) || !(hp.lambda2 >= 0.0) || !(hp.eta >= 0.0))
        throw ParameterError("hyperparameters must be nonnegative");
    if (hp.max_epochs < 1) throw ParameterError("max_epochs must be at least 1");

    auto cells = tensor.observed();
    if (cells.empty()) throw ValidationError("cannot fit a tensor with no observed cells");
    const auto counts = detail::count_cells(tensor);

    FitResult result;
    result.model = init_model(tensor.num_learners(), tensor.num_questions(), tensor.num_attempts(), rank, hp.seed);
    FactorizationModel& m = result.model;
    result.initial_objective = objective(m, tensor, hp);

    Rng rng = make_rng(hp.seed, 0x5eed);
    const double n = static_cast<double>(counts.total);
    for (int epoch = 0; epoch < hp.max_epochs; ++epoch) {
        std::shuffle(cells.begin(), cells.end(), rng);
        for (const auto& c : cells) {
            const auto g = detail::cell_gradient(m, c, counts, hp);
            for (std::size_t k = 0; k < m.rank; ++k) {
                m.learner_features(c.learner, k) -= hp.lr * g.features[k];
                m.latent_at(k, c.attempt, c.question) -= hp.lr * g.latent[k];
            }
            m.learner_bias[c.learner] -= hp.lr * g.learner_bias;
            m.question_bias[c.question] -= hp.lr * g.question_bias;
            m.attempt_bias[c.attempt] -= hp.lr * g.attempt_bias;
            m.global_bias -= hp.lr * g.global_bias;
        }

        // Full-batch step for what the per-cell pass cannot see: the rank
        // hinge and the regularizer on parameters without observations.
        // The latter gets n steps' worth, matching one pass over the cells.
        FactorizationModel g = zeros_like(m);
        add_untouched_regularizer_gradient(m, counts, hp, n, g);
        if (hp.eta != 0.0) axpy(hp.eta, rank_penalty_gradient(m), g);
        axpy(-hp.lr, g, m);

        if (!m.all_finite()) throw TrainingError("factorization diverged at epoch " + std::to_string(epoch + 1));
        result.history.push_back(objective(m, tensor, hp));

        const std::size_t t = result.history.size();
        const auto w = static_cast<std::size_t>(std::max(1, hp.window));
        if (t > w) {
            const double before = result.history[t - 1 - w];
            const double rel = std::abs(before - result.history.back()) / std::max(std::abs(before), 1e-300);
            if (rel < hp.tol) {
                result.converged = true;
                break;
            }
        }
    }
    return result;
}

DenseTensor impute(const FactorizationModel& model) {
    DenseTensor d = make_dense(model.learners, model.questions, model.attempts);
    for (std::size_t u = 0; u < model.learners; ++u)
        for (std::size_t i = 0; i < model.questions; ++i)
            for (std::size_t j = 0; j < model.attempts; ++j)
                d.probs[(u * model.questions + i) * model.attempts + j] = sigmoid(logit_unchecked(model, u, i, j));
    return d;
}

Trainer tf_trainer(std::size_t rank, const TfHyperParams& hp) {
    return [rank, hp](const PerformanceTensor& train) -> Predictor {
        auto fitted = std::make_shared<FactorizationModel>(fit(train, rank, hp).model);
        return [fitted](std::size_t u, std::size_t i, std::size_t j) { return predict(*fitted, u, i, j); };
    };
}

GridSearchResult grid_search_k(const PerformanceTensor& tensor, std::size_t k_min, std::size_t k_max,
                               const TfHyperParams& hp, std::size_t folds, unsigned jobs) {
    if (k_min < 1 || k_max < k_min) throw ParameterError("rank range must satisfy 1 <= k_min <= k_max");
    if (tensor.observed_count() < folds)
        throw ValidationError("grid search needs at least " + std::to_string(folds) + " observed cells");
    const FoldPartition partition = make_folds(tensor, folds, hp.seed);

    GridSearchResult result;
    for (std::size_t k = k_min; k <= k_max; ++k) result.ranks.push_back(k);
    result.scores.resize(result.ranks.size());

    auto evaluate = [&](std::size_t idx) {
        result.scores[idx] = cross_validate(tensor, tf_trainer(result.ranks[idx], hp), partition);
    };
    if (jobs <= 1) {
        for (std::size_t idx = 0; idx < result.ranks.size(); ++idx) evaluate(idx);
    } else {
        std::size_t next = 0;
        while (next < result.ranks.size()) {
            std::vector<std::future<void>> batch;
            for (unsigned w = 0; w < jobs && next < result.ranks.size(); ++w, ++next)
                batch.push_back(std::async(std::launch::async, evaluate, next));
            for (auto& f : batch) f.get();
        }
    }

    std::size_t best = 0;
    for (std::size_t idx = 1; idx < result.scores.size(); ++idx)
        if (result.scores[idx].mean_rmse < result.scores[best].mean_rmse) best = idx;
    result.best_rank = result.ranks[best];
    return result;
}

}  // namespace perfaug
