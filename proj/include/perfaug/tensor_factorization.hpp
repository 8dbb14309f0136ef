#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "perfaug/cross_validation.hpp"
#include "perfaug/ingest.hpp"

namespace perfaug {

/// Biased, sigmoid-bounded factorization of the performance tensor.
///
/// The logit of cell (u, i, j) is
///   sum_k learner_features(u, k) * latent(k, j, i)
///     + learner_bias[u] + question_bias[i] + attempt_bias[j] + global_bias
/// with the latent tensor laid out K x M x N (attempts before questions).
struct FactorizationModel {
    std::size_t learners = 0;
    std::size_t questions = 0;
    std::size_t attempts = 0;
    std::size_t rank = 0;

    Eigen::MatrixXd learner_features;  // learners x rank
    std::vector<double> latent;        // rank x attempts x questions, flat
    Eigen::VectorXd learner_bias;
    Eigen::VectorXd question_bias;
    Eigen::VectorXd attempt_bias;
    double global_bias = 0.0;

    double& latent_at(std::size_t k, std::size_t j, std::size_t i) { return latent[(k * attempts + j) * questions + i]; }
    double latent_at(std::size_t k, std::size_t j, std::size_t i) const {
        return latent[(k * attempts + j) * questions + i];
    }

    /// All parameters in a fixed order (features, latent, biases, global).
    std::vector<double> to_vector() const;
    void from_vector(const std::vector<double>& values);
    std::size_t parameter_count() const;

    bool all_finite() const;
    bool operator==(const FactorizationModel& other) const;
};

struct TfHyperParams {
    double lambda = 0.1;     // weight on the mean squared error
    double lambda1 = 3e-5;   // L2 on learner features
    double lambda2 = 3e-5;   // L2 on latent tensor and biases
    double eta = 1e-5;       // rank-penalty weight
    double lr = 0.2;
    int max_epochs = 500;
    double tol = 1e-5;       // relative objective change over `window` epochs
    int window = 5;
    std::uint64_t seed = 7;

    /// Throws ParameterError outside the supported search ranges.
    void validate() const;
};

/// Fully observed probability tensor, flat index (u * N + i) * M + j.
struct DenseTensor {
    std::size_t learners = 0;
    std::size_t questions = 0;
    std::size_t attempts = 0;
    std::vector<double> probs;

    double at(std::size_t u, std::size_t i, std::size_t j) const;
    double& at(std::size_t u, std::size_t i, std::size_t j);
    bool operator==(const DenseTensor&) const = default;
};

DenseTensor make_dense(std::size_t learners, std::size_t questions, std::size_t attempts, double fill = 0.0);

FactorizationModel init_model(std::size_t learners, std::size_t questions, std::size_t attempts, std::size_t rank,
                              std::uint64_t seed);

double sigmoid(double x);

double predict_logit(const FactorizationModel& model, std::size_t u, std::size_t i, std::size_t j);
double predict(const FactorizationModel& model, std::size_t u, std::size_t i, std::size_t j);

/// Hinge on consecutive attempts: sum over (u, i, j) of max(0, p_j - p_{j+1}).
double rank_penalty(const FactorizationModel& model);

/// lambda * MSE(observed) + lambda1 * |U|^2 + lambda2 * (|V|^2 + |biases|^2 + eps^2) + eta * rank_penalty.
double objective(const FactorizationModel& model, const PerformanceTensor& tensor, const TfHyperParams& hp);

/// Full (sub)gradient of `objective`, returned in model shape.
FactorizationModel objective_gradient(const FactorizationModel& model, const PerformanceTensor& tensor,
                                      const TfHyperParams& hp);

FactorizationModel rank_penalty_gradient(const FactorizationModel& model);

struct FitResult {
    FactorizationModel model;
    double initial_objective = 0.0;
    std::vector<double> history;  // objective after each epoch
    bool converged = false;
};

FitResult fit(const PerformanceTensor& tensor, std::size_t rank, const TfHyperParams& hp);

DenseTensor impute(const FactorizationModel& model);

/// Cross-validation trainer that fits the factorization at a fixed rank.
Trainer tf_trainer(std::size_t rank, const TfHyperParams& hp);

struct GridSearchResult {
    std::size_t best_rank = 1;
    std::vector<std::size_t> ranks;
    std::vector<CvResult> scores;
};

/// Mean held-out RMSE per rank; ties go to the smaller rank. `jobs` > 1
/// evaluates ranks concurrently; results do not depend on it.
GridSearchResult grid_search_k(const PerformanceTensor& tensor, std::size_t k_min, std::size_t k_max,
                               const TfHyperParams& hp, std::size_t folds = 5, unsigned jobs = 1);

namespace detail {

/// Number of observed cells touching each parameter group.
struct CellCounts {
    std::size_t total = 0;
    std::vector<std::size_t> learner;
    std::vector<std::size_t> question;
    std::vector<std::size_t> attempt;
    std::vector<std::size_t> attempt_question;  // j * N + i
};

CellCounts count_cells(const PerformanceTensor& tensor);

/// Gradient of one cell's SGD loss
///   lambda * (p - y)^2 + n * (this cell's share of the regularizer),
/// where a parameter's share is its regularizer divided by the number of
/// observed cells touching it. Averaging over cells reproduces
/// lambda * MSE + regularizer for every touched parameter.
struct CellGradient {
    std::vector<double> features;  // d/d learner_features(u, :)
    std::vector<double> latent;    // d/d latent(:, j, i)
    double learner_bias = 0.0;
    double question_bias = 0.0;
    double attempt_bias = 0.0;
    double global_bias = 0.0;
};

double cell_loss(const FactorizationModel& model, const ObservedCell& cell, const CellCounts& counts,
                 const TfHyperParams& hp);
CellGradient cell_gradient(const FactorizationModel& model, const ObservedCell& cell, const CellCounts& counts,
                           const TfHyperParams& hp);

}  // namespace detail

}  // namespace perfaug
