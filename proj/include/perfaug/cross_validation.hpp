#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "perfaug/ingest.hpp"

namespace perfaug {

/// Probability that learner u answers question i correctly at attempt j.
using Predictor = std::function<double(std::size_t u, std::size_t i, std::size_t j)>;

/// Fits a model on a training tensor (held-out cells already masked).
using Trainer = std::function<Predictor(const PerformanceTensor& train)>;

/// Observed cells split into disjoint folds.
struct FoldPartition {
    std::vector<std::vector<ObservedCell>> folds;
};

/// Seeded shuffle of the observed cells dealt round-robin into `folds` parts.
FoldPartition make_folds(const PerformanceTensor& tensor, std::size_t folds, std::uint64_t seed);

struct CvResult {
    std::vector<double> fold_rmse;
    std::vector<double> fold_mae;
    double mean_rmse = 0.0;
    double mean_mae = 0.0;
};

CvResult cross_validate(const PerformanceTensor& tensor, const Trainer& trainer, const FoldPartition& partition);
CvResult cross_validate(const PerformanceTensor& tensor, const Trainer& trainer, std::size_t folds,
                        std::uint64_t seed);

/// Predicts the mean of the training observations everywhere.
Trainer global_mean_trainer();

}  // namespace perfaug
