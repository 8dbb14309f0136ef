#include "perfaug/cross_validation.hpp"

#include <algorithm>

#include "perfaug/error.hpp"
#include "perfaug/metrics.hpp"
#include "perfaug/random.hpp"

namespace perfaug {

FoldPartition make_folds(const PerformanceTensor& tensor, std::size_t folds, std::uint64_t seed) {
    if (folds < 2) throw ParameterError("cross-validation needs at least 2 folds");
    auto cells = tensor.observed();
    if (cells.size() < folds)
        throw ValidationError("too few observed cells (" + std::to_string(cells.size()) + ") for " +
                              std::to_string(folds) + " folds");
    Rng rng = make_rng(seed, 0xf01d);
    std::shuffle(cells.begin(), cells.end(), rng);
    FoldPartition p;
    p.folds.resize(folds);
    for (std::size_t c = 0; c < cells.size(); ++c) p.folds[c % folds].push_back(cells[c]);
    return p;
}

CvResult cross_validate(const PerformanceTensor& tensor, const Trainer& trainer, const FoldPartition& partition) {
    CvResult result;
    for (const auto& held_out : partition.folds) {
        PerformanceTensor train = mask_cells(tensor, held_out);
        Predictor predictor = trainer(train);
        std::vector<double> pred, obs;
        pred.reserve(held_out.size());
        obs.reserve(held_out.size());
        for (const auto& c : held_out) {
            pred.push_back(predictor(c.learner, c.question, c.attempt));
            obs.push_back(c.value);
        }
        result.fold_rmse.push_back(rmse(pred, obs));
        result.fold_mae.push_back(mae(pred, obs));
    }
    const double k = static_cast<double>(partition.folds.size());
    for (std::size_t f = 0; f < partition.folds.size(); ++f) {
        result.mean_rmse += result.fold_rmse[f] / k;
        result.mean_mae += result.fold_mae[f] / k;
    }
    return result;
}

CvResult cross_validate(const PerformanceTensor& tensor, const Trainer& trainer, std::size_t folds,
                        std::uint64_t seed) {
    return cross_validate(tensor, trainer, make_folds(tensor, folds, seed));
}

Trainer global_mean_trainer() {
    return [](const PerformanceTensor& train) -> Predictor {
        double sum = 0.0;
        std::size_t n = 0;
        for (Cell c : train.cells()) {
            if (c == Cell::Missing) continue;
            sum += c == Cell::One ? 1.0 : 0.0;
            ++n;
        }
        const double mean = n ? sum / static_cast<double>(n) : 0.5;
        return [mean](std::size_t, std::size_t, std::size_t) { return mean; };
    };
}

}  // namespace perfaug
