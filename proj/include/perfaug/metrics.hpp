#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "perfaug/matrix.hpp"

namespace perfaug {

double rmse(std::span<const double> pred, std::span<const double> obs);
double mae(std::span<const double> pred, std::span<const double> obs);

/// v / sum(v); requires nonnegative entries with positive mass.
std::vector<double> normalize_dist(std::span<const double> v);

enum class PowerLawParameter { A, B };
std::string_view to_string(PowerLawParameter p);

struct EmdResult {
    double value = 0.0;
    std::size_t n_orig = 0;
    std::size_t n_aug = 0;
    PowerLawParameter parameter = PowerLawParameter::A;
    std::size_t bins = 0;
    /// Common offset added to both samples to make them nonnegative.
    double shift = 0.0;
};

/// Both samples are histogrammed on a shared equal-width grid spanning their
/// union, each histogram is normalized to unit mass, and the distance is the
/// sum of absolute differences of the cumulative sums with unit bin spacing.
EmdResult emd(std::span<const double> orig, std::span<const double> aug, std::size_t bins = 50,
              PowerLawParameter parameter = PowerLawParameter::A);

/// Linear-interpolation quantile at position p * (n - 1) of the sorted data.
double quantile(std::span<const double> values, double p);
double iqr(std::span<const double> values);

inline constexpr double kBimodalityThreshold = 0.555;

struct BcResult {
    double g = 0.0;   // adjusted sample skewness
    double k = 0.0;   // adjusted sample excess kurtosis
    std::size_t n = 0;
    double bc = 0.0;
    bool bimodal = false;
};

BcResult bimodality_coefficient(std::span<const double> values);

struct AnovaResult {
    double f_value = 0.0;
    double p_value = 1.0;
    std::size_t df_between = 0;
    std::size_t df_within = 0;
    double ss_between = 0.0;
    double ss_within = 0.0;
};

AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups);

using Sampler = std::function<AugmentedMatrix(std::size_t n)>;

struct SweepEntry {
    std::size_t size = 0;
    EmdResult emd;
    double iqr_original = 0.0;
    double iqr_augmented = 0.0;
    std::optional<BcResult> bc_original;
    std::optional<BcResult> bc_augmented;
};

/// For each size: draw a sample, fit power laws to every row of the training
/// matrix and of the sample, and compare the a- and b-distributions.
/// Output is ordered by size (as given), then parameter A before B.
std::vector<SweepEntry> emd_sweep(const Matrix& train_rows, const Sampler& sampler,
                                  const std::vector<std::size_t>& sizes, std::size_t bins = 50);

/// first, first + step, ..., up to and including last.
std::vector<std::size_t> size_range(std::size_t first, std::size_t last, std::size_t step);

}  // namespace perfaug
