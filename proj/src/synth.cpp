#include "perfaug/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "perfaug/error.hpp"
#include "perfaug/random.hpp"

namespace perfaug {

namespace {

std::string padded_id(char prefix, std::size_t index, std::size_t count) {
    const std::size_t width = std::to_string(count).size();
    std::string digits = std::to_string(index + 1);
    return std::string(1, prefix) + std::string(width - digits.size(), '0') + digits;
}

// Largest-remainder allocation of `total` items to weights.
std::vector<std::size_t> allocate(const std::vector<SynthCluster>& clusters, std::size_t total) {
    std::vector<std::size_t> counts(clusters.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        const double exact = clusters[c].weight * static_cast<double>(total);
        counts[c] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[c];
        remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];
    return counts;
}

}  // namespace

void SynthSpec::validate() const {
    if (clusters.empty()) throw ParameterError("synthetic spec needs at least one cluster");
    double total = 0.0;
    for (const auto& c : clusters) {
        if (!(c.weight >= 0.0)) throw ParameterError("cluster weights must be nonnegative");
        if (!(c.a_mean > 0.0 && c.a_mean <= 1.0)) throw ParameterError("cluster a_mean must lie in (0,1]");
        if (!(c.a_sd >= 0.0) || !(c.b_sd >= 0.0)) throw ParameterError("cluster sds must be nonnegative");
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ParameterError("cluster weights must sum to 1");
    if (learners == 0 || questions == 0 || attempts == 0) throw ParameterError("tensor dimensions must be positive");
    if (!(target_sparsity >= 0.0 && target_sparsity < 1.0)) throw ParameterError("target sparsity must lie in [0,1)");
    if (!(noise_sd >= 0.0)) throw ParameterError("noise_sd must be nonnegative");
    if (mask == MaskMode::Dropout && !(dropout_rate > 0.0 && dropout_rate <= 1.0))
        throw ParameterError("dropout rate must lie in (0,1]");
}

SynthSpec five_cluster_spec(std::uint64_t seed) {
    SynthSpec s;
    s.clusters = {
        {0.97, 0.02, 0.00, 0.01, 0.2}, {0.75, 0.02, 0.06, 0.02, 0.2}, {0.45, 0.02, 0.25, 0.02, 0.2},
        {0.20, 0.02, 0.10, 0.02, 0.2}, {0.15, 0.02, 0.40, 0.02, 0.2},
    };
    s.seed = seed;
    return s;
}

PerformanceTensor mask_uniform(const PerformanceTensor& tensor, double target_sparsity, std::uint64_t seed) {
    if (!(target_sparsity >= 0.0 && target_sparsity < 1.0)) throw ParameterError("target sparsity must lie in [0,1)");
    const std::size_t total = tensor.size();
    const auto want_missing = static_cast<std::size_t>(std::llround(target_sparsity * static_cast<double>(total)));
    const std::size_t have_missing = total - tensor.observed_count();
    if (have_missing >= want_missing) return tensor;

    std::vector<ObservedCell> cells = tensor.observed();
    Rng rng = make_rng(seed, 0x3a5c);
    std::shuffle(cells.begin(), cells.end(), rng);
    cells.resize(want_missing - have_missing);
    return mask_cells(tensor, cells);
}

SynthPopulation generate_population(const SynthSpec& spec) {
    spec.validate();
    const std::size_t U = spec.learners, N = spec.questions, M = spec.attempts;

    std::vector<std::size_t> cluster_of;
    const auto counts = allocate(spec.clusters, U);
    for (std::size_t c = 0; c < counts.size(); ++c) cluster_of.insert(cluster_of.end(), counts[c], c);
    Rng assign_rng = make_rng(spec.seed, 0xc1);
    std::shuffle(cluster_of.begin(), cluster_of.end(), assign_rng);

    SynthPopulation pop;
    Rng param_rng = make_rng(spec.seed, 0xab);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t u = 0; u < U; ++u) {
        const auto& c = spec.clusters[cluster_of[u]];
        LearnerTruth t;
        t.cluster = cluster_of[u];
        t.a = std::clamp(c.a_mean + c.a_sd * normal(param_rng), kSynthProbMin, 1.0);
        t.b = c.b_mean + c.b_sd * normal(param_rng);
        pop.learners.push_back(t);
    }

    std::vector<std::string> learner_ids(U), question_ids(N);
    for (std::size_t u = 0; u < U; ++u) learner_ids[u] = padded_id('S', u, U);
    for (std::size_t i = 0; i < N; ++i) question_ids[i] = padded_id('Q', i, N);

    pop.truth = make_dense(U, N, M);
    pop.complete = PerformanceTensor(learner_ids, question_ids, M);
    Rng noise_rng = make_rng(spec.seed, 0x0e);
    Rng outcome_rng = make_rng(spec.seed, 0x0c);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t u = 0; u < U; ++u) {
        const auto& t = pop.learners[u];
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t j = 0; j < M; ++j) {
                const double mean = t.a * std::pow(static_cast<double>(j + 1), t.b);
                const double noise = spec.noise_sd > 0.0 ? spec.noise_sd * normal(noise_rng) : 0.0;
                const double p = std::clamp(mean + noise, kSynthProbMin, kSynthProbMax);
                pop.truth.at(u, i, j) = p;
                pop.complete.set(u, i, j, unit(outcome_rng) < p ? Cell::One : Cell::Zero);
            }
        }
    }

    PerformanceTensor masked = pop.complete;
    if (spec.mask == MaskMode::Dropout) {
        Rng drop_rng = make_rng(spec.seed, 0xd0);
        std::geometric_distribution<std::size_t> presented(spec.dropout_rate);
        std::vector<ObservedCell> dropped;
        for (std::size_t u = 0; u < U; ++u) {
            const std::size_t keep = std::min(N, presented(drop_rng) + 1);
            for (std::size_t i = keep; i < N; ++i)
                for (std::size_t j = 0; j < M; ++j) dropped.push_back({u, i, j, 0.0});
        }
        masked = mask_cells(masked, dropped);
    }
    pop.observed = mask_uniform(masked, spec.target_sparsity, derive_seed(spec.seed, 0x3a));
    return pop;
}

std::vector<long> hungarian_max(const std::vector<std::vector<double>>& weights) {
    const std::size_t rows = weights.size();
    const std::size_t cols = rows ? weights[0].size() : 0;
    const std::size_t n = std::max(rows, cols);
    if (n == 0) return {};
    double wmax = 0.0;
    for (const auto& r : weights) {
        if (r.size() != cols) throw DimensionError("assignment matrix rows differ in length");
        for (double w : r) wmax = std::max(wmax, w);
    }
    // Square min-cost problem with zero-weight padding, potentials method.
    auto cost = [&](std::size_t i, std::size_t j) {
        const double w = (i < rows && j < cols) ? weights[i][j] : 0.0;
        return wmax - w;
    };
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> pu(n + 1, 0.0), pv(n + 1, 0.0);
    std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - pu[i0] - pv[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    pu[match[j]] += delta;
                    pv[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<long> result(rows, -1);
    for (std::size_t j = 1; j <= n; ++j)
        if (match[j] >= 1 && match[j] <= rows && j <= cols) result[match[j] - 1] = static_cast<long>(j - 1);
    return result;
}

double cluster_purity(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& estimate) {
    if (truth.size() != estimate.size()) throw DimensionError("label vectors differ in length");
    if (truth.empty()) throw ValidationError("purity of an empty labelling");
    const std::size_t kt = *std::max_element(truth.begin(), truth.end()) + 1;
    const std::size_t ke = *std::max_element(estimate.begin(), estimate.end()) + 1;
    std::vector<std::vector<double>> confusion(kt, std::vector<double>(ke, 0.0));
    for (std::size_t n = 0; n < truth.size(); ++n) confusion[truth[n]][estimate[n]] += 1.0;
    const auto match = hungarian_max(confusion);
    double agreed = 0.0;
    for (std::size_t r = 0; r < kt; ++r)
        if (match[r] >= 0) agreed += confusion[r][static_cast<std::size_t>(match[r])];
    return agreed / static_cast<double>(truth.size());
}

RecoveryReport oracle_metrics(const SynthPopulation& truth, const OracleEstimate& estimate) {
    RecoveryReport report;
    const std::size_t U = truth.learners.size();
    if (estimate.dense) {
        const auto& d = *estimate.dense;
        if (d.learners != truth.truth.learners || d.questions != truth.truth.questions ||
            d.attempts != truth.truth.attempts)
            throw DimensionError("estimated tensor dimensions differ from the truth");
        double sq = 0.0;
        for (std::size_t n = 0; n < d.probs.size(); ++n) {
            const double e = d.probs[n] - truth.truth.probs[n];
            sq += e * e;
        }
        report.imputation_rmse = std::sqrt(sq / static_cast<double>(d.probs.size()));
    }
    auto param_rmse = [&](const std::vector<double>& est, double LearnerTruth::*field) -> std::optional<double> {
        if (est.empty()) return std::nullopt;
        if (est.size() != U) throw DimensionError("parameter estimates must have one entry per learner");
        double sq = 0.0;
        for (std::size_t u = 0; u < U; ++u) {
            const double e = est[u] - truth.learners[u].*field;
            sq += e * e;
        }
        return std::sqrt(sq / static_cast<double>(U));
    };
    report.a_rmse = param_rmse(estimate.a, &LearnerTruth::a);
    report.b_rmse = param_rmse(estimate.b, &LearnerTruth::b);
    if (!estimate.labels.empty()) {
        if (estimate.labels.size() != U) throw DimensionError("labels must have one entry per learner");
        std::vector<std::size_t> true_labels(U);
        for (std::size_t u = 0; u < U; ++u) true_labels[u] = truth.learners[u].cluster;
        report.purity = cluster_purity(true_labels, estimate.labels);
    }
    return report;
}

std::vector<TransactionRecord> synth_transactions(const SynthPopulation& population, const std::string& lesson_id) {
    return to_transactions(population.observed, lesson_id, std::nullopt);
}

}  // namespace perfaug
