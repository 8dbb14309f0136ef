#include "perfaug/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/fisher_f.hpp>

#include "perfaug/error.hpp"
#include "perfaug/patterns.hpp"

namespace perfaug {

namespace {

void check_paired(std::span<const double> pred, std::span<const double> obs) {
    if (pred.size() != obs.size())
        throw DimensionError("length mismatch: " + std::to_string(pred.size()) + " predictions vs " +
                             std::to_string(obs.size()) + " observations");
    if (pred.empty()) throw ValidationError("cannot score an empty prediction set");
}

std::vector<double> sorted_copy(std::span<const double> values) {
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    return v;
}

double sorted_quantile(const std::vector<double>& v, double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

}  // namespace

double rmse(std::span<const double> pred, std::span<const double> obs) {
    check_paired(pred, obs);
    double ss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) ss += (pred[i] - obs[i]) * (pred[i] - obs[i]);
    return std::sqrt(ss / static_cast<double>(pred.size()));
}

double mae(std::span<const double> pred, std::span<const double> obs) {
    check_paired(pred, obs);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - obs[i]);
    return s / static_cast<double>(pred.size());
}

std::vector<double> normalize_dist(std::span<const double> v) {
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(v[i] >= 0.0)) throw ValidationError("distribution entry " + std::to_string(i) + " is negative");
        total += v[i];
    }
    if (!(total > 0.0)) throw ValidationError("distribution has zero total mass");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / total;
    return out;
}

std::string_view to_string(PowerLawParameter p) { return p == PowerLawParameter::A ? "a" : "b"; }

EmdResult emd(std::span<const double> orig, std::span<const double> aug, std::size_t bins,
              PowerLawParameter parameter) {
    if (orig.empty() || aug.empty()) throw ValidationError("EMD needs two nonempty samples");
    if (bins == 0) throw ParameterError("EMD needs at least one bin");

    EmdResult result;
    result.n_orig = orig.size();
    result.n_aug = aug.size();
    result.parameter = parameter;
    result.bins = bins;

    double lo = std::min(*std::min_element(orig.begin(), orig.end()), *std::min_element(aug.begin(), aug.end()));
    double hi = std::max(*std::max_element(orig.begin(), orig.end()), *std::max_element(aug.begin(), aug.end()));
    if (!std::isfinite(lo) || !std::isfinite(hi)) throw ValidationError("EMD input contains non-finite values");
    if (lo < 0.0) result.shift = -lo;
    lo += result.shift;
    hi += result.shift;
    if (hi == lo) return result;

    auto histogram = [&](std::span<const double> xs) {
        std::vector<double> h(bins, 0.0);
        for (double x : xs) {
            double t = (x + result.shift - lo) / (hi - lo) * static_cast<double>(bins);
            auto idx = static_cast<std::size_t>(std::max(0.0, std::floor(t)));
            h[std::min(idx, bins - 1)] += 1.0;
        }
        return normalize_dist(h);
    };
    const auto ho = histogram(orig);
    const auto hs = histogram(aug);
    double co = 0.0, cs = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
        co += ho[i];
        cs += hs[i];
        result.value += std::abs(co - cs);  // unit spacing between bins
    }
    return result;
}

double quantile(std::span<const double> values, double p) {
    if (values.empty()) throw ValidationError("quantile of an empty sample");
    if (p < 0.0 || p > 1.0) throw ParameterError("quantile level must lie in [0,1]");
    return sorted_quantile(sorted_copy(values), p);
}

double iqr(std::span<const double> values) {
    if (values.size() < 2) throw ValidationError("IQR needs at least 2 values");
    auto v = sorted_copy(values);
    return sorted_quantile(v, 0.75) - sorted_quantile(v, 0.25);
}

BcResult bimodality_coefficient(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 4) throw ValidationError("bimodality coefficient needs at least 4 values");
    const double nd = static_cast<double>(n);
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / nd;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double x : values) {
        const double d = x - mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nd;
    m3 /= nd;
    m4 /= nd;
    if (!(m2 > 0.0)) throw ValidationError("bimodality coefficient undefined for zero variance");

    const double g1 = m3 / std::pow(m2, 1.5);
    const double g2 = m4 / (m2 * m2) - 3.0;
    const double denom = (nd - 2.0) * (nd - 3.0);

    BcResult r;
    r.n = n;
    r.g = g1 * std::sqrt(nd * (nd - 1.0)) / (nd - 2.0);
    r.k = (nd - 1.0) / denom * ((nd + 1.0) * g2 + 6.0);
    r.bc = (r.g * r.g + 1.0) / (r.k + 3.0 * (nd - 1.0) * (nd - 1.0) / denom);
    r.bimodal = r.bc > kBimodalityThreshold;
    return r;
}

AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) throw ValidationError("ANOVA needs at least 2 groups");
    std::size_t total = 0;
    double grand = 0.0;
    for (const auto& g : groups) {
        if (g.size() < 2) throw ValidationError("every ANOVA group needs at least 2 values");
        total += g.size();
        grand += std::accumulate(g.begin(), g.end(), 0.0);
    }
    grand /= static_cast<double>(total);

    AnovaResult r;
    r.df_between = groups.size() - 1;
    r.df_within = total - groups.size();
    for (const auto& g : groups) {
        const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
        r.ss_between += static_cast<double>(g.size()) * (mean - grand) * (mean - grand);
        for (double x : g) r.ss_within += (x - mean) * (x - mean);
    }
    // Sums of squares below rounding noise of the data count as exact zeros.
    double scale = 0.0;
    for (const auto& g : groups)
        for (double x : g) scale += x * x;
    const double tol = 64.0 * std::numeric_limits<double>::epsilon() * scale;
    if (r.ss_within <= tol) {
        if (r.ss_between <= tol) {  // all values identical: F = 0, p = 1
            r.ss_within = r.ss_between = 0.0;
            return r;
        }
        throw ValidationError("degenerate ANOVA: zero within-group variance gives an infinite F");
    }
    r.f_value = (r.ss_between / static_cast<double>(r.df_between)) / (r.ss_within / static_cast<double>(r.df_within));
    boost::math::fisher_f_distribution<double> dist(static_cast<double>(r.df_between),
                                                    static_cast<double>(r.df_within));
    r.p_value = boost::math::cdf(boost::math::complement(dist, r.f_value));
    return r;
}

std::vector<SweepEntry> emd_sweep(const Matrix& train_rows, const Sampler& sampler,
                                  const std::vector<std::size_t>& sizes, std::size_t bins) {
    if (sizes.empty()) throw ParameterError("sample-size sweep needs at least one size");
    if (train_rows.rows() == 0) throw ValidationError("sample-size sweep needs training rows");

    auto split = [](const std::vector<PowerLawFit>& fits) {
        std::array<std::vector<double>, 2> out;
        for (const auto& f : fits) {
            out[0].push_back(f.a);
            out[1].push_back(f.b);
        }
        return out;
    };
    auto safe_bc = [](const std::vector<double>& v) -> std::optional<BcResult> {
        try {
            return bimodality_coefficient(v);
        } catch (const ValidationError&) {
            return std::nullopt;
        }
    };
    auto safe_iqr = [](const std::vector<double>& v) { return v.size() >= 2 ? iqr(v) : 0.0; };

    const auto original = split(fit_rows(train_rows));
    const std::array<std::optional<BcResult>, 2> bc_orig{safe_bc(original[0]), safe_bc(original[1])};

    std::vector<SweepEntry> out;
    out.reserve(sizes.size() * 2);
    for (std::size_t size : sizes) {
        const AugmentedMatrix sample = sampler(size);
        if (static_cast<std::size_t>(sample.rows()) != size)
            throw DimensionError("sampler returned " + std::to_string(sample.rows()) + " rows, expected " +
                                 std::to_string(size));
        const auto augmented = split(fit_rows(sample));
        for (int p = 0; p < 2; ++p) {
            SweepEntry e;
            e.size = size;
            e.emd = emd(original[p], augmented[p], bins, p == 0 ? PowerLawParameter::A : PowerLawParameter::B);
            e.iqr_original = safe_iqr(original[p]);
            e.iqr_augmented = safe_iqr(augmented[p]);
            e.bc_original = bc_orig[p];
            e.bc_augmented = safe_bc(augmented[p]);
            out.push_back(std::move(e));
        }
    }
    return out;
}

std::vector<std::size_t> size_range(std::size_t first, std::size_t last, std::size_t step) {
    if (step == 0 || first > last) throw ParameterError("size range needs first <= last and a positive step");
    std::vector<std::size_t> out;
    for (std::size_t s = first; s <= last; s += step) out.push_back(s);
    return out;
}

}  // namespace perfaug
