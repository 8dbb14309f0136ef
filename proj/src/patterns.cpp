#include "perfaug/patterns.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "perfaug/error.hpp"
#include "perfaug/random.hpp"

namespace perfaug {

Matrix extract_slice(const DenseTensor& dense, std::size_t question) {
    if (question >= dense.questions)
        throw IndexError("question " + std::to_string(question) + " out of range (N=" +
                         std::to_string(dense.questions) + ")");
    Matrix slice(static_cast<Eigen::Index>(dense.learners), static_cast<Eigen::Index>(dense.attempts));
    for (std::size_t u = 0; u < dense.learners; ++u)
        for (std::size_t j = 0; j < dense.attempts; ++j)
            slice(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(j)) = dense.at(u, question, j);
    return slice;
}

namespace {

double power_law_sse(const std::vector<double>& y, double a, double b) {
    double sse = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
        const double r = y[j] - a * std::pow(static_cast<double>(j + 1), b);
        sse += r * r;
    }
    return sse;
}

PowerLawFit gauss_newton(const std::vector<double>& y, double a, double b) {
    double sse = power_law_sse(y, a, b);
    for (int it = 0; it < 100; ++it) {
        double jaa = 0.0, jab = 0.0, jbb = 0.0, ga = 0.0, gb = 0.0;
        for (std::size_t j = 0; j < y.size(); ++j) {
            const double x = static_cast<double>(j + 1);
            const double xb = std::pow(x, b);
            const double da = xb;
            const double db = a * xb * std::log(x);
            const double r = y[j] - a * xb;
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        double det = jaa * jbb - jab * jab;
        if (!(std::abs(det) > 1e-300)) {
            // Rank-deficient normal equations: nudge towards a gradient step.
            jaa += 1e-12;
            jbb += 1e-12;
            det = jaa * jbb - jab * jab;
        }
        const double step_a = (jbb * ga - jab * gb) / det;
        const double step_b = (jaa * gb - jab * ga) / det;

        bool improved = false;
        for (double t = 1.0; t > 1e-10; t *= 0.5) {
            const double na = a + t * step_a;
            const double nb = b + t * step_b;
            if (!(na > 0.0) || !std::isfinite(nb)) continue;
            const double nsse = power_law_sse(y, na, nb);
            if (nsse < sse) {
                const double gain = sse - nsse;
                a = na;
                b = nb;
                sse = nsse;
                improved = gain > 1e-15 * std::max(sse, 1e-300) || gain > 1e-30;
                break;
            }
        }
        if (!improved) break;
    }
    return {a, b, sse};
}

struct Standardizer {
    std::array<double, 2> mean{0.0, 0.0};
    std::array<double, 2> scale{1.0, 1.0};

    explicit Standardizer(const std::vector<ParamPoint>& pts) {
        const double n = static_cast<double>(pts.size());
        for (int d = 0; d < 2; ++d) {
            double m = 0.0;
            for (const auto& p : pts) m += p[d];
            m /= n;
            double v = 0.0;
            for (const auto& p : pts) v += (p[d] - m) * (p[d] - m);
            v /= n;
            mean[d] = m;
            scale[d] = v > 0.0 ? std::sqrt(v) : 1.0;
        }
    }

    std::vector<ParamPoint> apply(const std::vector<ParamPoint>& pts) const {
        std::vector<ParamPoint> out(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (int d = 0; d < 2; ++d) out[i][d] = (pts[i][d] - mean[d]) / scale[d];
        return out;
    }
};

double dist2(const ParamPoint& x, const ParamPoint& y) {
    return (x[0] - y[0]) * (x[0] - y[0]) + (x[1] - y[1]) * (x[1] - y[1]);
}

std::vector<std::size_t> assign(const std::vector<ParamPoint>& z, const std::vector<ParamPoint>& centers) {
    std::vector<std::size_t> labels(z.size(), 0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const double d = dist2(z[i], centers[c]);
            if (d < best) {
                best = d;
                labels[i] = c;
            }
        }
    }
    return labels;
}

double cost(const std::vector<ParamPoint>& z, const std::vector<std::size_t>& labels,
            const std::vector<ParamPoint>& centers) {
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) total += dist2(z[i], centers[labels[i]]);
    return total;
}

// Moves the point farthest from its own centroid into each empty cluster.
void repair_empty(const std::vector<ParamPoint>& z, std::vector<std::size_t>& labels,
                  const std::vector<ParamPoint>& centers, std::size_t k) {
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<std::size_t> sizes(k, 0);
        for (auto l : labels) ++sizes[l];
        if (sizes[c] > 0) continue;
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            if (sizes[labels[i]] < 2) continue;
            const double d = dist2(z[i], centers[labels[i]]);
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        labels[far] = c;
    }
}

std::vector<ParamPoint> means(const std::vector<ParamPoint>& z, const std::vector<std::size_t>& labels,
                              std::size_t k) {
    std::vector<ParamPoint> centers(k, ParamPoint{0.0, 0.0});
    std::vector<double> counts(k, 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        centers[labels[i]][0] += z[i][0];
        centers[labels[i]][1] += z[i][1];
        counts[labels[i]] += 1.0;
    }
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] > 0) {
            centers[c][0] /= counts[c];
            centers[c][1] /= counts[c];
        }
    return centers;
}

double silhouette_standardized(const std::vector<ParamPoint>& z, const std::vector<std::size_t>& labels,
                               std::size_t k) {
    std::vector<std::size_t> sizes(k, 0);
    for (auto l : labels) ++sizes[l];
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (sizes[labels[i]] < 2) continue;  // singleton: s = 0
        std::vector<double> sum(k, 0.0);
        for (std::size_t j = 0; j < z.size(); ++j)
            if (j != i) sum[labels[j]] += std::sqrt(dist2(z[i], z[j]));
        const double a = sum[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c)
            if (c != labels[i] && sizes[c] > 0) b = std::min(b, sum[c] / static_cast<double>(sizes[c]));
        if (!std::isfinite(b)) continue;
        const double m = std::max(a, b);
        if (m > 0.0) total += (b - a) / m;
    }
    return total / static_cast<double>(z.size());
}

}  // namespace

PowerLawFit fit_power_law(std::span<const double> values) {
    if (values.size() < 2) throw ValidationError("power-law fit needs at least 2 attempts");
    std::vector<double> y(values.size());
    for (std::size_t j = 0; j < values.size(); ++j) {
        if (!std::isfinite(values[j])) throw ValidationError("power-law fit input contains a non-finite value");
        y[j] = std::clamp(values[j], kProbabilityClamp, 1.0 - kProbabilityClamp);
    }
    const double n = static_cast<double>(y.size());

    // Seed 1: ordinary least squares of ln y on ln x.
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
        const double lx = std::log(static_cast<double>(j + 1));
        const double ly = std::log(y[j]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double b0 = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double a0 = std::exp((sy - b0 * sx) / n);

    // Seed 2: best constant (b = 0).
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;

    PowerLawFit from_log = gauss_newton(y, a0, b0);
    PowerLawFit from_const = gauss_newton(y, mean, 0.0);
    return from_const.sse < from_log.sse ? from_const : from_log;
}

std::vector<PowerLawFit> fit_rows(const Matrix& rows) {
    std::vector<PowerLawFit> fits;
    fits.reserve(static_cast<std::size_t>(rows.rows()));
    std::vector<double> y(static_cast<std::size_t>(rows.cols()));
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        for (Eigen::Index c = 0; c < rows.cols(); ++c) y[static_cast<std::size_t>(c)] = rows(r, c);
        fits.push_back(fit_power_law(y));
    }
    return fits;
}

ClusterAssignment kmeanspp(const std::vector<ParamPoint>& points, std::size_t k, std::uint64_t seed) {
    if (k < 1) throw ParameterError("k must be at least 1");
    if (points.size() < k)
        throw ValidationError("cannot form " + std::to_string(k) + " clusters from " + std::to_string(points.size()) +
                              " points");
    const Standardizer standardizer(points);
    const auto z = standardizer.apply(points);
    Rng rng = make_rng(seed, 0xc1u);

    std::vector<ParamPoint> centers;
    std::uniform_int_distribution<std::size_t> first(0, z.size() - 1);
    centers.push_back(z[first(rng)]);
    std::vector<double> d2(z.size());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) best = std::min(best, dist2(z[i], c));
            d2[i] = best;
            total += best;
        }
        std::size_t pick;
        if (total > 0.0) {
            std::discrete_distribution<std::size_t> weighted(d2.begin(), d2.end());
            pick = weighted(rng);
        } else {
            pick = first(rng);
        }
        centers.push_back(z[pick]);
    }

    ClusterAssignment out;
    out.k = k;
    auto labels = assign(z, centers);
    for (int it = 0; it < 300; ++it) {
        repair_empty(z, labels, centers, k);
        centers = means(z, labels, k);
        auto next = assign(z, centers);
        out.inertia_history.push_back(cost(z, next, centers));
        out.iterations = it + 1;
        const bool stable = next == labels;
        labels = std::move(next);
        if (stable) break;
    }
    repair_empty(z, labels, centers, k);
    centers = means(z, labels, k);
    out.inertia = cost(z, labels, centers);
    out.labels = std::move(labels);

    out.centroids.assign(k, {0.0, 0.0});
    std::vector<double> counts(k, 0.0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        out.centroids[out.labels[i]][0] += points[i][0];
        out.centroids[out.labels[i]][1] += points[i][1];
        counts[out.labels[i]] += 1.0;
    }
    for (std::size_t c = 0; c < k; ++c) {
        out.centroids[c][0] /= counts[c];
        out.centroids[c][1] /= counts[c];
    }
    return out;
}

double mean_silhouette(const std::vector<ParamPoint>& points, const std::vector<std::size_t>& labels, std::size_t k) {
    if (labels.size() != points.size()) throw DimensionError("one label per point required");
    return silhouette_standardized(Standardizer(points).apply(points), labels, k);
}

KSelection select_k(const std::vector<ParamPoint>& points, std::size_t k_min, std::size_t k_max, std::uint64_t seed) {
    if (k_min < 2 || k_max < k_min) throw ParameterError("k range must satisfy 2 <= k_min <= k_max");
    if (points.size() <= k_max)
        throw ValidationError("silhouette selection needs more than " + std::to_string(k_max) + " points");
    const auto z = Standardizer(points).apply(points);
    KSelection sel;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = k_min; k <= k_max; ++k) {
        const auto fit = kmeanspp(points, k, seed);
        const double s = silhouette_standardized(z, fit.labels, k);
        sel.candidates.push_back(k);
        sel.silhouettes.push_back(s);
        if (s > best) {
            best = s;
            sel.k = k;
        }
    }
    sel.low_confidence = best < kLowSilhouette;
    return sel;
}

QuestionClusters cluster_question(const DenseTensor& dense, std::size_t question, const ClusterOptions& options) {
    QuestionClusters out;
    out.question = question;
    const Matrix slice = extract_slice(dense, question);
    out.fits = fit_rows(slice);
    std::vector<ParamPoint> points;
    for (const auto& f : out.fits) points.push_back({f.a, f.b});

    ClusterAssignment assignment;
    if (options.k) {
        assignment = kmeanspp(points, *options.k, options.seed);
    } else {
        ClusterAssignment single = kmeanspp(points, 1, options.seed);
        const std::size_t k_max = std::min(options.k_max, points.size() - 1);
        if (single.inertia == 0.0 || points.size() < 3 || k_max < options.k_min) {
            assignment = std::move(single);
            out.low_confidence = true;
        } else {
            out.selection = select_k(points, options.k_min, k_max, options.seed);
            out.low_confidence = out.selection->low_confidence;
            assignment = kmeanspp(points, out.selection->k, options.seed);
        }
    }

    // Relabel so cluster 0 has the largest centroid a.
    std::vector<std::size_t> order(assignment.k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return assignment.centroids[x][0] > assignment.centroids[y][0];
    });
    std::vector<std::size_t> rank_of(assignment.k);
    for (std::size_t r = 0; r < order.size(); ++r) rank_of[order[r]] = r;
    std::vector<std::array<double, 2>> centroids(assignment.k);
    for (std::size_t c = 0; c < assignment.k; ++c) centroids[rank_of[c]] = assignment.centroids[c];
    for (auto& l : assignment.labels) l = rank_of[l];
    assignment.centroids = std::move(centroids);
    out.assignment = std::move(assignment);
    return out;
}

Matrix cluster_rows(const Matrix& slice, const std::vector<std::size_t>& labels, std::size_t cluster) {
    if (labels.size() != static_cast<std::size_t>(slice.rows())) throw DimensionError("one label per row required");
    const auto n = static_cast<Eigen::Index>(std::count(labels.begin(), labels.end(), cluster));
    Matrix out(n, slice.cols());
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == cluster) out.row(r++) = slice.row(static_cast<Eigen::Index>(i));
    return out;
}

}  // namespace perfaug
