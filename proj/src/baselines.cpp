#include "perfaug/baselines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include <Eigen/SVD>

#include "perfaug/error.hpp"
#include "perfaug/metrics.hpp"
#include "perfaug/random.hpp"

namespace perfaug {

std::vector<std::size_t> kc_map(std::size_t num_questions, KcMode mode) {
    if (num_questions == 0) throw ValidationError("KC map needs at least one question");
    std::vector<std::size_t> kcs(num_questions, 0);
    if (mode == KcMode::UniqueKC) std::iota(kcs.begin(), kcs.end(), std::size_t{0});
    return kcs;
}

namespace {

std::size_t kc_count(const std::vector<std::size_t>& kcs) {
    return kcs.empty() ? 0 : *std::max_element(kcs.begin(), kcs.end()) + 1;
}

bool precedes(const KcEvent& e, std::size_t question, std::size_t attempt) {
    return e.question < question || (e.question == question && e.attempt < attempt);
}

}  // namespace

std::vector<std::vector<std::vector<KcEvent>>> kc_sequences(const PerformanceTensor& tensor,
                                                            const std::vector<std::size_t>& kcs,
                                                            std::size_t num_kcs) {
    std::vector<std::vector<std::vector<KcEvent>>> seq(tensor.num_learners(),
                                                       std::vector<std::vector<KcEvent>>(num_kcs));
    // observed() walks (u, i, j) in flat order, which is already the event order.
    for (const auto& c : tensor.observed()) seq[c.learner][kcs[c.question]].push_back({c.question, c.attempt, c.value});
    return seq;
}

// ---------------------------------------------------------------------------
// BKT

namespace {

double emission(const BktKcParams& p, double known) { return known * (1.0 - p.p_s) + (1.0 - known) * p.p_g; }

double bkt_update(const BktKcParams& p, double known, double outcome) {
    double posterior;
    if (outcome > 0.5) {
        posterior = known * (1.0 - p.p_s) / emission(p, known);
    } else {
        posterior = known * p.p_s / (known * p.p_s + (1.0 - known) * (1.0 - p.p_g));
    }
    return posterior + (1.0 - posterior) * p.p_t;
}

BktKcParams coordinate_search(BktKcParams start, const std::vector<std::vector<double>>& seqs) {
    auto get = [](BktKcParams& p, int d) -> double& {
        switch (d) {
            case 0: return p.p_l0;
            case 1: return p.p_t;
            case 2: return p.p_g;
            default: return p.p_s;
        }
    };
    BktKcParams best = start;
    double best_ll = bkt_log_likelihood(best, seqs);
    for (double step = 0.075; step >= 1e-4; step *= 0.5) {
        bool improved = true;
        while (improved) {
            improved = false;
            for (int d = 0; d < 4; ++d) {
                for (double dir : {1.0, -1.0}) {
                    BktKcParams trial = best;
                    double& x = get(trial, d);
                    x = std::clamp(x + dir * step, kBktLower, kBktUpper);
                    if (x == get(best, d)) continue;
                    const double ll = bkt_log_likelihood(trial, seqs);
                    if (ll > best_ll + 1e-12) {
                        best = trial;
                        best_ll = ll;
                        improved = true;
                    }
                }
            }
        }
    }
    return best;
}

BktKcParams fit_bkt_kc(const std::vector<std::vector<double>>& seqs) {
    BktKcParams mid{0.5, 0.5, 0.5, 0.5, false};
    if (seqs.empty()) return mid;

    struct Start {
        double ll;
        BktKcParams p;
    };
    std::vector<Start> starts;
    const int levels = 7;  // 0.05, 0.20, ..., 0.95
    for (int a = 0; a < levels; ++a)
        for (int b = 0; b < levels; ++b)
            for (int c = 0; c < levels; ++c)
                for (int d = 0; d < levels; ++d) {
                    BktKcParams p{kBktLower + 0.15 * a, kBktLower + 0.15 * b, kBktLower + 0.15 * c,
                                  kBktLower + 0.15 * d, true};
                    starts.push_back({bkt_log_likelihood(p, seqs), p});
                }
    std::stable_sort(starts.begin(), starts.end(), [](const Start& x, const Start& y) { return x.ll > y.ll; });

    BktKcParams best = starts.front().p;
    double best_ll = starts.front().ll;
    for (std::size_t s = 0; s < 3 && s < starts.size(); ++s) {
        BktKcParams refined = coordinate_search(starts[s].p, seqs);
        const double ll = bkt_log_likelihood(refined, seqs);
        if (ll > best_ll) {
            best = refined;
            best_ll = ll;
        }
    }
    best.fitted = true;
    return best;
}

}  // namespace

double bkt_predict(const BktKcParams& params, const std::vector<double>& history) {
    double known = params.p_l0;
    for (double obs : history) known = bkt_update(params, known, obs);
    return emission(params, known);
}

double bkt_log_likelihood(const BktKcParams& params, const std::vector<std::vector<double>>& sequences) {
    double ll = 0.0;
    for (const auto& seq : sequences) {
        double known = params.p_l0;
        for (double obs : seq) {
            const double pc = emission(params, known);
            ll += std::log(obs > 0.5 ? pc : 1.0 - pc);
            known = bkt_update(params, known, obs);
        }
    }
    return ll;
}

BktModel bkt_fit(const PerformanceTensor& tensor, KcMode mode) {
    BktModel model;
    model.mode = mode;
    model.kc_of_question = kc_map(tensor.num_questions(), mode);
    const std::size_t nkc = kc_count(model.kc_of_question);
    const auto seq = kc_sequences(tensor, model.kc_of_question, nkc);
    for (std::size_t kc = 0; kc < nkc; ++kc) {
        std::vector<std::vector<double>> outcomes;
        for (const auto& learner : seq) {
            if (learner[kc].empty()) continue;
            std::vector<double> o;
            for (const auto& e : learner[kc]) o.push_back(e.outcome);
            outcomes.push_back(std::move(o));
        }
        model.params.push_back(fit_bkt_kc(outcomes));
    }
    return model;
}

Trainer bkt_trainer(KcMode mode) {
    return [mode](const PerformanceTensor& train) -> Predictor {
        auto model = std::make_shared<BktModel>(bkt_fit(train, mode));
        const std::size_t nkc = kc_count(model->kc_of_question);
        auto seq = std::make_shared<std::vector<std::vector<std::vector<KcEvent>>>>(
            kc_sequences(train, model->kc_of_question, nkc));
        return [model, seq](std::size_t u, std::size_t i, std::size_t j) {
            const std::size_t kc = model->kc_of_question[i];
            std::vector<double> history;
            for (const auto& e : (*seq)[u][kc])
                if (precedes(e, i, j)) history.push_back(e.outcome);
            return bkt_predict(model->params[kc], history);
        };
    };
}

// ---------------------------------------------------------------------------
// PFA

namespace {

struct PfaEvent {
    std::size_t kc;
    std::size_t learner;
    double successes;
    double failures;
    double outcome;
};

std::vector<PfaEvent> pfa_events(const PerformanceTensor& tensor, const std::vector<std::size_t>& kcs,
                                 std::size_t nkc) {
    std::vector<PfaEvent> events;
    const auto seq = kc_sequences(tensor, kcs, nkc);
    for (std::size_t u = 0; u < seq.size(); ++u)
        for (std::size_t kc = 0; kc < nkc; ++kc) {
            double s = 0.0, f = 0.0;
            for (const auto& e : seq[u][kc]) {
                events.push_back({kc, u, s, f, e.outcome});
                (e.outcome > 0.5 ? s : f) += 1.0;
            }
        }
    return events;
}

struct PfaState {
    std::vector<PfaKcParams> kc;
    std::vector<double> theta;
};

double pfa_logit(const PfaState& st, const PfaEvent& e) {
    const auto& p = st.kc[e.kc];
    return p.beta + st.theta[e.learner] + p.gamma * e.successes + p.rho * e.failures;
}

double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

double pfa_objective(const PfaState& st, const std::vector<PfaEvent>& events, double penalty) {
    double f = 0.0;
    for (const auto& e : events) {
        const double z = pfa_logit(st, e);
        f += e.outcome > 0.5 ? log_sigmoid(z) : log_sigmoid(-z);
    }
    for (double t : st.theta) f -= penalty * t * t;
    return f;
}

PfaState pfa_gradient(const PfaState& st, const std::vector<PfaEvent>& events, double penalty) {
    PfaState g{std::vector<PfaKcParams>(st.kc.size()), std::vector<double>(st.theta.size(), 0.0)};
    for (const auto& e : events) {
        const double r = e.outcome - sigmoid(pfa_logit(st, e));
        g.kc[e.kc].beta += r;
        g.kc[e.kc].gamma += r * e.successes;
        g.kc[e.kc].rho += r * e.failures;
        g.theta[e.learner] += r;
    }
    for (std::size_t u = 0; u < st.theta.size(); ++u) g.theta[u] -= 2.0 * penalty * st.theta[u];
    return g;
}

PfaState pfa_step(const PfaState& st, const PfaState& g, double alpha) {
    PfaState out = st;
    for (std::size_t k = 0; k < st.kc.size(); ++k) {
        out.kc[k].beta += alpha * g.kc[k].beta;
        out.kc[k].gamma += alpha * g.kc[k].gamma;
        out.kc[k].rho += alpha * g.kc[k].rho;
    }
    for (std::size_t u = 0; u < st.theta.size(); ++u) out.theta[u] += alpha * g.theta[u];
    return out;
}

double squared_norm(const PfaState& g) {
    double s = 0.0;
    for (const auto& k : g.kc) s += k.beta * k.beta + k.gamma * k.gamma + k.rho * k.rho;
    for (double t : g.theta) s += t * t;
    return s;
}

}  // namespace

double pfa_predict(const PfaModel& model, std::size_t kc, std::size_t learner, double successes, double failures) {
    if (kc >= model.params.size() || learner >= model.learner_intercepts.size())
        throw IndexError("PFA prediction index out of range");
    if (successes < 0.0 || failures < 0.0) throw ParameterError("success and failure counts must be nonnegative");
    const auto& p = model.params[kc];
    return sigmoid(p.beta + model.learner_intercepts[learner] + p.gamma * successes + p.rho * failures);
}

PfaModel pfa_fit(const PerformanceTensor& tensor, KcMode mode, const PfaOptions& options) {
    PfaModel model;
    model.mode = mode;
    model.kc_of_question = kc_map(tensor.num_questions(), mode);
    const std::size_t nkc = kc_count(model.kc_of_question);
    const auto events = pfa_events(tensor, model.kc_of_question, nkc);

    PfaState st{std::vector<PfaKcParams>(nkc), std::vector<double>(tensor.num_learners(), 0.0)};
    double f = pfa_objective(st, events, options.theta_penalty);
    model.log_likelihood_history.push_back(f);
    if (!events.empty()) {
        double alpha = 1.0 / static_cast<double>(events.size());
        for (int it = 0; it < options.max_iterations; ++it) {
            const PfaState g = pfa_gradient(st, events, options.theta_penalty);
            const double gg = squared_norm(g);
            if (gg == 0.0) break;
            // Armijo backtracking; grow the step after each success.
            bool accepted = false;
            double f_new = f;
            PfaState next;
            for (int bt = 0; bt < 60; ++bt) {
                next = pfa_step(st, g, alpha);
                f_new = pfa_objective(next, events, options.theta_penalty);
                if (f_new >= f + 1e-4 * alpha * gg) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!accepted) break;
            const double gain = f_new - f;
            st = std::move(next);
            f = f_new;
            model.log_likelihood_history.push_back(f);
            alpha *= 1.5;
            if (gain < options.tolerance) break;
        }
    }
    model.params = std::move(st.kc);
    model.learner_intercepts = std::move(st.theta);
    return model;
}

Trainer pfa_trainer(KcMode mode, const PfaOptions& options) {
    return [mode, options](const PerformanceTensor& train) -> Predictor {
        auto model = std::make_shared<PfaModel>(pfa_fit(train, mode, options));
        const std::size_t nkc = kc_count(model->kc_of_question);
        auto seq = std::make_shared<std::vector<std::vector<std::vector<KcEvent>>>>(
            kc_sequences(train, model->kc_of_question, nkc));
        return [model, seq](std::size_t u, std::size_t i, std::size_t j) {
            const std::size_t kc = model->kc_of_question[i];
            double s = 0.0, f = 0.0;
            for (const auto& e : (*seq)[u][kc])
                if (precedes(e, i, j)) (e.outcome > 0.5 ? s : f) += 1.0;
            return pfa_predict(*model, kc, u, s, f);
        };
    };
}

// ---------------------------------------------------------------------------
// SPARFA-Lite

Matrix average_attempts(const PerformanceTensor& tensor) {
    const auto U = static_cast<Eigen::Index>(tensor.num_learners());
    const auto N = static_cast<Eigen::Index>(tensor.num_questions());
    Matrix sum = Matrix::Zero(U, N), count = Matrix::Zero(U, N);
    for (const auto& c : tensor.observed()) {
        sum(static_cast<Eigen::Index>(c.learner), static_cast<Eigen::Index>(c.question)) += c.value;
        count(static_cast<Eigen::Index>(c.learner), static_cast<Eigen::Index>(c.question)) += 1.0;
    }
    Matrix out(U, N);
    for (Eigen::Index u = 0; u < U; ++u)
        for (Eigen::Index i = 0; i < N; ++i)
            out(u, i) = count(u, i) > 0 ? sum(u, i) / count(u, i) : std::numeric_limits<double>::quiet_NaN();
    return out;
}

SoftImputeResult low_rank_impute(const Matrix& observed, std::size_t rank, double tolerance, int max_iterations) {
    if (rank < 1) throw ParameterError("completion rank must be at least 1");
    const Eigen::Index U = observed.rows(), N = observed.cols();
    const auto mask = observed.array().isFinite();

    double total = 0.0, count = 0.0;
    for (Eigen::Index u = 0; u < U; ++u)
        for (Eigen::Index i = 0; i < N; ++i)
            if (mask(u, i)) {
                total += observed(u, i);
                count += 1.0;
            }
    const double global = count > 0 ? total / count : 0.5;

    Matrix x = observed;
    for (Eigen::Index i = 0; i < N; ++i) {
        double s = 0.0, n = 0.0;
        for (Eigen::Index u = 0; u < U; ++u)
            if (mask(u, i)) {
                s += observed(u, i);
                n += 1.0;
            }
        const double fill = n > 0 ? s / n : global;
        for (Eigen::Index u = 0; u < U; ++u)
            if (!mask(u, i)) x(u, i) = fill;
    }

    SoftImputeResult result;
    const auto r = static_cast<Eigen::Index>(std::min<std::size_t>(rank, static_cast<std::size_t>(std::min(U, N))));
    for (int it = 0; it < max_iterations; ++it) {
        Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Matrix z = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal() *
                         svd.matrixV().leftCols(r).transpose();
        double sse = 0.0, change = 0.0;
        Matrix next = x;
        for (Eigen::Index u = 0; u < U; ++u)
            for (Eigen::Index i = 0; i < N; ++i) {
                if (mask(u, i)) {
                    sse += (z(u, i) - observed(u, i)) * (z(u, i) - observed(u, i));
                } else {
                    change += (z(u, i) - x(u, i)) * (z(u, i) - x(u, i));
                    next(u, i) = z(u, i);
                }
            }
        result.objective_history.push_back(sse);
        const double scale = std::max(x.squaredNorm(), 1e-300);
        x = std::move(next);
        result.iterations = it + 1;
        if (change / scale < tolerance * tolerance) break;
    }
    result.completed = std::move(x);
    return result;
}

SparfaMatrix sparfa_lite_fit(const PerformanceTensor& tensor, std::uint64_t seed) {
    if (tensor.observed_count() == 0) throw ValidationError("SPARFA-Lite needs at least one observed cell");
    SparfaMatrix out;
    out.observed = average_attempts(tensor);
    const Eigen::Index U = out.observed.rows(), N = out.observed.cols();
    const std::size_t max_rank = std::max<std::size_t>(1, static_cast<std::size_t>(std::min(U, N)) - 1);

    std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
    for (Eigen::Index u = 0; u < U; ++u)
        for (Eigen::Index i = 0; i < N; ++i)
            if (std::isfinite(out.observed(u, i))) cells.emplace_back(u, i);

    // Choose the rank on a seeded 10% validation split of observed entries.
    out.rank = 1;
    if (max_rank > 1 && cells.size() >= 10) {
        Rng rng = make_rng(seed, 0x5fa);
        auto shuffled = cells;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const std::size_t n_val = std::max<std::size_t>(1, shuffled.size() / 10);
        Matrix train = out.observed;
        for (std::size_t v = 0; v < n_val; ++v)
            train(shuffled[v].first, shuffled[v].second) = std::numeric_limits<double>::quiet_NaN();
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t r = 1; r <= max_rank; ++r) {
            const Matrix z = low_rank_impute(train, r).completed;
            double ss = 0.0;
            for (std::size_t v = 0; v < n_val; ++v) {
                const auto [u, i] = shuffled[v];
                const double e = std::clamp(z(u, i), 0.0, 1.0) - out.observed(u, i);
                ss += e * e;
            }
            if (ss < best) {
                best = ss;
                out.rank = r;
            }
        }
    }

    auto fitted = low_rank_impute(out.observed, out.rank);
    out.objective_history = std::move(fitted.objective_history);
    out.completed = fitted.completed.cwiseMax(0.0).cwiseMin(1.0);
    return out;
}

Trainer sparfa_trainer(std::uint64_t seed) {
    return [seed](const PerformanceTensor& train) -> Predictor {
        auto fitted = std::make_shared<Matrix>(sparfa_lite_fit(train, seed).completed);
        return [fitted](std::size_t u, std::size_t i, std::size_t) {
            return (*fitted)(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(i));
        };
    };
}

// ---------------------------------------------------------------------------
// Comparison

ComparisonTable evaluate_all(const std::vector<std::pair<std::string, PerformanceTensor>>& datasets,
                             const EvaluateOptions& options) {
    ComparisonTable table;
    for (std::size_t d = 0; d < datasets.size(); ++d) {
        const auto& [name, tensor] = datasets[d];
        const FoldPartition partition = make_folds(tensor, options.folds, derive_seed(options.seed, d));
        const std::array<Trainer, 6> trainers{bkt_trainer(KcMode::SingleKC), bkt_trainer(KcMode::UniqueKC),
                                              pfa_trainer(KcMode::SingleKC), pfa_trainer(KcMode::UniqueKC),
                                              sparfa_trainer(options.seed),
                                              tf_trainer(options.tf_rank, options.tf)};
        std::vector<CvResult> results;
        for (const auto& trainer : trainers) results.push_back(cross_validate(tensor, trainer, partition));

        for (const char* metric : {"rmse", "mae"}) {
            ComparisonRow row;
            row.dataset = name;
            row.metric = metric;
            for (const auto& r : results) row.values.push_back(row.metric == "rmse" ? r.mean_rmse : r.mean_mae);
            row.best = static_cast<std::size_t>(std::min_element(row.values.begin(), row.values.end()) -
                                                row.values.begin());
            table.rows.push_back(std::move(row));
        }
        table.details.push_back(std::move(results));
    }
    return table;
}

std::string comparison_csv(const ComparisonTable& table) {
    std::ostringstream os;
    os << "dataset";
    for (const auto& m : comparison_models()) os << ',' << m;
    os << ",metric\n";
    char buf[32];
    for (const auto& row : table.rows) {
        os << row.dataset;
        for (double v : row.values) {
            std::snprintf(buf, sizeof buf, "%.6f", v);
            os << ',' << buf;
        }
        os << ',' << row.metric << '\n';
    }
    return os.str();
}

}  // namespace perfaug
