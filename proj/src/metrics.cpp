#include "fedtcd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fedtcd/errors.hpp"

namespace fedtcd {

namespace {

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return descending ? scores[a] > scores[b] : scores[a] < scores[b];
    });
    return idx;
}

void check_sizes(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ConfigError("metrics: scores and labels differ in length");
}

template <class Fn>
std::optional<double> off_diagonal(std::span<const double> scores, std::span<const std::uint8_t> truth, std::size_t D,
                                   Fn&& fn) {
    if (scores.size() != D * D || truth.size() != D * D) throw ConfigError("metrics: expected D x D matrices");
    std::vector<double> s;
    std::vector<std::uint8_t> l;
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j)
            if (i != j) {
                s.push_back(scores[i * D + j]);
                l.push_back(truth[i * D + j]);
            }
    return fn(std::span<const double>(s), std::span<const std::uint8_t>(l));
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& v) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& x : v)
        if (x) sum += *x, ++n;
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

std::string fmt(const std::optional<double>& v) {
    if (!v) return "NA";
    std::ostringstream os;
    os.precision(10);
    os << *v;
    return os.str();
}

void tally(DetectionScore& s, bool predicted, bool actual) {
    if (predicted && actual) ++s.tp;
    else if (predicted) ++s.fp;
    else if (actual) ++s.fn;
}

}  // namespace

std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_sizes(scores, labels);
    const std::size_t n = scores.size();
    std::size_t P = 0;
    for (auto l : labels) P += l ? 1 : 0;
    const std::size_t N = n - P;
    if (P == 0 || N == 0) return std::nullopt;
    const auto idx = order_by_score(scores, false);
    double rank_sum = 0.0;
    for (std::size_t a = 0; a < n;) {
        std::size_t b = a;
        while (b < n && scores[idx[b]] == scores[idx[a]]) ++b;
        const double avg = 0.5 * static_cast<double>(a + 1 + b);  // mean of ranks a+1..b
        for (std::size_t q = a; q < b; ++q)
            if (labels[idx[q]]) rank_sum += avg;
        a = b;
    }
    const double Pd = static_cast<double>(P), Nd = static_cast<double>(N);
    return (rank_sum - Pd * (Pd + 1.0) / 2.0) / (Pd * Nd);
}

std::optional<double> auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_sizes(scores, labels);
    const std::size_t n = scores.size();
    std::size_t P = 0;
    for (auto l : labels) P += l ? 1 : 0;
    if (P == 0) return std::nullopt;
    const auto idx = order_by_score(scores, true);
    double area = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, seen = 0;
    for (std::size_t a = 0; a < n;) {
        std::size_t b = a;
        while (b < n && scores[idx[b]] == scores[idx[a]]) {
            tp += labels[idx[b]] ? 1 : 0;
            ++b;
        }
        seen = b;
        const double recall = static_cast<double>(tp) / static_cast<double>(P);
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        a = b;
    }
    return area;
}

std::optional<double> edge_auroc(std::span<const double> scores, std::span<const std::uint8_t> truth, std::size_t D) {
    return off_diagonal(scores, truth, D, [](auto s, auto l) { return auroc(s, l); });
}

std::optional<double> edge_auprc(std::span<const double> scores, std::span<const std::uint8_t> truth, std::size_t D) {
    return off_diagonal(scores, truth, D, [](auto s, auto l) { return auprc(s, l); });
}

std::size_t shd(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::size_t D) {
    if (a.size() != D * D || b.size() != D * D) throw ConfigError("shd: expected D x D matrices");
    std::size_t count = 0;
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = i + 1; j < D; ++j) {
            const bool ai = a[i * D + j] != 0, aj = a[j * D + i] != 0;
            const bool bi = b[i * D + j] != 0, bj = b[j * D + i] != 0;
            if (ai != bi || aj != bj) ++count;
        }
    return count;
}

std::vector<std::uint8_t> support(std::span<const double> W, double threshold) {
    std::vector<std::uint8_t> s(W.size());
    std::transform(W.begin(), W.end(), s.begin(), [threshold](double w) { return std::abs(w) > threshold ? 1 : 0; });
    return s;
}

ForecastErrors forecast_errors(const Tensor3& W, const Tensor3& A, std::span<const TimeSeriesPanel> panels) {
    const std::size_t T = W.d0, D = W.d1, L = A.d0;
    double abs_sum = 0.0, sq_sum = 0.0;
    std::size_t count = 0;
    for (const auto& p : panels) {
        if (p.T() != T || p.D() != D) throw ConfigError("forecast_errors: panel dimensions do not match the estimate");
        for (std::size_t s = 0; s < p.n(); ++s)
            for (std::size_t t = L; t < T; ++t)
                for (std::size_t d = 0; d < D; ++d) {
                    double pred = 0.0;
                    for (std::size_t i = 0; i < D; ++i) pred += p(s, t, i) * W(t, i, d);
                    for (std::size_t tau = 0; tau < L; ++tau)
                        for (std::size_t i = 0; i < D; ++i) pred += p(s, t - tau - 1, i) * A(tau, i, d);
                    const double e = p(s, t, d) - pred;
                    abs_sum += std::abs(e);
                    sq_sum += e * e;
                    ++count;
                }
    }
    if (count == 0) return {};
    return {abs_sum / static_cast<double>(count), std::sqrt(sq_sum / static_cast<double>(count))};
}

MaskReport mask_report(const PriorSet& priors, const GroundTruth& truth, const ScenarioSpec& spec) {
    if (!priors.S.same_shape(truth.oracle_S) || !priors.S_A.same_shape(truth.oracle_S_A))
        throw ConfigError("mask_report: prior and oracle shapes differ");
    const std::size_t T = priors.T(), D = priors.D(), L = priors.L();
    MaskReport r;
    std::size_t agree = 0, total = 0, conf_hit = 0, conf_total = 0;
    for (std::size_t t = L; t < T; ++t)
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j) {
                if (i == j) continue;
                const bool s = priors.S(t, i, j), so = truth.oracle_S(t, i, j);
                const bool l = priors.L_soft(t, i, j), lo = truth.oracle_L(t, i, j);
                tally(r.removal, !s, !so);
                tally(r.soft, l, lo);
                agree += (s == so) + (l == lo);
                total += 2;
                const bool confounded = std::any_of(
                    spec.confounded_edges.begin(), spec.confounded_edges.end(), [&](const ConfoundedEdge& c) {
                        return c.window.contains(t) && ((c.from == i && c.to == j) || (c.from == j && c.to == i));
                    });
                if (confounded && !so) {
                    ++conf_total;
                    conf_hit += s ? 0 : 1;
                }
            }
    for (std::size_t a = 0; a < priors.S_A.size(); ++a) {
        const bool s = priors.S_A.data[a], so = truth.oracle_S_A.data[a];
        const bool l = priors.L_soft_A.data[a], lo = truth.oracle_L_A.data[a];
        tally(r.removal_A, !s, !so);
        tally(r.soft_A, l, lo);
        agree += (s == so) + (l == lo);
        total += 2;
    }
    if (conf_total) r.confounded_recall = static_cast<double>(conf_hit) / static_cast<double>(conf_total);
    r.accuracy = total ? static_cast<double>(agree) / static_cast<double>(total) : 1.0;
    return r;
}

EvalReport evaluate(const GraphEstimate& estimate, const GroundTruth& truth, std::span<const TimeSeriesPanel> held_out,
                    double shd_threshold) {
    if (!estimate.W.same_shape(truth.W_true) || !estimate.A.same_shape(truth.A_true))
        throw ConfigError("evaluate: estimate and ground truth shapes differ");
    const std::size_t T = estimate.W.d0, D = estimate.W.d1, L = estimate.A.d0;
    EvalReport rep;
    rep.threshold = shd_threshold;
    rep.auroc_t.resize(T);
    rep.auprc_t.resize(T);
    rep.shd_t.assign(T, 0);
    double shd_sum = 0.0;
    for (std::size_t t = L; t < T; ++t) {
        const std::span<const double> w(estimate.W.slice(t), D * D), wt(truth.W_true.slice(t), D * D);
        std::vector<double> score(D * D);
        std::transform(w.begin(), w.end(), score.begin(), [](double x) { return std::abs(x); });
        const auto truth_support = support(wt, 0.0);
        rep.auroc_t[t] = edge_auroc(score, truth_support, D);
        rep.auprc_t[t] = edge_auprc(score, truth_support, D);
        rep.shd_t[t] = shd(support(w, shd_threshold), truth_support, D);
        shd_sum += static_cast<double>(rep.shd_t[t]);
    }
    rep.auroc_mean = mean_of(rep.auroc_t);
    rep.auprc_mean = mean_of(rep.auprc_t);
    rep.shd_mean = T > L ? shd_sum / static_cast<double>(T - L) : 0.0;
    if (L > 0) {
        std::vector<double> score(estimate.A.size());
        std::transform(estimate.A.data.begin(), estimate.A.data.end(), score.begin(),
                       [](double x) { return std::abs(x); });
        const auto lag_truth = support(truth.A_true.data, 0.0);
        rep.lag_auroc = auroc(score, lag_truth);
        rep.lag_auprc = auprc(score, lag_truth);
    }
    const ForecastErrors fe = forecast_errors(estimate.W, estimate.A, held_out);
    rep.mae = fe.mae;
    rep.rmse = fe.rmse;
    return rep;
}

EvalReport evaluate(const GraphEstimate& estimate, const GroundTruth& truth, std::span<const TimeSeriesPanel> held_out,
                    const PriorSet& priors, const ScenarioSpec& spec, double shd_threshold) {
    EvalReport rep = evaluate(estimate, truth, held_out, shd_threshold);
    rep.masks = mask_report(priors, truth, spec);
    return rep;
}

std::string report_csv(const EvalReport& r) {
    std::ostringstream os;
    os.precision(10);
    os << "key,value\n";
    os << "auroc_mean," << fmt(r.auroc_mean) << "\n";
    os << "auprc_mean," << fmt(r.auprc_mean) << "\n";
    os << "shd_mean," << r.shd_mean << "\n";
    os << "shd_threshold," << r.threshold << "\n";
    os << "lag_auroc," << fmt(r.lag_auroc) << "\n";
    os << "lag_auprc," << fmt(r.lag_auprc) << "\n";
    os << "mae," << r.mae << "\n";
    os << "rmse," << r.rmse << "\n";
    if (r.masks) {
        const MaskReport& m = *r.masks;
        os << "mask_accuracy," << m.accuracy << "\n";
        os << "removal_precision," << m.removal.precision() << "\n";
        os << "removal_recall," << m.removal.recall() << "\n";
        os << "soft_precision," << m.soft.precision() << "\n";
        os << "soft_recall," << m.soft.recall() << "\n";
        os << "lag_removal_precision," << m.removal_A.precision() << "\n";
        os << "lag_removal_recall," << m.removal_A.recall() << "\n";
        os << "lag_soft_precision," << m.soft_A.precision() << "\n";
        os << "lag_soft_recall," << m.soft_A.recall() << "\n";
        os << "confounded_recall," << fmt(m.confounded_recall) << "\n";
    }
    return os.str();
}

std::string per_t_csv(const EvalReport& r) {
    std::ostringstream os;
    os.precision(10);
    os << "t,auroc,auprc,shd\n";
    for (std::size_t t = 0; t < r.auroc_t.size(); ++t)
        os << t << "," << fmt(r.auroc_t[t]) << "," << fmt(r.auprc_t[t]) << "," << r.shd_t[t] << "\n";
    return os.str();
}

std::string report_text(const EvalReport& r) {
    std::ostringstream os;
    os.precision(4);
    os << "edge AUROC (mean over t)  " << fmt(r.auroc_mean) << "\n";
    os << "edge AUPRC (mean over t)  " << fmt(r.auprc_mean) << "\n";
    os << "SHD (mean over t, |W| > " << r.threshold << ")  " << r.shd_mean << "\n";
    os << "lag AUROC                 " << fmt(r.lag_auroc) << "\n";
    os << "forecast MAE / RMSE       " << r.mae << " / " << r.rmse << "\n";
    if (r.masks) {
        const MaskReport& m = *r.masks;
        os << "mask accuracy             " << m.accuracy << "\n";
        os << "removals P/R              " << m.removal.precision() << " / " << m.removal.recall() << "\n";
        os << "soft flags P/R            " << m.soft.precision() << " / " << m.soft.recall() << "\n";
        os << "confounded recall         " << fmt(m.confounded_recall) << "\n";
    }
    return os.str();
}

}  // namespace fedtcd
