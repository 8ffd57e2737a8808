#include <algorithm>
#include <cmath>

#include "fedtcd/dism.hpp"
#include "fedtcd/errors.hpp"

namespace fedtcd {

namespace {

double median_of(std::vector<double> v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
        m = 0.5 * (m + lower);
    }
    return m;
}

}  // namespace

std::vector<std::uint8_t> omega_alarm(std::span<const double> omega) {
    std::vector<std::uint8_t> alarm(omega.size(), 0);
    if (omega.size() < 3) return alarm;
    const double med = median_of({omega.begin(), omega.end()});
    std::vector<double> dev(omega.size());
    std::transform(omega.begin(), omega.end(), dev.begin(), [med](double x) { return std::abs(x - med); });
    const double mad = median_of(std::move(dev));
    for (std::size_t s = 0; s < omega.size(); ++s) alarm[s] = omega[s] > med + 3.0 * mad ? 1 : 0;
    return alarm;
}

std::vector<std::uint8_t> median_filter(std::span<const std::uint8_t> series, std::span<const std::uint8_t> wide) {
    const std::size_t n = series.size();
    std::vector<std::uint8_t> out(series.begin(), series.end());
    if (n < 3) return out;
    for (std::size_t s = 0; s < n; ++s) {
        std::size_t half = (!wide.empty() && wide[s]) ? 2 : 1;
        half = std::min({half, s, n - 1 - s});
        std::size_t ones = 0;
        for (std::size_t q = s - half; q <= s + half; ++q) ones += series[q];
        out[s] = 2 * ones > 2 * half + 1 ? 1 : 0;
    }
    return out;
}

IndicatorSeries temporal_filter(const IndicatorSeries& series, const Tensor3& omegas) {
    const std::size_t S = series.n_sampled, K = series.K, D = series.D;
    if (S < 1) throw ConfigError("temporal_filter: empty indicator series");
    if (omegas.d0 != S || omegas.d1 != K || omegas.d2 != D)
        throw ConfigError("temporal_filter: omega tensor shape mismatch");
    IndicatorSeries out = series;
    if (S < 3) return out;

    std::vector<std::vector<std::uint8_t>> alarms(K * D);
    std::vector<double> buf(S);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t d = 0; d < D; ++d) {
            for (std::size_t s = 0; s < S; ++s) buf[s] = omegas(s, k, d);
            alarms[k * D + d] = omega_alarm(buf);
        }
    }
    std::vector<std::uint8_t> seq(S), wide(S);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < D; ++i) {
            for (std::size_t j = 0; j < D; ++j) {
                if (i == j) continue;
                const auto& ai = alarms[k * D + i];
                const auto& aj = alarms[k * D + j];
                for (std::size_t s = 0; s < S; ++s) {
                    seq[s] = series(s, k, i, j);
                    wide[s] = ai[s] | aj[s];
                }
                const auto filtered = median_filter(seq, wide);
                for (std::size_t s = 0; s < S; ++s) out(s, k, i, j) = filtered[s];
            }
        }
    }
    return out;
}

std::vector<std::size_t> hold_index(std::span<const std::size_t> times, std::size_t T) {
    if (times.empty()) throw ConfigError("zero_order_hold: no sampled times");
    std::vector<std::size_t> idx(times.size());
    for (std::size_t s = 0; s < idx.size(); ++s) idx[s] = s;
    return zero_order_hold<std::size_t>(times, idx, T);
}

BinaryMatrix compute_soft_mask(const BinaryMatrix& S, std::span<const BinaryMatrix> indicators) {
    BinaryMatrix L(S.rows, S.cols, 0);
    for (const auto& I : indicators)
        if (I.rows != S.rows || I.cols != S.cols) throw ConfigError("compute_soft_mask: indicator shape mismatch");
    for (std::size_t i = 0; i < S.rows; ++i) {
        for (std::size_t j = 0; j < S.cols; ++j) {
            std::uint8_t min_k = 1;
            for (const auto& I : indicators) min_k = std::min(min_k, I(i, j));
            if (indicators.empty()) min_k = 1;
            L(i, j) = static_cast<std::uint8_t>(S(i, j) * (1 - min_k));
        }
    }
    return L;
}

}  // namespace fedtcd
