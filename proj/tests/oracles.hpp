#pragma once

// Independent reference implementations used only by tests. Everything here
// is deliberately naive (direct summation, exhaustive pair counting) so that
// it cannot share a bug with the library code paths it checks.

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <set>
#include <vector>

namespace oracle {

using cd = std::complex<double>;

// Direct O(T^2) DFT summation; bins 0..T/2.
inline void dft_direct(const std::vector<double>& x, std::vector<cd>& bins) {
    const size_t t = x.size();
    const size_t k = t / 2 + 1;
    bins.assign(k, cd(0, 0));
    for (size_t ki = 0; ki < k; ++ki)
        for (size_t n = 0; n < t; ++n) {
            double ang = -2.0 * M_PI * static_cast<double>(ki) * static_cast<double>(n) / static_cast<double>(t);
            bins[ki] += x[n] * cd(std::cos(ang), std::sin(ang));
        }
}

// Direct inverse from half-spectrum with 1/T normalization.
inline std::vector<double> idft_direct(const std::vector<cd>& bins, size_t t) {
    std::vector<double> x(t, 0.0);
    const bool even = (t % 2 == 0);
    const size_t k = bins.size();
    for (size_t n = 0; n < t; ++n) {
        double s = bins[0].real();
        for (size_t ki = 1; ki < k; ++ki) {
            const bool nyq = even && ki == k - 1;
            double ang = 2.0 * M_PI * static_cast<double>(ki) * static_cast<double>(n) / static_cast<double>(t);
            double term = bins[ki].real() * std::cos(ang) - bins[ki].imag() * std::sin(ang);
            s += nyq ? bins[ki].real() * std::cos(ang) : 2.0 * term;
        }
        x[n] = s / static_cast<double>(t);
    }
    return x;
}

// AUROC for one class as the tie-averaged concordant-pair fraction.
inline double auroc_pairs(const std::vector<int>& is_pos, const std::vector<double>& score) {
    double conc = 0, total = 0;
    for (size_t i = 0; i < score.size(); ++i)
        for (size_t j = 0; j < score.size(); ++j) {
            if (is_pos[i] != 1 || is_pos[j] != 0) continue;
            total += 1;
            if (score[i] > score[j]) conc += 1;
            else if (score[i] == score[j]) conc += 0.5;
        }
    if (total == 0) return 0.0;
    return conc / total;
}

// Per-class F1 from first principles.
inline double macro_f1(const std::vector<int>& y, const std::vector<int>& pred, int num_classes) {
    double sum = 0;
    for (int k = 0; k < num_classes; ++k) {
        double tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < y.size(); ++i) {
            if (pred[i] == k && y[i] == k) tp += 1;
            else if (pred[i] == k) fp += 1;
            else if (y[i] == k) fn += 1;
        }
        double denom = 2 * tp + fp + fn;
        sum += denom > 0 ? 2 * tp / denom : 0.0;
    }
    return sum / num_classes;
}

// Brute-force mean silhouette with Euclidean distance; singletons score 0.
inline double silhouette(const std::vector<std::vector<double>>& pts, const std::vector<int>& labels) {
    const size_t n = pts.size();
    auto dist = [&](size_t i, size_t j) {
        double s = 0;
        for (size_t d = 0; d < pts[i].size(); ++d) {
            double diff = pts[i][d] - pts[j][d];
            s += diff * diff;
        }
        return std::sqrt(s);
    };
    std::set<int> labs(labels.begin(), labels.end());
    double total = 0;
    for (size_t i = 0; i < n; ++i) {
        std::map<int, std::pair<double, size_t>> acc;  // label -> (sum dist, count)
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            acc[labels[j]].first += dist(i, j);
            acc[labels[j]].second += 1;
        }
        size_t own = acc.count(labels[i]) ? acc[labels[i]].second : 0;
        if (own == 0) continue;  // singleton -> contributes 0
        double a = acc[labels[i]].first / static_cast<double>(own);
        double b = std::numeric_limits<double>::infinity();
        for (int l : labs) {
            if (l == labels[i] || acc[l].second == 0) continue;
            b = std::min(b, acc[l].first / static_cast<double>(acc[l].second));
        }
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

}  // namespace oracle
