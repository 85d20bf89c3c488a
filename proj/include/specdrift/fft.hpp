#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "specdrift/errors.hpp"

// Real-input FFT support for arbitrary lengths. Power-of-two sizes use an
// iterative radix-2 transform; every other size goes through Bluestein's
// chirp-z algorithm on top of it. Forward transforms are unnormalized, the
// inverse carries the 1/T factor.

namespace specdrift::fft {

using cd = std::complex<double>;

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline void fft_pow2_inplace(std::vector<cd>& a, bool inverse) {
    const size_t n = a.size();
    if (n <= 1) return;
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        cd wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                cd u = a[i + j];
                cd v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    // no 1/n here; callers normalize where needed
}

inline size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Bluestein chirp-z: DFT of arbitrary length via one pow2 convolution.
inline std::vector<cd> dft_bluestein(const std::vector<cd>& x, bool inverse) {
    const size_t n = x.size();
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<cd> chirp(n);
    for (size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small for large k
        uint64_t k2 = (static_cast<uint64_t>(k) * k) % (2 * n);
        double ang = sign * M_PI * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = cd(std::cos(ang), std::sin(ang));
    }
    const size_t m = next_pow2(2 * n - 1);
    std::vector<cd> a(m, cd(0, 0)), b(m, cd(0, 0));
    for (size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
    b[0] = std::conj(chirp[0]);
    for (size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);
    fft_pow2_inplace(a, false);
    fft_pow2_inplace(b, false);
    for (size_t k = 0; k < m; ++k) a[k] *= b[k];
    fft_pow2_inplace(a, true);
    std::vector<cd> out(n);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (size_t k = 0; k < n; ++k) out[k] = a[k] * inv_m * chirp[k];
    return out;
}

// Unnormalized DFT (forward) or unnormalized inverse DFT (conjugate kernel).
inline std::vector<cd> dft(const std::vector<cd>& x, bool inverse) {
    if (is_pow2(x.size())) {
        std::vector<cd> a = x;
        fft_pow2_inplace(a, inverse);
        return a;
    }
    return dft_bluestein(x, inverse);
}

inline size_t rfft_bins(size_t t) { return t / 2 + 1; }

// x[0..t) -> re/im[0..t/2], unnormalized. Bin 0 is DC; bin t/2 (even t) is Nyquist.
inline void rfft_raw(const double* x, size_t t, double* re, double* im) {
    if (t < 2) throw DimensionError("rfft: temporal length must be >= 2");
    std::vector<cd> a(t);
    for (size_t i = 0; i < t; ++i) a[i] = cd(x[i], 0.0);
    std::vector<cd> z = dft(a, false);
    const size_t k = rfft_bins(t);
    for (size_t i = 0; i < k; ++i) {
        re[i] = z[i].real();
        im[i] = z[i].imag();
    }
}

// Hermitian-symmetric inverse with 1/t normalization. Imaginary parts of the
// DC and (even t) Nyquist bins are discarded so the output is exactly real.
inline void irfft_raw(const double* re, const double* im, size_t t, double* x) {
    const size_t k = rfft_bins(t);
    std::vector<cd> z(t);
    z[0] = cd(re[0], 0.0);
    const bool even = (t % 2 == 0);
    const size_t last_osc = even ? k - 2 : k - 1;
    for (size_t i = 1; i <= last_osc; ++i) {
        z[i] = cd(re[i], im[i]);
        z[t - i] = std::conj(z[i]);
    }
    if (even) z[t / 2] = cd(re[k - 1], 0.0);
    std::vector<cd> out = dft(z, true);
    const double inv_t = 1.0 / static_cast<double>(t);
    for (size_t i = 0; i < t; ++i) x[i] = out[i].real() * inv_t;
}

// Adjoint of rfft_raw as a linear map R^t -> R^{2k}:
// gx[s] = sum_k ( gre[k] cos(2 pi k s / t) - gim[k] sin(2 pi k s / t) ).
inline void rfft_adjoint(const double* gre, const double* gim, size_t t, double* gx) {
    const size_t k = rfft_bins(t);
    std::vector<cd> g(t, cd(0, 0));
    for (size_t i = 0; i < k; ++i) g[i] = cd(gre[i], gim[i]);
    std::vector<cd> out = dft(g, true);  // unnormalized inverse kernel e^{+j...}
    for (size_t s = 0; s < t; ++s) gx[s] = out[s].real();
}

// Adjoint of irfft_raw: gre[k] = (c_k/t) Re(F g)_k, gim[k] = (c_k/t) Im(F g)_k,
// with c_k = 2 on oscillatory bins and 1 on DC/Nyquist; gim pinned 0 there.
inline void irfft_adjoint(const double* gx, size_t t, double* gre, double* gim) {
    const size_t k = rfft_bins(t);
    std::vector<cd> g(t);
    for (size_t s = 0; s < t; ++s) g[s] = cd(gx[s], 0.0);
    std::vector<cd> z = dft(g, false);
    const bool even = (t % 2 == 0);
    const double inv_t = 1.0 / static_cast<double>(t);
    for (size_t i = 0; i < k; ++i) {
        const bool half = (i == 0) || (even && i == k - 1);
        const double c = half ? 1.0 : 2.0;
        gre[i] = c * inv_t * z[i].real();
        gim[i] = half ? 0.0 : c * inv_t * z[i].imag();
    }
}

}  // namespace specdrift::fft
