#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "specdrift/fft.hpp"
#include "specdrift/rng.hpp"

using namespace specdrift;

namespace {
std::vector<double> random_signal(size_t t, Rng& rng) {
    std::vector<double> x(t);
    for (auto& v : x) v = rng.normal();
    return x;
}
}  // namespace

TEST_CASE("rfft of delta has flat spectrum") {
    std::vector<double> x = {1, 0, 0, 0};
    std::vector<double> re(3), im(3);
    fft::rfft_raw(x.data(), 4, re.data(), im.data());
    for (size_t k = 0; k < 3; ++k) {
        CHECK(re[k] == Catch::Approx(1.0).margin(1e-12));
        CHECK(im[k] == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("rfft of constant maps to DC only") {
    const double c = 2.75;
    std::vector<double> x(4, c);
    std::vector<double> re(3), im(3);
    fft::rfft_raw(x.data(), 4, re.data(), im.data());
    CHECK(re[0] == Catch::Approx(4 * c).margin(1e-12));
    CHECK(re[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(re[2] == Catch::Approx(0.0).margin(1e-12));
    CHECK(im[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("rfft alternating sequence matches direct DFT") {
    std::vector<double> x = {1, 0, -1, 0};
    std::vector<double> re(3), im(3);
    fft::rfft_raw(x.data(), 4, re.data(), im.data());
    CHECK(re[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(re[1] == Catch::Approx(2.0).margin(1e-12));
    CHECK(im[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(re[2] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("irfft DC-only and single-bin cases") {
    {
        std::vector<double> re = {4, 0, 0}, im = {0, 0, 0}, x(4);
        fft::irfft_raw(re.data(), im.data(), 4, x.data());
        for (double v : x) CHECK(v == Catch::Approx(1.0).margin(1e-12));
    }
    {
        std::vector<double> re = {0, 2, 0}, im = {0, 0, 0}, x(4);
        fft::irfft_raw(re.data(), im.data(), 4, x.data());
        std::vector<double> expect = {1, 0, -1, 0};
        // direct inverse-DFT summation agrees
        auto ref = oracle::idft_direct({{0, 0}, {2, 0}, {0, 0}}, 4);
        for (size_t i = 0; i < 4; ++i) {
            CHECK(x[i] == Catch::Approx(expect[i]).margin(1e-12));
            CHECK(x[i] == Catch::Approx(ref[i]).margin(1e-12));
        }
    }
}

TEST_CASE("rfft matches direct DFT summation across lengths") {
    Rng rng(7);
    for (size_t t : {2, 3, 5, 8, 12, 13, 31, 32, 100, 127, 128}) {
        auto x = random_signal(t, rng);
        std::vector<double> re(t / 2 + 1), im(t / 2 + 1);
        fft::rfft_raw(x.data(), t, re.data(), im.data());
        std::vector<oracle::cd> ref;
        oracle::dft_direct(x, ref);
        for (size_t k = 0; k < ref.size(); ++k) {
            CHECK(re[k] == Catch::Approx(ref[k].real()).margin(1e-8));
            CHECK(im[k] == Catch::Approx(ref[k].imag()).margin(1e-8));
        }
        if (t % 2 == 0) CHECK(im[t / 2] == Catch::Approx(0.0).margin(1e-8));
    }
}

TEST_CASE("round trip within 1e-10 for odd and even lengths") {
    Rng rng(11);
    for (size_t t = 2; t <= 512; t = (t < 16 ? t + 1 : t * 2 + (t % 3))) {
        auto x = random_signal(t, rng);
        const size_t k = t / 2 + 1;
        std::vector<double> re(k), im(k), back(t);
        fft::rfft_raw(x.data(), t, re.data(), im.data());
        fft::irfft_raw(re.data(), im.data(), t, back.data());
        double err = 0;
        for (size_t i = 0; i < t; ++i) err = std::max(err, std::fabs(back[i] - x[i]));
        INFO("T=" << t);
        CHECK(err < 1e-10);
    }
}

TEST_CASE("Parseval identity") {
    Rng rng(13);
    for (size_t t : {15, 16, 31, 32, 101, 128}) {
        auto x = random_signal(t, rng);
        const size_t k = t / 2 + 1;
        std::vector<double> re(k), im(k);
        fft::rfft_raw(x.data(), t, re.data(), im.data());
        double time_e = 0;
        for (double v : x) time_e += v * v;
        double freq_e = re[0] * re[0] + im[0] * im[0];
        const bool even = (t % 2 == 0);
        for (size_t i = 1; i < k; ++i) {
            double p = re[i] * re[i] + im[i] * im[i];
            freq_e += (even && i == k - 1) ? p : 2 * p;
        }
        freq_e /= static_cast<double>(t);
        INFO("T=" << t);
        CHECK(std::fabs(time_e - freq_e) < 1e-9);
    }
}

TEST_CASE("rfft rejects too-short input") {
    std::vector<double> x = {1.0};
    std::vector<double> re(1), im(1);
    CHECK_THROWS_AS(fft::rfft_raw(x.data(), 1, re.data(), im.data()), DimensionError);
}
