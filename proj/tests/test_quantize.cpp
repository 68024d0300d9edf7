#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mixq/quantize.hpp"
#include "oracles.hpp"

using namespace mixq;

namespace {

QuantParams simple_params(double scale, double zero, int bits, bool is_signed) {
    QuantParams p;
    p.scale = {scale};
    p.zero = {zero};
    p.bits = bits;
    p.is_signed = is_signed;
    return p;
}

Slicing flat(size_t n) { return Slicing::dense(Granularity::per_tensor, static_cast<int64_t>(n), 1); }

}  // namespace

TEST_CASE("qrange", "[quantize]") {
    CHECK(qrange(8, true) == std::make_pair(int64_t{-128}, int64_t{127}));
    CHECK(qrange(2, true) == std::make_pair(int64_t{-2}, int64_t{1}));
    CHECK(qrange(4, false) == std::make_pair(int64_t{0}, int64_t{15}));
    CHECK(qrange(1, true) == std::make_pair(int64_t{-1}, int64_t{0}));
    CHECK_THROWS_AS(qrange(0, true), InvalidArgument);
}

TEST_CASE("quantize and dequantize", "[quantize]") {
    SECTION("nearest integer rounding") {
        auto q = quantize({2.4, -1.7}, simple_params(1, 0, 8, true), flat(2));
        CHECK(q == std::vector<int64_t>{2, -2});
    }
    SECTION("clipping") {
        auto q = quantize({300.0}, simple_params(1, 0, 8, true), flat(1));
        CHECK(q == std::vector<int64_t>{127});
    }
    SECTION("half-to-even tie break") {
        auto q = quantize({0.5, 1.5, 2.5, -0.5}, simple_params(1, 0, 8, true), flat(4));
        CHECK(q == std::vector<int64_t>{0, 2, 2, 0});
    }
    SECTION("non-finite input is a domain error") {
        CHECK_THROWS_AS(quantize({std::nan("")}, simple_params(1, 0, 8, true), flat(1)), DomainError);
    }
    SECTION("dequantize basics") {
        CHECK(dequantize({0}, simple_params(1, 0, 8, true), flat(1)) == std::vector<double>{0.0});
        auto d = dequantize({127}, simple_params(0.1, 0, 8, true), flat(1));
        CHECK_THAT(d[0], Catch::Matchers::WithinAbs(12.7, 1e-12));
    }
    SECTION("round trip error is bounded by half a step inside the span") {
        const QuantParams p = simple_params(0.05, 3, 8, true);
        const double lo = (static_cast<double>(p.qmin()) - 3) * 0.05;
        const double hi = (static_cast<double>(p.qmax()) - 3) * 0.05;
        for (int i = 0; i <= 1000; ++i) {
            const double x = lo + (hi - lo) * static_cast<double>(i) / 1000.0;
            auto q = quantize({x}, p, flat(1));
            auto back = dequantize(q, p, flat(1));
            CHECK(std::abs(back[0] - x) <= 0.05 / 2 + 1e-12);
        }
    }
    SECTION("monotonicity") {
        Rng rng = make_rng(41);
        std::uniform_real_distribution<double> unif(-4.0, 4.0);
        const QuantParams p = simple_params(0.07, -5, 6, true);
        for (int trial = 0; trial < 200; ++trial) {
            double x = unif(rng), y = unif(rng);
            if (x > y) std::swap(x, y);
            auto q = quantize({x, y}, p, flat(2));
            CHECK(q[0] <= q[1]);
        }
    }
}

TEST_CASE("min-max calibration", "[quantize]") {
    SECTION("unsigned 4-bit over [0,15] lands on unit scale") {
        std::vector<double> x;
        for (int i = 0; i <= 15; ++i) x.push_back(static_cast<double>(i));
        Quantizer q(4, false, Granularity::per_tensor);
        calibrate_minmax(q, x, flat(x.size()));
        QuantParams p = q.params();
        CHECK_THAT(p.scale[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
        CHECK(p.zero_int(0) == 0);
    }

    SECTION("constant input hits the scale floor and maps to one level") {
        Quantizer q(8, true, Granularity::per_tensor);
        calibrate_minmax(q, {3.0, 3.0, 3.0}, flat(3));
        QuantParams p = q.params();
        CHECK_THAT(p.scale[0], Catch::Matchers::WithinAbs(1e-8, 1e-18));
        auto ql = quantize({3.0, 3.0, 3.0}, p, flat(3));
        CHECK(ql[0] == ql[1]);
        CHECK(ql[1] == ql[2]);
    }

    SECTION("calibration batch never clips afterwards") {
        Rng rng = make_rng(43);
        std::uniform_real_distribution<double> unif(-7.0, 13.0);
        for (int bits : {2, 4, 8}) {
            std::vector<double> x(257);
            for (double& v : x) v = unif(rng);
            Quantizer q(bits, true, Granularity::per_tensor);
            calibrate_minmax(q, x, flat(x.size()));
            QuantParams p = q.params();
            auto ql = quantize(x, p, flat(x.size()));
            // interior hits only: both extremes must map strictly inside-or-onto the range
            for (int64_t v : ql) {
                CHECK(v >= p.qmin());
                CHECK(v <= p.qmax());
            }
            // and the extreme inputs must not saturate past the representable ends
            const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
            auto qmn = quantize({*mn_it}, p, flat(1));
            auto qmx = quantize({*mx_it}, p, flat(1));
            CHECK(qmn[0] == p.qmin());
            CHECK(qmx[0] == p.qmax());
        }
    }

    SECTION("symmetric mode forces zero offset") {
        Quantizer q(8, true, Granularity::per_tensor, /*symmetric=*/true);
        calibrate_minmax(q, {-2.0, 1.0}, flat(2));
        QuantParams p = q.params();
        CHECK(p.zero_int(0) == 0);
        CHECK_THAT(p.scale[0], Catch::Matchers::WithinAbs(2.0 / 127.0, 1e-15));
    }

    SECTION("per-row slicing calibrates each row separately") {
        Quantizer q(8, true, Granularity::per_row);
        std::vector<double> x = {0, 1, 0, 100};
        calibrate_minmax(q, x, Slicing::dense(Granularity::per_row, 2, 2));
        QuantParams p = q.params();
        CHECK(p.scale.size() == 2);
        CHECK(p.scale[1] > p.scale[0]);
    }
}

TEST_CASE("fake quantization forward and STE", "[quantize]") {
    Quantizer q(8, true, Granularity::per_tensor);
    q.init_slices(1);
    q.calibrated = true;  // identity parameters: S=1 (log 0), Z=0

    SECTION("inside the range the forward rounds and the gradient passes through") {
        Tensor x = Tensor::from_values({3}, {1.2, -2.7, 0.4}, true);
        Tensor y = fake_quantize(q, x, flat(3));
        CHECK(y.values() == std::vector<double>{1.0, -3.0, 0.0});
        backward(sum(y));
        CHECK(x.grad() == std::vector<double>{1, 1, 1});
    }

    SECTION("far above the range the output pins and the gradient is zero") {
        Tensor x = Tensor::from_values({1}, {500.0}, true);
        Tensor y = fake_quantize(q, x, flat(1));
        CHECK(y.values()[0] == 127.0);
        backward(sum(y));
        CHECK(x.grad() == std::vector<double>{0});
    }

    SECTION("uncalibrated quantizer is a state error") {
        Quantizer raw(8, true, Granularity::per_tensor);
        raw.init_slices(1);
        CHECK_THROWS_AS(fake_quantize(raw, Tensor::zeros({1}), flat(1)), StateError);
    }

    SECTION("the zero-gradient region exactly matches the clip region") {
        // straddle both boundaries of a tiny 2-bit quantizer: range [-2, 1]
        Quantizer q2(2, true, Granularity::per_tensor);
        q2.init_slices(1);
        q2.calibrated = true;
        std::vector<double> points = {-3.0, -2.51, -2.49, -2.0, -0.2, 0.9, 1.44, 1.51, 2.5};
        for (double v : points) {
            Tensor x = Tensor::from_values({1}, {v}, true);
            Tensor y = fake_quantize(q2, x, flat(1));
            backward(sum(y));
            const bool clipped = round_half_even(v) < -2.0 || round_half_even(v) > 1.0;
            CHECK(x.grad()[0] == (clipped ? 0.0 : 1.0));
        }
    }
}

TEST_CASE("fake quantization parameter gradients", "[quantize]") {
    Rng rng = make_rng(47);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);

    SECTION("scale gradient matches finite differences where the surrogate is smooth") {
        // The straight-through scale gradient replaces the rounding staircase
        // by its smoothed slope, so raw finite differences can only agree in
        // the clip regions, where the forward is genuinely smooth in S. Build
        // an input that clips on both sides.
        Quantizer q(4, true, Granularity::per_tensor);
        q.init_slices(1);
        q.calibrated = true;  // S = 1 over range [-8, 7]
        std::vector<double> data = {40.0, -55.0, 103.0, -21.0};
        Tensor x = Tensor::from_values({4}, data, false);
        Tensor log_s = q.log_s;

        Tensor out = fake_quantize(q, x, flat(4));
        backward(sum(out));
        const double lsq = 1.0 / std::sqrt(4.0 * 7.0);
        const double autodiff = log_s.grad()[0] / lsq;

        const double fd = oracle::finite_diff(log_s, [&] {
            return sum(fake_quantize(q, x, flat(4))).item();
        })[0];
        CHECK(oracle::rel_err(autodiff, fd) <= 1e-3);
    }

    SECTION("scale gradient matches the straight-through closed form") {
        Quantizer q(4, true, Granularity::per_tensor);
        std::vector<double> data(32);
        for (double& v : data) v = unif(rng);
        calibrate_minmax(q, data, flat(data.size()));

        std::vector<double> w(data.size());
        for (double& v : w) v = unif(rng);
        Tensor weights = Tensor::from_values({static_cast<int64_t>(data.size())}, w);
        Tensor x = Tensor::from_values({static_cast<int64_t>(data.size())}, data, false);

        Tensor out = fake_quantize(q, x, flat(data.size()));
        backward(sum(mul(weights, out)));

        const QuantParams p = q.params();
        const double s = p.scale[0];
        const double z = static_cast<double>(p.zero_int(0));
        double expected = 0.0;
        for (size_t i = 0; i < data.size(); ++i) {
            const double u = data[i] / s;
            const double uq = round_half_even(u) + z;
            if (uq >= static_cast<double>(p.qmin()) && uq <= static_cast<double>(p.qmax()))
                expected += w[i] * (round_half_even(u) - u);
            else
                expected += w[i] * (std::clamp(uq, double(p.qmin()), double(p.qmax())) - z);
        }
        expected *= s / std::sqrt(static_cast<double>(data.size()) * static_cast<double>(p.qmax()));
        CHECK_THAT(q.log_s.grad()[0], Catch::Matchers::WithinAbs(expected, 1e-12));
    }

    SECTION("zero-point gradient is non-zero only through clipped entries") {
        Quantizer q(4, true, Granularity::per_tensor);
        q.init_slices(1);
        q.calibrated = true;
        Tensor x = Tensor::from_values({2}, {0.4, 100.0});
        Tensor y = fake_quantize(q, x, flat(2));
        backward(sum(y));
        CHECK(q.zero.grad()[0] == -1.0);  // one clipped entry, -S with S=1
    }
}

TEST_CASE("quantizer invariants", "[quantize]") {
    Rng rng = make_rng(53);
    std::uniform_real_distribution<double> unif(-20.0, 20.0);

    SECTION("range invariant for any calibrated quantizer") {
        for (int trial = 0; trial < 20; ++trial) {
            const int bits = 1 + static_cast<int>(rng() % 8);
            const bool is_signed = rng() % 2 == 0;
            std::vector<double> calib(64), fresh(64);
            for (double& v : calib) v = unif(rng);
            for (double& v : fresh) v = unif(rng) * 3.0;
            Quantizer q(bits, is_signed, Granularity::per_tensor);
            calibrate_minmax(q, calib, flat(calib.size()));
            QuantParams p = q.params();
            for (int64_t v : quantize(fresh, p, flat(fresh.size()))) {
                CHECK(v >= p.qmin());
                CHECK(v <= p.qmax());
            }
        }
    }

    SECTION("identity limit at 32 bits") {
        std::vector<double> x(128);
        for (double& v : x) v = unif(rng);
        Quantizer q(32, true, Granularity::per_tensor);
        calibrate_minmax(q, x, flat(x.size()));
        QuantParams p = q.params();
        Tensor t = Tensor::from_values({static_cast<int64_t>(x.size())}, x);
        Tensor y = fake_quantize(q, t, flat(x.size()));
        for (size_t i = 0; i < x.size(); ++i)
            CHECK(std::abs(y.values()[i] - x[i]) <= p.scale[0] / 2 + 1e-15);
    }
}
