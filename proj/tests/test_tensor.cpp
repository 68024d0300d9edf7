#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mixq/tensor.hpp"
#include "oracles.hpp"

using namespace mixq;

TEST_CASE("matmul forward basics", "[tensor]") {
    Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, m);
    CHECK(out.values() == std::vector<double>{1, 2, 3, 4});

    Tensor proj = Tensor::from_values({2, 2}, {1, 0, 0, 0});
    Tensor v = Tensor::from_values({2, 1}, {5, 7});
    CHECK(matmul(proj, v).values() == std::vector<double>{5, 0});

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences and the closed form", "[tensor]") {
    Rng rng = make_rng(7);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({4, 5}, rng, 1.0, false);

    Tensor loss = sum(matmul(a, b));
    backward(loss);

    // d sum(AB) / dA[i,p] = sum_j B[p,j]: each column of dA broadcasts B's row sums.
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t p = 0; p < 4; ++p) {
            double row_sum = 0.0;
            for (int64_t j = 0; j < 5; ++j) row_sum += b.values()[static_cast<size_t>(p * 5 + j)];
            CHECK_THAT(a.grad()[static_cast<size_t>(i * 4 + p)], Catch::Matchers::WithinAbs(row_sum, 1e-12));
        }

    a.zero_grad();
    const double err = oracle::gradcheck(a, [&] { return sum(matmul(a, b)); });
    CHECK(err <= 1e-5);
}

TEST_CASE("elementwise ops and broadcasting", "[tensor]") {
    Tensor x = Tensor::from_values({3}, {-1, 0, 2});
    CHECK(relu(x).values() == std::vector<double>{0, 0, 2});

    SECTION("relu subgradient at zero is zero") {
        Tensor xr = Tensor::from_values({3}, {-1, 0, 2}, true);
        backward(sum(relu(xr)));
        CHECK(xr.grad() == std::vector<double>{0, 0, 1});
    }

    SECTION("exp/log round trip") {
        Rng rng = make_rng(3);
        std::uniform_real_distribution<double> unif(0.1, 5.0);
        std::vector<double> vals(64);
        for (double& v : vals) v = unif(rng);
        Tensor t = Tensor::from_values({64}, vals);
        Tensor rt = mixq::exp(mixq::log(t));
        for (size_t i = 0; i < vals.size(); ++i)
            CHECK_THAT(rt.values()[i], Catch::Matchers::WithinAbs(vals[i], 1e-12));
    }

    SECTION("log rejects non-positive input") {
        CHECK_THROWS_AS(mixq::log(Tensor::from_values({2}, {1.0, 0.0})), DomainError);
    }

    SECTION("leading-1 broadcast works, trailing broadcast is rejected") {
        Tensor row = Tensor::from_values({1, 3}, {1, 2, 3});
        Tensor m = Tensor::from_values({2, 3}, {0, 0, 0, 1, 1, 1});
        CHECK(add(row, m).values() == std::vector<double>{1, 2, 3, 2, 3, 4});
        CHECK(add(Tensor::scalar(2.0), m).values() == std::vector<double>{2, 2, 2, 3, 3, 3});

        Tensor col = Tensor::from_values({2, 1}, {1, 2});
        CHECK_THROWS_AS(add(col, m), DimensionError);
    }

    SECTION("broadcast gradients reduce over the expanded dims") {
        Tensor row = Tensor::from_values({1, 3}, {1, 2, 3}, true);
        Tensor m = Tensor::from_values({2, 3}, {0, 1, 2, 3, 4, 5});
        backward(sum(mul(row, m)));
        CHECK(row.grad() == std::vector<double>{3, 5, 7});
    }
}

TEST_CASE("softmax cross entropy", "[tensor]") {
    SECTION("uniform logits give ln 2") {
        Tensor logits = Tensor::from_values({1, 2}, {0, 0});
        Tensor loss = softmax_cross_entropy(logits, {0}, {1});
        CHECK_THAT(loss.item(), Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
    }
    SECTION("large logits stay finite") {
        Tensor logits = Tensor::from_values({1, 2}, {1000, 0});
        Tensor loss = softmax_cross_entropy(logits, {0}, {1});
        CHECK(std::isfinite(loss.item()));
        CHECK(loss.item() < 1e-9);
    }
    SECTION("gradient matches finite differences") {
        Rng rng = make_rng(11);
        Tensor logits = Tensor::randn({5, 3}, rng, 1.0, true);
        const std::vector<int64_t> labels = {0, 2, 1, 1, 0};
        const std::vector<uint8_t> mask = {1, 0, 1, 1, 0};
        const double err =
            oracle::gradcheck(logits, [&] { return softmax_cross_entropy(logits, labels, mask); });
        CHECK(err <= 1e-4);
    }
    SECTION("empty mask is rejected") {
        Tensor logits = Tensor::zeros({2, 2});
        CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 1}, {0, 0}), InvalidArgument);
    }
    SECTION("out of range label is rejected") {
        Tensor logits = Tensor::zeros({1, 2});
        CHECK_THROWS_AS(softmax_cross_entropy(logits, {2}, {1}), InvalidArgument);
    }
}

TEST_CASE("custom gradient overrides", "[tensor]") {
    Tensor x = Tensor::from_values({3}, {0.2, 1.7, -0.4}, true);

    SECTION("identity override passes the upstream gradient through") {
        Tensor y = custom_grad(
            x, [](const std::vector<double>& v) { return v; },
            [](const std::vector<double>& up, const std::vector<double>&) { return up; });
        backward(sum(y));
        CHECK(x.grad() == std::vector<double>{1, 1, 1});
    }

    SECTION("zero override blocks the gradient") {
        Tensor y = custom_grad(
            x, [](const std::vector<double>& v) { return v; },
            [](const std::vector<double>& up, const std::vector<double>&) {
                return std::vector<double>(up.size(), 0.0);
            });
        backward(sum(y));
        CHECK(x.grad() == std::vector<double>{0, 0, 0});
    }

    SECTION("straight-through round reports unit gradient") {
        Tensor y = custom_grad(
            x,
            [](const std::vector<double>& v) {
                std::vector<double> out(v.size());
                for (size_t i = 0; i < v.size(); ++i) out[i] = std::nearbyint(v[i]);
                return out;
            },
            [](const std::vector<double>& up, const std::vector<double>&) { return up; });
        CHECK(y.values() == std::vector<double>{0, 2, -0});
        backward(sum(y));
        CHECK(x.grad() == std::vector<double>{1, 1, 1});
    }
}

TEST_CASE("backward pass contracts", "[tensor]") {
    SECTION("sum gives all-ones gradient") {
        Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, true);
        backward(sum(x));
        CHECK(x.grad() == std::vector<double>(6, 1.0));
    }

    SECTION("chain of two matmuls against finite differences") {
        Rng rng = make_rng(5);
        Tensor a = Tensor::randn({2, 3}, rng, 1.0, true);
        Tensor b = Tensor::randn({3, 4}, rng);
        Tensor c = Tensor::randn({4, 2}, rng);
        const double err = oracle::gradcheck(a, [&] { return sum(matmul(matmul(a, b), c)); });
        CHECK(err <= 1e-5);
    }

    SECTION("backward on a non-scalar is rejected") {
        Tensor x = Tensor::zeros({2}, true);
        CHECK_THROWS_AS(backward(x), InvalidArgument);
    }

    SECTION("repeated backward accumulates into leaves") {
        Tensor x = Tensor::from_values({2}, {1, 2}, true);
        Tensor loss = mul(sum(x), Tensor::scalar(3.0));
        backward(loss);
        CHECK(x.grad() == std::vector<double>{3, 3});
        backward(loss);
        CHECK(x.grad() == std::vector<double>{6, 6});
    }

    SECTION("backward of a sum of losses equals the sum of backwards") {
        Rng rng = make_rng(9);
        Tensor x = Tensor::randn({4}, rng, 1.0, true);
        Tensor l1 = sum(mul(x, x));
        Tensor l2 = sum(mixq::exp(x));
        backward(add(l1, l2));
        std::vector<double> joint = x.grad();
        x.zero_grad();
        backward(l1);
        backward(l2);
        for (size_t i = 0; i < joint.size(); ++i)
            CHECK_THAT(x.grad()[i], Catch::Matchers::WithinAbs(joint[i], 1e-12));
    }

    SECTION("diamond reuse accumulates both paths") {
        Tensor x = Tensor::from_values({1}, {2.0}, true);
        Tensor y = mul(x, x);
        backward(sum(y));
        CHECK_THAT(x.grad()[0], Catch::Matchers::WithinAbs(4.0, 1e-12));
    }
}

TEST_CASE("finite difference sweep over differentiable ops", "[tensor]") {
    Rng rng = make_rng(21);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    auto fill = [&](Tensor& t) {
        for (double& v : t.values_mut()) v = unif(rng);
    };

    Tensor x = Tensor::zeros({3, 4}, true);
    Tensor y = Tensor::zeros({3, 4}, true);
    fill(x);
    fill(y);
    // keep relu away from its kink and log/div away from their poles
    for (double& v : y.values_mut()) v = std::abs(v) + 0.5;
    for (double& v : x.values_mut())
        if (std::abs(v) < 1e-2) v = 0.5;

    CHECK(oracle::gradcheck(x, [&] { return sum(add(x, y)); }) <= 1e-4);
    CHECK(oracle::gradcheck(x, [&] { return sum(sub(x, y)); }) <= 1e-4);
    CHECK(oracle::gradcheck(x, [&] { return sum(mul(x, y)); }) <= 1e-4);
    CHECK(oracle::gradcheck(x, [&] { return sum(div(x, y)); }) <= 1e-4);
    CHECK(oracle::gradcheck(y, [&] { return sum(div(x, y)); }) <= 1e-4);
    CHECK(oracle::gradcheck(x, [&] { return sum(relu(x)); }) <= 1e-4);
    CHECK(oracle::gradcheck(x, [&] { return sum(mixq::exp(x)); }) <= 1e-4);
    CHECK(oracle::gradcheck(y, [&] { return sum(mixq::log(y)); }) <= 1e-4);
    CHECK(oracle::gradcheck(x, [&] { return sum(mul(x, x)); }) <= 1e-4);
}

TEST_CASE("deterministic forward results", "[tensor]") {
    auto run = [] {
        Rng rng = make_rng(123);
        Tensor a = Tensor::randn({8, 8}, rng);
        Tensor b = Tensor::randn({8, 8}, rng);
        return sum(matmul(relu(a), b)).item();
    };
    const double first = run();
    for (int i = 0; i < 3; ++i) CHECK(run() == first);
}

TEST_CASE("adam optimizer", "[tensor]") {
    SECTION("zero gradient leaves parameters unchanged") {
        Tensor p = Tensor::from_values({2}, {1.0, -2.0}, true);
        p.grad_mut();  // zero gradient present
        Adam opt(0.1);
        opt.step({p});
        CHECK(p.values() == std::vector<double>{1.0, -2.0});
    }

    SECTION("one step matches the hand-executed recurrence") {
        Tensor p = Tensor::from_values({1}, {1.0}, true);
        p.grad_mut()[0] = 0.5;
        const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        Adam opt(lr, b1, b2, eps);
        opt.step({p});

        const double m = (1 - b1) * 0.5;
        const double v = (1 - b2) * 0.25;
        const double mhat = m / (1 - b1);
        const double vhat = v / (1 - b2);
        const double expected = 1.0 - lr * mhat / (std::sqrt(vhat) + eps);
        CHECK_THAT(p.values()[0], Catch::Matchers::WithinAbs(expected, 1e-15));
    }

    SECTION("loss on a convex quadratic decreases over 100 steps") {
        Tensor p = Tensor::from_values({3}, {3.0, -4.0, 2.5}, true);
        Adam opt(0.05);
        double first = 0.0, last = 0.0;
        for (int step = 0; step < 100; ++step) {
            Adam::zero_grad({p});
            Tensor loss = sum(mul(p, p));
            if (step == 0) first = loss.item();
            last = loss.item();
            backward(loss);
            opt.step({p});
        }
        CHECK(last < first);
        CHECK(last < 0.1 * first);
    }
}
