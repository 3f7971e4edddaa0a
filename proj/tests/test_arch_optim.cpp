#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "segnas/optim.hpp"

using namespace segnas;

TEST_CASE("gaea step") {
    SECTION("zero gradient leaves theta unchanged") {
        std::vector<double> th{0.25, 0.25, 0.5};
        gaea_step(th, {0.0, 0.0, 0.0}, 0.1);
        REQUIRE(th == std::vector<double>{0.25, 0.25, 0.5});
    }
    SECTION("constant gradient cancels under renormalization") {
        std::vector<double> th{0.2, 0.3, 0.5};
        gaea_step(th, {3.0, 3.0, 3.0}, 0.1);
        REQUIRE(th[0] == Catch::Approx(0.2).margin(1e-12));
        REQUIRE(th[1] == Catch::Approx(0.3).margin(1e-12));
        REQUIRE(th[2] == Catch::Approx(0.5).margin(1e-12));
    }
    SECTION("hand-evaluated two-op step") {
        std::vector<double> th{0.5, 0.5};
        gaea_step(th, {1.0, 0.0}, 0.1);
        const double e = std::exp(-0.1);
        REQUIRE(th[0] == Catch::Approx(e / (1 + e)).margin(1e-12));
        REQUIRE(th[1] == Catch::Approx(1 / (1 + e)).margin(1e-12));
        REQUIRE(th[0] == Catch::Approx(0.47502).margin(1e-5));
        REQUIRE(th[1] == Catch::Approx(0.52498).margin(1e-5));
    }
    SECTION("exact zero with negative gradient stays zero") {
        std::vector<double> th{0.0, 1.0};
        gaea_step(th, {-5.0, 0.0}, 0.1);
        REQUIRE(th[0] == 0.0);
        REQUIRE(th[1] == 1.0);
    }
    SECTION("all-zero row cannot be renormalized") {
        std::vector<double> th{0.0, 0.0};
        std::vector<double> g{1.0, 1.0};
        REQUIRE_THROWS(gaea_step(th, g, 0.1));
    }
    SECTION("eta must be positive") {
        std::vector<double> th{0.5, 0.5};
        std::vector<double> g{1.0, 0.0};
        REQUIRE_THROWS(gaea_step(th, g, 0.0));
    }
}

TEST_CASE("10k random gaea steps never leave the simplex") {
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> gd(-4.0, 4.0);
    std::vector<double> th{0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125};
    std::vector<double> g(th.size());
    for (int it = 0; it < 10000; ++it) {
        for (double& v : g) v = gd(rng);
        gaea_step(th, g, 0.1);
        double sum = 0;
        double mn = 1;
        for (double v : th) {
            sum += v;
            mn = std::min(mn, v);
        }
        REQUIRE(std::abs(sum - 1.0) < 1e-9);
        REQUIRE(mn >= 0.0);
    }
}

TEST_CASE("entropy values") {
    std::vector<double> uniform8(8, 0.125);
    REQUIRE(entropy(uniform8) == Catch::Approx(std::log(8.0)).margin(1e-12));
    REQUIRE(entropy(std::vector<double>{0.0, 1.0, 0.0}) == 0.0);
    REQUIRE(entropy(std::vector<double>{0.5, 0.5, 0.0, 0.0}) ==
            Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("alpha update gate") {
    REQUIRE_FALSE(arch_update_gate(0, 15));
    REQUIRE_FALSE(arch_update_gate(14, 15));
    REQUIRE(arch_update_gate(15, 15));
    REQUIRE(arch_update_gate(0, 0));
    REQUIRE(arch_update_gate(999, 0));
}

TEST_CASE("softmax-logit baseline step") {
    SECTION("zero gradient is a no-op") {
        std::vector<double> a{0.3, -0.3};
        softmax_alpha_step(a, {0.0, 0.0}, 0.1);
        REQUIRE(a == std::vector<double>{0.3, -0.3});
    }
    SECTION("one explicit step") {
        std::vector<double> a{0.0, 0.0};
        softmax_alpha_step(a, {1.0, -1.0}, 0.1);
        REQUIRE(a[0] == Catch::Approx(-0.1));
        REQUIRE(a[1] == Catch::Approx(0.1));
    }
    SECTION("lr must be positive") {
        std::vector<double> a{0.0};
        std::vector<double> g{1.0};
        REQUIRE_THROWS(softmax_alpha_step(a, g, 0.0));
    }
}

namespace {

std::vector<double> softmax(const std::vector<double>& a) {
    double mx = a[0];
    for (double v : a) mx = std::max(mx, v);
    std::vector<double> p(a.size());
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (p[i] = std::exp(a[i] - mx));
    for (double& v : p) v /= s;
    return p;
}

}  // namespace

// Toy linear objective f(theta) = theta . c with c = [1, 0]: the minimizer is
// the one-hot [0, 1]. Gradient w.r.t. theta is c; w.r.t. logits it is the
// usual softmax Jacobian product.
TEST_CASE("gaea converges on the toy objective and beats the logit baseline") {
    const std::vector<double> c{1.0, 0.0};
    const double eta = 0.1;
    const int steps = 100;

    std::vector<double> th{0.5, 0.5};
    double prev_entropy = entropy(th);
    bool monotone = true;
    for (int s = 0; s < steps; ++s) {
        gaea_step(th, c, eta);
        const double h = entropy(th);
        monotone = monotone && (h <= prev_entropy + 1e-12);
        prev_entropy = h;
    }
    REQUIRE(monotone);
    REQUIRE(th[1] > 0.99);

    std::vector<double> a{0.0, 0.0};
    double prev_h2 = entropy(softmax(a));
    bool monotone2 = true;
    for (int s = 0; s < steps; ++s) {
        auto p = softmax(a);
        // chain rule through softmax: dL/da_i = p_i (c_i - p.c)
        double dot = p[0] * c[0] + p[1] * c[1];
        std::vector<double> g(2);
        for (int i = 0; i < 2; ++i) g[i] = p[i] * (c[i] - dot);
        softmax_alpha_step(a, g, eta);
        const double h = entropy(softmax(a));
        monotone2 = monotone2 && (h <= prev_h2 + 1e-12);
        prev_h2 = h;
    }
    REQUIRE(monotone2);
    // same step budget and learning rate: the simplex update commits faster
    REQUIRE(entropy(th) < entropy(softmax(a)));
}

TEST_CASE("entropy stats aggregate rows") {
    std::vector<std::vector<double>> rows{{0.5, 0.5}, {1.0, 0.0}};
    auto s = entropy_stats(rows);
    REQUIRE(s.min == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(s.max == Catch::Approx(std::log(2.0)));
    REQUIRE(s.mean == Catch::Approx(std::log(2.0) / 2));
}
