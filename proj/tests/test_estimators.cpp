#include <catch2/catch_amalgamated.hpp>

#include "acekit/estimators.hpp"
#include "acekit/rng.hpp"

using namespace acekit;
using Catch::Matchers::WithinAbs;

namespace {

// Test-side oracle: one-parameter offset logistic MLE by coarse grid
// search plus Newton refinement, independent of the library fitter.
double oracle_fluctuation(const Eigen::VectorXd& y, const Eigen::VectorXd& h,
                          const Eigen::VectorXd& offset) {
    auto nll = [&](double e) {
        double v = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double mu =
                std::min(1.0 - 1e-12, std::max(1e-12, expit(offset[i] + e * h[i])));
            v -= y[i] * std::log(mu) + (1.0 - y[i]) * std::log(1.0 - mu);
        }
        return v;
    };
    double best = 0.0, best_v = nll(0.0);
    for (int g = -30000; g <= 30000; ++g) {
        const double e = g * 1e-4;
        const double v = nll(e);
        if (v < best_v) {
            best_v = v;
            best = e;
        }
    }
    double eps = best;
    for (int it = 0; it < 200; ++it) {
        double score = 0.0, info = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double mu = expit(offset[i] + eps * h[i]);
            score += h[i] * (y[i] - mu);
            info += h[i] * h[i] * mu * (1.0 - mu);
        }
        const double step = score / info;
        eps += step;
        if (std::fabs(step) < 1e-15) break;
    }
    return eps;
}

NuisancePredictions make_nuis(const Eigen::VectorXd& e1, const Eigen::VectorXd& e0,
                              const Eigen::VectorXd& ps) {
    NuisancePredictions n;
    n.E1 = e1;
    n.E0 = e0;
    n.PS = ps;
    return n;
}

}  // namespace

TEST_CASE("propensity truncation clamps into the percentile band", "[estimators]") {
    Eigen::VectorXd constant = Eigen::VectorXd::Constant(8, 0.5);
    auto [t1, b1] = truncate_propensity(constant);
    REQUIRE(b1.first == 0.5);
    REQUIRE(b1.second == 0.5);
    REQUIRE(t1 == constant);

    Eigen::VectorXd ps(5);
    ps << 0.01, 0.2, 0.5, 0.8, 0.99;
    auto [t2, b2] = truncate_propensity(ps);
    REQUIRE_THAT(t2.minCoeff(), WithinAbs(b2.first, 1e-15));
    REQUIRE_THAT(t2.maxCoeff(), WithinAbs(b2.second, 1e-15));
    for (Eigen::Index i = 0; i < 5; ++i) {
        REQUIRE(t2[i] >= b2.first);
        REQUIRE(t2[i] <= b2.second);
    }

    // 100-point grid: exactly the lowest 5 and highest 5 values move.
    Eigen::VectorXd grid(100);
    for (int i = 0; i < 100; ++i) grid[i] = 0.005 + 0.01 * i;
    auto [t3, b3] = truncate_propensity(grid);
    REQUIRE_THAT(b3.first, WithinAbs(0.0545, 1e-12));
    REQUIRE_THAT(b3.second, WithinAbs(0.9455, 1e-12));
    int altered = 0;
    for (int i = 0; i < 100; ++i)
        if (t3[i] != grid[i]) ++altered;
    REQUIRE(altered == 10);
    for (int i = 0; i < 5; ++i) REQUIRE(t3[i] == b3.first);
    for (int i = 95; i < 100; ++i) REQUIRE(t3[i] == b3.second);
}

TEST_CASE("gcomp means the predicted differences", "[estimators]") {
    Eigen::VectorXd e1(2), e0(2);
    e1 << 1, 3;
    e0 << 0, 1;
    const EffectEstimate est = gcomp_estimate(e1, e0);
    REQUIRE_THAT(est.psi, WithinAbs(1.5, 1e-15));
    REQUIRE_FALSE(est.se.has_value());
    REQUIRE(gcomp_estimate(e0, e0).psi == 0.0);
}

TEST_CASE("aipw matches the n=2 worked examples", "[estimators]") {
    Eigen::VectorXd X(2), Y(2);
    X << 1, 0;
    Y << 1, 0;
    const auto nuis =
        make_nuis(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2),
                  Eigen::VectorXd::Constant(2, 0.5));
    const EffectEstimate a = aipw_estimate(X, Y, nuis);
    REQUIRE_THAT(a.psi, WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(*a.se, WithinAbs(0.0, 1e-12));

    Eigen::VectorXd Y2(2);
    Y2 << 2, 1;
    const EffectEstimate b = aipw_estimate(X, Y2, nuis);
    // phi = (3, -1): psi 1, variance 8, se sqrt(8/2) = 2.
    REQUIRE_THAT(b.psi, WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(b.diagnostics.eif_variance, WithinAbs(8.0, 1e-12));
    REQUIRE_THAT(*b.se, WithinAbs(2.0, 1e-12));
    REQUIRE_THAT(b.ci->first, WithinAbs(1.0 - 1.959964 * 2.0, 1e-5));
}

TEST_CASE("aipw reduces to ipw when outcome predictions vanish", "[estimators]") {
    RngStream rng(61, 0);
    const Eigen::Index n = 50;
    Eigen::VectorXd X(n), Y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
        Y[i] = rng.normal();
    }
    const double p = 0.4;
    const auto nuis = make_nuis(Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n),
                                Eigen::VectorXd::Constant(n, p));
    const EffectEstimate est = aipw_estimate(X, Y, nuis);
    double ipw = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        ipw += X[i] * Y[i] / p - (1.0 - X[i]) * Y[i] / (1.0 - p);
    REQUIRE_THAT(est.psi, WithinAbs(ipw / n, 1e-12));
}

TEST_CASE("eif variance equals the textbook sample variance", "[estimators]") {
    RngStream rng(62, 0);
    const Eigen::Index n = 40;
    Eigen::VectorXd X(n), Y(n), e1(n), e0(n), ps(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        Y[i] = rng.normal();
        e1[i] = 0.3 * rng.normal();
        e0[i] = 0.3 * rng.normal();
        ps[i] = 0.2 + 0.6 * rng.uniform();
    }
    const EffectEstimate est = aipw_estimate(X, Y, make_nuis(e1, e0, ps));
    // Oracle: direct two-pass variance of the contributions.
    std::vector<double> phi(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        phi[static_cast<std::size_t>(i)] = e1[i] - e0[i] + X[i] * (Y[i] - e1[i]) / ps[i] -
                                           (1.0 - X[i]) * (Y[i] - e0[i]) / (1.0 - ps[i]);
    REQUIRE_THAT(est.diagnostics.eif_variance, WithinAbs(sample_variance(phi), 1e-10));
    REQUIRE_THAT(*est.se, WithinAbs(std::sqrt(sample_variance(phi) / n), 1e-10));
}

TEST_CASE("wald intervals", "[estimators]") {
    const auto [lo, hi] = wald_ci(1.0, 0.5, 0.95);
    REQUIRE_THAT(lo, WithinAbs(0.020018, 1e-6));
    REQUIRE_THAT(hi, WithinAbs(1.979982, 1e-6));
    const auto [l2, h2] = wald_ci(1.0, 0.0, 0.95);
    REQUIRE(l2 == 1.0);
    REQUIRE(h2 == 1.0);
    REQUIRE_THROWS_AS(wald_ci(0.0, 1.0, 1.0), ValidationError);
    REQUIRE_THROWS_AS(wald_ci(0.0, -1.0, 0.95), ValidationError);
}

TEST_CASE("tmle four-record worked example", "[estimators]") {
    Eigen::VectorXd X(4), Y(4);
    X << 1, 1, 0, 0;
    Y << 1, 0, 1, 0;
    const auto nuis =
        make_nuis(Eigen::VectorXd::Constant(4, 0.6), Eigen::VectorXd::Constant(4, 0.4),
                  Eigen::VectorXd::Constant(4, 0.5));
    const TargetingResult t = tmle_target(X, Y, nuis);
    // Frozen from the independent grid+Newton script: eps = -log(1.5)/2.
    REQUIRE_THAT(t.epsilon, WithinAbs(-0.2027325540540822, 1e-8));
    REQUIRE_THAT(t.E1star.mean(), WithinAbs(0.5, 1e-10));
    REQUIRE_THAT(t.E0star.mean(), WithinAbs(0.5, 1e-10));

    // Recompute via the in-test oracle.
    Eigen::VectorXd h(4), offset(4);
    for (int i = 0; i < 4; ++i) {
        h[i] = X[i] / 0.5 - (1 - X[i]) / 0.5;
        offset[i] = logit(X[i] == 1.0 ? 0.6 : 0.4);
    }
    REQUIRE_THAT(t.epsilon, WithinAbs(oracle_fluctuation(Y, h, offset), 1e-8));

    const EffectEstimate est = tmle_estimate(X, Y, nuis);
    REQUIRE_THAT(est.psi, WithinAbs(0.0, 1e-8));
}

TEST_CASE("perfect initial fit needs no fluctuation", "[estimators]") {
    Eigen::VectorXd X(6), Y(6);
    X << 1, 1, 0, 0, 1, 0;
    Y << 0.3, 0.7, 0.45, 0.55, 0.9, 0.1;  // range [0.1, 0.9]
    Eigen::VectorXd e1(6), e0(6);
    e1 << 0.3, 0.7, 0.6, 0.5, 0.9, 0.4;  // matches Y where X=1
    e0 << 0.2, 0.5, 0.45, 0.55, 0.3, 0.1;  // matches Y where X=0
    const auto nuis = make_nuis(e1, e0, Eigen::VectorXd::Constant(6, 0.5));
    const TargetingResult t = tmle_target(X, Y, nuis);
    // The min/max records' own predictions sit on the scaling boundary and
    // pick up the pinned [0.005, 0.995] clamp; the fluctuation itself stays
    // within the clamp slack and interior predictions are untouched.
    const double slack = (0.9 - 0.1) * 0.005;
    REQUIRE(std::fabs(t.epsilon) < 0.05);
    for (int i = 0; i < 6; ++i) {
        REQUIRE_THAT(t.E1star[i], WithinAbs(e1[i], slack + 0.01));
        REQUIRE_THAT(t.E0star[i], WithinAbs(e0[i], slack + 0.01));
    }
    // The score equation is still solved exactly at the fitted epsilon.
    const EffectEstimate est = tmle_estimate(X, Y, nuis);
    REQUIRE(std::fabs(est.diagnostics.eif_mean_centered) < 1e-9);
}

TEST_CASE("targeted predictions respect the outcome range", "[estimators]") {
    RngStream rng(63, 0);
    for (int rep = 0; rep < 30; ++rep) {
        const Eigen::Index n = 30 + static_cast<Eigen::Index>(rng.uniform_int(50));
        Eigen::VectorXd X(n), Y(n), e1(n), e0(n), ps(n);
        int n1 = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            X[i] = rng.bernoulli(0.35) ? 1.0 : 0.0;
            n1 += static_cast<int>(X[i]);
            Y[i] = 3.0 * rng.normal() + 1.0;
            e1[i] = 4.0 * rng.normal();  // deliberately out-of-range initial fits
            e0[i] = 4.0 * rng.normal();
            ps[i] = 0.05 + 0.9 * rng.uniform();
        }
        if (n1 < 2 || n - n1 < 2) continue;
        const EffectEstimate est = tmle_estimate(X, Y, make_nuis(e1, e0, ps));
        const double a = Y.minCoeff(), b = Y.maxCoeff();
        REQUIRE(*est.diagnostics.targeted_mean1 >= a);
        REQUIRE(*est.diagnostics.targeted_mean1 <= b);
        REQUIRE(*est.diagnostics.targeted_mean0 >= a);
        REQUIRE(*est.diagnostics.targeted_mean0 <= b);
        REQUIRE(est.psi >= a - b);
        REQUIRE(est.psi <= b - a);
        // Score equation solved by the targeting step.
        REQUIRE(std::fabs(est.diagnostics.eif_mean_centered) < 1e-8);
    }
}

TEST_CASE("tmle is affine-equivariant in the outcome", "[estimators]") {
    RngStream rng(64, 0);
    const Eigen::Index n = 60;
    Eigen::VectorXd X(n), Y(n), e1(n), e0(n), ps(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
        Y[i] = rng.normal() + 0.5 * X[i];
        e1[i] = 0.4 + 0.3 * rng.normal();
        e0[i] = 0.3 * rng.normal();
        ps[i] = 0.2 + 0.6 * rng.uniform();
    }
    const EffectEstimate base = tmle_estimate(X, Y, make_nuis(e1, e0, ps));
    for (const double c : {2.5, -1.5}) {
        const double d = 0.7;
        const Eigen::VectorXd Yt = c * Y.array() + d;
        const Eigen::VectorXd e1t = c * e1.array() + d;
        const Eigen::VectorXd e0t = c * e0.array() + d;
        const EffectEstimate scaled = tmle_estimate(X, Yt, make_nuis(e1t, e0t, ps));
        REQUIRE_THAT(scaled.psi, WithinAbs(c * base.psi, 1e-6));
    }
}

TEST_CASE("constant outcomes cannot be targeted", "[estimators]") {
    Eigen::VectorXd X(4), Y = Eigen::VectorXd::Constant(4, 1.0);
    X << 1, 1, 0, 0;
    const auto nuis =
        make_nuis(Eigen::VectorXd::Constant(4, 0.6), Eigen::VectorXd::Constant(4, 0.4),
                  Eigen::VectorXd::Constant(4, 0.5));
    REQUIRE_THROWS_AS(tmle_target(X, Y, nuis), ValidationError);
}

TEST_CASE("effect estimates serialize with the documented keys", "[estimators]") {
    Eigen::VectorXd X(4), Y(4);
    X << 1, 1, 0, 0;
    Y << 1, 0, 1, 0;
    const auto nuis =
        make_nuis(Eigen::VectorXd::Constant(4, 0.6), Eigen::VectorXd::Constant(4, 0.4),
                  Eigen::VectorXd::Constant(4, 0.5));
    EffectEstimate est = tmle_estimate(X, Y, nuis);
    est.diagnostics.sl_weights_outcome.push_back(Eigen::VectorXd::Ones(1));
    const nlohmann::json j = to_json(est);
    for (const char* key : {"method", "psi", "se", "ci", "n", "K", "truncation_bounds",
                            "sl_weights_outcome", "sl_weights_exposure"})
        REQUIRE(j.contains(key));
    REQUIRE(j["method"] == "TMLE");
}
