#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "acekit/dgm.hpp"

using namespace acekit;
using Catch::Matchers::WithinAbs;

namespace {

std::string config_path(const std::string& name) {
    return std::string(ACEKIT_CONFIG_DIR) + "/" + name + ".json";
}

// Frozen from the empirical oracle at N=5e6 (seed 101), cross-checked at
// N=1e7 (seed 555): 0.659617 vs 0.659597, well inside the combined MCSE.
constexpr double kComplex1aTruth = 0.6596171758;

}  // namespace

TEST_CASE("simple-1 hits the designed prevalence and outcome mean", "[dgm]") {
    const DgmSpec spec = load_dgm(config_path("simple-1"));
    REQUIRE(spec.p == 14);
    const Dataset d = generate(spec, 100000, RngStream(7, 0));
    d.validate();
    REQUIRE_THAT(d.X.mean(), WithinAbs(0.25, 0.01));
    REQUIRE(std::fabs(d.Y.mean()) < 0.02);
}

TEST_CASE("all shipped specs generate valid data with mean-zero outcomes", "[dgm]") {
    for (const std::string name :
         {"simple-1", "complex-1a", "complex-1b", "simple-2", "complex-2"}) {
        const DgmSpec spec = load_dgm(config_path(name));
        REQUIRE(spec.p == (name.find("-2") != std::string::npos ? 87 : 14));
        const Dataset d = generate(spec, 50000, RngStream(11, 1));
        d.validate();
        REQUIRE_THAT(d.X.mean(), WithinAbs(0.25, 0.015));
        REQUIRE(std::fabs(d.Y.mean()) < 0.03);
    }
}

TEST_CASE("confounder draws ignore exposure and outcome parameters", "[dgm]") {
    const DgmSpec spec = load_dgm(config_path("complex-1a"));
    DgmSpec ablated = spec;
    ablated.beta = 0.0;
    ablated.exposure.intercept += 2.0;
    ablated.outcome.intercept -= 1.0;
    const Dataset a = generate(spec, 500, RngStream(3, 3));
    const Dataset b = generate(ablated, 500, RngStream(3, 3));
    REQUIRE(a.W == b.W);
    REQUIRE(a.X != b.X);
}

TEST_CASE("null effect gives a null truth", "[dgm]") {
    DgmSpec spec = load_dgm(config_path("simple-1"));
    spec.beta = 0.0;
    const TruthRecord t = true_ace(spec, 1000000, RngStream(13, 0));
    REQUIRE(t.psi == 0.0);  // no effect modification: difference is identically beta
    REQUIRE(t.mcse == 0.0);

    const Dataset d = generate(spec, 50000, RngStream(13, 1));
    double m1 = 0, m0 = 0;
    int n1 = 0, n0 = 0;
    for (Eigen::Index i = 0; i < d.n(); ++i) {
        if (d.X[i] == 1.0) {
            m1 += d.Y[i];
            ++n1;
        } else {
            m0 += d.Y[i];
            ++n0;
        }
    }
    // Confounded crude difference stays bounded but the causal null holds;
    // the crude gap reflects confounding only.
    REQUIRE(std::fabs(m1 / n1 - m0 / n0) < 1.0);
}

TEST_CASE("truth equals beta exactly for no-interaction specs", "[dgm]") {
    const DgmSpec spec = load_dgm(config_path("simple-1"));
    const TruthRecord t = true_ace(spec, 1000000, RngStream(17, 0));
    REQUIRE(t.psi == spec.beta);
    REQUIRE(t.mcse == 0.0);
}

TEST_CASE("truth scales linearly in beta for no-interaction specs", "[dgm]") {
    DgmSpec spec = load_dgm(config_path("simple-2"));
    spec.beta = 0.3;
    const TruthRecord t1 = true_ace(spec, 1000000, RngStream(19, 0));
    spec.beta = 0.9;
    const TruthRecord t3 = true_ace(spec, 1000000, RngStream(19, 0));
    REQUIRE_THAT(t3.psi, WithinAbs(3.0 * t1.psi, 3.0 * (t1.mcse + t3.mcse) + 1e-12));
}

TEST_CASE("complex-1a truth matches the frozen oracle value", "[dgm]") {
    const DgmSpec spec = load_dgm(config_path("complex-1a"));
    const TruthRecord t = true_ace(spec, 1000000, RngStream(23, 0));
    REQUIRE_THAT(t.psi, WithinAbs(kComplex1aTruth, 4.0 * t.mcse));
    REQUIRE(t.mcse > 0.0);  // effect modification present
    REQUIRE(t.oracle_n == 1000000);
}

TEST_CASE("truth oracle rejects undersized samples", "[dgm]") {
    const DgmSpec spec = load_dgm(config_path("simple-1"));
    REQUIRE_THROWS_AS(true_ace(spec, 1000, RngStream(1, 0)), ValidationError);
}

TEST_CASE("prevalence is stable across replications", "[dgm]") {
    const DgmSpec spec = load_dgm(config_path("simple-1"));
    double acc = 0.0;
    for (int r = 0; r < 100; ++r) {
        const Dataset d = generate(spec, 2000, RngStream(29, static_cast<std::uint64_t>(r)));
        acc += d.X.mean();
    }
    REQUIRE_THAT(acc / 100.0, WithinAbs(0.25, 0.01));
}

TEST_CASE("metabolite block matches its factor-implied correlation", "[dgm]") {
    const DgmSpec spec = load_dgm(config_path("simple-2"));
    REQUIRE(spec.metabolites.has_value());
    const auto& mb = *spec.metabolites;
    const Dataset d = generate(spec, 20000, RngStream(31, 0));

    // Implied mean off-diagonal correlation from the factor structure
    // (background dependence is configured small and ignored here).
    const double l2 = mb.loading * mb.loading;
    const double var = l2 + mb.noise_sd * mb.noise_sd;
    const double within = l2 / var;
    long within_pairs = 0, total_pairs = 0;
    for (int a = 0; a < mb.count; ++a)
        for (int b = a + 1; b < mb.count; ++b) {
            ++total_pairs;
            if (a % mb.factors == b % mb.factors) ++within_pairs;
        }
    const double implied =
        within * static_cast<double>(within_pairs) / static_cast<double>(total_pairs);

    const Eigen::MatrixXd block =
        d.W.rightCols(mb.count);
    Eigen::MatrixXd centered = block.rowwise() - block.colwise().mean();
    Eigen::MatrixXd cov = centered.transpose() * centered / (d.n() - 1.0);
    double acc = 0.0;
    for (int a = 0; a < mb.count; ++a)
        for (int b = a + 1; b < mb.count; ++b)
            acc += cov(a, b) / std::sqrt(cov(a, a) * cov(b, b));
    const double empirical = acc / static_cast<double>(total_pairs);
    REQUIRE_THAT(empirical, WithinAbs(implied, 0.05));
}

TEST_CASE("generation is deterministic and n-prefix-stable", "[dgm]") {
    const DgmSpec spec = load_dgm(config_path("simple-1"));
    const Dataset a = generate(spec, 200, RngStream(37, 5));
    const Dataset b = generate(spec, 200, RngStream(37, 5));
    REQUIRE(a.W == b.W);
    REQUIRE(a.X == b.X);
    REQUIRE(a.Y == b.Y);
}

TEST_CASE("calibration input contracts", "[dgm]") {
    const DgmSpec spec = load_dgm(config_path("simple-1"));
    REQUIRE_THROWS_AS(calibrate_effect(spec, 200, 0.8, 100, RngStream(1, 0)),
                      ValidationError);
    REQUIRE_THROWS_AS(calibrate_effect(spec, 200, 1.2, 300, RngStream(1, 0)),
                      ValidationError);
}

TEST_CASE("intercept recentering hits its targets", "[dgm]") {
    DgmSpec spec = load_dgm(config_path("simple-1"));
    spec.beta = 1.3;  // perturb, then re-center
    spec.exposure.intercept = 0.0;
    recenter_exposure_intercept(spec, 0.25, RngStream(41, 0));
    recenter_outcome_intercept(spec, RngStream(41, 1));
    const Dataset d = generate(spec, 100000, RngStream(41, 2));
    REQUIRE_THAT(d.X.mean(), WithinAbs(0.25, 0.01));
    REQUIRE(std::fabs(d.Y.mean()) < 0.025);
}
