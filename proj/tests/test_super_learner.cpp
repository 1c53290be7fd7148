#include <catch2/catch_amalgamated.hpp>

#include "acekit/super_learner.hpp"

using namespace acekit;
using Catch::Matchers::WithinAbs;

namespace {

DesignMatrix noise_design(Eigen::Index n, Eigen::Index p, RngStream& rng) {
    Eigen::MatrixXd m(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) m(i, j) = rng.normal();
    return make_design(m);
}

}  // namespace

TEST_CASE("library composition and validation", "[superlearner]") {
    const Library red = reduced_library();
    const Library full = full_library();
    REQUIRE(red.learners.size() == 6);
    REQUIRE(full.learners.size() == 8);
    // reduced is a prefix of full
    for (std::size_t i = 0; i < red.learners.size(); ++i)
        REQUIRE(red.learners[i].name() == full.learners[i].name());
    red.validate();
    full.validate();

    Library dup = red;
    dup.learners.push_back(red.learners[0]);
    REQUIRE_THROWS_AS(dup.validate(), ValidationError);
    Library empty;
    REQUIRE_THROWS_AS(empty.validate(), ValidationError);

    const Library parsed = library_from_json(nlohmann::json("full"));
    REQUIRE(parsed.learners.size() == 8);
    const Library round = library_from_json(to_json(red));
    REQUIRE(round.learners.size() == red.learners.size());
}

TEST_CASE("cv matrix holds complement-mean predictions for mean-only", "[superlearner]") {
    Library lib;
    lib.learners.push_back({.kind = LearnerKind::kMeanOnly});
    Eigen::VectorXd target(4);
    target << 1, 1, 3, 3;
    RngStream rng(41, 0);
    DesignMatrix d = noise_design(4, 1, rng);
    RngStream cvr = rng.derive(1);
    const CvPredictionMatrix cv =
        cv_prediction_matrix(lib, d, target, Task::kRegression, 2, cvr);
    REQUIRE(cv.effective_V == 2);
    for (int i = 0; i < 4; ++i) {
        const int k = cv.folds.assignment[static_cast<std::size_t>(i)];
        double sum = 0.0;
        int count = 0;
        for (int j = 0; j < 4; ++j)
            if (cv.folds.assignment[static_cast<std::size_t>(j)] != k) {
                sum += target[j];
                ++count;
            }
        REQUIRE_THAT(cv.Z(i, 0), WithinAbs(sum / count, 1e-12));
    }
}

TEST_CASE("perturbing a record leaves its own fold's rows unchanged", "[superlearner]") {
    Library lib;
    lib.learners.push_back({.kind = LearnerKind::kMeanOnly});
    lib.learners.push_back({.kind = LearnerKind::kGlmMain});
    RngStream rng(42, 0);
    DesignMatrix d = noise_design(30, 2, rng);
    Eigen::VectorXd target(30);
    for (Eigen::Index i = 0; i < 30; ++i) target[i] = d.values(i, 0) + 0.2 * rng.normal();

    RngStream r1 = rng_stream(5, 5);
    RngStream r2 = rng_stream(5, 5);
    const CvPredictionMatrix base =
        cv_prediction_matrix(lib, d, target, Task::kRegression, 5, r1);
    Eigen::VectorXd poisoned = target;
    const int i = 13;
    poisoned[i] += 10.0;
    const CvPredictionMatrix mod =
        cv_prediction_matrix(lib, d, poisoned, Task::kRegression, 5, r2);

    const int ki = base.folds.assignment[static_cast<std::size_t>(i)];
    bool any_changed = false;
    for (int r = 0; r < 30; ++r) {
        if (base.folds.assignment[static_cast<std::size_t>(r)] == ki) {
            REQUIRE(base.Z(r, 0) == mod.Z(r, 0));
            REQUIRE(base.Z(r, 1) == mod.Z(r, 1));
        } else if (base.Z(r, 1) != mod.Z(r, 1)) {
            any_changed = true;
        }
    }
    REQUIRE(any_changed);
}

TEST_CASE("probability-task cv predictions stay inside (0,1)", "[superlearner]") {
    Library lib;
    lib.learners.push_back({.kind = LearnerKind::kGlmMain});
    lib.learners.push_back({.kind = LearnerKind::kMeanOnly});
    RngStream rng(43, 0);
    DesignMatrix d = noise_design(60, 2, rng);
    Eigen::VectorXd target(60);
    for (Eigen::Index i = 0; i < 60; ++i)
        target[i] = d.values(i, 0) > -2.0 && rng.bernoulli(expit(d.values(i, 0))) ? 1.0 : 0.0;
    RngStream cvr = rng.derive(9);
    const CvPredictionMatrix cv =
        cv_prediction_matrix(lib, d, target, Task::kProbability, 10, cvr);
    for (Eigen::Index i = 0; i < 60; ++i)
        for (Eigen::Index l = 0; l < 2; ++l) {
            REQUIRE(cv.Z(i, l) > 0.0);
            REQUIRE(cv.Z(i, l) < 1.0);
        }
}

TEST_CASE("V shrinks to the admissible fold count with small classes", "[superlearner]") {
    Library lib;
    lib.learners.push_back({.kind = LearnerKind::kMeanOnly});
    RngStream rng(44, 0);
    DesignMatrix d = noise_design(20, 1, rng);
    Eigen::VectorXd target = Eigen::VectorXd::Zero(20);
    target[3] = 1.0;
    target[11] = 1.0;
    target[17] = 1.0;  // 3 positives
    RngStream cvr = rng.derive(1);
    const CvPredictionMatrix cv =
        cv_prediction_matrix(lib, d, target, Task::kProbability, 10, cvr);
    REQUIRE(cv.effective_V == 3);
}

TEST_CASE("meta weights: two constant learners and the grid oracle", "[superlearner]") {
    RngStream rng(45, 0);
    const Eigen::Index n = 400;
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = 0.3 + rng.normal();
    y.array() -= y.mean() - 0.3;  // force mean exactly 0.3
    CvPredictionMatrix cv;
    cv.task = Task::kRegression;
    cv.Z.resize(n, 2);
    cv.Z.col(0).setZero();
    cv.Z.col(1).setOnes();
    const Eigen::VectorXd w = solve_meta_weights(cv, y);

    // Independent oracle: grid search over the simplex at 1e-4 resolution.
    double best_w2 = 0.0, best_mse = std::numeric_limits<double>::infinity();
    for (int g = 0; g <= 10000; ++g) {
        const double w2 = g * 1e-4;
        const double mse = (y.array() - w2).square().mean();
        if (mse < best_mse) {
            best_mse = mse;
            best_w2 = w2;
        }
    }
    REQUIRE_THAT(best_w2, WithinAbs(0.3, 1e-4 + 1e-9));
    REQUIRE_THAT(w[1], WithinAbs(0.3, 1e-4));
    REQUIRE_THAT(w[0], WithinAbs(0.7, 1e-4));
}

TEST_CASE("meta weights concentrate on an exact predictor", "[superlearner]") {
    RngStream rng(46, 0);
    const Eigen::Index n = 200;
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = rng.normal();
    CvPredictionMatrix cv;
    cv.task = Task::kRegression;
    cv.Z.resize(n, 3);
    cv.Z.col(0) = y;
    for (Eigen::Index i = 0; i < n; ++i) {
        cv.Z(i, 1) = y[i] + rng.normal();
        cv.Z(i, 2) = 0.5 * y[i];
    }
    const Eigen::VectorXd w = solve_meta_weights(cv, y);
    REQUIRE_THAT(w[0], WithinAbs(1.0, 1e-6));
}

TEST_CASE("meta weights live on the simplex and beat the best single learner",
          "[superlearner]") {
    RngStream rng(47, 0);
    for (int rep = 0; rep < 25; ++rep) {
        const Eigen::Index n = 150;
        const Eigen::Index L = 2 + static_cast<Eigen::Index>(rng.uniform_int(5));
        const Task task = rep % 2 == 0 ? Task::kRegression : Task::kProbability;
        CvPredictionMatrix cv;
        cv.task = task;
        cv.Z.resize(n, L);
        Eigen::VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i)
            y[i] = task == Task::kRegression ? rng.normal() : (rng.bernoulli(0.4) ? 1.0 : 0.0);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index l = 0; l < L; ++l)
                cv.Z(i, l) = task == Task::kRegression
                                 ? 0.3 * y[i] + rng.normal()
                                 : clamp_probability(0.4 + 0.3 * rng.normal());
        const Eigen::VectorXd w = solve_meta_weights(cv, y);
        REQUIRE_THAT(w.sum(), WithinAbs(1.0, 1e-12));
        for (Eigen::Index l = 0; l < L; ++l) REQUIRE(w[l] >= 0.0);
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index l = 0; l < L; ++l)
            best = std::min(best, cv_risk(cv.Z.col(l), y, task));
        REQUIRE(cv_risk(cv.Z * w, y, task) <= best + 1e-8);
    }
}

TEST_CASE("single-learner ensemble is the learner itself", "[superlearner]") {
    Library lib;
    lib.learners.push_back({.kind = LearnerKind::kMeanOnly});
    RngStream rng(48, 0);
    DesignMatrix d = noise_design(24, 2, rng);
    Eigen::VectorXd y(24);
    for (Eigen::Index i = 0; i < 24; ++i) y[i] = rng.normal();
    const SlFit fit = fit_super_learner(lib, d, y, Task::kRegression, 4, rng.derive(3));
    REQUIRE(fit.weights.size() == 1);
    REQUIRE(fit.weights[0] == 1.0);
    const Eigen::VectorXd ens = sl_predict(fit, d);
    const Eigen::VectorXd single = fit.refits[0].predict(d);
    REQUIRE((ens - single).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("glm dominates mean-only on noise-free linear data", "[superlearner]") {
    Library lib;
    lib.learners.push_back({.kind = LearnerKind::kGlmMain});
    lib.learners.push_back({.kind = LearnerKind::kMeanOnly});
    RngStream rng(49, 0);
    DesignMatrix d = noise_design(100, 2, rng);
    const Eigen::VectorXd y = d.values.col(0) - 2.0 * d.values.col(1);
    RngStream cvr1 = rng_stream(77, 1);
    const CvPredictionMatrix cv = cv_prediction_matrix(lib, d, y, Task::kRegression, 10, cvr1);
    // Oracle: the glm CV risk is essentially zero, mean-only's is not.
    REQUIRE(cv_risk(cv.Z.col(0), y, Task::kRegression) < 1e-12);
    REQUIRE(cv_risk(cv.Z.col(1), y, Task::kRegression) > 0.5);
    const SlFit fit = fit_super_learner(lib, d, y, Task::kRegression, 10, rng_stream(77, 1));
    REQUIRE(fit.weights[0] >= 0.99);
}

TEST_CASE("duplicate learners split mass without changing predictions", "[superlearner]") {
    Library one;
    one.learners.push_back({.kind = LearnerKind::kGlmMain});
    Library two = one;
    two.learners.push_back({.kind = LearnerKind::kGlmMain});  // bypasses validate()

    RngStream rng(50, 0);
    DesignMatrix d = noise_design(80, 2, rng);
    Eigen::VectorXd y(80);
    for (Eigen::Index i = 0; i < 80; ++i) y[i] = d.values(i, 0) + 0.3 * rng.normal();
    const SlFit f1 = fit_super_learner(one, d, y, Task::kRegression, 5, rng_stream(9, 9));
    const SlFit f2 = fit_super_learner(two, d, y, Task::kRegression, 5, rng_stream(9, 9));
    const Eigen::VectorXd p1 = sl_predict(f1, d);
    const Eigen::VectorXd p2 = sl_predict(f2, d);
    REQUIRE((p1 - p2).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("ensemble fits are deterministic given the stream", "[superlearner]") {
    Library lib = reduced_library();
    RngStream rng(51, 0);
    DesignMatrix d = noise_design(60, 3, rng);
    Eigen::VectorXd y(60);
    for (Eigen::Index i = 0; i < 60; ++i)
        y[i] = d.values(i, 0) * d.values(i, 1) + rng.normal();
    const SlFit f1 = fit_super_learner(lib, d, y, Task::kRegression, 5, rng_stream(3, 14));
    const SlFit f2 = fit_super_learner(lib, d, y, Task::kRegression, 5, rng_stream(3, 14));
    REQUIRE(f1.weights == f2.weights);
    const Eigen::VectorXd p1 = sl_predict(f1, d);
    const Eigen::VectorXd p2 = sl_predict(f2, d);
    REQUIRE(p1 == p2);
}

TEST_CASE("degenerate targets are rejected", "[superlearner]") {
    Library lib;
    lib.learners.push_back({.kind = LearnerKind::kMeanOnly});
    RngStream rng(52, 0);
    DesignMatrix d = noise_design(10, 1, rng);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(10, 2.0);
    RngStream cvr = rng.derive(1);
    REQUIRE_THROWS_AS(cv_prediction_matrix(lib, d, y, Task::kRegression, 2, cvr),
                      ValidationError);
    Library empty;
    RngStream cvr2 = rng.derive(2);
    Eigen::VectorXd y2(10);
    for (Eigen::Index i = 0; i < 10; ++i) y2[i] = rng.normal();
    REQUIRE_THROWS_AS(cv_prediction_matrix(empty, d, y2, Task::kRegression, 2, cvr2),
                      ValidationError);
}
