#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "acekit/errors.hpp"
#include "acekit/folds.hpp"
#include "acekit/learners.hpp"
#include "acekit/rng.hpp"
#include "acekit/stats.hpp"

namespace acekit {

struct Library {
    std::string label = "custom";
    std::vector<LearnerSpec> learners;

    void validate() const {
        if (learners.empty()) throw ValidationError("library: empty");
        std::set<std::string> seen;
        for (const auto& l : learners) {
            l.validate();
            if (!seen.insert(l.name()).second)
                throw ValidationError("library: duplicate learner " + l.name());
        }
    }
};

// Parametric learners only: GLM, pairwise-interaction GLM, ridge GLM,
// spline GLM and two elastic nets.
inline Library reduced_library() {
    Library lib;
    lib.label = "reduced";
    lib.learners.push_back({.kind = LearnerKind::kGlmMain});
    lib.learners.push_back({.kind = LearnerKind::kGlmInteractions});
    lib.learners.push_back({.kind = LearnerKind::kRidgeGlm});
    lib.learners.push_back({.kind = LearnerKind::kSplineGlm});
    LearnerSpec lasso;
    lasso.kind = LearnerKind::kElasticNet;
    lasso.alpha = 1.0;
    lib.learners.push_back(lasso);
    LearnerSpec enet;
    enet.kind = LearnerKind::kElasticNet;
    enet.alpha = 0.5;
    lib.learners.push_back(enet);
    return lib;
}

// Reduced library plus the flexible non-parametric learners.
inline Library full_library() {
    Library lib = reduced_library();
    lib.label = "full";
    lib.learners.push_back({.kind = LearnerKind::kRandomForest});
    lib.learners.push_back({.kind = LearnerKind::kGradientBoosting});
    return lib;
}

inline Library library_from_json(const nlohmann::json& j) {
    Library lib;
    if (j.is_string()) {
        const std::string name = j.get<std::string>();
        if (name == "reduced") return reduced_library();
        if (name == "full") return full_library();
        throw ValidationError("library: unknown label " + name);
    }
    if (j.contains("label")) lib.label = j.at("label").get<std::string>();
    for (const auto& e : j.at("learners")) lib.learners.push_back(learner_spec_from_json(e));
    lib.validate();
    return lib;
}

inline nlohmann::json to_json(const Library& lib) {
    nlohmann::json j;
    j["label"] = lib.label;
    j["learners"] = nlohmann::json::array();
    for (const auto& l : lib.learners) j["learners"].push_back(to_json(l));
    return j;
}

// Out-of-fold prediction matrix: Z(i, l) comes from learner l fitted
// without record i's fold.
struct CvPredictionMatrix {
    Eigen::MatrixXd Z;
    FoldPlan folds;
    Task task = Task::kRegression;
    int effective_V = 0;
};

inline double cv_risk(const Eigen::VectorXd& pred, const Eigen::VectorXd& target, Task task) {
    const Eigen::Index n = target.size();
    double risk = 0.0;
    if (task == Task::kRegression) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = target[i] - pred[i];
            risk += d * d;
        }
    } else {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double p = clamp_probability(pred[i], 1e-12);
            risk -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
        }
    }
    return risk / static_cast<double>(n);
}

namespace detail {

inline DesignMatrix subset_design(const DesignMatrix& d, const std::vector<int>& rows) {
    DesignMatrix out;
    out.values.resize(static_cast<Eigen::Index>(rows.size()), d.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.values.row(static_cast<Eigen::Index>(i)) = d.values.row(rows[i]);
    out.provenance = d.provenance;
    return out;
}

inline Eigen::VectorXd subset_vector(const Eigen::VectorXd& v, const std::vector<int>& rows) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
    return out;
}

// Euclidean projection onto the probability simplex.
inline Eigen::VectorXd project_simplex(Eigen::VectorXd v) {
    const Eigen::Index L = v.size();
    std::vector<double> u(v.data(), v.data() + L);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double css = 0.0, tau = 0.0;
    int rho = 0;
    for (Eigen::Index k = 0; k < L; ++k) {
        css += u[static_cast<std::size_t>(k)];
        const double t = (css - 1.0) / static_cast<double>(k + 1);
        if (u[static_cast<std::size_t>(k)] - t > 0.0) {
            rho = static_cast<int>(k + 1);
            tau = t;
        }
    }
    (void)rho;
    for (Eigen::Index j = 0; j < L; ++j) v[j] = std::max(0.0, v[j] - tau);
    return v;
}

// Lawson-Hanson non-negative least squares, used to seed the simplex
// search for the regression meta-learner.
inline Eigen::VectorXd nnls(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y) {
    const Eigen::Index L = Z.cols();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(L);
    std::vector<bool> passive(static_cast<std::size_t>(L), false);
    const double tol = 1e-10 * Z.cwiseAbs().maxCoeff() * y.cwiseAbs().maxCoeff();
    for (int iter = 0; iter < 3 * static_cast<int>(L) + 10; ++iter) {
        const Eigen::VectorXd grad = Z.transpose() * (y - Z * w);
        int best = -1;
        double best_g = tol;
        for (Eigen::Index j = 0; j < L; ++j)
            if (!passive[static_cast<std::size_t>(j)] && grad[j] > best_g) {
                best_g = grad[j];
                best = static_cast<int>(j);
            }
        if (best < 0) break;
        passive[static_cast<std::size_t>(best)] = true;
        // Solve restricted LS on the passive set; step back while any
        // passive coefficient goes non-positive.
        for (int inner = 0; inner < 2 * static_cast<int>(L) + 10; ++inner) {
            std::vector<int> ps;
            for (Eigen::Index j = 0; j < L; ++j)
                if (passive[static_cast<std::size_t>(j)]) ps.push_back(static_cast<int>(j));
            Eigen::MatrixXd Zp(Z.rows(), static_cast<Eigen::Index>(ps.size()));
            for (std::size_t k = 0; k < ps.size(); ++k)
                Zp.col(static_cast<Eigen::Index>(k)) = Z.col(ps[k]);
            const Eigen::VectorXd sol =
                Zp.colPivHouseholderQr().solve(y);
            bool all_pos = true;
            for (std::size_t k = 0; k < ps.size(); ++k)
                if (sol[static_cast<Eigen::Index>(k)] <= 0.0) all_pos = false;
            if (all_pos) {
                w.setZero();
                for (std::size_t k = 0; k < ps.size(); ++k)
                    w[ps[k]] = sol[static_cast<Eigen::Index>(k)];
                break;
            }
            double alpha = 1.0;
            for (std::size_t k = 0; k < ps.size(); ++k) {
                const double s = sol[static_cast<Eigen::Index>(k)];
                const double wk = w[ps[k]];
                if (s <= 0.0 && wk - s != 0.0) alpha = std::min(alpha, wk / (wk - s));
            }
            for (std::size_t k = 0; k < ps.size(); ++k) {
                const double s = sol[static_cast<Eigen::Index>(k)];
                w[ps[k]] += alpha * (s - w[ps[k]]);
                if (w[ps[k]] <= 1e-12) {
                    w[ps[k]] = 0.0;
                    passive[static_cast<std::size_t>(ps[k])] = false;
                }
            }
        }
    }
    return w;
}

}  // namespace detail

// Convex meta-weights minimizing the cross-validated risk of the
// combination over the probability simplex. Regression uses MSE with an
// NNLS warm start; the probability task minimizes log-loss. Projected
// gradient with step halving from the best-single-learner vertex keeps
// the solution no worse than any single learner.
inline Eigen::VectorXd solve_meta_weights(const CvPredictionMatrix& cv,
                                          const Eigen::VectorXd& target) {
    const Eigen::MatrixXd& Z = cv.Z;
    if (!Z.allFinite()) throw ValidationError("meta weights: non-finite predictions");
    const Eigen::Index n = Z.rows();
    const Eigen::Index L = Z.cols();
    if (L == 1) return Eigen::VectorXd::Ones(1);

    auto risk_of = [&](const Eigen::VectorXd& w) { return cv_risk(Z * w, target, cv.task); };

    // Start from the lowest-risk vertex.
    Eigen::Index best = 0;
    double best_risk = cv_risk(Z.col(0), target, cv.task);
    for (Eigen::Index l = 1; l < L; ++l) {
        const double r = cv_risk(Z.col(l), target, cv.task);
        if (r < best_risk) {
            best_risk = r;
            best = l;
        }
    }
    Eigen::VectorXd w = Eigen::VectorXd::Zero(L);
    w[best] = 1.0;
    double fw = best_risk;

    if (cv.task == Task::kRegression) {
        Eigen::VectorXd w0 = detail::nnls(Z, target);
        const double s = w0.sum();
        if (s > 0.0) {
            w0 /= s;
            const double r0 = risk_of(w0);
            if (r0 < fw) {
                w = w0;
                fw = r0;
            }
        }
    }

    const double dn = static_cast<double>(n);
    double step = 1.0;
    for (int iter = 0; iter < 10000; ++iter) {
        Eigen::VectorXd grad(L);
        if (cv.task == Task::kRegression) {
            grad = 2.0 * (Z.transpose() * (Z * w - target)) / dn;
        } else {
            const Eigen::VectorXd p = Z * w;
            Eigen::VectorXd g(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double pi = clamp_probability(p[i], 1e-12);
                g[i] = (pi - target[i]) / (pi * (1.0 - pi));
            }
            grad = Z.transpose() * g / dn;
        }
        Eigen::VectorXd w_new;
        double f_new = fw;
        bool improved = false;
        double s = step;
        for (int halve = 0; halve < 60; ++halve) {
            w_new = detail::project_simplex(w - s * grad);
            f_new = risk_of(w_new);
            if (f_new <= fw) {
                improved = true;
                break;
            }
            s *= 0.5;
        }
        if (!improved) break;
        const double move = (w_new - w).cwiseAbs().maxCoeff();
        const double gain = fw - f_new;
        w = w_new;
        fw = f_new;
        step = std::min(s * 2.0, 1e6);
        if (move < 1e-12 && gain < 1e-8 * (std::fabs(fw) + 1e-8)) break;
    }
    // Exact simplex membership.
    w = w.cwiseMax(0.0);
    w /= w.sum();
    return w;
}

// Fitted ensemble: convex weights, per-learner CV risks and learners
// refitted on the full training data.
struct SlFit {
    Eigen::VectorXd weights;
    std::vector<FittedLearner> refits;
    Task task = Task::kRegression;
    Eigen::VectorXd cv_risks;
    double combination_cv_risk = 0.0;
    int effective_V = 0;
    bool v_reduced = false;
};

inline CvPredictionMatrix cv_prediction_matrix(const Library& library,
                                               const DesignMatrix& design,
                                               const Eigen::VectorXd& target, Task task, int V,
                                               RngStream& rng) {
    if (library.learners.empty()) throw ValidationError("super learner: empty library");
    const Eigen::Index n = design.rows();
    if (n != target.size()) throw ValidationError("super learner: row mismatch");
    if (V < 2) throw ValidationError("super learner: V must be at least 2");

    double tmin = target[0], tmax = target[0];
    for (Eigen::Index i = 1; i < n; ++i) {
        tmin = std::min(tmin, target[i]);
        tmax = std::max(tmax, target[i]);
    }
    if (tmin == tmax) throw ValidationError("super learner: degenerate constant target");

    CvPredictionMatrix cv;
    cv.task = task;
    int v_eff = V;
    if (task == Task::kProbability) {
        Eigen::Index n1 = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (target[i] == 1.0) ++n1;
        const int min_class = static_cast<int>(std::min(n1, n - n1));
        v_eff = std::min(v_eff, min_class);
    } else {
        v_eff = std::min<int>(v_eff, static_cast<int>(n));
    }
    if (v_eff < 2) throw ValidationError("super learner: too few records per class for CV");
    cv.effective_V = v_eff;

    RngStream fold_rng = rng.derive(0);
    cv.folds = task == Task::kProbability ? make_stratified_folds(target, v_eff, fold_rng)
                                          : make_plain_folds(n, v_eff, fold_rng);

    const Eigen::Index L = static_cast<Eigen::Index>(library.learners.size());
    cv.Z.resize(n, L);
    for (int k = 0; k < v_eff; ++k) {
        const auto train = cv.folds.complement_indices(k);
        const auto test = cv.folds.fold_indices(k);
        const DesignMatrix dtr = detail::subset_design(design, train);
        const DesignMatrix dte = detail::subset_design(design, test);
        const Eigen::VectorXd ttr = detail::subset_vector(target, train);
        RngStream fold_stream = rng.derive(static_cast<std::uint64_t>(1 + k));
        for (Eigen::Index l = 0; l < L; ++l) {
            const FittedLearner fit =
                fit_learner(library.learners[static_cast<std::size_t>(l)], dtr, ttr, task,
                            fold_stream.derive(static_cast<std::uint64_t>(l)));
            const Eigen::VectorXd pred = fit.predict(dte);
            for (std::size_t i = 0; i < test.size(); ++i)
                cv.Z(test[i], l) = pred[static_cast<Eigen::Index>(i)];
        }
    }
    return cv;
}

inline SlFit fit_super_learner(const Library& library, const DesignMatrix& design,
                               const Eigen::VectorXd& target, Task task, int V,
                               RngStream rng) {
    if (library.learners.empty()) throw ValidationError("super learner: empty library");

    // Constant regression targets carry no signal to cross-validate on;
    // every learner reduces to the constant, so skip the CV machinery and
    // keep the first learner. (The probability task still errors: a
    // single-class target cannot be fitted at all.)
    if (task == Task::kRegression && target.size() > 0 &&
        (target.array() == target[0]).all()) {
        SlFit fit;
        fit.task = task;
        fit.effective_V = 0;
        fit.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(library.learners.size()));
        fit.weights[0] = 1.0;
        fit.cv_risks =
            Eigen::VectorXd::Zero(static_cast<Eigen::Index>(library.learners.size()));
        fit.combination_cv_risk = 0.0;
        RngStream refit_rng = rng.derive(0x5e);
        for (std::size_t l = 0; l < library.learners.size(); ++l)
            fit.refits.push_back(fit_learner(library.learners[l], design, target, task,
                                             refit_rng.derive(static_cast<std::uint64_t>(l))));
        return fit;
    }

    CvPredictionMatrix cv = cv_prediction_matrix(library, design, target, task, V, rng);

    SlFit fit;
    fit.task = task;
    fit.effective_V = cv.effective_V;
    fit.v_reduced = cv.effective_V < V;
    fit.weights = solve_meta_weights(cv, target);
    const Eigen::Index L = static_cast<Eigen::Index>(library.learners.size());
    fit.cv_risks.resize(L);
    for (Eigen::Index l = 0; l < L; ++l) fit.cv_risks[l] = cv_risk(cv.Z.col(l), target, task);
    fit.combination_cv_risk = cv_risk(cv.Z * fit.weights, target, task);

    RngStream refit_rng = rng.derive(0x5e);
    for (Eigen::Index l = 0; l < L; ++l)
        fit.refits.push_back(fit_learner(library.learners[static_cast<std::size_t>(l)], design,
                                         target, task,
                                         refit_rng.derive(static_cast<std::uint64_t>(l))));
    return fit;
}

inline Eigen::VectorXd sl_predict(const SlFit& fit, const DesignMatrix& design) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(design.rows());
    for (std::size_t l = 0; l < fit.refits.size(); ++l) {
        const double w = fit.weights[static_cast<Eigen::Index>(l)];
        if (w == 0.0) continue;
        out += w * fit.refits[l].predict(design);
    }
    if (fit.task == Task::kProbability)
        for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = clamp_probability(out[i]);
    return out;
}

inline nlohmann::json sl_diagnostics_json(const SlFit& fit, const Library& library) {
    nlohmann::json j;
    j["weights"] = nlohmann::json::array();
    j["cv_risks"] = nlohmann::json::array();
    j["learners"] = nlohmann::json::array();
    for (Eigen::Index l = 0; l < fit.weights.size(); ++l) {
        j["weights"].push_back(fit.weights[l]);
        j["cv_risks"].push_back(fit.cv_risks[l]);
        j["learners"].push_back(library.learners[static_cast<std::size_t>(l)].name());
    }
    j["combination_cv_risk"] = fit.combination_cv_risk;
    j["effective_V"] = fit.effective_V;
    return j;
}

}  // namespace acekit
