#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "acekit/dataset.hpp"
#include "acekit/errors.hpp"
#include "acekit/estimators.hpp"
#include "acekit/super_learner.hpp"

namespace acekit {

struct EstimatorConfig {
    Method method = Method::kAipw;
    Library outcome_library = reduced_library();
    Library exposure_library = reduced_library();
    int cf_folds = 0;   // 0 = no cross-fitting, otherwise K >= 2
    int sl_folds = 10;  // V
    double trunc_lower = 5.0;
    double trunc_upper = 95.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (cf_folds != 0 && cf_folds < 2)
            throw ValidationError("estimator config: cross-fitting requires K >= 2");
        if (sl_folds < 2) throw ValidationError("estimator config: V must be at least 2");
        if (!(trunc_lower < trunc_upper))
            throw ValidationError("estimator config: truncation percentiles out of order");
        outcome_library.validate();
        exposure_library.validate();
    }

    std::string library_label() const {
        if (outcome_library.label == exposure_library.label) return outcome_library.label;
        return outcome_library.label + "/" + exposure_library.label;
    }
};

inline EstimatorConfig estimator_config_from_json(const nlohmann::json& j) {
    EstimatorConfig c;
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    if (j.contains("library")) {
        c.outcome_library = library_from_json(j.at("library"));
        c.exposure_library = c.outcome_library;
    }
    if (j.contains("outcome_library"))
        c.outcome_library = library_from_json(j.at("outcome_library"));
    if (j.contains("exposure_library"))
        c.exposure_library = library_from_json(j.at("exposure_library"));
    if (j.contains("crossfit")) {
        const auto& cf = j.at("crossfit");
        if (cf.is_null() || (cf.is_string() && cf.get<std::string>() == "none")) c.cf_folds = 0;
        else c.cf_folds = cf.get<int>();
    }
    if (j.contains("sl_folds")) c.sl_folds = j.at("sl_folds").get<int>();
    if (j.contains("truncation")) {
        c.trunc_lower = j.at("truncation").at(0).get<double>();
        c.trunc_upper = j.at("truncation").at(1).get<double>();
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

inline nlohmann::json to_json(const EstimatorConfig& c) {
    nlohmann::json j;
    j["method"] = to_string(c.method);
    j["outcome_library"] = to_json(c.outcome_library);
    j["exposure_library"] = to_json(c.exposure_library);
    j["crossfit"] = c.cf_folds;
    j["sl_folds"] = c.sl_folds;
    j["truncation"] = {c.trunc_lower, c.trunc_upper};
    j["seed"] = c.seed;
    return j;
}

// Nuisance predictions plus the per-fold ensemble diagnostics.
struct NuisanceFitResult {
    NuisancePredictions nuis;  // propensity untruncated here
    std::vector<Eigen::VectorXd> weights_outcome;
    std::vector<Eigen::VectorXd> weights_exposure;
    // Per fitted ensemble: CV risk of the convex combination and of the
    // best single learner.
    std::vector<double> combo_risk_outcome, best_risk_outcome;
    std::vector<double> combo_risk_exposure, best_risk_exposure;
};

namespace detail {

inline void record_sl_diag(const SlFit& fit, std::vector<Eigen::VectorXd>& weights,
                           std::vector<double>& combo, std::vector<double>& best) {
    weights.push_back(fit.weights);
    combo.push_back(fit.combination_cv_risk);
    best.push_back(fit.cv_risks.minCoeff());
}

}  // namespace detail

namespace detail {

inline DesignMatrix outcome_design(const Dataset& data) {
    Eigen::MatrixXd m(data.n(), data.p() + 1);
    m.col(0) = data.X;
    m.rightCols(data.p()) = data.W;
    return make_design(m);
}

inline DesignMatrix exposure_design(const Dataset& data) { return make_design(data.W); }

inline DesignMatrix with_forced_exposure(const DesignMatrix& d, double level) {
    DesignMatrix out = d;
    out.values.col(0).setConstant(level);
    return out;
}

}  // namespace detail

// Fits the outcome and exposure ensembles on all records and predicts
// in sample.
inline NuisanceFitResult fit_nuisances_nocf(const Dataset& data, const Library& outcome_lib,
                                            const Library& exposure_lib, int V,
                                            RngStream rng) {
    const DesignMatrix od = detail::outcome_design(data);
    const DesignMatrix ed = detail::exposure_design(data);
    const SlFit out_fit =
        fit_super_learner(outcome_lib, od, data.Y, Task::kRegression, V, rng.derive(1));
    const SlFit exp_fit =
        fit_super_learner(exposure_lib, ed, data.X, Task::kProbability, V, rng.derive(2));

    NuisanceFitResult res;
    res.nuis.E1 = sl_predict(out_fit, detail::with_forced_exposure(od, 1.0));
    res.nuis.E0 = sl_predict(out_fit, detail::with_forced_exposure(od, 0.0));
    res.nuis.PS = sl_predict(exp_fit, ed);
    res.nuis.cf_folds = 0;
    detail::record_sl_diag(out_fit, res.weights_outcome, res.combo_risk_outcome,
                           res.best_risk_outcome);
    detail::record_sl_diag(exp_fit, res.weights_exposure, res.combo_risk_exposure,
                           res.best_risk_exposure);
    return res;
}

// K-fold cross-fitting: for each fold, both ensembles are fitted on the
// complement and predictions are filled in for the held-out fold, so
// every record is predicted exactly once, out of fold.
inline NuisanceFitResult crossfit_nuisances(const Dataset& data, const Library& outcome_lib,
                                            const Library& exposure_lib, int K, int V,
                                            RngStream rng) {
    const Eigen::Index n = data.n();
    RngStream fold_rng = rng.derive(0);
    const FoldPlan plan = make_folds(data.X, K, fold_rng);

    const DesignMatrix od = detail::outcome_design(data);
    const DesignMatrix ed = detail::exposure_design(data);

    NuisanceFitResult res;
    res.nuis.E1.resize(n);
    res.nuis.E0.resize(n);
    res.nuis.PS.resize(n);
    res.nuis.cf_folds = K;
    res.nuis.folds = plan;

    for (int k = 0; k < K; ++k) {
        const auto train = plan.complement_indices(k);
        const auto test = plan.fold_indices(k);
        const DesignMatrix od_tr = detail::subset_design(od, train);
        const DesignMatrix ed_tr = detail::subset_design(ed, train);
        const Eigen::VectorXd y_tr = detail::subset_vector(data.Y, train);
        const Eigen::VectorXd x_tr = detail::subset_vector(data.X, train);

        SlFit out_fit;
        SlFit exp_fit;
        try {
            out_fit = fit_super_learner(outcome_lib, od_tr, y_tr, Task::kRegression, V,
                                        rng.derive(static_cast<std::uint64_t>(100 + 2 * k)));
            exp_fit = fit_super_learner(exposure_lib, ed_tr, x_tr, Task::kProbability, V,
                                        rng.derive(static_cast<std::uint64_t>(101 + 2 * k)));
        } catch (const std::exception& e) {
            throw EstimationError("cross-fitting failed in fold " + std::to_string(k + 1) +
                                  ": " + e.what());
        }

        const DesignMatrix od_te = detail::subset_design(od, test);
        const DesignMatrix ed_te = detail::subset_design(ed, test);
        const Eigen::VectorXd e1 = sl_predict(out_fit, detail::with_forced_exposure(od_te, 1.0));
        const Eigen::VectorXd e0 = sl_predict(out_fit, detail::with_forced_exposure(od_te, 0.0));
        const Eigen::VectorXd ps = sl_predict(exp_fit, ed_te);
        for (std::size_t i = 0; i < test.size(); ++i) {
            res.nuis.E1[test[i]] = e1[static_cast<Eigen::Index>(i)];
            res.nuis.E0[test[i]] = e0[static_cast<Eigen::Index>(i)];
            res.nuis.PS[test[i]] = ps[static_cast<Eigen::Index>(i)];
        }
        detail::record_sl_diag(out_fit, res.weights_outcome, res.combo_risk_outcome,
                               res.best_risk_outcome);
        detail::record_sl_diag(exp_fit, res.weights_exposure, res.combo_risk_exposure,
                               res.best_risk_exposure);
    }
    return res;
}

inline NuisanceFitResult crossfit_nuisances(const Dataset& data, const Library& library, int K,
                                            RngStream rng, int V = 10) {
    return crossfit_nuisances(data, library, library, K, V, rng);
}

// Fits nuisances per the config (with or without cross-fitting).
inline NuisanceFitResult fit_nuisances(const Dataset& data, const EstimatorConfig& config) {
    RngStream rng(config.seed, 0);
    if (config.cf_folds == 0)
        return fit_nuisances_nocf(data, config.outcome_library, config.exposure_library,
                                  config.sl_folds, rng);
    return crossfit_nuisances(data, config.outcome_library, config.exposure_library,
                              config.cf_folds, config.sl_folds, rng);
}

// Truncates the pooled propensity vector once and runs the requested
// estimator on the resulting predictions.
inline EffectEstimate estimate_with_nuisances(Method method, const Dataset& data,
                                              const NuisanceFitResult& fit, double trunc_lower,
                                              double trunc_upper) {
    NuisancePredictions nuis = fit.nuis;
    auto [ps, bounds] = truncate_propensity(nuis.PS, trunc_lower, trunc_upper);
    nuis.PS = std::move(ps);
    nuis.truncation_bounds = bounds;

    EffectEstimate est;
    switch (method) {
        case Method::kGcomp:
            est = gcomp_estimate(nuis.E1, nuis.E0);
            est.diagnostics.cf_folds = nuis.cf_folds;
            est.diagnostics.truncation_bounds = bounds;
            break;
        case Method::kAipw:
            est = aipw_estimate(data.X, data.Y, nuis);
            break;
        case Method::kTmle:
            est = tmle_estimate(data.X, data.Y, nuis);
            break;
    }
    est.diagnostics.sl_weights_outcome = fit.weights_outcome;
    est.diagnostics.sl_weights_exposure = fit.weights_exposure;
    if (!std::isfinite(est.psi) || (est.se && !std::isfinite(*est.se)))
        est.diagnostics.flags.push_back("non-finite");
    return est;
}

inline EffectEstimate estimate_effect(const Dataset& data, const EstimatorConfig& config) {
    config.validate();
    data.validate();
    const NuisanceFitResult fit = fit_nuisances(data, config);
    return estimate_with_nuisances(config.method, data, fit, config.trunc_lower,
                                   config.trunc_upper);
}

}  // namespace acekit
