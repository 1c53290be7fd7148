#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "acekit/errors.hpp"
#include "acekit/folds.hpp"
#include "acekit/glm.hpp"
#include "acekit/stats.hpp"

namespace acekit {

enum class Method { kAipw, kTmle, kGcomp };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::kAipw: return "AIPW";
        case Method::kTmle: return "TMLE";
        case Method::kGcomp: return "GCOMP";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "AIPW" || s == "aipw") return Method::kAipw;
    if (s == "TMLE" || s == "tmle") return Method::kTmle;
    if (s == "GCOMP" || s == "gcomp") return Method::kGcomp;
    throw ValidationError("unknown method: " + s);
}

// Predicted outcomes under both exposure levels plus the propensity
// score, for every record.
struct NuisancePredictions {
    Eigen::VectorXd E1;
    Eigen::VectorXd E0;
    Eigen::VectorXd PS;
    int cf_folds = 0;  // 0 = fitted on all records
    std::optional<FoldPlan> folds;
    std::optional<std::pair<double, double>> truncation_bounds;

    void validate(Eigen::Index n) const {
        if (E1.size() != n || E0.size() != n || PS.size() != n)
            throw ValidationError("nuisance predictions: length mismatch");
        if (!E1.allFinite() || !E0.allFinite() || !PS.allFinite())
            throw ValidationError("nuisance predictions: non-finite value");
        for (Eigen::Index i = 0; i < n; ++i)
            if (!(PS[i] > 0.0 && PS[i] < 1.0))
                throw ValidationError("nuisance predictions: propensity outside (0,1)");
    }
};

// Clamps propensity predictions into their own empirical percentile
// band (defaults: 5th and 95th).
inline std::pair<Eigen::VectorXd, std::pair<double, double>> truncate_propensity(
    const Eigen::VectorXd& ps, double lower_pct = 5.0, double upper_pct = 95.0) {
    if (!ps.allFinite()) throw ValidationError("truncate_propensity: non-finite entry");
    if (!(lower_pct < upper_pct))
        throw ValidationError("truncate_propensity: lower percentile must be below upper");
    std::vector<double> v(ps.data(), ps.data() + ps.size());
    const double lo = quantile(v, lower_pct / 100.0);
    const double hi = quantile(std::move(v), upper_pct / 100.0);
    Eigen::VectorXd out = ps;
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, out[i]));
    return {out, {lo, hi}};
}

struct EffectDiagnostics {
    int cf_folds = 0;
    std::optional<std::pair<double, double>> truncation_bounds;
    std::vector<Eigen::VectorXd> sl_weights_outcome;   // one entry per fold
    std::vector<Eigen::VectorXd> sl_weights_exposure;
    double eif_mean_centered = 0.0;  // mean(phi) - psi
    double eif_variance = 0.0;
    std::optional<double> epsilon;
    std::optional<double> targeted_mean1;
    std::optional<double> targeted_mean0;
    std::vector<std::string> flags;
};

struct EffectEstimate {
    Method method = Method::kAipw;
    double psi = 0.0;
    std::optional<double> se;
    std::optional<std::pair<double, double>> ci;
    Eigen::Index n = 0;
    EffectDiagnostics diagnostics;
};

// Wald interval at the given confidence level.
inline std::pair<double, double> wald_ci(double psi, double se, double level = 0.95) {
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("wald_ci: level outside (0,1)");
    if (se < 0.0) throw ValidationError("wald_ci: negative standard error");
    const double z = normal_quantile(0.5 * (1.0 + level));
    return {psi - z * se, psi + z * se};
}

// Plug-in (g-formula) estimate; no standard error, the bootstrap being
// invalid with data-adaptive fits.
inline EffectEstimate gcomp_estimate(const Eigen::VectorXd& E1, const Eigen::VectorXd& E0) {
    if (E1.size() == 0 || E1.size() != E0.size())
        throw ValidationError("gcomp_estimate: empty or mismatched inputs");
    EffectEstimate est;
    est.method = Method::kGcomp;
    est.n = E1.size();
    est.psi = (E1 - E0).mean();
    return est;
}

namespace detail {

inline Eigen::VectorXd eif_contributions(const Eigen::VectorXd& X, const Eigen::VectorXd& Y,
                                         const Eigen::VectorXd& E1, const Eigen::VectorXd& E0,
                                         const Eigen::VectorXd& PS) {
    const Eigen::Index n = X.size();
    Eigen::VectorXd phi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        phi[i] = E1[i] - E0[i] + X[i] * (Y[i] - E1[i]) / PS[i] -
                 (1.0 - X[i]) * (Y[i] - E0[i]) / (1.0 - PS[i]);
    }
    return phi;
}

inline void fill_eif_summary(EffectEstimate& est, const Eigen::VectorXd& phi) {
    const Eigen::Index n = phi.size();
    const double m = phi.mean();
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ss += (phi[i] - est.psi) * (phi[i] - est.psi);
    const double var = ss / static_cast<double>(n - 1);
    est.se = std::sqrt(var / static_cast<double>(n));
    est.ci = wald_ci(est.psi, *est.se);
    est.diagnostics.eif_mean_centered = m - est.psi;
    est.diagnostics.eif_variance = var;
}

}  // namespace detail

// One-step bias-corrected estimate: mean of the per-record influence
// contributions, with the influence-curve standard error.
inline EffectEstimate aipw_estimate(const Eigen::VectorXd& X, const Eigen::VectorXd& Y,
                                    const NuisancePredictions& nuis) {
    const Eigen::Index n = X.size();
    if (n < 2) throw ValidationError("aipw_estimate: need at least 2 records");
    if (Y.size() != n) throw ValidationError("aipw_estimate: length mismatch");
    nuis.validate(n);
    EffectEstimate est;
    est.method = Method::kAipw;
    est.n = n;
    est.diagnostics.cf_folds = nuis.cf_folds;
    est.diagnostics.truncation_bounds = nuis.truncation_bounds;
    const Eigen::VectorXd phi = detail::eif_contributions(X, Y, nuis.E1, nuis.E0, nuis.PS);
    est.psi = phi.mean();
    detail::fill_eif_summary(est, phi);
    return est;
}

struct TargetingResult {
    double epsilon = 0.0;
    double scale_min = 0.0;  // outcome scaling bounds (a, b)
    double scale_max = 1.0;
    Eigen::VectorXd E1star;
    Eigen::VectorXd E0star;
};

// Targeting step: logistic fluctuation of the min-max scaled outcome
// predictions along the clever covariate, keeping the updated
// predictions inside the observed outcome range.
inline TargetingResult tmle_target(const Eigen::VectorXd& X, const Eigen::VectorXd& Y,
                                   const NuisancePredictions& nuis) {
    const Eigen::Index n = X.size();
    if (Y.size() != n) throw ValidationError("tmle_target: length mismatch");
    nuis.validate(n);
    const double a = Y.minCoeff();
    const double b = Y.maxCoeff();
    if (!(b > a)) throw ValidationError("tmle_target: constant outcome");
    const double span = b - a;

    auto to_unit = [&](double y) {
        return std::min(0.995, std::max(0.005, (y - a) / span));
    };
    Eigen::VectorXd ys(n), e1s(n), e0s(n), h(n), offset(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        ys[i] = (Y[i] - a) / span;
        e1s[i] = to_unit(nuis.E1[i]);
        e0s[i] = to_unit(nuis.E0[i]);
        h[i] = X[i] / nuis.PS[i] - (1.0 - X[i]) / (1.0 - nuis.PS[i]);
        offset[i] = logit(X[i] == 1.0 ? e1s[i] : e0s[i]);
    }
    TargetingResult res;
    res.scale_min = a;
    res.scale_max = b;
    res.epsilon = fit_logistic_fluctuation(ys, h, offset);
    res.E1star.resize(n);
    res.E0star.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        res.E1star[i] = a + span * expit(logit(e1s[i]) + res.epsilon / nuis.PS[i]);
        res.E0star[i] = a + span * expit(logit(e0s[i]) - res.epsilon / (1.0 - nuis.PS[i]));
    }
    return res;
}

// Substitution estimate from the targeted predictions, with the
// influence-curve standard error evaluated at the updated fits.
inline EffectEstimate tmle_estimate(const Eigen::VectorXd& X, const Eigen::VectorXd& Y,
                                    const NuisancePredictions& nuis) {
    const Eigen::Index n = X.size();
    if (n < 2) throw ValidationError("tmle_estimate: need at least 2 records");
    const TargetingResult t = tmle_target(X, Y, nuis);
    EffectEstimate est;
    est.method = Method::kTmle;
    est.n = n;
    est.diagnostics.cf_folds = nuis.cf_folds;
    est.diagnostics.truncation_bounds = nuis.truncation_bounds;
    est.diagnostics.epsilon = t.epsilon;
    est.diagnostics.targeted_mean1 = t.E1star.mean();
    est.diagnostics.targeted_mean0 = t.E0star.mean();
    est.psi = *est.diagnostics.targeted_mean1 - *est.diagnostics.targeted_mean0;
    const Eigen::VectorXd phi = detail::eif_contributions(X, Y, t.E1star, t.E0star, nuis.PS);
    detail::fill_eif_summary(est, phi);
    return est;
}

inline nlohmann::json to_json(const EffectEstimate& est) {
    nlohmann::json j;
    j["method"] = to_string(est.method);
    j["psi"] = est.psi;
    j["n"] = static_cast<long>(est.n);
    if (est.se) j["se"] = *est.se;
    else j["se"] = nullptr;
    if (est.ci) j["ci"] = {est.ci->first, est.ci->second};
    else j["ci"] = nullptr;
    j["K"] = est.diagnostics.cf_folds;
    if (est.diagnostics.truncation_bounds)
        j["truncation_bounds"] = {est.diagnostics.truncation_bounds->first,
                                  est.diagnostics.truncation_bounds->second};
    else j["truncation_bounds"] = nullptr;
    auto weights_json = [](const std::vector<Eigen::VectorXd>& per_fold) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& w : per_fold) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index i = 0; i < w.size(); ++i) row.push_back(w[i]);
            arr.push_back(row);
        }
        return arr;
    };
    j["sl_weights_outcome"] = weights_json(est.diagnostics.sl_weights_outcome);
    j["sl_weights_exposure"] = weights_json(est.diagnostics.sl_weights_exposure);
    if (est.diagnostics.epsilon) j["epsilon"] = *est.diagnostics.epsilon;
    if (est.diagnostics.targeted_mean1) {
        j["targeted_mean1"] = *est.diagnostics.targeted_mean1;
        j["targeted_mean0"] = *est.diagnostics.targeted_mean0;
    }
    j["eif_mean_centered"] = est.diagnostics.eif_mean_centered;
    j["eif_variance"] = est.diagnostics.eif_variance;
    j["flags"] = est.diagnostics.flags;
    return j;
}

}  // namespace acekit
