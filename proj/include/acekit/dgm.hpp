#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "acekit/crossfit.hpp"
#include "acekit/dataset.hpp"
#include "acekit/errors.hpp"
#include "acekit/rng.hpp"
#include "acekit/stats.hpp"

namespace acekit {

// Runs fn(i) for i in [0, count) over a small worker pool; each task
// writes only its own output slot, so results are identical at any
// worker count.
template <typename F>
inline void parallel_for(int count, int workers, F&& fn) {
    if (workers <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    auto work = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= count) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const int t = std::min(workers, count);
    pool.reserve(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
}

namespace dgm_detail {

struct LinearTerm {
    int col = 0;
    double coef = 0.0;
};

enum class GenKind { kGaussian, kBernoulli, kCategorical3 };

struct ConfounderGen {
    std::string name;
    GenKind kind = GenKind::kGaussian;
    double sd = 1.0;
    double intercept = 0.0;
    std::vector<LinearTerm> terms;
    // categorical3 only: the two non-reference logit nodes.
    double intercept2 = 0.0, intercept3 = 0.0;
    std::vector<LinearTerm> terms2, terms3;
    int first_col = 0;
};

struct MetaboliteBlock {
    int count = 0;
    int factors = 5;
    double loading = 0.6;
    double noise_sd = 0.8;
    std::vector<LinearTerm> depends;
    int first_col = 0;
};

struct Interaction {
    int a = 0, b = 0;
    double coef = 0.0;
};

struct RegressionSpec {
    double intercept = 0.0;
    std::vector<LinearTerm> main;
    std::vector<LinearTerm> quadratic;
    std::vector<Interaction> interactions;
    double interaction_scale = 1.0;

    double eval(const double* w) const {
        double v = intercept;
        for (const auto& t : main) v += t.coef * w[t.col];
        for (const auto& t : quadratic) v += t.coef * w[t.col] * w[t.col];
        for (const auto& t : interactions)
            v += interaction_scale * t.coef * w[t.a] * w[t.b];
        return v;
    }
};

}  // namespace dgm_detail

// Parametric data-generating mechanism: confounders drawn sequentially
// per the listed models (optionally plus a latent-factor metabolite
// block), then a logistic exposure and a Gaussian outcome.
struct DgmSpec {
    std::string name;
    int p = 0;
    std::vector<std::string> column_names;
    std::vector<dgm_detail::ConfounderGen> confounders;
    std::optional<dgm_detail::MetaboliteBlock> metabolites;
    dgm_detail::RegressionSpec exposure;
    dgm_detail::RegressionSpec outcome;  // without the exposure terms
    double beta = 0.0;                   // exposure main effect
    std::vector<dgm_detail::LinearTerm> x_interactions;
    double outcome_noise_sd = 1.0;

    // Conditional outcome means under forced exposure.
    double mu0(const double* w) const { return outcome.eval(w); }
    double effect_given_w(const double* w) const {
        double d = beta;
        for (const auto& t : x_interactions)
            d += outcome.interaction_scale * t.coef * w[t.col];
        return d;
    }

    double exposure_probability(const double* w) const { return expit(exposure.eval(w)); }
};

struct TruthRecord {
    std::string spec_name;
    double psi = 0.0;
    long long oracle_n = 0;
    double mcse = 0.0;
};

namespace dgm_detail {

inline int resolve_column(const std::vector<std::string>& names, const std::string& key) {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == key) return static_cast<int>(i);
    throw ValidationError("dgm: unknown column \"" + key + "\"");
}

inline std::vector<LinearTerm> parse_terms(const nlohmann::json& j,
                                           const std::vector<std::string>& names) {
    std::vector<LinearTerm> out;
    if (j.is_null()) return out;
    for (auto it = j.begin(); it != j.end(); ++it)
        out.push_back({resolve_column(names, it.key()), it.value().get<double>()});
    return out;
}

// Draws all confounders for one record; consumes RNG for confounders
// only, so ablating exposure/outcome reproduces identical draws.
inline void draw_confounders(const DgmSpec& spec, RngStream& rng, double* w) {
    for (const auto& g : spec.confounders) {
        double eta = g.intercept;
        for (const auto& t : g.terms) eta += t.coef * w[t.col];
        switch (g.kind) {
            case GenKind::kGaussian:
                w[g.first_col] = eta + g.sd * rng.normal();
                break;
            case GenKind::kBernoulli:
                w[g.first_col] = rng.bernoulli(expit(eta)) ? 1.0 : 0.0;
                break;
            case GenKind::kCategorical3: {
                double eta2 = g.intercept2, eta3 = g.intercept3;
                for (const auto& t : g.terms2) eta2 += t.coef * w[t.col];
                for (const auto& t : g.terms3) eta3 += t.coef * w[t.col];
                const double e2 = std::exp(eta2), e3 = std::exp(eta3);
                const double denom = 1.0 + e2 + e3;
                const double u = rng.uniform();
                w[g.first_col] = (u < e2 / denom) ? 1.0 : 0.0;
                w[g.first_col + 1] =
                    (u >= e2 / denom && u < (e2 + e3) / denom) ? 1.0 : 0.0;
                break;
            }
        }
    }
    if (spec.metabolites) {
        const auto& mb = *spec.metabolites;
        double factors[16];
        for (int f = 0; f < mb.factors; ++f) factors[f] = rng.normal();
        double dep = 0.0;
        for (const auto& t : mb.depends) dep += t.coef * w[t.col];
        for (int j = 0; j < mb.count; ++j)
            w[mb.first_col + j] =
                dep + mb.loading * factors[j % mb.factors] + mb.noise_sd * rng.normal();
    }
}

}  // namespace dgm_detail

inline DgmSpec dgm_from_json(const nlohmann::json& j) {
    DgmSpec spec;
    spec.name = j.at("name").get<std::string>();

    // First pass: assign column layout.
    for (const auto& cj : j.at("confounders")) {
        dgm_detail::ConfounderGen g;
        g.name = cj.at("name").get<std::string>();
        const std::string type = cj.at("type").get<std::string>();
        g.first_col = static_cast<int>(spec.column_names.size());
        if (type == "gaussian") {
            g.kind = dgm_detail::GenKind::kGaussian;
            spec.column_names.push_back(g.name);
        } else if (type == "bernoulli") {
            g.kind = dgm_detail::GenKind::kBernoulli;
            spec.column_names.push_back(g.name);
        } else if (type == "categorical3") {
            g.kind = dgm_detail::GenKind::kCategorical3;
            spec.column_names.push_back(g.name + ".2");
            spec.column_names.push_back(g.name + ".3");
        } else {
            throw ValidationError("dgm: unknown confounder type " + type);
        }
        spec.confounders.push_back(g);
    }
    if (j.contains("metabolites")) {
        dgm_detail::MetaboliteBlock mb;
        const auto& mj = j.at("metabolites");
        mb.count = mj.at("count").get<int>();
        mb.factors = mj.at("factors").get<int>();
        mb.loading = mj.at("loading").get<double>();
        mb.noise_sd = mj.at("noise_sd").get<double>();
        if (mb.factors < 1 || mb.factors > 16)
            throw ValidationError("dgm: factor count outside [1,16]");
        mb.first_col = static_cast<int>(spec.column_names.size());
        for (int m = 1; m <= mb.count; ++m)
            spec.column_names.push_back("m" + std::to_string(m));
        spec.metabolites = mb;
    }
    spec.p = static_cast<int>(spec.column_names.size());

    // Second pass: resolve coefficient references (columns may only refer
    // to previously generated variables, keeping the ordering acyclic).
    auto names_upto = [&](int limit) {
        return std::vector<std::string>(spec.column_names.begin(),
                                        spec.column_names.begin() + limit);
    };
    std::size_t gi = 0;
    for (const auto& cj : j.at("confounders")) {
        auto& g = spec.confounders[gi++];
        const auto prior = names_upto(g.first_col);
        if (g.kind == dgm_detail::GenKind::kCategorical3) {
            const auto& l2 = cj.at("logit2");
            const auto& l3 = cj.at("logit3");
            g.intercept2 = l2.value("intercept", 0.0);
            g.intercept3 = l3.value("intercept", 0.0);
            if (l2.contains("coef")) g.terms2 = dgm_detail::parse_terms(l2.at("coef"), prior);
            if (l3.contains("coef")) g.terms3 = dgm_detail::parse_terms(l3.at("coef"), prior);
        } else {
            g.intercept = cj.value("intercept", 0.0);
            g.sd = cj.value("sd", 1.0);
            if (cj.contains("coef")) g.terms = dgm_detail::parse_terms(cj.at("coef"), prior);
        }
    }
    if (spec.metabolites && j.at("metabolites").contains("depends"))
        spec.metabolites->depends = dgm_detail::parse_terms(
            j.at("metabolites").at("depends"), names_upto(spec.metabolites->first_col));

    auto parse_regression = [&](const nlohmann::json& rj, dgm_detail::RegressionSpec& r) {
        r.intercept = rj.value("intercept", 0.0);
        if (rj.contains("coef")) r.main = dgm_detail::parse_terms(rj.at("coef"), spec.column_names);
        if (rj.contains("quadratic"))
            r.quadratic = dgm_detail::parse_terms(rj.at("quadratic"), spec.column_names);
        r.interaction_scale = rj.value("interaction_scale", 1.0);
        if (rj.contains("interactions")) {
            for (const auto& e : rj.at("interactions")) {
                dgm_detail::Interaction it;
                it.a = dgm_detail::resolve_column(spec.column_names, e.at(0).get<std::string>());
                it.b = dgm_detail::resolve_column(spec.column_names, e.at(1).get<std::string>());
                it.coef = e.at(2).get<double>();
                r.interactions.push_back(it);
            }
        }
    };
    parse_regression(j.at("exposure"), spec.exposure);
    const auto& oj = j.at("outcome");
    parse_regression(oj, spec.outcome);
    spec.beta = oj.value("beta", 0.0);
    spec.outcome_noise_sd = oj.value("noise_sd", 1.0);
    if (oj.contains("x_interactions"))
        spec.x_interactions = dgm_detail::parse_terms(oj.at("x_interactions"), spec.column_names);
    return spec;
}

inline DgmSpec load_dgm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dgm spec: " + path);
    nlohmann::json j;
    in >> j;
    return dgm_from_json(j);
}

inline Dataset generate(const DgmSpec& spec, Eigen::Index n, RngStream rng) {
    if (n < 4) throw ValidationError("generate: n must be at least 4");
    Dataset d;
    d.W.resize(n, spec.p);
    d.X.resize(n);
    d.Y.resize(n);
    d.confounder_names = spec.column_names;
    std::vector<double> w(static_cast<std::size_t>(spec.p));
    for (Eigen::Index i = 0; i < n; ++i) {
        dgm_detail::draw_confounders(spec, rng, w.data());
        const double px = spec.exposure_probability(w.data());
        const double x = rng.bernoulli(px) ? 1.0 : 0.0;
        const double mu = spec.mu0(w.data()) + x * spec.effect_given_w(w.data());
        const double y = mu + spec.outcome_noise_sd * rng.normal();
        for (int c = 0; c < spec.p; ++c) d.W(i, c) = w[static_cast<std::size_t>(c)];
        d.X[i] = x;
        d.Y[i] = y;
    }
    return d;
}

// Empirical truth: averages the noiseless counterfactual mean difference
// over a very large confounder sample (streamed, Welford accumulation).
inline TruthRecord true_ace(const DgmSpec& spec, long long N, RngStream rng) {
    if (N < 1000000) throw ValidationError("true_ace: oracle size must be at least 1e6");
    std::vector<double> w(static_cast<std::size_t>(spec.p));
    double mean = 0.0, m2 = 0.0;
    for (long long i = 0; i < N; ++i) {
        dgm_detail::draw_confounders(spec, rng, w.data());
        const double diff = spec.effect_given_w(w.data());
        const double delta = diff - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (diff - mean);
    }
    TruthRecord t;
    t.spec_name = spec.name;
    t.psi = mean;
    t.oracle_n = N;
    const double var = m2 / static_cast<double>(N - 1);
    t.mcse = std::sqrt(var / static_cast<double>(N));
    return t;
}

// Re-solves the exposure intercept so the marginal exposure prevalence
// hits the target (bisection on a fixed confounder sample).
inline void recenter_exposure_intercept(DgmSpec& spec, double target_prevalence,
                                        RngStream rng, long long N = 200000) {
    std::vector<double> w(static_cast<std::size_t>(spec.p));
    std::vector<double> eta(static_cast<std::size_t>(N));
    const double c0 = spec.exposure.intercept;
    for (long long i = 0; i < N; ++i) {
        dgm_detail::draw_confounders(spec, rng, w.data());
        eta[static_cast<std::size_t>(i)] = spec.exposure.eval(w.data()) - c0;
    }
    auto prevalence = [&](double icpt) {
        double s = 0.0;
        for (double e : eta) s += expit(icpt + e);
        return s / static_cast<double>(N);
    };
    double lo = -20.0, hi = 20.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (prevalence(mid) < target_prevalence) lo = mid;
        else hi = mid;
    }
    spec.exposure.intercept = 0.5 * (lo + hi);
}

// Re-centers the outcome intercept so the marginal outcome mean is zero
// under the current exposure model and effect size.
inline void recenter_outcome_intercept(DgmSpec& spec, RngStream rng, long long N = 200000) {
    std::vector<double> w(static_cast<std::size_t>(spec.p));
    double acc = 0.0;
    const double c0 = spec.outcome.intercept;
    for (long long i = 0; i < N; ++i) {
        dgm_detail::draw_confounders(spec, rng, w.data());
        const double px = spec.exposure_probability(w.data());
        const double mu_marginal = (spec.mu0(w.data()) - c0) +
                                   px * spec.effect_given_w(w.data());
        acc += mu_marginal;
    }
    spec.outcome.intercept = -acc / static_cast<double>(N);
}

struct CalibrationResult {
    double beta = 0.0;
    double achieved_power = 0.0;
    DgmSpec spec;  // with the calibrated effect and re-centered intercept
};

// Bisection on the exposure main effect until the null of zero effect is
// rejected at 5% in the target share of simulated datasets analysed with
// a fixed reference analysis (AIPW, reduced library, no cross-fitting).
inline CalibrationResult calibrate_effect(const DgmSpec& spec0, Eigen::Index n,
                                          double target_power, int reps, RngStream rng,
                                          int workers = 1) {
    if (!(target_power > 0.0 && target_power < 1.0))
        throw ValidationError("calibrate_effect: target power outside (0,1)");
    if (reps < 200) throw ValidationError("calibrate_effect: need at least 200 replications");

    const double z = normal_quantile(0.975);
    EstimatorConfig ref;
    ref.method = Method::kAipw;
    ref.outcome_library = reduced_library();
    ref.exposure_library = reduced_library();
    ref.cf_folds = 0;
    ref.sl_folds = 10;

    auto power_at = [&](double beta) {
        DgmSpec s = spec0;
        s.beta = beta;
        recenter_outcome_intercept(s, rng.derive(1));
        std::vector<int> reject(static_cast<std::size_t>(reps), 0);
        parallel_for(reps, workers, [&](int r) {
            RngStream data_rng = rng.derive(2).derive(static_cast<std::uint64_t>(r));
            const Dataset d = generate(s, n, data_rng);
            EstimatorConfig cfg = ref;
            cfg.seed = rng.derive(3).derive(static_cast<std::uint64_t>(r)).key();
            const EffectEstimate est = estimate_effect(d, cfg);
            if (est.se && *est.se > 0.0 && std::fabs(est.psi) / *est.se > z)
                reject[static_cast<std::size_t>(r)] = 1;
        });
        int total = 0;
        for (int v : reject) total += v;
        return static_cast<double>(total) / static_cast<double>(reps);
    };

    if (power_at(0.0) >= target_power)
        throw EstimationError("calibrate_effect: power at zero effect already above target");

    // Scale guess for the bracket from the outcome spread.
    DgmSpec null_spec = spec0;
    null_spec.beta = 0.0;
    const Dataset probe = generate(null_spec, 2000, rng.derive(4));
    const double sd_y = std::sqrt(
        (probe.Y.array() - probe.Y.mean()).square().sum() / (probe.Y.size() - 1.0));
    double hi = 8.0 * sd_y / std::sqrt(static_cast<double>(n));
    double hi_power = power_at(hi);
    int doublings = 0;
    while (hi_power < target_power && doublings < 8) {
        hi *= 2.0;
        hi_power = power_at(hi);
        ++doublings;
    }
    if (hi_power < target_power)
        throw EstimationError("calibrate_effect: could not bracket the target power");

    double lo = 0.0;
    double best_beta = hi, best_power = hi_power;
    if (std::fabs(hi_power - target_power) > 0.02) {
        for (int step = 0; step < 12; ++step) {
            const double mid = 0.5 * (lo + hi);
            const double pw = power_at(mid);
            if (std::fabs(pw - target_power) <= 0.02) {
                best_beta = mid;
                best_power = pw;
                break;
            }
            if (pw < target_power) lo = mid;
            else {
                hi = mid;
                best_beta = mid;
                best_power = pw;
            }
        }
    }

    CalibrationResult res;
    res.beta = best_beta;
    res.achieved_power = best_power;
    res.spec = spec0;
    res.spec.beta = best_beta;
    recenter_outcome_intercept(res.spec, rng.derive(1));
    return res;
}

inline nlohmann::json to_json(const TruthRecord& t) {
    return nlohmann::json{{"spec", t.spec_name},
                          {"psi", t.psi},
                          {"oracle_n", t.oracle_n},
                          {"mcse", t.mcse}};
}

}  // namespace acekit
