#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acekit/errors.hpp"
#include "acekit/stats.hpp"

namespace acekit {

// One estimate from one simulated dataset. Flagged records are kept;
// exclusion only ever happens at aggregation time.
struct ReplicationRecord {
    std::string scenario;
    int replication = 0;
    std::string method;
    std::string library;
    int cf_folds = 0;
    long n = 0;
    double psi = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
    double ci_low = std::numeric_limits<double>::quiet_NaN();
    double ci_high = std::numeric_limits<double>::quiet_NaN();
    bool nonfinite = false;
    bool unstable = false;
    std::string error;

    bool flagged() const { return nonfinite || unstable; }
};

// Marks records whose standard error exceeds 10x the group median SE or
// whose point estimate exceeds 5x the absolute median estimate. Records
// must all belong to the same (scenario, method, configuration) cell.
inline void flag_unstable(std::span<ReplicationRecord> records) {
    std::vector<double> ses, psis;
    for (const auto& r : records) {
        if (std::isfinite(r.se)) ses.push_back(r.se);
        if (std::isfinite(r.psi)) psis.push_back(r.psi);
    }
    if (psis.size() < 3) return;
    const double med_psi = std::fabs(median(psis));
    const std::optional<double> med_se =
        ses.size() >= 3 ? std::optional<double>(median(ses)) : std::nullopt;
    for (auto& r : records) {
        bool bad = false;
        if (std::isfinite(r.psi) && std::fabs(r.psi) > 5.0 * med_psi) bad = true;
        if (med_se && std::isfinite(r.se) && r.se > 10.0 * *med_se) bad = true;
        r.unstable = bad;
    }
}

struct Measure {
    double value = std::numeric_limits<double>::quiet_NaN();
    double mcse = std::numeric_limits<double>::quiet_NaN();
};

struct PerformanceReport {
    long total = 0;
    long flagged = 0;
    long excluded = 0;
    long used = 0;
    Measure bias;
    std::optional<Measure> relative_bias_pct;  // absent when the truth is 0
    Measure empirical_se;
    Measure model_se;
    Measure model_se_relative_error_pct;
    Measure coverage_pct;
};

// Aggregates replication records against the true effect. Non-finite
// records never enter the averages; unstable-but-finite records are
// excluded only when exclude_flagged is set.
inline PerformanceReport compute_performance(std::span<const ReplicationRecord> records,
                                             double psi_true, bool exclude_flagged) {
    PerformanceReport rep;
    rep.total = static_cast<long>(records.size());
    std::vector<double> psis, ses;
    long covered = 0, with_ci = 0;
    for (const auto& r : records) {
        if (r.flagged()) ++rep.flagged;
        const bool drop = r.nonfinite || !std::isfinite(r.psi) ||
                          (exclude_flagged && r.unstable);
        if (drop) {
            ++rep.excluded;
            continue;
        }
        psis.push_back(r.psi);
        if (std::isfinite(r.se)) {
            ses.push_back(r.se);
            ++with_ci;
            if (r.ci_low <= psi_true && psi_true <= r.ci_high) ++covered;
        }
    }
    const long S = static_cast<long>(psis.size());
    rep.used = S;
    if (S < 2) throw ValidationError("compute_performance: fewer than 2 usable records");
    const double dS = static_cast<double>(S);

    const double mean_psi = mean(psis);
    const double emp_se = sample_sd(psis);
    rep.bias.value = mean_psi - psi_true;
    rep.bias.mcse = emp_se / std::sqrt(dS);
    rep.empirical_se.value = emp_se;
    rep.empirical_se.mcse = emp_se / std::sqrt(2.0 * (dS - 1.0));

    if (psi_true != 0.0) {
        Measure rb;
        rb.value = 100.0 * rep.bias.value / psi_true;
        rb.mcse = 100.0 * rep.bias.mcse / std::fabs(psi_true);
        rep.relative_bias_pct = rb;
    }

    if (!ses.empty()) {
        const double dm = static_cast<double>(ses.size());
        std::vector<double> se2(ses.size());
        for (std::size_t i = 0; i < ses.size(); ++i) se2[i] = ses[i] * ses[i];
        const double mod_se = std::sqrt(mean(se2));
        rep.model_se.value = mod_se;
        const double var_se2 = ses.size() >= 2 ? sample_variance(se2) : 0.0;
        rep.model_se.mcse = std::sqrt(var_se2 / (4.0 * dm * mod_se * mod_se));
        rep.model_se_relative_error_pct.value = 100.0 * (mod_se / emp_se - 1.0);
        // Delta method combining the model-SE and empirical-SE sampling noise.
        rep.model_se_relative_error_pct.mcse =
            100.0 * (mod_se / emp_se) *
            std::sqrt(var_se2 / (4.0 * dm * mod_se * mod_se * mod_se * mod_se) +
                      1.0 / (2.0 * (dS - 1.0)));

        const double cov = static_cast<double>(covered) / static_cast<double>(with_ci);
        rep.coverage_pct.value = 100.0 * cov;
        rep.coverage_pct.mcse =
            100.0 * std::sqrt(cov * (1.0 - cov) / static_cast<double>(with_ci));
    }
    return rep;
}

inline double coverage_mcse_pct(double coverage, long replications) {
    return 100.0 * std::sqrt(coverage * (1.0 - coverage) / static_cast<double>(replications));
}

}  // namespace acekit
