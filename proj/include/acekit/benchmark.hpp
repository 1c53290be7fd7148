#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "acekit/crossfit.hpp"
#include "acekit/dgm.hpp"
#include "acekit/metrics.hpp"
#include "acekit/version.hpp"

namespace acekit {

struct ScenarioConfig {
    std::string spec_path;
    DgmSpec spec;
    Eigen::Index n = 0;
    int reps = 0;
};

struct BenchmarkConfig {
    std::vector<ScenarioConfig> scenarios;
    std::vector<EstimatorConfig> estimators;
    std::uint64_t seed = 0;
    long long truth_n = 5000000;
    int workers = 1;
    std::string exclusion = "both";  // both | none | flagged
    std::string raw;                 // original config text, hashed into the manifest

    void validate() const {
        if (scenarios.empty() || estimators.empty())
            throw ValidationError("benchmark: scenario/estimator grid is empty");
        for (const auto& s : scenarios) {
            if (s.reps < 2) throw ValidationError("benchmark: need at least 2 replications");
            if (s.n < 4) throw ValidationError("benchmark: n must be at least 4");
        }
        if (truth_n < 1000000) throw ValidationError("benchmark: truth_n must be at least 1e6");
        if (exclusion != "both" && exclusion != "none" && exclusion != "flagged")
            throw ValidationError("benchmark: exclusion must be both|none|flagged");
        for (const auto& e : estimators) e.validate();
    }
};

inline BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j,
                                                  const std::string& base_dir) {
    BenchmarkConfig c;
    for (const auto& sj : j.at("scenarios")) {
        ScenarioConfig s;
        s.spec_path = sj.at("spec").get<std::string>();
        std::filesystem::path p(s.spec_path);
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        s.spec = load_dgm(p.string());
        s.n = sj.at("n").get<long>();
        s.reps = sj.at("reps").get<int>();
        c.scenarios.push_back(std::move(s));
    }
    for (const auto& ej : j.at("estimators"))
        c.estimators.push_back(estimator_config_from_json(ej));
    c.seed = j.value("seed", 0ULL);
    c.truth_n = j.value("truth_n", 5000000LL);
    c.workers = j.value("workers", 1);
    c.exclusion = j.value("exclusion", std::string("both"));
    c.validate();
    return c;
}

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

// Shortest round-trip decimal formatting; empty field for NaN.
inline std::string fmt(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "" : (v > 0 ? "inf" : "-inf");
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

struct NuisanceGroupKey {
    std::string key;
    int first_estimator = 0;
};

}  // namespace detail

struct BenchmarkResult {
    std::vector<ReplicationRecord> replications;
    long failed = 0;
    std::vector<TruthRecord> truths;
    std::string manifest_path;
};

// Runs the full scenario x estimator grid: per-replication datasets and
// nuisance fits are derived from the root seed by counter-based streams,
// so reruns (at any worker count) are byte-identical.
inline BenchmarkResult run_benchmark(const BenchmarkConfig& config, const std::string& out_dir) {
    config.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    fs::create_directories(fs::path(out_dir) / "truth_cache");

    const RngStream root(config.seed, 0);

    // Nuisance-sharing groups: estimators that differ only by method reuse
    // one nuisance fit per replication.
    std::vector<std::string> est_group_key(config.estimators.size());
    std::vector<int> est_group(config.estimators.size());
    std::map<std::string, int> group_of;
    std::vector<const EstimatorConfig*> group_rep;
    for (std::size_t e = 0; e < config.estimators.size(); ++e) {
        const auto& ec = config.estimators[e];
        nlohmann::json gk;
        gk["out"] = to_json(ec.outcome_library);
        gk["exp"] = to_json(ec.exposure_library);
        gk["cf"] = ec.cf_folds;
        gk["V"] = ec.sl_folds;
        gk["trunc"] = {ec.trunc_lower, ec.trunc_upper};
        est_group_key[e] = gk.dump();
        auto [it, fresh] = group_of.try_emplace(est_group_key[e],
                                                static_cast<int>(group_rep.size()));
        if (fresh) group_rep.push_back(&ec);
        est_group[e] = it->second;
    }

    // Truths, cached by spec-content hash.
    BenchmarkResult result;
    std::vector<double> truth_psi(config.scenarios.size());
    std::map<std::string, TruthRecord> truth_by_name;
    for (std::size_t s = 0; s < config.scenarios.size(); ++s) {
        const auto& sc = config.scenarios[s];
        std::ifstream spec_in(sc.spec_path);
        std::stringstream spec_text;
        spec_text << spec_in.rdbuf();
        const std::string hash =
            detail::hex64(detail::fnv1a(spec_text.str() + ":" + std::to_string(config.truth_n)));
        const fs::path cache =
            fs::path(out_dir) / "truth_cache" / (sc.spec.name + "-" + hash + ".json");
        TruthRecord truth;
        bool loaded = false;
        if (fs::exists(cache)) {
            std::ifstream in(cache);
            nlohmann::json tj;
            in >> tj;
            truth.spec_name = tj.at("spec").get<std::string>();
            truth.psi = tj.at("psi").get<double>();
            truth.oracle_n = tj.at("oracle_n").get<long long>();
            truth.mcse = tj.at("mcse").get<double>();
            loaded = true;
        }
        if (!loaded) {
            truth = true_ace(sc.spec, config.truth_n, root.derive(7).derive(detail::fnv1a(sc.spec.name)));
            std::ofstream out(cache);
            out << to_json(truth).dump(2) << "\n";
        }
        truth_psi[s] = truth.psi;
        if (!truth_by_name.count(sc.spec.name)) {
            truth_by_name[sc.spec.name] = truth;
            result.truths.push_back(truth);
        }
    }

    // Task list: one task per (scenario, replication).
    struct Task {
        int scenario;
        int rep;
    };
    std::vector<Task> tasks;
    for (std::size_t s = 0; s < config.scenarios.size(); ++s)
        for (int r = 0; r < config.scenarios[s].reps; ++r)
            tasks.push_back({static_cast<int>(s), r});

    std::vector<std::vector<ReplicationRecord>> slots(tasks.size());
    parallel_for(static_cast<int>(tasks.size()), config.workers, [&](int t) {
        const auto [s, r] = tasks[static_cast<std::size_t>(t)];
        const auto& sc = config.scenarios[static_cast<std::size_t>(s)];
        RngStream data_rng =
            root.derive(1).derive(static_cast<std::uint64_t>(s)).derive(static_cast<std::uint64_t>(r));
        const Dataset data = generate(sc.spec, sc.n, data_rng);

        std::vector<std::optional<NuisanceFitResult>> group_fit(group_rep.size());
        std::vector<std::string> group_error(group_rep.size());
        auto& out = slots[static_cast<std::size_t>(t)];
        for (std::size_t e = 0; e < config.estimators.size(); ++e) {
            const auto& ec = config.estimators[e];
            const int g = est_group[e];
            ReplicationRecord rec;
            rec.scenario = sc.spec.name + "/n=" + std::to_string(sc.n);
            rec.replication = r;
            rec.method = to_string(ec.method);
            rec.library = ec.library_label();
            rec.cf_folds = ec.cf_folds;
            rec.n = static_cast<long>(sc.n);
            if (!group_fit[static_cast<std::size_t>(g)] &&
                group_error[static_cast<std::size_t>(g)].empty()) {
                try {
                    EstimatorConfig gc = *group_rep[static_cast<std::size_t>(g)];
                    gc.seed = root.derive(2)
                                  .derive(static_cast<std::uint64_t>(s))
                                  .derive(static_cast<std::uint64_t>(r))
                                  .derive(static_cast<std::uint64_t>(g))
                                  .key();
                    group_fit[static_cast<std::size_t>(g)] = fit_nuisances(data, gc);
                } catch (const std::exception& ex) {
                    group_error[static_cast<std::size_t>(g)] = ex.what();
                }
            }
            if (!group_fit[static_cast<std::size_t>(g)]) {
                rec.nonfinite = true;
                rec.error = group_error[static_cast<std::size_t>(g)];
                out.push_back(std::move(rec));
                continue;
            }
            try {
                const EffectEstimate est =
                    estimate_with_nuisances(ec.method, data, *group_fit[static_cast<std::size_t>(g)],
                                            ec.trunc_lower, ec.trunc_upper);
                rec.psi = est.psi;
                if (est.se) rec.se = *est.se;
                if (est.ci) {
                    rec.ci_low = est.ci->first;
                    rec.ci_high = est.ci->second;
                }
                rec.nonfinite = !std::isfinite(est.psi) || (est.se && !std::isfinite(*est.se));
            } catch (const std::exception& ex) {
                rec.nonfinite = true;
                rec.error = ex.what();
            }
            out.push_back(std::move(rec));
        }
    });

    // Flatten in deterministic (scenario, estimator, rep) order and flag
    // instability per reporting cell.
    std::vector<ReplicationRecord>& all = result.replications;
    for (std::size_t s = 0; s < config.scenarios.size(); ++s) {
        for (std::size_t e = 0; e < config.estimators.size(); ++e) {
            std::vector<ReplicationRecord> cell;
            for (std::size_t t = 0; t < tasks.size(); ++t) {
                if (tasks[t].scenario != static_cast<int>(s)) continue;
                cell.push_back(slots[t][e]);
            }
            flag_unstable(cell);
            for (auto& rec : cell) {
                if (!rec.error.empty()) ++result.failed;
                all.push_back(std::move(rec));
            }
        }
    }

    // replications.csv
    {
        std::ofstream out(fs::path(out_dir) / "replications.csv");
        out << "scenario,n,rep,method,library,cf_folds,psi,se,ci_low,ci_high,nonfinite,"
               "unstable,error\n";
        for (const auto& r : all) {
            out << r.scenario << "," << r.n << "," << r.replication << "," << r.method << ","
                << r.library << "," << r.cf_folds << "," << detail::fmt(r.psi) << ","
                << detail::fmt(r.se) << "," << detail::fmt(r.ci_low) << ","
                << detail::fmt(r.ci_high) << "," << (r.nonfinite ? 1 : 0) << ","
                << (r.unstable ? 1 : 0) << "," << r.error << "\n";
        }
    }

    // performance.csv, one row per cell and exclusion mode.
    {
        std::ofstream out(fs::path(out_dir) / "performance.csv");
        out << "scenario,method,library,cf_folds,n,S,excluded,bias,bias_mcse,relbias_pct,"
               "empse,empse_mcse,modse,modse_relerr_pct,modse_relerr_mcse,coverage_pct,"
               "coverage_mcse\n";
        std::vector<bool> modes;
        if (config.exclusion == "both") modes = {false, true};
        else if (config.exclusion == "none") modes = {false};
        else modes = {true};
        std::size_t cursor = 0;
        for (std::size_t s = 0; s < config.scenarios.size(); ++s) {
            for (std::size_t e = 0; e < config.estimators.size(); ++e) {
                const int reps = config.scenarios[s].reps;
                const std::span<const ReplicationRecord> cell(all.data() + cursor,
                                                              static_cast<std::size_t>(reps));
                cursor += static_cast<std::size_t>(reps);
                for (bool mode : modes) {
                    PerformanceReport pr;
                    try {
                        pr = compute_performance(cell, truth_psi[s], mode);
                    } catch (const std::exception&) {
                        continue;
                    }
                    const auto& r0 = cell[0];
                    out << r0.scenario << "," << r0.method << "," << r0.library << ","
                        << r0.cf_folds << "," << r0.n << "," << pr.used << "," << pr.excluded
                        << "," << detail::fmt(pr.bias.value) << "," << detail::fmt(pr.bias.mcse)
                        << ","
                        << (pr.relative_bias_pct ? detail::fmt(pr.relative_bias_pct->value) : "")
                        << "," << detail::fmt(pr.empirical_se.value) << ","
                        << detail::fmt(pr.empirical_se.mcse) << ","
                        << detail::fmt(pr.model_se.value) << ","
                        << detail::fmt(pr.model_se_relative_error_pct.value) << ","
                        << detail::fmt(pr.model_se_relative_error_pct.mcse) << ","
                        << detail::fmt(pr.coverage_pct.value) << ","
                        << detail::fmt(pr.coverage_pct.mcse) << "\n";
                }
            }
        }
    }

    // manifest.json
    {
        nlohmann::json m;
        m["acekit_version"] = ACEKIT_VERSION;
        m["config_hash"] = detail::hex64(detail::fnv1a(config.raw));
        m["seed"] = config.seed;
        m["truth_n"] = config.truth_n;
        m["failed"] = result.failed;
        m["replication_rows"] = static_cast<long>(all.size());
        m["scenarios"] = nlohmann::json::array();
        for (std::size_t s = 0; s < config.scenarios.size(); ++s) {
            const auto& sc = config.scenarios[s];
            nlohmann::json sj;
            sj["spec"] = sc.spec.name;
            sj["n"] = static_cast<long>(sc.n);
            sj["reps"] = sc.reps;
            sj["truth"] = to_json(truth_by_name.at(sc.spec.name));
            m["scenarios"].push_back(sj);
        }
        m["estimators"] = nlohmann::json::array();
        for (const auto& e : config.estimators) m["estimators"].push_back(to_json(e));
        const auto path = fs::path(out_dir) / "manifest.json";
        std::ofstream out(path);
        out << m.dump(2) << "\n";
        result.manifest_path = path.string();
    }
    return result;
}

}  // namespace acekit
