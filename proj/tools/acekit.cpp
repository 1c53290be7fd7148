// Command-line front end: single-dataset estimation, scenario
// simulation, truth computation, power calibration and benchmark grids.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "acekit/benchmark.hpp"
#include "acekit/crossfit.hpp"
#include "acekit/dgm.hpp"
#include "acekit/version.hpp"

namespace {

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw acekit::ValidationError("cannot open file: " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_estimate(const std::string& data_path, const std::string& schema_path,
                 const std::string& config_path, std::uint64_t seed_override,
                 bool seed_given) {
    const acekit::Schema schema = acekit::Schema::from_json(read_json(schema_path));
    const acekit::Dataset data = acekit::load_dataset(data_path, schema);
    acekit::EstimatorConfig config = acekit::estimator_config_from_json(read_json(config_path));
    if (seed_given) config.seed = seed_override;
    const acekit::EffectEstimate est = acekit::estimate_effect(data, config);
    std::cout << acekit::to_json(est).dump(2) << "\n";
    return 0;
}

int run_simulate(const std::string& spec_path, long n, std::uint64_t seed,
                 const std::string& out_path, long long truth_n, bool with_truth) {
    const acekit::DgmSpec spec = acekit::load_dgm(spec_path);
    const acekit::Dataset data = acekit::generate(spec, n, acekit::RngStream(seed, 0));
    acekit::write_dataset_csv(data, out_path);
    nlohmann::json side;
    side["spec"] = spec.name;
    side["n"] = n;
    side["seed"] = seed;
    if (with_truth) {
        const acekit::TruthRecord t =
            acekit::true_ace(spec, truth_n, acekit::RngStream(seed, 1));
        side["truth"] = acekit::to_json(t);
    }
    std::ofstream sidecar(out_path + ".truth.json");
    sidecar << side.dump(2) << "\n";
    std::cout << "wrote " << out_path << " and sidecar\n";
    return 0;
}

int run_truth(const std::string& spec_path, long long n, std::uint64_t seed,
              const std::string& out_path) {
    const acekit::DgmSpec spec = acekit::load_dgm(spec_path);
    const acekit::TruthRecord t = acekit::true_ace(spec, n, acekit::RngStream(seed, 0));
    const nlohmann::json j = acekit::to_json(t);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << j.dump(2) << "\n";
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_calibrate(const std::string& spec_path, long n, double target, int reps,
                  std::uint64_t seed, int workers, const std::string& write_spec) {
    const acekit::DgmSpec spec = acekit::load_dgm(spec_path);
    const acekit::CalibrationResult res = acekit::calibrate_effect(
        spec, n, target, reps, acekit::RngStream(seed, 0), workers);
    nlohmann::json j;
    j["spec"] = spec.name;
    j["n"] = n;
    j["beta"] = res.beta;
    j["achieved_power"] = res.achieved_power;
    j["outcome_intercept"] = res.spec.outcome.intercept;
    if (!write_spec.empty()) {
        nlohmann::json sj = read_json(spec_path);
        sj["outcome"]["beta"] = res.beta;
        sj["outcome"]["intercept"] = res.spec.outcome.intercept;
        std::ofstream out(write_spec);
        out << sj.dump(2) << "\n";
        j["written"] = write_spec;
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_benchmark_cmd(const std::string& config_path, const std::string& out_dir,
                      int workers_override, bool exclude_flagged) {
    const std::string base_dir = std::filesystem::path(config_path).parent_path().string();
    acekit::BenchmarkConfig config =
        acekit::benchmark_config_from_json(read_json(config_path), base_dir);
    config.raw = read_text(config_path);
    if (workers_override > 0) config.workers = workers_override;
    if (exclude_flagged) config.exclusion = "flagged";
    const acekit::BenchmarkResult res = acekit::run_benchmark(config, out_dir);
    std::cout << "benchmark complete: " << res.replications.size() << " replication rows, "
              << res.failed << " failed\n"
              << "manifest: " << res.manifest_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acekit: doubly robust causal effect estimation with ensemble nuisance "
                 "models, cross-fitting and a simulation benchmark harness"};
    app.set_version_flag("--version", ACEKIT_VERSION);
    app.require_subcommand(1);

    // estimate
    std::string data_path, schema_path, est_config;
    std::uint64_t seed = 0;
    auto* est = app.add_subcommand("estimate", "Estimate the ACE on a CSV dataset");
    est->add_option("--data", data_path, "CSV file")->required();
    est->add_option("--schema", schema_path, "schema JSON")->required();
    est->add_option("--config", est_config, "estimator config JSON")->required();
    auto* est_seed = est->add_option("--seed", seed, "override config seed");

    // simulate
    std::string spec_path, out_path;
    long sim_n = 0;
    long long truth_n = 1000000;
    bool no_truth = false;
    auto* sim = app.add_subcommand("simulate", "Generate a dataset from a DGM spec");
    sim->add_option("--spec", spec_path, "DGM spec JSON")->required();
    sim->add_option("--n", sim_n, "sample size")->required();
    sim->add_option("--seed", seed, "random seed");
    sim->add_option("--out", out_path, "output CSV")->required();
    sim->add_option("--truth-n", truth_n, "oracle size for the sidecar truth");
    sim->add_flag("--no-truth", no_truth, "skip the truth computation in the sidecar");

    // truth
    std::string truth_out;
    long long oracle_n = 5000000;
    auto* tru = app.add_subcommand("truth", "Compute the true ACE of a DGM spec empirically");
    tru->add_option("--spec", spec_path, "DGM spec JSON")->required();
    tru->add_option("--n", oracle_n, "oracle sample size");
    tru->add_option("--seed", seed, "random seed");
    tru->add_option("--out", truth_out, "also write the record to this file");

    // calibrate
    double target_power = 0.8;
    int reps = 300;
    int workers = 1;
    std::string write_spec;
    auto* cal = app.add_subcommand("calibrate",
                                   "Calibrate the exposure effect to a target rejection rate");
    cal->add_option("--spec", spec_path, "DGM spec JSON")->required();
    cal->add_option("--n", sim_n, "sample size")->required();
    cal->add_option("--target", target_power, "target power");
    cal->add_option("--reps", reps, "replications per power evaluation");
    cal->add_option("--seed", seed, "random seed");
    cal->add_option("--workers", workers, "worker threads");
    cal->add_option("--write-spec", write_spec, "write the calibrated spec JSON here");

    // benchmark
    std::string bench_config, bench_out;
    int bench_workers = 0;
    bool exclude_flagged = false;
    auto* ben = app.add_subcommand("benchmark", "Run a scenario x estimator simulation grid");
    ben->add_option("--config", bench_config, "benchmark config JSON")->required();
    ben->add_option("--out", bench_out, "output directory")->required();
    ben->add_option("--workers", bench_workers, "worker threads (overrides config)");
    ben->add_flag("--exclude-flagged", exclude_flagged,
                  "report only the flagged-exclusion aggregation mode");

    CLI11_PARSE(app, argc, argv);

    try {
        if (est->parsed())
            return run_estimate(data_path, schema_path, est_config, seed,
                                est_seed->count() > 0);
        if (sim->parsed())
            return run_simulate(spec_path, sim_n, seed, out_path, truth_n, !no_truth);
        if (tru->parsed()) return run_truth(spec_path, oracle_n, seed, truth_out);
        if (cal->parsed())
            return run_calibrate(spec_path, sim_n, target_power, reps, seed, workers,
                                 write_spec);
        if (ben->parsed())
            return run_benchmark_cmd(bench_config, bench_out, bench_workers, exclude_flagged);
    } catch (const acekit::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "estimation error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
