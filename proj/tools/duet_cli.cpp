// duet: dataset generation, discovery, assumption checks and experiment sweeps.
//
// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "duet/discovery.hpp"
#include "duet/experiments.hpp"
#include "duet/io.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failed = 1;
constexpr int exit_usage = 2;

// Usage errors that CLI11 cannot see (bad scenario files, bad option values).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr const char* scenario_help = R"(Scenario files are JSON objects (see docs/scenario.md):
  schema_version  1 (required)
  id              string (required)
  mechanisms      list of linear, i, ii, iii, anm, pnl, lsnm (required)
  d, n            ints (default 2, 2000)
  env_counts      list of auxiliary environment counts >= 2 (default [3])
  sources         {family: gaussian|gamma, mean, variance_range, shape_range, scale_range}
  lambda_range    [lo, hi] (default [1.5, 2.5]); lambda_signs: both|positive
  seeds           int >= 1 (default 50)
  estimator       {mode: stein|oracle, bandwidth_factor, ridge, standardize,
                   density_quantile, fd_step, inject_mean}
  taus            list of thresholds (default [0.25]); gap_tol, edge_prob
Unknown keys are rejected.)";

duet::Scenario scenario_or_usage(const std::string& path) {
    try {
        return duet::load_scenario(path);
    } catch (const duet::InvalidArgument& e) {
        throw UsageError(e.what());
    }
}

void emit(const duet::Json& j, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(out);
    if (!f) throw duet::IoError("cannot write " + out);
    f << j.dump(2) << '\n';
}

struct GenerateOpts {
    std::string scenario;
    std::string mechanism = "linear";
    std::string family = "gaussian";
    int d = 2;
    int k = 3;
    int n = 2000;
    std::uint64_t seed = 0;
    double edge_prob = 1.0;
    bool keep_sources = false;
    std::string out;
};

int cmd_generate(const GenerateOpts& o) {
    duet::Scenario sc;
    if (!o.scenario.empty()) {
        sc = scenario_or_usage(o.scenario);
    } else {
        sc.id = "generate";
        sc.d = o.d;
        sc.n = o.n;
        sc.edge_prob = o.edge_prob;
        try {
            sc.sources.family = duet::parse_source_family(o.family);
        } catch (const duet::InvalidArgument& e) {
            throw UsageError(e.what());
        }
    }
    duet::MechanismKind kind;
    try {
        kind = duet::parse_mechanism(o.mechanism);
        sc.validate();
    } catch (const duet::InvalidArgument& e) {
        throw UsageError(e.what());
    }
    if (o.k < 2) throw UsageError("--k must be >= 2 (both partition halves need an environment)");
    const duet::Instance inst = duet::draw_instance(sc, kind, o.k, o.seed);
    const auto ds = duet::generate_dataset(inst.model, inst.environments, sc.n, inst.data_seed, o.keep_sources);
    duet::save_dataset(ds, o.out);
    if (ds.sources)
        for (int e = 0; e <= ds.k(); ++e)
            duet::write_csv(std::filesystem::path(o.out) / ("sources_" + std::to_string(e) + ".csv"),
                            (*ds.sources)[static_cast<std::size_t>(e)]);
    std::cout << "wrote " << ds.k() + 1 << " environments of " << ds.n() << " x " << ds.d() << " to " << o.out << '\n';
    return exit_ok;
}

struct DiscoverOpts {
    std::string data;
    std::string mode = "stein";
    double tau = 0.25;
    double ridge = 1e-3;
    double bandwidth_factor = 2.0;
    bool standardize = true;
    double density_quantile = 0.5;
    double gap_tol = 1e-3;
    bool inject_mean = false;
    std::string out;
};

int cmd_discover(const DiscoverOpts& o) {
    auto ds = duet::load_dataset(o.data);
    duet::DiscoveryConfig cfg;
    cfg.tau = o.tau;
    cfg.gap_tol = o.gap_tol;
    cfg.density_quantile = o.density_quantile;
    if (o.mode == "oracle") {
        if (!ds.model) throw UsageError("oracle mode needs a dataset whose meta.json records the model");
        cfg.estimator = duet::OracleEstimator{*ds.model, ds.environments};
        if (o.inject_mean) {
            const duet::ScmModel model = *ds.model;
            ds = duet::with_mean_point(std::move(ds), model);
        }
    } else {
        if (o.inject_mean) throw UsageError("--inject-mean needs --mode oracle");
        duet::SteinConfig sc;
        sc.bandwidth = duet::MedianHeuristic{o.bandwidth_factor};
        sc.ridge = o.ridge;
        sc.standardize = o.standardize;
        cfg.estimator = sc;
    }
    try {
        const auto result = duet::discover(ds, cfg);
        emit(duet::to_json(result), o.out);
    } catch (const duet::PipelineError& e) {
        std::cerr << duet::Json{{"error", e.what()}, {"stage", e.stage()}}.dump() << '\n';
        return exit_failed;
    }
    return exit_ok;
}

int cmd_check(const std::string& scenario, std::uint64_t offset, double tol, const std::string& out) {
    const auto sc = scenario_or_usage(scenario);
    const auto report = duet::check_scenario_assumptions(sc, offset, tol);
    emit(report, out);
    return report["pass"].get<bool>() ? exit_ok : exit_failed;
}

int cmd_experiment(const std::string& scenario, const std::string& out, std::uint64_t offset) {
    const auto sc = scenario_or_usage(scenario);
    const auto rep = duet::run_scenario(sc, out, offset);
    std::cout << "mechanism,n_envs,tau,runs,errors,mean_shd,std_shd\n";
    for (const auto& s : rep.summary)
        std::cout << s.mechanism << ',' << s.n_envs << ',' << s.tau << ',' << s.runs << ',' << s.errors << ','
                  << s.mean_shd << ',' << s.std_shd << '\n';
    std::cout << "error rate " << rep.error_rate << '\n';
    if (sc.estimator.mode == duet::EstimatorMode::Oracle && rep.error_rate > 0.05) {
        std::cerr << "oracle-mode error rate above 5%\n";
        return exit_failed;
    }
    return exit_ok;
}

int cmd_oracle_validate(const duet::OracleValidationOptions& o) {
    const auto rep = duet::oracle_validate(o);
    std::cout << "max hessian-identity residual " << rep.max_residual << " over " << rep.residual_configs
              << " configurations\n";
    for (const auto& [mech, t] : rep.tally) std::cout << mech << ": SHD 0 on " << t.first << "/" << t.second << '\n';
    const bool ok = rep.all_zero();
    std::cout << (ok ? "all SHD 0" : "nonzero SHD or errors present") << '\n';
    return ok ? exit_ok : exit_failed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"duet: causal structure from rescaled environments"};
    app.footer(scenario_help);
    app.require_subcommand(1);

    GenerateOpts gen;
    auto* g = app.add_subcommand("generate", "Draw a random model and write a dataset directory");
    g->add_option("--scenario", gen.scenario, "Take d, n, sources and ranges from a scenario file");
    g->add_option("--mechanism", gen.mechanism, "linear, i, ii, iii, anm, pnl, lsnm");
    g->add_option("--family", gen.family, "gaussian or gamma");
    g->add_option("--d", gen.d, "Number of variables");
    g->add_option("--k", gen.k, "Number of auxiliary environments");
    g->add_option("--n", gen.n, "Samples per environment");
    g->add_option("--seed", gen.seed, "Seed");
    g->add_option("--edge-prob", gen.edge_prob, "Edge probability of the random DAG");
    g->add_flag("--keep-sources", gen.keep_sources, "Also write the latent sources (sources_<i>.csv)");
    g->add_option("--out", gen.out, "Output directory")->required();

    DiscoverOpts disc;
    auto* d = app.add_subcommand("discover", "Estimate the causal graph of a dataset directory");
    d->add_option("--data", disc.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    d->add_option("--mode", disc.mode, "stein or oracle")->check(CLI::IsMember({"stein", "oracle"}));
    d->add_option("--tau", disc.tau, "Edge threshold")->check(CLI::NonNegativeNumber);
    d->add_option("--ridge", disc.ridge, "Kernel ridge")->check(CLI::PositiveNumber);
    d->add_option("--bandwidth-factor", disc.bandwidth_factor, "Multiplier of the median heuristic")->check(CLI::PositiveNumber);
    d->add_flag("--standardize,!--no-standardize", disc.standardize, "Fit the kernel on standardized coordinates");
    d->add_option("--density-quantile", disc.density_quantile,
                  "Only samples above this kernel-density quantile may locate the mean")
        ->check(CLI::Range(0.0, 0.999));
    d->add_option("--gap-tol", disc.gap_tol, "Relative eigenvalue gap below which a warning is raised");
    d->add_flag("--inject-mean", disc.inject_mean, "Oracle mode: add f(mu) to every environment");
    d->add_option("--out", disc.out, "Result JSON path (stdout if omitted)");

    std::string check_scenario, check_out;
    std::uint64_t check_offset = 0;
    double check_tol = duet::default_check_tol;
    auto* c = app.add_subcommand("check-assumptions", "Check variability and distinct ratios of a scenario's rescalings");
    c->add_option("--scenario", check_scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    c->add_option("--seed-offset", check_offset, "First seed");
    c->add_option("--tol", check_tol, "Tolerance of both checks");
    c->add_option("--out", check_out, "Report path (stdout if omitted)");

    std::string exp_scenario, exp_out;
    std::uint64_t exp_offset = 0;
    auto* e = app.add_subcommand("experiment", "Run a scenario sweep and write the results CSV");
    e->add_option("--scenario", exp_scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    e->add_option("--out", exp_out, "Results CSV; the summary goes next to it")->required();
    e->add_option("--seed-offset", exp_offset, "First seed (for sharded sweeps)");

    duet::OracleValidationOptions ov;
    bool no_inject = false;
    auto* o = app.add_subcommand("oracle-validate", "Hessian-identity residuals and oracle-mode discovery");
    o->add_option("--d", ov.d, "Number of variables")->check(CLI::PositiveNumber);
    o->add_option("--seeds", ov.seeds, "Seeds per mechanism")->check(CLI::PositiveNumber);
    o->add_option("--configs", ov.configs, "Hessian-identity configurations")->check(CLI::NonNegativeNumber);
    o->add_option("--n", ov.n, "Samples per environment")->check(CLI::Range(2, 1000000));
    o->add_option("--k", ov.k, "Auxiliary environments")->check(CLI::Range(2, 1000));
    o->add_option("--tau", ov.tau, "Edge threshold")->check(CLI::NonNegativeNumber);
    o->add_option("--seed-offset", ov.seed_offset, "First seed");
    o->add_flag("--no-inject-mean", no_inject, "Do not add f(mu) to the samples");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        std::cerr << ex.what() << "\n\n" << app.help();
        return exit_usage;
    }

    try {
        if (*g) return cmd_generate(gen);
        if (*d) return cmd_discover(disc);
        if (*c) return cmd_check(check_scenario, check_offset, check_tol, check_out);
        if (*e) return cmd_experiment(exp_scenario, exp_out, exp_offset);
        if (*o) {
            ov.inject_mean = !no_inject;
            return cmd_oracle_validate(ov);
        }
    } catch (const UsageError& ex) {
        std::cerr << "usage error: " << ex.what() << "\n\n" << scenario_help << '\n';
        return exit_usage;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return exit_failed;
    }
    return exit_usage;
}
