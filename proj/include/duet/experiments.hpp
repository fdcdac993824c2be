#pragma once

// Scenario sweeps: random model instances per seed, discovery at every
// threshold, SHD against the true graph, CSV + summary persistence.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "duet/dag.hpp"
#include "duet/discovery.hpp"
#include "duet/errors.hpp"
#include "duet/io.hpp"
#include "duet/oracle.hpp"
#include "duet/rng.hpp"
#include "duet/scm.hpp"

namespace duet {

/// Structural Hamming distance: additions + removals + reversals, one each.
inline int shd(const Dag& estimate, const Dag& truth) {
    if (estimate.size() != truth.size()) throw InvalidArgument("shd: graphs have different node counts");
    int out = 0;
    for (int i = 0; i < truth.size(); ++i)
        for (int j = i + 1; j < truth.size(); ++j) {
            const int est = estimate.has_edge(i, j) ? 1 : (estimate.has_edge(j, i) ? 2 : 0);
            const int tru = truth.has_edge(i, j) ? 1 : (truth.has_edge(j, i) ? 2 : 0);
            out += est != tru;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Scenario

inline constexpr int scenario_schema_version = 1;

struct SourceSettings {
    SourceFamily family = SourceFamily::Gaussian;
    double mean = 1.0;                       // Gaussian
    std::array<double, 2> variance_range{1.0, 1.5};
    std::array<double, 2> shape_range{2.0, 2.5}; // Gamma
    std::array<double, 2> scale_range{1.75, 2.25};
};

enum class EstimatorMode { Stein, Oracle };

struct EstimatorSettings {
    EstimatorMode mode = EstimatorMode::Stein;
    double bandwidth_factor = 1.0;
    double ridge = 1e-3;
    bool standardize = false;
    double density_quantile = 0.0;
    double fd_step = default_fd_step;
    bool inject_mean = false; // oracle mode: add f(mu) to every environment
};

struct Scenario {
    std::string id = "scenario";
    std::vector<MechanismKind> mechanisms{MechanismKind::Linear};
    int d = 2;
    int n = 2000;
    std::vector<int> env_counts{3}; // auxiliary environments per dataset
    SourceSettings sources;
    std::array<double, 2> lambda_range{1.5, 2.5};
    bool lambda_both_signs = true;
    int seeds = 50;
    EstimatorSettings estimator;
    std::vector<double> taus{0.25};
    double gap_tol = 1e-3;
    double edge_prob = 1.0;

    void validate() const {
        if (id.empty() || id.find_first_of(",\n\r\"") != std::string::npos)
            throw InvalidArgument("scenario: id must be non-empty and free of commas, quotes and newlines");
        if (mechanisms.empty()) throw InvalidArgument("scenario: mechanisms must be non-empty");
        for (auto m : mechanisms)
            if (m == MechanismKind::Custom) throw InvalidArgument("scenario: custom mechanisms cannot be swept");
        if (d < 1) throw InvalidArgument("scenario: d must be >= 1");
        if (n < 2) throw InvalidArgument("scenario: n must be >= 2");
        if (env_counts.empty()) throw InvalidArgument("scenario: env_counts must be non-empty");
        for (int k : env_counts)
            if (k < 2) throw InvalidArgument("scenario: environment counts must be >= 2");
        if (seeds < 1) throw InvalidArgument("scenario: seeds must be >= 1");
        if (taus.empty()) throw InvalidArgument("scenario: taus must be non-empty");
        for (double t : taus)
            if (!(t >= 0.0) || !std::isfinite(t)) throw InvalidArgument("scenario: thresholds must be finite and >= 0");
        const auto range_ok = [](const std::array<double, 2>& r) { return r[0] > 0.0 && r[0] <= r[1] && std::isfinite(r[1]); };
        if (!range_ok(lambda_range)) throw InvalidArgument("scenario: lambda_range must satisfy 0 < lo <= hi");
        if (sources.family == SourceFamily::Gaussian && !range_ok(sources.variance_range))
            throw InvalidArgument("scenario: variance_range must satisfy 0 < lo <= hi");
        if (sources.family == SourceFamily::Gamma && (!range_ok(sources.shape_range) || !range_ok(sources.scale_range)))
            throw InvalidArgument("scenario: shape_range and scale_range must satisfy 0 < lo <= hi");
        if (!(edge_prob >= 0.0 && edge_prob <= 1.0)) throw InvalidArgument("scenario: edge_prob must be in [0, 1]");
        if (!(gap_tol >= 0.0)) throw InvalidArgument("scenario: gap_tol must be >= 0");
        if (!(estimator.ridge > 0.0) || !(estimator.bandwidth_factor > 0.0) || !(estimator.fd_step > 0.0))
            throw InvalidArgument("scenario: estimator parameters must be positive");
        if (!(estimator.density_quantile >= 0.0 && estimator.density_quantile < 1.0))
            throw InvalidArgument("scenario: density_quantile must be in [0, 1)");
    }
};

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidArgument("scenario: " + where + " must be an object");
    for (const auto& [key, _] : j.items())
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw InvalidArgument("scenario: unknown key '" + key + "' in " + where);
}

inline std::array<double, 2> range_from_json(const Json& j, const std::string& name) {
    if (!j.is_array() || j.size() != 2) throw InvalidArgument("scenario: " + name + " must be [lo, hi]");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline Json range_to_json(const std::array<double, 2>& r) { return Json::array({r[0], r[1]}); }

} // namespace detail

inline Scenario scenario_from_json(const Json& j) {
    detail::reject_unknown(j,
                           {"schema_version", "id", "mechanisms", "d", "n", "env_counts", "sources", "lambda_range",
                            "lambda_signs", "seeds", "estimator", "taus", "gap_tol", "edge_prob"},
                           "scenario");
    if (!j.contains("schema_version")) throw InvalidArgument("scenario: missing schema_version");
    if (j["schema_version"] != scenario_schema_version)
        throw InvalidArgument("scenario: unsupported schema_version " + j["schema_version"].dump());
    Scenario sc;
    try {
        sc.id = j.at("id").get<std::string>();
        sc.mechanisms.clear();
        for (const auto& m : j.at("mechanisms")) sc.mechanisms.push_back(parse_mechanism(m.get<std::string>()));
        if (j.contains("d")) sc.d = j["d"].get<int>();
        if (j.contains("n")) sc.n = j["n"].get<int>();
        if (j.contains("env_counts")) sc.env_counts = j["env_counts"].get<std::vector<int>>();
        if (j.contains("sources")) {
            const Json& s = j["sources"];
            detail::reject_unknown(s, {"family", "mean", "variance_range", "shape_range", "scale_range"}, "sources");
            sc.sources.family = parse_source_family(s.at("family").get<std::string>());
            if (s.contains("mean")) sc.sources.mean = s["mean"].get<double>();
            if (s.contains("variance_range")) sc.sources.variance_range = detail::range_from_json(s["variance_range"], "variance_range");
            if (s.contains("shape_range")) sc.sources.shape_range = detail::range_from_json(s["shape_range"], "shape_range");
            if (s.contains("scale_range")) sc.sources.scale_range = detail::range_from_json(s["scale_range"], "scale_range");
        }
        if (j.contains("lambda_range")) sc.lambda_range = detail::range_from_json(j["lambda_range"], "lambda_range");
        if (j.contains("lambda_signs")) {
            const auto signs = j["lambda_signs"].get<std::string>();
            if (signs != "both" && signs != "positive") throw InvalidArgument("scenario: lambda_signs must be 'both' or 'positive'");
            sc.lambda_both_signs = signs == "both";
        }
        if (j.contains("seeds")) sc.seeds = j["seeds"].get<int>();
        if (j.contains("estimator")) {
            const Json& e = j["estimator"];
            detail::reject_unknown(e, {"mode", "bandwidth_factor", "ridge", "standardize", "density_quantile", "fd_step", "inject_mean"},
                                   "estimator");
            const auto mode = e.value("mode", std::string("stein"));
            if (mode != "stein" && mode != "oracle") throw InvalidArgument("scenario: estimator mode must be 'stein' or 'oracle'");
            sc.estimator.mode = mode == "stein" ? EstimatorMode::Stein : EstimatorMode::Oracle;
            sc.estimator.bandwidth_factor = e.value("bandwidth_factor", sc.estimator.bandwidth_factor);
            sc.estimator.ridge = e.value("ridge", sc.estimator.ridge);
            sc.estimator.standardize = e.value("standardize", sc.estimator.standardize);
            sc.estimator.density_quantile = e.value("density_quantile", sc.estimator.density_quantile);
            sc.estimator.fd_step = e.value("fd_step", sc.estimator.fd_step);
            sc.estimator.inject_mean = e.value("inject_mean", sc.estimator.inject_mean);
        }
        if (j.contains("taus")) sc.taus = j["taus"].get<std::vector<double>>();
        if (j.contains("gap_tol")) sc.gap_tol = j["gap_tol"].get<double>();
        if (j.contains("edge_prob")) sc.edge_prob = j["edge_prob"].get<double>();
    } catch (const Json::exception& e) {
        throw InvalidArgument("scenario: " + std::string(e.what()));
    }
    sc.validate();
    return sc;
}

inline Json to_json(const Scenario& sc) {
    Json j;
    j["schema_version"] = scenario_schema_version;
    j["id"] = sc.id;
    Json mechs = Json::array();
    for (auto m : sc.mechanisms) mechs.push_back(std::string(to_string(m)));
    j["mechanisms"] = mechs;
    j["d"] = sc.d;
    j["n"] = sc.n;
    j["env_counts"] = sc.env_counts;
    Json src;
    src["family"] = std::string(to_string(sc.sources.family));
    if (sc.sources.family == SourceFamily::Gaussian) {
        src["mean"] = sc.sources.mean;
        src["variance_range"] = detail::range_to_json(sc.sources.variance_range);
    } else {
        src["shape_range"] = detail::range_to_json(sc.sources.shape_range);
        src["scale_range"] = detail::range_to_json(sc.sources.scale_range);
    }
    j["sources"] = src;
    j["lambda_range"] = detail::range_to_json(sc.lambda_range);
    j["lambda_signs"] = sc.lambda_both_signs ? "both" : "positive";
    j["seeds"] = sc.seeds;
    j["estimator"] = {{"mode", sc.estimator.mode == EstimatorMode::Stein ? "stein" : "oracle"},
                      {"bandwidth_factor", sc.estimator.bandwidth_factor},
                      {"ridge", sc.estimator.ridge},
                      {"standardize", sc.estimator.standardize},
                      {"density_quantile", sc.estimator.density_quantile},
                      {"fd_step", sc.estimator.fd_step},
                      {"inject_mean", sc.estimator.inject_mean}};
    j["taus"] = sc.taus;
    j["gap_tol"] = sc.gap_tol;
    j["edge_prob"] = sc.edge_prob;
    return j;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read scenario " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::exception& e) {
        throw InvalidArgument("scenario " + path.string() + ": " + e.what());
    }
    return scenario_from_json(j);
}

// ---------------------------------------------------------------------------
// Instances

/// One random model + environment set. Streams are keyed by (scenario id,
/// seed); the graph, source parameters and data are shared by all mechanisms
/// and environment counts of a seed.
struct Instance {
    ScmModel model;
    EnvironmentSet environments;
    std::uint64_t data_seed = 0;
};

inline std::uint64_t instance_key(const std::string& scenario_id, std::uint64_t seed) {
    return combine(hash_name(scenario_id), seed);
}

inline EnvironmentSet draw_environments(const Scenario& sc, int k, std::uint64_t seed) {
    Philox4x32 rng(combine(instance_key(sc.id, seed), static_cast<std::uint64_t>(k)), stream::rescalings);
    return EnvironmentSet::with_default_partition(
        draw_rescalings(k, sc.d, rng, sc.lambda_range[0], sc.lambda_range[1], sc.lambda_both_signs));
}

inline Instance draw_instance(const Scenario& sc, MechanismKind kind, int k, std::uint64_t seed) {
    const std::uint64_t key = instance_key(sc.id, seed);
    Philox4x32 graph_rng(key, stream::graph);
    const Dag dag = random_dag(sc.d, sc.edge_prob, graph_rng);
    Philox4x32 mech_rng(combine(key, hash_name(to_string(kind))), stream::mechanism);
    Mechanism mech = draw_mechanism(kind, dag, mech_rng);
    Philox4x32 src_rng(key, stream::source_params);
    SourceSpec src = sc.sources.family == SourceFamily::Gaussian
                         ? draw_gaussian_sources(sc.d, src_rng, sc.sources.variance_range[0],
                                                 sc.sources.variance_range[1], sc.sources.mean)
                         : draw_gamma_sources(sc.d, src_rng, sc.sources.shape_range[0], sc.sources.shape_range[1],
                                              sc.sources.scale_range[0], sc.sources.scale_range[1]);
    return {ScmModel(dag, std::move(mech), std::move(src)), draw_environments(sc, k, seed), key};
}

inline DiscoveryConfig discovery_config(const Scenario& sc, const Instance& inst) {
    DiscoveryConfig cfg;
    cfg.gap_tol = sc.gap_tol;
    if (sc.estimator.mode == EstimatorMode::Stein) {
        SteinConfig stein;
        stein.bandwidth = MedianHeuristic{sc.estimator.bandwidth_factor};
        stein.ridge = sc.estimator.ridge;
        stein.standardize = sc.estimator.standardize;
        cfg.estimator = stein;
        cfg.density_quantile = sc.estimator.density_quantile;
    } else {
        cfg.estimator = OracleEstimator{inst.model, inst.environments, sc.estimator.fd_step};
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Sweeps

struct ResultRow {
    std::string scenario;
    std::string mechanism;
    int n_envs = 0;
    std::uint64_t seed = 0;
    double tau = 0.0;
    int shd = 0;
    double runtime_ms = 0.0;
    std::string error; // empty on success, otherwise "<stage>"
};

inline constexpr const char* results_header = "scenario,mechanism,n_envs,seed,tau,shd,runtime_ms,error";

/// Rows for one (mechanism, k, seed) run, one per threshold.
inline std::vector<ResultRow> run_single(const Scenario& sc, MechanismKind kind, int k, std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<ResultRow> rows;
    std::optional<JacobianEstimate> est;
    std::optional<Dag> truth;
    std::string error;
    try {
        const Instance inst = draw_instance(sc, kind, k, seed);
        truth = inst.model.dag();
        MultiEnvDataset ds;
        try {
            ds = generate_dataset(inst.model, inst.environments, sc.n, inst.data_seed);
        } catch (const Error&) {
            throw PipelineError("generation", "dataset generation failed");
        }
        if (sc.estimator.mode == EstimatorMode::Oracle && sc.estimator.inject_mean) ds = with_mean_point(std::move(ds), inst.model);
        est = estimate_jacobian(ds, inst.environments.group1, inst.environments.group2, discovery_config(sc, inst));
    } catch (const PipelineError& e) {
        error = e.stage();
    } catch (const std::exception&) {
        error = "setup";
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const int sentinel = sc.d * (sc.d - 1) / 2;
    for (double tau : sc.taus) {
        ResultRow row{sc.id, std::string(to_string(kind)), k, seed, tau, sentinel, ms, error};
        if (est) {
            try {
                row.shd = shd(support_threshold(est->jacobian, tau).graph, *truth);
            } catch (const std::exception&) {
                row.error = "threshold";
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Worker count: hardware concurrency capped by DUET_THREADS.
inline int worker_count() {
    int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("DUET_THREADS")) {
        try {
            const int cap = std::stoi(env);
            if (cap >= 1) n = std::min(n, cap);
        } catch (const std::exception&) {
        }
    }
    return n;
}

/// All rows of a scenario in (mechanism, n_envs, seed, tau) order. Seeds are
/// seed_offset, ..., seed_offset + seeds - 1.
inline std::vector<ResultRow> evaluate_scenario(const Scenario& sc, std::uint64_t seed_offset = 0, int threads = 0) {
    sc.validate();
    struct Job {
        MechanismKind kind;
        int k;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto kind : sc.mechanisms)
        for (int k : sc.env_counts)
            for (int s = 0; s < sc.seeds; ++s) jobs.push_back({kind, k, seed_offset + static_cast<std::uint64_t>(s)});

    std::vector<std::vector<ResultRow>> results(jobs.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++)
            results[i] = run_single(sc, jobs[i].kind, jobs[i].k, jobs[i].seed);
    };
    const int n_threads = std::max(1, std::min<int>(threads > 0 ? threads : worker_count(), static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<ResultRow> rows;
    for (auto& r : results)
        for (auto& row : r) rows.push_back(std::move(row));
    return rows;
}

struct SummaryRow {
    std::string scenario;
    std::string mechanism;
    int n_envs = 0;
    double tau = 0.0;
    int runs = 0;
    int errors = 0;
    double mean_shd = 0.0;
    double std_shd = 0.0; // population standard deviation
};

inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
    std::vector<SummaryRow> out;
    std::vector<std::vector<int>> values;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) {
            return s.mechanism == r.mechanism && s.n_envs == r.n_envs && s.tau == r.tau && s.scenario == r.scenario;
        });
        if (it == out.end()) {
            out.push_back({r.scenario, r.mechanism, r.n_envs, r.tau, 0, 0, 0.0, 0.0});
            values.emplace_back();
            it = out.end() - 1;
        }
        const auto idx = static_cast<std::size_t>(it - out.begin());
        values[idx].push_back(r.shd);
        it->runs += 1;
        it->errors += !r.error.empty();
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        double sum = 0.0;
        for (int v : values[i]) sum += v;
        const double mean = sum / static_cast<double>(values[i].size());
        double sq = 0.0;
        for (int v : values[i]) sq += (v - mean) * (v - mean);
        out[i].mean_shd = mean;
        out[i].std_shd = std::sqrt(sq / static_cast<double>(values[i].size()));
    }
    return out;
}

inline std::string format_number(double v) {
    std::ostringstream ss;
    ss << std::setprecision(15) << v;
    return ss.str();
}

inline void write_results(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << results_header << '\n';
    for (const auto& r : rows) {
        std::ostringstream ms;
        ms << std::fixed << std::setprecision(3) << r.runtime_ms;
        out << r.scenario << ',' << r.mechanism << ',' << r.n_envs << ',' << r.seed << ',' << format_number(r.tau) << ','
            << r.shd << ',' << ms.str() << ',' << r.error << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

/// results.csv -> results.summary.csv
inline std::filesystem::path summary_path(const std::filesystem::path& results) {
    std::filesystem::path p = results;
    p.replace_extension(".summary.csv");
    return p;
}

inline void write_summary(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "scenario,mechanism,n_envs,tau,runs,errors,mean_shd,std_shd\n";
    for (const auto& s : rows)
        out << s.scenario << ',' << s.mechanism << ',' << s.n_envs << ',' << format_number(s.tau) << ',' << s.runs << ','
            << s.errors << ',' << format_number(s.mean_shd) << ',' << format_number(s.std_shd) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

struct ScenarioReport {
    std::vector<ResultRow> rows;
    std::vector<SummaryRow> summary;
    double error_rate = 0.0; // over runs, not rows
};

/// Runs the sweep and writes `out_path` plus its summary file.
inline ScenarioReport run_scenario(const Scenario& sc, const std::filesystem::path& out_path, std::uint64_t seed_offset = 0,
                                   int threads = 0) {
    ScenarioReport rep;
    rep.rows = evaluate_scenario(sc, seed_offset, threads);
    rep.summary = summarize(rep.rows);
    std::size_t errors = 0;
    for (const auto& r : rep.rows) errors += !r.error.empty();
    rep.error_rate = rep.rows.empty() ? 0.0 : static_cast<double>(errors) / static_cast<double>(rep.rows.size());
    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    write_results(out_path, rep.rows);
    write_summary(summary_path(out_path), rep.summary);
    return rep;
}

// ---------------------------------------------------------------------------
// Assumption report

/// Variability and distinct-ratio checks of every (n_envs, seed) rescaling
/// draw of a scenario. Gamma sources use the Hessian-difference Omega at the mean.
inline Json check_scenario_assumptions(const Scenario& sc, std::uint64_t seed_offset = 0, double tol = default_check_tol) {
    sc.validate();
    Json variability = Json::array();
    Json ratios = Json::array();
    for (int k : sc.env_counts)
        for (int s = 0; s < sc.seeds; ++s) {
            const std::uint64_t seed = seed_offset + static_cast<std::uint64_t>(s);
            const Instance inst = draw_instance(sc, sc.mechanisms.front(), k, seed);
            const auto var = check_sufficient_variability(inst.environments, tol);
            for (const auto& v : var.violations)
                variability.push_back({{"n_envs", k}, {"seed", seed}, {"coordinate", v.coordinate}, {"group", v.group}, {"margin", v.margin}});
            if (!var.pass()) continue; // ratios are undefined with a singular Omega_1
            const SourceSpec& src = inst.model.sources();
            const OmegaPair omega = src.family == SourceFamily::Gaussian ? omega_matrices(src, inst.environments)
                                                                         : omega_from_hessians(src, inst.environments, src.mean);
            try {
                const auto rat = check_distinct_ratios(omega, tol);
                for (const auto& c : rat.collisions)
                    ratios.push_back({{"n_envs", k}, {"seed", seed}, {"first", c.first}, {"second", c.second}, {"difference", c.difference}});
            } catch (const SingularError&) {
                ratios.push_back({{"n_envs", k}, {"seed", seed}, {"singular", true}});
            }
        }
    Json out;
    out["sufficient_variability"] = variability;
    out["distinct_ratios"] = ratios;
    out["pass"] = variability.empty() && ratios.empty();
    return out;
}

// ---------------------------------------------------------------------------
// Oracle validation

struct OracleValidationOptions {
    int d = 2;
    int seeds = 50;
    int configs = 20; // Hessian-identity configurations
    int n = 200;
    int k = 2;
    double tau = 0.25;
    std::uint64_t seed_offset = 0;
    bool inject_mean = true;
};

struct OracleValidationReport {
    double max_residual = 0.0;
    int residual_configs = 0;
    std::map<std::string, std::pair<int, int>> tally; // mechanism -> (SHD 0 runs, runs)
    std::vector<ResultRow> rows;

    bool all_zero() const {
        return std::all_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.shd == 0 && r.error.empty(); });
    }
};

inline OracleValidationReport oracle_validate(const OracleValidationOptions& opt, int threads = 0) {
    OracleValidationReport rep;
    // Hessian-difference identity at f(mu) over rotating mechanisms.
    Scenario id_sc;
    id_sc.id = "oracle-identity";
    id_sc.d = opt.d;
    const MechanismKind cycle[] = {MechanismKind::ArbitraryI, MechanismKind::ArbitraryII, MechanismKind::ArbitraryIII,
                                   MechanismKind::Linear};
    for (int c = 0; c < opt.configs; ++c) {
        const auto seed = opt.seed_offset + static_cast<std::uint64_t>(c);
        const Instance inst = draw_instance(id_sc, cycle[c % 4], opt.k, seed);
        rep.max_residual = std::max(rep.max_residual, verify_hessian_identity(inst.model, inst.environments).max());
        ++rep.residual_configs;
    }

    Scenario sc;
    sc.id = "oracle-validate";
    sc.mechanisms.assign(std::begin(builtin_mechanisms), std::end(builtin_mechanisms));
    sc.d = opt.d;
    sc.n = opt.n;
    sc.env_counts = {opt.k};
    sc.seeds = opt.seeds;
    sc.estimator.mode = EstimatorMode::Oracle;
    sc.estimator.inject_mean = opt.inject_mean;
    sc.taus = {opt.tau};
    rep.rows = evaluate_scenario(sc, opt.seed_offset, threads);
    for (const auto& r : rep.rows) {
        auto& t = rep.tally[r.mechanism];
        t.first += r.shd == 0 && r.error.empty();
        t.second += 1;
    }
    return rep;
}

} // namespace duet
