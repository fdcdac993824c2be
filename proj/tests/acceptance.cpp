// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// Experiment CSVs are written under $DUET_ACCEPTANCE_OUT (default
// ./acceptance_out). Expect roughly 45 minutes on a single core.
// Arguments, if given, are 1-based criterion numbers to run.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "duet/experiments.hpp"
#include "duet/stein.hpp"

using namespace duet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int precision = 3) {
    std::ostringstream ss;
    ss << std::setprecision(precision) << v;
    return ss.str();
}

fs::path out_dir() {
    const char* env = std::getenv("DUET_ACCEPTANCE_OUT");
    fs::path p = env ? fs::path(env) : fs::path("acceptance_out");
    fs::create_directories(p);
    return p;
}

// Mean SHD per (mechanism, n_envs, tau).
using MeanTable = std::map<std::tuple<std::string, int, double>, double>;

MeanTable mean_table(const std::vector<SummaryRow>& summary) {
    MeanTable t;
    for (const auto& s : summary) t[{s.mechanism, s.n_envs, s.tau}] = s.mean_shd;
    return t;
}

// ---------------------------------------------------------------------------

Outcome hessian_identity() {
    const auto start = Clock::now();
    OracleValidationOptions opt;
    opt.d = 2;
    opt.configs = 20;
    opt.seeds = 1;
    const auto rep = oracle_validate(opt, 1);
    const double secs = seconds_since(start);
    return {rep.max_residual < 1e-3 && rep.residual_configs == 20 && secs < 60.0,
            "max residual " + fmt(rep.max_residual) + " over " + std::to_string(rep.residual_configs) +
                " configurations, " + fmt(secs) + " s"};
}

Outcome oracle_recovery() {
    const auto start = Clock::now();
    std::string detail;
    bool ok = true;
    for (int d : {2, 3}) {
        OracleValidationOptions opt;
        opt.d = d;
        opt.configs = 0;
        opt.seeds = 50;
        opt.k = 2;
        const auto rep = oracle_validate(opt);
        for (const auto& [mech, t] : rep.tally) {
            ok = ok && t.first == 50 && t.second == 50;
            if (t.first != t.second) detail += " d" + std::to_string(d) + "/" + mech + " " + std::to_string(t.first) + "/50";
        }
    }
    const double secs = seconds_since(start);
    ok = ok && secs < 120.0;
    return {ok, (detail.empty() ? std::string("SHD 0 on 50/50 for every mechanism, d in {2, 3}") : "misses:" + detail) +
                    ", " + fmt(secs) + " s"};
}

Outcome omega_closed_form() {
    double worst = 0.0;
    int verdict_mismatch = 0, rank_deficient = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const int d = 2 + static_cast<int>(seed % 3);
        const int k = 2 + static_cast<int>(seed % 4);
        Philox4x32 sr(seed, stream::source_params), lr(seed, stream::rescalings);
        const SourceSpec spec = draw_gaussian_sources(d, sr);
        Matrix lambdas = draw_rescalings(k, d, lr);
        // Every fourth configuration gets unit rescalings on one coordinate of
        // the first group, which makes Omega_1 singular there.
        if (seed % 4 == 3)
            for (int e = 0; e < (k + 1) / 2; ++e) lambdas(e, static_cast<int>(seed % d)) = (e % 2 ? -1.0 : 1.0);
        const auto env = EnvironmentSet::with_default_partition(lambdas);
        const auto closed = omega_matrices(spec, env);
        const auto def = omega_from_hessians(spec, env, spec.mean);
        worst = std::max({worst, (closed.omega1 - def.omega1).cwiseAbs().maxCoeff(),
                          (closed.omega2 - def.omega2).cwiseAbs().maxCoeff()});
        verdict_mismatch += closed.full_rank() != check_sufficient_variability(env).pass();
        rank_deficient += !closed.full_rank();
    }
    return {worst <= 1e-12 && verdict_mismatch == 0,
            "max |closed - definition| " + fmt(worst) + ", verdict mismatches " + std::to_string(verdict_mismatch) + " (" +
                std::to_string(rank_deficient) + " rank-deficient cases)"};
}

Outcome assumption_checkers() {
    int violations = 0, collisions = 0;
    const int ks[] = {2, 3, 6, 9};
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        const int k = ks[seed % 4];
        const int d = 2 + static_cast<int>((seed / 4) % 3);
        Philox4x32 lr(seed, stream::rescalings);
        const auto env = EnvironmentSet::with_default_partition(draw_rescalings(k, d, lr));
        const auto var = check_sufficient_variability(env, 1e-9);
        violations += static_cast<int>(var.violations.size());
        if (!var.pass()) continue;
        const auto spec = SourceSpec::gaussian(Vector::Ones(d), Vector::Ones(d));
        collisions += static_cast<int>(check_distinct_ratios(omega_matrices(spec, env), 1e-9).collisions.size());
    }
    return {violations == 0 && collisions == 0,
            "10000 draws: " + std::to_string(violations) + " variability violations, " + std::to_string(collisions) +
                " ratio collisions"};
}

Outcome stein_accuracy() {
    // Best setting of a grid search over bandwidth factor, ridge and standardization.
    SteinConfig cfg;
    cfg.bandwidth = MedianHeuristic{2.3};
    cfg.ridge = 0.5;
    cfg.standardize = true;
    double score_mse = 0.0, hess_err = 0.0;
    const int seeds = 10, n = 2000;
    for (int s = 0; s < seeds; ++s) {
        Philox4x32 rng(static_cast<std::uint64_t>(s), 1);
        Matrix x(n, 2);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 2; ++j) x(i, j) = rng.normal();
        const SteinEstimator est(x, cfg);
        score_mse += (est.scores() + x).squaredNorm() / static_cast<double>(x.size()) / seeds;
        double h = 0.0;
        for (int i = 0; i < n; ++i) h += (est.hessian(i) + Matrix::Identity(2, 2)).norm();
        hess_err += h / n / seeds;
    }
    return {score_mse < 0.05 && hess_err < 0.15,
            "score MSE " + fmt(score_mse) + " (< 0.05), Hessian mean Frobenius error " + fmt(hess_err) + " (< 0.15)"};
}

Outcome gaussian_sweep(const fs::path& dir) {
    const auto start = Clock::now();
    std::map<std::string, std::pair<double, std::string>> best; // mechanism -> (mean SHD, setting)
    for (const char* name : {"gaussian_k3", "gaussian_k3_ridge1e-2"}) {
        const Scenario sc = load_scenario(fs::path(DUET_SCENARIO_DIR) / (std::string(name) + ".json"));
        const auto rep = run_scenario(sc, dir / (std::string(name) + ".csv"));
        for (const auto& s : rep.summary) {
            auto it = best.find(s.mechanism);
            if (it == best.end() || s.mean_shd < it->second.first)
                best[s.mechanism] = {s.mean_shd, "ridge " + fmt(sc.estimator.ridge) + " tau " + fmt(s.tau)};
        }
    }
    const double secs = seconds_since(start);
    bool ok = secs < 1800.0 && best.size() == 7;
    std::string detail;
    for (const auto& [mech, b] : best) {
        ok = ok && b.first <= 0.25;
        detail += mech + " " + fmt(b.first) + " (" + b.second + "); ";
    }
    return {ok, detail + fmt(secs) + " s"};
}

Outcome gamma_ordering(const fs::path& dir) {
    const Scenario a1 = load_scenario(fs::path(DUET_SCENARIO_DIR) / "gamma_alpha1.json");
    Scenario a2 = load_scenario(fs::path(DUET_SCENARIO_DIR) / "gamma_alpha2.json");
    a2.env_counts = {9};
    const auto r1 = run_scenario(a1, dir / "gamma_alpha1.csv");
    const auto r2 = run_scenario(a2, dir / "gamma_alpha2_9.csv");

    // Mean SHD over mechanisms at the best tau of each (scenario, env count).
    const auto best_mean = [](const std::vector<SummaryRow>& summary, int k, const std::vector<double>& taus) {
        double best = std::numeric_limits<double>::infinity();
        for (double tau : taus) {
            double sum = 0.0;
            int count = 0;
            for (const auto& s : summary)
                if (s.n_envs == k && s.tau == tau) {
                    sum += s.mean_shd;
                    ++count;
                }
            if (count) best = std::min(best, sum / count);
        }
        return best;
    };
    const double hard = best_mean(r2.summary, 9, a2.taus);
    bool ok = hard <= 0.35;
    std::string detail = "alpha [2, 2.5] at 9 envs " + fmt(hard) + " (<= 0.35); alpha [0.5, 1]:";
    for (int k : a1.env_counts) {
        const double easy = best_mean(r1.summary, k, a1.taus);
        ok = ok && easy - hard >= 0.15;
        detail += " " + std::to_string(k) + " envs " + fmt(easy) + " (gap " + fmt(easy - hard) + ")";
    }
    detail += "; error rates " + fmt(r1.error_rate) + ", " + fmt(r2.error_rate);
    return {ok, detail};
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + DUET_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string csv_without_runtime(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1)
            cells.push_back(line.substr(start, pos - start));
        cells.push_back(line.substr(start));
        if (cells.size() > 6) cells.erase(cells.begin() + 6);
        for (const auto& c : cells) out << c << ',';
        out << '\n';
    }
    return out.str();
}

Outcome determinism(const fs::path& dir) {
    Scenario sc = load_scenario(fs::path(DUET_SCENARIO_DIR) / "gaussian_k3.json");
    sc.id = "determinism";
    sc.seeds = 3;
    sc.n = 500;
    {
        std::ofstream f(dir / "determinism.json");
        f << to_json(sc).dump(2) << '\n';
    }
    const std::string scenario = (dir / "determinism.json").string();
    const int c1 = run_cli("experiment --scenario \"" + scenario + "\" --out \"" + (dir / "det_a.csv").string() + "\"");
    const int c2 = run_cli("experiment --scenario \"" + scenario + "\" --out \"" + (dir / "det_b.csv").string() + "\"");
    if (c1 != 0 || c2 != 0) return {false, "experiment exited with " + std::to_string(c1) + ", " + std::to_string(c2)};
    const std::string a = csv_without_runtime(dir / "det_a.csv");
    const std::string b = csv_without_runtime(dir / "det_b.csv");
    const auto rows = std::count(a.begin(), a.end(), '\n') - 1;
    return {!a.empty() && a == b, std::to_string(rows) + " rows, identical apart from runtime_ms: " + (a == b ? "yes" : "no")};
}

} // namespace

int main(int argc, char** argv) {
    const fs::path dir = out_dir();
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"hessian-difference identity at f(mu), 20 configurations, < 1e-3, < 1 min", hessian_identity},
        {"oracle discovery with k=2, SHD 0 on 50/50 seeds, d in {2, 3}, < 2 min", oracle_recovery},
        {"Omega closed form equals Hessian definition to 1e-12, verdicts agree", omega_closed_form},
        {"assumption checkers: no violations or collisions over 1e4 draws", assumption_checkers},
        {"Stein accuracy on N(0, I2), n=2000, 10 seeds", stein_accuracy},
        {"3-environment sweep: mean SHD <= 0.25 per mechanism at best tau/ridge, < 30 min", [&] { return gaussian_sweep(dir); }},
        {"gamma ordering: alpha [0.5,1] exceeds alpha [2,2.5]@9 by >= 0.15; latter <= 0.35", [&] { return gamma_ordering(dir); }},
        {"repeated experiment runs give identical CSVs apart from runtime", [&] { return determinism(dir); }},
    };
    std::vector<bool> selected(criteria.size(), argc == 1);
    for (int i = 1; i < argc; ++i) {
        const int c = std::atoi(argv[i]);
        if (c < 1 || c > static_cast<int>(criteria.size())) {
            std::cerr << "unknown criterion " << argv[i] << '\n';
            return 2;
        }
        selected[static_cast<std::size_t>(c - 1)] = true;
    }
    int failures = 0, ran = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!selected[i]) continue;
        const auto& [name, fn] = criteria[i];
        ++ran;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << " | " << o.detail << std::endl;
    }
    std::cout << (ran - failures) << "/" << ran << " criteria passed"
              << std::endl;
    return failures ? 1 : 0;
}
