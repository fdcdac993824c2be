#pragma once

// Recovery of the support of the inverse mixing Jacobian (and so of the
// causal graph) from a base environment and rescaled auxiliary environments.
//
// Pipeline:
//   1. score / Hessian estimates for every environment (Stein or oracle);
//   2. per auxiliary environment, pair base observations with their nearest
//      auxiliary observation and pick the pair whose scores agree best: the
//      score difference vanishes only at the image of the source mean;
//   3. summed Hessian differences at those pairs, one per environment group:
//      H_l = J^T Omega_l J with J = J_{f^{-1}} and Omega_l diagonal;
//   4. M = H_1^{-1} H_2 = J^{-1} (Omega_1^{-1} Omega_2) J, so the inverse of
//      M's eigenvector matrix is J up to row scaling and row permutation;
//   5. the row permutation is the unique one with a nonzero diagonal for an
//      acyclic graph; rows are then normalized to a unit diagonal;
//   6. thresholding the off-diagonal entries gives the edges.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "duet/dag.hpp"
#include "duet/errors.hpp"
#include "duet/oracle.hpp"
#include "duet/scm.hpp"
#include "duet/stein.hpp"

namespace duet {

// ---------------------------------------------------------------------------
// Mean location

/// pairs[i] = argmin_j |X0[i] - Xe[j]|, ties to the smallest j.
inline std::vector<int> pair_observations(const Matrix& base, const Matrix& aux) {
    if (base.rows() != aux.rows() || base.cols() != aux.cols())
        throw InvalidArgument("pair_observations: datasets must have the same shape");
    const Eigen::Index n = base.rows();
    std::vector<int> pairs(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (Eigen::Index j = 0; j < aux.rows(); ++j) {
            const double dist = (base.row(i) - aux.row(j)).squaredNorm();
            if (dist < best) {
                best = dist;
                arg = static_cast<int>(j);
            }
        }
        pairs[static_cast<std::size_t>(i)] = arg;
    }
    return pairs;
}

struct MeanPair {
    int env = 0;        // auxiliary environment, 1..k
    int base_index = 0; // sample in the base environment
    int env_index = 0;  // paired sample in environment `env`
    double score_difference = 0.0;
};

struct MeanPairing {
    std::vector<MeanPair> pairs; // pairs[e - 1] for environment e
    // Sum over environments of the paired score differences, minimized over
    // base samples; reported alongside the per-environment rule.
    int aggregate_index = 0;
    double aggregate_value = 0.0;
    bool degenerate = false; // score differences vanish everywhere

    const MeanPair& for_env(int e) const { return pairs.at(static_cast<std::size_t>(e - 1)); }
};

/// `scores[e]` is the n x d score field of environment e (0 = base) and
/// `pairings[e - 1]` the output of `pair_observations(X0, Xe)`. When
/// `eligible` is non-empty, eligible[e][i] == 0 excludes sample i of
/// environment e from being selected (as base sample or as paired sample).
inline MeanPairing locate_mean(const std::vector<Matrix>& scores, const std::vector<std::vector<int>>& pairings,
                               const std::vector<std::vector<char>>& eligible = {}) {
    if (scores.size() < 2 || pairings.size() + 1 != scores.size())
        throw InvalidArgument("locate_mean: need base scores plus one pairing per auxiliary environment");
    const Matrix& s0 = scores[0];
    const Eigen::Index n = s0.rows();
    if (!eligible.empty() && eligible.size() != scores.size())
        throw InvalidArgument("locate_mean: need one eligibility mask per environment");
    const auto ok = [&](std::size_t e, Eigen::Index i) {
        return eligible.empty() || eligible[e].at(static_cast<std::size_t>(i)) != 0;
    };
    MeanPairing out;
    Matrix aggregate = Matrix::Zero(n, s0.cols());
    std::vector<double> all_diffs;
    for (std::size_t e = 1; e < scores.size(); ++e) {
        const auto& pairs = pairings[e - 1];
        if (static_cast<Eigen::Index>(pairs.size()) != n) throw InvalidArgument("locate_mean: pairing size mismatch");
        MeanPair best{static_cast<int>(e), 0, 0, std::numeric_limits<double>::infinity()};
        for (Eigen::Index i = 0; i < n; ++i) {
            const int j = pairs[static_cast<std::size_t>(i)];
            if (j < 0 || j >= scores[e].rows()) throw InvalidArgument("locate_mean: paired index out of range");
            const auto delta = (s0.row(i) - scores[e].row(j)).eval();
            aggregate.row(i) += delta;
            const double diff = delta.norm();
            all_diffs.push_back(diff);
            if (diff < best.score_difference && ok(0, i) && ok(e, j))
                best = {static_cast<int>(e), static_cast<int>(i), j, diff};
        }
        if (!std::isfinite(best.score_difference))
            throw InvalidArgument("locate_mean: no eligible pair for environment " + std::to_string(e));
        out.pairs.push_back(best);
    }
    Vector agg_norm = aggregate.rowwise().norm();
    for (Eigen::Index i = 0; i < n; ++i)
        if (!ok(0, i)) agg_norm[i] = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    out.aggregate_value = agg_norm.minCoeff(&arg);
    out.aggregate_index = static_cast<int>(arg);

    std::nth_element(all_diffs.begin(), all_diffs.begin() + static_cast<std::ptrdiff_t>(all_diffs.size() / 2),
                     all_diffs.end());
    const double median_diff = all_diffs[all_diffs.size() / 2];
    const double typical_score = s0.rowwise().norm().mean();
    out.degenerate = median_diff <= 1e-6 * (1.0 + typical_score);
    return out;
}

// ---------------------------------------------------------------------------
// Hessian differences and the similarity matrix

/// Hessian estimate of environment `env` at sample `index`.
using HessianLookup = std::function<Matrix(int env, int index)>;

/// H_l = sum_{e in I_l} (H[0, m_1] - H[e, m_e]) with (m_1, m_e) the mean pair of e.
inline std::pair<Matrix, Matrix> hessian_differences(const HessianLookup& hessian, const MeanPairing& pairing,
                                                     const std::vector<int>& group1, const std::vector<int>& group2) {
    if (group1.empty() || group2.empty())
        throw InvalidArgument("hessian_differences: both environment groups must be non-empty");
    const auto sum = [&](const std::vector<int>& group) {
        Matrix acc;
        for (int e : group) {
            const MeanPair& p = pairing.for_env(e);
            Matrix delta = hessian(0, p.base_index) - hessian(e, p.env_index);
            if (acc.size() == 0)
                acc = std::move(delta);
            else
                acc += delta;
        }
        return Matrix(0.5 * (acc + acc.transpose()));
    };
    return {sum(group1), sum(group2)};
}

/// Overload for fully materialized fields: hessians[e][i].
inline std::pair<Matrix, Matrix> hessian_differences(const std::vector<std::vector<Matrix>>& hessians,
                                                     const MeanPairing& pairing, const std::vector<int>& group1,
                                                     const std::vector<int>& group2) {
    return hessian_differences(
        [&](int e, int i) { return hessians.at(static_cast<std::size_t>(e)).at(static_cast<std::size_t>(i)); },
        pairing, group1, group2);
}

inline double condition_number(const Matrix& a) {
    Eigen::JacobiSVD<Matrix> svd(a);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0) return 0.0;
    const double smallest = sv[sv.size() - 1];
    return smallest > 0.0 ? sv[0] / smallest : std::numeric_limits<double>::infinity();
}

struct Similarity {
    Matrix m;               // H_1^{-1} H_2
    Matrix balanced;        // D^{-1} m D, computed from D H_l D
    Vector scaling;         // diagonal of D, 1 / sqrt|diag H_1|
    double condition = 0.0; // of D H_1 D
};

/// Solves H1 M = H2. Both matrices are first equilibrated symmetrically by
/// D = diag(1 / sqrt|H1_jj|); the condition check applies to D H1 D, so that
/// badly scaled variables alone do not count as singular.
inline Similarity similarity_matrix(const Matrix& h1, const Matrix& h2) {
    if (h1.rows() != h1.cols() || h1.rows() != h2.rows() || h2.rows() != h2.cols())
        throw InvalidArgument("similarity_matrix: expected two square matrices of equal size");
    if (!h1.allFinite() || !h2.allFinite()) throw SingularError("Hessian differences are not finite");
    Similarity out;
    out.scaling = h1.diagonal().cwiseAbs().unaryExpr([](double v) { return v > 0.0 ? 1.0 / std::sqrt(v) : 1.0; });
    const auto dmat = out.scaling.asDiagonal();
    const Matrix b1 = dmat * h1 * dmat;
    const Matrix b2 = dmat * h2 * dmat;
    out.condition = condition_number(b1);
    if (!std::isfinite(out.condition) || out.condition > 1e12)
        throw SingularError("Hessian difference of the first environment group is singular (condition " +
                            std::to_string(out.condition) +
                            "); the rescalings likely lack sufficient variability in some source");
    out.balanced = b1.partialPivLu().solve(b2);
    out.m = dmat * out.balanced * out.scaling.cwiseInverse().asDiagonal();
    return out;
}

// ---------------------------------------------------------------------------
// Diagonalization

struct ScaledPermutation {
    Matrix w;                // inverse eigenvector matrix, one row per eigenvalue
    Vector eigenvalues;      // sorted descending
    double min_relative_gap; // min_{i != j} |l_i - l_j| / max |l|
    bool near_degenerate = false;
};

inline constexpr double imaginary_tolerance = 1e-8;

/// Eigendecomposition M = V diag(l) V^{-1}; returns W = V^{-1}.
inline ScaledPermutation extract_scaled_permutation(const Matrix& m, double gap_tol = 1e-3) {
    if (m.rows() != m.cols() || m.rows() == 0) throw InvalidArgument("extract_scaled_permutation: M must be square");
    if (!m.allFinite()) throw SpectrumError("similarity matrix is not finite");
    const Eigen::Index d = m.rows();
    Eigen::EigenSolver<Matrix> es(m);
    if (es.info() != Eigen::Success) throw SpectrumError("eigendecomposition did not converge");
    const Eigen::VectorXcd values = es.eigenvalues();
    const Eigen::MatrixXcd vectors = es.eigenvectors();
    const double scale = values.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < d; ++i)
        if (std::abs(values[i].imag()) > imaginary_tolerance * std::max(1.0, scale))
            throw SpectrumError("complex eigenvalues: the diagonal ratios of the Omega matrices are not distinct");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return values[a].real() > values[b].real(); });

    ScaledPermutation out;
    out.eigenvalues.resize(d);
    Matrix v(d, d);
    for (Eigen::Index c = 0; c < d; ++c) {
        const Eigen::Index src = order[static_cast<std::size_t>(c)];
        out.eigenvalues[c] = values[src].real();
        const Eigen::VectorXcd col = vectors.col(src);
        // A real eigenvalue's eigenvector is real up to a common complex phase.
        Eigen::Index pivot = 0;
        col.cwiseAbs().maxCoeff(&pivot);
        const std::complex<double> phase = col[pivot] / std::abs(col[pivot]);
        const Eigen::VectorXcd rotated = col / phase;
        if (rotated.imag().cwiseAbs().maxCoeff() > imaginary_tolerance * rotated.cwiseAbs().maxCoeff())
            throw SpectrumError("complex eigenvector: the diagonal ratios of the Omega matrices are not distinct");
        v.col(c) = rotated.real();
    }

    out.min_relative_gap = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = i + 1; j < d; ++j)
            out.min_relative_gap = std::min(
                out.min_relative_gap, std::abs(out.eigenvalues[i] - out.eigenvalues[j]) / std::max(scale, 1e-300));
    if (out.min_relative_gap < 1e-10)
        throw SpectrumError("repeated eigenvalues: the diagonal ratios of the Omega matrices are not distinct");
    out.near_degenerate = out.min_relative_gap < gap_tol;

    if (!(condition_number(v) < 1e12)) throw SpectrumError("similarity matrix is defective");
    out.w = v.inverse();
    return out;
}

/// Diagonalizes the balanced matrix and maps W back: m = D b D^{-1} gives
/// V = D V_b and W = W_b D^{-1}.
inline ScaledPermutation extract_scaled_permutation(const Similarity& sim, double gap_tol = 1e-3) {
    ScaledPermutation out = extract_scaled_permutation(sim.balanced, gap_tol);
    out.w = out.w * sim.scaling.cwiseInverse().asDiagonal();
    return out;
}

// ---------------------------------------------------------------------------
// Permutation

namespace detail {

// Minimum-cost assignment (Hungarian algorithm, O(d^3)); returns col_of_row.
inline std::vector<int> hungarian(const Matrix& cost) {
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> col_of_row(static_cast<std::size_t>(n));
    for (int j = 1; j <= n; ++j) col_of_row[static_cast<std::size_t>(p[j] - 1)] = j - 1;
    return col_of_row;
}

} // namespace detail

struct PermutationResolution {
    std::vector<int> row_at; // row_at[j] = row of W placed at position j
    Matrix jacobian;         // unit-diagonal estimate of J_{f^{-1}}
    double log_diagonal = 0.0;
};

/// Row permutation maximizing sum_j log |(P W)_jj| (exhaustive for d <= 6,
/// Hungarian assignment above), then each row divided by its diagonal entry.
inline PermutationResolution resolve_permutation(const Matrix& w) {
    if (w.rows() != w.cols() || w.rows() == 0) throw InvalidArgument("resolve_permutation: W must be square");
    if (!w.allFinite()) throw InvalidArgument("resolve_permutation: W must be finite");
    const int d = static_cast<int>(w.rows());
    // Row scaling shifts every assignment's objective equally.
    Matrix wn = w;
    for (int r = 0; r < d; ++r) {
        const double m = wn.row(r).cwiseAbs().maxCoeff();
        if (!(m > 0.0)) throw SingularError("resolve_permutation: W has a zero row");
        wn.row(r) /= m;
    }
    const Matrix logabs = wn.cwiseAbs().unaryExpr([](double x) { return std::log(std::max(x, 1e-300)); });

    std::vector<int> col_of_row(static_cast<std::size_t>(d));
    if (d <= 6) {
        std::vector<int> perm(static_cast<std::size_t>(d));
        std::iota(perm.begin(), perm.end(), 0);
        double best = -std::numeric_limits<double>::infinity();
        do {
            double total = 0.0;
            for (int r = 0; r < d; ++r) total += logabs(r, perm[static_cast<std::size_t>(r)]);
            if (total > best) {
                best = total;
                col_of_row = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
    } else {
        col_of_row = detail::hungarian(-logabs);
    }

    PermutationResolution out;
    out.row_at.assign(static_cast<std::size_t>(d), 0);
    for (int r = 0; r < d; ++r) out.row_at[static_cast<std::size_t>(col_of_row[static_cast<std::size_t>(r)])] = r;
    out.jacobian.resize(d, d);
    for (int j = 0; j < d; ++j) {
        const int r = out.row_at[static_cast<std::size_t>(j)];
        const double diag = wn(r, j);
        if (std::abs(diag) < 1e-10) throw SingularError("no admissible diagonal: the estimated Jacobian is not invertible");
        out.jacobian.row(j) = wn.row(r) / diag;
        out.log_diagonal += logabs(r, j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Thresholding

struct EdgeRepair {
    Edge edge;
    double magnitude;
};

struct SupportEstimate {
    Matrix jacobian;
    BoolMatrix support;
    Dag graph;
    double threshold = 0.0;
    std::vector<EdgeRepair> repairs; // edges dropped to break cycles
};

/// Edge j -> i iff |J_ij| > tau (i != j). Cycles are broken by repeatedly
/// dropping the weakest edge that lies on a cycle.
inline SupportEstimate support_threshold(const Matrix& jacobian, double tau) {
    const int d = static_cast<int>(jacobian.rows());
    SupportEstimate out;
    out.jacobian = jacobian;
    out.threshold = tau;
    std::vector<Edge> edges;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            if (i != j && std::abs(jacobian(i, j)) > tau) edges.push_back({j, i});

    const auto reaches = [&](const std::vector<Edge>& es, int from, int to) {
        std::vector<char> seen(static_cast<std::size_t>(d), 0);
        std::vector<int> stack{from};
        seen[static_cast<std::size_t>(from)] = 1;
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            if (v == to) return true;
            for (const auto& e : es)
                if (e.from == v && !seen[static_cast<std::size_t>(e.to)]) {
                    seen[static_cast<std::size_t>(e.to)] = 1;
                    stack.push_back(e.to);
                }
        }
        return false;
    };
    while (!Dag::is_acyclic(d, edges)) {
        std::size_t weakest = edges.size();
        double weakest_mag = std::numeric_limits<double>::infinity();
        for (std::size_t idx = 0; idx < edges.size(); ++idx) {
            const auto& e = edges[idx];
            const double mag = std::abs(jacobian(e.to, e.from));
            if (mag < weakest_mag && reaches(edges, e.to, e.from)) {
                weakest_mag = mag;
                weakest = idx;
            }
        }
        out.repairs.push_back({edges[weakest], weakest_mag});
        edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(weakest));
    }
    out.graph = Dag(d, edges);
    out.support = ground_truth_support(out.graph);
    return out;
}

// ---------------------------------------------------------------------------
// End to end

/// Replaces estimation by oracle scores and Hessians of a known model.
struct OracleEstimator {
    ScmModel model;
    EnvironmentSet environments;
    double step = default_fd_step;
};

struct DiscoveryConfig {
    std::variant<SteinConfig, OracleEstimator> estimator = SteinConfig{};
    double tau = 0.25;
    double gap_tol = 1e-3;
    // Stein mode: samples whose kernel density lies below this quantile of
    // their environment are not considered as the mean image. Kernel score
    // estimates shrink towards zero where data is sparse, which otherwise
    // makes far-out samples look like matching pairs.
    double density_quantile = 0.0;
    bool parallel_environments = false;
};

struct DiscoveryDiagnostics {
    Vector eigenvalues;
    double eig_gap = 0.0;
    bool near_degenerate = false;
    double h1_condition = 0.0;
    std::vector<double> kernel_condition_bounds; // Stein mode, one per environment
    std::vector<double> bandwidths;
    double mean_dispersion = 0.0; // spread of the selected base samples across environments
    std::vector<int> permutation;
    std::vector<std::string> warnings;
};

/// Everything up to (not including) thresholding; reusable across tau values.
struct JacobianEstimate {
    Matrix jacobian;
    MeanPairing pairing;
    DiscoveryDiagnostics diagnostics;
};

struct DiscoveryResult {
    SupportEstimate estimate;
    MeanPairing pairing;
    DiscoveryDiagnostics diagnostics;
};

namespace detail {
template <class F>
auto run_stage(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const PipelineError&) {
        throw;
    } catch (const std::exception& e) {
        throw PipelineError(stage, e.what());
    }
}
} // namespace detail

inline JacobianEstimate estimate_jacobian(const MultiEnvDataset& dataset, const std::vector<int>& group1,
                                          const std::vector<int>& group2, const DiscoveryConfig& cfg) {
    const int k = dataset.k();
    if (k < 2) throw PipelineError("input", "need at least two auxiliary environments");
    if (group1.empty() || group2.empty()) throw PipelineError("input", "both environment groups must be non-empty");
    for (const auto* g : {&group1, &group2})
        for (int e : *g)
            if (e < 1 || e > k) throw PipelineError("input", "partition index out of range");

    JacobianEstimate out;
    auto& diag = out.diagnostics;
    std::vector<Matrix> scores(static_cast<std::size_t>(k + 1));
    HessianLookup hessian;
    std::vector<std::optional<SteinEstimator>> stein(static_cast<std::size_t>(k + 1));

    detail::run_stage("estimation", [&] {
        if (const auto* sc = std::get_if<SteinConfig>(&cfg.estimator)) {
            const auto fit = [&](int e) { stein[static_cast<std::size_t>(e)].emplace(dataset.data[static_cast<std::size_t>(e)], *sc); };
            if (cfg.parallel_environments) {
                std::vector<std::future<void>> jobs;
                for (int e = 0; e <= k; ++e) jobs.push_back(std::async(std::launch::async, fit, e));
                for (auto& j : jobs) j.get();
            } else {
                for (int e = 0; e <= k; ++e) fit(e);
            }
            for (int e = 0; e <= k; ++e) {
                const auto& est = *stein[static_cast<std::size_t>(e)];
                scores[static_cast<std::size_t>(e)] = est.scores();
                diag.kernel_condition_bounds.push_back(est.condition_bound());
                diag.bandwidths.push_back(est.bandwidth());
                if (est.ill_conditioned())
                    diag.warnings.push_back("kernel system of environment " + std::to_string(e) + " is ill-conditioned");
            }
            hessian = [&stein](int e, int i) { return stein[static_cast<std::size_t>(e)]->hessian(i); };
        } else {
            const auto& oc = std::get<OracleEstimator>(cfg.estimator);
            for (int e = 0; e <= k; ++e) {
                const Matrix& x = dataset.data[static_cast<std::size_t>(e)];
                Matrix s(x.rows(), x.cols());
                for (Eigen::Index i = 0; i < x.rows(); ++i)
                    s.row(i) = oracle_score(oc.model, oc.environments, e, x.row(i).transpose(), oc.step).transpose();
                scores[static_cast<std::size_t>(e)] = std::move(s);
            }
            hessian = [&dataset, &oc](int e, int i) {
                return oracle_hessian(oc.model, oc.environments, e,
                                      dataset.data[static_cast<std::size_t>(e)].row(i).transpose(), oc.step);
            };
        }
    });

    out.pairing = detail::run_stage("mean-location", [&] {
        std::vector<std::vector<int>> pairings;
        for (int e = 1; e <= k; ++e) pairings.push_back(pair_observations(dataset.data[0], dataset.data[static_cast<std::size_t>(e)]));
        std::vector<std::vector<char>> eligible;
        if (cfg.density_quantile > 0.0 && stein[0]) {
            for (int e = 0; e <= k; ++e) {
                const Vector& dens = stein[static_cast<std::size_t>(e)]->density();
                std::vector<double> sorted(dens.data(), dens.data() + dens.size());
                std::sort(sorted.begin(), sorted.end());
                const auto pos = static_cast<std::size_t>(cfg.density_quantile * static_cast<double>(sorted.size() - 1));
                const double cut = sorted[std::min(pos, sorted.size() - 1)];
                std::vector<char> mask(static_cast<std::size_t>(dens.size()));
                for (Eigen::Index i = 0; i < dens.size(); ++i) mask[static_cast<std::size_t>(i)] = dens[i] >= cut;
                eligible.push_back(std::move(mask));
            }
        }
        return locate_mean(scores, pairings, eligible);
    });
    if (out.pairing.degenerate)
        diag.warnings.push_back("score differences vanish everywhere: environments look identical");
    for (const auto& a : out.pairing.pairs)
        for (const auto& b : out.pairing.pairs)
            diag.mean_dispersion = std::max(
                diag.mean_dispersion, (dataset.data[0].row(a.base_index) - dataset.data[0].row(b.base_index)).norm());

    const auto [h1, h2] = detail::run_stage("hessian-difference",
                                            [&] { return hessian_differences(hessian, out.pairing, group1, group2); });
    const Similarity sim = detail::run_stage("similarity", [&] { return similarity_matrix(h1, h2); });
    diag.h1_condition = sim.condition;
    const ScaledPermutation sp =
        detail::run_stage("diagonalization", [&] { return extract_scaled_permutation(sim, cfg.gap_tol); });
    diag.eigenvalues = sp.eigenvalues;
    diag.eig_gap = sp.min_relative_gap;
    diag.near_degenerate = sp.near_degenerate;
    if (sp.near_degenerate) diag.warnings.push_back("near-degenerate ratios: eigenvalue gap below tolerance");
    const PermutationResolution pr = detail::run_stage("permutation", [&] { return resolve_permutation(sp.w); });
    diag.permutation = pr.row_at;
    out.jacobian = pr.jacobian;
    return out;
}

inline DiscoveryResult discover(const MultiEnvDataset& dataset, const std::vector<int>& group1,
                                const std::vector<int>& group2, const DiscoveryConfig& cfg) {
    JacobianEstimate je = estimate_jacobian(dataset, group1, group2, cfg);
    DiscoveryResult out;
    out.estimate = detail::run_stage("threshold", [&] { return support_threshold(je.jacobian, cfg.tau); });
    out.pairing = std::move(je.pairing);
    out.diagnostics = std::move(je.diagnostics);
    return out;
}

/// Uses the partition stored with the dataset.
inline DiscoveryResult discover(const MultiEnvDataset& dataset, const DiscoveryConfig& cfg) {
    return discover(dataset, dataset.environments.group1, dataset.environments.group2, cfg);
}

/// Appends the image of the source mean, f(mu_S), to every environment. The
/// rescalings are centered at the mean, so the point is shared by all of them.
inline MultiEnvDataset with_mean_point(MultiEnvDataset dataset, const ScmModel& model) {
    const Vector x = model.forward(model.sources().mean);
    for (auto& slice : dataset.data) {
        slice.conservativeResize(slice.rows() + 1, Eigen::NoChange);
        slice.row(slice.rows() - 1) = x.transpose();
    }
    if (dataset.sources)
        for (auto& s : *dataset.sources) {
            s.conservativeResize(s.rows() + 1, Eigen::NoChange);
            s.row(s.rows() - 1) = model.sources().mean.transpose();
        }
    return dataset;
}

} // namespace duet
