#pragma once

// Ground truth for densities, scores and Hessians of the observed variables,
// the diagonal Omega matrices of the rescaled sources, and checkers for the
// variability / distinct-ratio conditions the discovery procedure relies on.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "duet/errors.hpp"
#include "duet/scm.hpp"

namespace duet {

inline constexpr double default_fd_step = 1e-4;
inline constexpr double default_check_tol = 1e-9;

namespace detail {
// Coordinate of the base source that maps to s under rescaling by lambda.
inline double unscaled(double s, double mean, double lambda) { return mean + (s - mean) / lambda; }
} // namespace detail

/// log p^i(s) of the sources of an environment with rescaling diagonal `lambda`.
inline double source_log_density(const SourceSpec& spec, const Vector& lambda, const Vector& s) {
    double acc = 0.0;
    for (int j = 0; j < spec.dim(); ++j) {
        const double g = detail::unscaled(s[j], spec.mean[j], lambda[j]);
        acc -= std::log(std::abs(lambda[j]));
        if (spec.family == SourceFamily::Gaussian) {
            const double var = spec.variance[j];
            const double z = g - spec.mean[j];
            acc += -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * z * z / var;
        } else {
            if (!(g > 0.0)) return -std::numeric_limits<double>::infinity();
            const double a = spec.shape[j];
            const double th = spec.scale[j];
            acc += (a - 1.0) * std::log(g) - g / th - std::lgamma(a) - a * std::log(th);
        }
    }
    return acc;
}

/// Gradient of `source_log_density`.
inline Vector source_score(const SourceSpec& spec, const Vector& lambda, const Vector& s) {
    Vector out(spec.dim());
    for (int j = 0; j < spec.dim(); ++j) {
        const double g = detail::unscaled(s[j], spec.mean[j], lambda[j]);
        if (spec.family == SourceFamily::Gaussian)
            out[j] = -(g - spec.mean[j]) / (spec.variance[j] * lambda[j]);
        else
            out[j] = ((spec.shape[j] - 1.0) / g - 1.0 / spec.scale[j]) / lambda[j];
    }
    return out;
}

/// Diagonal of the (diagonal) Hessian of `source_log_density`.
inline Vector source_hessian_diagonal(const SourceSpec& spec, const Vector& lambda, const Vector& s) {
    Vector out(spec.dim());
    for (int j = 0; j < spec.dim(); ++j) {
        const double l2 = lambda[j] * lambda[j];
        if (spec.family == SourceFamily::Gaussian) {
            out[j] = -1.0 / (spec.variance[j] * l2);
        } else {
            const double g = detail::unscaled(s[j], spec.mean[j], lambda[j]);
            out[j] = -(spec.shape[j] - 1.0) / (g * g * l2);
        }
    }
    return out;
}

/// log p^i(x) = log p_theta^i(f^{-1}(x)) + log |det J_{f^{-1}}(x)|.
inline double log_density_x(const ScmModel& model, const EnvironmentSet& env, int env_index, const Vector& x) {
    const Vector s = model.inverse(x);
    return source_log_density(model.sources(), env.rescaling(env_index), s) + model.log_abs_det_inverse_jacobian(x);
}

/// Central differences of `log_density_x`, step h_j = step * (1 + |x_j|).
inline Vector oracle_score(const ScmModel& model, const EnvironmentSet& env, int env_index, const Vector& x,
                           double step = default_fd_step) {
    const int d = static_cast<int>(x.size());
    Vector g(d);
    for (int j = 0; j < d; ++j) {
        const double h = step * (1.0 + std::abs(x[j]));
        Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        g[j] = (log_density_x(model, env, env_index, xp) - log_density_x(model, env, env_index, xm)) / (2.0 * h);
    }
    return g;
}

/// Central differences of `oracle_score` with the same step, symmetrized.
inline Matrix oracle_hessian(const ScmModel& model, const EnvironmentSet& env, int env_index, const Vector& x,
                             double step = default_fd_step) {
    const int d = static_cast<int>(x.size());
    Matrix h(d, d);
    for (int k = 0; k < d; ++k) {
        const double hk = step * (1.0 + std::abs(x[k]));
        Vector xp = x, xm = x;
        xp[k] += hk;
        xm[k] -= hk;
        h.col(k) = (oracle_score(model, env, env_index, xp, step) - oracle_score(model, env, env_index, xm, step)) /
                   (2.0 * hk);
    }
    return 0.5 * (h + h.transpose());
}

/// Diagonal Omega matrices of the two environment groups, stored as vectors.
struct OmegaPair {
    Vector omega1;
    Vector omega2;

    bool full_rank() const { return (omega1.array() != 0.0).all() && (omega2.array() != 0.0).all(); }
};

/// Closed form for Gaussian sources:
/// (Omega_l)_jj = (1 / sigma_j^2) (sum_{i in I_l} 1 / (lambda_j^i)^2 - |I_l|).
inline OmegaPair omega_matrices(const SourceSpec& spec, const EnvironmentSet& env) {
    if (spec.family != SourceFamily::Gaussian)
        throw InvalidArgument("omega_matrices: closed form is only available for Gaussian sources");
    const int d = spec.dim();
    const auto group = [&](const std::vector<int>& idx) {
        Vector out(d);
        for (int j = 0; j < d; ++j) {
            double inv_sq = 0.0;
            for (int e : idx) inv_sq += 1.0 / (env.lambdas(e - 1, j) * env.lambdas(e - 1, j));
            out[j] = (inv_sq - static_cast<double>(idx.size())) / spec.variance[j];
        }
        return out;
    };
    return {group(env.group1), group(env.group2)};
}

/// Omega from its definition: summed differences of source log-density
/// Hessians (base minus auxiliary) at source point s. Valid for both families.
inline OmegaPair omega_from_hessians(const SourceSpec& spec, const EnvironmentSet& env, const Vector& s) {
    const Vector base = source_hessian_diagonal(spec, env.rescaling(0), s);
    const auto group = [&](const std::vector<int>& idx) {
        Vector out = Vector::Zero(spec.dim());
        for (int e : idx) out += base - source_hessian_diagonal(spec, env.rescaling(e), s);
        return out;
    };
    return {group(env.group1), group(env.group2)};
}

struct VariabilityViolation {
    int coordinate; // 0-based source index j
    int group;      // 1 or 2
    double margin;  // |sum 1/lambda^2 - |I_l||
};

struct VariabilityReport {
    std::vector<VariabilityViolation> violations;
    bool pass() const noexcept { return violations.empty(); }
};

/// Flags every (j, l) with |sum_{i in I_l} 1/(lambda_j^i)^2 - |I_l|| <= tol.
inline VariabilityReport check_sufficient_variability(const EnvironmentSet& env, double tol = default_check_tol) {
    VariabilityReport report;
    for (int l = 1; l <= 2; ++l) {
        const auto& idx = l == 1 ? env.group1 : env.group2;
        for (int j = 0; j < env.dim(); ++j) {
            double inv_sq = 0.0;
            for (int e : idx) inv_sq += 1.0 / (env.lambdas(e - 1, j) * env.lambdas(e - 1, j));
            const double margin = std::abs(inv_sq - static_cast<double>(idx.size()));
            if (margin <= tol) report.violations.push_back({j, l, margin});
        }
    }
    return report;
}

struct RatioCollision {
    int first;
    int second;
    double difference;
};

struct RatioReport {
    Vector ratios; // diagonal of Omega1^{-1} Omega2
    std::vector<RatioCollision> collisions;
    bool pass() const noexcept { return collisions.empty(); }
};

/// Flags pairs whose diagonal ratios (Omega1^{-1} Omega2)_ii differ by at most
/// tol * max |ratio|.
inline RatioReport check_distinct_ratios(const OmegaPair& omega, double tol = default_check_tol) {
    if ((omega.omega1.array().abs() < 1e-12).any())
        throw SingularError("check_distinct_ratios: Omega1 is singular");
    RatioReport report;
    report.ratios = omega.omega2.cwiseQuotient(omega.omega1);
    const double scale = report.ratios.cwiseAbs().maxCoeff();
    const int d = static_cast<int>(report.ratios.size());
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double diff = std::abs(report.ratios[i] - report.ratios[j]);
            if (diff <= tol * scale) report.collisions.push_back({i, j, diff});
        }
    return report;
}

/// Relative Frobenius residuals of the Hessian-difference identity
///   sum_{i in I_l} (H_base(x) - H_i(x)) = J^T Omega_l J,  J = J_{f^{-1}}(x),
/// for both groups.
struct HessianIdentityResidual {
    double group1 = 0.0;
    double group2 = 0.0;
    double max() const noexcept { return std::max(group1, group2); }
};

inline HessianIdentityResidual hessian_identity_residual(const ScmModel& model, const EnvironmentSet& env, const Vector& x,
                                                double step = default_fd_step) {
    const Vector s = model.inverse(x);
    const Matrix j = model.inverse_jacobian(x);
    const OmegaPair omega = omega_from_hessians(model.sources(), env, s);
    const Matrix h0 = oracle_hessian(model, env, 0, x, step);
    const auto residual = [&](const std::vector<int>& idx, const Vector& om) {
        Matrix lhs = Matrix::Zero(x.size(), x.size());
        for (int e : idx) lhs += h0 - oracle_hessian(model, env, e, x, step);
        const Matrix rhs = j.transpose() * om.asDiagonal() * j;
        return (lhs - rhs).norm() / rhs.norm();
    };
    return {residual(env.group1, omega.omega1), residual(env.group2, omega.omega2)};
}

/// The identity evaluated at x* = f(mu_S), where it holds exactly for Gaussian sources.
inline HessianIdentityResidual verify_hessian_identity(const ScmModel& model, const EnvironmentSet& env,
                                    double step = default_fd_step) {
    return hessian_identity_residual(model, env, model.forward(model.sources().mean), step);
}

} // namespace duet
