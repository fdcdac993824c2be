#pragma once

// Structural causal models, their induced mixing functions, rescaled
// environments and multi-environment sampling.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "duet/dag.hpp"
#include "duet/errors.hpp"
#include "duet/rng.hpp"

namespace duet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class MechanismKind { Linear, Anm, Pnl, Lsnm, ArbitraryI, ArbitraryII, ArbitraryIII, Custom };

inline constexpr MechanismKind builtin_mechanisms[] = {
    MechanismKind::Linear, MechanismKind::ArbitraryI, MechanismKind::ArbitraryII, MechanismKind::ArbitraryIII,
    MechanismKind::Anm,    MechanismKind::Pnl,        MechanismKind::Lsnm};

inline std::string_view to_string(MechanismKind k) {
    switch (k) {
    case MechanismKind::Linear: return "linear";
    case MechanismKind::Anm: return "anm";
    case MechanismKind::Pnl: return "pnl";
    case MechanismKind::Lsnm: return "lsnm";
    case MechanismKind::ArbitraryI: return "i";
    case MechanismKind::ArbitraryII: return "ii";
    case MechanismKind::ArbitraryIII: return "iii";
    case MechanismKind::Custom: return "custom";
    }
    return "?";
}

inline MechanismKind parse_mechanism(std::string_view name) {
    for (auto k : {MechanismKind::Linear, MechanismKind::Anm, MechanismKind::Pnl, MechanismKind::Lsnm,
                   MechanismKind::ArbitraryI, MechanismKind::ArbitraryII, MechanismKind::ArbitraryIII,
                   MechanismKind::Custom})
        if (to_string(k) == name) return k;
    throw InvalidArgument("unknown mechanism '" + std::string(name) + "'");
}

/// Structural equation of one node for the Custom kind: parent values (in
/// ascending parent index order) and the node's source value.
using CustomEquation = std::function<double(std::span<const double>, double)>;

/// Mechanisms F_i of every node.
///
/// Builtin kinds act on the weighted parent sum a_i = sum_p w_ip x_p:
///
///   linear : a + s
///   i      : a^2 atan(s) + s^3
///   ii     : a^2 s + atan(s)
///   iii    : a^2 + atan(a) s + a s^3
///   anm    : a^3/3 + tanh(2a) + s
///   pnl    : (a^2 + s)^3
///   lsnm   : tanh(a) + (0.5 + a^2) s
///
/// Root nodes are the identity x_i = s_i. Weights are 1 for the nonlinear
/// kinds and the edge coefficients for the linear kind.
struct Mechanism {
    MechanismKind kind = MechanismKind::Linear;
    std::vector<std::vector<double>> weights; // weights[i] aligned with dag.parents(i)
    std::vector<CustomEquation> custom;       // Custom kind only, one per node
};

/// Value and partial derivatives of a node equation g(a, s).
struct NodeEval {
    double value;
    double d_a;
    double d_s;
};

inline NodeEval evaluate_builtin(MechanismKind kind, double a, double s) {
    switch (kind) {
    case MechanismKind::Linear: return {a + s, 1.0, 1.0};
    case MechanismKind::ArbitraryI:
        return {a * a * std::atan(s) + s * s * s, 2.0 * a * std::atan(s), a * a / (1.0 + s * s) + 3.0 * s * s};
    case MechanismKind::ArbitraryII:
        return {a * a * s + std::atan(s), 2.0 * a * s, a * a + 1.0 / (1.0 + s * s)};
    case MechanismKind::ArbitraryIII:
        return {a * a + std::atan(a) * s + a * s * s * s, 2.0 * a + s / (1.0 + a * a) + s * s * s,
                std::atan(a) + 3.0 * a * s * s};
    case MechanismKind::Anm: {
        const double t = std::tanh(2.0 * a);
        return {a * a * a / 3.0 + t + s, a * a + 2.0 * (1.0 - t * t), 1.0};
    }
    case MechanismKind::Pnl: {
        const double u = a * a + s;
        return {u * u * u, 6.0 * a * u * u, 3.0 * u * u};
    }
    case MechanismKind::Lsnm: {
        const double t = std::tanh(a);
        return {t + (0.5 + a * a) * s, (1.0 - t * t) + 2.0 * a * s, 0.5 + a * a};
    }
    case MechanismKind::Custom: break;
    }
    throw InvalidArgument("evaluate_builtin: not a builtin mechanism");
}

/// Closed-form node inverse s = g^{-1}(a, x) where one exists.
inline std::optional<double> invert_builtin_closed_form(MechanismKind kind, double a, double x) {
    switch (kind) {
    case MechanismKind::Linear: return x - a;
    case MechanismKind::Anm: return x - a * a * a / 3.0 - std::tanh(2.0 * a);
    case MechanismKind::Pnl: return std::cbrt(x) - a * a;
    case MechanismKind::Lsnm: return (x - std::tanh(a)) / (0.5 + a * a);
    default: return std::nullopt;
    }
}

enum class SourceFamily { Gaussian, Gamma };

inline std::string_view to_string(SourceFamily f) { return f == SourceFamily::Gaussian ? "gaussian" : "gamma"; }

inline SourceFamily parse_source_family(std::string_view name) {
    if (name == "gaussian") return SourceFamily::Gaussian;
    if (name == "gamma") return SourceFamily::Gamma;
    throw InvalidArgument("unknown source family '" + std::string(name) + "'");
}

/// Independent source coordinates. `mean` is the center of every rescaling;
/// for Gamma sources it equals shape * scale.
struct SourceSpec {
    SourceFamily family = SourceFamily::Gaussian;
    Vector mean;
    Vector variance; // Gaussian
    Vector shape;    // Gamma
    Vector scale;    // Gamma

    int dim() const noexcept { return static_cast<int>(mean.size()); }

    static SourceSpec gaussian(Vector mean, Vector variance) {
        SourceSpec s;
        s.family = SourceFamily::Gaussian;
        s.mean = std::move(mean);
        s.variance = std::move(variance);
        s.validate();
        return s;
    }

    static SourceSpec gamma(Vector shape, Vector scale) {
        SourceSpec s;
        s.family = SourceFamily::Gamma;
        s.mean = shape.cwiseProduct(scale);
        s.shape = std::move(shape);
        s.scale = std::move(scale);
        s.validate();
        return s;
    }

    void validate() const {
        if (mean.size() == 0) throw InvalidArgument("SourceSpec: empty");
        if (!mean.allFinite()) throw InvalidArgument("SourceSpec: non-finite mean");
        if (family == SourceFamily::Gaussian) {
            if (variance.size() != mean.size()) throw InvalidArgument("SourceSpec: variance size mismatch");
            if ((variance.array() <= 0.0).any() || !variance.allFinite())
                throw InvalidArgument("SourceSpec: variances must be positive");
        } else {
            if (shape.size() != mean.size() || scale.size() != mean.size())
                throw InvalidArgument("SourceSpec: gamma parameter size mismatch");
            if ((shape.array() <= 0.0).any() || !shape.allFinite())
                throw InvalidArgument("SourceSpec: gamma shape must be positive");
            if ((scale.array() <= 0.0).any() || !scale.allFinite())
                throw InvalidArgument("SourceSpec: gamma scale must be positive");
        }
    }
};

/// Base environment plus k auxiliary environments, each rescaling the
/// sources about their mean: S^i = mu + L_i (S - mu), L_i = diag(lambdas.row(i-1)).
struct EnvironmentSet {
    Matrix lambdas;          // k x d
    std::vector<int> group1; // auxiliary environment indices in 1..k
    std::vector<int> group2;

    int k() const noexcept { return static_cast<int>(lambdas.rows()); }
    int dim() const noexcept { return static_cast<int>(lambdas.cols()); }

    /// Rescaling diagonal of environment `env_index` (0 is the base).
    Vector rescaling(int env_index) const {
        if (env_index < 0 || env_index > k()) throw InvalidArgument("EnvironmentSet: environment index out of range");
        if (env_index == 0) return Vector::Ones(dim());
        return lambdas.row(env_index - 1).transpose();
    }

    void validate() const {
        if (k() < 1) throw InvalidArgument("EnvironmentSet: need at least one auxiliary environment");
        if (!lambdas.allFinite() || (lambdas.array() == 0.0).any())
            throw InvalidArgument("EnvironmentSet: rescalings must be finite and nonzero");
        if (group1.empty() || group2.empty()) throw InvalidArgument("EnvironmentSet: both partition halves must be non-empty");
        std::vector<int> seen(k() + 1, 0);
        for (const auto* g : {&group1, &group2})
            for (int e : *g) {
                if (e < 1 || e > k()) throw InvalidArgument("EnvironmentSet: partition index out of range");
                if (seen[e]++) throw InvalidArgument("EnvironmentSet: partition halves overlap");
            }
        for (int e = 1; e <= k(); ++e)
            if (!seen[e]) throw InvalidArgument("EnvironmentSet: partition does not cover environment " + std::to_string(e));
    }

    /// First ceil(k/2) auxiliaries in group 1, the rest in group 2.
    static EnvironmentSet with_default_partition(Matrix lambdas) {
        EnvironmentSet env;
        env.lambdas = std::move(lambdas);
        const int k = env.k();
        const int split = (k + 1) / 2;
        for (int e = 1; e <= k; ++e) (e <= split ? env.group1 : env.group2).push_back(e);
        return env;
    }
};

/// Graph, mechanisms and base source distribution.
class ScmModel {
public:
    ScmModel() = default;

    ScmModel(Dag dag, Mechanism mechanism, SourceSpec sources)
        : dag_(std::move(dag)), mechanism_(std::move(mechanism)), sources_(std::move(sources)) {
        const int d = dag_.size();
        if (sources_.dim() != d) throw InvalidArgument("ScmModel: source dimension does not match the graph");
        sources_.validate();
        if (mechanism_.kind == MechanismKind::Custom) {
            if (static_cast<int>(mechanism_.custom.size()) != d)
                throw InvalidArgument("ScmModel: custom mechanism needs one equation per node");
        } else {
            if (mechanism_.weights.empty()) {
                mechanism_.weights.resize(d);
                for (int i = 0; i < d; ++i) mechanism_.weights[i].assign(dag_.parents(i).size(), 1.0);
            }
            if (static_cast<int>(mechanism_.weights.size()) != d)
                throw InvalidArgument("ScmModel: weights must have one entry per node");
            for (int i = 0; i < d; ++i)
                if (mechanism_.weights[i].size() != dag_.parents(i).size())
                    throw InvalidArgument("ScmModel: weights of node " + std::to_string(i) + " do not match its parents");
        }
    }

    const Dag& dag() const noexcept { return dag_; }
    const Mechanism& mechanism() const noexcept { return mechanism_; }
    const SourceSpec& sources() const noexcept { return sources_; }
    MechanismKind kind() const noexcept { return mechanism_.kind; }
    int dim() const noexcept { return dag_.size(); }

    /// Mixing function x = f(s), evaluated in topological order.
    Vector forward(const Vector& s) const {
        const int d = dim();
        Vector x(d);
        std::vector<double> buf;
        for (int i : dag_.order()) {
            x[i] = node_value(i, x, s[i], buf);
            if (!std::isfinite(x[i]))
                throw DomainError("mechanism of node " + std::to_string(i) + " produced a non-finite value");
        }
        return x;
    }

    /// Inverse mixing s = f^{-1}(x): one scalar root-find per node.
    Vector inverse(const Vector& x) const {
        const int d = dim();
        Vector s(d);
        std::vector<double> buf;
        for (int i = 0; i < d; ++i) s[i] = invert_node(i, x, buf);
        return s;
    }

    /// J_f at source point s.
    Matrix forward_jacobian(const Vector& s) const {
        if (kind() == MechanismKind::Custom) {
            const Vector x = forward(s);
            return inverse_jacobian(x).inverse();
        }
        const Vector x = forward(s);
        Matrix g = Matrix::Zero(dim(), dim());
        Vector ds(dim());
        partials(x, s, g, ds);
        // g is nilpotent for an acyclic graph, so I - g is invertible under any labeling.
        return (Matrix::Identity(dim(), dim()) - g).partialPivLu().solve(Matrix(ds.asDiagonal()));
    }

    /// J_{f^{-1}} at observation x, with the determinant check of the forward map.
    Matrix inverse_jacobian(const Vector& x) const {
        const int d = dim();
        if (kind() == MechanismKind::Custom) {
            Matrix j(d, d);
            for (int c = 0; c < d; ++c) {
                const double h = 1e-5 * (1.0 + std::abs(x[c]));
                Vector xp = x, xm = x;
                xp[c] += h;
                xm[c] -= h;
                j.col(c) = (inverse(xp) - inverse(xm)) / (2.0 * h);
            }
            const double det = j.determinant();
            if (!std::isfinite(det) || std::abs(det) > 1e12)
                throw SingularError("inverse_jacobian: forward Jacobian is singular");
            return j;
        }
        const Vector s = inverse(x);
        Matrix g = Matrix::Zero(d, d);
        Vector ds(d);
        partials(x, s, g, ds);
        if (std::abs(ds.prod()) < 1e-12) throw SingularError("inverse_jacobian: |det J_f| < 1e-12");
        return ds.cwiseInverse().asDiagonal() * (Matrix::Identity(d, d) - g);
    }

    /// log |det J_{f^{-1}}(x)|.
    double log_abs_det_inverse_jacobian(const Vector& x) const {
        if (kind() == MechanismKind::Custom) return std::log(std::abs(inverse_jacobian(x).determinant()));
        const Vector s = inverse(x);
        double acc = 0.0;
        for (int i = 0; i < dim(); ++i) {
            if (is_root(i)) continue;
            const double a = aggregate(i, x);
            acc -= std::log(std::abs(evaluate_builtin(kind(), a, s[i]).d_s));
        }
        return acc;
    }

private:
    double aggregate(int i, const Vector& x) const {
        const auto& pa = dag_.parents(i);
        const auto& w = mechanism_.weights[i];
        double a = 0.0;
        for (std::size_t p = 0; p < pa.size(); ++p) a += w[p] * x[pa[p]];
        return a;
    }

    bool is_root(int i) const { return dag_.parents(i).empty(); }

    double node_value(int i, const Vector& x, double s, std::vector<double>& buf) const {
        if (is_root(i)) return s;
        if (kind() == MechanismKind::Custom) {
            gather(i, x, buf);
            return mechanism_.custom[i](buf, s);
        }
        return evaluate_builtin(kind(), aggregate(i, x), s).value;
    }

    void gather(int i, const Vector& x, std::vector<double>& buf) const {
        const auto& pa = dag_.parents(i);
        buf.resize(pa.size());
        for (std::size_t p = 0; p < pa.size(); ++p) buf[p] = x[pa[p]];
    }

    // g(i, p) = dF_i/dx_p, ds(i) = dF_i/ds_i.
    void partials(const Vector& x, const Vector& s, Matrix& g, Vector& ds) const {
        for (int i = 0; i < dim(); ++i) {
            if (is_root(i)) {
                ds[i] = 1.0;
                continue;
            }
            const auto ev = evaluate_builtin(kind(), aggregate(i, x), s[i]);
            ds[i] = ev.d_s;
            const auto& pa = dag_.parents(i);
            for (std::size_t p = 0; p < pa.size(); ++p) g(i, pa[p]) = ev.d_a * mechanism_.weights[i][p];
        }
    }

    double invert_node(int i, const Vector& x, std::vector<double>& buf) const {
        const double target = x[i];
        if (is_root(i)) return target;
        double a = 0.0;
        if (kind() != MechanismKind::Custom) {
            a = aggregate(i, x);
            if (auto s = invert_builtin_closed_form(kind(), a, target)) return *s;
        } else {
            gather(i, x, buf);
        }
        const auto value = [&](double s) {
            return kind() == MechanismKind::Custom ? mechanism_.custom[i](buf, s) : evaluate_builtin(kind(), a, s).value;
        };
        const auto slope = [&](double s) {
            if (kind() != MechanismKind::Custom) return evaluate_builtin(kind(), a, s).d_s;
            const double h = 1e-6 * (1.0 + std::abs(s));
            return (value(s + h) - value(s - h)) / (2.0 * h);
        };
        const double tol = 1e-10 * (1.0 + std::abs(target));

        // Damped Newton from the source mean, polished to machine precision.
        double s = sources_.mean[i];
        double r = value(s) - target;
        for (int it = 0; it < 200 && std::isfinite(r); ++it) {
            const double slope_s = slope(s);
            if (!(std::abs(slope_s) > 0.0) || !std::isfinite(slope_s)) break;
            const double step = r / slope_s;
            double t = 1.0;
            double s_new = s - step;
            double r_new = value(s_new) - target;
            while (!(std::abs(r_new) < std::abs(r)) && t > 1e-9) {
                t *= 0.5;
                s_new = s - t * step;
                r_new = value(s_new) - target;
            }
            if (!(std::abs(r_new) < std::abs(r))) break;
            const bool tiny_step = std::abs(s_new - s) <= 4e-16 * (1.0 + std::abs(s));
            s = s_new;
            r = r_new;
            if (r == 0.0 || (tiny_step && std::abs(r) <= tol)) return s;
        }
        if (std::isfinite(r) && std::abs(r) <= tol) return s;

        // Bisection fallback on [-50, 50].
        double lo = -50.0, hi = 50.0;
        double flo = value(lo) - target, fhi = value(hi) - target;
        if (!(flo * fhi <= 0.0))
            throw InversionError("inverse: node " + std::to_string(i) + " did not converge and has no sign change on [-50, 50]");
        for (int it = 0; it < 200 && hi - lo > 4e-16 * (1.0 + std::abs(lo)); ++it) {
            const double mid = 0.5 * (lo + hi);
            const double fm = value(mid) - target;
            if ((fm <= 0.0) == (flo <= 0.0)) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        const double root = 0.5 * (lo + hi);
        if (!(std::abs(value(root) - target) <= tol))
            throw InversionError("inverse: node " + std::to_string(i) + " did not converge after 200 iterations");
        return root;
    }

    Dag dag_;
    Mechanism mechanism_;
    SourceSpec sources_;
};

/// Applies the mixing function to every row of `sources`.
inline Matrix mix(const ScmModel& model, const Matrix& sources) {
    if (sources.cols() != model.dim()) throw InvalidArgument("mix: source width does not match the model");
    Matrix x(sources.rows(), sources.cols());
    for (Eigen::Index r = 0; r < sources.rows(); ++r) {
        const Vector s = sources.row(r).transpose();
        if (!s.allFinite()) throw DomainError("mix: non-finite source in row " + std::to_string(r));
        try {
            x.row(r) = model.forward(s).transpose();
        } catch (const DomainError& e) {
            throw DomainError(std::string(e.what()) + " (row " + std::to_string(r) + ")");
        }
    }
    return x;
}

/// J_{f^{-1}}(x): closed-form partials for builtin kinds, central differences
/// of f^{-1} (step 1e-5 (1 + |x_j|)) for Custom.
inline Matrix analytic_inverse_jacobian(const ScmModel& model, const Vector& x) { return model.inverse_jacobian(x); }

/// n i.i.d. draws of the sources of environment `env_index`. Deterministic in
/// (seed, env_index); environment 0 is the unscaled base distribution.
inline Matrix sample_sources(const SourceSpec& spec, const EnvironmentSet& env, int env_index, int n,
                             std::uint64_t seed) {
    spec.validate();
    if (n < 1) throw InvalidArgument("sample_sources: n must be >= 1");
    if (env.dim() != spec.dim()) throw InvalidArgument("sample_sources: environment dimension mismatch");
    if (!env.lambdas.allFinite() || (env.lambdas.array() == 0.0).any())
        throw InvalidArgument("sample_sources: rescalings must be finite and nonzero");
    const Vector lambda = env.rescaling(env_index);
    const int d = spec.dim();
    Philox4x32 rng(seed, stream::sources(env_index));
    Matrix s(n, d);
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j) {
            const double base = spec.family == SourceFamily::Gaussian
                                    ? spec.mean[j] + std::sqrt(spec.variance[j]) * rng.normal()
                                    : spec.scale[j] * rng.gamma(spec.shape[j]);
            s(r, j) = spec.mean[j] + lambda[j] * (base - spec.mean[j]);
        }
    return s;
}

/// Observations of the base and every auxiliary environment.
struct MultiEnvDataset {
    std::vector<Matrix> data; // k + 1 slices of n x d, slice 0 is the base
    std::uint64_t seed = 0;
    std::string mechanism;
    EnvironmentSet environments;
    std::optional<ScmModel> model;
    std::optional<std::vector<Matrix>> sources; // debug mode only

    int k() const noexcept { return static_cast<int>(data.size()) - 1; }
    int n() const noexcept { return data.empty() ? 0 : static_cast<int>(data.front().rows()); }
    int d() const noexcept { return data.empty() ? 0 : static_cast<int>(data.front().cols()); }
};

inline MultiEnvDataset generate_dataset(const ScmModel& model, const EnvironmentSet& env, int n, std::uint64_t seed,
                                        bool keep_sources = false) {
    if (env.dim() != model.dim()) throw InvalidArgument("generate_dataset: environment dimension mismatch");
    MultiEnvDataset ds;
    ds.seed = seed;
    ds.mechanism = std::string(to_string(model.kind()));
    ds.environments = env;
    ds.model = model;
    if (keep_sources) ds.sources.emplace();
    for (int e = 0; e <= env.k(); ++e) {
        Matrix s = sample_sources(model.sources(), env, e, n, seed);
        try {
            ds.data.push_back(mix(model, s));
        } catch (const DomainError& err) {
            throw DomainError("environment " + std::to_string(e) + ": " + err.what());
        }
        if (keep_sources) ds.sources->push_back(std::move(s));
    }
    return ds;
}

// Random model construction used by the experiment harness.

/// Linear edges get weights uniform on +-[0.5, 1.5]; nonlinear kinds use 1.
inline Mechanism draw_mechanism(MechanismKind kind, const Dag& dag, Philox4x32& rng) {
    if (kind == MechanismKind::Custom) throw InvalidArgument("draw_mechanism: custom mechanisms cannot be drawn");
    Mechanism m;
    m.kind = kind;
    m.weights.resize(dag.size());
    for (int i = 0; i < dag.size(); ++i)
        for (std::size_t p = 0; p < dag.parents(i).size(); ++p) {
            double w = 1.0;
            if (kind == MechanismKind::Linear) {
                w = rng.uniform(0.5, 1.5);
                if (rng.uniform01() < 0.5) w = -w;
            }
            m.weights[i].push_back(w);
        }
    return m;
}

inline SourceSpec draw_gaussian_sources(int d, Philox4x32& rng, double var_lo = 1.0, double var_hi = 1.5,
                                        double mean = 1.0) {
    Vector var(d);
    for (int j = 0; j < d; ++j) var[j] = rng.uniform(var_lo, var_hi);
    return SourceSpec::gaussian(Vector::Constant(d, mean), var);
}

inline SourceSpec draw_gamma_sources(int d, Philox4x32& rng, double shape_lo, double shape_hi,
                                     double scale_lo = 1.75, double scale_hi = 2.25) {
    Vector shape(d), scale(d);
    for (int j = 0; j < d; ++j) {
        shape[j] = rng.uniform(shape_lo, shape_hi);
        scale[j] = rng.uniform(scale_lo, scale_hi);
    }
    return SourceSpec::gamma(shape, scale);
}

/// k x d rescalings with |lambda| ~ U(lo, hi) and a random sign when `both_signs`.
inline Matrix draw_rescalings(int k, int d, Philox4x32& rng, double lo = 1.5, double hi = 2.5, bool both_signs = true) {
    Matrix l(k, d);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j) {
            double v = rng.uniform(lo, hi);
            if (both_signs && rng.uniform01() < 0.5) v = -v;
            l(i, j) = v;
        }
    return l;
}

} // namespace duet
