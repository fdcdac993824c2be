#pragma once

// Kernel (Stein) estimators of the score and of the full Hessian of the log
// density from i.i.d. samples.
//
// With the RBF kernel K_ab = exp(-|x_a - x_b|^2 / (2 h^2)) and ridge eta:
//
//   G = -(K + eta I)^{-1} B,            B_aj = sum_b K_ab (x_aj - x_bj) / h^2
//   H_a = -G_a G_a^T + [(K + eta I)^{-1} C^{(jk)}]_a,
//   C^{(jk)}_a = sum_b K_ab [ (x_aj - x_bj)(x_ak - x_bk) / h^4 - delta_jk / h^2 ]
//
// The second line is the second-order Stein identity: for a test function
// phi, E[phi (d_j d_k p) / p] = E[d_j d_k phi], and
// (d_j d_k p) / p = d_j d_k log p + d_j log p d_k log p.

#include <algorithm>
#include <cmath>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "duet/errors.hpp"
#include "duet/scm.hpp"

namespace duet {

struct MedianHeuristic {
    double factor = 1.0;
};

struct FixedBandwidth {
    double h = 1.0;
};

struct SteinConfig {
    std::variant<MedianHeuristic, FixedBandwidth> bandwidth = MedianHeuristic{};
    double ridge = 1e-3;
    // Fit on per-coordinate standardized data and map the estimates back, so
    // that the isotropic kernel adapts to coordinates of different spread.
    bool standardize = false;

    void validate() const {
        if (!(ridge > 0.0)) throw InvalidArgument("SteinConfig: ridge must be > 0");
        if (const auto* m = std::get_if<MedianHeuristic>(&bandwidth); m && !(m->factor > 0.0))
            throw InvalidArgument("SteinConfig: median factor must be > 0");
        if (const auto* f = std::get_if<FixedBandwidth>(&bandwidth); f && !(f->h > 0.0))
            throw InvalidArgument("SteinConfig: bandwidth must be > 0");
    }
};

/// Per-sample score and Hessian estimates of one dataset.
struct ScoreHessianField {
    Matrix scores;                // n x d
    std::vector<Matrix> hessians; // n of d x d
    double bandwidth = 0.0;
    double condition_bound = 0.0; // upper bound on cond(K + eta I)
    bool ill_conditioned = false; // condition_bound > 1e12
};

/// Median of the pairwise Euclidean distances between rows.
inline double median_pairwise_distance(const Matrix& x) {
    const Eigen::Index n = x.rows();
    std::vector<double> dist;
    dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = a + 1; b < n; ++b) dist.push_back((x.row(a) - x.row(b)).norm());
    if (dist.empty()) return 0.0;
    const std::size_t mid = dist.size() / 2;
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
    const double upper = dist[mid];
    if (dist.size() % 2 == 1) return upper;
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

/// Factorizes the regularized kernel system once and derives scores and
/// Hessians from it.
class SteinEstimator {
public:
    SteinEstimator(const Matrix& samples, const SteinConfig& cfg) {
        cfg.validate();
        const Eigen::Index n = samples.rows();
        const Eigen::Index d = samples.cols();
        if (n < 2) throw InvalidArgument("Stein estimator: need at least 2 samples");
        if (!samples.allFinite()) throw InvalidArgument("Stein estimator: samples must be finite");
        if (((samples.rowwise() - samples.row(0)).array() == 0.0).all())
            throw InvalidArgument("Stein estimator: degenerate data (all rows identical)");

        // Scores and Hessians are translation equivariant; centering only helps rounding.
        Matrix x = samples.rowwise() - samples.colwise().mean();
        scale_ = Vector::Ones(d);
        if (cfg.standardize) {
            for (Eigen::Index j = 0; j < d; ++j) {
                const double sd = std::sqrt(x.col(j).squaredNorm() / static_cast<double>(n));
                if (sd > 0.0) scale_[j] = sd;
            }
            x = x * scale_.cwiseInverse().asDiagonal();
        }
        if (const auto* f = std::get_if<FixedBandwidth>(&cfg.bandwidth)) {
            h_ = f->h;
        } else {
            h_ = std::get<MedianHeuristic>(cfg.bandwidth).factor * median_pairwise_distance(x);
            if (!(h_ > 0.0)) throw InvalidArgument("Stein estimator: degenerate data (median pairwise distance is zero)");
        }

        const double h2 = h_ * h_;
        const double h4 = h2 * h2;
        const Eigen::Index p = d * (d + 1) / 2;
        Matrix k(n, n);
        Matrix b = Matrix::Zero(n, d);
        Matrix c = Matrix::Zero(n, p);
        Vector diff(d);
        for (Eigen::Index a = 0; a < n; ++a) {
            k(a, a) = 1.0;
            for (Eigen::Index bb = a + 1; bb < n; ++bb) {
                diff = x.row(a) - x.row(bb);
                const double kab = std::exp(-0.5 * diff.squaredNorm() / h2);
                k(a, bb) = kab;
                k(bb, a) = kab;
                // Antisymmetric in (a, b) for B, symmetric for C.
                b.row(a) += kab * diff.transpose();
                b.row(bb) -= kab * diff.transpose();
                Eigen::Index col = 0;
                for (Eigen::Index j = 0; j < d; ++j)
                    for (Eigen::Index q = j; q < d; ++q, ++col) {
                        const double v = kab * diff[j] * diff[q];
                        c(a, col) += v;
                        c(bb, col) += v;
                    }
            }
        }
        b /= h2;
        c /= h4;
        const Vector row_sums = k.rowwise().sum();
        density_ = row_sums / static_cast<double>(n);
        {
            Eigen::Index col = 0;
            for (Eigen::Index j = 0; j < d; ++j)
                for (Eigen::Index q = j; q < d; ++q, ++col)
                    if (j == q) c.col(col) -= row_sums / h2;
        }

        condition_bound_ = (row_sums.maxCoeff() + cfg.ridge) / cfg.ridge;
        k.diagonal().array() += cfg.ridge;
        Eigen::LLT<Matrix> llt(k);
        if (llt.info() != Eigen::Success) throw SingularError("Stein estimator: kernel system is not positive definite");

        // x = c + S z: grad_x = S^{-1} grad_z, H_x = S^{-1} H_z S^{-1}.
        scores_ = -llt.solve(b) * scale_.cwiseInverse().asDiagonal();
        second_ = llt.solve(c);
        {
            Eigen::Index col = 0;
            for (Eigen::Index j = 0; j < d; ++j)
                for (Eigen::Index q = j; q < d; ++q, ++col) second_.col(col) /= scale_[j] * scale_[q];
        }
        d_ = d;
    }

    const Matrix& scores() const noexcept { return scores_; }
    double bandwidth() const noexcept { return h_; }
    /// Kernel density (up to a constant) of every sample, in fitting coordinates.
    const Vector& density() const noexcept { return density_; }
    double condition_bound() const noexcept { return condition_bound_; }
    bool ill_conditioned() const noexcept { return condition_bound_ > 1e12; }

    /// Hessian estimate at sample `a`, using `scores` for the outer-product term.
    Matrix hessian(Eigen::Index a, const Matrix& scores) const {
        Matrix out(d_, d_);
        Eigen::Index col = 0;
        for (Eigen::Index j = 0; j < d_; ++j)
            for (Eigen::Index q = j; q < d_; ++q, ++col) {
                const double v = second_(a, col) - scores(a, j) * scores(a, q);
                out(j, q) = v;
                out(q, j) = v;
            }
        return out;
    }

    Matrix hessian(Eigen::Index a) const { return hessian(a, scores_); }

    std::vector<Matrix> hessians(const Matrix& scores) const {
        std::vector<Matrix> out;
        out.reserve(static_cast<std::size_t>(scores.rows()));
        for (Eigen::Index a = 0; a < scores.rows(); ++a) out.push_back(hessian(a, scores));
        return out;
    }

    ScoreHessianField field() const {
        ScoreHessianField f;
        f.scores = scores_;
        f.hessians = hessians(scores_);
        f.bandwidth = h_;
        f.condition_bound = condition_bound_;
        f.ill_conditioned = ill_conditioned();
        return f;
    }

private:
    Matrix scores_;
    Matrix second_; // (K + eta I)^{-1} C, one column per j <= k pair, in x coordinates
    Vector scale_;
    Vector density_;
    double h_ = 0.0;
    double condition_bound_ = 0.0;
    Eigen::Index d_ = 0;
};

/// Score estimate at every sample (row a estimates grad log p(x_a)).
inline Matrix stein_score(const Matrix& samples, const SteinConfig& cfg) {
    return SteinEstimator(samples, cfg).scores();
}

/// Hessian estimate at every sample; `scores` should come from `stein_score`
/// on the same samples and configuration.
inline std::vector<Matrix> stein_hessian(const Matrix& samples, const SteinConfig& cfg, const Matrix& scores) {
    if (scores.rows() != samples.rows() || scores.cols() != samples.cols())
        throw InvalidArgument("stein_hessian: scores do not match the samples");
    return SteinEstimator(samples, cfg).hessians(scores);
}

inline ScoreHessianField stein_field(const Matrix& samples, const SteinConfig& cfg) {
    return SteinEstimator(samples, cfg).field();
}

} // namespace duet
