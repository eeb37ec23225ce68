#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dsr/common.hpp"

namespace dsr {

/// Matrix-free forward-difference operator on a rows x cols image in raster
/// order. Output stacks n horizontal differences then n vertical ones; the
/// row for the last column (resp. last row) is identically zero.
class GradientOperator {
public:
    GradientOperator(Eigen::Index rows, Eigen::Index cols)
        : rows_(rows)
        , cols_(cols)
    {
        require(rows >= 1 && cols >= 1, "GradientOperator: empty image");
    }

    Eigen::Index rows() const { return rows_; }
    Eigen::Index cols() const { return cols_; }
    Eigen::Index pixels() const { return rows_ * cols_; }
    Eigen::Index outputs() const { return 2 * pixels(); }

    template <typename Scalar>
    Vector<Scalar> apply(const Vector<Scalar>& v) const
    {
        require(v.size() == pixels(), "GradientOperator::apply: size mismatch");
        Vector<Scalar> out = Vector<Scalar>::Zero(outputs());
        const Eigen::Index n = pixels();
        for (Eigen::Index y = 0; y < rows_; ++y) {
            for (Eigen::Index x = 0; x < cols_; ++x) {
                const Eigen::Index i = y * cols_ + x;
                if (x + 1 < cols_) {
                    out(i) = v(i + 1) - v(i);
                }
                if (y + 1 < rows_) {
                    out(n + i) = v(i + cols_) - v(i);
                }
            }
        }
        return out;
    }

    template <typename Scalar>
    Vector<Scalar> apply_transpose(const Vector<Scalar>& g) const
    {
        require(g.size() == outputs(), "GradientOperator::apply_transpose: size mismatch");
        Vector<Scalar> out = Vector<Scalar>::Zero(pixels());
        const Eigen::Index n = pixels();
        for (Eigen::Index y = 0; y < rows_; ++y) {
            for (Eigen::Index x = 0; x < cols_; ++x) {
                const Eigen::Index i = y * cols_ + x;
                if (x + 1 < cols_) {
                    out(i + 1) += g(i);
                    out(i) -= g(i);
                }
                if (y + 1 < rows_) {
                    out(i + cols_) += g(n + i);
                    out(i) -= g(n + i);
                }
            }
        }
        return out;
    }

private:
    Eigen::Index rows_;
    Eigen::Index cols_;
};

namespace detail {

template <typename Derived>
Vector<typename Derived::Scalar> vec(const Eigen::MatrixBase<Derived>& img)
{
    Image<typename Derived::Scalar> tmp = img;
    return Eigen::Map<const Vector<typename Derived::Scalar>>(tmp.data(), tmp.size());
}

template <typename Scalar>
Image<Scalar> unvec(const Vector<Scalar>& v, Eigen::Index rows, Eigen::Index cols)
{
    return Eigen::Map<const Image<Scalar>>(v.data(), rows, cols);
}

} // namespace detail

/// Anisotropic total variation: sum of absolute forward differences.
template <typename Derived>
typename Derived::Scalar total_variation(const Eigen::MatrixBase<Derived>& d)
{
    const GradientOperator p(d.rows(), d.cols());
    return p.apply(detail::vec(d)).template lpNorm<1>();
}

/// 1/2 ||D - Dbar||_F^2 + lambda ||P vec(D)||_1
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar tv_energy(const Eigen::MatrixBase<DerivedA>& d, const Eigen::MatrixBase<DerivedB>& dbar,
                                    typename DerivedA::Scalar lambda)
{
    if (d.rows() != dbar.rows() || d.cols() != dbar.cols()) {
        throw ContractError("tv_energy: shape mismatch");
    }
    using Scalar = typename DerivedA::Scalar;
    return Scalar(0.5) * (d - dbar).squaredNorm() + lambda * total_variation(d);
}

struct IrlsConfig {
    double lambda = 0.7;
    double epsilon_guard = 1e-6;
    int max_outer_iters = 30;
    double outer_tol = 1e-6;
    double cg_tol = 1e-10;
    /// 0 means 10 * pixel count.
    Eigen::Index cg_max_iters = 0;
};

template <typename Scalar>
struct IrlsState {
    Image<Scalar> d;
    std::vector<double> energy; // energy[0] is at D = Dbar, then one entry per outer iteration
    int iterations = 0;
    std::vector<Eigen::Index> cg_iterations;
};

struct CgResult {
    Eigen::Index iterations = 0;
    double relative_residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradient for an SPD operator A.
/// `x` holds the initial guess on entry and the solution on exit.
template <typename Scalar, typename ApplyA>
CgResult conjugate_gradient(const ApplyA& apply_a, const Vector<Scalar>& diag, const Vector<Scalar>& b,
                            Vector<Scalar>& x, double tol, Eigen::Index max_iters)
{
    const double b_norm = b.norm();
    CgResult res;
    if (b_norm == 0.0) {
        x.setZero();
        return res;
    }
    const Vector<Scalar> inv_diag = diag.cwiseInverse();
    Vector<Scalar> r = b - apply_a(x);
    res.relative_residual = r.norm() / b_norm;
    if (res.relative_residual <= tol) {
        return res;
    }
    Vector<Scalar> z = inv_diag.cwiseProduct(r);
    Vector<Scalar> p = z;
    Scalar rz = r.dot(z);
    for (Eigen::Index it = 0; it < max_iters; ++it) {
        const Vector<Scalar> ap = apply_a(p);
        const Scalar alpha = rz / p.dot(ap);
        x += alpha * p;
        r -= alpha * ap;
        res.iterations = it + 1;
        res.relative_residual = r.norm() / b_norm;
        if (res.relative_residual <= tol) {
            return res;
        }
        z = inv_diag.cwiseProduct(r);
        const Scalar rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
    }
    throw NumericalError("conjugate_gradient: no convergence after " + std::to_string(max_iters)
                         + " iterations, relative residual " + std::to_string(res.relative_residual));
}

/// Row weights 1/max(|P_i d|, eps); the squared row scaling of the reweighted operator.
template <typename Scalar>
Vector<Scalar> irls_weights(const GradientOperator& p, const Vector<Scalar>& d, double epsilon_guard)
{
    return p.apply(d).cwiseAbs().cwiseMax(static_cast<Scalar>(epsilon_guard)).cwiseInverse();
}

/// Minimises 1/2 ||D - Dbar||^2 + lambda ||P vec(D)||_1 by iteratively
/// reweighted least squares. Each outer step solves
///   (I + lambda P^T W P) vec(D) = vec(Dbar),  W = diag(1 / max(|P D_prev|, eps))
/// with matrix-free CG. This quadratic majorises the energy at D_prev, so the
/// energy trace is non-increasing.
template <typename Scalar>
IrlsState<Scalar> irls_refine(const Image<Scalar>& dbar, const IrlsConfig& cfg)
{
    require(cfg.lambda >= 0, "irls_refine: lambda must be non-negative");
    require(cfg.epsilon_guard > 0, "irls_refine: epsilon guard must be positive");
    require(cfg.max_outer_iters >= 1, "irls_refine: at least one outer iteration required");
    if (!dbar.allFinite()) {
        throw ContractError("irls_refine: input contains non-finite values");
    }
    const GradientOperator p(dbar.rows(), dbar.cols());
    const Vector<Scalar> b = detail::vec(dbar);
    const auto lambda = static_cast<Scalar>(cfg.lambda);
    const Eigen::Index cg_max = cfg.cg_max_iters > 0 ? cfg.cg_max_iters : 10 * p.pixels();

    IrlsState<Scalar> state;
    Vector<Scalar> d = b;
    state.energy.push_back(static_cast<double>(tv_energy(dbar, dbar, lambda)));

    // Diagonal of P^T W P: each pixel collects the weights of the rows touching it.
    const auto diagonal = [&](const Vector<Scalar>& w) {
        Vector<Scalar> diag = Vector<Scalar>::Ones(p.pixels());
        const Eigen::Index n = p.pixels();
        for (Eigen::Index y = 0; y < p.rows(); ++y) {
            for (Eigen::Index x = 0; x < p.cols(); ++x) {
                const Eigen::Index i = y * p.cols() + x;
                if (x + 1 < p.cols()) {
                    diag(i) += lambda * w(i);
                    diag(i + 1) += lambda * w(i);
                }
                if (y + 1 < p.rows()) {
                    diag(i) += lambda * w(n + i);
                    diag(i + p.cols()) += lambda * w(n + i);
                }
            }
        }
        return diag;
    };

    for (int it = 0; it < cfg.max_outer_iters; ++it) {
        const Vector<Scalar> w = irls_weights(p, d, cfg.epsilon_guard);
        const auto apply_a = [&](const Vector<Scalar>& v) -> Vector<Scalar> {
            return v + lambda * p.apply_transpose<Scalar>(w.cwiseProduct(p.apply(v)));
        };
        const CgResult cg = conjugate_gradient<Scalar>(apply_a, diagonal(w), b, d, cfg.cg_tol, cg_max);
        state.cg_iterations.push_back(cg.iterations);
        ++state.iterations;

        const Image<Scalar> current = detail::unvec(d, dbar.rows(), dbar.cols());
        const double e = static_cast<double>(tv_energy(current, dbar, lambda));
        const double prev = state.energy.back();
        state.energy.push_back(e);
        if (std::abs(prev - e) <= cfg.outer_tol * std::max(std::abs(prev), 1e-300)) {
            break;
        }
    }
    state.d = detail::unvec(d, dbar.rows(), dbar.cols());
    return state;
}

/// DFS refinement of a network output; irls_refine without the trace.
template <typename Scalar>
Image<Scalar> refine_output(const Image<Scalar>& dbar, const IrlsConfig& cfg)
{
    return irls_refine(dbar, cfg).d;
}

} // namespace dsr
