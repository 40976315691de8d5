#pragma once

#include <functional>

#include "qpat/core.hpp"

namespace qpat {

struct SolveOptions {
    double tol = 1e-8;       // relative residual
    int restart = 60;        // GMRES restart length
    long max_iters = -1;     // -1: 10 * n
};

struct SolveReport {
    bool converged = false;
    long iterations = 0;
    double residual = 0.0; // final relative residual
};

/// Restarted GMRES with right preconditioning for nonsymmetric systems.
/// `apply` computes A*x, `precond` applies an approximate inverse of A.
/// The initial content of `x` is used as starting guess.
inline SolveReport gmres(const std::function<void(const Vec&, Vec&)>& apply,
                         const std::function<void(const Vec&, Vec&)>& precond,
                         const Vec& b, Vec& x, const SolveOptions& opt = {}) {
    const Eigen::Index n = b.size();
    const long max_iters = opt.max_iters > 0 ? opt.max_iters : 10L * n;
    const int m = opt.restart;

    const double bnorm = b.norm();
    SolveReport rep;
    if (bnorm == 0.0) {
        x.setZero();
        rep.converged = true;
        return rep;
    }
    const double target = opt.tol * bnorm;

    Vec r(n), w(n), z(n);
    Mat V(n, m + 1);
    Mat H = Mat::Zero(m + 1, m);
    Vec cs(m), sn(m), g(m + 1);

    long total = 0;
    double rnorm = 0.0;
    while (total < max_iters) {
        apply(x, w);
        r = b - w;
        rnorm = r.norm();
        if (rnorm <= target) {
            rep.converged = true;
            break;
        }
        V.col(0) = r / rnorm;
        g.setZero();
        g(0) = rnorm;

        int j = 0;
        for (; j < m && total < max_iters; ++j, ++total) {
            precond(V.col(j), z);
            apply(z, w);
            // modified Gram-Schmidt
            for (int i = 0; i <= j; ++i) {
                H(i, j) = w.dot(V.col(i));
                w.noalias() -= H(i, j) * V.col(i);
            }
            H(j + 1, j) = w.norm();
            if (H(j + 1, j) > 0.0) V.col(j + 1) = w / H(j + 1, j);

            // apply accumulated Givens rotations to the new column
            for (int i = 0; i < j; ++i) {
                const double t = cs(i) * H(i, j) + sn(i) * H(i + 1, j);
                H(i + 1, j) = -sn(i) * H(i, j) + cs(i) * H(i + 1, j);
                H(i, j) = t;
            }
            const double denom = std::hypot(H(j, j), H(j + 1, j));
            if (denom == 0.0) { ++j; break; }
            cs(j) = H(j, j) / denom;
            sn(j) = H(j + 1, j) / denom;
            H(j, j) = denom;
            H(j + 1, j) = 0.0;
            g(j + 1) = -sn(j) * g(j);
            g(j) = cs(j) * g(j);

            rnorm = std::abs(g(j + 1));
            if (rnorm <= target) { ++j; break; }
        }

        // back substitution on the j x j triangular system
        Vec y = Vec::Zero(j);
        for (int i = j - 1; i >= 0; --i) {
            double s = g(i);
            for (int k = i + 1; k < j; ++k) s -= H(i, k) * y(k);
            y(i) = s / H(i, i);
        }
        Vec update = Vec::Zero(n);
        for (int i = 0; i < j; ++i) update.noalias() += y(i) * V.col(i);
        precond(update, z);
        x += z;

        if (rnorm <= target) {
            // recompute the true residual once after convergence of the
            // least-squares estimate
            apply(x, w);
            rnorm = (b - w).norm();
            if (rnorm <= target * 1.01) {
                rep.converged = true;
                break;
            }
        }
    }

    rep.iterations = total;
    rep.residual = rnorm / bnorm;
    return rep;
}

/// Conjugate gradients for SPD operators; used by the quadratic prox.
inline SolveReport conjugate_gradient(const std::function<void(const Vec&, Vec&)>& apply,
                                      const Vec& b, Vec& x, double tol = 1e-10,
                                      long max_iters = -1) {
    const Eigen::Index n = b.size();
    if (max_iters <= 0) max_iters = 10L * n;
    SolveReport rep;
    const double bnorm = b.norm();
    if (bnorm == 0.0) {
        x.setZero();
        rep.converged = true;
        return rep;
    }
    Vec r(n), p(n), ap(n);
    apply(x, ap);
    r = b - ap;
    p = r;
    double rs = r.squaredNorm();
    const double target2 = tol * tol * bnorm * bnorm;
    long k = 0;
    for (; k < max_iters && rs > target2; ++k) {
        apply(p, ap);
        const double alpha = rs / p.dot(ap);
        x += alpha * p;
        r -= alpha * ap;
        const double rs_new = r.squaredNorm();
        p = r + (rs_new / rs) * p;
        rs = rs_new;
    }
    rep.converged = rs <= target2;
    rep.iterations = k;
    rep.residual = std::sqrt(rs) / bnorm;
    return rep;
}

} // namespace qpat
