#pragma once

// Conic solver backend: operator-splitting (ADMM) on the homogeneous
// self-dual embedding, with Ruiz equilibration and direct factorization of
// the linear system. Handles zero, nonnegative, second-order, PSD and 3-d
// power cones.

#include "evdro/conic.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <string>

namespace evdro {

enum class SolveStatus { Optimal, Infeasible, Unbounded, NumericalTrouble };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "Optimal";
        case SolveStatus::Infeasible: return "Infeasible";
        case SolveStatus::Unbounded: return "Unbounded";
        default: return "NumericalTrouble";
    }
}

struct SolverOptions {
    double eps = 1e-8;            // feasibility and duality-gap target
    double eps_accept = 1e-6;     // residual bound required to report Optimal
    int max_iter = 100000;
    double relax = 1.5;           // over-relaxation
    int check_every = 25;
    int aa_memory = 40;           // Anderson acceleration window (0 disables)
    bool verbose = false;

    // DRO_SOLVER_TOL overrides the target tolerance when set
    static SolverOptions from_env() {
        SolverOptions o;
        if (const char* tol = std::getenv("DRO_SOLVER_TOL")) {
            const double t = std::atof(tol);
            if (t > 0) o.eps = t;
        }
        return o;
    }
};

struct SolveResult {
    SolveStatus status = SolveStatus::NumericalTrouble;
    double objective = std::numeric_limits<double>::quiet_NaN();
    Vec x, y, s;
    int iterations = 0;
    double max_cone_residual = std::numeric_limits<double>::infinity();
    double primal_residual = 0, dual_residual = 0, duality_gap = 0;
    double solver_eps = 0;

    Vec block(const ConicProgram& prog, const std::string& name) const {
        const VarBlock& b = prog.block(name);
        return x.segment(b.offset, b.rows * b.cols);
    }

    Mat block_matrix(const ConicProgram& prog, const std::string& name) const {
        const VarBlock& b = prog.block(name);
        return Eigen::Map<const Mat>(x.data() + b.offset, b.rows, b.cols);
    }

    Vec dual_of_group(const ConicProgram& prog, const std::string& name) const {
        const auto rows = prog.group_rows(name);
        Vec d(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) d(static_cast<long>(i)) = y(rows[i]);
        return d;
    }
};

namespace cones {

inline void proj_nonneg(Eigen::Ref<Vec> v) { v = v.cwiseMax(0.0); }

inline void proj_soc(Eigen::Ref<Vec> v) {
    const double t = v(0);
    const double nx = v.tail(v.size() - 1).norm();
    if (nx <= t) return;
    if (nx <= -t) {
        v.setZero();
        return;
    }
    const double scale = 0.5 * (1.0 + t / nx);
    v(0) = scale * nx;
    v.tail(v.size() - 1) *= scale;
}

inline void proj_psd(Eigen::Ref<Vec> v, int p) {
    Mat M = svec_to_mat(v, p);
    Eigen::SelfAdjointEigenSolver<Mat> es(M);
    const Vec lam = es.eigenvalues().cwiseMax(0.0);
    M = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    v = mat_to_svec(M);
}

inline bool in_power(double x, double y, double z, double a) {
    if (x < 0 || y < 0) return false;
    if (z == 0.0) return true;
    if (x == 0.0 || y == 0.0) return false;
    return a * std::log(x) + (1 - a) * std::log(y) >= std::log(std::abs(z));
}

inline bool in_power_polar(double x, double y, double z, double a) {
    return in_power(-x / a, -y / (1 - a), z, a);
}

inline void proj_power(Eigen::Ref<Vec> v, double a) {
    const double x = v(0), y = v(1), z = v(2);
    if (in_power(x, y, z, a)) return;
    if (in_power_polar(x, y, z, a)) {
        v.setZero();
        return;
    }
    const double rh = std::abs(z);
    if (rh == 0.0) {
        v(0) = std::max(x, 0.0);
        v(1) = std::max(y, 0.0);
        return;
    }
    auto calc = [&](double w, double aa, double r) {
        return 0.5 * (w + std::sqrt(w * w + 4.0 * aa * r * (rh - r)));
    };
    auto f = [&](double r) {
        const double X = calc(x, a, r);
        const double Y = calc(y, 1 - a, r);
        return std::pow(X, a) * std::pow(Y, 1 - a) - r;
    };
    // f decreases from >=0 at r=0 to <0 at r=rh; safeguarded Newton
    double lo = 0.0, hi = rh;
    double r = 0.5 * rh;
    for (int it = 0; it < 200; ++it) {
        const double X = calc(x, a, r);
        const double Y = calc(y, 1 - a, r);
        const double fr = std::pow(X, a) * std::pow(Y, 1 - a) - r;
        if (std::abs(fr) <= 1e-14 * (1.0 + rh)) break;
        if (fr > 0)
            lo = r;
        else
            hi = r;
        const double dX = (X > 0) ? a * (rh - 2 * r) / (2.0 * X - x) : 0.0;
        const double dY = (Y > 0) ? (1 - a) * (rh - 2 * r) / (2.0 * Y - y) : 0.0;
        double df = -1.0;
        if (X > 0 && Y > 0)
            df += std::pow(X, a) * std::pow(Y, 1 - a) * (a * dX / X + (1 - a) * dY / Y);
        double next = r - fr / df;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - r) <= 1e-16 * (1.0 + rh)) { r = next; break; }
        r = next;
    }
    v(0) = calc(x, a, r);
    v(1) = calc(y, 1 - a, r);
    v(2) = (z > 0 ? r : -r);
}

}  // namespace cones

namespace detail {

// projection onto K (primal cone product)
inline void project_primal(const std::vector<ConeBlock>& blocks, Eigen::Ref<Vec> s) {
    for (const auto& b : blocks) {
        auto seg = s.segment(b.row, b.dim);
        switch (b.cone) {
            case Cone::Zero: seg.setZero(); break;
            case Cone::Nonnegative: cones::proj_nonneg(seg); break;
            case Cone::SecondOrder: cones::proj_soc(seg); break;
            case Cone::PSD: cones::proj_psd(seg, b.mat_dim); break;
            case Cone::Power3D: cones::proj_power(seg, b.alpha); break;
        }
    }
}

// projection onto K* via Moreau where the cone is not self-dual
inline void project_dual(const std::vector<ConeBlock>& blocks, Eigen::Ref<Vec> y) {
    for (const auto& b : blocks) {
        auto seg = y.segment(b.row, b.dim);
        switch (b.cone) {
            case Cone::Zero: break;  // dual of {0} is free
            case Cone::Nonnegative: cones::proj_nonneg(seg); break;
            case Cone::SecondOrder: cones::proj_soc(seg); break;
            case Cone::PSD: cones::proj_psd(seg, b.mat_dim); break;
            case Cone::Power3D: {
                Vec neg = -seg;
                cones::proj_power(neg, b.alpha);
                seg += neg;
                break;
            }
        }
    }
}

inline double cone_distance(const std::vector<ConeBlock>& blocks, const Vec& s) {
    Vec p = s;
    project_primal(blocks, p);
    return (p - s).lpNorm<Eigen::Infinity>();
}

}  // namespace detail

inline SolveResult solve(const ConicProgram& prog, SolverOptions opts = SolverOptions::from_env()) {
    const int n = prog.num_vars();
    const int m = prog.num_rows();
    if (n == 0 || m == 0) throw SolverError("solve: empty program");

    const Eigen::SparseMatrix<double> A = prog.matrix();
    const Vec b = prog.rhs();
    const Vec c = prog.cost();
    const auto& blocks = prog.cone_blocks();

    // --- Ruiz equilibration (block-uniform row scaling keeps cones intact) ---
    Vec dr = Vec::Ones(m), dc = Vec::Ones(n);
    {
        Eigen::SparseMatrix<double> As = A;
        for (int pass = 0; pass < 10; ++pass) {
            Vec rmax = Vec::Zero(m), cmax = Vec::Zero(n);
            for (int k = 0; k < As.outerSize(); ++k)
                for (Eigen::SparseMatrix<double>::InnerIterator it(As, k); it; ++it) {
                    const double v = std::abs(it.value());
                    rmax(it.row()) = std::max(rmax(it.row()), v);
                    cmax(it.col()) = std::max(cmax(it.col()), v);
                }
            for (const auto& blk : blocks) {
                if (blk.cone == Cone::Zero || blk.cone == Cone::Nonnegative) continue;
                const double bm = rmax.segment(blk.row, blk.dim).maxCoeff();
                rmax.segment(blk.row, blk.dim).setConstant(bm);
            }
            Vec rs(m), cs(n);
            for (int i = 0; i < m; ++i) rs(i) = rmax(i) > 0 ? 1.0 / std::sqrt(rmax(i)) : 1.0;
            for (int j = 0; j < n; ++j) cs(j) = cmax(j) > 0 ? 1.0 / std::sqrt(cmax(j)) : 1.0;
            As = rs.asDiagonal() * As * cs.asDiagonal();
            dr = dr.cwiseProduct(rs);
            dc = dc.cwiseProduct(cs);
        }
    }
    const Eigen::SparseMatrix<double> Ah = dr.asDiagonal() * A * dc.asDiagonal();
    Vec bh = dr.cwiseProduct(b);
    Vec ch = dc.cwiseProduct(c);
    const double sc_b = std::sqrt(static_cast<double>(m)) / (1.0 + bh.norm());
    const double sc_c = std::sqrt(static_cast<double>(n)) / (1.0 + ch.norm());
    bh *= sc_b;
    ch *= sc_c;

    // --- factor I + Q, Q = [[0, A', c], [-A, 0, b], [-c', -b', 0]] ---
    const int Nfull = n + m + 1;
    Mat M = Mat::Identity(Nfull, Nfull);
    for (int k = 0; k < Ah.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(Ah, k); it; ++it) {
            M(it.col(), n + it.row()) += it.value();   // A'
            M(n + it.row(), it.col()) -= it.value();   // -A
        }
    M.col(Nfull - 1).head(n) += ch;
    M.col(Nfull - 1).segment(n, m) += bh;
    M.row(Nfull - 1).head(n) -= ch.transpose();
    M.row(Nfull - 1).segment(n, m) -= bh.transpose();
    Eigen::PartialPivLU<Mat> lu(M);

    Vec u = Vec::Zero(Nfull), v = Vec::Zero(Nfull);
    u(Nfull - 1) = 1.0;
    v(Nfull - 1) = 1.0;

    SolveResult res;
    res.solver_eps = opts.eps;
    const double bnorm = b.norm(), cnorm = c.norm();

    auto unscale = [&](const Vec& uu, const Vec& vv, Vec& xo, Vec& yo, Vec& so) -> bool {
        const double tau = uu(Nfull - 1);
        if (tau <= 1e-12) return false;
        xo = dc.cwiseProduct(uu.head(n)) / (tau * sc_b);
        yo = dr.cwiseProduct(uu.segment(n, m)) / (tau * sc_c);
        so = vv.segment(n, m).cwiseQuotient(dr) / (tau * sc_b);
        return true;
    };

    // one fixed-point step of the splitting; overwrites (uu, vv)
    Vec ut(Nfull);
    auto step = [&](Vec& uu, Vec& vv) {
        ut = lu.solve(uu + vv);
        const Vec t = opts.relax * ut + (1.0 - opts.relax) * uu;
        Vec unew = t - vv;
        detail::project_dual(blocks, unew.segment(n, m));
        unew(Nfull - 1) = std::max(unew(Nfull - 1), 0.0);
        vv = vv - t + unew;
        uu = unew;
    };

    // Anderson acceleration (type II) over z = (u, v), with restarts and a
    // best-iterate snapshot as safeguards
    const int aa_mem = std::max(0, opts.aa_memory);
    const int z_dim = 2 * Nfull;
    Mat dZ = Mat::Zero(z_dim, aa_mem), dF = Mat::Zero(z_dim, aa_mem);
    int aa_cols = 0, aa_head = 0;
    Vec z_last, f_last;
    double f_min = std::numeric_limits<double>::infinity();
    const double z0_norm = std::sqrt(2.0);

    Vec best_x, best_y, best_s;
    double best_res = std::numeric_limits<double>::infinity();

    int iter = 0;
    for (; iter < opts.max_iter; ++iter) {
        Vec z(z_dim);
        z << u, v;
        step(u, v);
        Vec g(z_dim);
        g << u, v;
        const Vec f = g - z;
        const double fn = f.norm();

        if (fn > 10.0 * f_min || fn < 1e-14) {
            aa_cols = 0;  // diverging (or converged); drop the history
            aa_head = 0;
            f_min = fn;
        }
        f_min = std::min(f_min, fn);

        if (aa_mem > 0 && z_last.size() == z_dim) {
            dZ.col(aa_head) = z - z_last;
            dF.col(aa_head) = f - f_last;
            aa_head = (aa_head + 1) % aa_mem;
            aa_cols = std::min(aa_cols + 1, aa_mem);
        }
        z_last = z;
        f_last = f;

        if (aa_cols >= 2) {
            const Mat Fw = dF.leftCols(aa_cols);
            Mat gram = Fw.transpose() * Fw;
            gram.diagonal().array() += 1e-12 * gram.trace() + 1e-300;
            const Vec gamma = gram.ldlt().solve(Fw.transpose() * f);
            const Vec z_acc = g - (dZ.leftCols(aa_cols) + Fw) * gamma;
            if (z_acc.allFinite() && z_acc.norm() > 1e-10 * z0_norm) {
                u = z_acc.head(Nfull);
                v = z_acc.tail(Nfull);
            }
        }

        if ((iter + 1) % opts.check_every != 0) continue;

        if (opts.verbose && (iter + 1) % (opts.check_every * 20) == 0)
            std::fprintf(stderr, "iter %6d  |f| %.3e  f_min %.3e  aa_cols %d  tau %.3e\n",
                         iter + 1, fn, f_min, aa_cols, u(Nfull - 1));

        Vec xo, yo, so;
        if (unscale(u, v, xo, yo, so)) {
            const double pres = (A * xo + so - b).norm() / (1.0 + bnorm);
            const double dres = (A.transpose() * yo + c).norm() / (1.0 + cnorm);
            const double pobj = c.dot(xo), dobj = -b.dot(yo);
            const double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
            const double worst = std::max({pres, dres, gap});
            if (worst < best_res) {
                best_res = worst;
                best_x = xo;
                best_y = yo;
                best_s = so;
            }
            if (pres < opts.eps && dres < opts.eps && gap < opts.eps) {
                res.status = SolveStatus::Optimal;
                res.x = xo;
                res.y = yo;
                res.s = so;
                res.primal_residual = pres;
                res.dual_residual = dres;
                res.duality_gap = gap;
                break;
            }
        } else {
            // tau ~ 0: check infeasibility certificates
            const Vec uy = dr.cwiseProduct(u.segment(n, m));
            const double bty = b.dot(uy);
            if (bty < -1e-9) {
                const double inf_res = (A.transpose() * uy).norm() * bnorm / (-bty);
                if (inf_res < opts.eps_accept) {
                    res.status = SolveStatus::Infeasible;
                    res.iterations = iter + 1;
                    return res;
                }
            }
            const Vec ux = dc.cwiseProduct(u.head(n));
            const Vec us = v.segment(n, m).cwiseQuotient(dr);
            const double ctx = c.dot(ux);
            if (ctx < -1e-9) {
                const double unb_res = (A * ux + us).norm() * cnorm / (-ctx);
                if (unb_res < opts.eps_accept) {
                    res.status = SolveStatus::Unbounded;
                    res.iterations = iter + 1;
                    return res;
                }
            }
        }
    }

    res.iterations = iter + 1;
    if (res.status != SolveStatus::Optimal) {
        Vec xo, yo, so;
        double worst = std::numeric_limits<double>::infinity();
        double pres = 0, dres = 0, gap = 0;
        if (unscale(u, v, xo, yo, so)) {
            pres = (A * xo + so - b).norm() / (1.0 + bnorm);
            dres = (A.transpose() * yo + c).norm() / (1.0 + cnorm);
            const double pobj = c.dot(xo), dobj = -b.dot(yo);
            gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
            worst = std::max({pres, dres, gap});
        }
        if (best_res < worst) {  // an earlier snapshot was better than the final point
            xo = best_x;
            yo = best_y;
            so = best_s;
            pres = dres = gap = best_res;
            worst = best_res;
        }
        if (std::isfinite(worst)) {
            res.x = xo;
            res.y = yo;
            res.s = so;
            res.primal_residual = pres;
            res.dual_residual = dres;
            res.duality_gap = gap;
            if (worst < opts.eps_accept) res.status = SolveStatus::Optimal;
        }
    }
    if (res.x.size() == n) {
        res.objective = prog.cost().dot(res.x) + prog.cost_constant();
        res.max_cone_residual =
            std::max((A * res.x + res.s - b).lpNorm<Eigen::Infinity>() / (1.0 + b.lpNorm<Eigen::Infinity>()),
                     detail::cone_distance(blocks, res.s));
    }
    return res;
}

}  // namespace evdro
