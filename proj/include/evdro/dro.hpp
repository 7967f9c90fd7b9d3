#pragma once

// Assembly of the distributionally robust balancing problem as a conic
// program, the non-robust baseline, and the frozen-multiplier rendering of
// the full dual form, plus plan extraction from a solved program.
//
// Default (Robust) mode substitutes worst-case coordinate bounds for r and c
// inside the constraints and carries the objective's supply uncertainty
// through the dual block (Q_c, q_c, v_c, t_c) with its Schur-complement PSD
// constraint; the charging-utilization epigraph Z >= 1/Y^a is an exact 3-d
// power cone.

#include "evdro/ambiguity.hpp"
#include "evdro/fleet.hpp"
#include "evdro/solver.hpp"

#include <optional>
#include <string>
#include <vector>

namespace evdro {

enum class Mode { Robust, NonRobust, FullTheorem1 };

struct ProblemInstance {
    HorizonConfig config;
    CostMatrices costs;
    TransitionModel trans;
    FleetState initial;
    ServiceBounds bounds;
    AmbiguitySet demand_set;
    AmbiguitySet supply_set;
    Mode mode = Mode::Robust;

    void validate() const {
        config.validate();
        costs.validate();
        initial.validate();
        bounds.validate();
        const long nt = static_cast<long>(config.N) * config.tau;
        if (costs.regions() != config.N || initial.regions() != config.N)
            throw DimensionError("ProblemInstance: region count mismatch");
        if (static_cast<int>(trans.steps.size()) < config.tau - 1)
            throw DimensionError("ProblemInstance: transition model shorter than horizon");
        if (bounds.l.rows() != config.tau || bounds.l.cols() != config.N)
            throw DimensionError("ProblemInstance: service bounds must be tau x N");
        if (demand_set.dim() != nt || supply_set.dim() != nt)
            throw DimensionError("ProblemInstance: ambiguity sets must have dimension N*tau");
    }
};

// Multipliers of the first-pass robust solve, padded to length N*tau
// (dynamics multipliers only exist for k = 1..tau-1).
struct FrozenDuals {
    Vec lamD, lamU, lamS, lamV, lamO, lamL, lams, laml;
};

struct FirstPass {
    DecisionPlan plan;
    Mat Z;  // tau x N, zero at regions without stations
    FrozenDuals duals;
};

namespace detail {

inline int arc(int N, int i, int j) { return i + N * j; }

// allowed(i,j): the arc i->j may carry flow
inline std::vector<std::vector<bool>> x_mask(const ProblemInstance& inst) {
    const int N = inst.config.N;
    std::vector<std::vector<bool>> m(N, std::vector<bool>(N, false));
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            m[i][j] = (i != j) && inst.costs.W(i, j) < inst.config.m1;
    return m;
}

inline std::vector<std::vector<bool>> y_mask(const ProblemInstance& inst) {
    const int N = inst.config.N;
    std::vector<std::vector<bool>> m(N, std::vector<bool>(N, false));
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            m[i][j] = (i != j) && reachable(inst.costs.Wstar(i, j)) &&
                      inst.costs.Wstar(i, j) < inst.config.m2;
    return m;
}

inline std::vector<int> station_regions(const ProblemInstance& inst) {
    std::vector<int> s;
    for (int j = 0; j < inst.config.N; ++j)
        if (inst.costs.station(j)) s.push_back(j);
    return s;
}

// net inflow expression of a dispatch block at (step k, region i)
inline LinExpr net_inflow(const ConicProgram& p, const std::string& blk, int N, int k, int i,
                          const std::vector<std::vector<bool>>& mask) {
    LinExpr e;
    for (int j = 0; j < N; ++j) {
        if (mask[static_cast<size_t>(j)][static_cast<size_t>(i)])
            e += p.x(blk, arc(N, j, i), k);  // inflow j -> i
        if (mask[static_cast<size_t>(i)][static_cast<size_t>(j)])
            e -= p.x(blk, arc(N, i, j), k);  // outflow i -> j
    }
    return e;
}

struct Skeleton {
    std::vector<std::vector<bool>> mx, my;
    std::vector<int> stations;
    std::vector<int> station_of;  // region -> index into stations, -1 otherwise
};

// registers X, Y, S, trajectories and Z; adds every deterministic constraint
// shared by all modes, with r and c substituted by the given vectors
inline Skeleton build_skeleton(ConicProgram& p, const ProblemInstance& inst, const Vec& r_sub,
                               const Vec& c_sub) {
    const int N = inst.config.N, tau = inst.config.tau;
    Skeleton sk;
    sk.mx = x_mask(inst);
    sk.my = y_mask(inst);
    sk.stations = station_regions(inst);
    sk.station_of.assign(static_cast<size_t>(N), -1);
    for (size_t s = 0; s < sk.stations.size(); ++s)
        sk.station_of[static_cast<size_t>(sk.stations[s])] = static_cast<int>(s);

    if (inst.config.theta > 0.0) {
        for (int j : sk.stations) {
            bool fed = false;
            for (int i = 0; i < N && !fed; ++i)
                fed = sk.my[static_cast<size_t>(i)][static_cast<size_t>(j)];
            if (!fed) {
                std::ostringstream os;
                os << "assemble: station region " << j
                   << " is unreachable within m2 from every other region; positive net "
                      "charging inflow is impossible";
                throw InfeasibleError(os.str());
            }
        }
    }

    p.add_variables("X", N * N, tau);
    p.add_variables("Y", N * N, tau);
    p.add_variables("S", N, tau);
    if (tau > 1) {
        p.add_variables("V", N, tau - 1);
        p.add_variables("O", N, tau - 1);
        p.add_variables("L", N, tau - 1);
    }
    const bool use_z = !sk.stations.empty() && inst.config.theta > 0.0;
    if (use_z) p.add_variables("Z", static_cast<int>(sk.stations.size()), tau);

    // reach / zero-pattern constraints; diagonal self-flows are pinned too
    // (they cancel in every net flow and would only add null directions)
    for (int k = 0; k < tau; ++k) {
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
                if (sk.mx[static_cast<size_t>(i)][static_cast<size_t>(j)])
                    p.add_nonneg(p.x("X", arc(N, i, j), k));
                else
                    p.add_zero(p.x("X", arc(N, i, j), k));
                if (sk.my[static_cast<size_t>(i)][static_cast<size_t>(j)])
                    p.add_nonneg(p.x("Y", arc(N, i, j), k));
                else
                    p.add_zero(p.x("Y", arc(N, i, j), k));
            }
    }

    auto Vk = [&](int k, int i) -> LinExpr {  // V^{k+1} with k 0-based step
        return k == 0 ? LinExpr(inst.initial.V(i)) : p.x("V", i, k - 1);
    };
    auto Ok = [&](int k, int i) -> LinExpr {
        return k == 0 ? LinExpr(inst.initial.O(i)) : p.x("O", i, k - 1);
    };

    // supply pool definition, positivity and service-quality bounds
    for (int k = 0; k < tau; ++k) {
        for (int i = 0; i < N; ++i) {
            p.add_zero(p.x("S", i, k) - net_inflow(p, "X", N, k, i, sk.mx) - Vk(k, i), "lam_S");
            p.add_nonneg(p.x("S", i, k) - kEpsSupply, "lam_s");
            const double rki = r_sub(static_cast<long>(k) * N + i);
            // a demand too small to cover even the positivity floor would make
            // the lower-ratio bound contradict S >= eps; treat it as vacuous
            // (a constant row keeps the multiplier group aligned)
            if (rki < inst.bounds.l(k, i) * kEpsSupply)
                p.add_nonneg(LinExpr(0.0), "lam_D");
            else
                p.add_nonneg(LinExpr(rki) - inst.bounds.l(k, i) * p.x("S", i, k), "lam_D");
            p.add_nonneg(inst.bounds.h(k, i) * p.x("S", i, k) - rki, "lam_U");
        }
    }

    // fleet and low-battery dynamics for k = 1..tau-1
    for (int k = 0; k + 1 < tau; ++k) {
        const TransitionStep& tr = inst.trans.at(k);
        for (int i = 0; i < N; ++i) {
            LinExpr v = -p.x("V", i, k), o = -p.x("O", i, k), l = -p.x("L", i, k);
            for (int j = 0; j < N; ++j) {
                v += tr.Pv(j, i) * p.x("S", j, k) + tr.Qv(j, i) * Ok(k, j);
                o += tr.Po(j, i) * p.x("S", j, k) + tr.Qo(j, i) * Ok(k, j);
                l += tr.Pl(j, i) * p.x("S", j, k);
            }
            v += c_sub(static_cast<long>(k) * N + i);
            l += net_inflow(p, "Y", N, k, i, sk.my);
            p.add_zero(v, "lam_V");
            p.add_zero(o, "lam_O");
            p.add_zero(l, "lam_L");
            p.add_nonneg(p.x("L", i, k) - kEpsLowBattery, "lam_l");
        }
    }

    // charging epigraph: (Z, Ynet, 1) in P_alpha encodes Z >= 1/Ynet^a
    const double alpha = 1.0 / (1.0 + inst.config.a);
    for (int k = 0; use_z && k < tau; ++k) {
        for (int j : sk.stations) {
            const LinExpr ynet = net_inflow(p, "Y", N, k, j, sk.my);
            p.add_nonneg(ynet - kEpsNetInflow, "ynet_floor");
            p.add_power(p.x("Z", sk.station_of[static_cast<size_t>(j)], k), ynet, LinExpr(1.0),
                        alpha, "powZ");
        }
    }
    return sk;
}

inline LinExpr jd_expr(const ConicProgram& p, const ProblemInstance& inst, const Skeleton& sk) {
    const int N = inst.config.N;
    LinExpr e;
    for (int k = 0; k < inst.config.tau; ++k)
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
                if (sk.mx[static_cast<size_t>(i)][static_cast<size_t>(j)])
                    e += inst.costs.W(i, j) * p.x("X", arc(N, i, j), k);
                if (sk.my[static_cast<size_t>(i)][static_cast<size_t>(j)])
                    e += inst.config.beta * inst.costs.Wstar(i, j) * p.x("Y", arc(N, i, j), k);
            }
    return e;
}

inline int packed(int n, int i, int j) {  // lower-triangle index, i >= j
    if (i < j) std::swap(i, j);
    return j * n - j * (j - 1) / 2 + (i - j);
}

// Dual block bounding sup E[z' xi] over `set`, where z_expr gives the
// (affine) integrand coefficient per coordinate.  Adds variables
// <tag>_Q (packed lower triangle), <tag>_q, <tag>_v, <tag>_t, the Schur PSD
// block, the t inequality (second-order cone) and v >= 0; returns v + t.
inline LinExpr add_dual_block(ConicProgram& p, const AmbiguitySet& set,
                              const std::vector<LinExpr>& z_expr, const std::string& tag) {
    const int n = static_cast<int>(set.dim());
    const std::string Qn = tag + "_Q", qn = tag + "_q", vn = tag + "_v", tn = tag + "_t";
    p.add_variables(Qn, svec_len(n));
    p.add_variables(qn, n);
    p.add_variables(vn, 1);
    p.add_variables(tn, 1);

    auto Q = [&](int i, int j) { return p.x(Qn, packed(n, i, j)); };

    std::vector<std::vector<LinExpr>> M(static_cast<size_t>(n + 1),
                                        std::vector<LinExpr>(static_cast<size_t>(n + 1)));
    M[0][0] = p.x(vn, 0);
    for (int j = 0; j < n; ++j) {
        LinExpr off = 0.5 * (p.x(qn, j) - z_expr[static_cast<size_t>(j)]);
        M[0][static_cast<size_t>(j + 1)] = off;
        M[static_cast<size_t>(j + 1)][0] = off;
        for (int i = 0; i < n; ++i) M[static_cast<size_t>(i + 1)][static_cast<size_t>(j + 1)] = Q(i, j);
    }
    p.add_psd(M, tag + "_schur");
    p.add_nonneg(p.x(vn, 0), tag + "_vpos");

    // t >= (gamma2 Sigma + cc') . Q + c'q + sqrt(gamma1) ||Sigma^{1/2}(q + 2Qc)||
    const Mat G = set.gamma2 * set.Sigma + set.center * set.center.transpose();
    LinExpr head = p.x(tn, 0);
    for (int j = 0; j < n; ++j) {
        head -= set.center(j) * p.x(qn, j);
        for (int i = j; i < n; ++i)
            head -= ((i == j) ? G(i, i) : G(i, j) + G(j, i)) * Q(i, j);
    }
    std::vector<LinExpr> soc{head};
    const double root = std::sqrt(set.gamma1);
    for (int r = 0; r < n; ++r) {
        LinExpr u;
        for (int col = 0; col < n; ++col) {
            u += root * set.sigma_sqrt(r, col) * p.x(qn, col);
            for (int j = 0; j < n; ++j)
                u += 2.0 * root * set.sigma_sqrt(r, col) * set.center(j) * Q(col, j);
        }
        soc.push_back(u);
    }
    p.add_soc(soc, tag + "_tcone");
    return p.x(vn, 0) + p.x(tn, 0);
}

}  // namespace detail

inline ConicProgram assemble_robust(const ProblemInstance& inst) {
    if (inst.mode != Mode::Robust) throw DomainError("assemble_robust: mode must be Robust");
    inst.validate();
    const int N = inst.config.N, tau = inst.config.tau;
    ConicProgram p;
    const Vec r_upper = worst_case_coordinate_bounds(inst.demand_set).first;
    const Vec c_lower = worst_case_coordinate_bounds(inst.supply_set).second;
    const auto sk = detail::build_skeleton(p, inst, r_upper, c_lower);

    // objective uncertainty: sup over F_c of E[theta Z' c] via the dual block
    std::vector<LinExpr> z(static_cast<size_t>(N) * tau);
    for (int k = 0; k < tau; ++k)
        for (int i = 0; i < N; ++i) {
            const int s = sk.station_of[static_cast<size_t>(i)];
            z[static_cast<size_t>(k * N + i)] = (s >= 0 && p.has_block("Z"))
                                                   ? inst.config.theta * p.x("Z", s, k)
                                                   : LinExpr(0.0);
        }
    const LinExpr vc_tc = detail::add_dual_block(p, inst.supply_set, z, "c");
    p.set_objective(detail::jd_expr(p, inst, sk) + vc_tc);
    return p;
}

inline ConicProgram assemble_nonrobust(const ProblemInstance& inst) {
    if (inst.mode != Mode::NonRobust)
        throw DomainError("assemble_nonrobust: mode must be NonRobust");
    inst.validate();
    const int N = inst.config.N, tau = inst.config.tau;
    ConicProgram p;
    const auto sk = detail::build_skeleton(p, inst, inst.demand_set.center,
                                           inst.supply_set.center);
    LinExpr obj = detail::jd_expr(p, inst, sk);
    if (p.has_block("Z"))
        for (int k = 0; k < tau; ++k)
            for (int i : sk.stations)
                obj += inst.config.theta *
                       inst.supply_set.center(static_cast<long>(k) * N + i) *
                       p.x("Z", sk.station_of[static_cast<size_t>(i)], k);
    p.set_objective(obj);
    return p;
}

inline bool verify_schur(double v, const Vec& qvec, const Mat& Q, double tol = 1e-8) {
    const long n = qvec.size();
    if (Q.rows() != n || Q.cols() != n) throw DimensionError("verify_schur: dimension mismatch");
    Mat M(n + 1, n + 1);
    M(0, 0) = v;
    M.block(0, 1, 1, n) = 0.5 * qvec.transpose();
    M.block(1, 0, n, 1) = 0.5 * qvec;
    M.block(1, 1, n, n) = 0.5 * (Q + Q.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(M);
    return es.eigenvalues().minCoeff() >= -tol;
}

namespace detail {

inline Vec padded_dual(const ConicProgram& p, const SolveResult& res, const std::string& group,
                       long nt) {
    Vec out = Vec::Zero(nt);
    if (p.groups().count(group)) {
        const Vec d = res.dual_of_group(p, group);
        out.head(d.size()) = d;
    }
    return out;
}

}  // namespace detail

struct PlanExtract {
    DecisionPlan plan;
    Mat Z;           // tau x N, zero where no station
    double jd = 0;   // balancing-cost part of the objective
    double je = 0;   // (worst-case) utilization part
    double objective = 0;
};

inline PlanExtract extract_plan(const ConicProgram& prog, const SolveResult& res,
                                const ProblemInstance& inst) {
    if (res.status != SolveStatus::Optimal)
        throw SolverError(std::string("extract_plan: solve status is ") + to_string(res.status));
    const int N = inst.config.N, tau = inst.config.tau;
    const double tol = std::max(1e-6, 100.0 * res.primal_residual);

    PlanExtract out;
    DecisionPlan& plan = out.plan;
    const auto mx = detail::x_mask(inst);
    const auto my = detail::y_mask(inst);
    const Mat Xall = res.block_matrix(prog, "X");
    const Mat Yall = res.block_matrix(prog, "Y");
    auto take = [&](double raw, bool allowed) {
        if (!allowed) {  // structurally zero arc; only solver noise may appear
            if (std::abs(raw) > tol)
                throw SolverError("extract_plan: zero-pattern violated beyond tolerance");
            return 0.0;
        }
        if (raw < -tol)
            throw SolverError("extract_plan: negative flow beyond solver tolerance");
        return std::max(0.0, raw);
    };
    for (int k = 0; k < tau; ++k) {
        Mat Xk(N, N), Yk(N, N);
        for (int j = 0; j < N; ++j)
            for (int i = 0; i < N; ++i) {
                const auto ii = static_cast<size_t>(i), jj = static_cast<size_t>(j);
                Xk(i, j) = take(Xall(detail::arc(N, i, j), k), mx[ii][jj]);
                Yk(i, j) = take(Yall(detail::arc(N, i, j), k), my[ii][jj]);
            }
        plan.X.push_back(Xk);
        plan.Y.push_back(Yk);
    }

    plan.S = res.block_matrix(prog, "S").transpose();  // tau x N
    for (int k = 0; k < tau; ++k)
        for (int i = 0; i < N; ++i) plan.S(k, i) = std::max(0.0, plan.S(k, i));

    plan.Vtraj = Mat::Zero(tau, N);
    plan.Otraj = Mat::Zero(tau, N);
    plan.Ltraj = Mat::Zero(tau, N);
    plan.Vtraj.row(0) = inst.initial.V.transpose();
    plan.Otraj.row(0) = inst.initial.O.transpose();
    plan.Ltraj.row(0) = inst.initial.L.transpose();
    if (tau > 1) {
        plan.Vtraj.bottomRows(tau - 1) = res.block_matrix(prog, "V").transpose();
        plan.Otraj.bottomRows(tau - 1) = res.block_matrix(prog, "O").transpose();
        plan.Ltraj.bottomRows(tau - 1) = res.block_matrix(prog, "L").transpose();
    }

    // slacks of the ratio bounds with the substituted r
    const Vec r_sub = (inst.mode == Mode::NonRobust)
                          ? inst.demand_set.center
                          : worst_case_coordinate_bounds(inst.demand_set).first;
    plan.D = Mat::Zero(tau, N);
    plan.U = Mat::Zero(tau, N);
    for (int k = 0; k < tau; ++k)
        for (int i = 0; i < N; ++i) {
            const double rki = r_sub(static_cast<long>(k) * N + i);
            const bool vacuous = rki < inst.bounds.l(k, i) * kEpsSupply;  // as assembled
            const double d2 = vacuous ? 0.0 : rki - inst.bounds.l(k, i) * plan.S(k, i);
            const double u2 = inst.bounds.h(k, i) * plan.S(k, i) - rki;
            if (d2 < -tol || u2 < -tol)
                throw SolverError("extract_plan: service-quality bound violated beyond tolerance");
            plan.D(k, i) = std::sqrt(std::max(0.0, d2));
            plan.U(k, i) = std::sqrt(std::max(0.0, u2));
        }

    // re-validate the pool identity and dynamics
    const Vec c_sub = (inst.mode == Mode::NonRobust)
                          ? inst.supply_set.center
                          : worst_case_coordinate_bounds(inst.supply_set).second;
    for (int k = 0; k < tau; ++k) {
        const Vec s_expect = net_flow(plan.X[static_cast<size_t>(k)]) +
                             plan.Vtraj.row(k).transpose();
        if ((plan.S.row(k).transpose() - s_expect).cwiseAbs().maxCoeff() > tol)
            throw SolverError("extract_plan: supply pool identity violated beyond tolerance");
        if (k + 1 < tau) {
            const TransitionStep& tr = inst.trans.at(k);
            const Vec s = plan.S.row(k).transpose(), o = plan.Otraj.row(k).transpose();
            const Vec vnext = tr.Pv.transpose() * s + tr.Qv.transpose() * o +
                              c_sub.segment(static_cast<long>(k) * N, N);
            const Vec onext = tr.Po.transpose() * s + tr.Qo.transpose() * o;
            const Vec lnext =
                net_flow(plan.Y[static_cast<size_t>(k)]) + tr.Pl.transpose() * s;
            if ((plan.Vtraj.row(k + 1).transpose() - vnext).cwiseAbs().maxCoeff() > tol ||
                (plan.Otraj.row(k + 1).transpose() - onext).cwiseAbs().maxCoeff() > tol ||
                (plan.Ltraj.row(k + 1).transpose() - lnext).cwiseAbs().maxCoeff() > tol)
                throw SolverError("extract_plan: dynamics violated beyond tolerance");
        }
    }

    out.Z = Mat::Zero(tau, N);
    if (prog.has_block("Z")) {
        const auto stations = detail::station_regions(inst);
        const Mat Zblk = res.block_matrix(prog, "Z");
        for (int k = 0; k < tau; ++k)
            for (size_t s = 0; s < stations.size(); ++s)
                out.Z(k, stations[s]) = Zblk(static_cast<long>(s), k);
    }

    out.jd = balancing_cost(plan.X, plan.Y, inst.costs, inst.config.beta);
    out.objective = res.objective;
    out.je = res.objective - out.jd;
    return out;
}

inline FirstPass extract_first_pass(const ConicProgram& prog, const SolveResult& res,
                                    const ProblemInstance& inst) {
    FirstPass fp;
    auto ext = extract_plan(prog, res, inst);
    fp.plan = std::move(ext.plan);
    fp.Z = std::move(ext.Z);
    const long nt = static_cast<long>(inst.config.N) * inst.config.tau;
    FrozenDuals& d = fp.duals;
    d.lamD = detail::padded_dual(prog, res, "lam_D", nt);
    d.lamU = detail::padded_dual(prog, res, "lam_U", nt);
    d.lamS = detail::padded_dual(prog, res, "lam_S", nt);
    d.lamV = detail::padded_dual(prog, res, "lam_V", nt);
    d.lamO = detail::padded_dual(prog, res, "lam_O", nt);
    d.lamL = detail::padded_dual(prog, res, "lam_L", nt);
    d.lams = detail::padded_dual(prog, res, "lam_s", nt);
    d.laml = detail::padded_dual(prog, res, "lam_l", nt);
    return fp;
}

// The full dual form with the multiplier vector and the first-pass primal
// decision frozen: only the two dual blocks remain as variables.  H_o is
// evaluated verbatim at the frozen point and enters as a constant.
inline ConicProgram assemble_full_theorem1(const ProblemInstance& inst, const FirstPass& fp) {
    if (inst.mode != Mode::FullTheorem1)
        throw DomainError("assemble_full_theorem1: mode must be FullTheorem1");
    inst.validate();
    const int N = inst.config.N, tau = inst.config.tau;
    const long nt = static_cast<long>(N) * tau;
    if (fp.duals.lamD.size() != nt || fp.duals.lamU.size() != nt ||
        fp.duals.lamV.size() != nt)
        throw DomainError("assemble_full_theorem1: frozen multiplier vector missing or mis-sized");
    if (static_cast<int>(fp.plan.X.size()) != tau)
        throw DomainError("assemble_full_theorem1: frozen plan missing");

    // H_o at the frozen point; the constraint functionals f_S, f_O, f_L
    // vanish there, and the V-dynamics residual reduces to the substituted
    // supply term
    const FrozenDuals& d = fp.duals;
    double ho = balancing_cost(fp.plan.X, fp.plan.Y, inst.costs, inst.config.beta);
    const Vec c_lower = worst_case_coordinate_bounds(inst.supply_set).second;
    for (int k = 0; k < tau; ++k)
        for (int i = 0; i < N; ++i) {
            const long f = static_cast<long>(k) * N + i;
            ho -= d.lams(f) * fp.plan.S(k, i);
            ho -= d.lamD(f) * (inst.bounds.l(k, i) * fp.plan.S(k, i) -
                               fp.plan.D(k, i) * fp.plan.D(k, i));
            ho -= d.lamU(f) * (inst.bounds.h(k, i) * fp.plan.S(k, i) +
                               fp.plan.U(k, i) * fp.plan.U(k, i));
            if (k + 1 < tau) {
                ho -= d.laml(f) * fp.plan.Ltraj(k + 1, i);
                // -V^{k+1} + Pv'S + Qv'O = -c at the frozen feasible point
                ho -= (-c_lower(f)) * d.lamV(f);
            }
        }

    ConicProgram p;
    p.add_variables("anchor", 1);  // keeps the program nonempty even if both blocks are trivial
    p.add_zero(p.x("anchor", 0));

    std::vector<LinExpr> zr(static_cast<size_t>(nt)), zc(static_cast<size_t>(nt));
    for (long f = 0; f < nt; ++f) {
        // r-side Schur off-diagonal is q_r + lamU + lamD, i.e. z = -(lamU+lamD)
        zr[static_cast<size_t>(f)] = LinExpr(-(d.lamU(f) + d.lamD(f)));
        const int k = static_cast<int>(f / N), i = static_cast<int>(f % N);
        zc[static_cast<size_t>(f)] = LinExpr(inst.config.theta * fp.Z(k, i) - d.lamV(f));
    }
    const LinExpr vr_tr = detail::add_dual_block(p, inst.demand_set, zr, "r");
    const LinExpr vc_tc = detail::add_dual_block(p, inst.supply_set, zc, "c");
    p.set_objective(LinExpr(ho) + vr_tr + vc_tc);
    return p;
}

}  // namespace evdro
