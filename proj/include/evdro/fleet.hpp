#pragma once

// Core fleet domain: configuration, state, cost matrices, transition model,
// and the pure evaluators for rebalancing cost, utilization, fairness and
// one-step dynamics. Everything here is a pure function of its inputs.

#include "evdro/common.hpp"

#include <cmath>
#include <iostream>
#include <sstream>
#include <vector>

namespace evdro {

inline constexpr double kEpsSupply = 1e-3;      // S >= eps stands in for S > 0
inline constexpr double kEpsLowBattery = 1e-3;  // L >= eps stands in for L > 0
inline constexpr double kEpsNetInflow = 1e-3;   // net charging inflow floor
inline constexpr double kClipTol = 1e-9;        // noise band clipped to zero

struct HorizonConfig {
    int N = 1;              // region count
    int tau = 1;            // planning horizon (steps)
    int K = 48;             // steps per day
    double theta = 1.0;     // utilization objective weight
    double beta = 1.0;      // low-battery dispatch cost weight
    double a = 0.5;         // utilization power exponent, in (0,1]
    double m1 = 1.0;        // reach bound, vacant dispatch
    double m2 = 1.0;        // reach bound, low-battery dispatch
    double step_minutes = 30.0;

    void validate() const {
        if (N < 1) throw DomainError("HorizonConfig: N must be >= 1");
        if (tau < 1 || tau > K) throw DomainError("HorizonConfig: need 1 <= tau <= K");
        if (!(a > 0.0 && a <= 1.0)) throw DomainError("HorizonConfig: a must be in (0,1]");
        if (!(m1 > 0.0) || !(m2 > 0.0)) throw DomainError("HorizonConfig: m1, m2 must be positive");
        if (theta < 0.0 || beta < 0.0) throw DomainError("HorizonConfig: theta, beta must be nonnegative");
    }
};

// W: cost of moving a vacant EV i->j.  Wstar: same for low-battery EVs,
// with kUnreachable (+inf) marking columns without a charging station.
struct CostMatrices {
    Mat W;
    Mat Wstar;

    int regions() const { return static_cast<int>(W.rows()); }

    bool station(int j) const {
        for (int i = 0; i < W.rows(); ++i)
            if (reachable(Wstar(i, j))) return true;
        return false;
    }

    void validate() const {
        const auto n = W.rows();
        if (W.cols() != n || Wstar.rows() != n || Wstar.cols() != n)
            throw DimensionError("CostMatrices: W and Wstar must be square of equal size");
        for (int i = 0; i < n; ++i) {
            if (W(i, i) != 0.0) throw DomainError("CostMatrices: diag(W) must be zero");
            for (int j = 0; j < n; ++j) {
                if (W(i, j) < 0.0) throw DomainError("CostMatrices: W must be nonnegative");
                if (reachable(Wstar(i, j)) && Wstar(i, j) != W(i, j))
                    throw DomainError("CostMatrices: reachable Wstar entries must equal W");
            }
        }
        // a column is either all reachable or all unreachable
        for (int j = 0; j < n; ++j) {
            bool any = false, all = true;
            for (int i = 0; i < n; ++i) {
                if (reachable(Wstar(i, j))) any = true; else all = false;
            }
            if (any && !all)
                throw DomainError("CostMatrices: Wstar column must be uniformly (un)reachable");
        }
    }
};

// Per-step row-stochastic transition matrices: entry (j,i) is the probability
// of moving j -> i between consecutive steps.
struct TransitionStep {
    Mat Pv, Po, Pl;  // from the post-dispatch supply pool
    Mat Qv, Qo;      // from the occupied pool

    void validate(double tol = 1e-9) const {
        const auto n = Pv.rows();
        for (const Mat* m : {&Pv, &Po, &Pl, &Qv, &Qo}) {
            if (m->rows() != n || m->cols() != n)
                throw DimensionError("TransitionStep: matrices must be square of equal size");
            if ((m->array() < -tol).any() || (m->array() > 1.0 + tol).any())
                throw DomainError("TransitionStep: entries must lie in [0,1]");
        }
        for (int j = 0; j < n; ++j) {
            const double p = Pv.row(j).sum() + Po.row(j).sum() + Pl.row(j).sum();
            const double q = Qv.row(j).sum() + Qo.row(j).sum();
            if (std::abs(p - 1.0) > tol || std::abs(q - 1.0) > tol) {
                std::ostringstream os;
                os << "TransitionStep: row " << j << " not stochastic (P sum " << p
                   << ", Q sum " << q << ")";
                throw DomainError(os.str());
            }
        }
    }
};

struct TransitionModel {
    std::vector<TransitionStep> steps;  // one per horizon step k = 1..tau

    const TransitionStep& at(int k) const {  // k is 0-based
        if (k < 0 || k >= static_cast<int>(steps.size()))
            throw DimensionError("TransitionModel: step index out of range");
        return steps[static_cast<size_t>(k)];
    }

    void validate(double tol = 1e-9) const {
        for (const auto& s : steps) s.validate(tol);
    }
};

struct FleetState {
    Vec V, O, L;

    int regions() const { return static_cast<int>(V.size()); }

    void validate() const {
        if (O.size() != V.size() || L.size() != V.size())
            throw DimensionError("FleetState: V, O, L must have equal length");
        for (const Vec* v : {&V, &O, &L}) {
            if (!v->allFinite() || (v->array() < 0.0).any())
                throw DomainError("FleetState: counts must be finite and nonnegative");
        }
    }
};

// Concatenated demand r = [r^1,...,r^tau] and new-supply c, each length N*tau.
struct DemandSupplyPath {
    Vec r, c;

    void validate(int N, int tau) const {
        if (r.size() != static_cast<long>(N) * tau || c.size() != static_cast<long>(N) * tau)
            throw DimensionError("DemandSupplyPath: vectors must have length N*tau");
        if ((r.array() < 0.0).any() || (c.array() < 0.0).any())
            throw DomainError("DemandSupplyPath: entries must be nonnegative");
    }
};

// Lower/upper demand-supply ratio bounds per (step, region).
struct ServiceBounds {
    Mat l, h;  // tau x N

    void validate() const {
        if (l.rows() != h.rows() || l.cols() != h.cols())
            throw DimensionError("ServiceBounds: l and h must have equal shape");
        if ((l.array() <= 0.0).any()) throw DomainError("ServiceBounds: l must be positive");
        if ((h.array() < l.array()).any()) throw DomainError("ServiceBounds: need l <= h");
    }
};

struct DecisionPlan {
    std::vector<Mat> X, Y;   // tau matrices of size N x N
    Mat S;                   // tau x N post-dispatch supply
    Mat D, U;                // tau x N slacks of the ratio bounds
    Mat Vtraj, Otraj, Ltraj; // tau x N projected trajectories (row 0 = initial)
};

// Column sums minus row sums; the per-region net change induced by a
// dispatch matrix.
inline Vec net_flow(const Mat& M) {
    if (M.rows() != M.cols()) throw DimensionError("net_flow: matrix must be square");
    return M.colwise().sum().transpose() - M.rowwise().sum();
}

// Total rebalancing cost J_D = sum_k sum_ij (x w + beta y w*).
inline double balancing_cost(const std::vector<Mat>& X, const std::vector<Mat>& Y,
                             const CostMatrices& costs, double beta) {
    const int n = costs.regions();
    if (X.size() != Y.size()) throw DimensionError("balancing_cost: X and Y horizon mismatch");
    double total = 0.0;
    for (size_t k = 0; k < X.size(); ++k) {
        if (X[k].rows() != n || X[k].cols() != n || Y[k].rows() != n || Y[k].cols() != n)
            throw DimensionError("balancing_cost: decision matrix size mismatch");
        total += (X[k].array() * costs.W.array()).sum();
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const double y = Y[k](i, j);
                if (y == 0.0) continue;
                if (!reachable(costs.Wstar(i, j)))
                    throw DomainError("balancing_cost: nonzero low-battery flow into a region without stations");
                total += beta * y * costs.Wstar(i, j);
            }
        }
    }
    if (!std::isfinite(total)) throw DomainError("balancing_cost: non-finite cost");
    return total;
}

// One-step fleet dynamics.  ck is the new supply from charging completions
// at step k.  Throws if the plan dispatches more vacant EVs than present.
inline FleetState propagate(const FleetState& state, const Mat& Xk, const Mat& Yk,
                            const TransitionStep& trans, const Vec& ck) {
    state.validate();
    const int n = state.regions();
    if (Xk.rows() != n || Yk.rows() != n || ck.size() != n)
        throw DimensionError("propagate: dimension mismatch");
    if ((ck.array() < 0.0).any()) throw DomainError("propagate: ck must be nonnegative");

    const Vec S = net_flow(Xk) + state.V;
    for (int i = 0; i < n; ++i) {
        if (S(i) < -kClipTol) {
            std::ostringstream os;
            os << "propagate: infeasible dispatch, S_" << i << " = " << S(i)
               << " (plan sends out more vacant EVs than present)";
            throw InfeasibleError(os.str());
        }
    }
    const Vec Sc = S.cwiseMax(0.0);

    FleetState next;
    next.V = trans.Pv.transpose() * Sc + trans.Qv.transpose() * state.O + ck;
    next.O = trans.Po.transpose() * Sc + trans.Qo.transpose() * state.O;
    next.L = net_flow(Yk) + trans.Pl.transpose() * Sc;

    for (Vec* v : {&next.V, &next.O, &next.L}) {
        for (int i = 0; i < n; ++i) {
            if ((*v)(i) < 0.0) {
                if ((*v)(i) < -kClipTol)
                    std::cerr << "propagate: warning, clipping negative count " << (*v)(i) << "\n";
                (*v)(i) = 0.0;
            }
        }
    }
    return next;
}

// Utilization objective J_E = sum_k sum_i c_i^k / (Ynet_i^k)^a, evaluated on
// the tau x N net-inflow matrix (column sums of a closed dispatch matrix are
// offset by its row sums, so callers restrict to the regions they charge in).
inline double utilization_objective(const Mat& Ynet, const Vec& c, double a) {
    if (!(a > 0.0 && a <= 1.0)) throw DomainError("utilization_objective: a must be in (0,1]");
    const int tau = static_cast<int>(Ynet.rows());
    const int n = static_cast<int>(Ynet.cols());
    if (c.size() != static_cast<long>(n) * tau)
        throw DimensionError("utilization_objective: supply path length mismatch");
    double total = 0.0;
    for (int k = 0; k < tau; ++k) {
        for (int i = 0; i < n; ++i) {
            if (Ynet(k, i) <= 0.0)
                throw DomainError("utilization_objective: nonpositive net inflow");
            total += c(static_cast<long>(k) * n + i) / std::pow(Ynet(k, i), a);
        }
    }
    return total;
}

// Convenience overload taking the dispatch sequence itself.
inline double utilization_objective(const std::vector<Mat>& Y, const Vec& c, double a) {
    const int tau = static_cast<int>(Y.size());
    if (tau == 0) return 0.0;
    const int n = static_cast<int>(Y[0].rows());
    Mat inflow(tau, n);
    for (int k = 0; k < tau; ++k)
        inflow.row(k) = net_flow(Y[static_cast<size_t>(k)]).transpose();
    return utilization_objective(inflow, c, a);
}

namespace detail {

// Total absolute deviation of the local ratio num/den from the global one.
inline double ratio_deviation(const Mat& num, const Mat& den, const char* what) {
    if (num.rows() != den.rows() || num.cols() != den.cols())
        throw DimensionError(std::string(what) + ": shape mismatch");
    double total = 0.0;
    for (int k = 0; k < num.rows(); ++k) {
        const double dsum = den.row(k).sum();
        if (dsum <= 0.0) throw DomainError(std::string(what) + ": zero denominator");
        const double global = num.row(k).sum() / dsum;
        for (int i = 0; i < num.cols(); ++i) {
            if (den(k, i) <= 0.0) throw DomainError(std::string(what) + ": zero denominator");
            total += std::abs(num(k, i) / den(k, i) - global);
        }
    }
    return total;
}

}  // namespace detail

inline double unfairness_utilization(const Mat& Ynet, const Mat& c) {
    return detail::ratio_deviation(c, Ynet, "unfairness_utilization");
}

inline double unfairness_ratio(const Mat& r, const Mat& S) {
    return detail::ratio_deviation(r, S, "unfairness_ratio");
}

}  // namespace evdro
