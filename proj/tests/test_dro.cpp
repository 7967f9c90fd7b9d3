#include "evdro/dro.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace evdro;

namespace {

// random but well-conditioned instance: full connectivity, generous bounds,
// stations in every other region
ProblemInstance make_instance(int N, int tau, unsigned seed, double g1_demand, double g1_supply,
                              Mode mode = Mode::Robust, double theta = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);

    ProblemInstance inst;
    inst.mode = mode;
    inst.config.N = N;
    inst.config.tau = tau;
    inst.config.theta = theta;
    inst.config.beta = 1.0;
    inst.config.a = 0.5;
    inst.config.m1 = 1e3;
    inst.config.m2 = 1e3;

    Mat pts(N, 2);
    for (int i = 0; i < N; ++i) {
        pts(i, 0) = 10.0 * U(rng);
        pts(i, 1) = 10.0 * U(rng);
    }
    inst.costs.W = Mat::Zero(N, N);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            if (i != j) inst.costs.W(i, j) = (pts.row(i) - pts.row(j)).norm() + 0.1;
    inst.costs.Wstar = inst.costs.W;
    for (int j = 0; j < N; ++j)
        if (j % 2 == 1)
            for (int i = 0; i < N; ++i) inst.costs.Wstar(i, j) = kUnreachable;

    for (int k = 0; k + 1 < tau; ++k) {
        TransitionStep tr;
        Mat base(N, N);
        for (int j = 0; j < N; ++j) {
            for (int i = 0; i < N; ++i)
                base(j, i) = std::exp(-0.3 * inst.costs.W(j, i)) + 0.05 * U(rng);
            base.row(j) /= base.row(j).sum();
        }
        tr.Pv = 0.55 * base;
        tr.Po = 0.35 * base;
        tr.Pl = 0.10 * base;
        tr.Qv = 0.5 * base;
        tr.Qo = 0.5 * base;
        inst.trans.steps.push_back(tr);
    }

    inst.initial.V = Vec::Constant(N, 10.0) + 5.0 * Vec::NullaryExpr(N, [&] { return U(rng); });
    inst.initial.O = Vec::Constant(N, 8.0) + 4.0 * Vec::NullaryExpr(N, [&] { return U(rng); });
    inst.initial.L = Vec::Constant(N, 2.0) + Vec::NullaryExpr(N, [&] { return U(rng); });

    inst.bounds.l = Mat::Constant(tau, N, 0.05);
    inst.bounds.h = Mat::Constant(tau, N, 5.0);

    const long nt = static_cast<long>(N) * tau;
    Vec rc(nt), cc(nt);
    for (long f = 0; f < nt; ++f) {
        rc(f) = 1.0 + 3.0 * U(rng);
        cc(f) = 0.5 + 1.5 * U(rng);
    }
    Mat sig = Mat::Zero(nt, nt);
    for (long f = 0; f < nt; ++f) sig(f, f) = 0.05 + 0.15 * U(rng);
    inst.demand_set = build_set(rc, sig, g1_demand, std::max(1.0, 1.5 * g1_demand), 0.25);
    inst.supply_set = build_set(cc, sig, g1_supply, std::max(1.0, 1.5 * g1_supply), 0.25);
    return inst;
}

ProblemInstance singleton_sets(ProblemInstance inst) {
    const long nt = inst.demand_set.dim();
    const Mat eps = kEpsSigma * Mat::Identity(nt, nt);
    inst.demand_set = build_set(inst.demand_set.center, eps, 0.0, 1.0, 0.25);
    inst.supply_set = build_set(inst.supply_set.center, eps, 0.0, 1.0, 0.25);
    return inst;
}

double solve_objective(const ProblemInstance& inst) {
    ConicProgram p =
        inst.mode == Mode::Robust ? assemble_robust(inst) : assemble_nonrobust(inst);
    const auto res = solve(p);
    REQUIRE(res.status == SolveStatus::Optimal);
    return res.objective;
}

Mat unpack_lower(const Vec& packed, int n) {
    Mat Q(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = j; i < n; ++i) {
            Q(i, j) = packed(detail::packed(n, i, j));
            Q(j, i) = Q(i, j);
        }
    return Q;
}

}  // namespace

TEST_CASE("assemble_robust dimension bookkeeping") {
    // N=2, tau=1, one station: X:4, Y:4, S:2, Z:1, dual block 3+2+1+1
    auto inst = make_instance(2, 1, 1, 0.5, 0.5);
    ConicProgram p = assemble_robust(inst);
    CHECK(p.block("X").rows * p.block("X").cols == 4);
    CHECK(p.block("Y").rows * p.block("Y").cols == 4);
    CHECK(p.block("S").rows * p.block("S").cols == 2);
    CHECK(p.block("Z").rows * p.block("Z").cols == 1);
    CHECK(p.block("c_Q").rows == svec_len(2));
    CHECK(p.block("c_q").rows == 2);
    CHECK(p.num_vars() == 4 + 4 + 2 + 1 + 3 + 2 + 1 + 1);
    // the Schur block is (N*tau+1) x (N*tau+1)
    bool found = false;
    for (const auto& b : p.cone_blocks())
        if (b.cone == Cone::PSD && b.mat_dim == 3) found = true;
    CHECK(found);
}

TEST_CASE("collapse to nominal under singleton ambiguity") {
    for (unsigned seed : {11u, 12u, 13u}) {
        auto robust = singleton_sets(make_instance(3, 2, seed, 0.0, 0.0));
        auto nonrob = robust;
        nonrob.mode = Mode::NonRobust;
        const double ro = solve_objective(robust);
        const double no = solve_objective(nonrob);
        CHECK(std::abs(ro - no) <= 1e-4 * (1.0 + std::abs(no)));
    }
}

TEST_CASE("robust objective is monotone in gamma1 and gamma2") {
    std::vector<double> g1s{0.0, 0.5, 1.0, 2.0};
    double prev = -1e100;
    for (double g1 : g1s) {
        auto inst = make_instance(3, 2, 21, g1, g1);
        const double obj = solve_objective(inst);
        CHECK(obj >= prev - 1e-7 * (1.0 + std::abs(obj)));
        prev = obj;
    }
    // gamma2 sweep with gamma1 fixed
    prev = -1e100;
    for (double g2 : {1.0, 2.0, 4.0}) {
        auto inst = make_instance(3, 2, 22, 0.5, 0.5);
        inst.supply_set =
            build_set(inst.supply_set.center, inst.supply_set.Sigma, 0.5, g2, 0.25);
        const double obj = solve_objective(inst);
        CHECK(obj >= prev - 1e-7 * (1.0 + std::abs(obj)));
        prev = obj;
    }
}

TEST_CASE("nonrobust baseline") {
    SECTION("zero demand and zero theta do nothing") {
        auto inst = make_instance(2, 1, 31, 0.0, 0.0, Mode::NonRobust, 0.0);
        const long nt = inst.demand_set.dim();
        inst.demand_set = build_set(Vec::Zero(nt), kEpsSigma * Mat::Identity(nt, nt), 0.0, 1.0, 0.25);
        ConicProgram p = assemble_nonrobust(inst);
        const auto res = solve(p);
        REQUIRE(res.status == SolveStatus::Optimal);
        CHECK(std::abs(res.objective) < 1e-6);
        const auto out = extract_plan(p, res, inst);
        for (const auto& M : out.plan.X) CHECK(M.cwiseAbs().maxCoeff() < 1e-6);
        for (const auto& M : out.plan.Y) CHECK(M.cwiseAbs().maxCoeff() < 1e-6);
    }
    SECTION("needy region pulls flow over the single useful arc") {
        // region 1 must reach S_1 >= 6 but starts at V_1 = 2; only donor is 0
        ProblemInstance inst = make_instance(2, 1, 32, 0.0, 0.0, Mode::NonRobust, 0.0);
        inst.initial.V << 10.0, 2.0;
        inst.bounds.l = Mat::Constant(1, 2, 0.01);
        inst.bounds.h << 5.0, 1.0;
        Vec rc(2);
        rc << 0.1, 6.0;
        inst.demand_set =
            build_set(rc, kEpsSigma * Mat::Identity(2, 2), 0.0, 1.0, 0.25);
        ConicProgram p = assemble_nonrobust(inst);
        const auto res = solve(p);
        REQUIRE(res.status == SolveStatus::Optimal);

        // grid-search oracle over the transfer t on arc 0 -> 1
        double best = 1e100;
        for (int g = 0; g <= 100000; ++g) {
            const double t = 10.0 * g / 100000.0;
            const double s0 = 10.0 - t, s1 = 2.0 + t;
            if (s0 < kEpsSupply || 1.0 * s1 < 6.0 || 0.01 * s0 > 0.1) continue;
            best = std::min(best, t * inst.costs.W(0, 1));
        }
        CHECK(res.objective == Catch::Approx(best).epsilon(1e-4));
        const auto out = extract_plan(p, res, inst);
        CHECK(out.plan.X[0](0, 1) == Catch::Approx(4.0).margin(1e-4));
        CHECK(out.plan.X[0](1, 0) == Catch::Approx(0.0).margin(1e-5));
    }
}

TEST_CASE("robust solution certificates") {
    auto inst = make_instance(3, 2, 41, 0.8, 0.8);
    ConicProgram p = assemble_robust(inst);
    const auto res = solve(p);
    REQUIRE(res.status == SolveStatus::Optimal);
    CHECK(res.max_cone_residual <= 1e-6);
    const auto out = extract_plan(p, res, inst);
    const int N = inst.config.N, tau = inst.config.tau;

    SECTION("objective reconciliation") {
        const double vc = res.block(p, "c_v")(0), tc = res.block(p, "c_t")(0);
        CHECK(out.jd == Catch::Approx(res.objective - vc - tc).margin(1e-5));
    }
    SECTION("dual block is tight at the linear-integrand closed form") {
        const double vc = res.block(p, "c_v")(0), tc = res.block(p, "c_t")(0);
        Vec thetaZ(static_cast<long>(N) * tau);
        for (int k = 0; k < tau; ++k)
            for (int i = 0; i < N; ++i)
                thetaZ(static_cast<long>(k) * N + i) = inst.config.theta * out.Z(k, i);
        const double closed = worst_case_linear(inst.supply_set, thetaZ);
        CHECK(vc + tc == Catch::Approx(closed).epsilon(1e-5));
    }
    SECTION("objective upper-bounds every mean in the supply ellipsoid") {
        std::mt19937_64 rng(5);
        std::normal_distribution<double> d;
        const long nt = static_cast<long>(N) * tau;
        Vec thetaZ(nt);
        for (int k = 0; k < tau; ++k)
            for (int i = 0; i < N; ++i)
                thetaZ(static_cast<long>(k) * N + i) = inst.config.theta * out.Z(k, i);
        const double jd_solver =
            res.objective - res.block(p, "c_v")(0) - res.block(p, "c_t")(0);
        for (int s = 0; s < 100; ++s) {
            Vec u(nt);
            for (long f = 0; f < nt; ++f) u(f) = d(rng);
            if (u.norm() > 1.0) u /= u.norm();
            const Vec mu = inst.supply_set.center +
                           std::sqrt(inst.supply_set.gamma1) * (inst.supply_set.sigma_sqrt * u);
            CHECK(jd_solver + thetaZ.dot(mu) <= res.objective + 1e-6);
        }
    }
    SECTION("plan satisfies the dynamics as affine identities") {
        // extract_plan already validated to 1e-6-scale; spot-check S row sums
        for (int k = 0; k < tau; ++k) {
            const Vec s_exp =
                net_flow(out.plan.X[static_cast<size_t>(k)]) + out.plan.Vtraj.row(k).transpose();
            CHECK((out.plan.S.row(k).transpose() - s_exp).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
    SECTION("zero pattern matches the reach masks") {
        for (int k = 0; k < tau; ++k)
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < N; ++j) {
                    if (i == j) {
                        CHECK(out.plan.X[static_cast<size_t>(k)](i, j) == 0.0);
                        CHECK(out.plan.Y[static_cast<size_t>(k)](i, j) == 0.0);
                    }
                    if (!reachable(inst.costs.Wstar(i, j)))
                        CHECK(out.plan.Y[static_cast<size_t>(k)](i, j) == 0.0);
                }
    }
}

TEST_CASE("verify_schur") {
    SECTION("documented examples") {
        CHECK(verify_schur(1.0, Vec::Zero(2), Mat::Identity(2, 2)));
        CHECK_FALSE(verify_schur(0.0, Vec::Constant(1, 2.0), Mat::Constant(1, 1, 1.0)));
        CHECK(verify_schur(1.0, Vec::Constant(1, 2.0), Mat::Constant(1, 1, 1.0)));
    }
    SECTION("eigenvalue criterion agrees with the quadratic-form criterion") {
        std::mt19937_64 rng(51);
        std::normal_distribution<double> d;
        int checked = 0;
        for (int rep = 0; rep < 1000; ++rep) {
            const int n = 2 + rep % 3;
            Mat R(n + 1, n + 1);
            for (int i = 0; i <= n; ++i)
                for (int j = 0; j <= n; ++j) R(i, j) = d(rng);
            Mat M = R * R.transpose();
            if (rep % 2 == 1) M -= (0.5 + d(rng) * d(rng)) * Mat::Identity(n + 1, n + 1);
            const double v = M(0, 0);
            const Vec q = 2.0 * M.block(1, 0, n, 1);
            const Mat Q = M.block(1, 1, n, n);

            // quadratic-form criterion: Q psd, q in range(Q), v >= q'Q^+q/4
            Eigen::SelfAdjointEigenSolver<Mat> es(Q);
            const Vec lam = es.eigenvalues();
            bool quad = lam.minCoeff() >= -1e-8;
            if (quad) {
                Vec qt = es.eigenvectors().transpose() * q;
                double form = 0.0;
                for (int i = 0; i < n; ++i) {
                    if (lam(i) > 1e-10)
                        form += qt(i) * qt(i) / lam(i);
                    else if (std::abs(qt(i)) > 1e-7)
                        quad = false;  // q leaves range(Q)
                }
                quad = quad && v >= 0.25 * form - 1e-8;
            }
            // skip razor-edge cases where the two tolerances can differ
            Mat Mfull(n + 1, n + 1);
            Mfull = M;
            Eigen::SelfAdjointEigenSolver<Mat> esf(Mfull);
            if (std::abs(esf.eigenvalues().minCoeff()) < 1e-6) continue;
            ++checked;
            CHECK(verify_schur(v, q, Q) == quad);
        }
        CHECK(checked >= 900);
    }
}

TEST_CASE("full Theorem 1 rendering") {
    auto inst = make_instance(2, 1, 61, 0.5, 0.5);
    inst.bounds.l = Mat::Constant(1, 2, 1e-3);
    inst.bounds.h = Mat::Constant(1, 2, 1e3);
    ConicProgram rp = assemble_robust(inst);
    const auto rres = solve(rp);
    REQUIRE(rres.status == SolveStatus::Optimal);
    const FirstPass fp = extract_first_pass(rp, rres, inst);

    auto ft = inst;
    ft.mode = Mode::FullTheorem1;

    SECTION("zero multipliers and gamma1r = 0 leave the r-block at zero") {
        auto ft0 = ft;
        ft0.demand_set = build_set(ft.demand_set.center, ft.demand_set.Sigma, 0.0,
                                   ft.demand_set.gamma2, 0.25);
        FirstPass zfp = fp;
        const long nt = inst.demand_set.dim();
        zfp.duals = FrozenDuals{Vec::Zero(nt), Vec::Zero(nt), Vec::Zero(nt), Vec::Zero(nt),
                                Vec::Zero(nt), Vec::Zero(nt), Vec::Zero(nt), Vec::Zero(nt)};
        ConicProgram p = assemble_full_theorem1(ft0, zfp);
        const auto res = solve(p);
        REQUIRE(res.status == SolveStatus::Optimal);
        CHECK(std::abs(res.block(p, "r_v")(0) + res.block(p, "r_t")(0)) <= 1e-6);
    }
    SECTION("weak-duality direction against the robust objective") {
        ConicProgram p = assemble_full_theorem1(ft, fp);
        const auto res = solve(p);
        REQUIRE(res.status == SolveStatus::Optimal);
        CHECK(res.objective >= rres.objective - 1e-6 * (1.0 + std::abs(rres.objective)));
    }
    SECTION("solved PSD blocks pass verify_schur") {
        ConicProgram p = assemble_full_theorem1(ft, fp);
        const auto res = solve(p);
        REQUIRE(res.status == SolveStatus::Optimal);
        const long nt = inst.demand_set.dim();
        const Mat Qr = unpack_lower(res.block(p, "r_Q"), static_cast<int>(nt));
        const Vec qr = res.block(p, "r_q") + fp.duals.lamU + fp.duals.lamD;
        CHECK(verify_schur(res.block(p, "r_v")(0), qr, Qr, 1e-5));
        const Mat Qc = unpack_lower(res.block(p, "c_Q"), static_cast<int>(nt));
        Vec thetaZ(nt);
        for (int i = 0; i < inst.config.N; ++i)
            thetaZ(i) = inst.config.theta * fp.Z(0, i);
        const Vec qc = res.block(p, "c_q") + fp.duals.lamV - thetaZ;
        CHECK(verify_schur(res.block(p, "c_v")(0), qc, Qc, 1e-5));
    }
    SECTION("missing multipliers are rejected") {
        FirstPass bad = fp;
        bad.duals.lamD = Vec();
        CHECK_THROWS_AS(assemble_full_theorem1(ft, bad), DomainError);
    }
}

TEST_CASE("assembly infeasibility diagnostics") {
    // a station region that no other region can reach within m2
    auto inst = make_instance(3, 1, 71, 0.0, 0.0);
    inst.config.m2 = 1e-6;
    CHECK_THROWS_AS(assemble_robust(inst), InfeasibleError);
}
