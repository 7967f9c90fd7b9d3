#include "evdro/fleet.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace evdro;

namespace {

Mat random_matrix(std::mt19937_64& rng, int n, double lo = 0.0, double hi = 5.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Mat m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = dist(rng);
    return m;
}

CostMatrices all_station_costs(const Mat& w) {
    CostMatrices c;
    c.W = w;
    c.W.diagonal().setZero();
    c.Wstar = c.W;
    return c;
}

// Independent triple-loop oracle for J_D, kept separate from balancing_cost.
double jd_oracle(const std::vector<Mat>& X, const std::vector<Mat>& Y, const CostMatrices& c,
                 double beta) {
    double total = 0.0;
    for (size_t k = 0; k < X.size(); ++k)
        for (int i = 0; i < c.W.rows(); ++i)
            for (int j = 0; j < c.W.cols(); ++j)
                total += X[k](i, j) * c.W(i, j) + beta * Y[k](i, j) * c.Wstar(i, j);
    return total;
}

TransitionStep random_transitions(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> dist(0.05, 1.0);
    TransitionStep t;
    Mat p(n, 3 * n), q(n, 2 * n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < 3 * n; ++i) p(j, i) = dist(rng);
        for (int i = 0; i < 2 * n; ++i) q(j, i) = dist(rng);
        p.row(j) /= p.row(j).sum();
        q.row(j) /= q.row(j).sum();
    }
    t.Pv = p.leftCols(n);
    t.Po = p.middleCols(n, n);
    t.Pl = p.rightCols(n);
    t.Qv = q.leftCols(n);
    t.Qo = q.rightCols(n);
    return t;
}

}  // namespace

TEST_CASE("balancing_cost basics") {
    std::mt19937_64 rng(7);
    SECTION("zero decisions cost zero") {
        auto costs = all_station_costs(random_matrix(rng, 3));
        std::vector<Mat> X{Mat::Zero(3, 3)}, Y{Mat::Zero(3, 3)};
        CHECK(balancing_cost(X, Y, costs, 1.0) == 0.0);
    }
    SECTION("direct substitution") {
        CostMatrices costs;
        costs.W = Mat{{0, 3}, {3, 0}};
        costs.Wstar = costs.W;
        std::vector<Mat> X{Mat{{0, 2}, {0, 0}}}, Y{Mat::Zero(2, 2)};
        CHECK(balancing_cost(X, Y, costs, 1.0) == Catch::Approx(6.0));
    }
    SECTION("matches triple-loop oracle") {
        auto costs = all_station_costs(random_matrix(rng, 4));
        std::vector<Mat> X{random_matrix(rng, 4), random_matrix(rng, 4)};
        std::vector<Mat> Y{random_matrix(rng, 4), random_matrix(rng, 4)};
        const double got = balancing_cost(X, Y, costs, 0.7);
        const double want = jd_oracle(X, Y, costs, 0.7);
        CHECK(got == Catch::Approx(want).margin(1e-12));
    }
    SECTION("nonzero y on unreachable entry rejected") {
        CostMatrices costs;
        costs.W = Mat{{0, 1}, {1, 0}};
        costs.Wstar = costs.W;
        costs.Wstar.col(1).setConstant(kUnreachable);
        std::vector<Mat> X{Mat::Zero(2, 2)};
        std::vector<Mat> Y{Mat{{0, 1}, {0, 0}}};
        CHECK_THROWS_AS(balancing_cost(X, Y, costs, 1.0), DomainError);
    }
    SECTION("dimension mismatch rejected") {
        auto costs = all_station_costs(random_matrix(rng, 3));
        std::vector<Mat> X{Mat::Zero(2, 2)}, Y{Mat::Zero(2, 2)};
        CHECK_THROWS_AS(balancing_cost(X, Y, costs, 1.0), DimensionError);
    }
    SECTION("linearity in decisions") {
        auto costs = all_station_costs(random_matrix(rng, 3));
        std::vector<Mat> A{random_matrix(rng, 3)}, B{random_matrix(rng, 3)};
        std::vector<Mat> Z{Mat::Zero(3, 3)};
        std::vector<Mat> C{1.5 * A[0] + 2.5 * B[0]};
        const double lhs = balancing_cost(C, Z, costs, 1.0);
        const double rhs = 1.5 * balancing_cost(A, Z, costs, 1.0) + 2.5 * balancing_cost(B, Z, costs, 1.0);
        CHECK(lhs == Catch::Approx(rhs).margin(1e-10));
    }
}

TEST_CASE("net_flow") {
    CHECK(net_flow(Mat::Zero(3, 3)).isZero(0.0));
    const Vec f = net_flow(Mat{{0, 1}, {0, 0}});
    CHECK(f(0) == Catch::Approx(-1.0));
    CHECK(f(1) == Catch::Approx(1.0));

    std::mt19937_64 rng(11);
    Mat m = random_matrix(rng, 5);
    Mat sym = m + m.transpose();
    CHECK(net_flow(sym).cwiseAbs().maxCoeff() < 1e-12 * sym.cwiseAbs().sum());

    // always sums to zero
    for (int rep = 0; rep < 20; ++rep) {
        Mat q = random_matrix(rng, 4);
        CHECK(std::abs(net_flow(q).sum()) <= 1e-12 * q.cwiseAbs().sum());
    }

    CHECK_THROWS_AS(net_flow(Mat::Zero(2, 3)), DimensionError);
}

TEST_CASE("propagate") {
    SECTION("identity transitions leave state unchanged") {
        const int n = 3;
        TransitionStep t;
        t.Pv = Mat::Identity(n, n);
        t.Po = Mat::Zero(n, n);
        t.Pl = Mat::Zero(n, n);
        t.Qo = Mat::Identity(n, n);
        t.Qv = Mat::Zero(n, n);
        FleetState s{Vec{{1.0, 2.0, 3.0}}, Vec{{4.0, 5.0, 6.0}}, Vec{{0.0, 0.0, 0.0}}};
        const auto next = propagate(s, Mat::Zero(n, n), Mat::Zero(n, n), t, Vec::Zero(n));
        CHECK((next.V - s.V).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((next.O - s.O).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(next.L.cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("all mass to vacant plus new supply") {
        TransitionStep t;
        t.Pv = Mat::Constant(1, 1, 1.0);
        t.Po = Mat::Zero(1, 1);
        t.Pl = Mat::Zero(1, 1);
        t.Qv = Mat::Constant(1, 1, 1.0);
        t.Qo = Mat::Zero(1, 1);
        FleetState s{Vec{{5.0}}, Vec{{2.0}}, Vec{{0.0}}};
        const auto next = propagate(s, Mat::Zero(1, 1), Mat::Zero(1, 1), t, Vec{{3.0}});
        CHECK(next.V(0) == Catch::Approx(10.0));
        CHECK(next.O(0) == Catch::Approx(0.0));
        CHECK(next.L(0) == Catch::Approx(0.0));
    }
    SECTION("conservation identity with Y = 0") {
        std::mt19937_64 rng(23);
        for (int rep = 0; rep < 50; ++rep) {
            const int n = 4;
            auto t = random_transitions(rng, n);
            std::uniform_real_distribution<double> dist(0.0, 20.0);
            FleetState s;
            s.V = Vec::NullaryExpr(n, [&] { return dist(rng); });
            s.O = Vec::NullaryExpr(n, [&] { return dist(rng); });
            s.L = Vec::NullaryExpr(n, [&] { return dist(rng); });
            Vec c = Vec::NullaryExpr(n, [&] { return dist(rng); });
            Mat X = random_matrix(rng, n, 0.0, 0.5);
            X.diagonal().setZero();
            const Vec S = net_flow(X) + s.V;
            if ((S.array() < 0.0).any()) continue;
            const auto next = propagate(s, X, Mat::Zero(n, n), t, c);
            const double mass_out = next.V.sum() + next.O.sum() + next.L.sum();
            const double mass_in = S.sum() + s.O.sum() + c.sum();
            CHECK(std::abs(mass_out - mass_in) <= 1e-9 * (1.0 + mass_in));
        }
    }
    SECTION("overdispatch raises") {
        TransitionStep t;
        t.Pv = Mat::Identity(2, 2);
        t.Po = Mat::Zero(2, 2);
        t.Pl = Mat::Zero(2, 2);
        t.Qv = Mat::Zero(2, 2);
        t.Qo = Mat::Identity(2, 2);
        FleetState s{Vec{{1.0, 0.0}}, Vec::Zero(2), Vec::Zero(2)};
        Mat X = Mat{{0, 5}, {0, 0}};
        CHECK_THROWS_AS(propagate(s, X, Mat::Zero(2, 2), t, Vec::Zero(2)), InfeasibleError);
    }
}

TEST_CASE("utilization_objective") {
    SECTION("zero supply gives zero") {
        CHECK(utilization_objective(Mat::Constant(2, 3, 1.5), Vec::Zero(6), 0.5) == 0.0);
    }
    SECTION("2 / sqrt(4) = 1") {
        CHECK(utilization_objective(Mat{{4.0}}, Vec{{2.0}}, 0.5) == Catch::Approx(1.0));
    }
    SECTION("matches loop oracle and is linear in c") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> d(0.5, 3.0);
        const int tau = 2, n = 4;
        Mat ynet(tau, n);
        Vec c(tau * n), c2(tau * n);
        for (int k = 0; k < tau; ++k)
            for (int i = 0; i < n; ++i) {
                ynet(k, i) = d(rng);
                c(k * n + i) = d(rng);
                c2(k * n + i) = d(rng);
            }
        const double a = 0.7;
        double want = 0.0;
        for (int k = 0; k < tau; ++k)
            for (int i = 0; i < n; ++i) want += c(k * n + i) / std::pow(ynet(k, i), a);
        CHECK(utilization_objective(ynet, c, a) == Catch::Approx(want).margin(1e-12));

        const double lhs = utilization_objective(ynet, Vec(0.5 * c + 2.0 * c2), a);
        const double rhs = 0.5 * utilization_objective(ynet, c, a) + 2.0 * utilization_objective(ynet, c2, a);
        CHECK(lhs == Catch::Approx(rhs).margin(1e-10));
    }
    SECTION("nonincreasing in each net inflow (finite differences)") {
        std::mt19937_64 rng(6);
        std::uniform_real_distribution<double> d(0.5, 3.0);
        Mat ynet = Mat::NullaryExpr(2, 3, [&] { return d(rng); });
        Vec c = Vec::NullaryExpr(6, [&] { return d(rng); });
        const double base = utilization_objective(ynet, c, 0.5);
        for (int k = 0; k < 2; ++k)
            for (int i = 0; i < 3; ++i) {
                Mat bumped = ynet;
                bumped(k, i) += 1e-4;
                CHECK(utilization_objective(bumped, c, 0.5) <= base + 1e-12);
            }
    }
    SECTION("nonpositive net inflow rejected") {
        CHECK_THROWS_AS(utilization_objective(Mat{{0.0}}, Vec{{1.0}}, 0.5), DomainError);
        // dispatch-sequence overload: closed-matrix inflows sum to zero, so some
        // region is always nonpositive
        std::vector<Mat> Y{Mat{{0, 1}, {0, 0}}};
        CHECK_THROWS_AS(utilization_objective(Y, Vec::Zero(2), 0.5), DomainError);
    }
}

TEST_CASE("unfairness metrics") {
    SECTION("balanced ratios give zero") {
        Mat c{{2.0, 4.0}}, y{{1.0, 2.0}};
        CHECK(unfairness_utilization(y, c) == Catch::Approx(0.0).margin(1e-12));
        CHECK(unfairness_ratio(c, y) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("documented examples") {
        CHECK(unfairness_utilization(Mat{{1.0, 1.0}}, Mat{{2.0, 0.0}}) == Catch::Approx(2.0));
        CHECK(unfairness_ratio(Mat{{4.0, 0.0}}, Mat{{2.0, 2.0}}) == Catch::Approx(2.0));
    }
    SECTION("loop oracle and scale invariance") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> d(0.5, 4.0);
        const int tau = 3, n = 5;
        Mat num(tau, n), den(tau, n);
        for (int k = 0; k < tau; ++k)
            for (int i = 0; i < n; ++i) {
                num(k, i) = d(rng);
                den(k, i) = d(rng);
            }
        double want = 0.0;
        for (int k = 0; k < tau; ++k) {
            double gn = 0.0, gd = 0.0;
            for (int i = 0; i < n; ++i) {
                gn += num(k, i);
                gd += den(k, i);
            }
            for (int i = 0; i < n; ++i) want += std::abs(num(k, i) / den(k, i) - gn / gd);
        }
        CHECK(unfairness_ratio(num, den) == Catch::Approx(want).margin(1e-12));
        CHECK(unfairness_utilization(den, num) == Catch::Approx(want).margin(1e-12));
        // uniform positive scaling of both arguments leaves ratios unchanged
        CHECK(unfairness_ratio(3.0 * num, 3.0 * den) == Catch::Approx(want).margin(1e-10));
    }
    SECTION("zero denominator raises") {
        CHECK_THROWS_AS(unfairness_ratio(Mat{{1.0, 1.0}}, Mat{{0.0, 1.0}}), DomainError);
    }
}

TEST_CASE("type invariant validation") {
    HorizonConfig cfg;
    cfg.N = 0;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = HorizonConfig{};
    cfg.a = 1.5;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = HorizonConfig{};
    CHECK_NOTHROW(cfg.validate());

    TransitionStep t;
    t.Pv = Mat::Identity(2, 2) * 0.5;
    t.Po = Mat::Zero(2, 2);
    t.Pl = Mat::Zero(2, 2);
    t.Qv = Mat::Identity(2, 2);
    t.Qo = Mat::Zero(2, 2);
    CHECK_THROWS_AS(t.validate(), DomainError);  // P rows sum to 0.5

    ServiceBounds b;
    b.l = Mat::Constant(1, 2, 0.8);
    b.h = Mat::Constant(1, 2, 0.5);
    CHECK_THROWS_AS(b.validate(), DomainError);
}
