#include "evdro/arima.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace evdro;

namespace {

// test-side ARMA simulator, independent of the fitting code
Vec simulate_arma(std::mt19937_64& rng, int T, const Vec& phi, const Vec& psi, double mu,
                  double sigma) {
    std::normal_distribution<double> noise(0.0, sigma);
    const int p = static_cast<int>(phi.size());
    const int q = static_cast<int>(psi.size());
    const int burn = 200;
    std::vector<double> w(static_cast<size_t>(T + burn), mu), e(static_cast<size_t>(T + burn), 0.0);
    for (int t = std::max(p, q); t < T + burn; ++t) {
        const double eps = noise(rng);
        double v = mu + eps;
        for (int i = 0; i < p; ++i) v += phi(i) * (w[static_cast<size_t>(t - 1 - i)] - mu);
        for (int j = 0; j < q; ++j) v += psi(j) * e[static_cast<size_t>(t - 1 - j)];
        w[static_cast<size_t>(t)] = v;
        e[static_cast<size_t>(t)] = eps;
    }
    Vec out(T);
    for (int t = 0; t < T; ++t) out(t) = w[static_cast<size_t>(t + burn)];
    return out;
}

}  // namespace

TEST_CASE("fit_arima") {
    SECTION("constant series, order (0,0,0)") {
        const Vec s = Vec::Constant(100, 7.25);
        const auto m = fit_arima(s, {0, 0, 0});
        CHECK(m.intercept == Catch::Approx(7.25).margin(1e-9));
        CHECK(m.sigma2 == Catch::Approx(1e-12));
    }
    SECTION("AR(1) phi=0.7 recovery") {
        std::mt19937_64 rng(42);
        const Vec s = simulate_arma(rng, 5000, Vec::Constant(1, 0.7), Vec(0), 3.0, 1.0);
        const auto m = fit_arima(s, {1, 0, 0});
        CHECK(m.phi(0) > 0.65);
        CHECK(m.phi(0) < 0.75);
        CHECK(m.intercept == Catch::Approx(3.0).margin(0.2));
        CHECK(m.sigma2 == Catch::Approx(1.0).epsilon(0.1));
    }
    SECTION("white noise fits phi near zero") {
        std::mt19937_64 rng(7);
        const Vec s = simulate_arma(rng, 5000, Vec(0), Vec(0), 0.0, 1.0);
        const auto m = fit_arima(s, {1, 0, 0});
        CHECK(std::abs(m.phi(0)) < 0.1);
    }
    SECTION("too-short series rejected") {
        CHECK_THROWS_AS(fit_arima(Vec::Ones(3), {2, 1, 2}), DataError);
    }
    SECTION("refit stability: log-likelihood within 1% per observation") {
        std::mt19937_64 rng(11);
        const Vec s = simulate_arma(rng, 3000, Vec::Constant(1, 0.5), Vec(0), 10.0, 2.0);
        const auto m = fit_arima(s, {1, 0, 0});
        const Vec s2 = simulate_arma(rng, 3000, m.phi, m.psi, m.intercept, std::sqrt(m.sigma2));
        const auto m2 = fit_arima(s2, {1, 0, 0});
        CHECK(std::abs(m2.loglik - m.loglik) <= 0.01 * std::abs(m.loglik) + 3.0);
    }
}

TEST_CASE("select_order") {
    SECTION("singleton grid") {
        const Vec s = Vec::LinSpaced(50, 0.0, 5.0);
        CHECK(select_order(s, {{0, 1, 0}}) == ArimaOrder{0, 1, 0});
    }
    SECTION("constant series prefers (0,0,0)") {
        const Vec s = Vec::Constant(80, 3.0);
        const auto o = select_order(s, {{0, 0, 0}, {1, 0, 0}, {0, 0, 1}});
        CHECK(o == ArimaOrder{0, 0, 0});
    }
    SECTION("AR(1) data usually selects (1,0,0) over (2,0,0)") {
        int hits = 0;
        for (int seed = 0; seed < 50; ++seed) {
            std::mt19937_64 rng(static_cast<unsigned>(1000 + seed));
            const Vec s = simulate_arma(rng, 2000, Vec::Constant(1, 0.6), Vec(0), 0.0, 1.0);
            if (select_order(s, {{1, 0, 0}, {2, 0, 0}}) == ArimaOrder{1, 0, 0}) ++hits;
        }
        CHECK(hits >= 40);
    }
    SECTION("empty grid rejected") {
        CHECK_THROWS_AS(select_order(Vec::Ones(50), {}), DomainError);
    }
}

TEST_CASE("forecast_path") {
    SECTION("constant model broadcasts its intercept") {
        ArimaModel m;
        m.order = {0, 0, 0};
        m.phi = Vec(0);
        m.psi = Vec(0);
        m.intercept = 5.0;
        m.sigma2 = 1.0;
        SeriesPanel panel{Mat::Constant(10, 2, 5.0), 30.0, SeriesKind::Demand};
        const Vec f = forecast_path({m, m}, panel, 2);
        REQUIRE(f.size() == 4);
        for (int i = 0; i < 4; ++i) CHECK(f(i) == Catch::Approx(5.0));
    }
    SECTION("AR(1) analytic recursion: 8 -> 4 -> 2") {
        ArimaModel m;
        m.order = {1, 0, 0};
        m.phi = Vec::Constant(1, 0.5);
        m.psi = Vec(0);
        m.intercept = 0.0;
        m.sigma2 = 1.0;
        Mat vals(3, 1);
        vals << 0.0, 0.0, 8.0;
        SeriesPanel panel{vals, 30.0, SeriesKind::Demand};
        const Vec f = forecast_path({m}, panel, 2);
        CHECK(f(0) == Catch::Approx(4.0));
        CHECK(f(1) == Catch::Approx(2.0));
    }
    SECTION("negative extrapolation floored at zero") {
        ArimaModel m;
        m.order = {1, 0, 0};
        m.phi = Vec::Constant(1, 0.9);
        m.psi = Vec(0);
        m.intercept = 0.0;
        m.sigma2 = 1.0;
        Mat vals(3, 1);
        vals << 0.0, 0.0, -50.0;  // panel values are usually nonnegative; forecast still floors
        SeriesPanel panel{vals, 30.0, SeriesKind::Demand};
        const Vec f = forecast_path({m}, panel, 3);
        CHECK(f.minCoeff() == 0.0);
    }
    SECTION("differenced model tracks a linear trend") {
        ArimaModel m;
        m.order = {0, 1, 0};
        m.phi = Vec(0);
        m.psi = Vec(0);
        m.intercept = 2.0;  // mean step of the differenced series
        m.sigma2 = 1.0;
        Mat vals(5, 1);
        vals << 0, 2, 4, 6, 8;
        SeriesPanel panel{vals, 30.0, SeriesKind::Demand};
        const Vec f = forecast_path({m}, panel, 2);
        CHECK(f(0) == Catch::Approx(10.0));
        CHECK(f(1) == Catch::Approx(12.0));
    }
}

TEST_CASE("rolling_residuals") {
    SECTION("perfect model on deterministic series gives zero residuals") {
        ArimaModel m;
        m.order = {0, 0, 0};
        m.phi = Vec(0);
        m.psi = Vec(0);
        m.intercept = 4.0;
        m.sigma2 = 1e-12;
        SeriesPanel panel{Mat::Constant(60, 2, 4.0), 30.0, SeriesKind::Supply};
        const auto rs = rolling_residuals({m, m}, panel, 2);
        CHECK(rs.deltas.cwiseAbs().maxCoeff() < 1e-12);
        CHECK(rs.kind == SeriesKind::Supply);
    }
    SECTION("constant bias shows up as constant rows") {
        ArimaModel m;
        m.order = {0, 0, 0};
        m.phi = Vec(0);
        m.psi = Vec(0);
        m.intercept = 5.0;
        m.sigma2 = 1.0;
        SeriesPanel panel{Mat::Constant(50, 1, 7.0), 30.0, SeriesKind::Demand};
        const auto rs = rolling_residuals({m}, panel, 2);
        CHECK((rs.deltas.array() - 2.0).abs().maxCoeff() < 1e-12);
    }
    SECTION("unbiasedness on synthetic AR(1) with the true model") {
        std::mt19937_64 rng(17);
        const double sigma = 1.0;
        const Vec s = simulate_arma(rng, 560, Vec::Constant(1, 0.6), Vec(0), 10.0, sigma);
        ArimaModel m;
        m.order = {1, 0, 0};
        m.phi = Vec::Constant(1, 0.6);
        m.psi = Vec(0);
        m.intercept = 10.0;
        m.sigma2 = sigma * sigma;
        Mat vals = s;
        SeriesPanel panel{vals, 30.0, SeriesKind::Demand};
        const auto rs = rolling_residuals({m}, panel, 1);
        REQUIRE(rs.samples() >= 500);
        const double mean = rs.deltas.col(0).mean();
        CHECK(std::abs(mean) <= 0.1 * sigma);
        // one-step residual variance close to sigma2
        const double var = (rs.deltas.col(0).array() - mean).square().sum() / (rs.samples() - 1);
        CHECK(var == Catch::Approx(sigma * sigma).epsilon(0.15));
    }
    SECTION("insufficient data raises with a minimum length") {
        ArimaModel m;
        m.order = {2, 1, 2};
        m.phi = Vec::Zero(2);
        m.psi = Vec::Zero(2);
        m.sigma2 = 1.0;
        SeriesPanel panel{Mat::Constant(5, 1, 1.0), 30.0, SeriesKind::Demand};
        CHECK_THROWS_AS(rolling_residuals({m}, panel, 3), DataError);
    }
}
