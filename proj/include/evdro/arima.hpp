#pragma once

// Per-region ARIMA forecasting: conditional-sum-of-squares likelihood with a
// quasi-Newton refinement, tau-step-ahead concatenated forecasts, and rolling
// estimation residuals for ambiguity-set construction.

#include "evdro/common.hpp"

#include <cmath>
#include <iostream>
#include <sstream>
#include <vector>

namespace evdro {

enum class SeriesKind { Demand, Supply };

inline const char* to_string(SeriesKind k) { return k == SeriesKind::Demand ? "demand" : "supply"; }

struct SeriesPanel {
    Mat values;  // T x N per-step per-region observations
    double step_minutes = 30.0;
    SeriesKind kind = SeriesKind::Demand;

    int steps() const { return static_cast<int>(values.rows()); }
    int regions() const { return static_cast<int>(values.cols()); }
};

struct ArimaOrder {
    int p = 0, d = 0, q = 0;
    auto operator<=>(const ArimaOrder&) const = default;
};

struct ArimaModel {
    ArimaOrder order;
    Vec phi;           // AR coefficients, length p
    Vec psi;           // MA coefficients, length q
    double intercept = 0.0;
    double sigma2 = 0.0;
    double loglik = 0.0;
    int n_obs = 0;
};

namespace detail {

inline Vec difference(const Vec& x, int d) {
    Vec w = x;
    for (int r = 0; r < d; ++r) {
        Vec next(w.size() - 1);
        for (long t = 0; t + 1 < w.size(); ++t) next(t) = w(t + 1) - w(t);
        w = next;
    }
    return w;
}

inline double ar_spectral_radius(const Vec& phi) {
    const int p = static_cast<int>(phi.size());
    if (p == 0) return 0.0;
    Mat C = Mat::Zero(p, p);
    C.row(0) = phi.transpose();
    for (int i = 1; i < p; ++i) C(i, i - 1) = 1.0;
    return C.eigenvalues().cwiseAbs().maxCoeff();
}

// conditional sum of squares, first p values conditioned on, pre-sample
// innovations set to zero
inline double css(const Vec& w, const Vec& phi, const Vec& psi, double mu) {
    const int p = static_cast<int>(phi.size());
    const int q = static_cast<int>(psi.size());
    const long T = w.size();
    std::vector<double> e(static_cast<size_t>(T), 0.0);
    double sse = 0.0;
    for (long t = p; t < T; ++t) {
        double pred = mu;
        for (int i = 0; i < p; ++i) pred += phi(i) * (w(t - 1 - i) - mu);
        for (int j = 0; j < q; ++j)
            if (t - 1 - j >= p) pred += psi(j) * e[static_cast<size_t>(t - 1 - j)];
        const double r = w(t) - pred;
        e[static_cast<size_t>(t)] = r;
        sse += r * r;
    }
    return sse;
}

// like css, but only observations t >= start contribute to the sum; used to
// score candidates of different orders on an identical window
inline double css_from(const Vec& w, const Vec& phi, const Vec& psi, double mu, long start) {
    const int p = static_cast<int>(phi.size());
    const int q = static_cast<int>(psi.size());
    const long T = w.size();
    std::vector<double> e(static_cast<size_t>(T), 0.0);
    double sse = 0.0;
    for (long t = p; t < T; ++t) {
        double pred = mu;
        for (int i = 0; i < p; ++i) pred += phi(i) * (w(t - 1 - i) - mu);
        for (int j = 0; j < q; ++j)
            if (t - 1 - j >= p) pred += psi(j) * e[static_cast<size_t>(t - 1 - j)];
        const double r = w(t) - pred;
        e[static_cast<size_t>(t)] = r;
        if (t >= start) sse += r * r;
    }
    return sse;
}

template <class F>
struct BfgsResult {
    Vec x;
    double f = 0;
    double gnorm = 0;
    int iters = 0;
    bool converged = false;
};

template <class F>
BfgsResult<F> minimize_bfgs(const F& f, Vec x0, int max_iter = 500, double gtol = 1e-8) {
    const int n = static_cast<int>(x0.size());
    auto grad = [&](const Vec& x) {
        Vec g(n);
        for (int i = 0; i < n; ++i) {
            const double h = 1e-6 * (1.0 + std::abs(x(i)));
            Vec xp = x, xm = x;
            xp(i) += h;
            xm(i) -= h;
            g(i) = (f(xp) - f(xm)) / (2.0 * h);
        }
        return g;
    };

    BfgsResult<F> out;
    Vec x = x0;
    double fx = f(x);
    Vec g = grad(x);
    Mat H = Mat::Identity(n, n);
    int it = 0;
    for (; it < max_iter; ++it) {
        if (g.norm() <= gtol * (1.0 + std::abs(fx))) {
            out.converged = true;
            break;
        }
        Vec dir = -(H * g);
        if (dir.dot(g) >= 0) {
            H.setIdentity();
            dir = -g;
        }
        double alpha = 1.0;
        const double slope = g.dot(dir);
        double fn = fx;
        Vec xn = x;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls) {
            xn = x + alpha * dir;
            fn = f(xn);
            if (fn <= fx + 1e-4 * alpha * slope) {
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!moved) {
            out.converged = g.norm() <= 1e-5 * (1.0 + std::abs(fx));
            break;
        }
        const Vec gn = grad(xn);
        const Vec s = xn - x;
        const Vec yv = gn - g;
        const double sy = s.dot(yv);
        if (sy > 1e-12) {
            const Mat I = Mat::Identity(n, n);
            const Mat V = I - (s * yv.transpose()) / sy;
            H = V * H * V.transpose() + (s * s.transpose()) / sy;
        }
        const bool tiny = std::abs(fx - fn) <= 1e-14 * (1.0 + std::abs(fx));
        x = xn;
        fx = fn;
        g = gn;
        if (tiny && s.norm() <= 1e-12 * (1.0 + x.norm())) {
            out.converged = true;
            break;
        }
    }
    out.x = x;
    out.f = fx;
    out.gnorm = g.norm();
    out.iters = it;
    return out;
}

}  // namespace detail

inline ArimaModel fit_arima(const Vec& series, ArimaOrder order) {
    const int p = order.p, d = order.d, q = order.q;
    if (p < 0 || d < 0 || q < 0) throw DomainError("fit_arima: negative order");
    if (series.size() <= p + d + q + 1)
        throw DataError("fit_arima: series too short for requested order");
    if (!series.allFinite()) throw DataError("fit_arima: series contains non-finite values");

    const Vec w = detail::difference(series, d);
    const long T = w.size();
    const long neff = T - p;
    if (neff < 2) throw DataError("fit_arima: not enough observations after differencing");

    // initial values: mean, OLS on lags, zero MA
    Vec theta = Vec::Zero(1 + p + q);
    theta(0) = w.mean();
    if (p > 0 && T > 2 * p + 2) {
        Mat X(T - p, p);
        Vec yv(T - p);
        for (long t = p; t < T; ++t) {
            yv(t - p) = w(t) - theta(0);
            for (int i = 0; i < p; ++i) X(t - p, i) = w(t - 1 - i) - theta(0);
        }
        Vec phi0 = (X.transpose() * X + 1e-8 * Mat::Identity(p, p)).ldlt().solve(X.transpose() * yv);
        if (detail::ar_spectral_radius(phi0) < 0.98) theta.segment(1, p) = phi0;
    }

    auto objective = [&](const Vec& th) {
        const Vec phi = th.segment(1, p);
        const Vec psi = th.segment(1 + p, q);
        const double rad = detail::ar_spectral_radius(phi);
        if (rad >= 0.999) return 1e12 * (1.0 + rad);
        return detail::css(w, phi, psi, th(0));
    };

    auto opt = detail::minimize_bfgs(objective, theta, 500, 1e-8);
    if (!opt.converged && opt.gnorm > 1e-3 * (1.0 + std::abs(opt.f))) {
        std::ostringstream os;
        os << "fit_arima: no convergence after " << opt.iters
           << " iterations (|g| = " << opt.gnorm << ", last sse = " << opt.f << ")";
        throw DomainError(os.str());
    }

    ArimaModel m;
    m.order = order;
    m.intercept = opt.x(0);
    m.phi = opt.x.segment(1, p);
    m.psi = opt.x.segment(1 + p, q);
    if (detail::ar_spectral_radius(m.phi) >= 0.999)
        throw DomainError("fit_arima: nonstationary AR polynomial at optimum; try a higher d");
    m.n_obs = static_cast<int>(neff);
    m.sigma2 = std::max(opt.f / static_cast<double>(neff), 1e-12);
    m.loglik = -0.5 * static_cast<double>(neff) * (std::log(2.0 * M_PI * m.sigma2) + 1.0);
    return m;
}

inline ArimaOrder select_order(const Vec& series, const std::vector<ArimaOrder>& candidates) {
    if (candidates.empty()) throw DomainError("select_order: empty candidate grid");
    bool any = false;
    double best_aic = std::numeric_limits<double>::infinity();
    ArimaOrder best{};
    std::string last_error;
    std::vector<ArimaOrder> grid = candidates;
    std::sort(grid.begin(), grid.end());
    // score every candidate on the same observation window so that orders
    // conditioning on more initial values do not get a free ride
    long t0 = 0;
    for (const auto& o : grid) t0 = std::max<long>(t0, o.p + o.d);
    const long n_common = series.size() - t0;
    for (const auto& o : grid) {
        try {
            const ArimaModel m = fit_arima(series, o);
            const double k = o.p + o.q + 2;  // intercept + innovation variance
            const Vec w = detail::difference(series, o.d);
            const double sse = detail::css_from(w, m.phi, m.psi, m.intercept, t0 - o.d);
            const double s2 = std::max(sse / static_cast<double>(n_common), 1e-12);
            const double ll =
                -0.5 * static_cast<double>(n_common) * (std::log(2.0 * M_PI * s2) + 1.0);
            const double aic = 2.0 * k - 2.0 * ll;
            if (aic < best_aic - 1e-12) {
                best_aic = aic;
                best = o;
            }
            any = true;
        } catch (const Error& e) {
            last_error = e.what();
        }
    }
    if (!any) throw DomainError("select_order: all candidates failed to fit; last: " + last_error);
    return best;
}

inline std::vector<ArimaOrder> default_order_grid() {
    std::vector<ArimaOrder> g;
    for (int d = 0; d <= 1; ++d)
        for (int p = 0; p <= 2; ++p)
            for (int q = 0; q <= 2; ++q) g.push_back({p, d, q});
    return g;
}

// tau forecasts on the original scale (not floored; forecast_path floors)
inline Vec forecast_series(const ArimaModel& m, const Vec& history, int tau) {
    const int p = m.order.p, d = m.order.d, q = m.order.q;
    if (history.size() < p + d + 1)
        throw DataError("forecast_series: history shorter than model memory");
    const Vec w = detail::difference(history, d);
    const long T = w.size();

    // innovations over the history
    std::vector<double> e(static_cast<size_t>(T), 0.0);
    for (long t = p; t < T; ++t) {
        double pred = m.intercept;
        for (int i = 0; i < p; ++i) pred += m.phi(i) * (w(t - 1 - i) - m.intercept);
        for (int j = 0; j < q; ++j)
            if (t - 1 - j >= p) pred += m.psi(j) * e[static_cast<size_t>(t - 1 - j)];
        e[static_cast<size_t>(t)] = w(t) - pred;
    }

    std::vector<double> wext(w.data(), w.data() + T);
    std::vector<double> eext = e;
    for (int h = 0; h < tau; ++h) {
        const long t = T + h;
        double pred = m.intercept;
        for (int i = 0; i < p; ++i) pred += m.phi(i) * (wext[static_cast<size_t>(t - 1 - i)] - m.intercept);
        for (int j = 0; j < q; ++j)
            if (t - 1 - j >= p) pred += m.psi(j) * eext[static_cast<size_t>(t - 1 - j)];
        wext.push_back(pred);
        eext.push_back(0.0);
    }

    // integrate the d differences back
    Vec out(tau);
    if (d == 0) {
        for (int h = 0; h < tau; ++h) out(h) = wext[static_cast<size_t>(T + h)];
    } else {
        // heads[r] = last value of the r-times differenced history
        std::vector<double> heads;
        Vec lvl = history;
        for (int r = 0; r < d; ++r) {
            heads.push_back(lvl(lvl.size() - 1));
            lvl = detail::difference(lvl, 1);
        }
        for (int h = 0; h < tau; ++h) {
            double inc = wext[static_cast<size_t>(T + h)];
            for (int r = d - 1; r >= 0; --r) {
                heads[static_cast<size_t>(r)] += inc;
                inc = heads[static_cast<size_t>(r)];
            }
            out(h) = heads[0];
        }
    }
    return out;
}

// concatenated [step-1 forecasts for all regions, ..., step-tau], floored at 0
inline Vec forecast_path(const std::vector<ArimaModel>& models, const SeriesPanel& history, int tau) {
    const int N = history.regions();
    if (static_cast<int>(models.size()) != N)
        throw DimensionError("forecast_path: one model per region required");
    Vec out(static_cast<long>(N) * tau);
    for (int i = 0; i < N; ++i) {
        const Vec f = forecast_series(models[static_cast<size_t>(i)], history.values.col(i), tau);
        for (int k = 0; k < tau; ++k) out(static_cast<long>(k) * N + i) = std::max(f(k), 0.0);
    }
    return out;
}

struct ResidualSample {
    Mat deltas;  // M x (N*tau)
    SeriesKind kind = SeriesKind::Demand;

    int samples() const { return static_cast<int>(deltas.rows()); }
};

// residual row for window origin t0: observed path (t0 .. t0+tau-1) minus the
// forecast issued from the history ending at t0-1
inline ResidualSample rolling_residuals(const std::vector<ArimaModel>& models,
                                        const SeriesPanel& panel, int tau) {
    const int N = panel.regions();
    const int T = panel.steps();
    int warmup = 2;
    for (const auto& m : models)
        warmup = std::max(warmup, m.order.p + m.order.d + m.order.q + 2);
    const int M = T - tau - warmup + 1;
    if (M < 1) {
        std::ostringstream os;
        os << "rolling_residuals: panel too short; need at least " << (warmup + tau)
           << " steps, got " << T;
        throw DataError(os.str());
    }
    if (M < 30)
        std::cerr << "rolling_residuals: warning, only " << M
                  << " residual windows (< 30); ambiguity thresholds will be noisy\n";

    ResidualSample rs;
    rs.kind = panel.kind;
    rs.deltas.resize(M, static_cast<long>(N) * tau);
    for (int w = 0; w < M; ++w) {
        const int t0 = warmup + w;  // first forecast step of the window
        SeriesPanel hist{panel.values.topRows(t0), panel.step_minutes, panel.kind};
        const Vec fc = forecast_path(models, hist, tau);
        for (int k = 0; k < tau; ++k)
            for (int i = 0; i < N; ++i)
                rs.deltas(w, static_cast<long>(k) * N + i) =
                    panel.values(t0 + k, i) - fc(static_cast<long>(k) * N + i);
    }
    return rs;
}

}  // namespace evdro
