#pragma once

// Receding-horizon policy rollout: pre-fit forecasters on a training prefix,
// build ambiguity sets from rolling residuals, re-solve the dispatch program
// each step, apply the first step against sampled truth, and compare policies
// over paired seeds.

#include "evdro/ambiguity.hpp"
#include "evdro/arima.hpp"
#include "evdro/dro.hpp"
#include "evdro/scenario.hpp"
#include "evdro/solver.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace evdro {

enum class Policy { Robust, NonRobust, NoOp };

inline const char* to_string(Policy p) {
    switch (p) {
        case Policy::Robust: return "robust";
        case Policy::NonRobust: return "nonrobust";
        case Policy::NoOp: return "noop";
    }
    return "?";
}

inline Policy parse_policy(const std::string& s) {
    if (s == "robust") return Policy::Robust;
    if (s == "nonrobust") return Policy::NonRobust;
    if (s == "noop") return Policy::NoOp;
    throw DomainError("parse_policy: unknown policy '" + s + "'");
}

struct SimConfig {
    int train_days = 4;
    std::vector<ArimaOrder> orders = {{2, 0, 0}};  // >1 entry switches on AIC selection
    BootstrapConfig bootstrap{100, 0.25, 0};       // seed is re-derived per episode
    std::optional<double> fix_gamma1, fix_gamma2;  // bypass the bootstrap when set
    int max_retries = 5;
    SolverOptions solver = SolverOptions::from_env();
    int n_threads = 1;
};

struct StepTrace {
    int step = 0;
    double jd = 0, unfair_ratio = 0, unfair_util = 0, solve_ms = 0;
    int retries = 0;
};

struct EpisodeMetrics {
    double total_driving_distance = 0;
    double unfairness_ratio_total = 0;
    double unfairness_utilization_total = 0;
    int total_retries = 0;
    bool aborted = false;           // solver failed past all retries; metrics partial
    std::uint64_t truth_hash = 0;   // hash of the consumed truth stream (pairing check)
    std::vector<StepTrace> trace;
};

namespace detail {

inline std::uint64_t hash_matrix(std::uint64_t h, const Mat& M) {
    return fnv1a(std::string_view(reinterpret_cast<const char*>(M.data()),
                                  sizeof(double) * static_cast<size_t>(M.size())),
                 h);
}

// everything shared by the paired policies of one episode seed
struct EpisodeContext {
    std::vector<ArimaModel> models_r, models_c;
    SeriesPanel train_r, train_c;
    Vec mu_r, mu_c;
    Mat sigma_r, sigma_c;
    double g1r = 0, g2r = 1, g1c = 0, g2c = 1;
    Mat truth_r, truth_c;  // steps x N
    std::uint64_t truth_hash = 0;
};

inline ArimaModel fit_region(const Vec& series, const std::vector<ArimaOrder>& orders) {
    try {
        const ArimaOrder o = orders.size() == 1 ? orders.front() : select_order(series, orders);
        return fit_arima(series, o);
    } catch (const Error&) {
        // fall back to a mean model rather than aborting the episode
        return fit_arima(series, {0, 0, 0});
    }
}

inline EpisodeContext prepare_episode(const Scenario& scn, int steps, int tau,
                                      const SimConfig& cfg, std::uint64_t episode) {
    scn.validate();
    if (steps < 1 || steps > scn.config.K - tau)
        throw DomainError("run_episode: need 1 <= steps <= K - tau");
    if (tau < 1) throw DomainError("run_episode: tau must be >= 1");
    const int N = scn.config.N, K = scn.config.K;

    EpisodeContext ctx;

    // training prefix sampled from the unshifted regime
    const int T = cfg.train_days * K;
    auto trng = derive_rng(scn.seed, "train", episode);
    ctx.train_r = {Mat(T, N), scn.config.step_minutes, SeriesKind::Demand};
    ctx.train_c = {Mat(T, N), scn.config.step_minutes, SeriesKind::Supply};
    for (int t = 0; t < T; ++t) {
        ctx.train_r.values.row(t) = draw_truth(scn.truth_r, t % K + 1, trng, false).transpose();
        ctx.train_c.values.row(t) = draw_truth(scn.truth_c, t % K + 1, trng, false).transpose();
    }

    for (int i = 0; i < N; ++i) {
        ctx.models_r.push_back(fit_region(ctx.train_r.values.col(i), cfg.orders));
        ctx.models_c.push_back(fit_region(ctx.train_c.values.col(i), cfg.orders));
    }

    const ResidualSample rs_r = rolling_residuals(ctx.models_r, ctx.train_r, tau);
    const ResidualSample rs_c = rolling_residuals(ctx.models_c, ctx.train_c, tau);
    std::tie(ctx.mu_r, ctx.sigma_r) = estimate_moments(rs_r);
    std::tie(ctx.mu_c, ctx.sigma_c) = estimate_moments(rs_c);

    BootstrapConfig bc = cfg.bootstrap;
    bc.seed = splitmix64(scn.seed ^ splitmix64(episode));
    if (cfg.fix_gamma1 && cfg.fix_gamma2) {
        ctx.g1r = ctx.g1c = *cfg.fix_gamma1;
        ctx.g2r = ctx.g2c = *cfg.fix_gamma2;
    } else {
        std::tie(ctx.g1r, ctx.g2r) = bootstrap_thresholds(rs_r, bc);
        std::tie(ctx.g1c, ctx.g2c) = bootstrap_thresholds(rs_c, bc);
    }

    // truth stream per (scenario seed, episode, step); policies never touch it
    ctx.truth_r.resize(steps, N);
    ctx.truth_c.resize(steps, N);
    for (int k = 1; k <= steps; ++k) {
        auto rng = derive_rng(scn.seed, "truth", (episode << 20) ^ static_cast<std::uint64_t>(k));
        const auto [r, c] = sample_truth(scn, k, rng);
        ctx.truth_r.row(k - 1) = r.transpose();
        ctx.truth_c.row(k - 1) = c.transpose();
    }
    ctx.truth_hash = hash_matrix(hash_matrix(fnv1a("truth"), ctx.truth_r), ctx.truth_c);
    return ctx;
}

inline EpisodeMetrics run_prepared(const Scenario& scn, const EpisodeContext& ctx, Policy policy,
                                   int steps, int tau, const SimConfig& cfg) {
    const int N = scn.config.N, K = scn.config.K;
    std::vector<int> st;
    for (int j = 0; j < N; ++j)
        if (scn.stations[static_cast<size_t>(j)] > 0) st.push_back(j);

    EpisodeMetrics em;
    em.truth_hash = ctx.truth_hash;
    FleetState state = scn.initial;
    SeriesPanel hist_r = ctx.train_r, hist_c = ctx.train_c;

    for (int t = 1; t <= steps; ++t) {
        StepTrace trc;
        trc.step = t;
        Mat X1 = Mat::Zero(N, N), Y1 = Mat::Zero(N, N);

        if (policy != Policy::NoOp) {
            const Vec fr = forecast_path(ctx.models_r, hist_r, tau);
            const Vec fc = forecast_path(ctx.models_c, hist_c, tau);

            ProblemInstance inst;
            inst.config = scn.config;
            inst.config.tau = tau;
            inst.costs = scn.costs;
            for (int k = 0; k + 1 < tau; ++k)
                inst.trans.steps.push_back(scn.trans.at((t - 1 + k) % K));
            inst.initial = state;
            inst.mode = policy == Policy::Robust ? Mode::Robust : Mode::NonRobust;
            const Vec center_r = (fr + ctx.mu_r).cwiseMax(0.0);
            const Vec center_c = (fc + ctx.mu_c).cwiseMax(0.0);
            const double al = cfg.bootstrap.alpha;
            inst.demand_set = build_set(center_r, ctx.sigma_r, ctx.g1r, ctx.g2r, al);
            inst.supply_set = build_set(center_c, ctx.sigma_c, ctx.g1c, ctx.g2c, al);

            double lcur = scn.l, hcur = scn.h;
            bool solved = false;
            for (int attempt = 0; attempt <= cfg.max_retries && !solved; ++attempt) {
                inst.bounds.l = Mat::Constant(tau, N, lcur);
                inst.bounds.h = Mat::Constant(tau, N, hcur);
                const auto t0 = std::chrono::steady_clock::now();
                try {
                    const ConicProgram prog = policy == Policy::Robust ? assemble_robust(inst)
                                                                       : assemble_nonrobust(inst);
                    const SolveResult res = solve(prog, cfg.solver);
                    if (res.status != SolveStatus::Optimal)
                        throw SolverError(std::string("solver status ") + to_string(res.status));
                    const PlanExtract pe = extract_plan(prog, res, inst);
                    X1 = pe.plan.X.front();
                    Y1 = pe.plan.Y.front();
                    solved = true;
                } catch (const Error& e) {
                    trc.retries += 1;
                    std::cerr << "run_episode: step " << t << " attempt " << attempt
                              << " failed (" << e.what() << "); widening bounds to l="
                              << lcur * 0.9 << ", h=" << hcur * 1.1 << "\n";
                    lcur *= 0.9;
                    hcur *= 1.1;
                }
                trc.solve_ms += std::chrono::duration<double, std::milli>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
            }
            if (!solved) {
                std::cerr << "run_episode: aborting episode at step " << t
                          << " after " << cfg.max_retries << " retries\n";
                em.total_retries += trc.retries;
                em.aborted = true;
                em.trace.push_back(trc);
                break;
            }
        }

        const Vec r_t = ctx.truth_r.row(t - 1).transpose();
        const Vec c_t = ctx.truth_c.row(t - 1).transpose();

        trc.jd = balancing_cost({X1}, {Y1}, scn.costs, scn.config.beta);
        const Vec S1 = (net_flow(X1) + state.V).cwiseMax(kEpsSupply);
        trc.unfair_ratio = unfairness_ratio(r_t.transpose(), S1.transpose());

        const Vec yn = net_flow(Y1);
        Mat num(1, static_cast<long>(st.size())), den(1, static_cast<long>(st.size()));
        for (size_t s = 0; s < st.size(); ++s) {
            num(0, static_cast<long>(s)) = c_t(st[s]);
            den(0, static_cast<long>(s)) = std::max(yn(st[s]), kEpsNetInflow);
        }
        trc.unfair_util = unfairness_utilization(den, num);

        em.total_driving_distance += trc.jd;
        em.unfairness_ratio_total += trc.unfair_ratio;
        em.unfairness_utilization_total += trc.unfair_util;
        em.total_retries += trc.retries;
        em.trace.push_back(trc);

        state = propagate(state, X1, Y1, scn.trans.at((t - 1) % K), c_t);
        const long T = hist_r.values.rows();
        hist_r.values.conservativeResize(T + 1, N);
        hist_c.values.conservativeResize(T + 1, N);
        hist_r.values.row(T) = r_t.transpose();
        hist_c.values.row(T) = c_t.transpose();
    }
    return em;
}

// one-sided sign test: P[Binomial(n, 1/2) >= wins]
inline double sign_test_p(int wins, int n) {
    if (n <= 0) return 1.0;
    auto log_choose = [](int nn, int kk) {
        return std::lgamma(nn + 1.0) - std::lgamma(kk + 1.0) - std::lgamma(nn - kk + 1.0);
    };
    double p = 0.0;
    for (int j = wins; j <= n; ++j)
        p += std::exp(log_choose(n, j) - n * std::log(2.0));
    return std::min(1.0, p);
}

}  // namespace detail

inline EpisodeMetrics run_episode(const Scenario& scn, Policy policy, int steps, int tau,
                                  const SimConfig& cfg = {}, std::uint64_t episode = 0) {
    const auto ctx = detail::prepare_episode(scn, steps, tau, cfg, episode);
    return detail::run_prepared(scn, ctx, policy, steps, tau, cfg);
}

struct PairedTest {
    std::string policy_a, policy_b, metric;
    double mean_a = 0, mean_b = 0;
    int wins_a = 0, n = 0;  // seeds where a strictly beats b; ties dropped
    double p_sign = 1.0;
};

struct ComparisonReport {
    std::vector<Policy> policies;
    int steps = 0;
    std::vector<std::vector<EpisodeMetrics>> episodes;  // [policy][seed]
    std::vector<PairedTest> tests;
};

inline ComparisonReport compare(const Scenario& scn, const std::vector<Policy>& policies,
                                int n_seeds, int steps, int tau, const SimConfig& cfg = {}) {
    if (n_seeds < 1) throw DomainError("compare: need n_seeds >= 1");
    if (policies.empty()) throw DomainError("compare: empty policy list");

    ComparisonReport rep;
    rep.policies = policies;
    rep.steps = steps;
    rep.episodes.assign(policies.size(), std::vector<EpisodeMetrics>(static_cast<size_t>(n_seeds)));

    auto run_seed = [&](int e) {
        const auto ctx = detail::prepare_episode(scn, steps, tau, cfg, static_cast<std::uint64_t>(e));
        for (size_t p = 0; p < policies.size(); ++p)
            rep.episodes[p][static_cast<size_t>(e)] =
                detail::run_prepared(scn, ctx, policies[p], steps, tau, cfg);
    };
    if (cfg.n_threads > 1) {
        std::vector<std::future<void>> fs;
        std::atomic<int> next{0};
        for (int w = 0; w < cfg.n_threads; ++w)
            fs.push_back(std::async(std::launch::async, [&] {
                for (int e = next.fetch_add(1); e < n_seeds; e = next.fetch_add(1)) run_seed(e);
            }));
        for (auto& f : fs) f.get();
    } else {
        for (int e = 0; e < n_seeds; ++e) run_seed(e);
    }

    // pairing invariant: identical truth streams across policies per seed
    for (size_t p = 1; p < policies.size(); ++p)
        for (int e = 0; e < n_seeds; ++e)
            if (rep.episodes[p][static_cast<size_t>(e)].truth_hash !=
                rep.episodes[0][static_cast<size_t>(e)].truth_hash)
                throw DomainError("compare: truth streams diverged across policies");

    auto metric = [](const EpisodeMetrics& m, int which) {
        return which == 0   ? m.total_driving_distance
               : which == 1 ? m.unfairness_ratio_total
                            : m.unfairness_utilization_total;
    };
    static const char* kMetricNames[] = {"jd_realized", "unfair_ratio", "unfair_util"};
    for (size_t a = 0; a < policies.size(); ++a) {
        for (size_t b = a + 1; b < policies.size(); ++b) {
            for (int w = 0; w < 3; ++w) {
                PairedTest t;
                t.policy_a = to_string(policies[a]);
                t.policy_b = to_string(policies[b]);
                t.metric = kMetricNames[w];
                for (int e = 0; e < n_seeds; ++e) {
                    const double va = metric(rep.episodes[a][static_cast<size_t>(e)], w);
                    const double vb = metric(rep.episodes[b][static_cast<size_t>(e)], w);
                    t.mean_a += va / n_seeds;
                    t.mean_b += vb / n_seeds;
                    if (va != vb) {
                        t.n += 1;
                        if (va < vb) t.wins_a += 1;
                    }
                }
                t.p_sign = detail::sign_test_p(t.wins_a, t.n);
                rep.tests.push_back(t);
            }
        }
    }
    return rep;
}

// Per-step time series, one row per (policy, seed, step).  `with_timing=false`
// zeroes the solve_ms column so the file is bit-identical across reruns;
// callers wanting wall-clock keep the default and accept nondeterminism.
inline std::string metrics_csv(const ComparisonReport& rep, bool with_timing = true) {
    std::ostringstream os;
    os.precision(12);
    os << "step,policy,seed,jd_realized,unfair_ratio,unfair_util,solve_ms,retries\n";
    for (size_t p = 0; p < rep.policies.size(); ++p) {
        for (size_t e = 0; e < rep.episodes[p].size(); ++e) {
            for (const StepTrace& trc : rep.episodes[p][e].trace) {
                os << trc.step << ',' << to_string(rep.policies[p]) << ',' << e << ','
                   << trc.jd << ',' << trc.unfair_ratio << ',' << trc.unfair_util << ','
                   << (with_timing ? trc.solve_ms : 0.0) << ',' << trc.retries << '\n';
            }
        }
    }
    return os.str();
}

}  // namespace evdro
