#pragma once

// Synthetic city scenarios: region geometry, gravity transition matrices,
// diurnal demand/supply mean paths with optional mid-episode distribution
// shift, and truth sampling for simulation episodes.

#include "evdro/common.hpp"
#include "evdro/fleet.hpp"

#include <cmath>
#include <sstream>
#include <vector>

namespace evdro {

// Per-region stochastic ground-truth process: a one-day mean path, a
// truncated-normal noise law, and a multiplicative shift that switches on at
// step `shift_start` (1-based; -1 keeps the shift off).
struct TruthProcess {
    Mat mean;   // K x N
    Mat noise;  // K x N standard deviations
    Vec shift;  // length-N multiplicative factors
    int shift_start = -1;

    void validate() const {
        if (noise.rows() != mean.rows() || noise.cols() != mean.cols())
            throw DimensionError("TruthProcess: mean and noise shapes differ");
        if (shift.size() != mean.cols())
            throw DimensionError("TruthProcess: shift length must match region count");
        if ((mean.array() < 0.0).any()) throw DomainError("TruthProcess: means must be nonnegative");
        if ((noise.array() < 0.0).any())
            throw DomainError("TruthProcess: noise std must be nonnegative");
        if ((shift.array() <= 0.0).any())
            throw DomainError("TruthProcess: shift factors must be positive");
    }
};

struct Scenario {
    HorizonConfig config;
    CostMatrices costs;
    TransitionModel trans;      // one step per simulation step, cyclic over the day
    std::vector<int> stations;  // charging stations per region
    TruthProcess truth_r, truth_c;
    FleetState initial;
    double l = 0.05, h = 5.0;  // default service-ratio bounds
    std::uint64_t seed = 0;

    void validate() const {
        config.validate();
        costs.validate();
        trans.validate();
        initial.validate();
        truth_r.validate();
        truth_c.validate();
        const int N = config.N;
        if (costs.regions() != N || initial.regions() != N ||
            static_cast<int>(stations.size()) != N)
            throw DimensionError("Scenario: region count mismatch");
        if (truth_r.mean.rows() != config.K || truth_r.mean.cols() != N ||
            truth_c.mean.rows() != config.K || truth_c.mean.cols() != N)
            throw DimensionError("Scenario: truth paths must be K x N");
        if (static_cast<int>(trans.steps.size()) < config.K)
            throw DimensionError("Scenario: need one transition step per simulation step");
        bool any_station = false;
        for (int j = 0; j < N; ++j) {
            if (stations[static_cast<size_t>(j)] > 0 != costs.station(j))
                throw DomainError("Scenario: station counts disagree with Wstar reachability");
            any_station = any_station || stations[static_cast<size_t>(j)] > 0;
        }
        if (!any_station) throw DomainError("Scenario: at least one region needs a station");
        if (!(l > 0.0) || h < l) throw DomainError("Scenario: need 0 < l <= h");
    }
};

namespace detail {

// smooth morning / afternoon / evening peaks on top of a base level
inline double diurnal_profile(double hour) {
    auto bump = [&](double center, double height) {
        const double d = hour - center;
        return height * std::exp(-d * d / (2.0 * 1.5 * 1.5));
    };
    return 0.5 + bump(9.0, 1.0) + bump(15.0, 0.8) + bump(21.0, 0.9);
}

inline Vec draw_truth(const TruthProcess& proc, int k, std::mt19937_64& rng, bool shifted) {
    const int N = static_cast<int>(proc.mean.cols());
    const bool on = shifted && proc.shift_start >= 1 && k >= proc.shift_start;
    std::normal_distribution<double> unit(0.0, 1.0);
    Vec out(N);
    for (int i = 0; i < N; ++i) {
        const double m = proc.mean(k - 1, i) * (on ? proc.shift(i) : 1.0);
        const double s = proc.noise(k - 1, i) * (on ? proc.shift(i) : 1.0);
        out(i) = std::max(0.0, s > 0.0 ? m + s * unit(rng) : m);
    }
    return out;
}

}  // namespace detail

// Grid-with-jitter city: Euclidean costs, gravity transitions, log-normal
// spatial demand/supply fields with diurnal peaks.  `shift_start` pre-arms a
// distribution shift (factors in [0.7, 1.4]) from that 1-based step onwards.
inline Scenario generate_city(std::uint64_t seed, int N, double station_fraction,
                              double grid_extent = 10.0, int tau = 2, int K = 48,
                              int shift_start = -1) {
    if (N < 2) throw DomainError("generate_city: need N >= 2");
    if (!(station_fraction > 0.0 && station_fraction <= 1.0))
        throw DomainError("generate_city: station_fraction must lie in (0,1]");
    if (!(grid_extent > 0.0)) throw DomainError("generate_city: grid_extent must be positive");

    Scenario scn;
    scn.seed = seed;
    scn.config.N = N;
    scn.config.tau = tau;
    scn.config.K = K;
    scn.config.m1 = 2.0 * grid_extent;  // every arc in reach; masking comes from stations
    scn.config.m2 = 2.0 * grid_extent;

    auto rng = derive_rng(seed, "city");
    std::uniform_real_distribution<double> U(0.0, 1.0);

    // region centroids: grid cells with jitter
    const int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(N))));
    const double cell = grid_extent / g;
    Mat pts(N, 2);
    for (int i = 0; i < N; ++i) {
        pts(i, 0) = (i % g + 0.5 + 0.4 * (U(rng) - 0.5)) * cell;
        pts(i, 1) = (i / g + 0.5 + 0.4 * (U(rng) - 0.5)) * cell;
    }
    scn.costs.W = Mat::Zero(N, N);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            if (i != j) scn.costs.W(i, j) = (pts.row(i) - pts.row(j)).norm();

    // stations: a random subset of ceil(fraction * N) regions
    const int n_st = std::min(N, std::max(1, static_cast<int>(std::lround(station_fraction * N))));
    std::vector<int> order(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) order[static_cast<size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    scn.stations.assign(static_cast<size_t>(N), 0);
    for (int s = 0; s < n_st; ++s)
        scn.stations[static_cast<size_t>(order[static_cast<size_t>(s)])] =
            1 + static_cast<int>(U(rng) * 3.0);
    scn.costs.Wstar = Mat::Constant(N, N, kUnreachable);
    for (int j = 0; j < N; ++j)
        if (scn.stations[static_cast<size_t>(j)] > 0) scn.costs.Wstar.col(j) = scn.costs.W.col(j);

    // gravity transitions, re-jittered per step
    const double scale = grid_extent / 3.0;
    for (int k = 0; k < K; ++k) {
        TransitionStep tr;
        Mat base(N, N);
        for (int j = 0; j < N; ++j) {
            for (int i = 0; i < N; ++i)
                base(j, i) = std::exp(-scn.costs.W(j, i) / scale) + 0.05 * U(rng);
            base.row(j) /= base.row(j).sum();
        }
        tr.Pv = 0.55 * base;
        tr.Po = 0.35 * base;
        tr.Pl = 0.10 * base;
        tr.Qv = 0.5 * base;
        tr.Qo = 0.5 * base;
        scn.trans.steps.push_back(tr);
    }

    // log-normal spatial fields times the shared diurnal profile
    std::normal_distribution<double> Z(0.0, 1.0);
    Vec base_r(N), base_c(N);
    for (int i = 0; i < N; ++i) {
        base_r(i) = 2.0 * std::exp(0.4 * Z(rng));
        base_c(i) = scn.stations[static_cast<size_t>(i)] > 0 ? std::exp(0.4 * Z(rng)) : 0.0;
    }
    scn.truth_r.mean.resize(K, N);
    scn.truth_c.mean.resize(K, N);
    for (int k = 0; k < K; ++k) {
        const double hour = (k + 0.5) * 24.0 / K;
        const double prof = detail::diurnal_profile(hour);
        scn.truth_r.mean.row(k) = prof * base_r.transpose();
        scn.truth_c.mean.row(k) = prof * base_c.transpose();
    }
    scn.truth_r.noise = 0.2 * scn.truth_r.mean;
    scn.truth_c.noise = 0.2 * scn.truth_c.mean;

    auto srng = derive_rng(seed, "shift");
    std::uniform_real_distribution<double> F(0.7, 1.4);
    scn.truth_r.shift.resize(N);
    scn.truth_c.shift.resize(N);
    for (int i = 0; i < N; ++i) scn.truth_r.shift(i) = F(srng);
    for (int i = 0; i < N; ++i) scn.truth_c.shift(i) = F(srng);
    scn.truth_r.shift_start = shift_start;
    scn.truth_c.shift_start = shift_start;

    // initial fleet sized to the demand field
    scn.initial.V = 5.0 * base_r.array() + 5.0;
    scn.initial.O = 3.0 * base_r;
    scn.initial.L = 1.0 + base_c.array();

    scn.validate();
    return scn;
}

// Default desk-scale comparison scenario: 6 regions, tau = 2, 48 half-hour
// steps, stations in half the regions, a distribution shift arming at step 16,
// fleet sized to ~1.2x peak demand, and service-ratio bounds tight enough that
// dispatch is coupled to the demand field on both sides.
inline Scenario desk_scenario(std::uint64_t seed = 2026) {
    Scenario scn = generate_city(seed, 6, 0.5, 10.0, 2, 48, 16);
    const Vec peak = scn.truth_r.mean.colwise().maxCoeff().transpose();
    scn.initial.V = 1.2 * peak;
    scn.initial.O = 0.72 * peak;
    scn.l = 0.28;
    scn.h = 1.0;
    scn.validate();
    return scn;
}

// Truth draw at 1-based step k: truncated normal around the (possibly
// shifted) mean path, floored at zero.
inline std::pair<Vec, Vec> sample_truth(const Scenario& scn, int k, std::mt19937_64& rng) {
    if (k < 1 || k > scn.config.K) {
        std::ostringstream os;
        os << "sample_truth: step " << k << " outside [1, " << scn.config.K << "]";
        throw DomainError(os.str());
    }
    Vec r = detail::draw_truth(scn.truth_r, k, rng, true);
    Vec c = detail::draw_truth(scn.truth_c, k, rng, true);
    return {r, c};
}

}  // namespace evdro
