// Command-line pipeline: event ingestion, forecaster fitting, ambiguity-set
// construction, single solves, receding-horizon simulation and paired policy
// comparison.  Exit codes: 0 ok, 2 config error, 3 data error, 4 solver failure.

#include "evdro/dro.hpp"
#include "evdro/io.hpp"
#include "evdro/sim.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace evdro;

namespace {

struct PipelineConfig {
    std::uint64_t seed = 0;
    int N = 6;
    double station_fraction = 0.5;
    double grid_extent = 10.0;
    int tau = 2;
    int K = 48;
    int shift_start = 16;
    int steps = -1;  // -1: K - tau
    int n_seeds = 20;
    double l = 0.28, h = 1.0;
    double fleet_scale = 1.2;
    int train_days = 4;
    int nb = 100;
    double alpha = 0.25;
    double solver_eps = 1e-6;
    std::vector<std::string> policies = {"robust", "nonrobust"};
    std::string mode = "full";  // or "nonrobust-only"
};

json pipeline_config_json(const PipelineConfig& c) {
    return json{{"seed", c.seed},
                {"N", c.N},
                {"station_fraction", c.station_fraction},
                {"grid_extent", c.grid_extent},
                {"tau", c.tau},
                {"K", c.K},
                {"shift_start", c.shift_start},
                {"steps", c.steps},
                {"n_seeds", c.n_seeds},
                {"l", c.l},
                {"h", c.h},
                {"fleet_scale", c.fleet_scale},
                {"train_days", c.train_days},
                {"nb", c.nb},
                {"alpha", c.alpha},
                {"solver_eps", c.solver_eps},
                {"policies", c.policies},
                {"mode", c.mode}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig c;
    auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    opt("seed", c.seed);
    opt("N", c.N);
    opt("station_fraction", c.station_fraction);
    opt("grid_extent", c.grid_extent);
    opt("tau", c.tau);
    opt("K", c.K);
    opt("shift_start", c.shift_start);
    opt("steps", c.steps);
    opt("n_seeds", c.n_seeds);
    opt("l", c.l);
    opt("h", c.h);
    opt("fleet_scale", c.fleet_scale);
    opt("train_days", c.train_days);
    opt("nb", c.nb);
    opt("alpha", c.alpha);
    opt("solver_eps", c.solver_eps);
    opt("policies", c.policies);
    opt("mode", c.mode);
    return c;
}

Scenario build_scenario(const PipelineConfig& c) {
    Scenario scn = generate_city(c.seed, c.N, c.station_fraction, c.grid_extent, c.tau, c.K,
                                 c.shift_start);
    const Vec peak = scn.truth_r.mean.colwise().maxCoeff().transpose();
    scn.initial.V = c.fleet_scale * peak;
    scn.initial.O = 0.6 * c.fleet_scale * peak;
    scn.l = c.l;
    scn.h = c.h;
    scn.validate();
    return scn;
}

SolverOptions solver_options(double eps) {
    SolverOptions so;
    so.eps = eps;
    if (std::getenv("DRO_SOLVER_TOL")) so = SolverOptions::from_env();  // env wins
    return so;
}

SimConfig sim_config(const PipelineConfig& c) {
    SimConfig cfg;
    cfg.train_days = c.train_days;
    cfg.bootstrap.NB = c.nb;
    cfg.bootstrap.alpha = c.alpha;
    cfg.solver = solver_options(c.solver_eps);
    if (c.mode == "nonrobust-only") {  // ambiguity stage skipped entirely
        cfg.fix_gamma1 = 0.0;
        cfg.fix_gamma2 = 1.0;
    }
    return cfg;
}

Scenario load_scenario(const std::string& path) {
    Scenario scn;
    from_json(json::parse(read_file(path)), scn);
    return scn;
}

std::vector<Policy> parse_policies(const std::vector<std::string>& names) {
    std::vector<Policy> ps;
    for (const auto& n : names) ps.push_back(parse_policy(n));
    if (ps.empty()) throw DomainError("no policies given");
    return ps;
}

json summary_json(const ComparisonReport& rep) {
    json pols = json::array();
    for (size_t p = 0; p < rep.policies.size(); ++p) {
        double jd = 0, ur = 0, uu = 0;
        int aborted = 0, retries = 0;
        const auto& eps = rep.episodes[p];
        for (const auto& e : eps) {
            jd += e.total_driving_distance / static_cast<double>(eps.size());
            ur += e.unfairness_ratio_total / static_cast<double>(eps.size());
            uu += e.unfairness_utilization_total / static_cast<double>(eps.size());
            aborted += e.aborted;
            retries += e.total_retries;
        }
        pols.push_back(json{{"policy", to_string(rep.policies[p])},
                            {"mean_jd_realized", jd},
                            {"mean_unfair_ratio", ur},
                            {"mean_unfair_util", uu},
                            {"aborted_episodes", aborted},
                            {"retries", retries}});
    }
    json tests = json::array();
    for (const auto& t : rep.tests)
        tests.push_back(json{{"policy_a", t.policy_a},
                             {"policy_b", t.policy_b},
                             {"metric", t.metric},
                             {"mean_a", t.mean_a},
                             {"mean_b", t.mean_b},
                             {"wins_a", t.wins_a},
                             {"n", t.n},
                             {"p_sign", t.p_sign}});
    return json{{"version", kArtifactVersion}, {"policies", pols}, {"paired_sign_tests", tests}};
}

// per-episode solver wall clock, kept out of the deterministic metrics file
std::string timing_csv(const ComparisonReport& rep) {
    std::ostringstream os;
    os.precision(6);
    os << "policy,seed,total_solve_ms,steps,retries\n";
    for (size_t p = 0; p < rep.policies.size(); ++p)
        for (size_t e = 0; e < rep.episodes[p].size(); ++e) {
            double ms = 0;
            for (const auto& t : rep.episodes[p][e].trace) ms += t.solve_ms;
            os << to_string(rep.policies[p]) << ',' << e << ',' << ms << ','
               << rep.episodes[p][e].trace.size() << ',' << rep.episodes[p][e].total_retries
               << '\n';
        }
    return os.str();
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string());
}

void check_manifest_hash(const fs::path& out_dir, const json& config) {
    const fs::path mpath = out_dir / "manifest.json";
    if (!fs::exists(mpath)) return;
    const json m = json::parse(read_file(mpath));
    if (m.contains("config_hash") && m.at("config_hash").get<std::string>() != config_hash(config))
        throw DomainError("output directory " + out_dir.string() +
                          " holds artifacts for a different config (hash mismatch); "
                          "use a fresh directory");
}

// ---- subcommands ---------------------------------------------------------

struct IngestArgs {
    std::string trips, charging, regions, out_dir = ".";
    double step_minutes = 30.0;
    int steps = 0;  // 0: derived from the latest event
};

int max_step_from_events(const std::string& content, double step_minutes) {
    std::istringstream is(content);
    std::string line;
    std::getline(is, line);
    int lineno = 1, max_step = -1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        try {
            const double minutes = std::stod(line.substr(0, comma));
            max_step = std::max(max_step, static_cast<int>(minutes / step_minutes));
        } catch (const std::exception&) {
            throw DataError("unparseable timestamp at line " + std::to_string(lineno));
        }
    }
    return max_step;
}

void cmd_ingest(const IngestArgs& a) {
    const auto regions = [&] {
        std::ifstream is(a.regions);
        if (!is) throw DataError("cannot open region map " + a.regions);
        return read_region_map(is);
    }();
    const std::string trips = read_file(a.trips), charging = read_file(a.charging);
    int steps = a.steps;
    if (steps <= 0)
        steps = 1 + std::max({0, max_step_from_events(trips, a.step_minutes),
                              max_step_from_events(charging, a.step_minutes)});
    auto run = [&](const std::string& content, SeriesKind kind, const char* name) {
        std::istringstream is(content);
        const SeriesPanel p = ingest_events(is, regions, kind, a.step_minutes, steps);
        atomic_write(fs::path(a.out_dir) / name, panel_to_csv(p));
        std::cout << name << ": " << p.steps() << " steps x " << p.regions()
                  << " regions, total " << p.values.sum() << ", max cell "
                  << p.values.maxCoeff() << "\n";
    };
    ensure_dir(a.out_dir);
    run(trips, SeriesKind::Demand, "demand.csv");
    run(charging, SeriesKind::Supply, "supply.csv");
}

struct FitArgs {
    std::string demand, supply, out = "models.json";
    int tau = 2;
    bool grid = false;  // AIC order selection instead of the fixed default
};

std::vector<ArimaModel> fit_panel(const SeriesPanel& p, bool grid) {
    const std::vector<ArimaOrder> orders =
        grid ? default_order_grid() : std::vector<ArimaOrder>{{2, 0, 0}};
    std::vector<ArimaModel> ms;
    for (int i = 0; i < p.regions(); ++i)
        ms.push_back(detail::fit_region(p.values.col(i), orders));
    return ms;
}

void cmd_fit(const FitArgs& a) {
    auto load = [&](const std::string& path, SeriesKind kind) {
        std::ifstream is(path);
        if (!is) throw DataError("cannot open panel " + path);
        return panel_from_csv(is, kind);
    };
    const SeriesPanel pr = load(a.demand, SeriesKind::Demand);
    const SeriesPanel pc = load(a.supply, SeriesKind::Supply);
    json models = json{{"version", kArtifactVersion}, {"tau", a.tau}};
    json dm = json::array(), sm = json::array();
    for (const auto& m : fit_panel(pr, a.grid)) dm.push_back(to_json(m));
    for (const auto& m : fit_panel(pc, a.grid)) sm.push_back(to_json(m));
    models["demand_models"] = dm;
    models["supply_models"] = sm;
    atomic_write(a.out, models.dump(2) + "\n");
    std::cout << "fit " << pr.regions() << " demand and " << pc.regions()
              << " supply models -> " << a.out << "\n";
}

struct UncertaintyArgs {
    std::string demand, supply, models, out = "sets.json";
    int nb = 200;
    double alpha = 0.25;
    std::uint64_t seed = 0;
};

void cmd_uncertainty(const UncertaintyArgs& a) {
    const json mj = json::parse(read_file(a.models));
    const int tau = mj.at("tau").get<int>();
    auto load_models = [&](const char* key) {
        std::vector<ArimaModel> ms;
        for (const auto& e : mj.at(key)) {
            ArimaModel m;
            from_json(e, m);
            ms.push_back(m);
        }
        return ms;
    };
    auto load = [&](const std::string& path, SeriesKind kind) {
        std::ifstream is(path);
        if (!is) throw DataError("cannot open panel " + path);
        return panel_from_csv(is, kind);
    };
    json out = json{{"version", kArtifactVersion}, {"tau", tau}};
    auto one = [&](const SeriesPanel& panel, const std::vector<ArimaModel>& ms, const char* key,
                   std::uint64_t stream) {
        const ResidualSample rs = rolling_residuals(ms, panel, tau);
        const auto [mu, sigma] = estimate_moments(rs);
        BootstrapConfig bc{a.nb, a.alpha, splitmix64(a.seed ^ stream)};
        const auto [g1, g2] = bootstrap_thresholds(rs, bc);
        out[key] = to_json(build_set(mu, sigma, g1, g2, a.alpha));
        std::cout << key << ": M=" << rs.samples() << " gamma1=" << g1 << " gamma2=" << g2
                  << "\n";
    };
    one(load(a.demand, SeriesKind::Demand), load_models("demand_models"), "demand", 1);
    one(load(a.supply, SeriesKind::Supply), load_models("supply_models"), "supply", 2);
    atomic_write(a.out, out.dump(2) + "\n");
}

struct SolveArgs {
    std::string scenario, out = "result.json", export_program, mode = "robust";
    int step = 1;
    double gamma1 = 0.5, gamma2 = 1.5;
    double solver_eps = 1e-8;
};

ProblemInstance instance_at(const Scenario& scn, int step, Mode mode, double g1, double g2) {
    const int N = scn.config.N, tau = scn.config.tau, K = scn.config.K;
    if (step < 1 || step > K - tau + 1) throw DomainError("solve: step outside [1, K - tau + 1]");
    ProblemInstance inst;
    inst.config = scn.config;
    inst.costs = scn.costs;
    for (int k = 0; k + 1 < tau; ++k) inst.trans.steps.push_back(scn.trans.at((step - 1 + k) % K));
    inst.initial = scn.initial;
    inst.bounds.l = Mat::Constant(tau, N, scn.l);
    inst.bounds.h = Mat::Constant(tau, N, scn.h);
    inst.mode = mode;
    // truth means as point forecasts, scenario noise as dispersion
    Vec cr(static_cast<long>(N) * tau), cc(static_cast<long>(N) * tau);
    Vec sr(static_cast<long>(N) * tau), sc(static_cast<long>(N) * tau);
    for (int k = 0; k < tau; ++k)
        for (int i = 0; i < N; ++i) {
            const long idx = static_cast<long>(k) * N + i;
            cr(idx) = scn.truth_r.mean(step - 1 + k, i);
            cc(idx) = scn.truth_c.mean(step - 1 + k, i);
            sr(idx) = std::pow(scn.truth_r.noise(step - 1 + k, i), 2) + kEpsSigma;
            sc(idx) = std::pow(scn.truth_c.noise(step - 1 + k, i), 2) + kEpsSigma;
        }
    inst.demand_set = build_set(cr, sr.asDiagonal(), g1, g2, 0.25);
    inst.supply_set = build_set(cc, sc.asDiagonal(), g1, g2, 0.25);
    inst.validate();
    return inst;
}

void cmd_solve(const SolveArgs& a) {
    const Scenario scn = load_scenario(a.scenario);
    const Mode mode = a.mode == "robust"      ? Mode::Robust
                      : a.mode == "nonrobust" ? Mode::NonRobust
                                              : throw DomainError("solve: mode must be robust|nonrobust");
    const ProblemInstance inst = instance_at(scn, a.step, mode, a.gamma1, a.gamma2);
    const ConicProgram prog =
        mode == Mode::Robust ? assemble_robust(inst) : assemble_nonrobust(inst);
    if (!a.export_program.empty())
        atomic_write(a.export_program, program_to_json(prog).dump() + "\n");
    const SolveResult res = solve(prog, solver_options(a.solver_eps));
    json out = to_json(res);
    if (res.status == SolveStatus::Optimal) {
        const PlanExtract pe = extract_plan(prog, res, inst);
        out["jd"] = pe.jd;
        out["je"] = pe.je;
    }
    atomic_write(a.out, out.dump(2) + "\n");
    std::cout << "status " << to_string(res.status) << " objective " << res.objective << " ("
              << res.iterations << " iters) -> " << a.out << "\n";
    if (res.status != SolveStatus::Optimal)
        throw SolverError(std::string("solve finished with status ") + to_string(res.status));
}

struct RunArgs {
    std::string scenario, out_dir = ".", config;
    std::vector<std::string> policies;
    int seeds = -1, steps = -1, tau = -1;
    std::uint64_t seed = 0;
    bool have_seed = false;
};

void run_comparison(const PipelineConfig& cfg, const Scenario& scn, const fs::path& out_dir) {
    const int steps = cfg.steps > 0 ? cfg.steps : scn.config.K - cfg.tau;
    const ComparisonReport rep =
        compare(scn, parse_policies(cfg.policies), cfg.n_seeds, steps, cfg.tau, sim_config(cfg));
    atomic_write(out_dir / "metrics.csv", metrics_csv(rep, false));
    atomic_write(out_dir / "timing.csv", timing_csv(rep));
    atomic_write(out_dir / "summary.json", summary_json(rep).dump(2) + "\n");
    std::cout << summary_json(rep).dump(2) << "\n";
}

PipelineConfig merge_run_args(const RunArgs& a) {
    PipelineConfig cfg;
    if (!a.config.empty()) cfg = pipeline_config_from_json(json::parse(read_file(a.config)));
    if (a.have_seed) cfg.seed = a.seed;  // CLI flag beats config file
    if (!a.policies.empty()) cfg.policies = a.policies;
    if (a.seeds > 0) cfg.n_seeds = a.seeds;
    if (a.steps > 0) cfg.steps = a.steps;
    if (a.tau > 0) cfg.tau = a.tau;
    return cfg;
}

void cmd_simulate(const RunArgs& a) {
    PipelineConfig cfg = merge_run_args(a);
    const Scenario scn = a.scenario.empty() ? build_scenario(cfg) : load_scenario(a.scenario);
    if (!a.scenario.empty()) cfg.tau = a.tau > 0 ? a.tau : scn.config.tau;
    ensure_dir(a.out_dir);
    check_manifest_hash(a.out_dir, pipeline_config_json(cfg));
    run_comparison(cfg, scn, a.out_dir);
}

void cmd_pipeline(const RunArgs& a, const std::string& manifest_path) {
    PipelineConfig cfg;
    if (!manifest_path.empty()) {
        const json m = json::parse(read_file(manifest_path));
        cfg = pipeline_config_from_json(m.at("config"));
    } else {
        cfg = merge_run_args(a);
    }
    const fs::path out = a.out_dir;
    ensure_dir(out);
    const json cj = pipeline_config_json(cfg);
    check_manifest_hash(out, cj);

    std::vector<std::string> done;
    std::string stage = "scenario";
    try {
        const Scenario scn = build_scenario(cfg);
        atomic_write(out / "scenario.json", to_json(scn).dump() + "\n");
        done.push_back("scenario.json");

        const int steps = cfg.steps > 0 ? cfg.steps : cfg.K - cfg.tau;
        if (cfg.mode != "nonrobust-only") {
            stage = "fit+uncertainty";
            // representative episode-0 artifacts; each episode refits internally
            const auto ctx = detail::prepare_episode(scn, steps, cfg.tau, sim_config(cfg), 0);
            json models = json{{"version", kArtifactVersion}, {"tau", cfg.tau}};
            json dm = json::array(), sm = json::array();
            for (const auto& m : ctx.models_r) dm.push_back(to_json(m));
            for (const auto& m : ctx.models_c) sm.push_back(to_json(m));
            models["demand_models"] = dm;
            models["supply_models"] = sm;
            atomic_write(out / "models.json", models.dump(2) + "\n");
            done.push_back("models.json");
            json sets = json{{"version", kArtifactVersion},
                             {"demand", to_json(build_set(ctx.mu_r, ctx.sigma_r, ctx.g1r, ctx.g2r,
                                                          cfg.alpha))},
                             {"supply", to_json(build_set(ctx.mu_c, ctx.sigma_c, ctx.g1c, ctx.g2c,
                                                          cfg.alpha))}};
            atomic_write(out / "sets.json", sets.dump(2) + "\n");
            done.push_back("sets.json");
        }

        stage = "simulate+compare";
        run_comparison(cfg, scn, out);
        done.push_back("metrics.csv");
        done.push_back("timing.csv");
        done.push_back("summary.json");

        stage = "manifest";
        atomic_write(out / "manifest.json", make_manifest(cj, cfg.seed, done).dump(2) + "\n");
        std::cout << "pipeline complete; manifest " << (out / "manifest.json").string() << "\n";
    } catch (const Error&) {
        std::cerr << "pipeline: stage '" << stage << "' failed; completed artifacts:";
        for (const auto& d : done) std::cerr << ' ' << (out / d).string();
        std::cerr << "\n";
        throw;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"data-driven distributionally robust EV fleet rebalancing"};
    app.require_subcommand(1);

    IngestArgs ia;
    auto* ingest = app.add_subcommand("ingest", "aggregate event CSVs into per-region panels");
    ingest->add_option("--trips", ia.trips, "trip events CSV (minutes,region[,count])")->required();
    ingest->add_option("--charging", ia.charging, "charging events CSV")->required();
    ingest->add_option("--regions", ia.regions, "region map (one id per line)")->required();
    ingest->add_option("--out-dir", ia.out_dir, "output directory");
    ingest->add_option("--step-minutes", ia.step_minutes, "panel step length");
    ingest->add_option("--steps", ia.steps, "panel length (0: derive from data)");

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "fit per-region forecasting models");
    fit->add_option("--demand", fa.demand, "demand panel CSV")->required();
    fit->add_option("--supply", fa.supply, "supply panel CSV")->required();
    fit->add_option("--tau", fa.tau, "forecast horizon");
    fit->add_option("--out", fa.out, "models JSON path");
    fit->add_flag("--grid", fa.grid, "AIC order selection over the default grid");

    UncertaintyArgs ua;
    auto* unc = app.add_subcommand("uncertainty", "bootstrap ambiguity sets from residuals");
    unc->add_option("--demand", ua.demand, "demand panel CSV")->required();
    unc->add_option("--supply", ua.supply, "supply panel CSV")->required();
    unc->add_option("--models", ua.models, "models JSON from fit")->required();
    unc->add_option("--nb", ua.nb, "bootstrap resamples");
    unc->add_option("--alpha", ua.alpha, "confidence split");
    unc->add_option("--seed", ua.seed, "RNG seed");
    unc->add_option("--out", ua.out, "sets JSON path");

    SolveArgs sa;
    auto* sol = app.add_subcommand("solve", "single dispatch solve on a scenario");
    sol->add_option("--scenario", sa.scenario, "scenario JSON")->required();
    sol->add_option("--step", sa.step, "1-based step within the day");
    sol->add_option("--mode", sa.mode, "robust|nonrobust");
    sol->add_option("--gamma1", sa.gamma1, "mean-ellipsoid threshold");
    sol->add_option("--gamma2", sa.gamma2, "second-moment threshold");
    sol->add_option("--solver-eps", sa.solver_eps, "solver tolerance");
    sol->add_option("--out", sa.out, "result JSON path");
    sol->add_option("--export-program", sa.export_program, "conic standard-form JSON export");

    RunArgs ra_sim, ra_pipe;
    std::string manifest_path;
    auto add_run_opts = [](CLI::App* c, RunArgs& ra) {
        c->add_option("--scenario", ra.scenario, "scenario JSON (default: generated)");
        c->add_option("--config", ra.config, "pipeline config JSON");
        c->add_option("--out-dir", ra.out_dir, "output directory");
        c->add_option("--policy", ra.policies, "policy (repeatable): robust|nonrobust|noop");
        c->add_option("--seeds", ra.seeds, "paired episode seeds");
        c->add_option("--steps", ra.steps, "episode steps");
        c->add_option("--tau", ra.tau, "planning horizon");
        c->add_option("--seed", ra.seed, "master seed")->each([&ra](const std::string&) {
            ra.have_seed = true;
        });
    };
    auto* simc = app.add_subcommand("simulate", "receding-horizon episode rollout");
    add_run_opts(simc, ra_sim);
    auto* cmp = app.add_subcommand("compare", "paired robust-vs-nonrobust comparison");
    add_run_opts(cmp, ra_sim);
    auto* pipe = app.add_subcommand("pipeline", "full fit -> sets -> simulate -> compare run");
    add_run_opts(pipe, ra_pipe);
    pipe->add_option("--manifest", manifest_path, "rerun exactly from a previous manifest");

    try {
        app.parse(argc, argv);
        if (*ingest) cmd_ingest(ia);
        if (*fit) cmd_fit(fa);
        if (*unc) cmd_uncertainty(ua);
        if (*sol) cmd_solve(sa);
        if (*simc || *cmp) cmd_simulate(ra_sim);
        if (*pipe) cmd_pipeline(ra_pipe, manifest_path);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const SolverError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const InfeasibleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
