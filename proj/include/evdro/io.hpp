#pragma once

// Artifact plumbing: JSON serialization of scenarios, models, ambiguity sets
// and solve results, conic-program export for external-solver debugging, CSV
// panels, event-file ingestion, config hashing and atomic file writes.

#include "evdro/ambiguity.hpp"
#include "evdro/arima.hpp"
#include "evdro/conic.hpp"
#include "evdro/scenario.hpp"
#include "evdro/sim.hpp"
#include "evdro/solver.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace evdro {

using json = nlohmann::json;

inline constexpr const char* kArtifactVersion = "1";

namespace io_detail {

inline json vec_to_json(const Vec& v) {
    json a = json::array();
    for (long i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Vec vec_from_json(const json& a) {
    Vec v(static_cast<long>(a.size()));
    for (long i = 0; i < v.size(); ++i) v(i) = a[static_cast<size_t>(i)].get<double>();
    return v;
}

// row-major nested arrays; +inf entries (unreachable costs) become null
inline json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (long i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (long j = 0; j < m.cols(); ++j) {
            if (std::isfinite(m(i, j)))
                row.push_back(m(i, j));
            else
                row.push_back(nullptr);
        }
        rows.push_back(row);
    }
    return rows;
}

inline Mat mat_from_json(const json& rows) {
    const long r = static_cast<long>(rows.size());
    const long c = r == 0 ? 0 : static_cast<long>(rows[0].size());
    Mat m(r, c);
    for (long i = 0; i < r; ++i) {
        if (static_cast<long>(rows[static_cast<size_t>(i)].size()) != c)
            throw DataError("mat_from_json: ragged rows");
        for (long j = 0; j < c; ++j) {
            const json& e = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
            m(i, j) = e.is_null() ? kUnreachable : e.get<double>();
        }
    }
    return m;
}

}  // namespace io_detail

inline json to_json(const HorizonConfig& c) {
    return json{{"N", c.N},         {"tau", c.tau}, {"K", c.K},
                {"theta", c.theta}, {"beta", c.beta}, {"a", c.a},
                {"m1", c.m1},       {"m2", c.m2},   {"step_minutes", c.step_minutes}};
}

inline void from_json(const json& j, HorizonConfig& c) {
    j.at("N").get_to(c.N);
    j.at("tau").get_to(c.tau);
    j.at("K").get_to(c.K);
    j.at("theta").get_to(c.theta);
    j.at("beta").get_to(c.beta);
    j.at("a").get_to(c.a);
    j.at("m1").get_to(c.m1);
    j.at("m2").get_to(c.m2);
    j.at("step_minutes").get_to(c.step_minutes);
}

inline json to_json(const Scenario& scn) {
    json trans = json::array();
    for (const auto& tr : scn.trans.steps)
        trans.push_back(json{{"Pv", io_detail::mat_to_json(tr.Pv)},
                             {"Po", io_detail::mat_to_json(tr.Po)},
                             {"Pl", io_detail::mat_to_json(tr.Pl)},
                             {"Qv", io_detail::mat_to_json(tr.Qv)},
                             {"Qo", io_detail::mat_to_json(tr.Qo)}});
    auto truth = [](const TruthProcess& t) {
        return json{{"mean", io_detail::mat_to_json(t.mean)},
                    {"noise", io_detail::mat_to_json(t.noise)},
                    {"shift", io_detail::vec_to_json(t.shift)},
                    {"shift_start", t.shift_start}};
    };
    return json{{"version", kArtifactVersion},
                {"config", to_json(scn.config)},
                {"W", io_detail::mat_to_json(scn.costs.W)},
                {"Wstar", io_detail::mat_to_json(scn.costs.Wstar)},
                {"transitions", trans},
                {"stations", scn.stations},
                {"truth_r", truth(scn.truth_r)},
                {"truth_c", truth(scn.truth_c)},
                {"initial", json{{"V", io_detail::vec_to_json(scn.initial.V)},
                                 {"O", io_detail::vec_to_json(scn.initial.O)},
                                 {"L", io_detail::vec_to_json(scn.initial.L)}}},
                {"l", scn.l},
                {"h", scn.h},
                {"seed", scn.seed}};
}

inline void from_json(const json& j, Scenario& scn) {
    from_json(j.at("config"), scn.config);
    scn.costs.W = io_detail::mat_from_json(j.at("W"));
    scn.costs.Wstar = io_detail::mat_from_json(j.at("Wstar"));
    scn.trans.steps.clear();
    for (const auto& tj : j.at("transitions")) {
        TransitionStep tr;
        tr.Pv = io_detail::mat_from_json(tj.at("Pv"));
        tr.Po = io_detail::mat_from_json(tj.at("Po"));
        tr.Pl = io_detail::mat_from_json(tj.at("Pl"));
        tr.Qv = io_detail::mat_from_json(tj.at("Qv"));
        tr.Qo = io_detail::mat_from_json(tj.at("Qo"));
        scn.trans.steps.push_back(tr);
    }
    j.at("stations").get_to(scn.stations);
    auto truth = [](const json& tj, TruthProcess& t) {
        t.mean = io_detail::mat_from_json(tj.at("mean"));
        t.noise = io_detail::mat_from_json(tj.at("noise"));
        t.shift = io_detail::vec_from_json(tj.at("shift"));
        tj.at("shift_start").get_to(t.shift_start);
    };
    truth(j.at("truth_r"), scn.truth_r);
    truth(j.at("truth_c"), scn.truth_c);
    scn.initial.V = io_detail::vec_from_json(j.at("initial").at("V"));
    scn.initial.O = io_detail::vec_from_json(j.at("initial").at("O"));
    scn.initial.L = io_detail::vec_from_json(j.at("initial").at("L"));
    j.at("l").get_to(scn.l);
    j.at("h").get_to(scn.h);
    j.at("seed").get_to(scn.seed);
    scn.validate();
}

inline json to_json(const ArimaModel& m) {
    return json{{"p", m.order.p},   {"d", m.order.d},       {"q", m.order.q},
                {"phi", io_detail::vec_to_json(m.phi)},     {"psi", io_detail::vec_to_json(m.psi)},
                {"intercept", m.intercept}, {"sigma2", m.sigma2},
                {"loglik", m.loglik},       {"n_obs", m.n_obs}};
}

inline void from_json(const json& j, ArimaModel& m) {
    j.at("p").get_to(m.order.p);
    j.at("d").get_to(m.order.d);
    j.at("q").get_to(m.order.q);
    m.phi = io_detail::vec_from_json(j.at("phi"));
    m.psi = io_detail::vec_from_json(j.at("psi"));
    j.at("intercept").get_to(m.intercept);
    j.at("sigma2").get_to(m.sigma2);
    j.at("loglik").get_to(m.loglik);
    j.at("n_obs").get_to(m.n_obs);
}

inline json to_json(const AmbiguitySet& s) {
    return json{{"center", io_detail::vec_to_json(s.center)},
                {"Sigma", io_detail::mat_to_json(s.Sigma)},
                {"gamma1", s.gamma1},
                {"gamma2", s.gamma2},
                {"alpha", s.alpha}};
}

inline void from_json(const json& j, AmbiguitySet& s) {
    s = build_set(io_detail::vec_from_json(j.at("center")), io_detail::mat_from_json(j.at("Sigma")),
                  j.at("gamma1").get<double>(), j.at("gamma2").get<double>(),
                  j.at("alpha").get<double>());
}

inline json to_json(const SolveResult& r) {
    return json{{"status", to_string(r.status)},
                {"objective", r.objective},
                {"iterations", r.iterations},
                {"primal_residual", r.primal_residual},
                {"dual_residual", r.dual_residual},
                {"duality_gap", r.duality_gap},
                {"max_cone_residual", r.max_cone_residual},
                {"solver_eps", r.solver_eps},
                {"x", io_detail::vec_to_json(r.x)},
                {"y", io_detail::vec_to_json(r.y)},
                {"s", io_detail::vec_to_json(r.s)}};
}

// standard-form export (min c'x s.t. Ax + s = b, s in K) for external solvers
inline json program_to_json(const ConicProgram& p) {
    json cones = json::array();
    for (const ConeBlock& blk : p.cone_blocks()) {
        const char* kind = blk.cone == Cone::Zero          ? "zero"
                           : blk.cone == Cone::Nonnegative ? "nonneg"
                           : blk.cone == Cone::SecondOrder ? "soc"
                           : blk.cone == Cone::PSD         ? "psd"
                                                           : "power";
        cones.push_back(json{{"cone", kind},
                             {"row", blk.row},
                             {"dim", blk.dim},
                             {"mat_dim", blk.mat_dim},
                             {"alpha", blk.alpha}});
    }
    json trips = json::array();
    const auto A = p.matrix();
    for (int k = 0; k < A.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it)
            trips.push_back(json::array({it.row(), it.col(), it.value()}));
    return json{{"version", kArtifactVersion},
                {"num_vars", p.num_vars()},
                {"num_rows", p.num_rows()},
                {"cost", io_detail::vec_to_json(p.cost())},
                {"cost_constant", p.cost_constant()},
                {"rhs", io_detail::vec_to_json(p.rhs())},
                {"A_triplets", trips},
                {"cones", cones},
                {"note", "rows satisfy s = b - A x with s in the listed cones"}};
}

// ---- CSV panels ----------------------------------------------------------

inline std::string panel_to_csv(const SeriesPanel& p) {
    std::ostringstream os;
    os.precision(12);
    os << "step";
    for (int i = 0; i < p.regions(); ++i) os << ",r" << i;
    os << '\n';
    for (int t = 0; t < p.steps(); ++t) {
        os << t;
        for (int i = 0; i < p.regions(); ++i) os << ',' << p.values(t, i);
        os << '\n';
    }
    return os.str();
}

inline SeriesPanel panel_from_csv(std::istream& is, SeriesKind kind, double step_minutes = 30.0) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("panel_from_csv: empty file");
    int n_cols = 0;
    for (char ch : line) n_cols += ch == ',';
    if (n_cols < 1) throw DataError("panel_from_csv: header needs step plus region columns");
    std::vector<std::vector<double>> rows;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError("panel_from_csv: unparseable value at line " +
                                std::to_string(lineno));
            }
        }
        if (static_cast<int>(row.size()) != n_cols + 1)
            throw DataError("panel_from_csv: wrong column count at line " + std::to_string(lineno));
        rows.push_back(std::vector<double>(row.begin() + 1, row.end()));
    }
    SeriesPanel p;
    p.kind = kind;
    p.step_minutes = step_minutes;
    p.values.resize(static_cast<long>(rows.size()), n_cols);
    for (size_t t = 0; t < rows.size(); ++t)
        for (int i = 0; i < n_cols; ++i)
            p.values(static_cast<long>(t), i) = rows[t][static_cast<size_t>(i)];
    return p;
}

// ---- event ingestion -----------------------------------------------------

// events: `minutes,region[,count]` with a header line; regions: one id per
// line (header `region`), column order of the resulting panel
inline std::vector<std::string> read_region_map(std::istream& is) {
    std::vector<std::string> regions;
    std::string line;
    if (!std::getline(is, line)) throw DataError("read_region_map: empty file");
    while (std::getline(is, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) regions.push_back(line);
    }
    if (regions.empty()) throw DataError("read_region_map: no regions listed");
    return regions;
}

inline SeriesPanel ingest_events(std::istream& is, const std::vector<std::string>& regions,
                                 SeriesKind kind, double step_minutes, int n_steps) {
    std::map<std::string, int> col;
    for (size_t i = 0; i < regions.size(); ++i) col[regions[i]] = static_cast<int>(i);

    SeriesPanel p;
    p.kind = kind;
    p.step_minutes = step_minutes;
    p.values = Mat::Zero(n_steps, static_cast<long>(regions.size()));

    std::string line;
    if (!std::getline(is, line)) throw DataError("ingest_events: empty file (missing header)");
    int lineno = 1, n_events = 0;
    std::vector<int> bad_region_lines;
    while (std::getline(is, line)) {
        ++lineno;
        while (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string t_str, region, c_str;
        std::getline(ls, t_str, ',');
        std::getline(ls, region, ',');
        const bool has_count = static_cast<bool>(std::getline(ls, c_str, ','));
        double minutes = 0, count = 1;
        try {
            minutes = std::stod(t_str);
            if (has_count) count = std::stod(c_str);
        } catch (const std::exception&) {
            throw DataError("ingest_events: unparseable timestamp or count at line " +
                            std::to_string(lineno));
        }
        auto it = col.find(region);
        if (it == col.end()) {
            bad_region_lines.push_back(lineno);
            continue;
        }
        const int step = static_cast<int>(minutes / step_minutes);
        if (minutes < 0 || step >= n_steps)
            throw DataError("ingest_events: timestamp outside the panel window at line " +
                            std::to_string(lineno));
        p.values(step, it->second) += count;
        ++n_events;
    }
    if (!bad_region_lines.empty()) {
        std::ostringstream os;
        os << "ingest_events: unknown region id on line(s)";
        for (size_t i = 0; i < bad_region_lines.size() && i < 20; ++i)
            os << ' ' << bad_region_lines[i];
        if (bad_region_lines.size() > 20) os << " ... (" << bad_region_lines.size() << " total)";
        throw DataError(os.str());
    }
    if (n_events == 0)
        std::cerr << "ingest_events: warning, no events; panel is all zeros\n";
    const int empty = static_cast<int>((p.values.array() == 0.0).count());
    if (n_events > 0 && empty > 0)
        std::cerr << "ingest_events: note, " << empty << " empty (step, region) cells filled with 0\n";
    return p;
}

// inverse of ingest_events for round-trip checks: one event row per nonzero cell
inline std::string expand_panel(const SeriesPanel& p) {
    std::ostringstream os;
    os.precision(12);
    os << "minutes,region,count\n";
    for (int t = 0; t < p.steps(); ++t)
        for (int i = 0; i < p.regions(); ++i)
            if (p.values(t, i) != 0.0)
                os << t * p.step_minutes << ",r" << i << ',' << p.values(t, i) << '\n';
    return os.str();
}

// ---- files, hashing, manifest -------------------------------------------

inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("atomic_write: cannot open " + tmp.string());
        os << content;
        if (!os.flush()) throw DataError("atomic_write: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("read_file: cannot open " + path.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

inline std::string config_hash(const json& config) {
    std::ostringstream os;
    os << std::hex << fnv1a(config.dump());
    return os.str();
}

inline json make_manifest(const json& config, std::uint64_t seed,
                          const std::vector<std::string>& artifacts) {
    return json{{"version", kArtifactVersion},
                {"config", config},
                {"config_hash", config_hash(config)},
                {"seed", seed},
                {"artifacts", artifacts}};
}

}  // namespace evdro
