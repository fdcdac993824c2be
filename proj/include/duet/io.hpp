#pragma once

// Dataset directories (meta.json + env_<i>.csv) and JSON views of results.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "duet/discovery.hpp"
#include "duet/errors.hpp"
#include "duet/oracle.hpp"
#include "duet/scm.hpp"

namespace duet {

using Json = nlohmann::ordered_json;

class IoError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Eigen <-> JSON

inline Json to_json(const Vector& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Json to_json(const Matrix& m) {
    Json out = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(to_json(Vector(m.row(r).transpose())));
    return out;
}

inline Json to_json(const BoolMatrix& m) {
    Json out = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(bool(m(r, c)));
        out.push_back(row);
    }
    return out;
}

inline Vector vector_from_json(const Json& j) {
    if (!j.is_array()) throw IoError("expected a JSON array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

inline Matrix matrix_from_json(const Json& j) {
    if (!j.is_array()) throw IoError("expected a JSON array of rows");
    if (j.empty()) return Matrix(0, 0);
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(static_cast<Eigen::Index>(j.size()), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (static_cast<Eigen::Index>(j[r].size()) != cols) throw IoError("ragged matrix in JSON");
        m.row(static_cast<Eigen::Index>(r)) = vector_from_json(j[r]).transpose();
    }
    return m;
}

// ---------------------------------------------------------------------------
// CSV

/// Header x1,...,xd; full round-trip precision.
inline void write_csv(const std::filesystem::path& path, const Matrix& x) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (Eigen::Index c = 0; c < x.cols(); ++c) out << (c ? "," : "") << 'x' << (c + 1);
    out << '\n' << std::setprecision(17);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) out << (c ? "," : "") << x(r, c);
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline Matrix read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
    const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
    std::vector<double> values;
    Eigen::Index rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::istringstream ss(line);
        std::string cell;
        Eigen::Index c = 0;
        while (std::getline(ss, cell, ',')) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || (used != cell.size() && cell.substr(used) != "\r"))
                throw IoError(path.string() + ": bad number '" + cell + "' on data row " + std::to_string(rows + 1));
            values.push_back(v);
            ++c;
        }
        if (c != cols) throw IoError(path.string() + ": row " + std::to_string(rows + 1) + " has the wrong column count");
        ++rows;
    }
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = values[static_cast<std::size_t>(r * cols + c)];
    return m;
}

// ---------------------------------------------------------------------------
// Dataset directories

inline Json to_json(const SourceSpec& s) {
    Json j;
    j["family"] = std::string(to_string(s.family));
    j["mean"] = to_json(s.mean);
    if (s.family == SourceFamily::Gaussian) {
        j["variance"] = to_json(s.variance);
    } else {
        j["shape"] = to_json(s.shape);
        j["scale"] = to_json(s.scale);
    }
    return j;
}

inline SourceSpec source_spec_from_json(const Json& j) {
    const SourceFamily family = parse_source_family(j.at("family").get<std::string>());
    if (family == SourceFamily::Gaussian)
        return SourceSpec::gaussian(vector_from_json(j.at("mean")), vector_from_json(j.at("variance")));
    return SourceSpec::gamma(vector_from_json(j.at("shape")), vector_from_json(j.at("scale")));
}

inline void save_dataset(const MultiEnvDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    Json meta;
    meta["mechanism"] = ds.mechanism;
    meta["d"] = ds.d();
    meta["k"] = ds.k();
    meta["n"] = ds.n();
    meta["seed"] = ds.seed;
    meta["lambdas"] = to_json(ds.environments.lambdas);
    meta["partition"] = {{"group1", ds.environments.group1}, {"group2", ds.environments.group2}};
    if (ds.model) {
        const ScmModel& m = *ds.model;
        meta["sources"] = to_json(m.sources());
        Json edges = Json::array();
        for (const auto& e : m.dag().edges()) edges.push_back({e.from, e.to});
        meta["edges"] = edges;
        if (m.kind() != MechanismKind::Custom) meta["weights"] = m.mechanism().weights;
    }
    std::ofstream out(dir / "meta.json");
    if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << '\n';
    for (int e = 0; e <= ds.k(); ++e)
        write_csv(dir / ("env_" + std::to_string(e) + ".csv"), ds.data[static_cast<std::size_t>(e)]);
}

/// Reads a dataset directory. The model is rebuilt when meta.json carries the
/// graph and a builtin mechanism, which is what oracle mode needs.
inline MultiEnvDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw IoError("cannot read " + (dir / "meta.json").string());
    Json meta;
    try {
        meta = Json::parse(in);
    } catch (const Json::exception& e) {
        throw IoError("meta.json: " + std::string(e.what()));
    }
    MultiEnvDataset ds;
    try {
        ds.mechanism = meta.at("mechanism").get<std::string>();
        ds.seed = meta.at("seed").get<std::uint64_t>();
        const int d = meta.at("d").get<int>();
        const int k = meta.at("k").get<int>();
        const int n = meta.at("n").get<int>();
        ds.environments.lambdas = matrix_from_json(meta.at("lambdas"));
        ds.environments.group1 = meta.at("partition").at("group1").get<std::vector<int>>();
        ds.environments.group2 = meta.at("partition").at("group2").get<std::vector<int>>();
        if (ds.environments.k() != k || ds.environments.dim() != d) throw IoError("meta.json: lambdas must be k x d");
        ds.environments.validate();
        for (int e = 0; e <= k; ++e) {
            Matrix x = read_csv(dir / ("env_" + std::to_string(e) + ".csv"));
            if (x.rows() != n || x.cols() != d)
                throw IoError("env_" + std::to_string(e) + ".csv: expected " + std::to_string(n) + " x " + std::to_string(d));
            ds.data.push_back(std::move(x));
        }
        if (meta.contains("edges") && meta.contains("sources") && ds.mechanism != "custom") {
            std::vector<Edge> edges;
            for (const auto& e : meta["edges"]) edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
            Mechanism mech;
            mech.kind = parse_mechanism(ds.mechanism);
            if (meta.contains("weights")) mech.weights = meta["weights"].get<std::vector<std::vector<double>>>();
            ds.model = ScmModel(Dag(d, edges), mech, source_spec_from_json(meta["sources"]));
        }
    } catch (const Json::exception& e) {
        throw IoError("meta.json: " + std::string(e.what()));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Results

inline Json edges_to_json(const Dag& g) {
    Json out = Json::array();
    for (const auto& e : g.edges()) out.push_back({e.from, e.to});
    return out;
}

inline Json to_json(const DiscoveryResult& r) {
    Json j;
    j["support"] = to_json(r.estimate.support);
    j["edges"] = edges_to_json(r.estimate.graph);
    j["jacobian"] = to_json(r.estimate.jacobian);
    Json diag;
    Json pairs = Json::array();
    for (const auto& p : r.pairing.pairs)
        pairs.push_back({{"env", p.env}, {"base", p.base_index}, {"paired", p.env_index}, {"score_difference", p.score_difference}});
    diag["mean_pair_indices"] = pairs;
    diag["eig_gap"] = r.diagnostics.eig_gap;
    diag["eigenvalues"] = to_json(r.diagnostics.eigenvalues);
    diag["condition_numbers"] = {{"hessian_difference", r.diagnostics.h1_condition},
                                 {"kernel_bounds", r.diagnostics.kernel_condition_bounds}};
    Json repairs = Json::array();
    for (const auto& rep : r.estimate.repairs)
        repairs.push_back({{"edge", {rep.edge.from, rep.edge.to}}, {"magnitude", rep.magnitude}});
    diag["repairs"] = repairs;
    diag["mean_dispersion"] = r.diagnostics.mean_dispersion;
    diag["permutation"] = r.diagnostics.permutation;
    diag["warnings"] = r.diagnostics.warnings;
    j["diagnostics"] = diag;
    return j;
}

} // namespace duet
