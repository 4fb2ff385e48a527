#include "fcmesh/synth.hpp"

#include "fcmesh/error.hpp"

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fcmesh {

namespace {

std::size_t community_size(const SynthSpec& s, std::size_t g)
{
    const std::size_t base = s.voxels / s.communities;
    return base + (g < s.voxels % s.communities ? 1 : 0);
}

double coupling_of(const SynthSpec& s, int label, std::size_t g)
{
    if (s.coupling_table.empty())
        return s.coupling;
    return s.coupling_table[static_cast<std::size_t>(label - 1)][g];
}

// Blob centres on a cubic lattice, filled in x, y, z order.
Eigen::RowVector3d blob_center(std::size_t g, std::size_t count, double spacing)
{
    std::size_t side = 1;
    while (side * side * side < count)
        ++side;
    return {spacing * static_cast<double>(g % side), spacing * static_cast<double>((g / side) % side),
            spacing * static_cast<double>(g / (side * side))};
}

}  // namespace

void validate(const SynthSpec& s)
{
    if (s.num_classes < 2)
        throw ConfigError("synth: need at least 2 classes");
    if (s.voxels < 2)
        throw ConfigError("synth: need at least 2 voxels");
    if (s.communities < 1 || s.communities > s.voxels)
        throw ConfigError("synth: communities must lie in [1, voxels]");
    if (!(s.noise >= 0.0) || !std::isfinite(s.noise))
        throw ConfigError("synth: noise must be non-negative");
    if (s.trial_length < 1 || s.scans_per_class < 2 || s.scans_per_class % s.trial_length != 0)
        throw ConfigError("synth: scans_per_class must be a positive multiple of trial_length and at least 2");
    auto check_mag = [](double c) {
        if (!(c >= 0.0 && c <= 1.0))
            throw ConfigError("synth: coupling magnitude " + std::to_string(c) + " outside [0, 1]");
    };
    check_mag(s.coupling);
    if (!s.coupling_table.empty()) {
        if (s.coupling_table.size() != static_cast<std::size_t>(s.num_classes))
            throw ConfigError("synth: coupling_table needs one row per class");
        for (const auto& row : s.coupling_table) {
            if (row.size() != s.communities)
                throw ConfigError("synth: coupling_table rows need one entry per community");
            std::for_each(row.begin(), row.end(), check_mag);
        }
    }
    if (!s.correlation.empty()) {
        if (s.correlation.size() != static_cast<std::size_t>(s.num_classes))
            throw ConfigError("synth: correlation needs one matrix per class");
        if (s.voxels % s.communities != 0)
            throw ConfigError("synth: explicit correlation needs equal community sizes");
        const auto l = static_cast<Eigen::Index>(s.voxels / s.communities);
        for (const auto& r : s.correlation) {
            if (r.rows() != l || r.cols() != l)
                throw ConfigError("synth: correlation matrices must be " + std::to_string(l) + "x" + std::to_string(l));
            for (Eigen::Index i = 0; i < l; ++i) {
                if (r(i, i) != 1.0)
                    throw ConfigError("synth: correlation matrices need a unit diagonal");
                for (Eigen::Index j = 0; j < l; ++j)
                    if (r(i, j) != r(j, i) || std::abs(r(i, j)) > 1.0)
                        throw ConfigError("synth: correlation matrices must be symmetric with entries in [-1, 1]");
            }
        }
    }
    if (s.mesh_order >= s.voxels / s.communities && s.mesh_order > 0)
        throw ConfigError("synth: mesh_order must be smaller than the smallest community");
}

double GroundTruth::expected_correlation(int label, std::size_t j, std::size_t k) const
{
    if (j == k)
        return 1.0;
    if (community[j] != community[k])
        return 0.0;
    const auto c = static_cast<std::size_t>(label - 1);
    double cov = 0.0;
    if (!community_correlation.empty()) {
        // members of a community are contiguous, so local index = offset from the first member
        const auto first = static_cast<std::size_t>(std::find(community.begin(), community.end(), community[j]) -
                                                    community.begin());
        cov = community_correlation[c](static_cast<Eigen::Index>(j - first), static_cast<Eigen::Index>(k - first));
    } else {
        cov = loadings(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) *
              loadings(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k));
    }
    return cov / (1.0 + noise * noise);
}

SynthResult generate_synthetic(const SynthSpec& s)
{
    validate(s);
    std::mt19937_64 rng(s.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t m = s.voxels;
    const auto omega = static_cast<std::size_t>(s.num_classes);

    GroundTruth truth;
    truth.noise = s.noise;
    truth.community.resize(m);
    std::vector<std::size_t> first(s.communities + 1, 0);
    for (std::size_t g = 0; g < s.communities; ++g) {
        first[g + 1] = first[g] + community_size(s, g);
        for (std::size_t v = first[g]; v < first[g + 1]; ++v)
            truth.community[v] = g;
    }

    // Explicit correlation: Cholesky factor per class, rejecting infeasible targets.
    std::vector<Matrix> chol;
    for (const auto& r : s.correlation) {
        Eigen::LLT<Matrix> llt(r);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(r, Eigen::EigenvaluesOnly);
        const double floor = -1e-12 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
        if (eig.eigenvalues().minCoeff() < floor)
            throw ConfigError("synth: infeasible coupling matrix (not positive semi-definite, smallest eigenvalue " +
                              std::to_string(eig.eigenvalues().minCoeff()) + ")");
        if (llt.info() == Eigen::Success) {
            chol.push_back(llt.matrixL());
        } else {
            // semi-definite: factor through the eigendecomposition
            Eigen::SelfAdjointEigenSolver<Matrix> full(r);
            const Vector root = full.eigenvalues().cwiseMax(0.0).cwiseSqrt();
            chol.push_back(full.eigenvectors() * root.asDiagonal());
        }
        truth.community_correlation.push_back(r);
    }

    Coords coords(static_cast<Eigen::Index>(m), 3);
    for (std::size_t v = 0; v < m; ++v) {
        const Eigen::RowVector3d c = blob_center(truth.community[v], s.communities, s.blob_spacing);
        for (int a = 0; a < 3; ++a)
            coords(static_cast<Eigen::Index>(v), a) = c(a) + s.blob_radius * normal(rng);
    }

    truth.loadings = Matrix::Zero(static_cast<Eigen::Index>(omega), static_cast<Eigen::Index>(m));
    Matrix means = Matrix::Zero(static_cast<Eigen::Index>(omega), static_cast<Eigen::Index>(m));
    for (std::size_t c = 0; c < omega; ++c)
        for (std::size_t v = 0; v < m; ++v) {
            const double sign = s.random_signs ? (rng() & 1U ? 1.0 : -1.0) : 1.0;
            if (chol.empty())
                truth.loadings(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(v)) =
                    sign * coupling_of(s, static_cast<int>(c) + 1, truth.community[v]);
            means(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(v)) = normal(rng);
        }

    // Timeline: per phase, trials of all classes in a seeded order.
    std::vector<int> labels;
    std::vector<Phase> phase;
    std::vector<TrialPos> trials;
    const std::size_t trials_per_class = s.scans_per_class / s.trial_length;
    std::uint32_t trial_id = 0;
    for (Phase ph : {Phase::Encoding, Phase::Retrieval}) {
        if (ph == Phase::Retrieval && !s.retrieval)
            break;
        std::vector<int> order;
        for (std::size_t c = 0; c < omega; ++c)
            order.insert(order.end(), trials_per_class, static_cast<int>(c) + 1);
        std::shuffle(order.begin(), order.end(), rng);
        for (int label : order) {
            for (std::size_t t = 0; t < s.trial_length; ++t) {
                labels.push_back(label);
                phase.push_back(ph);
                trials.push_back({trial_id, static_cast<std::uint32_t>(t)});
            }
            ++trial_id;
        }
    }

    const std::size_t n = labels.size();
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    std::vector<double> factor(s.communities);
    Vector z;
    for (std::size_t t = 0; t < n; ++t) {
        // scan t shows the response to the stimulus `lag` scans earlier
        const int label = t >= s.lag ? labels[t - s.lag] : 0;
        const auto row = static_cast<Eigen::Index>(t);
        for (auto& f : factor)
            f = normal(rng);
        const double trend = n > 1 ? s.drift * (static_cast<double>(t) / static_cast<double>(n - 1) - 0.5) : 0.0;
        if (label > 0 && !chol.empty()) {
            for (std::size_t g = 0; g < s.communities; ++g) {
                const auto len = static_cast<Eigen::Index>(first[g + 1] - first[g]);
                z.resize(len);
                for (Eigen::Index i = 0; i < len; ++i)
                    z(i) = normal(rng);
                const Vector y = chol[static_cast<std::size_t>(label - 1)] * z;
                for (Eigen::Index i = 0; i < len; ++i)
                    x(row, static_cast<Eigen::Index>(first[g]) + i) = y(i);
            }
        }
        for (std::size_t v = 0; v < m; ++v) {
            const auto col = static_cast<Eigen::Index>(v);
            const double e = normal(rng);
            const double eps = normal(rng);
            double value = 0.0;
            if (label == 0) {
                value = e;
            } else if (chol.empty()) {
                const double load = truth.loadings(label - 1, col);
                value = load * factor[truth.community[v]] + std::sqrt(std::max(0.0, 1.0 - load * load)) * e;
            } else {
                value = x(row, col);
            }
            if (label > 0)
                value += s.mean_shift * means(label - 1, col);
            x(row, col) = value + s.noise * eps + trend;
        }
    }

    // Population arc weights: the first `mesh_order` other members of the community.
    if (s.mesh_order > 0) {
        for (int label = 1; label <= s.num_classes; ++label)
            for (std::size_t j = 0; j < m; ++j) {
                PlantedArc arc;
                arc.label = label;
                arc.seed = j;
                const std::size_t g = truth.community[j];
                for (std::size_t k = first[g]; k < first[g + 1] && arc.neighbors.size() < s.mesh_order; ++k)
                    if (k != j)
                        arc.neighbors.push_back(k);
                const auto p = static_cast<Eigen::Index>(arc.neighbors.size());
                Matrix cnn(p, p);
                Vector cnj(p);
                const double var = 1.0 + s.noise * s.noise;
                for (Eigen::Index a = 0; a < p; ++a) {
                    cnj(a) = truth.expected_correlation(label, arc.neighbors[static_cast<std::size_t>(a)], j) * var;
                    for (Eigen::Index b = 0; b < p; ++b)
                        cnn(a, b) = truth.expected_correlation(label, arc.neighbors[static_cast<std::size_t>(a)],
                                                               arc.neighbors[static_cast<std::size_t>(b)]) *
                                    var;
                }
                const Vector w = cnn.completeOrthogonalDecomposition().solve(cnj);
                arc.weights.assign(w.data(), w.data() + w.size());
                truth.arcs.push_back(std::move(arc));
            }
    }

    return {Dataset::make(std::move(x), std::move(coords), std::move(labels), std::move(phase), std::move(trials),
                          s.num_classes),
            std::move(truth)};
}

std::string ground_truth_json(const GroundTruth& g)
{
    nlohmann::json j;
    j["community"] = g.community;
    j["noise"] = g.noise;
    nlohmann::json load = nlohmann::json::array();
    for (Eigen::Index c = 0; c < g.loadings.rows(); ++c) {
        std::vector<double> row(static_cast<std::size_t>(g.loadings.cols()));
        for (Eigen::Index v = 0; v < g.loadings.cols(); ++v)
            row[static_cast<std::size_t>(v)] = g.loadings(c, v);
        load.push_back(row);
    }
    j["loadings"] = load;
    nlohmann::json corr = nlohmann::json::array();
    for (const auto& r : g.community_correlation) {
        nlohmann::json mat = nlohmann::json::array();
        for (Eigen::Index a = 0; a < r.rows(); ++a) {
            std::vector<double> row;
            for (Eigen::Index b = 0; b < r.cols(); ++b)
                row.push_back(r(a, b));
            mat.push_back(row);
        }
        corr.push_back(mat);
    }
    j["community_correlation"] = corr;
    nlohmann::json arcs = nlohmann::json::array();
    for (const auto& a : g.arcs)
        arcs.push_back({{"class", a.label}, {"seed", a.seed}, {"neighbors", a.neighbors}, {"weights", a.weights}});
    j["arcs"] = arcs;
    return j.dump() + "\n";
}

SynthSpec synth_spec_from_json(const std::string& json_text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth spec: ") + e.what());
    }
    if (j.contains("synth"))
        j = j["synth"];
    SynthSpec s;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& key = it.key();
            const auto& v = it.value();
            if (key == "voxels") s.voxels = v.get<std::size_t>();
            else if (key == "scans_per_class") s.scans_per_class = v.get<std::size_t>();
            else if (key == "num_classes") s.num_classes = v.get<int>();
            else if (key == "communities") s.communities = v.get<std::size_t>();
            else if (key == "coupling") s.coupling = v.get<double>();
            else if (key == "coupling_table") s.coupling_table = v.get<std::vector<std::vector<double>>>();
            else if (key == "random_signs") s.random_signs = v.get<bool>();
            else if (key == "correlation") {
                for (const auto& mat : v) {
                    const auto rows = mat.get<std::vector<std::vector<double>>>();
                    Matrix r(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
                    for (std::size_t a = 0; a < rows.size(); ++a) {
                        if (rows[a].size() != rows.size())
                            throw ConfigError("synth: correlation matrices must be square");
                        for (std::size_t b = 0; b < rows.size(); ++b)
                            r(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = rows[a][b];
                    }
                    s.correlation.push_back(r);
                }
            }
            else if (key == "noise") s.noise = v.get<double>();
            else if (key == "mean_shift") s.mean_shift = v.get<double>();
            else if (key == "drift") s.drift = v.get<double>();
            else if (key == "mesh_order") s.mesh_order = v.get<std::size_t>();
            else if (key == "trial_length") s.trial_length = v.get<std::size_t>();
            else if (key == "lag") s.lag = v.get<std::size_t>();
            else if (key == "retrieval") s.retrieval = v.get<bool>();
            else if (key == "blob_spacing") s.blob_spacing = v.get<double>();
            else if (key == "blob_radius") s.blob_radius = v.get<double>();
            else if (key == "seed") s.seed = v.get<std::uint64_t>();
            else throw ConfigError("synth spec: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth spec: ") + e.what());
    }
    validate(s);
    return s;
}

Vector oracle_least_squares(std::span<const double> seed_window, const Matrix& neighbor_windows)
{
    const Eigen::Map<const Vector> y(seed_window.data(), static_cast<Eigen::Index>(seed_window.size()));
    Eigen::JacobiSVD<Matrix> svd(neighbor_windows, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double cut = sv.size() ? sv(0) * 1e-13 * static_cast<double>(std::max(neighbor_windows.rows(), neighbor_windows.cols())) : 0.0;
    Vector inv = Vector::Zero(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cut)
            inv(i) = 1.0 / sv(i);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * y;
}

Matrix oracle_all_pairs_correlation(const Dataset& d)
{
    const Matrix& x = d.signals();
    const auto m = x.cols();
    const auto t = x.rows();
    Vector mean(m), ss(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        double s = 0.0;
        for (Eigen::Index r = 0; r < t; ++r)
            s += x(r, j);
        mean(j) = s / static_cast<double>(t);
        double q = 0.0;
        for (Eigen::Index r = 0; r < t; ++r)
            q += (x(r, j) - mean(j)) * (x(r, j) - mean(j));
        if (q == 0.0)
            throw DataError("voxel " + std::to_string(j + 1) + " has zero variance");
        ss(j) = q;
    }
    Matrix out(m, m);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index k = 0; k < m; ++k) {
            double sxy = 0.0;
            for (Eigen::Index r = 0; r < t; ++r)
                sxy += (x(r, j) - mean(j)) * (x(r, k) - mean(k));
            out(j, k) = std::clamp(sxy / std::sqrt(ss(j) * ss(k)), -1.0, 1.0);
        }
    return out;
}

}  // namespace fcmesh
