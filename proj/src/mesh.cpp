#include "fcmesh/mesh.hpp"

#include "fcmesh/error.hpp"
#include "fcmesh/io.hpp"
#include "fcmesh/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace fcmesh {

NeighborMode parse_neighbor_mode(const std::string& name)
{
    if (name == "P" || name == "positive")
        return NeighborMode::Positive;
    if (name == "N" || name == "negative")
        return NeighborMode::Negative;
    if (name == "S" || name == "std" || name == "threshold-std")
        return NeighborMode::ThresholdStd;
    if (name == "E" || name == "ent" || name == "threshold-ent")
        return NeighborMode::ThresholdEnt;
    if (name == "euclidean")
        return NeighborMode::Euclidean;
    throw ConfigError("unknown neighbour mode '" + name + "' (P | N | S | E | euclidean)");
}

std::string neighbor_mode_name(NeighborMode m)
{
    switch (m) {
    case NeighborMode::Positive: return "positive";
    case NeighborMode::Negative: return "negative";
    case NeighborMode::ThresholdStd: return "threshold-std";
    case NeighborMode::ThresholdEnt: return "threshold-ent";
    case NeighborMode::Euclidean: return "euclidean";
    }
    return "?";
}

bool uses_threshold(NeighborMode m) { return m == NeighborMode::ThresholdStd || m == NeighborMode::ThresholdEnt; }

Neighborhood neighbors_by_sign(const ConnectivitySet& fc, const Patching& p, std::size_t seed, std::size_t order,
                               NeighborMode sign)
{
    if (sign != NeighborMode::Positive && sign != NeighborMode::Negative)
        throw ConfigError("neighbors_by_sign needs the positive or negative mode");
    const auto m = p.patch_of(seed);
    const std::size_t size = p.patch_size(m);
    if (order < 1 || order > size - 1)
        throw ConfigError("order p=" + std::to_string(order) + " exceeds the capacity of patch " +
                          std::to_string(m + 1) + " (" + std::to_string(size) + " voxels)");
    const Matrix& row_src = fc.patches.at(m);
    const auto self = static_cast<Eigen::Index>(p.local_index(seed));

    std::vector<bool> taken(size, false);
    taken[static_cast<std::size_t>(self)] = true;
    Neighborhood h{seed, {}, sign};
    for (std::size_t step = 0; step < order; ++step) {
        std::size_t best = size;
        for (std::size_t k = 0; k < size; ++k) {
            if (taken[k])
                continue;
            if (best == size) {
                best = k;
                continue;
            }
            const double v = row_src(self, static_cast<Eigen::Index>(k));
            const double b = row_src(self, static_cast<Eigen::Index>(best));
            if (sign == NeighborMode::Positive ? v > b : v < b)
                best = k;
        }
        taken[best] = true;
        h.neighbors.push_back(p.global_index(m, best));
    }
    return h;
}

Neighborhood neighbors_by_threshold(const DiscriminativeSet& disc, const Patching& p, std::size_t seed, double tau)
{
    if (!(tau >= 0.0 && tau <= 1.0))
        throw ConfigError("threshold must lie in [0,1]");
    const auto m = p.patch_of(seed);
    const Matrix& mat = disc.patches.at(m);
    const auto self = p.local_index(seed);
    Neighborhood h{seed, {},
                   disc.kind == DiscriminativeKind::Std ? NeighborMode::ThresholdStd : NeighborMode::ThresholdEnt};
    for (std::size_t k = 0; k < p.patch_size(m); ++k) {
        if (k == self)
            continue;
        if (mat(static_cast<Eigen::Index>(self), static_cast<Eigen::Index>(k)) >= tau)
            h.neighbors.push_back(p.global_index(m, k));
    }
    return h;
}

Neighborhood neighbors_by_euclidean(const Coords& coords, std::size_t seed, std::size_t order)
{
    const auto m = static_cast<std::size_t>(coords.rows());
    if (seed >= m)
        throw ConfigError("seed voxel out of range");
    if (order > m - 1)
        throw ConfigError("order p=" + std::to_string(order) + " exceeds M-1=" + std::to_string(m - 1));
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(m - 1);
    for (std::size_t k = 0; k < m; ++k)
        if (k != seed)
            d.emplace_back((coords.row(static_cast<Eigen::Index>(k)) - coords.row(static_cast<Eigen::Index>(seed))).squaredNorm(), k);
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(order), d.end());
    Neighborhood h{seed, {}, NeighborMode::Euclidean};
    for (std::size_t r = 0; r < order; ++r)
        h.neighbors.push_back(d[r].second);
    return h;
}

std::vector<Neighborhood> all_neighbors_by_sign(const ConnectivitySet& fc, const Patching& p, std::size_t order,
                                                NeighborMode sign)
{
    std::vector<Neighborhood> out(p.num_voxels());
    parallel_for(p.num_voxels(), [&](std::size_t j) { out[j] = neighbors_by_sign(fc, p, j, order, sign); });
    return out;
}

std::vector<Neighborhood> all_neighbors_by_threshold(const DiscriminativeSet& disc, const Patching& p, double tau)
{
    std::vector<Neighborhood> out(p.num_voxels());
    parallel_for(p.num_voxels(), [&](std::size_t j) { out[j] = neighbors_by_threshold(disc, p, j, tau); });
    return out;
}

std::vector<Neighborhood> all_neighbors_by_euclidean(const Coords& coords, std::size_t order)
{
    const auto m = static_cast<std::size_t>(coords.rows());
    std::vector<Neighborhood> out(m);
    parallel_for(m, [&](std::size_t j) { out[j] = neighbors_by_euclidean(coords, j, order); });
    return out;
}

namespace {

// Cholesky solve of the SPD system A x = b. Fails when a pivot drops below
// kMinPivot relative to the largest diagonal entry, i.e. when A is singular
// to working precision.
constexpr double kMinPivot = 1e-14;

bool cholesky_solve(Matrix a, const Vector& b, Vector& x)
{
    const auto n = a.rows();
    const double floor = kMinPivot * a.diagonal().maxCoeff();
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = a(j, j);
        for (Eigen::Index k = 0; k < j; ++k)
            d -= a(j, k) * a(j, k);
        if (!(d > floor) || !std::isfinite(d))
            return false;
        const double l = std::sqrt(d);
        a(j, j) = l;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (Eigen::Index k = 0; k < j; ++k)
                s -= a(i, k) * a(j, k);
            a(i, j) = s / l;
        }
    }
    x = b;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < i; ++k)
            x(i) -= a(i, k) * x(k);
        x(i) /= a(i, i);
    }
    for (Eigen::Index i = n - 1; i >= 0; --i) {
        for (Eigen::Index k = i + 1; k < n; ++k)
            x(i) -= a(k, i) * x(k);
        x(i) /= a(i, i);
    }
    return x.allFinite();
}

}  // namespace

ArcFit estimate_arc_weights(std::span<const double> seed_window, const Matrix& neighbor_windows,
                            std::optional<double> ridge)
{
    const auto r = neighbor_windows.rows();
    const auto p = neighbor_windows.cols();
    if (r < 1 || p < 1)
        throw ComputeError("arc weights need at least one scan and one neighbour");
    if (static_cast<Eigen::Index>(seed_window.size()) != r)
        throw ComputeError("seed and neighbour windows differ in length");
    Eigen::Map<const Vector> y(seed_window.data(), r);
    if (!y.allFinite() || !neighbor_windows.allFinite())
        throw ComputeError("non-finite values in regression window");
    if (ridge && *ridge < 0.0)
        throw ConfigError("ridge must be nonnegative");

    const Matrix gram = neighbor_windows.transpose() * neighbor_windows;
    const Vector rhs = neighbor_windows.transpose() * y;
    const double scale = gram.trace() / static_cast<double>(p);
    double lambda = ridge ? *ridge : kDefaultRelativeRidge * scale;

    Vector a;
    bool solved = false;
    if (lambda == 0.0 && r < p) {
        // Minimum-norm solution a = Xᵀ (X Xᵀ)⁻¹ y.
        const Matrix outer = neighbor_windows * neighbor_windows.transpose();
        Vector z;
        if (cholesky_solve(outer, y, z)) {
            a = neighbor_windows.transpose() * z;
            solved = true;
        }
    } else {
        Matrix g = gram;
        g.diagonal().array() += lambda;
        solved = cholesky_solve(g, rhs, a);
    }
    if (!solved) {
        lambda = std::max(lambda, 1e-10 * scale);
        if (!(lambda > 0.0))
            throw ComputeError("regression failed: all neighbour windows are zero");
        Matrix g = gram;
        g.diagonal().array() += lambda;
        if (!cholesky_solve(g, rhs, a))
            throw ComputeError("regression failed: Gram matrix not positive definite after jitter");
    }

    ArcFit fit;
    fit.residual_energy = (y - neighbor_windows * a).squaredNorm();
    fit.weights = std::move(a);
    return fit;
}

WindowSpec::Kind parse_window_kind(const std::string& name)
{
    if (name == "auto")
        return WindowSpec::Kind::Auto;
    if (name == "trial")
        return WindowSpec::Kind::Trial;
    if (name == "sliding")
        return WindowSpec::Kind::Sliding;
    throw ConfigError("unknown window kind '" + name + "' (auto | trial | sliding)");
}

Windows resolve_windows(const Dataset& d, const WindowSpec& spec)
{
    const std::size_t n = d.num_samples();
    Windows w;
    w.of_sample.resize(n);
    auto kind = spec.kind;
    if (kind == WindowSpec::Kind::Auto)
        kind = d.has_trials() ? WindowSpec::Kind::Trial : WindowSpec::Kind::Sliding;

    if (kind == WindowSpec::Kind::Trial) {
        if (!d.has_trials())
            throw DataError("trial windows requested but the dataset has no trial layout");
        std::map<std::uint32_t, std::size_t> index;
        for (std::size_t i = 0; i < n; ++i) {
            const auto t = (*d.trials())[i].trial;
            auto [it, fresh] = index.try_emplace(t, w.rows.size());
            if (fresh)
                w.rows.emplace_back();
            w.rows[it->second].push_back(i);
            w.of_sample[i] = it->second;
        }
        return w;
    }

    const std::size_t len = spec.length;
    if (len < 1)
        throw ConfigError("window length must be positive");
    if (len > n)
        throw DataError("window length " + std::to_string(len) + " exceeds the " + std::to_string(n) + " samples");
    std::map<std::size_t, std::size_t> by_start;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t half = (len - 1) / 2;
        const std::size_t start = std::min(i >= half ? i - half : 0, n - len);
        auto [it, fresh] = by_start.try_emplace(start, w.rows.size());
        if (fresh) {
            std::vector<std::size_t> rows(len);
            std::iota(rows.begin(), rows.end(), start);
            w.rows.push_back(std::move(rows));
        }
        w.of_sample[i] = it->second;
    }
    return w;
}

std::uint64_t FeatureMatrix::fingerprint() const
{
    std::string bytes;
    bytes.reserve(column_map.size() * 8);
    for (auto [s, n] : column_map) {
        bytes.append(reinterpret_cast<const char*>(&s), 4);
        bytes.append(reinterpret_cast<const char*>(&n), 4);
    }
    return io::fnv1a(bytes);
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> column_map_for(const std::vector<Neighborhood>& hoods)
{
    std::vector<const Neighborhood*> order;
    for (const auto& h : hoods)
        order.push_back(&h);
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->seed < b->seed; });
    std::vector<std::pair<std::uint32_t, std::uint32_t>> map;
    for (auto* h : order)
        for (auto k : h->neighbors)
            map.emplace_back(static_cast<std::uint32_t>(h->seed), static_cast<std::uint32_t>(k));
    return map;
}

FeatureMatrix extract_fc_lrf(const Dataset& d, const std::vector<Neighborhood>& hoods, const WindowSpec& window,
                             std::optional<double> ridge)
{
    const std::size_t m = d.num_voxels();
    std::vector<const Neighborhood*> by_voxel(m, nullptr);
    for (const auto& h : hoods) {
        if (h.seed >= m)
            throw DataError("neighbourhood seed " + std::to_string(h.seed + 1) + " outside the dataset");
        for (auto k : h.neighbors)
            if (k >= m || k == h.seed)
                throw DataError("invalid neighbour for seed " + std::to_string(h.seed + 1));
        if (by_voxel[h.seed])
            throw DataError("duplicate neighbourhood for seed " + std::to_string(h.seed + 1));
        by_voxel[h.seed] = &h;
    }

    FeatureMatrix f;
    std::vector<std::size_t> offset(m, 0);
    std::size_t k_total = 0;
    for (std::size_t j = 0; j < m; ++j) {
        offset[j] = k_total;
        if (!by_voxel[j] || by_voxel[j]->neighbors.empty()) {
            f.discarded.push_back(j);
            continue;
        }
        k_total += by_voxel[j]->neighbors.size();
    }
    if (k_total == 0)
        throw ComputeError("no features retained: every neighbourhood is empty");
    f.column_map = column_map_for(hoods);

    const Windows w = resolve_windows(d, window);
    const std::size_t n = d.num_samples();
    f.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k_total));
    const Matrix& s = d.signals();

    parallel_for(m, [&](std::size_t j) {
        const Neighborhood* h = by_voxel[j];
        if (!h || h->neighbors.empty())
            return;
        const auto p = static_cast<Eigen::Index>(h->neighbors.size());
        Matrix weights(static_cast<Eigen::Index>(w.rows.size()), p);
        for (std::size_t wi = 0; wi < w.rows.size(); ++wi) {
            const auto& rows = w.rows[wi];
            const auto r = static_cast<Eigen::Index>(rows.size());
            std::vector<double> seed(rows.size());
            Matrix x(r, p);
            for (Eigen::Index t = 0; t < r; ++t) {
                const auto row = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(t)]);
                seed[static_cast<std::size_t>(t)] = s(row, static_cast<Eigen::Index>(j));
                for (Eigen::Index k = 0; k < p; ++k)
                    x(t, k) = s(row, static_cast<Eigen::Index>(h->neighbors[static_cast<std::size_t>(k)]));
            }
            weights.row(static_cast<Eigen::Index>(wi)) = estimate_arc_weights(seed, x, ridge).weights.transpose();
        }
        const auto col = static_cast<Eigen::Index>(offset[j]);
        for (std::size_t i = 0; i < n; ++i)
            f.values.row(static_cast<Eigen::Index>(i)).segment(col, p) =
                weights.row(static_cast<Eigen::Index>(w.of_sample[i]));
    });
    return f;
}

std::vector<double> neighborhood_ssd(const Dataset& d, std::size_t seed, const Neighborhood& hood)
{
    if (hood.neighbors.empty())
        throw ComputeError("sum of squared differences needs a nonempty neighbourhood");
    if (seed >= d.num_voxels())
        throw ConfigError("seed voxel out of range");
    const Matrix& s = d.signals();
    std::vector<double> out(d.num_samples(), 0.0);
    for (std::size_t i = 0; i < d.num_samples(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        for (auto k : hood.neighbors) {
            const double diff = s(ii, static_cast<Eigen::Index>(seed)) - s(ii, static_cast<Eigen::Index>(k));
            out[i] += diff * diff;
        }
    }
    return out;
}

namespace {
constexpr char kFeatureMagic[8] = {'F', 'C', 'L', 'R', 'F', 'F', '1', '\0'};
}

std::string feature_binary(const FeatureMatrix& f)
{
    io::ByteWriter out;
    out.raw(std::string_view(kFeatureMagic, 8));
    out.u32(static_cast<std::uint32_t>(f.values.rows()));
    out.u32(static_cast<std::uint32_t>(f.values.cols()));
    for (Eigen::Index i = 0; i < f.values.rows(); ++i)
        for (Eigen::Index k = 0; k < f.values.cols(); ++k)
            out.f32(static_cast<float>(f.values(i, k)));
    for (auto [s, n] : f.column_map) {
        out.u32(s);
        out.u32(n);
    }
    return out.str();
}

FeatureMatrix parse_feature_binary(std::string_view bytes)
{
    io::ByteReader in(bytes);
    auto magic = in.raw(8);
    if (!std::equal(magic.begin(), magic.end(), kFeatureMagic))
        throw DataError("bad magic in feature file");
    const auto n = in.u32();
    const auto k = in.u32();
    if (in.remaining() != std::size_t{n} * k * 4 + std::size_t{k} * 8)
        throw DataError("feature file size does not match its header");
    FeatureMatrix f;
    f.values.resize(n, k);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t c = 0; c < k; ++c)
            f.values(i, c) = in.f32();
    f.column_map.resize(k);
    for (auto& [s, nb] : f.column_map) {
        s = in.u32();
        nb = in.u32();
    }
    return f;
}

std::string feature_csv(const FeatureMatrix& f)
{
    std::ostringstream s;
    for (std::size_t c = 0; c < f.column_map.size(); ++c)
        s << (c ? "," : "") << 'a' << (f.column_map[c].first + 1) << '_' << (f.column_map[c].second + 1);
    s << '\n';
    for (Eigen::Index i = 0; i < f.values.rows(); ++i) {
        for (Eigen::Index c = 0; c < f.values.cols(); ++c)
            s << (c ? "," : "") << io::format_double(f.values(i, c));
        s << '\n';
    }
    return s.str();
}

std::string neighborhoods_csv(const std::vector<Neighborhood>& hoods)
{
    std::ostringstream s;
    s << "seed,neighbor,rank,mode\n";
    for (const auto& h : hoods)
        for (std::size_t r = 0; r < h.neighbors.size(); ++r)
            s << (h.seed + 1) << ',' << (h.neighbors[r] + 1) << ',' << (r + 1) << ',' << neighbor_mode_name(h.mode)
              << '\n';
    return s.str();
}

}  // namespace fcmesh
