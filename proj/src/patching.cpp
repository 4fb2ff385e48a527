#include "fcmesh/patching.hpp"

#include "fcmesh/error.hpp"
#include "fcmesh/parallel.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace fcmesh {

Patching::Patching(std::vector<std::size_t> assignment, std::size_t num_patches)
    : assignment_(std::move(assignment)), local_(assignment_.size()), members_(num_patches)
{
    for (std::size_t j = 0; j < assignment_.size(); ++j) {
        if (assignment_[j] >= num_patches)
            throw ComputeError("patch id out of range for voxel " + std::to_string(j));
        local_[j] = members_[assignment_[j]].size();
        members_[assignment_[j]].push_back(j);
    }
    for (std::size_t m = 0; m < num_patches; ++m)
        if (members_[m].empty())
            throw ComputeError("patch " + std::to_string(m + 1) + " is empty");
}

std::vector<std::size_t> Patching::patch_sizes() const
{
    std::vector<std::size_t> s;
    s.reserve(members_.size());
    for (const auto& m : members_)
        s.push_back(m.size());
    return s;
}

std::uint64_t Patching::pair_count() const
{
    std::uint64_t n = 0;
    for (const auto& m : members_)
        n += static_cast<std::uint64_t>(m.size()) * (m.size() - 1) / 2;
    return n;
}

Matrix build_local_scaling_affinity(const Coords& coords, std::size_t k_scale)
{
    const auto m = static_cast<std::size_t>(coords.rows());
    if (m < 2)
        throw ComputeError("affinity needs at least 2 voxels");
    if (k_scale < 1 || k_scale >= m)
        throw ConfigError("k_scale must lie in [1, M-1], got " + std::to_string(k_scale));

    Matrix dist2(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    parallel_for(m, [&](std::size_t i) {
        for (std::size_t j = 0; j < m; ++j)
            dist2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                (coords.row(static_cast<Eigen::Index>(i)) - coords.row(static_cast<Eigen::Index>(j))).squaredNorm();
    });

    Vector sigma(static_cast<Eigen::Index>(m));
    parallel_for(m, [&](std::size_t i) {
        std::vector<double> row;
        row.reserve(m - 1);
        for (std::size_t j = 0; j < m; ++j)
            if (j != i)
                row.push_back(dist2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k_scale - 1), row.end());
        sigma(static_cast<Eigen::Index>(i)) = std::sqrt(row[k_scale - 1]);
    });
    for (std::size_t i = 0; i < m; ++i) {
        if (sigma(static_cast<Eigen::Index>(i)) == 0.0) {
            std::size_t other = i;
            for (std::size_t j = 0; j < m; ++j)
                if (j != i && dist2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) == 0.0) {
                    other = j;
                    break;
                }
            throw DataError("zero local scale: voxels " + std::to_string(i + 1) + " and " +
                            std::to_string(other + 1) + " share coordinates");
        }
    }

    Matrix a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    parallel_for(m, [&](std::size_t i) {
        const auto ii = static_cast<Eigen::Index>(i);
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(m); ++j)
            a(ii, j) = ii == j ? 1.0 : std::exp(-dist2(ii, j) / (sigma(ii) * sigma(j)));
    });
    return a;
}

namespace {

double row_dist2(const Matrix& x, Eigen::Index i, const Matrix& c, Eigen::Index k)
{
    return (x.row(i) - c.row(k)).squaredNorm();
}

struct KMeansRun {
    std::vector<std::size_t> labels;
    double inertia = 0.0;
};

KMeansRun kmeans_once(const Matrix& x, std::size_t k, std::mt19937_64& rng, std::size_t max_iter)
{
    const auto n = x.rows();
    const auto d = x.cols();
    const auto kk = static_cast<Eigen::Index>(k);
    Matrix centers(kk, d);

    // k-means++ seeding
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centers.row(0) = x.row(pick(rng));
    Vector best(n);
    for (Eigen::Index i = 0; i < n; ++i)
        best(i) = row_dist2(x, i, centers, 0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Eigen::Index c = 1; c < kk; ++c) {
        const double total = best.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            double r = unit(rng) * total;
            chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                r -= best(i);
                if (r <= 0.0 && best(i) > 0.0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = pick(rng);
        }
        centers.row(c) = x.row(chosen);
        for (Eigen::Index i = 0; i < n; ++i)
            best(i) = std::min(best(i), row_dist2(x, i, centers, c));
    }

    std::vector<std::size_t> labels(static_cast<std::size_t>(n), k);
    std::vector<std::size_t> next_labels(static_cast<std::size_t>(n));
    std::vector<double> dmin(static_cast<std::size_t>(n));
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            const auto ii = static_cast<Eigen::Index>(i);
            std::size_t arg = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (Eigen::Index c = 0; c < kk; ++c) {
                const double dd = row_dist2(x, ii, centers, c);
                if (dd < best_d) {
                    best_d = dd;
                    arg = static_cast<std::size_t>(c);
                }
            }
            dmin[i] = best_d;
            next_labels[i] = arg;
        });
        if (next_labels == labels)
            break;
        labels = next_labels;

        // An emptied cluster is re-seeded at the farthest point of a cluster
        // that can spare one.
        Matrix sums = Matrix::Zero(kk, d);
        std::vector<std::size_t> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) += x.row(i);
            ++counts[labels[static_cast<std::size_t>(i)]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0)
                continue;
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
                if (counts[labels[i]] > 1 && dmin[i] > far_d) {
                    far_d = dmin[i];
                    far = i;
                }
            }
            const auto from = labels[far];
            sums.row(static_cast<Eigen::Index>(from)) -= x.row(static_cast<Eigen::Index>(far));
            --counts[from];
            labels[far] = c;
            dmin[far] = 0.0;
            sums.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(far));
            counts[c] = 1;
        }
        for (std::size_t c = 0; c < k; ++c)
            centers.row(static_cast<Eigen::Index>(c)) =
                sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
    }

    KMeansRun run;
    run.labels = std::move(labels);
    for (Eigen::Index i = 0; i < n; ++i)
        run.inertia += row_dist2(x, i, centers, static_cast<Eigen::Index>(run.labels[static_cast<std::size_t>(i)]));
    return run;
}

// Relabels clusters in order of first appearance so equal partitions compare equal.
std::vector<std::size_t> canonical_labels(const std::vector<std::size_t>& labels, std::size_t k)
{
    std::vector<std::size_t> map(k, k);
    std::size_t next = 0;
    std::vector<std::size_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (map[labels[i]] == k)
            map[labels[i]] = next++;
        out[i] = map[labels[i]];
    }
    return out;
}

void check_count(std::size_t c, std::size_t m)
{
    if (c == 0)
        throw ConfigError("number of patches must be positive");
    if (c > m)
        throw ConfigError("number of patches C=" + std::to_string(c) + " exceeds voxel count M=" +
                          std::to_string(m));
}

}  // namespace

std::vector<std::size_t> kmeans_rows(const Matrix& points, std::size_t k, std::uint64_t seed,
                                     const KMeansOptions& options)
{
    const auto n = static_cast<std::size_t>(points.rows());
    check_count(k, n);
    if (k == 1)
        return std::vector<std::size_t>(n, 0);
    if (k == n) {
        std::vector<std::size_t> id(n);
        std::iota(id.begin(), id.end(), std::size_t{0});
        return id;
    }
    std::mt19937_64 rng(seed);
    KMeansRun best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(1, options.restarts); ++r) {
        auto run = kmeans_once(points, k, rng, std::max<std::size_t>(1, options.max_iterations));
        if (run.inertia < best.inertia)
            best = std::move(run);
    }
    return canonical_labels(best.labels, k);
}

Patching spectral_partition(const Matrix& affinity, std::size_t num_patches, std::uint64_t seed,
                            const KMeansOptions& kmeans)
{
    const auto m = static_cast<std::size_t>(affinity.rows());
    if (affinity.cols() != affinity.rows())
        throw ComputeError("affinity must be square");
    check_count(num_patches, m);
    if (num_patches == 1)
        return Patching(std::vector<std::size_t>(m, 0), 1);
    if (!affinity.isApprox(affinity.transpose(), 1e-12) || (affinity.array() < 0.0).any())
        throw DataError("affinity must be symmetric and nonnegative");

    Vector deg = affinity.rowwise().sum();
    if ((deg.array() <= 0.0).any())
        throw ComputeError("affinity has an isolated voxel");
    Vector inv_sqrt = deg.array().rsqrt();
    Matrix lap = -(inv_sqrt.asDiagonal() * affinity * inv_sqrt.asDiagonal());
    lap.diagonal().array() += 1.0;
    lap = 0.5 * (lap + lap.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Matrix> eig(lap);
    if (eig.info() != Eigen::Success)
        throw ComputeError("eigendecomposition of the graph Laplacian failed");
    Matrix emb = eig.eigenvectors().leftCols(static_cast<Eigen::Index>(num_patches));
    for (Eigen::Index i = 0; i < emb.rows(); ++i) {
        const double norm = emb.row(i).norm();
        if (norm > 0.0)
            emb.row(i) /= norm;
    }
    return Patching(kmeans_rows(emb, num_patches, seed, kmeans), num_patches);
}

namespace {

// Recursive median split along the widest axis until every tile fits the limit.
void tile_voxels(const Coords& coords, std::vector<std::size_t> idx, std::size_t limit,
                 std::vector<std::vector<std::size_t>>& tiles)
{
    if (idx.size() <= limit) {
        tiles.push_back(std::move(idx));
        return;
    }
    int axis = 0;
    double widest = -1.0;
    for (int a = 0; a < 3; ++a) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (auto j : idx) {
            lo = std::min(lo, coords(static_cast<Eigen::Index>(j), a));
            hi = std::max(hi, coords(static_cast<Eigen::Index>(j), a));
        }
        if (hi - lo > widest) {
            widest = hi - lo;
            axis = a;
        }
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t u, std::size_t v) {
        return coords(static_cast<Eigen::Index>(u), axis) < coords(static_cast<Eigen::Index>(v), axis);
    });
    const auto half = static_cast<std::ptrdiff_t>(idx.size() / 2);
    std::vector<std::size_t> left(idx.begin(), idx.begin() + half);
    std::vector<std::size_t> right(idx.begin() + half, idx.end());
    std::sort(left.begin(), left.end());
    std::sort(right.begin(), right.end());
    tile_voxels(coords, std::move(left), limit, tiles);
    tile_voxels(coords, std::move(right), limit, tiles);
}

}  // namespace

Patching spectral_partition_coords(const Coords& coords, std::size_t num_patches, std::size_t k_scale,
                                   std::uint64_t seed, const KMeansOptions& kmeans, std::size_t dense_limit)
{
    const auto m = static_cast<std::size_t>(coords.rows());
    check_count(num_patches, m);
    if (num_patches == 1)
        return Patching(std::vector<std::size_t>(m, 0), 1);
    if (m <= dense_limit)
        return spectral_partition(build_local_scaling_affinity(coords, k_scale), num_patches, seed, kmeans);

    std::vector<std::size_t> all(m);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::vector<std::size_t>> tiles;
    tile_voxels(coords, std::move(all), dense_limit, tiles);
    if (num_patches < tiles.size())
        throw ConfigError("C=" + std::to_string(num_patches) + " is smaller than the " +
                          std::to_string(tiles.size()) + " spatial tiles needed for M=" + std::to_string(m));

    // Largest-remainder apportionment, at least one patch per tile.
    std::vector<std::size_t> quota(tiles.size(), 1);
    std::size_t left = num_patches - tiles.size();
    std::vector<std::pair<double, std::size_t>> rem;
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        const double share = static_cast<double>(left) * static_cast<double>(tiles[t].size()) / static_cast<double>(m);
        const auto whole = static_cast<std::size_t>(share);
        quota[t] += whole;
        rem.emplace_back(share - static_cast<double>(whole), t);
    }
    std::size_t assigned = std::accumulate(quota.begin(), quota.end(), std::size_t{0});
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < num_patches; ++r, ++assigned)
        ++quota[rem[r % rem.size()].second];

    std::vector<std::size_t> assignment(m);
    std::size_t offset = 0;
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        Coords sub(static_cast<Eigen::Index>(tiles[t].size()), 3);
        for (std::size_t r = 0; r < tiles[t].size(); ++r)
            sub.row(static_cast<Eigen::Index>(r)) = coords.row(static_cast<Eigen::Index>(tiles[t][r]));
        const std::size_t q = std::min(quota[t], tiles[t].size());
        const std::size_t ks = std::min(k_scale, tiles[t].size() - 1);
        Patching local = q == 1 ? Patching(std::vector<std::size_t>(tiles[t].size(), 0), 1)
                                : spectral_partition(build_local_scaling_affinity(sub, ks), q, seed + t, kmeans);
        for (std::size_t r = 0; r < tiles[t].size(); ++r)
            assignment[tiles[t][r]] = offset + local.patch_of(r);
        offset += q;
    }
    return Patching(std::move(assignment), offset);
}

Patching kmeans_partition(const Coords& coords, std::size_t num_patches, std::uint64_t seed,
                          const KMeansOptions& kmeans)
{
    const Matrix pts = coords;
    return Patching(kmeans_rows(pts, num_patches, seed, kmeans), num_patches);
}

double mean_within_patch_distance(const Patching& p, const Coords& coords)
{
    double total = 0.0;
    std::uint64_t pairs = 0;
    for (std::size_t m = 0; m < p.num_patches(); ++m) {
        const auto& mem = p.members(m);
        for (std::size_t a = 0; a < mem.size(); ++a)
            for (std::size_t b = a + 1; b < mem.size(); ++b) {
                total += (coords.row(static_cast<Eigen::Index>(mem[a])) - coords.row(static_cast<Eigen::Index>(mem[b]))).norm();
                ++pairs;
            }
    }
    return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b)
{
    if (a.size() != b.size())
        throw ComputeError("label vectors differ in length");
    const double n = static_cast<double>(a.size());
    std::map<std::pair<std::size_t, std::size_t>, double> table;
    std::map<std::size_t, double> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        table[{a[i], b[i]}] += 1.0;
        ra[a[i]] += 1.0;
        rb[b[i]] += 1.0;
    }
    auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
    double index = 0.0, sa = 0.0, sb = 0.0;
    for (auto& [k, v] : table)
        index += c2(v);
    for (auto& [k, v] : ra)
        sa += c2(v);
    for (auto& [k, v] : rb)
        sb += c2(v);
    const double expected = sa * sb / c2(n);
    const double max_index = 0.5 * (sa + sb);
    if (max_index == expected)
        return 1.0;
    return (index - expected) / (max_index - expected);
}

std::string patching_csv(const Patching& p)
{
    std::ostringstream s;
    s << "voxel,patch\n";
    for (std::size_t j = 0; j < p.num_voxels(); ++j)
        s << (j + 1) << ',' << (p.patch_of(j) + 1) << '\n';
    return s.str();
}

std::string patching_summary_json(const Patching& p, const Coords& coords)
{
    nlohmann::json j;
    j["C"] = p.num_patches();
    j["M"] = p.num_voxels();
    j["sizes"] = p.patch_sizes();
    j["pair_count"] = p.pair_count();
    j["mean_within_patch_distance"] = mean_within_patch_distance(p, coords);
    return j.dump(2) + "\n";
}

}  // namespace fcmesh
