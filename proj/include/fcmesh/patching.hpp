#pragma once

#include "fcmesh/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fcmesh {

/// Disjoint assignment of voxels to local patches.
///
/// Patch ids are 0-based internally (written 1-based in patching.csv). Within
/// a patch, voxels are listed in ascending global index; the position of a
/// voxel in that list is its local index.
class Patching {
public:
    Patching() = default;
    /// Validates that every patch id in [0, num_patches) is used.
    Patching(std::vector<std::size_t> assignment, std::size_t num_patches);

    std::size_t num_patches() const { return members_.size(); }
    std::size_t num_voxels() const { return assignment_.size(); }

    std::size_t patch_of(std::size_t voxel) const { return assignment_.at(voxel); }
    std::size_t local_index(std::size_t voxel) const { return local_.at(voxel); }
    std::size_t global_index(std::size_t patch, std::size_t local) const { return members_.at(patch).at(local); }
    const std::vector<std::size_t>& members(std::size_t patch) const { return members_.at(patch); }
    std::size_t patch_size(std::size_t patch) const { return members_.at(patch).size(); }
    std::vector<std::size_t> patch_sizes() const;
    const std::vector<std::size_t>& assignment() const { return assignment_; }

    /// Σ π_m(π_m−1)/2: number of within-patch voxel pairs.
    std::uint64_t pair_count() const;

    friend bool operator==(const Patching& a, const Patching& b) { return a.assignment_ == b.assignment_; }

private:
    std::vector<std::size_t> assignment_;
    std::vector<std::size_t> local_;
    std::vector<std::vector<std::size_t>> members_;
};

/// affinity(i,j) = exp(−‖s_i − s_j‖² / (σ_i σ_j)), σ_i = distance to the
/// k_scale-th nearest other voxel.
Matrix build_local_scaling_affinity(const Coords& coords, std::size_t k_scale);

inline constexpr std::size_t kDefaultKScale = 7;
inline constexpr std::size_t kDenseSpectralLimit = 4096;

struct KMeansOptions {
    std::size_t restarts = 10;
    std::size_t max_iterations = 100;
};

/// Normalised-Laplacian spectral clustering of a precomputed affinity.
Patching spectral_partition(const Matrix& affinity, std::size_t num_patches, std::uint64_t seed,
                            const KMeansOptions& kmeans = {});

/// Spectral patching straight from coordinates. Above kDenseSpectralLimit
/// voxels the volume is split into spatial tiles that are clustered
/// independently, with patches allotted in proportion to tile size.
Patching spectral_partition_coords(const Coords& coords, std::size_t num_patches, std::size_t k_scale,
                                   std::uint64_t seed, const KMeansOptions& kmeans = {},
                                   std::size_t dense_limit = kDenseSpectralLimit);

/// Squared-Euclidean k-means on the coordinates themselves.
Patching kmeans_partition(const Coords& coords, std::size_t num_patches, std::uint64_t seed,
                          const KMeansOptions& kmeans = {});

/// Lloyd k-means with k-means++ seeding over the rows of `points`; returns
/// 0-based cluster ids with every cluster nonempty.
std::vector<std::size_t> kmeans_rows(const Matrix& points, std::size_t k, std::uint64_t seed,
                                     const KMeansOptions& options);

/// Mean pairwise Euclidean distance over all within-patch voxel pairs.
double mean_within_patch_distance(const Patching& p, const Coords& coords);

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

std::string patching_csv(const Patching& p);
/// JSON summary: C, sizes and the compactness statistic.
std::string patching_summary_json(const Patching& p, const Coords& coords);

}  // namespace fcmesh
