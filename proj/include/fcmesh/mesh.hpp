#pragma once

#include "fcmesh/connectivity.hpp"
#include "fcmesh/dataset.hpp"
#include "fcmesh/patching.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fcmesh {

enum class NeighborMode { Positive, Negative, ThresholdStd, ThresholdEnt, Euclidean };

/// Accepts P, N, S, E, euclidean (and the long names).
NeighborMode parse_neighbor_mode(const std::string& name);
std::string neighbor_mode_name(NeighborMode m);
bool uses_threshold(NeighborMode m);

struct Neighborhood {
    std::size_t seed = 0;
    std::vector<std::size_t> neighbors;  // global voxel ids, in selection order
    NeighborMode mode = NeighborMode::Positive;

    std::size_t order() const { return neighbors.size(); }
};

/// Greedy functional neighbourhood: repeatedly takes the patch co-member with
/// the largest (Positive) or smallest (Negative) coefficient in the seed's
/// FC_m row. Ties go to the lower local index.
Neighborhood neighbors_by_sign(const ConnectivitySet& fc, const Patching& p, std::size_t seed, std::size_t order,
                               NeighborMode sign);

/// Every patch co-member k with Disc_m(j,k) ≥ τ, in local index order.
Neighborhood neighbors_by_threshold(const DiscriminativeSet& disc, const Patching& p, std::size_t seed, double tau);

/// The `order` spatially closest voxels over the whole volume; ties go to the lower index.
Neighborhood neighbors_by_euclidean(const Coords& coords, std::size_t seed, std::size_t order);

std::vector<Neighborhood> all_neighbors_by_sign(const ConnectivitySet& fc, const Patching& p, std::size_t order,
                                                NeighborMode sign);
std::vector<Neighborhood> all_neighbors_by_threshold(const DiscriminativeSet& disc, const Patching& p, double tau);
std::vector<Neighborhood> all_neighbors_by_euclidean(const Coords& coords, std::size_t order);

struct ArcFit {
    Vector weights;
    double residual_energy = 0.0;
};

/// Regression of the seed window on the neighbour windows (one column each):
/// minimises ‖seed − X a‖² + λ‖a‖² through the normal equations. With
/// λ unset the ridge defaults to 1e-8·trace(XᵀX)/p. With λ = 0 and R < p the
/// minimum-norm solution is returned.
ArcFit estimate_arc_weights(std::span<const double> seed_window, const Matrix& neighbor_windows,
                            std::optional<double> ridge);

inline constexpr double kDefaultRelativeRidge = 1e-8;

struct WindowSpec {
    enum class Kind { Auto, Trial, Sliding };
    Kind kind = Kind::Auto;  // Trial when a layout exists, Sliding otherwise
    std::size_t length = 5;  // sliding window length R
};

WindowSpec::Kind parse_window_kind(const std::string& name);

struct Windows {
    std::vector<std::vector<std::size_t>> rows;  // distinct windows
    std::vector<std::size_t> of_sample;          // window id per sample
};

/// Resolves every sample of `d` to the rows that form its regression window.
Windows resolve_windows(const Dataset& d, const WindowSpec& spec);

struct FeatureMatrix {
    Matrix values;                                               // N × K
    std::vector<std::pair<std::uint32_t, std::uint32_t>> column_map;  // (seed, neighbour), 0-based
    std::vector<std::size_t> discarded;                          // voxels with empty neighbourhoods

    std::size_t num_features() const { return column_map.size(); }
    std::uint64_t fingerprint() const;
};

/// Column layout implied by a neighbourhood system: voxels ascending, then
/// neighbours in selection order.
std::vector<std::pair<std::uint32_t, std::uint32_t>> column_map_for(const std::vector<Neighborhood>& hoods);

FeatureMatrix extract_fc_lrf(const Dataset& d, const std::vector<Neighborhood>& hoods, const WindowSpec& window,
                             std::optional<double> ridge);

/// Per-scan Σ_k (υ_seed − υ_k)² over the neighbourhood.
std::vector<double> neighborhood_ssd(const Dataset& d, std::size_t seed, const Neighborhood& hood);

std::string feature_binary(const FeatureMatrix& f);
FeatureMatrix parse_feature_binary(std::string_view bytes);
std::string feature_csv(const FeatureMatrix& f);
std::string neighborhoods_csv(const std::vector<Neighborhood>& hoods);

}  // namespace fcmesh
