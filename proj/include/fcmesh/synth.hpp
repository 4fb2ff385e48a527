#pragma once

#include "fcmesh/dataset.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fcmesh {

/// Latent-factor generator. Within community g and class ω, voxel v reads
///   x_v(t) = δ·μ_{ω,v} + c_{ω,g}·s_{ω,v}·f_g(t) + √(1−c²)·e_v(t) + σ·ε_v(t)
/// with s = ±1, so two co-members correlate at c²·s_j·s_k / (1+σ²).
struct SynthSpec {
    std::size_t voxels = 400;
    std::size_t scans_per_class = 60;  // per phase
    int num_classes = 4;
    std::size_t communities = 8;
    double coupling = 0.8;                                // used when coupling_table is empty
    std::vector<std::vector<double>> coupling_table;      // [class][community] magnitudes
    bool random_signs = true;                             // false: all loadings positive
    /// Optional target correlation between co-members, one L×L matrix per
    /// class (L = community size, all communities equal). Replaces the factor term.
    std::vector<Matrix> correlation;
    double noise = 0.3;       // σ
    double mean_shift = 0.0;  // δ, class-specific mean pattern
    double drift = 0.0;       // linear trend amplitude over the run
    std::size_t mesh_order = 3;  // p_true
    std::size_t trial_length = 10;
    std::size_t lag = kDefaultOnsetLag;  // planted hemodynamic delay
    bool retrieval = true;               // append a retrieval phase
    double blob_spacing = 20.0;
    double blob_radius = 2.0;
    std::uint64_t seed = 1;
};

void validate(const SynthSpec& spec);

struct PlantedArc {
    int label = 0;
    std::size_t seed = 0;
    std::vector<std::size_t> neighbors;
    std::vector<double> weights;
};

struct GroundTruth {
    std::vector<std::size_t> community;   // per voxel, 0-based
    Matrix loadings;                      // Ω × M, c·s (zero when explicit correlation is used)
    std::vector<Matrix> community_correlation;  // per class, L×L or empty
    std::vector<PlantedArc> arcs;         // per class and voxel
    double noise = 0.0;

    /// Expected correlation of voxels j and k under class ω.
    double expected_correlation(int label, std::size_t j, std::size_t k) const;
};

struct SynthResult {
    Dataset dataset;
    GroundTruth truth;
};

SynthResult generate_synthetic(const SynthSpec& spec);

std::string ground_truth_json(const GroundTruth& g);

/// Reads the fields present in `json_text`; the rest keep their defaults.
SynthSpec synth_spec_from_json(const std::string& json_text);

/// Minimum-norm least squares through an SVD pseudo-inverse.
Vector oracle_least_squares(std::span<const double> seed_window, const Matrix& neighbor_windows);

/// Full Pearson matrix over all voxels by a direct double loop.
Matrix oracle_all_pairs_correlation(const Dataset& d);

}  // namespace fcmesh
