#pragma once

#include "fcmesh/dataset.hpp"
#include "fcmesh/patching.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fcmesh {

enum class Measure { ZeroOrder, Peak, Scan };

Measure parse_measure(const std::string& name);
std::string measure_name(Measure m);

struct MeasureParams {
    Measure measure = Measure::ZeroOrder;
    std::size_t scan_index = 0;  // within-trial position, scan measure only
};

/// Pearson coefficient with population moments. Throws DataError on zero variance.
double zero_order_correlation(std::span<const double> x, std::span<const double> y);

/// Per-trial maximum of `x` (earliest scan wins ties), trials in ascending id order.
std::vector<double> trial_peaks(std::span<const double> x, const std::vector<TrialPos>& layout);
/// Per-trial value at within-trial position `scan_index`, trials in ascending id order.
std::vector<double> trial_scan_values(std::span<const double> x, const std::vector<TrialPos>& layout,
                                      std::size_t scan_index);

double peak_correlation(std::span<const double> x, std::span<const double> y,
                        const std::optional<std::vector<TrialPos>>& layout);
double scan_correlation(std::span<const double> x, std::span<const double> y, std::size_t scan_index,
                        const std::optional<std::vector<TrialPos>>& layout);

/// Per-patch within-cluster connectivity, FC_m indexed by local voxel index.
struct ConnectivitySet {
    std::vector<Matrix> patches;
    Measure measure = Measure::ZeroOrder;
    std::optional<int> class_label;
    /// Number of off-diagonal coefficients evaluated while building the set.
    std::uint64_t pair_evaluations = 0;
};

ConnectivitySet within_cluster_fc(const Dataset& d, const Patching& p, const MeasureParams& params);

/// One ConnectivitySet per class 1..Ω, each built from that class's rows.
std::vector<ConnectivitySet> per_class_fc(const Dataset& d, const Patching& p, const MeasureParams& params);

enum class DiscriminativeKind { Std, Ent };

struct DiscriminativeSet {
    std::vector<Matrix> patches;
    DiscriminativeKind kind = DiscriminativeKind::Std;
    std::size_t num_classes = 0;
    std::size_t bins = 0;  // entropy only
};

inline constexpr std::size_t kDefaultEntropyBins = 8;

/// Sample standard deviation (divisor Ω−1) of each pair's per-class coefficients.
DiscriminativeSet discriminative_std(const std::vector<ConnectivitySet>& fc_by_class);

/// Histogram entropy of each pair's Ω coefficients over `bins` equal-width
/// bins of [−1, 1], in bits, divided by log2(min(Ω, bins)).
DiscriminativeSet discriminative_entropy(const std::vector<ConnectivitySet>& fc_by_class,
                                         std::size_t bins = kDefaultEntropyBins);

/// Scalar forms used by the matrix builders.
double sample_std(std::span<const double> values);
double normalized_entropy(std::span<const double> values, std::size_t bins);

std::string matrix_csv(const Matrix& m);

}  // namespace fcmesh
