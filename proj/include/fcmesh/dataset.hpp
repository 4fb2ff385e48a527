#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace fcmesh {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 3>;

enum class Phase : std::uint8_t { Encoding = 0, Retrieval = 1 };

struct TrialPos {
    std::uint32_t trial = 0;
    std::uint32_t scan = 0;  // position within the trial

    friend bool operator==(const TrialPos&, const TrialPos&) = default;
};

/// Sample-by-voxel signal matrix with voxel coordinates and per-scan metadata.
///
/// Rows are scans, columns are voxels. Labels are class ids in 1..num_classes.
/// Construct through make() or the loaders; both validate every invariant.
class Dataset {
public:
    Dataset() = default;

    static Dataset make(Matrix signals, Coords coords, std::vector<int> labels,
                        std::vector<Phase> phase, std::optional<std::vector<TrialPos>> trials,
                        int num_classes);

    const Matrix& signals() const { return signals_; }
    const Coords& coords() const { return coords_; }
    const std::vector<int>& labels() const { return labels_; }
    const std::vector<Phase>& phase() const { return phase_; }
    const std::optional<std::vector<TrialPos>>& trials() const { return trials_; }
    bool has_trials() const { return trials_.has_value(); }

    std::size_t num_samples() const { return static_cast<std::size_t>(signals_.rows()); }
    std::size_t num_voxels() const { return static_cast<std::size_t>(signals_.cols()); }
    int num_classes() const { return num_classes_; }

    std::set<int> class_set() const;
    std::vector<std::size_t> columns_with_zero_variance() const;

    /// Rows in the given order; voxels, coordinates and Ω are kept.
    Dataset subset_rows(const std::vector<std::size_t>& rows) const;
    Dataset subset_columns(const std::vector<std::size_t>& cols) const;
    std::vector<std::size_t> rows_with_label(int label) const;

private:
    Matrix signals_;
    Coords coords_;
    std::vector<int> labels_;
    std::vector<Phase> phase_;
    std::optional<std::vector<TrialPos>> trials_;
    int num_classes_ = 0;
};

enum class DatasetFormat { Csv, Binary };

DatasetFormat parse_format(const std::string& name);

struct LoadOptions {
    /// Drop constant voxel columns instead of rejecting the file.
    bool allow_constant = false;
};

/// CSV: `path` is the signal table; coordinates are read from `coords.csv`
/// in the same directory unless `coords_path` is given.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     const LoadOptions& options = {},
                     const std::optional<std::filesystem::path>& coords_path = std::nullopt);

void save_binary(const Dataset& d, const std::filesystem::path& path);
void save_csv(const Dataset& d, const std::filesystem::path& path,
              const std::optional<std::filesystem::path>& coords_path = std::nullopt);

/// Default onset lag of the ingestion pipeline, in scans.
inline constexpr std::size_t kDefaultOnsetLag = 3;

/// Attaches the label metadata of row i to signal row i + lag; the last `lag`
/// label rows and the first `lag` signal rows are dropped.
Dataset shift_onsets(const Dataset& d, std::size_t lag);

/// Removes each voxel's OLS linear trend in scan index.
Dataset detrend_linear(const Dataset& d);

struct SplitSpec {
    enum class Mode { ByPhase, ByFraction };
    Mode mode = Mode::ByPhase;
    double fraction = 0.5;  // share of rows placed in train (by-fraction only)
    std::uint64_t seed = 0;
};

struct Split {
    Dataset train;
    Dataset test;
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
};

Split split_train_test(const Dataset& d, const SplitSpec& spec);

}  // namespace fcmesh
