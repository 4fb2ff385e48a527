#pragma once

#include "fcmesh/classify.hpp"
#include "fcmesh/connectivity.hpp"
#include "fcmesh/dataset.hpp"
#include "fcmesh/mesh.hpp"
#include "fcmesh/patching.hpp"
#include "fcmesh/synth.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fcmesh {

inline constexpr const char* kVersion = "0.1.0";

enum class Partitioner { Spectral, KMeans };

struct PipelineConfig {
    // source: a dataset file, or an in-memory synthetic dataset
    std::optional<std::filesystem::path> dataset;
    DatasetFormat format = DatasetFormat::Csv;
    std::optional<std::filesystem::path> coords;
    bool allow_constant = false;
    std::optional<SynthSpec> synth;

    std::size_t onset_lag = kDefaultOnsetLag;
    bool detrend = true;
    SplitSpec split;

    Partitioner partitioner = Partitioner::Spectral;
    std::size_t num_patches = 32;
    std::size_t k_scale = kDefaultKScale;
    std::uint64_t patch_seed = 0;

    MeasureParams measure;
    NeighborMode mode = NeighborMode::ThresholdStd;
    std::optional<std::size_t> order;  // p
    std::vector<double> taus;          // one value, or a grid chosen by CV
    std::size_t bins = kDefaultEntropyBins;
    WindowSpec window;
    std::optional<double> ridge;

    bool knn = true;
    bool svm = true;
    std::vector<std::size_t> k_grid{1, 3, 5, 7, 9};
    Distance metric = Distance::Euclidean;
    std::vector<double> c_grid{0.01, 0.1, 1.0};
    double svm_tol = 1e-2;
    std::size_t svm_max_iter = 1000;
    std::size_t folds = 5;
    std::uint64_t cv_seed = 0;
    bool baseline = true;  // raw-intensity classifiers on the same split

    std::filesystem::path output;  // empty: nothing written
    bool write_matrices = true;

    nlohmann::json source;  // the document this config was parsed from
    std::uint64_t hash() const;
};

/// Validates every field; throws ConfigError before any compute.
PipelineConfig parse_pipeline_config(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Expands {lo, hi, step} to round((hi−lo)/step)+1 points.
std::vector<double> expand_range(double lo, double hi, double step);

struct ClassifierOutcome {
    std::string name;  // "knn" or "svm"
    ParamPoint best;
    double cv_accuracy = 0.0;  // percent
    std::optional<double> tau;
    std::vector<std::pair<double, double>> tau_scores;  // (τ, best CV accuracy %)
    std::size_t num_features = 0;
    bool converged = true;
    Metrics test;
    std::vector<int> predictions;
};

struct PipelineResult {
    Patching patching;
    std::vector<ClassifierOutcome> fc_lrf;
    std::vector<ClassifierOutcome> baseline;
    std::vector<std::filesystem::path> artifacts;
};

/// Upstream results shared between runs whose parameters agree.
struct PipelineCache;
std::shared_ptr<PipelineCache> make_cache();

PipelineResult run_pipeline(const PipelineConfig& cfg, PipelineCache* cache = nullptr);

struct SweepGrid {
    std::vector<std::size_t> num_patches;
    std::vector<double> taus;
    std::vector<std::size_t> orders;
    std::vector<Measure> measures;

    bool empty() const { return num_patches.empty() && taus.empty() && orders.empty() && measures.empty(); }
};

SweepGrid parse_sweep_grid(const nlohmann::json& j);

struct SweepPoint {
    std::size_t num_patches = 0;
    std::optional<double> tau;
    std::optional<std::size_t> order;
    Measure measure = Measure::ZeroOrder;
    std::optional<PipelineResult> result;
    std::string error;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    std::string table_csv;
};

/// One pipeline run per grid point; failures are recorded and the sweep continues.
SweepResult run_sweep(const PipelineConfig& base, const SweepGrid& grid);

/// One patch of FC ("fc", "fc:<class>"), Std or Ent as CSV; patch is 1-based.
std::string inspect_patch(const PipelineConfig& cfg, std::size_t patch, const std::string& what);

/// Per-scan squared difference between a voxel (1-based) and its training
/// neighbourhood, over both splits. Threshold modes use the first τ.
std::string ssd_series(const PipelineConfig& cfg, std::size_t voxel);

}  // namespace fcmesh
