#pragma once

#include "fcmesh/dataset.hpp"
#include "fcmesh/mesh.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace fcmesh {

enum class Distance { Euclidean, Cosine };
Distance parse_distance(const std::string& name);
std::string distance_name(Distance d);

struct SvmParams {
    double c_reg = 1.0;
    double tol = 1e-3;  // projected-gradient gap
    std::size_t max_iter = 1000;
};

struct TrainedModel {
    enum class Kind { Knn, Svm };
    Kind kind = Kind::Knn;
    std::vector<int> classes;  // ascending class ids seen in training
    std::uint64_t fingerprint = 0;

    // k-nn
    std::shared_ptr<const Matrix> rows;
    std::vector<int> labels;
    std::size_t k = 1;
    Distance metric = Distance::Euclidean;

    // linear svm, one row of `weights` per entry of `classes`
    Matrix weights;
    Vector bias;
    double bias_feature = 1.0;
    SvmParams svm;
    bool converged = true;
    std::size_t iterations = 0;
};

TrainedModel train_knn(std::shared_ptr<const Matrix> rows, std::vector<int> labels, std::size_t k,
                       Distance metric = Distance::Euclidean, std::uint64_t fingerprint = 0);

/// One-vs-rest L1-loss linear SVMs solved by dual coordinate descent. The
/// bias is an extra feature whose value is the mean training row norm, so
/// rescaling the features together with C_reg leaves predictions unchanged.
TrainedModel train_linear_svm(const Matrix& rows, const std::vector<int>& labels, const SvmParams& params,
                              std::uint64_t fingerprint = 0);

/// Per-class decision values, one column per entry of model.classes.
Matrix decision_values(const TrainedModel& model, const Matrix& rows);

std::vector<int> predict(const TrainedModel& model, const Matrix& rows);
/// Checks that the feature layout matches the one the model was trained on.
std::vector<int> predict(const TrainedModel& model, const FeatureMatrix& features);

/// Squared Euclidean or cosine distances between the rows of a and b.
Matrix pairwise_distances(const Matrix& a, const Matrix& b, Distance metric);

struct ParamPoint {
    TrainedModel::Kind kind = TrainedModel::Kind::Knn;
    std::size_t k = 1;
    Distance metric = Distance::Euclidean;
    SvmParams svm;

    std::string describe() const;
};

struct CvResult {
    ParamPoint best;
    double best_mean = 0.0;
    std::vector<std::vector<double>> fold_scores;  // [grid point][fold], accuracy in [0,1]
    std::vector<double> mean_scores;
};

/// Stratified folds assigned from a seeded per-class shuffle.
std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t folds, std::uint64_t seed);

/// Highest mean fold accuracy wins; ties go to the smaller k or C_reg.
CvResult cross_validate(const Matrix& rows, const std::vector<int>& labels, const std::vector<ParamPoint>& grid,
                        std::size_t folds, std::uint64_t seed);

TrainedModel train(const ParamPoint& point, const Matrix& rows, const std::vector<int>& labels,
                   std::uint64_t fingerprint = 0);

struct Metrics {
    int num_classes = 0;
    Eigen::MatrixXi confusion;  // truth row, prediction column; class ω at index ω−1
    std::vector<double> recall;     // percent
    std::vector<double> precision;  // percent, 0 when undefined
    std::vector<bool> precision_undefined;
    std::vector<bool> recall_undefined;
    double macro_recall = 0.0;
    double macro_precision = 0.0;
    double accuracy = 0.0;  // percent
};

Metrics evaluate(const std::vector<int>& predictions, const std::vector<int>& truth, int num_classes);

std::string metrics_json(const Metrics& m);
/// Rows are classes 1..Ω followed by AVG; one column per configuration.
std::string metrics_table_csv(const std::vector<std::string>& configurations, const std::vector<Metrics>& metrics);

}  // namespace fcmesh
