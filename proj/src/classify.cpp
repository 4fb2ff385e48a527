#include "fcmesh/classify.hpp"

#include "fcmesh/error.hpp"
#include "fcmesh/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace fcmesh {

Distance parse_distance(const std::string& name)
{
    if (name == "euclidean")
        return Distance::Euclidean;
    if (name == "cosine")
        return Distance::Cosine;
    throw ConfigError("unknown distance '" + name + "' (euclidean | cosine)");
}

std::string distance_name(Distance d) { return d == Distance::Euclidean ? "euclidean" : "cosine"; }

namespace {

std::vector<int> sorted_classes(const std::vector<int>& labels)
{
    std::set<int> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
}

int vote(const Matrix& dist, Eigen::Index row, const std::vector<int>& labels, std::size_t k,
         std::vector<std::pair<double, int>>& scratch)
{
    scratch.clear();
    for (Eigen::Index j = 0; j < dist.cols(); ++j)
        scratch.emplace_back(dist(row, j), labels[static_cast<std::size_t>(j)]);
    std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end());
    std::map<int, std::size_t> counts;
    for (std::size_t r = 0; r < k; ++r)
        ++counts[scratch[r].second];
    int best = counts.begin()->first;
    std::size_t best_n = 0;
    for (auto [label, n] : counts)
        if (n > best_n) {
            best = label;
            best_n = n;
        }
    return best;
}

}  // namespace

Matrix pairwise_distances(const Matrix& a, const Matrix& b, Distance metric)
{
    if (a.cols() != b.cols())
        throw DataError("feature dimension mismatch: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
    Matrix cross = a * b.transpose();
    const Vector na = a.rowwise().squaredNorm();
    const Vector nb = b.rowwise().squaredNorm();
    if (metric == Distance::Euclidean) {
        Matrix d = (-2.0 * cross).colwise() + na;
        d.rowwise() += nb.transpose();
        return d.cwiseMax(0.0);
    }
    for (Eigen::Index i = 0; i < cross.rows(); ++i)
        for (Eigen::Index j = 0; j < cross.cols(); ++j) {
            const double denom = std::sqrt(na(i) * nb(j));
            cross(i, j) = 1.0 - (denom > 0.0 ? cross(i, j) / denom : 0.0);
        }
    return cross;
}

TrainedModel train_knn(std::shared_ptr<const Matrix> rows, std::vector<int> labels, std::size_t k, Distance metric,
                       std::uint64_t fingerprint)
{
    if (!rows)
        throw ComputeError("k-nn needs training rows");
    if (static_cast<std::size_t>(rows->rows()) != labels.size())
        throw DataError("labels do not align with feature rows");
    if (k < 1 || k > labels.size())
        throw ConfigError("k=" + std::to_string(k) + " must lie in [1, " + std::to_string(labels.size()) + "]");
    TrainedModel m;
    m.kind = TrainedModel::Kind::Knn;
    m.classes = sorted_classes(labels);
    m.rows = std::move(rows);
    m.labels = std::move(labels);
    m.k = k;
    m.metric = metric;
    m.fingerprint = fingerprint;
    return m;
}

TrainedModel train_linear_svm(const Matrix& rows, const std::vector<int>& labels, const SvmParams& params,
                              std::uint64_t fingerprint)
{
    if (static_cast<std::size_t>(rows.rows()) != labels.size())
        throw DataError("labels do not align with feature rows");
    if (!(params.c_reg > 0.0))
        throw ConfigError("C_reg must be positive");
    TrainedModel m;
    m.kind = TrainedModel::Kind::Svm;
    m.classes = sorted_classes(labels);
    if (m.classes.size() < 2)
        throw DataError("linear SVM needs at least 2 classes");
    m.fingerprint = fingerprint;
    m.svm = params;

    const auto n = rows.rows();
    const auto dim = rows.cols();
    const Vector norms = rows.rowwise().norm();
    m.bias_feature = n > 0 && norms.mean() > 0.0 ? norms.mean() : 1.0;
    const double bf = m.bias_feature;
    const Vector qdiag = rows.rowwise().squaredNorm().array() + bf * bf;

    const std::size_t nc = m.classes.size();
    m.weights.resize(static_cast<Eigen::Index>(nc), dim);
    m.bias.resize(static_cast<Eigen::Index>(nc));
    std::vector<std::size_t> iters(nc, 0);
    std::vector<char> conv(nc, 1);

    parallel_for(nc, [&](std::size_t c) {
        const int cls = m.classes[c];
        Vector w = Vector::Zero(dim);
        double wb = 0.0;  // weight on the bias feature
        Vector alpha = Vector::Zero(n);
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::mt19937_64 rng(0x5eed + c);
        const double upper = params.c_reg;
        std::size_t it = 0;
        bool done = false;
        for (; it < params.max_iter; ++it) {
            std::shuffle(order.begin(), order.end(), rng);
            double pg_max = -std::numeric_limits<double>::infinity();
            double pg_min = std::numeric_limits<double>::infinity();
            for (auto i : order) {
                const double y = labels[static_cast<std::size_t>(i)] == cls ? 1.0 : -1.0;
                const double g = y * (rows.row(i).dot(w) + wb * bf) - 1.0;
                double pg = 0.0;
                if (alpha(i) == 0.0)
                    pg = std::min(g, 0.0);
                else if (alpha(i) == upper)
                    pg = std::max(g, 0.0);
                else
                    pg = g;
                pg_max = std::max(pg_max, pg);
                pg_min = std::min(pg_min, pg);
                if (std::abs(pg) > 1e-12 && qdiag(i) > 0.0) {
                    const double old = alpha(i);
                    alpha(i) = std::clamp(old - g / qdiag(i), 0.0, upper);
                    const double step = (alpha(i) - old) * y;
                    w += step * rows.row(i).transpose();
                    wb += step * bf;
                }
            }
            if (pg_max - pg_min <= params.tol) {
                done = true;
                ++it;
                break;
            }
        }
        m.weights.row(static_cast<Eigen::Index>(c)) = w.transpose();
        m.bias(static_cast<Eigen::Index>(c)) = wb * bf;
        iters[c] = it;
        conv[c] = done ? 1 : 0;
    });
    m.iterations = *std::max_element(iters.begin(), iters.end());
    m.converged = std::all_of(conv.begin(), conv.end(), [](char v) { return v != 0; });
    if (!m.converged)
        std::cerr << "warning: linear SVM did not reach tol=" << params.tol << " within " << params.max_iter
                  << " iterations; returning the last iterate\n";
    return m;
}

Matrix decision_values(const TrainedModel& model, const Matrix& rows)
{
    if (model.kind != TrainedModel::Kind::Svm)
        throw ComputeError("decision values are defined for SVM models only");
    if (rows.cols() != model.weights.cols())
        throw DataError("feature dimension mismatch at prediction time");
    Matrix v = rows * model.weights.transpose();
    v.rowwise() += model.bias.transpose();
    return v;
}

std::vector<int> predict(const TrainedModel& model, const Matrix& rows)
{
    const auto n = static_cast<std::size_t>(rows.rows());
    std::vector<int> out(n);
    if (model.kind == TrainedModel::Kind::Svm) {
        const Matrix v = decision_values(model, rows);
        for (std::size_t i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            for (Eigen::Index c = 1; c < v.cols(); ++c)
                if (v(static_cast<Eigen::Index>(i), c) > v(static_cast<Eigen::Index>(i), best))
                    best = c;
            out[i] = model.classes[static_cast<std::size_t>(best)];
        }
        return out;
    }
    const Matrix dist = pairwise_distances(rows, *model.rows, model.metric);
    parallel_for(n, [&](std::size_t i) {
        std::vector<std::pair<double, int>> scratch;
        out[i] = vote(dist, static_cast<Eigen::Index>(i), model.labels, model.k, scratch);
    });
    return out;
}

std::vector<int> predict(const TrainedModel& model, const FeatureMatrix& features)
{
    if (features.fingerprint() != model.fingerprint)
        throw DataError("feature layout does not match the trained model (column_map fingerprint differs)");
    return predict(model, features.values);
}

std::string ParamPoint::describe() const
{
    std::ostringstream s;
    if (kind == TrainedModel::Kind::Knn)
        s << "knn(k=" << k << "," << distance_name(metric) << ")";
    else
        s << "svm(C=" << svm.c_reg << ")";
    return s.str();
}

TrainedModel train(const ParamPoint& point, const Matrix& rows, const std::vector<int>& labels,
                   std::uint64_t fingerprint)
{
    if (point.kind == TrainedModel::Kind::Knn)
        return train_knn(std::make_shared<const Matrix>(rows), labels, point.k, point.metric, fingerprint);
    return train_linear_svm(rows, labels, point.svm, fingerprint);
}

std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t folds, std::uint64_t seed)
{
    if (folds < 2)
        throw ConfigError("cross-validation needs at least 2 folds");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(i);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> fold(labels.size());
    for (auto& [label, idx] : by_class) {
        if (idx.size() < folds)
            throw DataError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                            " samples, fewer than the " + std::to_string(folds) + " folds");
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t r = 0; r < idx.size(); ++r)
            fold[idx[r]] = r % folds;
    }
    return fold;
}

namespace {

Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& idx)
{
    Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
        out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(idx[r]));
    return out;
}

bool simpler(const ParamPoint& a, const ParamPoint& b)
{
    if (a.kind == TrainedModel::Kind::Knn && b.kind == TrainedModel::Kind::Knn)
        return a.k < b.k;
    if (a.kind == TrainedModel::Kind::Svm && b.kind == TrainedModel::Kind::Svm)
        return a.svm.c_reg < b.svm.c_reg;
    return false;
}

}  // namespace

CvResult cross_validate(const Matrix& rows, const std::vector<int>& labels, const std::vector<ParamPoint>& grid,
                        std::size_t folds, std::uint64_t seed)
{
    if (grid.empty())
        throw ConfigError("cross-validation grid is empty");
    if (static_cast<std::size_t>(rows.rows()) != labels.size())
        throw DataError("labels do not align with feature rows");
    const auto fold = stratified_folds(labels, folds, seed);
    std::vector<std::vector<std::size_t>> train_idx(folds), test_idx(folds);
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t f = 0; f < folds; ++f)
            (fold[i] == f ? test_idx[f] : train_idx[f]).push_back(i);

    CvResult res;
    res.fold_scores.assign(grid.size(), std::vector<double>(folds, 0.0));

    // k-nn points share one distance matrix per metric.
    std::map<Distance, Matrix> dist;
    for (const auto& g : grid)
        if (g.kind == TrainedModel::Kind::Knn && !dist.count(g.metric))
            dist.emplace(g.metric, pairwise_distances(rows, rows, g.metric));

    for (std::size_t f = 0; f < folds; ++f) {
        const auto& tr = train_idx[f];
        const auto& te = test_idx[f];
        std::vector<int> tr_labels;
        for (auto i : tr)
            tr_labels.push_back(labels[i]);
        Matrix tr_rows, te_rows;
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const auto& pt = grid[g];
            std::size_t correct = 0;
            if (pt.kind == TrainedModel::Kind::Knn) {
                if (pt.k > tr.size())
                    throw ConfigError("k=" + std::to_string(pt.k) + " exceeds the fold training size");
                const Matrix& full = dist.at(pt.metric);
                Matrix sub(static_cast<Eigen::Index>(te.size()), static_cast<Eigen::Index>(tr.size()));
                for (std::size_t a = 0; a < te.size(); ++a)
                    for (std::size_t b = 0; b < tr.size(); ++b)
                        sub(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                            full(static_cast<Eigen::Index>(te[a]), static_cast<Eigen::Index>(tr[b]));
                std::vector<std::pair<double, int>> scratch;
                for (std::size_t a = 0; a < te.size(); ++a)
                    if (vote(sub, static_cast<Eigen::Index>(a), tr_labels, pt.k, scratch) == labels[te[a]])
                        ++correct;
            } else {
                if (tr_rows.size() == 0) {
                    tr_rows = take_rows(rows, tr);
                    te_rows = take_rows(rows, te);
                }
                const auto model = train_linear_svm(tr_rows, tr_labels, pt.svm);
                const auto pred = predict(model, te_rows);
                for (std::size_t a = 0; a < te.size(); ++a)
                    if (pred[a] == labels[te[a]])
                        ++correct;
            }
            res.fold_scores[g][f] = static_cast<double>(correct) / static_cast<double>(te.size());
        }
    }

    res.mean_scores.resize(grid.size());
    std::size_t best = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double s = 0.0;
        for (double v : res.fold_scores[g])
            s += v;
        res.mean_scores[g] = s / static_cast<double>(folds);
        if (g == 0)
            continue;
        if (res.mean_scores[g] > res.mean_scores[best] ||
            (res.mean_scores[g] == res.mean_scores[best] && simpler(grid[g], grid[best])))
            best = g;
    }
    res.best = grid[best];
    res.best_mean = res.mean_scores[best];
    return res;
}

Metrics evaluate(const std::vector<int>& predictions, const std::vector<int>& truth, int num_classes)
{
    if (predictions.size() != truth.size())
        throw DataError("prediction and truth lengths differ");
    if (num_classes < 1)
        throw ConfigError("number of classes must be positive");
    Metrics m;
    m.num_classes = num_classes;
    m.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        for (int l : {truth[i], predictions[i]})
            if (l < 1 || l > num_classes)
                throw DataError("label " + std::to_string(l) + " outside 1.." + std::to_string(num_classes));
        ++m.confusion(truth[i] - 1, predictions[i] - 1);
    }
    const auto nc = static_cast<std::size_t>(num_classes);
    m.recall.resize(nc);
    m.precision.resize(nc);
    m.recall_undefined.resize(nc);
    m.precision_undefined.resize(nc);
    std::size_t correct = 0;
    for (int c = 0; c < num_classes; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        const int diag = m.confusion(c, c);
        const int row = m.confusion.row(c).sum();
        const int col = m.confusion.col(c).sum();
        correct += static_cast<std::size_t>(diag);
        m.recall_undefined[cc] = row == 0;
        m.precision_undefined[cc] = col == 0;
        m.recall[cc] = row == 0 ? 0.0 : 100.0 * diag / row;
        m.precision[cc] = col == 0 ? 0.0 : 100.0 * diag / col;
    }
    m.macro_recall = std::accumulate(m.recall.begin(), m.recall.end(), 0.0) / num_classes;
    m.macro_precision = std::accumulate(m.precision.begin(), m.precision.end(), 0.0) / num_classes;
    m.accuracy = truth.empty() ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(truth.size());
    return m;
}

std::string metrics_json(const Metrics& m)
{
    nlohmann::json j;
    j["num_classes"] = m.num_classes;
    j["recall"] = m.recall;
    j["precision"] = m.precision;
    std::vector<int> undef_p, undef_r;
    for (std::size_t c = 0; c < m.precision_undefined.size(); ++c) {
        if (m.precision_undefined[c])
            undef_p.push_back(static_cast<int>(c) + 1);
        if (m.recall_undefined[c])
            undef_r.push_back(static_cast<int>(c) + 1);
    }
    j["precision_undefined_classes"] = undef_p;
    j["recall_undefined_classes"] = undef_r;
    j["macro_recall"] = m.macro_recall;
    j["macro_precision"] = m.macro_precision;
    j["accuracy"] = m.accuracy;
    nlohmann::json conf = nlohmann::json::array();
    for (int r = 0; r < m.confusion.rows(); ++r) {
        std::vector<int> row;
        for (int c = 0; c < m.confusion.cols(); ++c)
            row.push_back(m.confusion(r, c));
        conf.push_back(row);
    }
    j["confusion"] = conf;
    return j.dump(2) + "\n";
}

std::string metrics_table_csv(const std::vector<std::string>& configurations, const std::vector<Metrics>& metrics)
{
    if (configurations.size() != metrics.size())
        throw ComputeError("one configuration name per metrics column required");
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };
    std::ostringstream s;
    s << "class";
    for (const auto& c : configurations)
        s << ',' << c;
    s << '\n';
    const int nc = metrics.empty() ? 0 : metrics.front().num_classes;
    for (int c = 0; c < nc; ++c) {
        s << (c + 1);
        for (const auto& m : metrics)
            s << ',' << fmt(m.recall.at(static_cast<std::size_t>(c)));
        s << '\n';
    }
    s << "AVG";
    for (const auto& m : metrics)
        s << ',' << fmt(m.macro_recall);
    s << '\n';
    return s.str();
}

}  // namespace fcmesh
