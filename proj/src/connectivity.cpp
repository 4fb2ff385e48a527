#include "fcmesh/connectivity.hpp"

#include "fcmesh/error.hpp"
#include "fcmesh/io.hpp"
#include "fcmesh/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace fcmesh {

Measure parse_measure(const std::string& name)
{
    if (name == "zero-order" || name == "zero_order" || name == "cross")
        return Measure::ZeroOrder;
    if (name == "peak")
        return Measure::Peak;
    if (name == "scan")
        return Measure::Scan;
    throw ConfigError("unknown correlation measure '" + name + "' (zero-order | peak | scan)");
}

std::string measure_name(Measure m)
{
    switch (m) {
    case Measure::ZeroOrder: return "zero-order";
    case Measure::Peak: return "peak";
    case Measure::Scan: return "scan";
    }
    return "?";
}

namespace {

struct Moments {
    double mean = 0.0;
    double ss = 0.0;  // Σ (x − mean)²
};

Moments moments(std::span<const double> x)
{
    Moments m;
    for (double v : x)
        m.mean += v;
    m.mean /= static_cast<double>(x.size());
    double scale = 0.0;
    for (double v : x) {
        m.ss += (v - m.mean) * (v - m.mean);
        scale = std::max(scale, std::abs(v));
    }
    // Residual spread at rounding level is treated as constant.
    if (m.ss <= 1e-26 * scale * scale * static_cast<double>(x.size()))
        m.ss = 0.0;
    return m;
}

// Trials keyed by id, each holding its rows in dataset order.
std::map<std::uint32_t, std::vector<std::size_t>> group_trials(const std::vector<TrialPos>& layout)
{
    std::map<std::uint32_t, std::vector<std::size_t>> trials;
    for (std::size_t i = 0; i < layout.size(); ++i)
        trials[layout[i].trial].push_back(i);
    return trials;
}

const std::vector<TrialPos>& require_trials(const std::optional<std::vector<TrialPos>>& layout, const char* what)
{
    if (!layout)
        throw DataError(std::string(what) + " needs a trial layout");
    return *layout;
}

std::vector<double> column(const Matrix& s, std::size_t j)
{
    auto c = s.col(static_cast<Eigen::Index>(j));
    return {c.data(), c.data() + c.size()};
}

}  // namespace

double zero_order_correlation(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size())
        throw DataError("series lengths differ");
    if (x.size() < 2)
        throw DataError("correlation needs at least 2 samples");
    const Moments mx = moments(x);
    const Moments my = moments(y);
    if (mx.ss == 0.0 || my.ss == 0.0)
        throw DataError("zero-variance series in correlation");
    double sxy = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t)
        sxy += (x[t] - mx.mean) * (y[t] - my.mean);
    const double r = sxy / std::sqrt(mx.ss * my.ss);
    return std::clamp(r, -1.0, 1.0);
}

std::vector<double> trial_peaks(std::span<const double> x, const std::vector<TrialPos>& layout)
{
    if (layout.size() != x.size())
        throw DataError("trial layout does not match series length");
    std::vector<double> peaks;
    for (const auto& [id, rows] : group_trials(layout)) {
        std::size_t best = rows.front();
        for (auto r : rows) {
            const bool earlier = layout[r].scan < layout[best].scan;
            if (x[r] > x[best] || (x[r] == x[best] && earlier))
                best = r;
        }
        peaks.push_back(x[best]);
    }
    return peaks;
}

std::vector<double> trial_scan_values(std::span<const double> x, const std::vector<TrialPos>& layout,
                                      std::size_t scan_index)
{
    if (layout.size() != x.size())
        throw DataError("trial layout does not match series length");
    std::vector<double> values;
    for (const auto& [id, rows] : group_trials(layout)) {
        auto it = std::find_if(rows.begin(), rows.end(), [&](std::size_t r) { return layout[r].scan == scan_index; });
        if (it == rows.end())
            throw DataError("scan index " + std::to_string(scan_index) + " out of range for trial " +
                            std::to_string(id));
        values.push_back(x[*it]);
    }
    return values;
}

double peak_correlation(std::span<const double> x, std::span<const double> y,
                        const std::optional<std::vector<TrialPos>>& layout)
{
    const auto& l = require_trials(layout, "peak correlation");
    auto px = trial_peaks(x, l);
    if (px.size() < 2)
        throw DataError("peak correlation needs at least 2 trials");
    auto py = trial_peaks(y, l);
    return zero_order_correlation(px, py);
}

double scan_correlation(std::span<const double> x, std::span<const double> y, std::size_t scan_index,
                        const std::optional<std::vector<TrialPos>>& layout)
{
    const auto& l = require_trials(layout, "scan correlation");
    auto sx = trial_scan_values(x, l, scan_index);
    if (sx.size() < 2)
        throw DataError("scan correlation needs at least 2 trials");
    auto sy = trial_scan_values(y, l, scan_index);
    return zero_order_correlation(sx, sy);
}

ConnectivitySet within_cluster_fc(const Dataset& d, const Patching& p, const MeasureParams& params)
{
    if (d.num_voxels() != p.num_voxels())
        throw DataError("dataset has " + std::to_string(d.num_voxels()) + " voxels, patching has " +
                        std::to_string(p.num_voxels()));

    // Series each coefficient is computed on: raw columns, or per-trial peaks / scan values.
    std::vector<std::vector<double>> series(d.num_voxels());
    const char* what = params.measure == Measure::Peak ? "peak correlation" : "scan correlation";
    parallel_for(d.num_voxels(), [&](std::size_t j) {
        auto col = column(d.signals(), j);
        switch (params.measure) {
        case Measure::ZeroOrder: series[j] = std::move(col); break;
        case Measure::Peak: series[j] = trial_peaks(col, require_trials(d.trials(), what)); break;
        case Measure::Scan:
            series[j] = trial_scan_values(col, require_trials(d.trials(), what), params.scan_index);
            break;
        }
    });
    if (!series.empty() && series.front().size() < 2)
        throw DataError(params.measure == Measure::ZeroOrder ? "connectivity needs at least 2 scans"
                                                             : "connectivity needs at least 2 trials");

    ConnectivitySet out;
    out.measure = params.measure;
    out.patches.resize(p.num_patches());
    std::vector<std::uint64_t> counts(p.num_patches(), 0);
    parallel_for(p.num_patches(), [&](std::size_t m) {
        const auto& mem = p.members(m);
        const auto n = static_cast<Eigen::Index>(mem.size());
        for (auto j : mem)
            if (moments(series[j]).ss == 0.0)
                throw DataError("zero-variance voxel " + std::to_string(j + 1) + " in patch " +
                                std::to_string(m + 1) + " (" + measure_name(params.measure) + ")");
        Matrix fc(n, n);
        for (Eigen::Index a = 0; a < n; ++a) {
            fc(a, a) = 1.0;
            for (Eigen::Index b = a + 1; b < n; ++b) {
                const double r = zero_order_correlation(series[mem[static_cast<std::size_t>(a)]],
                                                        series[mem[static_cast<std::size_t>(b)]]);
                fc(a, b) = r;
                fc(b, a) = r;
                ++counts[m];
            }
        }
        out.patches[m] = std::move(fc);
    });
    for (auto c : counts)
        out.pair_evaluations += c;
    return out;
}

std::vector<ConnectivitySet> per_class_fc(const Dataset& d, const Patching& p, const MeasureParams& params)
{
    std::vector<ConnectivitySet> out;
    for (int label : d.class_set()) {
        const auto rows = d.rows_with_label(label);
        Dataset sub = d.subset_rows(rows);
        if (params.measure == Measure::ZeroOrder) {
            if (rows.size() < 2)
                throw DataError("class " + std::to_string(label) + " has fewer than 2 scans");
        } else {
            const auto& l = require_trials(sub.trials(), "per-class trial correlation");
            if (group_trials(l).size() < 2)
                throw DataError("class " + std::to_string(label) + " has fewer than 2 trials");
        }
        try {
            out.push_back(within_cluster_fc(sub, p, params));
        } catch (const DataError& e) {
            throw DataError("class " + std::to_string(label) + ": " + e.what());
        }
        out.back().class_label = label;
    }
    return out;
}

namespace {

void check_compatible(const std::vector<ConnectivitySet>& sets)
{
    if (sets.size() < 2)
        throw ComputeError("discriminative matrices need at least 2 classes");
    for (const auto& s : sets) {
        if (s.patches.size() != sets.front().patches.size())
            throw ComputeError("per-class connectivity sets use different patchings");
        if (s.measure != sets.front().measure)
            throw ComputeError("per-class connectivity sets use different measures");
        for (std::size_t m = 0; m < s.patches.size(); ++m)
            if (s.patches[m].rows() != sets.front().patches[m].rows())
                throw ComputeError("per-class connectivity sets use different patchings (patch " +
                                   std::to_string(m + 1) + ")");
    }
}

template <typename F>
std::vector<Matrix> pairwise(const std::vector<ConnectivitySet>& sets, F&& stat)
{
    const std::size_t c = sets.front().patches.size();
    std::vector<Matrix> out(c);
    parallel_for(c, [&](std::size_t m) {
        const auto n = sets.front().patches[m].rows();
        Matrix r = Matrix::Zero(n, n);
        std::vector<double> alpha(sets.size());
        for (Eigen::Index a = 0; a < n; ++a)
            for (Eigen::Index b = a + 1; b < n; ++b) {
                for (std::size_t w = 0; w < sets.size(); ++w)
                    alpha[w] = sets[w].patches[m](a, b);
                const double v = stat(alpha);
                r(a, b) = v;
                r(b, a) = v;
            }
        out[m] = std::move(r);
    });
    return out;
}

}  // namespace

double sample_std(std::span<const double> values)
{
    if (values.size() < 2)
        throw ComputeError("standard deviation needs at least 2 values");
    double mean = 0.0;
    for (double v : values)
        mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values)
        ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double normalized_entropy(std::span<const double> values, std::size_t bins)
{
    if (bins < 2)
        throw ConfigError("entropy needs at least 2 bins");
    if (values.size() < 2)
        throw ComputeError("entropy needs at least 2 values");
    std::vector<std::size_t> hist(bins, 0);
    const double width = 2.0 / static_cast<double>(bins);
    for (double v : values) {
        const double pos = (std::clamp(v, -1.0, 1.0) + 1.0) / width;
        const auto b = std::min(bins - 1, static_cast<std::size_t>(pos));
        ++hist[b];
    }
    double h = 0.0;
    const double n = static_cast<double>(values.size());
    for (auto c : hist) {
        if (c == 0)
            continue;
        const double prob = static_cast<double>(c) / n;
        h -= prob * std::log2(prob);
    }
    return h / std::log2(static_cast<double>(std::min(values.size(), bins)));
}

DiscriminativeSet discriminative_std(const std::vector<ConnectivitySet>& fc_by_class)
{
    check_compatible(fc_by_class);
    DiscriminativeSet out;
    out.kind = DiscriminativeKind::Std;
    out.num_classes = fc_by_class.size();
    out.patches = pairwise(fc_by_class, [](const std::vector<double>& a) { return sample_std(a); });
    return out;
}

DiscriminativeSet discriminative_entropy(const std::vector<ConnectivitySet>& fc_by_class, std::size_t bins)
{
    check_compatible(fc_by_class);
    if (bins < 2)
        throw ConfigError("entropy needs at least 2 bins");
    DiscriminativeSet out;
    out.kind = DiscriminativeKind::Ent;
    out.num_classes = fc_by_class.size();
    out.bins = bins;
    out.patches = pairwise(fc_by_class, [bins](const std::vector<double>& a) { return normalized_entropy(a, bins); });
    return out;
}

std::string matrix_csv(const Matrix& m)
{
    std::ostringstream s;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j)
                s << ',';
            s << io::format_double(m(i, j));
        }
        s << '\n';
    }
    return s.str();
}

}  // namespace fcmesh
