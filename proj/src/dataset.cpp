#include "fcmesh/dataset.hpp"

#include "fcmesh/error.hpp"
#include "fcmesh/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace fcmesh {

namespace {

constexpr char kMagic[8] = {'F', 'C', 'L', 'R', 'F', '1', '\0', '\0'};

double parse_number(const std::string& s, const std::string& where)
{
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    while (first < last && *first == ' ')
        ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw DataError("malformed number '" + s + "' at " + where);
    if (!std::isfinite(v))
        throw DataError("non-finite value at " + where);
    return v;
}

long parse_int(const std::string& s, const std::string& where)
{
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw DataError("malformed integer '" + s + "' at " + where);
    return v;
}

Phase parse_phase(const std::string& s, const std::string& where)
{
    if (s == "encoding" || s == "0")
        return Phase::Encoding;
    if (s == "retrieval" || s == "1")
        return Phase::Retrieval;
    throw DataError("unknown phase '" + s + "' at " + where);
}

const char* phase_name(Phase p) { return p == Phase::Encoding ? "encoding" : "retrieval"; }

// Checks the load-time invariants and applies the constant-column policy.
Dataset finish_load(Dataset d, const LoadOptions& options)
{
    std::vector<bool> seen(static_cast<std::size_t>(d.num_classes()) + 1, false);
    bool any_encoding = false;
    for (std::size_t i = 0; i < d.num_samples(); ++i) {
        if (d.phase()[i] == Phase::Encoding) {
            any_encoding = true;
            seen[static_cast<std::size_t>(d.labels()[i])] = true;
        }
    }
    if (any_encoding) {
        for (int c = 1; c <= d.num_classes(); ++c)
            if (!seen[static_cast<std::size_t>(c)])
                throw DataError("class " + std::to_string(c) + " never appears in the encoding phase");
    }

    auto constant = d.columns_with_zero_variance();
    if (constant.empty())
        return d;
    if (!options.allow_constant) {
        throw DataError("voxel " + std::to_string(constant.front() + 1) + " is constant (" +
                        std::to_string(constant.size()) +
                        " constant columns); pass --allow-constant to drop them");
    }
    std::vector<std::size_t> keep;
    std::size_t c = 0;
    for (std::size_t j = 0; j < d.num_voxels(); ++j) {
        if (c < constant.size() && constant[c] == j) {
            ++c;
            continue;
        }
        keep.push_back(j);
    }
    if (keep.empty())
        throw DataError("every voxel column is constant");
    return d.subset_columns(keep);
}

Dataset load_binary(const std::filesystem::path& path, const LoadOptions& options)
{
    const std::string bytes = io::read_file(path);
    io::ByteReader in(bytes);
    auto magic = in.raw(8);
    if (!std::equal(magic.begin(), magic.end(), kMagic))
        throw DataError("bad magic in " + path.string());
    const auto version = in.u32();
    if (version != 1)
        throw DataError("unsupported dataset version " + std::to_string(version));
    const auto n = in.u32();
    const auto m = in.u32();
    const auto omega = in.u32();
    const auto has_trials = in.u8();
    if (has_trials > 1)
        throw DataError("has_trials flag must be 0 or 1");

    const std::size_t expected =
        std::size_t{m} * 3 * 4 + std::size_t{n} * m * 4 + std::size_t{n} * 2 + n +
        (has_trials ? std::size_t{n} * 8 : 0);
    if (in.remaining() != expected)
        throw DataError("dimension mismatch: header declares N=" + std::to_string(n) +
                        ", M=" + std::to_string(m) + " but payload has " +
                        std::to_string(in.remaining()) + " bytes, expected " +
                        std::to_string(expected));

    Coords coords(m, 3);
    for (std::uint32_t j = 0; j < m; ++j)
        for (int a = 0; a < 3; ++a)
            coords(j, a) = in.f32();
    Matrix signals(n, m);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = 0; j < m; ++j)
            signals(i, j) = in.f32();
    std::vector<int> labels(n);
    for (auto& l : labels)
        l = in.u16();
    std::vector<Phase> phase(n);
    for (auto& p : phase) {
        auto v = in.u8();
        if (v > 1)
            throw DataError("phase byte must be 0 or 1");
        p = static_cast<Phase>(v);
    }
    std::optional<std::vector<TrialPos>> trials;
    if (has_trials) {
        trials.emplace(n);
        for (auto& t : *trials) {
            t.trial = in.u32();
            t.scan = in.u32();
        }
    }
    return finish_load(Dataset::make(std::move(signals), std::move(coords), std::move(labels),
                                     std::move(phase), std::move(trials), static_cast<int>(omega)),
                       options);
}

Coords load_coords_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open coordinates file " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw DataError("empty coordinates file " + path.string());
    auto header = io::split_csv_line(line);
    if (header != std::vector<std::string>{"voxel", "x", "y", "z"})
        throw DataError("malformed header in " + path.string() + ", expected voxel,x,y,z");
    std::vector<std::array<double, 3>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r")
            continue;
        auto f = io::split_csv_line(line);
        const std::string where = path.filename().string() + ":" + std::to_string(lineno);
        if (f.size() != 4)
            throw DataError("expected 4 fields at " + where);
        if (parse_int(f[0], where) != static_cast<long>(rows.size()) + 1)
            throw DataError("voxel ids must run 1..M in order at " + where);
        rows.push_back({parse_number(f[1], where), parse_number(f[2], where), parse_number(f[3], where)});
    }
    Coords coords(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t j = 0; j < rows.size(); ++j)
        for (int a = 0; a < 3; ++a)
            coords(static_cast<Eigen::Index>(j), a) = rows[j][static_cast<std::size_t>(a)];
    return coords;
}

Dataset load_csv(const std::filesystem::path& path, const LoadOptions& options,
                 const std::optional<std::filesystem::path>& coords_path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw DataError("empty dataset file " + path.string());
    const auto header = io::split_csv_line(line);
    const std::vector<std::string> fixed{"scan", "phase", "label", "trial", "scan_in_trial"};
    if (header.size() < fixed.size() + 1 || !std::equal(fixed.begin(), fixed.end(), header.begin()))
        throw DataError("malformed header in " + path.string() +
                        ", expected scan,phase,label,trial,scan_in_trial,v1..vM");
    const std::size_t m = header.size() - fixed.size();
    for (std::size_t j = 0; j < m; ++j)
        if (header[fixed.size() + j] != "v" + std::to_string(j + 1))
            throw DataError("malformed header: column " + std::to_string(fixed.size() + j + 1) +
                            " should be v" + std::to_string(j + 1));

    std::vector<double> values;
    std::vector<int> labels;
    std::vector<Phase> phase;
    std::vector<TrialPos> trials;
    int with_trial = -1;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r")
            continue;
        const std::string where = path.filename().string() + ":" + std::to_string(lineno);
        auto f = io::split_csv_line(line);
        if (f.size() != header.size())
            throw DataError("dimension mismatch: " + std::to_string(f.size()) + " fields at " + where +
                            ", header has " + std::to_string(header.size()));
        phase.push_back(parse_phase(f[1], where));
        const long label = parse_int(f[2], where);
        if (label < 1 || label > 65535)
            throw DataError("unknown label id " + f[2] + " at " + where);
        labels.push_back(static_cast<int>(label));
        const bool has = !f[3].empty() || !f[4].empty();
        if (with_trial == -1)
            with_trial = has ? 1 : 0;
        else if (with_trial != (has ? 1 : 0))
            throw DataError("trial columns must be filled on every row or on none (" + where + ")");
        if (has) {
            const long t = parse_int(f[3], where);
            const long s = parse_int(f[4], where);
            if (t < 0 || s < 0)
                throw DataError("negative trial index at " + where);
            trials.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(s)});
        }
        for (std::size_t j = 0; j < m; ++j)
            values.push_back(parse_number(f[fixed.size() + j], where));
    }
    const std::size_t n = labels.size();
    if (n == 0)
        throw DataError("dataset has no rows");
    Matrix signals(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            signals(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i * m + j];

    const auto cpath = coords_path ? *coords_path : path.parent_path() / "coords.csv";
    Coords coords = load_coords_csv(cpath);
    if (static_cast<std::size_t>(coords.rows()) != m)
        throw DataError("dimension mismatch: " + cpath.string() + " has " +
                        std::to_string(coords.rows()) + " voxels, signals have " + std::to_string(m));
    const int omega = *std::max_element(labels.begin(), labels.end());
    std::optional<std::vector<TrialPos>> tr;
    if (with_trial == 1)
        tr = std::move(trials);
    return finish_load(Dataset::make(std::move(signals), std::move(coords), std::move(labels),
                                     std::move(phase), std::move(tr), omega),
                       options);
}

}  // namespace

Dataset Dataset::make(Matrix signals, Coords coords, std::vector<int> labels, std::vector<Phase> phase,
                      std::optional<std::vector<TrialPos>> trials, int num_classes)
{
    const auto n = static_cast<std::size_t>(signals.rows());
    if (labels.size() != n)
        throw DataError("dimension mismatch: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " scans");
    if (phase.size() != n)
        throw DataError("dimension mismatch: phase tags do not match scan count");
    if (coords.rows() != signals.cols())
        throw DataError("dimension mismatch: " + std::to_string(coords.rows()) + " coordinate rows for " +
                        std::to_string(signals.cols()) + " voxels");
    if (trials && trials->size() != n)
        throw DataError("dimension mismatch: trial layout does not match scan count");
    if (num_classes < 2)
        throw DataError("need at least 2 classes, got " + std::to_string(num_classes));
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] < 1 || labels[i] > num_classes)
            throw DataError("unknown label id " + std::to_string(labels[i]) + " at scan " +
                            std::to_string(i) + " (classes are 1.." + std::to_string(num_classes) + ")");
    if (!signals.allFinite() || !coords.allFinite())
        throw DataError("non-finite values in dataset");

    Dataset d;
    d.signals_ = std::move(signals);
    d.coords_ = std::move(coords);
    d.labels_ = std::move(labels);
    d.phase_ = std::move(phase);
    d.trials_ = std::move(trials);
    d.num_classes_ = num_classes;
    return d;
}

std::set<int> Dataset::class_set() const { return {labels_.begin(), labels_.end()}; }

std::vector<std::size_t> Dataset::columns_with_zero_variance() const
{
    std::vector<std::size_t> out;
    for (Eigen::Index j = 0; j < signals_.cols(); ++j) {
        auto col = signals_.col(j);
        if (col.size() == 0 || (col.array() == col(0)).all())
            out.push_back(static_cast<std::size_t>(j));
    }
    return out;
}

Dataset Dataset::subset_rows(const std::vector<std::size_t>& rows) const
{
    Matrix s(static_cast<Eigen::Index>(rows.size()), signals_.cols());
    std::vector<int> l;
    std::vector<Phase> p;
    std::optional<std::vector<TrialPos>> t;
    if (trials_)
        t.emplace();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto i = rows[r];
        if (i >= num_samples())
            throw DataError("row index out of range");
        s.row(static_cast<Eigen::Index>(r)) = signals_.row(static_cast<Eigen::Index>(i));
        l.push_back(labels_[i]);
        p.push_back(phase_[i]);
        if (t)
            t->push_back((*trials_)[i]);
    }
    return make(std::move(s), coords_, std::move(l), std::move(p), std::move(t), num_classes_);
}

Dataset Dataset::subset_columns(const std::vector<std::size_t>& cols) const
{
    Matrix s(signals_.rows(), static_cast<Eigen::Index>(cols.size()));
    Coords c(static_cast<Eigen::Index>(cols.size()), 3);
    for (std::size_t k = 0; k < cols.size(); ++k) {
        s.col(static_cast<Eigen::Index>(k)) = signals_.col(static_cast<Eigen::Index>(cols[k]));
        c.row(static_cast<Eigen::Index>(k)) = coords_.row(static_cast<Eigen::Index>(cols[k]));
    }
    return make(std::move(s), std::move(c), labels_, phase_, trials_, num_classes_);
}

std::vector<std::size_t> Dataset::rows_with_label(int label) const
{
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels_.size(); ++i)
        if (labels_[i] == label)
            rows.push_back(i);
    return rows;
}

DatasetFormat parse_format(const std::string& name)
{
    if (name == "csv")
        return DatasetFormat::Csv;
    if (name == "binary" || name == "bin")
        return DatasetFormat::Binary;
    throw ConfigError("unknown dataset format '" + name + "' (csv | binary)");
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, const LoadOptions& options,
                     const std::optional<std::filesystem::path>& coords_path)
{
    if (!std::filesystem::exists(path))
        throw DataError("dataset file not found: " + path.string());
    return format == DatasetFormat::Binary ? load_binary(path, options)
                                           : load_csv(path, options, coords_path);
}

void save_binary(const Dataset& d, const std::filesystem::path& path)
{
    io::ByteWriter out;
    out.raw(std::string_view(kMagic, 8));
    out.u32(1);
    out.u32(static_cast<std::uint32_t>(d.num_samples()));
    out.u32(static_cast<std::uint32_t>(d.num_voxels()));
    out.u32(static_cast<std::uint32_t>(d.num_classes()));
    out.u8(d.has_trials() ? 1 : 0);
    for (Eigen::Index j = 0; j < d.coords().rows(); ++j)
        for (int a = 0; a < 3; ++a)
            out.f32(static_cast<float>(d.coords()(j, a)));
    for (Eigen::Index i = 0; i < d.signals().rows(); ++i)
        for (Eigen::Index j = 0; j < d.signals().cols(); ++j)
            out.f32(static_cast<float>(d.signals()(i, j)));
    for (int l : d.labels())
        out.u16(static_cast<std::uint16_t>(l));
    for (Phase p : d.phase())
        out.u8(static_cast<std::uint8_t>(p));
    if (d.has_trials()) {
        for (const auto& t : *d.trials()) {
            out.u32(t.trial);
            out.u32(t.scan);
        }
    }
    io::write_atomic(path, out.str());
}

void save_csv(const Dataset& d, const std::filesystem::path& path,
              const std::optional<std::filesystem::path>& coords_path)
{
    std::ostringstream s;
    s << "scan,phase,label,trial,scan_in_trial";
    for (std::size_t j = 0; j < d.num_voxels(); ++j)
        s << ",v" << (j + 1);
    s << '\n';
    for (std::size_t i = 0; i < d.num_samples(); ++i) {
        s << i << ',' << phase_name(d.phase()[i]) << ',' << d.labels()[i] << ',';
        if (d.has_trials())
            s << (*d.trials())[i].trial << ',' << (*d.trials())[i].scan;
        else
            s << ',';
        for (std::size_t j = 0; j < d.num_voxels(); ++j)
            s << ',' << io::format_double(d.signals()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        s << '\n';
    }
    io::write_atomic(path, s.str());

    std::ostringstream c;
    c << "voxel,x,y,z\n";
    for (Eigen::Index j = 0; j < d.coords().rows(); ++j)
        c << (j + 1) << ',' << io::format_double(d.coords()(j, 0)) << ',' << io::format_double(d.coords()(j, 1))
          << ',' << io::format_double(d.coords()(j, 2)) << '\n';
    io::write_atomic(coords_path ? *coords_path : path.parent_path() / "coords.csv", c.str());
}

Dataset shift_onsets(const Dataset& d, std::size_t lag)
{
    const std::size_t n = d.num_samples();
    if (lag >= n)
        throw DataError("onset lag " + std::to_string(lag) + " must be smaller than the scan count " +
                        std::to_string(n));
    if (lag == 0)
        return d;
    const std::size_t out_n = n - lag;
    Matrix s = d.signals().bottomRows(static_cast<Eigen::Index>(out_n));
    std::vector<int> labels(d.labels().begin(), d.labels().begin() + static_cast<std::ptrdiff_t>(out_n));
    std::vector<Phase> phase(d.phase().begin(), d.phase().begin() + static_cast<std::ptrdiff_t>(out_n));
    std::optional<std::vector<TrialPos>> trials;
    if (d.has_trials())
        trials.emplace(d.trials()->begin(), d.trials()->begin() + static_cast<std::ptrdiff_t>(out_n));
    return Dataset::make(std::move(s), d.coords(), std::move(labels), std::move(phase), std::move(trials),
                         d.num_classes());
}

Dataset detrend_linear(const Dataset& d)
{
    const std::size_t n = d.num_samples();
    if (n < 3)
        throw DataError("detrending needs at least 3 scans, got " + std::to_string(n));
    Vector t(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
        t(static_cast<Eigen::Index>(i)) = static_cast<double>(i);
    t.array() -= t.mean();
    const double tt = t.squaredNorm();

    Matrix s = d.signals();
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
        auto col = s.col(j);
        const double mean = col.mean();
        col.array() -= mean;
        const double slope = t.dot(col) / tt;
        col -= slope * t;
    }
    return Dataset::make(std::move(s), d.coords(), d.labels(), d.phase(), d.trials(), d.num_classes());
}

Split split_train_test(const Dataset& d, const SplitSpec& spec)
{
    Split out;
    const std::size_t n = d.num_samples();
    if (spec.mode == SplitSpec::Mode::ByPhase) {
        for (std::size_t i = 0; i < n; ++i)
            (d.phase()[i] == Phase::Encoding ? out.train_rows : out.test_rows).push_back(i);
        if (out.train_rows.empty())
            throw DataError("by-phase split: no encoding rows");
        if (out.test_rows.empty())
            throw DataError("by-phase split: no retrieval rows");
    } else {
        if (!(spec.fraction > 0.0 && spec.fraction < 1.0))
            throw ConfigError("split fraction must lie in (0,1)");
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::mt19937_64 rng(spec.seed);
        std::shuffle(perm.begin(), perm.end(), rng);
        auto n_train = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(n)));
        n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
        out.train_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
        out.test_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
        std::sort(out.train_rows.begin(), out.train_rows.end());
        std::sort(out.test_rows.begin(), out.test_rows.end());
    }
    out.train = d.subset_rows(out.train_rows);
    out.test = d.subset_rows(out.test_rows);
    return out;
}

}  // namespace fcmesh
