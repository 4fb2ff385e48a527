#include "fcmesh/pipeline.hpp"

#include "fcmesh/error.hpp"
#include "fcmesh/io.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>
#include <sstream>

namespace fcmesh {

namespace {

using nlohmann::json;

template <class F>
auto stage(const char* name, F&& f)
{
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(name) + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(std::string(name) + ": " + e.what());
    } catch (const ComputeError& e) {
        throw ComputeError(std::string(name) + ": " + e.what());
    }
}

void check_keys(const json& obj, const char* section, std::initializer_list<const char*> allowed)
{
    if (!obj.is_object())
        throw ConfigError(std::string("config: '") + section + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            ok = ok || it.key() == a;
        if (!ok)
            throw ConfigError(std::string("config: unknown key '") + it.key() + "' in '" + section + "'");
    }
}

template <class T>
void read(const json& obj, const char* key, T& out)
{
    if (obj.contains(key) && !obj[key].is_null())
        out = obj[key].get<T>();
}

std::string fixed2(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::vector<double> expand_range(double lo, double hi, double step)
{
    if (!(step > 0.0) || !(hi >= lo))
        throw ConfigError("range needs lo <= hi and step > 0");
    const auto count = static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
    std::vector<double> v;
    for (std::size_t i = 0; i < count; ++i)
        v.push_back(lo + step * static_cast<double>(i));
    return v;
}

std::uint64_t PipelineConfig::hash() const { return io::fnv1a(source.dump()); }

PipelineConfig parse_pipeline_config(const json& j)
{
    PipelineConfig c;
    c.source = j;
    try {
        check_keys(j, "root",
                   {"dataset", "synth", "onset_lag", "detrend", "split", "patching", "connectivity", "mesh",
                    "classifier", "output"});
        if (j.contains("dataset")) {
            const auto& d = j["dataset"];
            check_keys(d, "dataset", {"path", "format", "coords", "allow_constant"});
            if (!d.contains("path"))
                throw ConfigError("config: dataset.path is required");
            c.dataset = d["path"].get<std::string>();
            if (d.contains("format"))
                c.format = parse_format(d["format"].get<std::string>());
            if (d.contains("coords"))
                c.coords = d["coords"].get<std::string>();
            read(d, "allow_constant", c.allow_constant);
        }
        if (j.contains("synth"))
            c.synth = synth_spec_from_json(j["synth"].dump());
        if (c.dataset.has_value() == c.synth.has_value())
            throw ConfigError("config: give exactly one of 'dataset' and 'synth'");
        read(j, "onset_lag", c.onset_lag);
        read(j, "detrend", c.detrend);

        if (j.contains("split")) {
            const auto& s = j["split"];
            check_keys(s, "split", {"mode", "fraction", "seed"});
            std::string mode = "phase";
            read(s, "mode", mode);
            if (mode == "phase")
                c.split.mode = SplitSpec::Mode::ByPhase;
            else if (mode == "fraction")
                c.split.mode = SplitSpec::Mode::ByFraction;
            else
                throw ConfigError("config: split.mode must be 'phase' or 'fraction'");
            read(s, "fraction", c.split.fraction);
            read(s, "seed", c.split.seed);
            if (!(c.split.fraction > 0.0 && c.split.fraction < 1.0))
                throw ConfigError("config: split.fraction must lie in (0, 1)");
        }

        if (j.contains("patching")) {
            const auto& p = j["patching"];
            check_keys(p, "patching", {"method", "C", "k_scale", "seed"});
            std::string method = "spectral";
            read(p, "method", method);
            if (method == "spectral")
                c.partitioner = Partitioner::Spectral;
            else if (method == "kmeans")
                c.partitioner = Partitioner::KMeans;
            else
                throw ConfigError("config: patching.method must be 'spectral' or 'kmeans'");
            read(p, "C", c.num_patches);
            read(p, "k_scale", c.k_scale);
            read(p, "seed", c.patch_seed);
        }
        if (c.num_patches < 1)
            throw ConfigError("config: patching.C must be at least 1");
        if (c.k_scale < 1)
            throw ConfigError("config: patching.k_scale must be at least 1");

        if (j.contains("connectivity")) {
            const auto& m = j["connectivity"];
            check_keys(m, "connectivity", {"measure", "scan_index", "bins"});
            if (m.contains("measure"))
                c.measure.measure = parse_measure(m["measure"].get<std::string>());
            read(m, "scan_index", c.measure.scan_index);
            read(m, "bins", c.bins);
        }
        if (c.bins < 2)
            throw ConfigError("config: connectivity.bins must be at least 2");

        bool have_tau = false;
        if (j.contains("mesh")) {
            const auto& m = j["mesh"];
            check_keys(m, "mesh", {"mode", "p", "tau", "tau_grid", "tau_range", "window", "ridge"});
            if (m.contains("mode"))
                c.mode = parse_neighbor_mode(m["mode"].get<std::string>());
            if (m.contains("p") && !m["p"].is_null())
                c.order = m["p"].get<std::size_t>();
            int tau_forms = 0;
            if (m.contains("tau") && !m["tau"].is_null()) {
                c.taus = {m["tau"].get<double>()};
                ++tau_forms;
            }
            if (m.contains("tau_grid") && !m["tau_grid"].is_null()) {
                c.taus = m["tau_grid"].get<std::vector<double>>();
                if (c.taus.empty())
                    throw ConfigError("config: mesh.tau_grid is empty");
                ++tau_forms;
            }
            if (m.contains("tau_range") && !m["tau_range"].is_null()) {
                const auto& r = m["tau_range"];
                check_keys(r, "mesh.tau_range", {"lo", "hi", "step"});
                c.taus = expand_range(r.at("lo").get<double>(), r.at("hi").get<double>(), r.at("step").get<double>());
                ++tau_forms;
            }
            if (tau_forms > 1)
                throw ConfigError("config: give only one of mesh.tau, mesh.tau_grid, mesh.tau_range");
            have_tau = tau_forms == 1;
            if (m.contains("window")) {
                const auto& w = m["window"];
                check_keys(w, "mesh.window", {"kind", "length"});
                if (w.contains("kind"))
                    c.window.kind = parse_window_kind(w["kind"].get<std::string>());
                read(w, "length", c.window.length);
                if (c.window.length < 1)
                    throw ConfigError("config: mesh.window.length must be at least 1");
            }
            if (m.contains("ridge") && !m["ridge"].is_null()) {
                c.ridge = m["ridge"].get<double>();
                if (!(*c.ridge >= 0.0))
                    throw ConfigError("config: mesh.ridge must be non-negative");
            }
        }
        for (double t : c.taus)
            if (!(t >= 0.0 && t <= 1.0))
                throw ConfigError("config: tau=" + io::format_double(t) + " outside [0, 1]");
        if (uses_threshold(c.mode)) {
            if (c.order)
                throw ConfigError("config: mode " + neighbor_mode_name(c.mode) + " takes tau, not p");
            if (!have_tau)
                throw ConfigError("config: mode " + neighbor_mode_name(c.mode) + " needs tau (or tau_grid/tau_range)");
        } else {
            if (have_tau)
                throw ConfigError("config: mode " + neighbor_mode_name(c.mode) + " takes p, not tau");
            if (!c.order)
                throw ConfigError("config: mode " + neighbor_mode_name(c.mode) + " needs p");
            if (*c.order < 1)
                throw ConfigError("config: p must be at least 1");
        }

        if (j.contains("classifier")) {
            const auto& k = j["classifier"];
            check_keys(k, "classifier",
                       {"kind", "k", "metric", "C_reg", "tol", "max_iter", "folds", "seed", "baseline"});
            std::string kind = "both";
            read(k, "kind", kind);
            if (kind == "knn" || kind == "svm" || kind == "both") {
                c.knn = kind != "svm";
                c.svm = kind != "knn";
            } else {
                throw ConfigError("config: classifier.kind must be 'knn', 'svm' or 'both'");
            }
            read(k, "k", c.k_grid);
            if (k.contains("metric"))
                c.metric = parse_distance(k["metric"].get<std::string>());
            read(k, "C_reg", c.c_grid);
            read(k, "tol", c.svm_tol);
            read(k, "max_iter", c.svm_max_iter);
            read(k, "folds", c.folds);
            read(k, "seed", c.cv_seed);
            read(k, "baseline", c.baseline);
        }
        if (c.knn && (c.k_grid.empty() || std::find(c.k_grid.begin(), c.k_grid.end(), 0u) != c.k_grid.end()))
            throw ConfigError("config: classifier.k needs positive entries");
        if (c.svm && (c.c_grid.empty() || std::any_of(c.c_grid.begin(), c.c_grid.end(), [](double v) { return !(v > 0.0); })))
            throw ConfigError("config: classifier.C_reg needs positive entries");
        if (!(c.svm_tol > 0.0) || c.svm_max_iter < 1)
            throw ConfigError("config: classifier.tol must be positive and max_iter at least 1");
        if (c.folds < 2)
            throw ConfigError("config: classifier.folds must be at least 2");

        if (j.contains("output")) {
            const auto& o = j["output"];
            check_keys(o, "output", {"dir", "matrices"});
            if (o.contains("dir"))
                c.output = o["dir"].get<std::string>();
            read(o, "matrices", c.write_matrices);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path)
{
    json j;
    try {
        j = json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_pipeline_config(j);
}

// ---------------------------------------------------------------------------

namespace {

struct Upstream {
    std::optional<ConnectivitySet> total;        // P / N
    std::vector<ConnectivitySet> by_class;       // S / E
    std::optional<DiscriminativeSet> disc;
};

}  // namespace

struct PipelineCache {
    std::mutex mu;
    std::map<std::string, std::shared_ptr<const Split>> splits;
    std::map<std::string, std::shared_ptr<const Patching>> patchings;
    std::map<std::string, std::shared_ptr<const Upstream>> upstream;
};

std::shared_ptr<PipelineCache> make_cache() { return std::make_shared<PipelineCache>(); }

namespace {

template <class T, class F>
std::shared_ptr<const T> cached(PipelineCache* cache, std::map<std::string, std::shared_ptr<const T>> PipelineCache::*slot,
                                const std::string& key, F&& build)
{
    if (cache) {
        std::lock_guard lock(cache->mu);
        auto& m = cache->*slot;
        if (auto it = m.find(key); it != m.end())
            return it->second;
    }
    auto value = std::make_shared<const T>(build());
    if (cache) {
        std::lock_guard lock(cache->mu);
        (cache->*slot)[key] = value;
    }
    return value;
}

std::string source_key(const PipelineConfig& c)
{
    json k;
    k["dataset"] = c.source.contains("dataset") ? c.source["dataset"] : json();
    k["synth"] = c.source.contains("synth") ? c.source["synth"] : json();
    k["lag"] = c.onset_lag;
    k["detrend"] = c.detrend;
    k["split"] = {static_cast<int>(c.split.mode), c.split.fraction, c.split.seed};
    return k.dump();
}

std::string patch_key(const PipelineConfig& c)
{
    return source_key(c) + "|" + std::to_string(static_cast<int>(c.partitioner)) + "," + std::to_string(c.num_patches) +
           "," + std::to_string(c.k_scale) + "," + std::to_string(c.patch_seed);
}

std::string upstream_key(const PipelineConfig& c)
{
    const bool by_class = uses_threshold(c.mode);
    return patch_key(c) + "|" + measure_name(c.measure.measure) + "," + std::to_string(c.measure.scan_index) + "," +
           (by_class ? neighbor_mode_name(c.mode) + "," + std::to_string(c.bins) : std::string("total"));
}

Split prepare(const PipelineConfig& c)
{
    Dataset d = stage("load", [&] {
        if (c.synth)
            return generate_synthetic(*c.synth).dataset;
        LoadOptions opt;
        opt.allow_constant = c.allow_constant;
        return load_dataset(*c.dataset, c.format, opt, c.coords);
    });
    d = stage("shift", [&] { return shift_onsets(d, c.onset_lag); });
    if (c.detrend)
        d = stage("detrend", [&] { return detrend_linear(d); });
    return stage("split", [&] { return split_train_test(d, c.split); });
}

Patching make_patching(const PipelineConfig& c, const Dataset& d)
{
    return stage("patch", [&] {
        if (c.partitioner == Partitioner::KMeans)
            return kmeans_partition(d.coords(), c.num_patches, c.patch_seed);
        return spectral_partition_coords(d.coords(), c.num_patches, c.k_scale, c.patch_seed);
    });
}

Upstream make_upstream(const PipelineConfig& c, const Dataset& train, const Patching& p)
{
    return stage("connectivity", [&] {
        Upstream u;
        if (c.mode == NeighborMode::Euclidean)
            return u;
        if (!uses_threshold(c.mode)) {
            u.total = within_cluster_fc(train, p, c.measure);
            return u;
        }
        u.by_class = per_class_fc(train, p, c.measure);
        if (c.mode == NeighborMode::ThresholdStd)
            u.disc = discriminative_std(u.by_class);
        else
            u.disc = discriminative_entropy(u.by_class, c.bins);
        return u;
    });
}

std::vector<ParamPoint> grid_for(const PipelineConfig& c, TrainedModel::Kind kind)
{
    std::vector<ParamPoint> g;
    if (kind == TrainedModel::Kind::Knn) {
        auto ks = c.k_grid;
        std::sort(ks.begin(), ks.end());
        for (auto k : ks) {
            ParamPoint pt;
            pt.kind = kind;
            pt.k = k;
            pt.metric = c.metric;
            g.push_back(pt);
        }
    } else {
        auto cs = c.c_grid;
        std::sort(cs.begin(), cs.end());
        for (double v : cs) {
            ParamPoint pt;
            pt.kind = kind;
            pt.svm = {v, c.svm_tol, c.svm_max_iter};
            g.push_back(pt);
        }
    }
    return g;
}

std::vector<TrainedModel::Kind> kinds(const PipelineConfig& c)
{
    std::vector<TrainedModel::Kind> k;
    if (c.knn)
        k.push_back(TrainedModel::Kind::Knn);
    if (c.svm)
        k.push_back(TrainedModel::Kind::Svm);
    return k;
}

const char* kind_name(TrainedModel::Kind k) { return k == TrainedModel::Kind::Knn ? "knn" : "svm"; }

// Grid points whose k exceeds the smallest fold's training size are dropped.
std::vector<ParamPoint> usable(std::vector<ParamPoint> grid, std::size_t n_train, std::size_t folds)
{
    const std::size_t limit = n_train - (n_train + folds - 1) / folds;
    std::vector<ParamPoint> out;
    for (const auto& g : grid)
        if (g.kind != TrainedModel::Kind::Knn || g.k <= limit)
            out.push_back(g);
    if (out.empty())
        throw ConfigError("every k in the grid exceeds the cross-validation training size");
    return out;
}

struct Candidate {
    std::optional<double> tau;
    std::vector<Neighborhood> hoods;
    FeatureMatrix train;
};

ClassifierOutcome fit_and_score(TrainedModel::Kind kind, const Matrix& train_x,
                                const std::vector<int>& train_y, const Matrix& test_x, const std::vector<int>& test_y,
                                int num_classes, const CvResult& cv, std::uint64_t fingerprint)
{
    ClassifierOutcome o;
    o.name = kind_name(kind);
    o.best = cv.best;
    o.cv_accuracy = 100.0 * cv.best_mean;
    const auto model = train(cv.best, train_x, train_y, fingerprint);
    o.converged = model.converged;
    o.num_features = static_cast<std::size_t>(train_x.cols());
    o.predictions = predict(model, test_x);
    o.test = evaluate(o.predictions, test_y, num_classes);
    return o;
}

json outcome_json(const ClassifierOutcome& o)
{
    json j;
    j["classifier"] = o.name;
    j["selected"] = o.best.describe();
    if (o.best.kind == TrainedModel::Kind::Knn) {
        j["k"] = o.best.k;
        j["metric"] = distance_name(o.best.metric);
    } else {
        j["C_reg"] = o.best.svm.c_reg;
        j["converged"] = o.converged;
    }
    j["cv_accuracy"] = o.cv_accuracy;
    if (o.tau)
        j["tau"] = *o.tau;
    json ts = json::array();
    for (auto [t, s] : o.tau_scores)
        ts.push_back({{"tau", t}, {"cv_accuracy", s}});
    if (!o.tau_scores.empty())
        j["tau_scores"] = ts;
    j["num_features"] = o.num_features;
    return j;
}

struct ArtifactWriter {
    std::filesystem::path dir;
    std::vector<std::filesystem::path> written;
    json hashes = json::object();

    void put(const std::filesystem::path& rel, std::string_view bytes)
    {
        const auto path = dir / rel;
        std::filesystem::create_directories(path.parent_path());
        io::write_atomic(path, bytes);
        written.push_back(path);
        hashes[rel.generic_string()] = io::hex64(io::fnv1a(bytes));
    }

    void manifest(const PipelineConfig& c)
    {
        json m;
        m["version"] = kVersion;
        m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                     std::to_string(EIGEN_MINOR_VERSION);
        m["config_hash"] = io::hex64(c.hash());
        m["config"] = c.source;
        m["artifacts"] = hashes;
        const auto path = dir / "manifest.json";
        io::write_atomic(path, m.dump(2) + "\n");
        written.push_back(path);
    }
};

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& c, PipelineCache* cache)
{
    const auto split = cached<Split>(cache, &PipelineCache::splits, source_key(c), [&] { return prepare(c); });
    const Dataset& train_d = split->train;
    const Dataset& test_d = split->test;
    const int omega = train_d.num_classes();

    const auto patching = cached<Patching>(cache, &PipelineCache::patchings, patch_key(c),
                                           [&] { return make_patching(c, train_d); });
    const auto up = cached<Upstream>(cache, &PipelineCache::upstream, upstream_key(c),
                                     [&] { return make_upstream(c, train_d, *patching); });

    // Neighbourhood systems and training features, one per τ candidate.
    std::vector<Candidate> candidates;
    std::vector<std::string> skipped;
    stage("mesh", [&] {
        auto build = [&](std::optional<double> tau) {
            Candidate cand;
            cand.tau = tau;
            switch (c.mode) {
            case NeighborMode::Positive:
            case NeighborMode::Negative:
                cand.hoods = all_neighbors_by_sign(*up->total, *patching, *c.order, c.mode);
                break;
            case NeighborMode::Euclidean:
                cand.hoods = all_neighbors_by_euclidean(train_d.coords(), *c.order);
                break;
            default:
                cand.hoods = all_neighbors_by_threshold(*up->disc, *patching, *tau);
            }
            cand.train = extract_fc_lrf(train_d, cand.hoods, c.window, c.ridge);
            return cand;
        };
        if (!uses_threshold(c.mode)) {
            candidates.push_back(build(std::nullopt));
            return 0;
        }
        for (double t : c.taus) {
            try {
                candidates.push_back(build(t));
            } catch (const ComputeError& e) {
                if (c.taus.size() == 1)
                    throw;
                skipped.push_back("tau=" + io::format_double(t) + ": " + e.what());
            }
        }
        if (candidates.empty())
            throw ComputeError("no tau in the grid retained any features");
        return 0;
    });

    PipelineResult res;
    res.patching = *patching;
    std::vector<const Candidate*> chosen;

    for (auto kind : kinds(c)) {
        const auto grid = usable(grid_for(c, kind), train_d.num_samples(), c.folds);
        ClassifierOutcome best;
        const Candidate* pick = nullptr;
        CvResult pick_cv;
        std::vector<std::pair<double, double>> scores;
        stage("cross-validation", [&] {
            for (const auto& cand : candidates) {
                const auto cv = cross_validate(cand.train.values, train_d.labels(), grid, c.folds, c.cv_seed);
                if (cand.tau)
                    scores.emplace_back(*cand.tau, 100.0 * cv.best_mean);
                if (!pick || cv.best_mean > pick_cv.best_mean) {
                    pick = &cand;
                    pick_cv = cv;
                }
            }
            return 0;
        });
        const FeatureMatrix test_f =
            stage("features", [&] { return extract_fc_lrf(test_d, pick->hoods, c.window, c.ridge); });
        auto outcome = stage("classify", [&] {
            return fit_and_score(kind, pick->train.values, train_d.labels(), test_f.values, test_d.labels(), omega,
                                 pick_cv, pick->train.fingerprint());
        });
        outcome.tau = pick->tau;
        outcome.tau_scores = scores;
        res.fc_lrf.push_back(std::move(outcome));
        chosen.push_back(pick);
    }

    if (c.baseline) {
        for (auto kind : kinds(c)) {
            const auto grid = usable(grid_for(c, kind), train_d.num_samples(), c.folds);
            auto outcome = stage("baseline", [&] {
                const auto cv = cross_validate(train_d.signals(), train_d.labels(), grid, c.folds, c.cv_seed);
                return fit_and_score(kind, train_d.signals(), train_d.labels(), test_d.signals(), test_d.labels(),
                                     omega, cv, 0);
            });
            res.baseline.push_back(std::move(outcome));
        }
    }

    if (!c.output.empty()) {
        stage("write", [&] {
            ArtifactWriter w{c.output, {}, json::object()};
            w.put("patching.csv", patching_csv(*patching));
            w.put("patching.json", patching_summary_json(*patching, train_d.coords()));
            if (c.write_matrices && (up->total || up->disc)) {
                json index = json::array();
                for (std::size_t m = 0; m < patching->num_patches(); ++m) {
                    const std::string tag = "patch" + std::to_string(m + 1);
                    json entry{{"patch", m + 1}};
                    if (up->total) {
                        w.put("matrices/fc_" + tag + ".csv", matrix_csv(up->total->patches[m]));
                        entry["fc"] = "fc_" + tag + ".csv";
                    }
                    for (const auto& fc : up->by_class) {
                        const std::string name = "fc" + std::to_string(*fc.class_label) + "_" + tag + ".csv";
                        w.put("matrices/" + name, matrix_csv(fc.patches[m]));
                        entry["fc_class"].push_back(name);
                    }
                    if (up->disc) {
                        const std::string name =
                            (up->disc->kind == DiscriminativeKind::Std ? "std_" : "ent_") + tag + ".csv";
                        w.put("matrices/" + name, matrix_csv(up->disc->patches[m]));
                        entry["discriminative"] = name;
                    }
                    index.push_back(entry);
                }
                w.put("matrices/index.json", index.dump(2) + "\n");
            }
            json metrics;
            json summary = json::object();
            std::vector<std::string> names;
            std::vector<Metrics> table;
            for (std::size_t i = 0; i < res.fc_lrf.size(); ++i) {
                const auto& o = res.fc_lrf[i];
                const Candidate& cand = *chosen[i];
                w.put("neighborhoods_" + o.name + ".csv", neighborhoods_csv(cand.hoods));
                w.put("features_" + o.name + "_train.bin", feature_binary(cand.train));
                w.put("features_" + o.name + "_test.bin",
                      feature_binary(extract_fc_lrf(test_d, cand.hoods, c.window, c.ridge)));
                summary["fc_lrf_" + o.name] = outcome_json(o);
                metrics["fc_lrf"][o.name] = json::parse(metrics_json(o.test));
                names.push_back("fc_lrf_" + o.name);
                table.push_back(o.test);
            }
            for (const auto& o : res.baseline) {
                summary["raw_" + o.name] = outcome_json(o);
                metrics["raw"][o.name] = json::parse(metrics_json(o.test));
                names.push_back("raw_" + o.name);
                table.push_back(o.test);
            }
            if (!skipped.empty())
                summary["skipped_tau"] = skipped;
            w.put("model.json", summary.dump(2) + "\n");
            w.put("metrics.json", metrics.dump(2) + "\n");
            w.put("metrics.csv", metrics_table_csv(names, table));
            w.manifest(c);
            res.artifacts = w.written;
            return 0;
        });
    }
    return res;
}

// ---------------------------------------------------------------------------

SweepGrid parse_sweep_grid(const json& j)
{
    SweepGrid g;
    try {
        check_keys(j, "sweep", {"C", "tau", "tau_range", "p", "measure"});
        read(j, "C", g.num_patches);
        read(j, "tau", g.taus);
        if (j.contains("tau_range")) {
            if (!g.taus.empty())
                throw ConfigError("sweep: give tau or tau_range, not both");
            const auto& r = j["tau_range"];
            g.taus = expand_range(r.at("lo").get<double>(), r.at("hi").get<double>(), r.at("step").get<double>());
        }
        read(j, "p", g.orders);
        if (j.contains("measure"))
            for (const auto& m : j["measure"])
                g.measures.push_back(parse_measure(m.get<std::string>()));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("sweep: ") + e.what());
    }
    for (double t : g.taus)
        if (!(t >= 0.0 && t <= 1.0))
            throw ConfigError("sweep: tau=" + io::format_double(t) + " outside [0, 1]");
    if (g.empty())
        throw ConfigError("sweep: the parameter grid is empty");
    return g;
}

SweepResult run_sweep(const PipelineConfig& base, const SweepGrid& grid)
{
    if (grid.empty())
        throw ConfigError("sweep: the parameter grid is empty");
    auto or_base = [](const auto& values, auto fallback) {
        using T = std::decay_t<decltype(fallback)>;
        std::vector<T> v(values.begin(), values.end());
        if (v.empty())
            v.push_back(fallback);
        return v;
    };
    const auto cs = or_base(grid.num_patches, base.num_patches);
    const auto ms = or_base(grid.measures, base.measure.measure);
    std::vector<std::optional<double>> ts;
    for (double t : grid.taus)
        ts.emplace_back(t);
    if (ts.empty())
        ts.emplace_back(std::nullopt);
    std::vector<std::optional<std::size_t>> ps;
    for (auto p : grid.orders)
        ps.emplace_back(p);
    if (ps.empty())
        ps.emplace_back(std::nullopt);

    auto cache = make_cache();
    SweepResult out;
    for (auto m : ms)
        for (auto cnum : cs)
            for (const auto& t : ts)
                for (const auto& p : ps) {
                    SweepPoint pt;
                    pt.num_patches = cnum;
                    pt.tau = t;
                    pt.order = p;
                    pt.measure = m;
                    PipelineConfig cfg = base;
                    cfg.output.clear();
                    cfg.num_patches = cnum;
                    cfg.measure.measure = m;
                    if (t)
                        cfg.taus = {*t};
                    if (p)
                        cfg.order = *p;
                    try {
                        if (p && uses_threshold(cfg.mode))
                            throw ConfigError("mode " + neighbor_mode_name(cfg.mode) + " takes tau, not p");
                        if (t && !uses_threshold(cfg.mode))
                            throw ConfigError("mode " + neighbor_mode_name(cfg.mode) + " takes p, not tau");
                        pt.result = run_pipeline(cfg, cache.get());
                    } catch (const std::exception& e) {
                        pt.error = e.what();
                    }
                    out.points.push_back(std::move(pt));
                }

    // Aggregated table: one row per point plus a sample-std summary row.
    std::vector<std::string> cols;
    for (auto kind : kinds(base))
        for (const char* what : {"recall", "precision"})
            cols.push_back(std::string("fc_lrf_") + kind_name(kind) + "_" + what);
    if (base.baseline)
        for (auto kind : kinds(base))
            for (const char* what : {"recall", "precision"})
                cols.push_back(std::string("raw_") + kind_name(kind) + "_" + what);

    std::ostringstream s;
    s << "point,C,tau,p,measure,status";
    for (const auto& col : cols)
        s << ',' << col;
    s << ",error\n";
    std::vector<std::vector<double>> columns(cols.size());
    for (std::size_t i = 0; i < out.points.size(); ++i) {
        const auto& pt = out.points[i];
        s << (i + 1) << ',' << pt.num_patches << ',' << (pt.tau ? io::format_double(*pt.tau) : "") << ','
          << (pt.order ? std::to_string(*pt.order) : "") << ',' << measure_name(pt.measure) << ','
          << (pt.result ? "ok" : "failed");
        std::vector<double> vals;
        if (pt.result) {
            for (const auto* group : {&pt.result->fc_lrf, &pt.result->baseline})
                for (const auto& o : *group) {
                    vals.push_back(o.test.macro_recall);
                    vals.push_back(o.test.macro_precision);
                }
        }
        for (std::size_t k = 0; k < cols.size(); ++k) {
            s << ',';
            if (k < vals.size()) {
                s << fixed2(vals[k]);
                columns[k].push_back(vals[k]);
            }
        }
        std::string err = pt.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        s << ',' << err << '\n';
    }
    s << "std,,,,,";
    for (const auto& col : columns) {
        s << ',';
        if (col.size() >= 2)
            s << fixed2(sample_std(col));
    }
    s << ",\n";
    out.table_csv = s.str();

    if (!base.output.empty()) {
        ArtifactWriter w{base.output, {}, json::object()};
        w.put("sweep.csv", out.table_csv);
        json pts = json::array();
        for (const auto& pt : out.points) {
            json e{{"C", pt.num_patches}, {"measure", measure_name(pt.measure)}};
            if (pt.tau)
                e["tau"] = *pt.tau;
            if (pt.order)
                e["p"] = *pt.order;
            if (pt.result) {
                for (const auto& o : pt.result->fc_lrf)
                    e["fc_lrf"][o.name] = outcome_json(o);
                for (const auto& o : pt.result->baseline)
                    e["raw"][o.name] = outcome_json(o);
            } else {
                e["error"] = pt.error;
            }
            pts.push_back(e);
        }
        w.put("sweep.json", pts.dump(2) + "\n");
        w.manifest(base);
    }
    return out;
}

std::string inspect_patch(const PipelineConfig& c, std::size_t patch, const std::string& what)
{
    const Split split = prepare(c);
    const Patching p = make_patching(c, split.train);
    if (patch < 1 || patch > p.num_patches())
        throw ConfigError("patch " + std::to_string(patch) + " outside 1.." + std::to_string(p.num_patches()));
    const std::size_t m = patch - 1;
    return stage("inspect", [&] {
        if (what == "fc")
            return matrix_csv(within_cluster_fc(split.train, p, c.measure).patches[m]);
        if (what.rfind("fc:", 0) == 0) {
            int label = 0;
            try {
                label = std::stoi(what.substr(3));
            } catch (const std::exception&) {
                throw ConfigError("inspect: bad class in '" + what + "'");
            }
            for (const auto& fc : per_class_fc(split.train, p, c.measure))
                if (fc.class_label == label)
                    return matrix_csv(fc.patches[m]);
            throw ConfigError("inspect: class " + std::to_string(label) + " not present");
        }
        if (what == "std")
            return matrix_csv(discriminative_std(per_class_fc(split.train, p, c.measure)).patches[m]);
        if (what == "ent")
            return matrix_csv(discriminative_entropy(per_class_fc(split.train, p, c.measure), c.bins).patches[m]);
        throw ConfigError("inspect: unknown matrix '" + what + "' (fc | fc:<class> | std | ent)");
    });
}

std::string ssd_series(const PipelineConfig& c, std::size_t voxel)
{
    const Split split = prepare(c);
    if (voxel < 1 || voxel > split.train.num_voxels())
        throw ConfigError("voxel " + std::to_string(voxel) + " outside 1.." + std::to_string(split.train.num_voxels()));
    const std::size_t j = voxel - 1;
    const Patching p = make_patching(c, split.train);
    const Upstream up = make_upstream(c, split.train, p);
    const Neighborhood hood = stage("mesh", [&] {
        switch (c.mode) {
        case NeighborMode::Positive:
        case NeighborMode::Negative:
            return neighbors_by_sign(*up.total, p, j, *c.order, c.mode);
        case NeighborMode::Euclidean:
            return neighbors_by_euclidean(split.train.coords(), j, *c.order);
        default:
            return neighbors_by_threshold(*up.disc, p, j, c.taus.front());
        }
    });
    return stage("inspect", [&] {
        std::ostringstream s;
        s << "split,scan,label,ssd\n";
        for (const auto* part : {&split.train, &split.test}) {
            const auto d = neighborhood_ssd(*part, j, hood);
            for (std::size_t i = 0; i < d.size(); ++i)
                s << (part == &split.train ? "train" : "test") << ',' << (i + 1) << ',' << part->labels()[i] << ','
                  << io::format_double(d[i]) << '\n';
        }
        return s.str();
    });
}

}  // namespace fcmesh
