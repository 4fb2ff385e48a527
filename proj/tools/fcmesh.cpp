// fcmesh: command-line front end for the functional mesh pipeline.

#include "fcmesh/error.hpp"
#include "fcmesh/io.hpp"
#include "fcmesh/parallel.hpp"
#include "fcmesh/pipeline.hpp"
#include "fcmesh/synth.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Flags that mirror config keys; each set flag overwrites its key.
struct Overrides {
    std::optional<std::string> dataset, format, coords, output, partitioner, measure, mode, window, classifier,
        tau_range, metric;
    std::optional<std::size_t> lag, num_patches, k_scale, order, bins, window_length, folds, scan_index;
    std::optional<std::uint64_t> patch_seed, cv_seed;
    std::optional<double> tau, ridge;
    bool allow_constant = false;
    bool no_detrend = false;
    bool no_baseline = false;

    void add(CLI::App* app)
    {
        app->add_option("--dataset", dataset, "dataset file");
        app->add_option("--format", format, "csv | binary");
        app->add_option("--coords", coords, "coordinate sidecar (csv)");
        app->add_flag("--allow-constant", allow_constant, "drop constant voxel columns instead of failing");
        app->add_option("--output", output, "output directory");
        app->add_option("--lag", lag, "onset lag in scans");
        app->add_flag("--no-detrend", no_detrend, "skip linear detrending");
        app->add_option("--partitioner", partitioner, "spectral | kmeans");
        app->add_option("-C,--patches", num_patches, "number of local patches");
        app->add_option("--k-scale", k_scale, "local-scaling neighbour rank");
        app->add_option("--patch-seed", patch_seed);
        app->add_option("--measure", measure, "zero-order | peak | scan");
        app->add_option("--scan-index", scan_index, "scan used by the scan measure");
        app->add_option("--mode", mode, "P | N | S | E | euclidean");
        app->add_option("-p,--order", order, "mesh order p");
        app->add_option("--tau", tau, "threshold in [0, 1]");
        app->add_option("--tau-range", tau_range, "lo:hi:step, chosen by cross-validation");
        app->add_option("--bins", bins, "entropy bins");
        app->add_option("--window", window, "auto | trial | sliding");
        app->add_option("--window-length", window_length);
        app->add_option("--ridge", ridge, "ridge lambda (default: scaled to the Gram trace)");
        app->add_option("--classifier", classifier, "knn | svm | both");
        app->add_option("--metric", metric, "euclidean | cosine");
        app->add_option("--folds", folds);
        app->add_option("--cv-seed", cv_seed);
        app->add_flag("--no-baseline", no_baseline, "skip the raw-intensity classifiers");
    }

    void apply(json& j) const
    {
        if (dataset) {
            j.erase("synth");
            j["dataset"]["path"] = *dataset;
        }
        if (format)
            j["dataset"]["format"] = *format;
        if (coords)
            j["dataset"]["coords"] = *coords;
        if (allow_constant)
            j["dataset"]["allow_constant"] = true;
        if (output)
            j["output"]["dir"] = *output;
        if (lag)
            j["onset_lag"] = *lag;
        if (no_detrend)
            j["detrend"] = false;
        if (partitioner)
            j["patching"]["method"] = *partitioner;
        if (num_patches)
            j["patching"]["C"] = *num_patches;
        if (k_scale)
            j["patching"]["k_scale"] = *k_scale;
        if (patch_seed)
            j["patching"]["seed"] = *patch_seed;
        if (measure)
            j["connectivity"]["measure"] = *measure;
        if (scan_index)
            j["connectivity"]["scan_index"] = *scan_index;
        if (bins)
            j["connectivity"]["bins"] = *bins;
        if (mode)
            j["mesh"]["mode"] = *mode;
        if (order)
            j["mesh"]["p"] = *order;
        if (tau || tau_range) {
            if (j.contains("mesh"))
                for (const char* k : {"tau", "tau_grid", "tau_range"})
                    j["mesh"].erase(k);
        }
        if (tau)
            j["mesh"]["tau"] = *tau;
        if (tau_range) {
            double lo = 0, hi = 0, step = 0;
            char c1 = 0, c2 = 0;
            std::istringstream s(*tau_range);
            if (!(s >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':')
                throw fcmesh::ConfigError("--tau-range expects lo:hi:step");
            j["mesh"]["tau_range"] = {{"lo", lo}, {"hi", hi}, {"step", step}};
        }
        if (window)
            j["mesh"]["window"]["kind"] = *window;
        if (window_length)
            j["mesh"]["window"]["length"] = *window_length;
        if (ridge)
            j["mesh"]["ridge"] = *ridge;
        if (classifier)
            j["classifier"]["kind"] = *classifier;
        if (metric)
            j["classifier"]["metric"] = *metric;
        if (folds)
            j["classifier"]["folds"] = *folds;
        if (cv_seed)
            j["classifier"]["seed"] = *cv_seed;
        if (no_baseline)
            j["classifier"]["baseline"] = false;
    }
};

json read_json(const std::string& path)
{
    try {
        return json::parse(fcmesh::io::read_file(path));
    } catch (const json::exception& e) {
        throw fcmesh::ConfigError(path + ": " + e.what());
    }
}

fcmesh::PipelineConfig config_from(const std::string& path, const Overrides& o)
{
    json j = path.empty() ? json::object() : read_json(path);
    o.apply(j);
    return fcmesh::parse_pipeline_config(j);
}

void print_outcomes(const fcmesh::PipelineResult& r)
{
    auto line = [](const char* group, const fcmesh::ClassifierOutcome& o) {
        std::cout << group << ' ' << o.name << ": " << o.best.describe();
        if (o.tau)
            std::cout << " tau=" << *o.tau;
        std::cout << " features=" << o.num_features << " cv=" << o.cv_accuracy << "% test accuracy=" << o.test.accuracy
                  << "% macro recall=" << o.test.macro_recall << "% macro precision=" << o.test.macro_precision
                  << "%\n";
    };
    for (const auto& o : r.fc_lrf)
        line("fc-lrf", o);
    for (const auto& o : r.baseline)
        line("raw", o);
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Functional mesh learning: patch connectivity, mesh arc features, classification"};
    app.require_subcommand(1);
    std::optional<std::size_t> threads;
    app.add_option("--threads", threads, "worker threads (overrides FCMESH_THREADS)");

    std::string config_path;
    Overrides ov;

    auto* pipe = app.add_subcommand("pipeline", "run the full pipeline");
    pipe->add_option("-c,--config", config_path, "JSON config")->check(CLI::ExistingFile);
    ov.add(pipe);

    auto* sweep = app.add_subcommand("sweep", "one pipeline run per grid point");
    std::string grid_path;
    std::vector<std::size_t> grid_c, grid_p;
    std::vector<double> grid_tau;
    std::vector<std::string> grid_measure;
    sweep->add_option("-c,--config", config_path, "JSON config")->check(CLI::ExistingFile);
    sweep->add_option("--grid", grid_path, "JSON grid {C, tau | tau_range, p, measure}")->check(CLI::ExistingFile);
    sweep->add_option("--grid-C", grid_c)->delimiter(',');
    sweep->add_option("--grid-tau", grid_tau)->delimiter(',');
    sweep->add_option("--grid-p", grid_p)->delimiter(',');
    sweep->add_option("--grid-measure", grid_measure)->delimiter(',');
    Overrides sweep_ov;
    sweep_ov.add(sweep);

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset and its ground truth");
    std::string synth_config, synth_out, synth_format = "csv";
    std::optional<std::uint64_t> synth_seed;
    synth->add_option("-c,--config", synth_config, "JSON synth spec (or pipeline config with a synth section)")
        ->check(CLI::ExistingFile);
    synth->add_option("-o,--out", synth_out, "output directory")->required();
    synth->add_option("--format", synth_format, "csv | binary");
    synth->add_option("--seed", synth_seed);

    auto* inspect = app.add_subcommand("inspect", "dump one patch matrix, or one voxel's SSD series, as CSV");
    std::optional<std::size_t> patch, ssd_voxel;
    std::string matrix = "fc";
    std::string inspect_out;
    inspect->add_option("-c,--config", config_path, "JSON config")->check(CLI::ExistingFile);
    auto* patch_opt = inspect->add_option("--patch", patch, "1-based patch id");
    auto* ssd_opt = inspect->add_option("--ssd", ssd_voxel, "1-based voxel: squared difference to its neighbourhood");
    patch_opt->excludes(ssd_opt);
    inspect->add_option("--matrix", matrix, "fc | fc:<class> | std | ent");
    inspect->add_option("--out", inspect_out, "write to a file instead of stdout");
    Overrides inspect_ov;
    inspect_ov.add(inspect);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (threads)
            fcmesh::set_worker_count(*threads);

        if (*pipe) {
            const auto cfg = config_from(config_path, ov);
            const auto result = fcmesh::run_pipeline(cfg);
            print_outcomes(result);
            if (!cfg.output.empty())
                std::cout << "wrote " << result.artifacts.size() << " files to " << cfg.output.string() << '\n';
        } else if (*sweep) {
            const auto cfg = config_from(config_path, sweep_ov);
            json g = grid_path.empty() ? json::object() : read_json(grid_path);
            if (!grid_c.empty())
                g["C"] = grid_c;
            if (!grid_tau.empty())
                g["tau"] = grid_tau;
            if (!grid_p.empty())
                g["p"] = grid_p;
            if (!grid_measure.empty())
                g["measure"] = grid_measure;
            const auto result = fcmesh::run_sweep(cfg, fcmesh::parse_sweep_grid(g));
            std::cout << result.table_csv;
        } else if (*synth) {
            json j = synth_config.empty() ? json::object() : read_json(synth_config);
            if (synth_seed)
                (j.contains("synth") ? j["synth"] : j)["seed"] = *synth_seed;
            const auto spec = fcmesh::synth_spec_from_json(j.dump());
            const auto out = fcmesh::generate_synthetic(spec);
            fs::create_directories(synth_out);
            const fs::path dir(synth_out);
            const auto fmt = fcmesh::parse_format(synth_format);
            if (fmt == fcmesh::DatasetFormat::Csv)
                fcmesh::save_csv(out.dataset, dir / "dataset.csv");
            else
                fcmesh::save_binary(out.dataset, dir / "dataset.bin");
            fcmesh::io::write_atomic(dir / "ground_truth.json", fcmesh::ground_truth_json(out.truth));
            std::cout << "wrote " << out.dataset.num_samples() << " scans x " << out.dataset.num_voxels()
                      << " voxels to " << synth_out << '\n';
        } else if (*inspect) {
            const auto cfg = config_from(config_path, inspect_ov);
            if (!patch && !ssd_voxel)
                throw fcmesh::ConfigError("inspect needs --patch or --ssd");
            const auto csv = patch ? fcmesh::inspect_patch(cfg, *patch, matrix) : fcmesh::ssd_series(cfg, *ssd_voxel);
            if (inspect_out.empty())
                std::cout << csv;
            else
                fcmesh::io::write_atomic(inspect_out, csv);
        }
    } catch (const fcmesh::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const fcmesh::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const fcmesh::ComputeError& e) {
        std::cerr << "compute error: " << e.what() << '\n';
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "compute error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
