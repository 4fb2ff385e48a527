// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "fcmesh/classify.hpp"
#include "fcmesh/connectivity.hpp"
#include "fcmesh/io.hpp"
#include "fcmesh/mesh.hpp"
#include "fcmesh/parallel.hpp"
#include "fcmesh/patching.hpp"
#include "fcmesh/pipeline.hpp"
#include "fcmesh/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace fcmesh;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail)
{
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
    failures += ok ? 0 : 1;
}

// Runs one criterion, turning an exception into a FAIL line.
void criterion(int id, const std::function<void(int)>& body)
{
    try {
        body(id);
    } catch (const std::exception& e) {
        report(id, false, std::string("exception: ") + e.what());
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3)
{
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double textbook_std(const std::vector<double>& v)
{
    double mean = 0;
    for (double x : v)
        mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v)
        ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double pearson(const std::vector<double>& x, const std::vector<double>& y)
{
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

// Synthetic benchmark shared by criteria 6 and 7: small communities with
// class-dependent coupling signs and no class-specific mean pattern.
json benchmark_config(std::uint64_t seed, std::size_t patches)
{
    return json{
        {"synth",
         {{"voxels", 400},
          {"num_classes", 4},
          {"communities", 200},
          {"coupling", 0.9},
          {"noise", 0.3},
          {"mean_shift", 0.0},
          {"scans_per_class", 60},
          {"trial_length", 10},
          {"mesh_order", 1},
          {"seed", seed}}},
        {"patching", {{"C", patches}}},
        {"mesh", {{"mode", "S"}, {"tau_range", {{"lo", 0.5}, {"hi", 0.95}, {"step", 0.05}}}}},
        {"classifier", {{"kind", "both"}}},
    };
}

const ClassifierOutcome& find(const std::vector<ClassifierOutcome>& v, const std::string& name)
{
    for (const auto& o : v)
        if (o.name == name)
            return o;
    throw std::runtime_error("no outcome for " + name);
}

}  // namespace

int main()
{
    criterion(1, [](int id) {
        const auto t0 = std::chrono::steady_clock::now();
        std::mt19937_64 rng(101);
        std::normal_distribution<double> g;
        std::uniform_int_distribution<int> pick_p(1, 4);
        double worst = 0;
        int instances = 0;
        while (instances < 1000) {
            const int p = pick_p(rng);
            const int r = std::uniform_int_distribution<int>(p, 16)(rng);
            Matrix x(r, p);
            for (Eigen::Index i = 0; i < x.size(); ++i)
                x.data()[i] = g(rng);
            Eigen::FullPivLU<Matrix> lu(x);
            if (lu.rank() < p)
                continue;
            std::vector<double> y(static_cast<std::size_t>(r));
            for (auto& v : y)
                v = g(rng);
            const Vector got = estimate_arc_weights(y, x, 0.0).weights;
            const Vector want = oracle_least_squares(y, x);
            worst = std::max(worst, (got - want).norm() / std::max(want.norm(), 1e-300));
            ++instances;
        }
        const double secs = seconds_since(t0);
        report(id, worst <= 1e-8 && secs < 10.0,
               std::to_string(instances) + " instances, max relative error " + fmt(worst) + ", " + fmt(secs) + " s");
    });

    criterion(2, [](int id) {
        std::mt19937_64 rng(202);
        std::normal_distribution<double> g;
        std::uniform_real_distribution<double> u(0.1, 10.0);
        std::uniform_int_distribution<int> len(3, 200);
        double worst = 0, worst_affine = 0;
        bool symmetric = true, unit = true;
        for (int pair = 0; pair < 1000; ++pair) {
            const auto n = static_cast<std::size_t>(len(rng));
            std::vector<double> x(n), y(n);
            for (std::size_t i = 0; i < n; ++i) {
                x[i] = g(rng);
                y[i] = 0.5 * x[i] + g(rng);
            }
            const double r = zero_order_correlation(x, y);
            worst = std::max(worst, std::abs(r - pearson(x, y)));
            symmetric = symmetric && r == zero_order_correlation(y, x);
            unit = unit && zero_order_correlation(x, x) == 1.0;
            const double a = u(rng), b = 5.0 * g(rng);
            std::vector<double> ax(n);
            for (std::size_t i = 0; i < n; ++i)
                ax[i] = a * x[i] + b;
            worst_affine = std::max(worst_affine, std::abs(zero_order_correlation(ax, y) - r));
        }
        report(id, worst <= 1e-12 && worst_affine <= 1e-12 && symmetric && unit,
               "1000 pairs, max |r - oracle| " + fmt(worst) + ", max affine drift " + fmt(worst_affine) +
                   ", symmetric " + (symmetric ? "yes" : "no") + ", unit diagonal " + (unit ? "yes" : "no"));
    });

    criterion(3, [](int id) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::size_t m = 2000, c = 256, n = 40;
        std::mt19937_64 rng(303);
        std::uniform_real_distribution<double> u(0.0, 100.0);
        std::normal_distribution<double> g;
        Coords coords(static_cast<Eigen::Index>(m), 3);
        for (Eigen::Index i = 0; i < coords.size(); ++i)
            coords.data()[i] = u(rng);
        Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x.data()[i] = g(rng);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i)
            labels[i] = static_cast<int>(i % 2) + 1;
        const auto d = Dataset::make(x, coords, labels, std::vector<Phase>(n, Phase::Encoding), std::nullopt, 2);
        const auto p = kmeans_partition(coords, c, 0);
        const auto fc = within_cluster_fc(d, p, {});
        std::uint64_t expected = 0;
        std::size_t smallest = m, largest = 0;
        for (std::size_t k = 0; k < c; ++k) {
            const std::uint64_t s = p.patch_size(k);
            expected += s * (s - 1) / 2;
            smallest = std::min<std::size_t>(smallest, s);
            largest = std::max<std::size_t>(largest, s);
        }
        const double all_pairs = static_cast<double>(m) * static_cast<double>(m - 1) / 2.0;
        const double fraction = static_cast<double>(fc.pair_evaluations) / all_pairs;
        const double secs = seconds_since(t0);
        report(id, fc.pair_evaluations == expected && fraction <= 0.05 && secs < 30.0,
               "pair evaluations " + std::to_string(fc.pair_evaluations) + " (sum over patches " +
                   std::to_string(expected) + "), " + fmt(100.0 * fraction) + "% of all pairs, patch sizes " +
                   std::to_string(smallest) + ".." + std::to_string(largest) + ", " + fmt(secs) + " s");
    });

    criterion(4, [](int id) {
        std::mt19937_64 rng(404);
        std::uniform_int_distribution<int> pick_m(2, 40), pick_c(1, 5);
        std::uniform_real_distribution<double> u(0.0, 0.99);
        bool monotone = true, full_at_zero = true, empty_above_max = true;
        for (int rep = 0; rep < 100; ++rep) {
            const auto m = static_cast<std::size_t>(pick_m(rng));
            const auto c = std::min<std::size_t>(m, static_cast<std::size_t>(pick_c(rng)));
            std::vector<std::size_t> assign(m);
            for (std::size_t v = 0; v < m; ++v)
                assign[v] = v % c;
            std::shuffle(assign.begin(), assign.end(), rng);
            const Patching p(assign, c);
            DiscriminativeSet disc;
            disc.num_classes = 3;
            for (std::size_t k = 0; k < c; ++k) {
                const auto s = static_cast<Eigen::Index>(p.patch_size(k));
                Matrix mat = Matrix::Zero(s, s);
                for (Eigen::Index a = 0; a < s; ++a)
                    for (Eigen::Index b = a + 1; b < s; ++b)
                        mat(a, b) = mat(b, a) = u(rng);
                disc.patches.push_back(mat);
            }
            for (std::size_t seed = 0; seed < m; ++seed) {
                const auto k = p.patch_of(seed);
                const auto& row = disc.patches[k].row(static_cast<Eigen::Index>(p.local_index(seed)));
                std::size_t prev = m;
                for (int t = 0; t <= 100; ++t) {
                    const auto order = neighbors_by_threshold(disc, p, seed, t / 100.0).order();
                    monotone = monotone && order <= prev;
                    prev = order;
                }
                full_at_zero = full_at_zero && neighbors_by_threshold(disc, p, seed, 0.0).order() == p.patch_size(k) - 1;
                const double above = std::min(1.0, std::nextafter(row.maxCoeff(), 2.0));
                empty_above_max = empty_above_max && neighbors_by_threshold(disc, p, seed, above).order() == 0;
            }
        }
        report(id, monotone && full_at_zero && empty_above_max,
               std::string("100 random sets; weakly decreasing ") + (monotone ? "yes" : "no") + ", tau=0 gives pi-1 " +
                   (full_at_zero ? "yes" : "no") + ", tau above row max gives 0 " + (empty_above_max ? "yes" : "no"));
    });

    criterion(5, [](int id) {
        const double sd = sample_std(std::vector<double>{-1.0, 0.0, 1.0});
        const double ent_same = normalized_entropy(std::vector<double>(6, 0.42), kDefaultEntropyBins);
        // one coefficient at the centre of each of the 8 bins of [-1, 1]
        std::vector<double> distinct;
        for (int b = 0; b < 8; ++b)
            distinct.push_back(-1.0 + 0.25 * b + 0.125);
        const double ent_distinct = normalized_entropy(distinct, 8);
        const bool ok = std::abs(sd - 1.0) <= 1e-12 && std::abs(ent_same) <= 1e-12 &&
                        std::abs(ent_distinct - 1.0) <= 1e-12;
        report(id, ok,
               "Std(-1,0,1)=" + fmt(sd, 17) + ", Ent(identical)=" + fmt(ent_same, 17) +
                   ", Ent(8 distinct bins, B=8)=" + fmt(ent_distinct, 17));
    });

    std::vector<double> c7_knn, c7_svm;
    criterion(6, [&](int id) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<double> raw_knn, raw_svm, fc_knn, fc_svm;
        auto cache = make_cache();
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const auto res = run_pipeline(parse_pipeline_config(benchmark_config(seed, 32)), cache.get());
            fc_knn.push_back(find(res.fc_lrf, "knn").test.accuracy);
            fc_svm.push_back(find(res.fc_lrf, "svm").test.accuracy);
            raw_knn.push_back(find(res.baseline, "knn").test.accuracy);
            raw_svm.push_back(find(res.baseline, "svm").test.accuracy);
            if (seed == 1) {
                c7_knn.push_back(find(res.fc_lrf, "knn").test.macro_recall);
                c7_svm.push_back(find(res.fc_lrf, "svm").test.macro_recall);
            }
        }
        const double secs = seconds_since(t0);
        const double mr = median(raw_knn), ms = median(raw_svm), fk = median(fc_knn), fs_ = median(fc_svm);
        const bool ok = mr >= 35.0 && mr <= 55.0 && fk - mr >= 15.0 && fs_ - ms >= 15.0 && secs < 300.0;
        report(id, ok,
               "10-seed medians: raw k-nn " + fmt(mr) + "%, FC-LRF k-nn " + fmt(fk) + "%, raw SVM " + fmt(ms) +
                   "%, FC-LRF SVM " + fmt(fs_) + "%, " + fmt(secs) + " s");
    });

    criterion(7, [&](int id) {
        for (std::size_t c : {64u, 128u, 256u}) {
            const auto res = run_pipeline(parse_pipeline_config(benchmark_config(1, c)));
            c7_knn.push_back(find(res.fc_lrf, "knn").test.macro_recall);
            c7_svm.push_back(find(res.fc_lrf, "svm").test.macro_recall);
        }
        if (c7_knn.size() != 4)
            throw std::runtime_error("criterion 6 did not provide the C=32 run");
        const double sk = textbook_std(c7_knn), ss = textbook_std(c7_svm);
        std::string detail = "macro recall over C=32,64,128,256: k-nn";
        for (double v : c7_knn)
            detail += " " + fmt(v);
        detail += " (std " + fmt(sk) + "), SVM";
        for (double v : c7_svm)
            detail += " " + fmt(v);
        detail += " (std " + fmt(ss) + ")";
        report(id, sk <= 5.0 && ss <= 5.0, detail);
    });

    criterion(8, [](int id) {
        const auto base = fs::temp_directory_path() / "fcmesh_acceptance_determinism";
        fs::remove_all(base);
        const std::vector<std::pair<std::string, std::size_t>> runs{{"a1", 1}, {"b1", 1}, {"c4", 4}};
        for (const auto& [name, workers] : runs) {
            auto j = benchmark_config(1, 32);
            j["output"] = {{"dir", (base / name).string()}};
            set_worker_count(workers);
            run_pipeline(parse_pipeline_config(j));
        }
        set_worker_count(1);
        std::vector<std::string> compared;
        bool same = true;
        for (const auto& entry : fs::directory_iterator(base / "a1")) {
            const auto name = entry.path().filename().string();
            const bool wanted = (name.rfind("features_", 0) == 0 && entry.path().extension() == ".bin") ||
                                name == "metrics.json" || name == "model.json";
            if (!wanted)
                continue;
            const auto ref = io::read_file(entry.path());
            for (const char* other : {"b1", "c4"})
                same = same && ref == io::read_file(base / other / name);
            compared.push_back(name);
        }
        const auto manifest = [&](const char* run) { return json::parse(io::read_file(base / run / "manifest.json"))["artifacts"]; };
        const bool manifests = manifest("a1") == manifest("b1") && manifest("a1") == manifest("c4");
        std::sort(compared.begin(), compared.end());
        std::string list;
        for (const auto& n : compared)
            list += (list.empty() ? "" : " ") + n;
        report(id, same && manifests && compared.size() >= 5,
               "runs at 1, 1 and 4 workers; identical bytes " + std::string(same ? "yes" : "no") +
                   ", identical manifest hashes " + (manifests ? "yes" : "no") + " [" + list + "]");
        fs::remove_all(base);
    });

    criterion(9, [](int id) {
        int perfect = 0;
        double worst = 1.0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            std::mt19937_64 rng(seed);
            std::normal_distribution<double> g;
            const std::size_t each = 60;
            Coords c(static_cast<Eigen::Index>(2 * each), 3);
            std::vector<std::size_t> truth;
            for (std::size_t i = 0; i < 2 * each; ++i) {
                for (int a = 0; a < 3; ++a)
                    c(static_cast<Eigen::Index>(i), a) = 2.0 * g(rng);
                c(static_cast<Eigen::Index>(i), 0) += i < each ? -15.0 : 15.0;
                truth.push_back(i < each ? 0 : 1);
            }
            const auto p = spectral_partition_coords(c, 2, kDefaultKScale, seed);
            const double ari = adjusted_rand_index(p.assignment(), truth);
            worst = std::min(worst, ari);
            perfect += ari == 1.0;
        }
        report(id, perfect == 20, std::to_string(perfect) + "/20 seeds with ARI 1, worst " + fmt(worst));
    });

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
