#include "fcmesh/error.hpp"
#include "fcmesh/mesh.hpp"
#include "fcmesh/parallel.hpp"
#include "fcmesh/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace fcmesh;

namespace {

ConnectivitySet one_patch_fc(const Matrix& m)
{
    ConnectivitySet s;
    s.patches = {m};
    return s;
}

DiscriminativeSet one_patch_disc(const Matrix& m)
{
    DiscriminativeSet s;
    s.patches = {m};
    s.num_classes = 2;
    return s;
}

Patching single_patch(std::size_t m) { return Patching(std::vector<std::size_t>(m, 0), 1); }

Matrix random_symmetric(std::size_t n, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1, 1);
    Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        m(i, i) = 1;
        for (Eigen::Index j = i + 1; j < m.cols(); ++j)
            m(i, j) = m(j, i) = u(rng);
    }
    return m;
}

Dataset random_dataset(std::size_t n, std::size_t m, std::uint64_t seed, std::size_t trial_len = 6)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x.data()[i] = g(rng);
    Coords c(static_cast<Eigen::Index>(m), 3);
    for (Eigen::Index i = 0; i < c.size(); ++i)
        c.data()[i] = g(rng);
    std::vector<int> labels;
    std::vector<TrialPos> trials;
    for (std::size_t i = 0; i < n; ++i) {
        labels.push_back(static_cast<int>(i / trial_len % 2) + 1);
        trials.push_back({static_cast<std::uint32_t>(i / trial_len), static_cast<std::uint32_t>(i % trial_len)});
    }
    return Dataset::make(x, c, labels, std::vector<Phase>(n, Phase::Encoding), trials, 2);
}

}  // namespace

TEST_CASE("sign neighbourhoods on a four-voxel row")
{
    Matrix fc(4, 4);
    fc << 1, 0.9, -0.8, 0.1,  //
        0.9, 1, 0, 0,         //
        -0.8, 0, 1, 0,        //
        0.1, 0, 0, 1;
    const auto set = one_patch_fc(fc);
    const auto p = single_patch(4);
    CHECK(neighbors_by_sign(set, p, 0, 1, NeighborMode::Positive).neighbors == std::vector<std::size_t>{1});
    CHECK(neighbors_by_sign(set, p, 0, 1, NeighborMode::Negative).neighbors == std::vector<std::size_t>{2});
    CHECK(neighbors_by_sign(set, p, 0, 3, NeighborMode::Positive).neighbors == std::vector<std::size_t>{1, 3, 2});
    CHECK_THROWS_AS(neighbors_by_sign(set, p, 0, 4, NeighborMode::Positive), ConfigError);
    CHECK_THROWS_AS(neighbors_by_sign(set, p, 0, 0, NeighborMode::Positive), ConfigError);
    CHECK_THROWS_AS(neighbors_by_sign(set, p, 0, 1, NeighborMode::ThresholdStd), ConfigError);
}

TEST_CASE("greedy sign selection equals a sort of the row")
{
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        const auto fc = one_patch_fc(random_symmetric(12, rng));
        const auto p = single_patch(12);
        for (std::size_t seed = 0; seed < 12; ++seed) {
            std::vector<std::size_t> others;
            for (std::size_t k = 0; k < 12; ++k)
                if (k != seed)
                    others.push_back(k);
            auto row = [&](std::size_t k) {
                return fc.patches[0](static_cast<Eigen::Index>(seed), static_cast<Eigen::Index>(k));
            };
            std::vector<std::size_t> desc = others, asc = others;
            std::stable_sort(desc.begin(), desc.end(), [&](auto a, auto b) { return row(a) > row(b); });
            std::stable_sort(asc.begin(), asc.end(), [&](auto a, auto b) { return row(a) < row(b); });
            desc.resize(4);
            asc.resize(4);
            CHECK(neighbors_by_sign(fc, p, seed, 4, NeighborMode::Positive).neighbors == desc);
            CHECK(neighbors_by_sign(fc, p, seed, 4, NeighborMode::Negative).neighbors == asc);
            const auto all = neighbors_by_sign(fc, p, seed, 11, NeighborMode::Positive).neighbors;
            auto sorted = all;
            std::sort(sorted.begin(), sorted.end());
            CHECK(sorted == others);
        }
    }
}

TEST_CASE("sign neighbourhoods stay inside the seed's patch")
{
    std::mt19937_64 rng(4);
    ConnectivitySet fc;
    fc.patches = {random_symmetric(3, rng), random_symmetric(5, rng)};
    const Patching p({1, 0, 1, 0, 1, 0, 1, 1}, 2);
    const auto hoods = all_neighbors_by_sign(fc, p, 2, NeighborMode::Positive);
    REQUIRE(hoods.size() == 8);
    for (const auto& h : hoods) {
        CHECK(h.order() == 2);
        for (auto k : h.neighbors) {
            CHECK(k != h.seed);
            CHECK(p.patch_of(k) == p.patch_of(h.seed));
        }
    }
}

TEST_CASE("threshold neighbourhoods")
{
    Matrix disc(4, 4);
    disc << 0, 0.2, 0.6, 0.9,  //
        0.2, 0, 0, 0,          //
        0.6, 0, 0, 0,          //
        0.9, 0, 0, 0;
    const auto set = one_patch_disc(disc);
    const auto p = single_patch(4);
    CHECK(neighbors_by_threshold(set, p, 0, 0.5).neighbors == std::vector<std::size_t>{2, 3});
    CHECK(neighbors_by_threshold(set, p, 0, 0.0).order() == 3);
    CHECK(neighbors_by_threshold(set, p, 0, 0.95).order() == 0);
    CHECK(neighbors_by_threshold(set, p, 0, 0.9).order() == 1);
    CHECK_THROWS_AS(neighbors_by_threshold(set, p, 0, 1.01), ConfigError);
    CHECK_THROWS_AS(neighbors_by_threshold(set, p, 0, -0.1), ConfigError);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    Matrix r(10, 10);
    for (Eigen::Index i = 0; i < 10; ++i)
        for (Eigen::Index j = i; j < 10; ++j)
            r(i, j) = r(j, i) = i == j ? 0.0 : u(rng);
    const auto rs = one_patch_disc(r);
    const auto p10 = single_patch(10);
    for (std::size_t seed = 0; seed < 10; ++seed) {
        std::size_t prev = 10;
        for (int t = 0; t <= 20; ++t) {
            const auto h = neighbors_by_threshold(rs, p10, seed, t * 0.05);
            CHECK(h.order() <= prev);
            prev = h.order();
        }
    }
}

TEST_CASE("euclidean neighbourhoods match brute force")
{
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 10);
    Coords c(25, 3);
    for (Eigen::Index i = 0; i < c.size(); ++i)
        c.data()[i] = u(rng);
    for (std::size_t seed = 0; seed < 25; ++seed) {
        std::vector<std::pair<double, std::size_t>> d;
        for (std::size_t k = 0; k < 25; ++k)
            if (k != seed) {
                double s = 0;
                for (int a = 0; a < 3; ++a) {
                    const double diff = c(static_cast<Eigen::Index>(k), a) - c(static_cast<Eigen::Index>(seed), a);
                    s += diff * diff;
                }
                d.emplace_back(s, k);
            }
        std::sort(d.begin(), d.end());
        std::vector<std::size_t> want;
        for (int r = 0; r < 5; ++r)
            want.push_back(d[static_cast<std::size_t>(r)].second);
        CHECK(neighbors_by_euclidean(c, seed, 5).neighbors == want);
    }
    CHECK_THROWS_AS(neighbors_by_euclidean(c, 0, 25), ConfigError);
}

TEST_CASE("arc weights: identity and scaling")
{
    Matrix x(3, 1);
    x << 1, 2, 3;
    const std::vector<double> y{1, 2, 3};
    const auto fit = estimate_arc_weights(y, x, 0.0);
    CHECK(fit.weights(0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(fit.residual_energy <= 1e-24);
    const std::vector<double> y2{2, 4, 6};
    CHECK(estimate_arc_weights(y2, x, 0.0).weights(0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(estimate_arc_weights(y2, x, std::nullopt).weights(0) == doctest::Approx(2.0).epsilon(1e-7));
    CHECK_THROWS_AS(estimate_arc_weights(y2, x, -1.0), ConfigError);
    CHECK_THROWS_AS(estimate_arc_weights(std::vector<double>{1, 2}, x, 0.0), ComputeError);
    CHECK_THROWS_AS(estimate_arc_weights(y2, Matrix::Zero(3, 1), 0.0), ComputeError);
}

TEST_CASE("arc weights match the pseudo-inverse oracle and satisfy the normal equations")
{
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> pick_p(1, 4), pick_r(1, 16);
    for (int rep = 0; rep < 300; ++rep) {
        const int p = pick_p(rng);
        const int r = pick_r(rng);
        Matrix x(r, p);
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x.data()[i] = g(rng);
        std::vector<double> y(static_cast<std::size_t>(r));
        for (auto& v : y)
            v = g(rng);
        const auto fit = estimate_arc_weights(y, x, 0.0);
        const Vector want = oracle_least_squares(y, x);
        CHECK((fit.weights - want).norm() <= 1e-8 * std::max(1.0, want.norm()));
        if (r >= p) {
            const Eigen::Map<const Vector> yv(y.data(), r);
            const Vector grad = x.transpose() * (yv - x * fit.weights);
            CHECK(grad.norm() <= 1e-10 * std::max(1.0, (x.transpose() * yv).norm()));
        }
    }
}

TEST_CASE("window resolution")
{
    const auto d = random_dataset(12, 3, 1, 4);
    const auto trial = resolve_windows(d, {});
    CHECK(trial.rows.size() == 3);
    CHECK(trial.of_sample[5] == 1);
    CHECK(trial.rows[2] == std::vector<std::size_t>{8, 9, 10, 11});

    const auto slide = resolve_windows(d, {WindowSpec::Kind::Sliding, 5});
    CHECK(slide.rows.size() == 8);
    CHECK(slide.rows[slide.of_sample[0]] == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(slide.rows[slide.of_sample[6]] == std::vector<std::size_t>{4, 5, 6, 7, 8});
    CHECK(slide.rows[slide.of_sample[11]] == std::vector<std::size_t>{7, 8, 9, 10, 11});
    CHECK_THROWS_AS(resolve_windows(d, {WindowSpec::Kind::Sliding, 13}), DataError);
    CHECK_THROWS_AS(resolve_windows(d, {WindowSpec::Kind::Sliding, 0}), ConfigError);

    const auto flat = Dataset::make(d.signals(), d.coords(), d.labels(), std::vector<Phase>(d.num_samples(), Phase::Encoding), std::nullopt, 2);
    CHECK_THROWS_AS(resolve_windows(flat, {WindowSpec::Kind::Trial, 5}), DataError);
    CHECK(resolve_windows(flat, {}).rows.size() == 8);
}

TEST_CASE("FC-LRF extraction")
{
    const auto d = random_dataset(24, 6, 2);

    SUBCASE("all neighbourhoods empty")
    {
        std::vector<Neighborhood> hoods(6);
        for (std::size_t j = 0; j < 6; ++j)
            hoods[j].seed = j;
        CHECK_THROWS_AS(extract_fc_lrf(d, hoods, {}, std::nullopt), ComputeError);
    }

    SUBCASE("identical neighbour gives unit weights")
    {
        Matrix x = d.signals();
        x.col(1) = x.col(0);
        const auto dd = Dataset::make(x, d.coords(), d.labels(), std::vector<Phase>(d.num_samples(), Phase::Encoding), d.trials(), 2);
        std::vector<Neighborhood> hoods{{0, {1}, NeighborMode::Positive}};
        const auto f = extract_fc_lrf(dd, hoods, {}, 0.0);
        REQUIRE(f.num_features() == 1);
        for (Eigen::Index i = 0; i < f.values.rows(); ++i)
            CHECK(f.values(i, 0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(f.discarded.size() == 5);
    }

    SUBCASE("values equal per-window regressions; layout follows the column map")
    {
        std::vector<Neighborhood> hoods{{3, {0, 5}, NeighborMode::Positive}, {1, {2}, NeighborMode::Negative}};
        const auto f = extract_fc_lrf(d, hoods, {}, 0.0);
        using Pair = std::pair<std::uint32_t, std::uint32_t>;
        CHECK(f.column_map == std::vector<Pair>{{1, 2}, {3, 0}, {3, 5}});
        const auto w = resolve_windows(d, {});
        for (std::size_t i = 0; i < d.num_samples(); ++i) {
            const auto& rows = w.rows[w.of_sample[i]];
            std::vector<double> seed;
            Matrix x(static_cast<Eigen::Index>(rows.size()), 2);
            for (std::size_t t = 0; t < rows.size(); ++t) {
                const auto row = static_cast<Eigen::Index>(rows[t]);
                seed.push_back(d.signals()(row, 3));
                x(static_cast<Eigen::Index>(t), 0) = d.signals()(row, 0);
                x(static_cast<Eigen::Index>(t), 1) = d.signals()(row, 5);
            }
            const Vector a = oracle_least_squares(seed, x);
            CHECK(f.values(static_cast<Eigen::Index>(i), 1) == doctest::Approx(a(0)).epsilon(1e-9));
            CHECK(f.values(static_cast<Eigen::Index>(i), 2) == doctest::Approx(a(1)).epsilon(1e-9));
        }
    }

    SUBCASE("train and test share the column map")
    {
        std::mt19937_64 rng(9);
        ConnectivitySet fc;
        fc.patches = {random_symmetric(6, rng)};
        const auto hoods = all_neighbors_by_sign(fc, single_patch(6), 2, NeighborMode::Positive);
        std::vector<std::size_t> a(12), b(12);
        std::iota(a.begin(), a.end(), 0);
        std::iota(b.begin(), b.end(), 12);
        const auto fa = extract_fc_lrf(d.subset_rows(a), hoods, {}, std::nullopt);
        const auto fb = extract_fc_lrf(d.subset_rows(b), hoods, {}, std::nullopt);
        CHECK(fa.column_map == fb.column_map);
        CHECK(fa.fingerprint() == fb.fingerprint());
        CHECK(fa.values.rows() == 12);
    }

    SUBCASE("invalid neighbourhoods")
    {
        CHECK_THROWS_AS(extract_fc_lrf(d, {{0, {0}, NeighborMode::Positive}}, {}, std::nullopt), DataError);
        CHECK_THROWS_AS(extract_fc_lrf(d, {{0, {9}, NeighborMode::Positive}}, {}, std::nullopt), DataError);
        CHECK_THROWS_AS(
            extract_fc_lrf(d, {{0, {1}, NeighborMode::Positive}, {0, {2}, NeighborMode::Positive}}, {}, std::nullopt),
            DataError);
    }
}

TEST_CASE("FC-LRF is bitwise identical across worker counts")
{
    const auto d = random_dataset(60, 40, 11, 5);
    const auto hoods = all_neighbors_by_euclidean(d.coords(), 3);
    set_worker_count(1);
    const auto f1 = extract_fc_lrf(d, hoods, {}, std::nullopt);
    set_worker_count(4);
    const auto f4 = extract_fc_lrf(d, hoods, {}, std::nullopt);
    set_worker_count(1);
    CHECK(feature_binary(f1) == feature_binary(f4));
    CHECK(f1.values == f4.values);
}

TEST_CASE("planted arc signs are recovered at SNR 10")
{
    SynthSpec s;
    s.voxels = 60;
    s.communities = 30;
    s.num_classes = 2;
    s.coupling = 0.9;
    s.noise = std::sqrt(0.1);
    s.mesh_order = 1;
    s.scans_per_class = 100;
    s.trial_length = 10;
    s.lag = 0;
    s.retrieval = false;
    s.seed = 4;
    const auto out = generate_synthetic(s);
    const auto& d = out.dataset;

    std::size_t agree = 0, total = 0;
    for (int w = 1; w <= 2; ++w) {
        std::vector<Neighborhood> hoods;
        std::vector<double> planted;
        for (const auto& arc : out.truth.arcs)
            if (arc.label == w) {
                hoods.push_back({arc.seed, arc.neighbors, NeighborMode::Positive});
                planted.push_back(arc.weights.at(0));
            }
        const auto f = extract_fc_lrf(d, hoods, {}, std::nullopt);
        REQUIRE(f.column_map.size() == hoods.size());
        for (std::size_t c = 0; c < hoods.size(); ++c)
            REQUIRE(f.column_map[c].first == hoods[c].seed);
        for (std::size_t i = 0; i < d.num_samples(); ++i) {
            if (d.labels()[i] != w)
                continue;
            for (std::size_t c = 0; c < f.column_map.size(); ++c) {
                agree += (f.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) > 0) == (planted[c] > 0);
                ++total;
            }
        }
    }
    CHECK(static_cast<double>(agree) >= 0.9 * static_cast<double>(total));
}

TEST_CASE("neighbourhood SSD against a direct sum")
{
    const auto d = random_dataset(10, 5, 3);
    const Neighborhood h{2, {0, 4}, NeighborMode::Euclidean};
    const auto ssd = neighborhood_ssd(d, 2, h);
    const auto& s = d.signals();
    for (Eigen::Index i = 0; i < 10; ++i) {
        const double a = s(i, 2) - s(i, 0), b = s(i, 2) - s(i, 4);
        CHECK(ssd[static_cast<std::size_t>(i)] == doctest::Approx(a * a + b * b).epsilon(1e-14));
    }
    Matrix same = s;
    same.col(1) = same.col(0);
    const auto ds = Dataset::make(same, d.coords(), d.labels(), std::vector<Phase>(d.num_samples(), Phase::Encoding), d.trials(), 2);
    for (double v : neighborhood_ssd(ds, 0, {0, {1}, NeighborMode::Euclidean}))
        CHECK(v == 0.0);
    Matrix unit = Matrix::Zero(10, 2);
    unit.col(0).setOnes();
    const auto du = Dataset::make(unit, Coords::Zero(2, 3), d.labels(), std::vector<Phase>(10, Phase::Encoding),
                                  std::nullopt, 2);
    for (double v : neighborhood_ssd(du, 0, {0, {1}, NeighborMode::Euclidean}))
        CHECK(v == 1.0);
    CHECK_THROWS_AS(neighborhood_ssd(d, 0, {0, {}, NeighborMode::Euclidean}), ComputeError);
}

TEST_CASE("feature files round-trip")
{
    FeatureMatrix f;
    f.values.resize(2, 3);
    f.values << 0.5, -1.25, 3, 0, 2.5, -0.125;
    f.column_map = {{0, 1}, {0, 2}, {4, 3}};
    const auto bytes = feature_binary(f);
    const auto back = parse_feature_binary(bytes);
    CHECK(back.values == f.values);
    CHECK(back.column_map == f.column_map);
    CHECK(back.fingerprint() == f.fingerprint());
    CHECK_THROWS_AS(parse_feature_binary(bytes.substr(0, bytes.size() - 1)), DataError);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(parse_feature_binary(bad), DataError);

    CHECK(feature_csv(f) == "a1_2,a1_3,a5_4\n0.5,-1.25,3\n0,2.5,-0.125\n");
    CHECK(neighborhoods_csv({{0, {2, 1}, NeighborMode::Positive}}).find("1,3,1,") != std::string::npos);
}
