#include "fcmesh/error.hpp"
#include "fcmesh/synth.hpp"

#include <doctest.h>

#include <Eigen/QR>

#include <cmath>
#include <random>

using namespace fcmesh;

namespace {

// Pearson coefficient of voxels j, k over the scans labelled w.
double class_corr(const Dataset& d, int w, std::size_t j, std::size_t k)
{
    std::vector<double> x, y;
    for (std::size_t i = 0; i < d.num_samples(); ++i)
        if (d.labels()[i] == w) {
            x.push_back(d.signals()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            y.push_back(d.signals()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
        }
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

SynthSpec small_spec()
{
    SynthSpec s;
    s.voxels = 24;
    s.communities = 4;
    s.num_classes = 2;
    s.scans_per_class = 200;
    s.trial_length = 10;
    s.lag = 0;
    s.retrieval = false;
    s.mesh_order = 2;
    return s;
}

}  // namespace

TEST_CASE("layout of the generated dataset")
{
    SynthSpec s;
    s.voxels = 40;
    s.communities = 5;
    s.num_classes = 3;
    s.scans_per_class = 20;
    s.trial_length = 5;
    const auto out = generate_synthetic(s);
    const auto& d = out.dataset;
    CHECK(d.num_voxels() == 40);
    CHECK(d.num_samples() == 3 * 20 * 2);
    CHECK(d.num_classes() == 3);
    REQUIRE(d.has_trials());
    for (std::size_t i = 0; i < d.num_samples(); ++i) {
        CHECK((*d.trials())[i].scan == i % 5);
        CHECK(d.phase()[i] == (i < 60 ? Phase::Encoding : Phase::Retrieval));
    }
    for (int w = 1; w <= 3; ++w) {
        std::size_t count = 0;
        for (int l : d.labels())
            count += l == w;
        CHECK(count == 40);
    }
    CHECK(out.truth.arcs.size() == 3 * 40);
    for (const auto& a : out.truth.arcs) {
        CHECK(a.neighbors.size() == 3);
        for (auto k : a.neighbors)
            CHECK(out.truth.community[k] == out.truth.community[a.seed]);
    }
    CHECK(ground_truth_json(out.truth).find("\"arcs\"") != std::string::npos);
}

TEST_CASE("generator is deterministic in its seed")
{
    const auto a = generate_synthetic(small_spec());
    const auto b = generate_synthetic(small_spec());
    CHECK(a.dataset.signals() == b.dataset.signals());
    CHECK(a.dataset.labels() == b.dataset.labels());
    auto other = small_spec();
    other.seed = 2;
    CHECK(generate_synthetic(other).dataset.signals() != a.dataset.signals());
}

TEST_CASE("noise-free full coupling gives unit correlations inside a community")
{
    auto s = small_spec();
    s.noise = 0.0;
    s.coupling = 1.0;
    const auto out = generate_synthetic(s);
    for (int w = 1; w <= 2; ++w)
        for (std::size_t j = 0; j < 6; ++j)
            for (std::size_t k = j + 1; k < 6; ++k) {
                const double r = class_corr(out.dataset, w, j, k);
                CHECK(std::abs(std::abs(r) - 1.0) <= 1e-12);
                CHECK(r * out.truth.expected_correlation(w, j, k) > 0.0);
            }
}

TEST_CASE("zero coupling gives correlations at the sampling noise level")
{
    auto s = small_spec();
    s.coupling = 0.0;
    const auto out = generate_synthetic(s);
    const double bound = 4.0 / std::sqrt(200.0);
    for (std::size_t j = 0; j < 24; ++j)
        for (std::size_t k = j + 1; k < 24; ++k) {
            CHECK(std::abs(class_corr(out.dataset, 1, j, k)) < bound);
            CHECK(out.truth.expected_correlation(1, j, k) == 0.0);
        }
}

TEST_CASE("planted correlations are recovered with their sign")
{
    auto s = small_spec();
    s.coupling = 0.8;
    s.noise = 0.3;
    s.scans_per_class = 1000;
    const auto out = generate_synthetic(s);
    std::size_t agree = 0, total = 0, opposite = 0;
    const double planted = 0.64 / 1.09;
    for (std::size_t j = 0; j < 24; ++j)
        for (std::size_t k = j + 1; k < 24; ++k) {
            if (out.truth.community[j] != out.truth.community[k])
                continue;
            const double e1 = out.truth.expected_correlation(1, j, k);
            const double e2 = out.truth.expected_correlation(2, j, k);
            CHECK(std::abs(e1) == doctest::Approx(planted));
            const double r1 = class_corr(out.dataset, 1, j, k);
            const double r2 = class_corr(out.dataset, 2, j, k);
            CHECK(std::abs(r1 - e1) < 0.1);
            agree += (r1 > 0) == (e1 > 0);
            agree += (r2 > 0) == (e2 > 0);
            total += 2;
            if (e1 * e2 < 0) {
                // sample std of two opposite values ±c is √2·c
                const double mean = (r1 + r2) / 2;
                const double sd = std::sqrt((r1 - mean) * (r1 - mean) + (r2 - mean) * (r2 - mean));
                CHECK(sd == doctest::Approx(std::sqrt(2.0) * planted).epsilon(0.1));
                ++opposite;
            }
        }
    CHECK(static_cast<double>(agree) >= 0.99 * static_cast<double>(total));
    CHECK(opposite > 0);
}

TEST_CASE("explicit correlation targets")
{
    auto s = small_spec();
    s.voxels = 12;
    s.communities = 4;
    s.noise = 0.0;
    s.scans_per_class = 2000;
    Matrix r(3, 3);
    r << 1, 0.5, -0.3, 0.5, 1, 0.2, -0.3, 0.2, 1;
    Matrix rank1(3, 3);
    rank1 << 1, 1, -1, 1, 1, -1, -1, -1, 1;
    s.correlation = {r, rank1};
    const auto out = generate_synthetic(s);
    CHECK(class_corr(out.dataset, 1, 0, 1) == doctest::Approx(0.5).epsilon(0.15));
    CHECK(class_corr(out.dataset, 1, 0, 2) == doctest::Approx(-0.3).epsilon(0.2));
    CHECK(class_corr(out.dataset, 2, 3, 4) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(class_corr(out.dataset, 2, 3, 5) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(out.truth.expected_correlation(1, 4, 5) == 0.2);

    Matrix bad(3, 3);
    bad << 1, -0.9, -0.9, -0.9, 1, -0.9, -0.9, -0.9, 1;
    s.correlation = {bad, r};
    CHECK_THROWS_AS(generate_synthetic(s), ConfigError);
}

TEST_CASE("spec validation")
{
    auto s = small_spec();
    s.coupling = 1.2;
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = small_spec();
    s.mesh_order = 6;
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = small_spec();
    s.scans_per_class = 25;
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = small_spec();
    s.num_classes = 1;
    CHECK_THROWS_AS(validate(s), ConfigError);
}

TEST_CASE("synth spec from json")
{
    const auto s = synth_spec_from_json(R"({"voxels": 50, "communities": 5, "seed": 9})");
    CHECK(s.voxels == 50);
    CHECK(s.seed == 9);
    CHECK(s.noise == SynthSpec{}.noise);
    CHECK(synth_spec_from_json(R"({"synth": {"voxels": 30, "communities": 3}})").voxels == 30);
    CHECK_THROWS_AS(synth_spec_from_json(R"({"voxel": 50})"), ConfigError);
    CHECK_THROWS_AS(synth_spec_from_json(R"({"voxels": "many"})"), ConfigError);
    CHECK_THROWS_AS(synth_spec_from_json("{"), ConfigError);
}

TEST_CASE("least-squares oracle on known systems")
{
    const std::vector<double> y{1.5, -2, 0.25};
    const auto id = oracle_least_squares(y, Matrix::Identity(3, 3));
    for (Eigen::Index i = 0; i < 3; ++i)
        CHECK(id(i) == doctest::Approx(y[static_cast<std::size_t>(i)]).epsilon(1e-14));

    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    Matrix a(5, 5);
    for (Eigen::Index i = 0; i < a.size(); ++i)
        a.data()[i] = g(rng);
    const Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ();
    std::vector<double> y5(5);
    for (auto& v : y5)
        v = g(rng);
    const Eigen::Map<const Vector> yv(y5.data(), 5);
    CHECK((oracle_least_squares(y5, q) - q.transpose() * yv).norm() <= 1e-12);

    Matrix x(10, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x.data()[i] = g(rng);
    std::vector<double> y10(10);
    for (auto& v : y10)
        v = g(rng);
    const Eigen::Map<const Vector> y10v(y10.data(), 10);
    const Vector normal = (x.transpose() * x).ldlt().solve(x.transpose() * y10v);
    CHECK((oracle_least_squares(y10, x) - normal).norm() <= 1e-8);

    // underdetermined: minimum-norm solution lies in the row space
    Matrix wide(1, 2);
    wide << 3, 4;
    const auto mn = oracle_least_squares(std::vector<double>{5}, wide);
    CHECK(mn(0) == doctest::Approx(0.6));
    CHECK(mn(1) == doctest::Approx(0.8));
}

TEST_CASE("all-pairs oracle on identical voxels")
{
    Matrix x(4, 2);
    x << 1, 1, 3, 3, 2, 2, 7, 7;
    const auto d = Dataset::make(x, Coords::Zero(2, 3), {1, 2, 1, 2}, std::vector<Phase>(4, Phase::Encoding),
                                 std::nullopt, 2);
    CHECK(oracle_all_pairs_correlation(d) == Matrix::Ones(2, 2));
    Matrix c = x;
    c.col(1).setConstant(2.0);
    const auto dc = Dataset::make(c, Coords::Zero(2, 3), {1, 2, 1, 2}, std::vector<Phase>(4, Phase::Encoding),
                                  std::nullopt, 2);
    CHECK_THROWS_AS(oracle_all_pairs_correlation(dc), DataError);
}
