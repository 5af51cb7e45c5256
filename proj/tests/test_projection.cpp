#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ecsac/projection.hpp"

using namespace ecsac;

namespace {

std::vector<std::vector<double>> gaussian_cloud(std::size_t n, std::size_t dim, Rng& rng) {
    std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
    for (auto& p : pts)
        for (double& v : p) v = rng.normal();
    return pts;
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sq);
}

} // namespace

TEST_CASE("zero input projects to the zero key") {
    ProjectionMatrix pm(6, 3, 42);
    const std::vector<double> state(4, 0.0), action(2, 0.0);
    for (double k : pm.project(state, action)) CHECK(k == 0.0);
}

TEST_CASE("projection is linear: F(x+y) == F(x) + F(y)") {
    ProjectionMatrix pm(10, 4, 1);
    Rng rng(2);
    for (int it = 0; it < 20; ++it) {
        std::vector<double> x(10), y(10), xy(10);
        for (std::size_t i = 0; i < 10; ++i) {
            x[i] = rng.uniform(-2.0, 2.0);
            y[i] = rng.uniform(-2.0, 2.0);
            xy[i] = x[i] + y[i];
        }
        const auto fx = pm.project_concat(x);
        const auto fy = pm.project_concat(y);
        const auto fxy = pm.project_concat(xy);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(std::abs(fxy[i] - (fx[i] + fy[i])) < 1e-12);
    }
}

TEST_CASE("same seed and dims reproduce the same keys; the matrix is frozen") {
    ProjectionMatrix a(8, 3, 99);
    ProjectionMatrix b(8, 3, 99);
    ProjectionMatrix c(8, 3, 100);
    Rng rng(5);
    std::vector<double> x(8);
    for (double& v : x) v = rng.normal();
    const auto ka = a.project_concat(x);
    const auto kb = b.project_concat(x);
    const auto kc = c.project_concat(x);
    bool differs = false;
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(ka[i] == kb[i]);
        differs = differs || ka[i] != kc[i];
    }
    CHECK(differs);
}

TEST_CASE("concatenation order is [state; action]") {
    Matrix entries(2, 3);
    // Row 0 picks out component 0, row 1 picks out component 2.
    entries(0, 0) = 1.0;
    entries(1, 2) = 1.0;
    ProjectionMatrix pm(entries);
    const std::vector<double> state = {7.0, 8.0};
    const std::vector<double> action = {9.0};
    const auto key = pm.project(state, action);
    CHECK(key[0] == 7.0);
    CHECK(key[1] == 9.0);
    CHECK_THROWS_AS(pm.project(state, state), ConfigError);
}

TEST_CASE("entry statistics match N(0, 1/target_dim)") {
    const std::size_t m = 32;
    ProjectionMatrix pm(64, m, 7);
    double sum = 0.0, sq = 0.0;
    for (double e : pm.entries().data) {
        sum += e;
        sq += e * e;
    }
    const double n = static_cast<double>(pm.entries().data.size());
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(sq / n == doctest::Approx(1.0 / m).epsilon(0.1));
}

TEST_CASE("distortion report: identical points are skipped, not ratioed") {
    ProjectionMatrix pm(4, 2, 3);
    std::vector<std::vector<double>> pts = {{1.0, 2.0, 3.0, 4.0}, {1.0, 2.0, 3.0, 4.0}};
    const auto rep = distortion_report(pm, pts);
    CHECK(rep.valid_pairs == 0);
    CHECK(rep.skipped_pairs == 1);
    CHECK_THROWS_AS(distortion_report(pm, {pts[0]}), ConfigError);
}

TEST_CASE("distortion report: identity projection has every ratio exactly 1") {
    const std::size_t d = 5;
    Matrix eye(d, d);
    for (std::size_t i = 0; i < d; ++i) eye(i, i) = 1.0;
    ProjectionMatrix pm(eye);

    Rng rng(8);
    const auto pts = gaussian_cloud(20, d, rng);
    const auto rep = distortion_report(pm, pts);
    CHECK(rep.valid_pairs == 20 * 19 / 2);
    CHECK(rep.min_ratio == 1.0);
    CHECK(rep.max_ratio == 1.0);
    CHECK(rep.mean_ratio == 1.0);
}

TEST_CASE("distortion report: random cloud mean ratio lands near 1") {
    ProjectionMatrix pm(32, 16, 12);
    Rng rng(13);
    const auto pts = gaussian_cloud(100, 32, rng);
    const auto rep = distortion_report(pm, pts);
    CHECK(rep.mean_ratio > 0.8);
    CHECK(rep.mean_ratio < 1.2);
    CHECK(rep.min_ratio > 0.0);
    CHECK(std::isfinite(rep.max_ratio));
    std::size_t hist_total = 0;
    for (auto c : rep.histogram) hist_total += c;
    CHECK(hist_total == rep.valid_pairs);
}

TEST_CASE("statistical JL shadow: 500 points R^64 -> R^32, >= 99% of ratios within [0.5, 1.5]") {
    ProjectionMatrix pm(64, 32, 2024);
    Rng rng(777); // cloud stream independent of the matrix stream
    const auto pts = gaussian_cloud(500, 64, rng);

    // Brute-force oracle over all pairs, independent of the report path.
    std::vector<std::vector<double>> projected;
    projected.reserve(pts.size());
    for (const auto& p : pts) projected.push_back(pm.project_concat(p));

    std::size_t within = 0, total = 0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const double d0 = l2(pts[i], pts[j]);
            REQUIRE(d0 > 0.0);
            const double r = l2(projected[i], projected[j]) / d0;
            ++total;
            if (r >= 0.5 && r <= 1.5) ++within;
        }
    CHECK(static_cast<double>(within) / static_cast<double>(total) >= 0.99);

    // The engine's own report must agree with the oracle count.
    const auto rep = distortion_report(pm, pts);
    CHECK(rep.valid_pairs == total);
    CHECK(rep.fraction_within(0.5, 1.5) == static_cast<double>(within) / static_cast<double>(total));
}
