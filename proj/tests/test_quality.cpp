#include <doctest.h>

#include "plantmodel/error.hpp"
#include "plantmodel/quality.hpp"
#include "test_support.hpp"

#include <random>

using namespace plantmodel;

namespace {
PointCloud cloud_of(std::initializer_list<Vec3> pts) {
    PointCloud c;
    c.points = pts;
    return c;
}
}  // namespace

TEST_CASE("accuracy is the zero-mean standard deviation of nearest distances") {
    const auto ref = cloud_of({Vec3(0, 0, 0), Vec3(10, 0, 0)});
    CHECK(accuracy_mm(ref, ref) == 0.0);

    // 3 mm and 4 mm from the reference: sqrt((9 + 16) / 2).
    const auto measured = cloud_of({Vec3(0.003, 0, 0), Vec3(10, 0.004, 0)});
    CHECK(accuracy_mm(measured, ref) == doctest::Approx(3.5355339059).epsilon(1e-9));
}

TEST_CASE("completeness counts points within the tolerance, boundary inclusive") {
    const auto ref = cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0)});
    CHECK(completeness(ref, ref) == 1.0);
    CHECK(completeness(ref, ref, 0.0) == 1.0);

    const auto displaced = cloud_of({Vec3(0, 0, 0), Vec3(1, 0.020, 0)});
    CHECK(completeness(displaced, ref) == 0.5);
    CHECK_THROWS_AS(completeness(displaced, ref, -1.0), ValidationError);
}

TEST_CASE("density excludes the query point") {
    CHECK(density(cloud_of({Vec3(0, 0, 0)})) == 0.0);
    CHECK(density(cloud_of({Vec3(0, 0, 0), Vec3(0.005, 0, 0)})) == 1.0);
}

TEST_CASE("metrics reject empty clouds") {
    const auto one = cloud_of({Vec3(0, 0, 0)});
    CHECK_THROWS_AS(accuracy_mm(PointCloud{}, one), ValidationError);
    CHECK_THROWS_AS(accuracy_mm(one, PointCloud{}), ValidationError);
    CHECK_THROWS_AS(completeness(PointCloud{}, one), ValidationError);
    CHECK_THROWS_AS(density(PointCloud{}), ValidationError);
}

TEST_CASE("metrics agree with brute-force oracles") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        // ~1 cm spacing so that the 10 mm thresholds are non-trivial.
        const std::size_t n = 50 + rng() % 400;
        auto measured = testing::random_cloud(rng, n, 0.08);
        auto reference = testing::random_cloud(rng, 50 + rng() % 400, 0.08);
        CHECK(std::abs(accuracy_mm(measured, reference) - testing::brute_accuracy_mm(measured, reference)) <= 1e-9);
        CHECK(std::abs(completeness(measured, reference) - testing::brute_completeness(measured, reference, 10.0)) <=
              1e-9);
        CHECK(density(measured) == testing::brute_density(measured, 10.0));
    }
}
