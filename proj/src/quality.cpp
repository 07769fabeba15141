#include "plantmodel/quality.hpp"

#include "plantmodel/error.hpp"
#include "plantmodel/spatial_index.hpp"

#include <cmath>

namespace plantmodel {

namespace {

void require_non_empty(const PointCloud& c, const char* which) {
    if (c.empty()) throw ValidationError(std::string(which) + " cloud is empty");
}

}  // namespace

double accuracy_mm(const PointCloud& measured, const PointCloud& reference) {
    require_non_empty(measured, "measured");
    require_non_empty(reference, "reference");
    const SpatialIndex index(reference.points);
    double sum_sq = 0.0;
    for (const auto& p : measured.points) {
        const double d = index.nearest(p).distance * 1000.0;
        sum_sq += d * d;
    }
    return std::sqrt(sum_sq / static_cast<double>(measured.size()));
}

double completeness(const PointCloud& measured, const PointCloud& reference, double tol_mm) {
    require_non_empty(measured, "measured");
    require_non_empty(reference, "reference");
    if (!(tol_mm >= 0.0)) throw ValidationError("completeness tolerance must be non-negative");
    const SpatialIndex index(reference.points);
    std::size_t within = 0;
    for (const auto& p : measured.points) {
        if (index.nearest(p).distance * 1000.0 <= tol_mm) ++within;
    }
    return static_cast<double>(within) / static_cast<double>(measured.size());
}

double density(const PointCloud& cloud, double radius_mm) {
    require_non_empty(cloud, "input");
    if (!(radius_mm >= 0.0)) throw ValidationError("density radius must be non-negative");
    const SpatialIndex index(cloud.points);
    const double r = radius_mm / 1000.0;
    std::size_t total = 0;
    for (const auto& p : cloud.points) total += index.count_within(p, r) - 1;  // self excluded
    return static_cast<double>(total) / static_cast<double>(cloud.size());
}

QualityReport assess_quality(const PointCloud& measured, const PointCloud& reference,
                             double completeness_tol_mm, double density_radius_mm) {
    return {accuracy_mm(measured, reference), completeness(measured, reference, completeness_tol_mm),
            density(measured, density_radius_mm)};
}

}  // namespace plantmodel
