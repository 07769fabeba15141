#pragma once

#include "plantmodel/point_cloud.hpp"

namespace plantmodel {

/// Point-cloud quality against a reference cloud. Distances are
/// point-to-nearest-reference-point; inputs in meters, results in mm.
///
/// Standard deviation of the nearest-reference distances under a zero-mean
/// assumption: sqrt(mean(d_i^2)), in mm.
double accuracy_mm(const PointCloud& measured, const PointCloud& reference);

/// Fraction of measured points whose nearest-reference distance is <= tol_mm.
double completeness(const PointCloud& measured, const PointCloud& reference, double tol_mm = 10.0);

/// Mean number of other points within radius_mm of each point.
double density(const PointCloud& cloud, double radius_mm = 10.0);

struct QualityReport {
    double accuracy_mm = 0.0;
    double completeness = 0.0;
    double density = 0.0;
};

QualityReport assess_quality(const PointCloud& measured, const PointCloud& reference,
                             double completeness_tol_mm = 10.0, double density_radius_mm = 10.0);

}  // namespace plantmodel
