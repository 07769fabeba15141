#pragma once

#include "plantmodel/classes.hpp"
#include "plantmodel/point_cloud.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

namespace plantmodel {

inline constexpr int kNoise = -1;

struct ClusterAssignment {
    std::vector<int> labels;      // cluster id or kNoise
    std::vector<bool> uncertain;  // per point
    int n_clusters = 0;
    double runtime_s = 0.0;

    std::size_t size() const { return labels.size(); }
};

/// Renumbers non-noise ids to 0..n-1 in order of first appearance and sets
/// n_clusters accordingly.
void compact_labels(ClusterAssignment& a);

/// Lloyd iterations from k-means++ seeding. `sse_trace`, when given, receives
/// the within-cluster sum of squares after every assignment step.
ClusterAssignment kmeans(std::span<const Vec3> points, int k, std::uint64_t seed, int max_iter = 300,
                         double tol = 1e-6, std::vector<double>* sse_trace = nullptr);

/// Same on d x n column data; keeps the best of `n_init` seedings by SSE.
ClusterAssignment kmeans(const Eigen::MatrixXd& data, int k, std::uint64_t seed, int max_iter = 300, double tol = 1e-6,
                         int n_init = 1, std::vector<double>* sse_trace = nullptr);

/// Memberships (n x c) of points given fixed centroids. A point that
/// coincides with a centroid belongs to it fully.
Eigen::MatrixXd fuzzy_memberships(std::span<const Vec3> points, std::span<const Vec3> centroids, double fuzzifier);

struct FuzzyResult {
    ClusterAssignment assignment;
    Eigen::MatrixXd membership;  // n x c
    std::vector<Vec3> centroids;
};

/// Hard label = argmax membership; uncertain iff max membership < `uncertain_below`.
FuzzyResult fuzzy_cmeans(std::span<const Vec3> points, int c, double fuzzifier, std::uint64_t seed,
                         int max_iter = 300, double tol = 1e-6, double uncertain_below = 0.6);

/// Core points have at least `min_pts` neighbors within `eps`, counting
/// themselves. Noise points are flagged uncertain.
ClusterAssignment dbscan(std::span<const Vec3> points, double eps, int min_pts);

struct OpticsResult {
    std::vector<std::size_t> ordering;
    std::vector<double> reachability;  // by point index; +inf if undefined
    std::vector<double> core_distance;
    std::vector<long> predecessor;     // -1 if none
};

/// Reachability ordering. The next point is the unprocessed one with the
/// smallest reachability, ties to the lower index.
OpticsResult optics_ordering(std::span<const Vec3> points, int min_pts,
                             double max_eps = std::numeric_limits<double>::infinity());

struct XiCluster {
    std::size_t start = 0, end = 0;  // inclusive positions in the ordering
};

/// Steep-area cluster extraction. `min_cluster_size` below 1 is a fraction of
/// the point count. Clusters come leaves first.
std::vector<XiCluster> xi_clusters(const OpticsResult& r, int min_pts, double xi, double min_cluster_size);

/// Labels from xi_clusters: a cluster is taken only if none of its points is taken yet.
std::vector<int> xi_labels(const OpticsResult& r, std::span<const XiCluster> clusters);

/// Points left out of every cluster are noise and flagged uncertain.
ClusterAssignment optics(std::span<const Vec3> points, int min_pts, double xi = 0.05, double min_cluster_size = 0.05,
                         double max_eps = std::numeric_limits<double>::infinity());

/// Symmetric k-NN affinity (self included), normalized Laplacian, k smallest
/// eigenvectors scaled by D^-1/2, then k-means with 10 seedings.
ClusterAssignment spectral(std::span<const Vec3> points, int k, std::uint64_t seed, int n_neighbors = 10);

/// Smallest `count` eigenvalues of the normalized Laplacian of the same graph.
Eigen::VectorXd spectral_laplacian_eigenvalues(std::span<const Vec3> points, int n_neighbors, int count);

enum class ClusterMethod { kmeans, cmeans, dbscan, optics, spectral };
inline constexpr ClusterMethod kAllClusterMethods[] = {ClusterMethod::kmeans, ClusterMethod::cmeans,
                                                       ClusterMethod::dbscan, ClusterMethod::optics,
                                                       ClusterMethod::spectral};
std::string_view cluster_method_name(ClusterMethod m);
ClusterMethod parse_cluster_method(std::string_view s);

struct ClusterParams {
    ClusterMethod method = ClusterMethod::optics;
    int k = 0;  // required by k-means, c-means and spectral
    std::uint64_t seed = 0;
    double eps = 0.25;
    int min_pts = 8;
    double xi = 0.3;  // steeper than the textbook 0.05: box faces otherwise split into sub-clusters
    double min_cluster_size = 0.05;
    double max_eps = 0.5;
    int n_neighbors = 10;
    double fuzzifier = 2.0;
    double cmeans_threshold = 0.6;

    void validate() const;
};

/// Dispatches on params.method and fills runtime_s.
ClusterAssignment run_clustering(std::span<const Vec3> points, const ClusterParams& params);

struct ClassClusters {
    std::vector<std::size_t> indices;  // points of the class in the input cloud
    ClusterAssignment assignment;      // aligned with `indices`
    std::vector<PointCloud> instances;
};

/// Splits the points labeled `cls` into instances. Noise and uncertain points
/// are left out. A class with no points gives no instances.
ClassClusters cluster_class(const PointCloud& cloud, std::span<const int> labels, SemanticClass cls,
                            const ClusterParams& params);

struct ClusterScore {
    double mistakes_pct = 0.0;   // non-noise, certain points assigned to the wrong instance
    double uncertain_pct = 0.0;  // noise or uncertain points
    int matched = 0;
};

/// Clusters are matched one-to-one to ground-truth instances, largest overlap first.
ClusterScore score_clusters(const ClusterAssignment& a, std::span<const int> truth_ids);

struct ClusterReportRow {
    std::string cls;
    std::size_t n_points = 0;
    std::string method;
    double mistakes_pct = 0.0;
    double uncertain_pct = 0.0;
    double time_s = -1.0;  // < 0: written as "-"
};

/// `class,n_points,method,mistakes_pct,uncertain_pct,time_s`
void write_cluster_csv(std::span<const ClusterReportRow> rows, const std::filesystem::path& path);

}  // namespace plantmodel
