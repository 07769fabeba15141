#include "plantmodel/clustering.hpp"

#include "plantmodel/error.hpp"
#include "plantmodel/spatial_index.hpp"
#include "plantmodel/text_io.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace plantmodel {

using Eigen::Index;
using Eigen::MatrixXd;

void compact_labels(ClusterAssignment& a) {
    std::map<int, int> remap;
    for (int& l : a.labels) {
        if (l == kNoise) continue;
        auto [it, inserted] = remap.emplace(l, static_cast<int>(remap.size()));
        l = it->second;
    }
    a.n_clusters = static_cast<int>(remap.size());
    if (a.uncertain.size() != a.labels.size()) a.uncertain.assign(a.labels.size(), false);
}

// ---------------------------------------------------------------------------
// k-means

namespace {

MatrixXd to_matrix(std::span<const Vec3> points) {
    MatrixXd m(3, static_cast<Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) m.col(static_cast<Index>(i)) = points[i];
    return m;
}

struct KmeansRun {
    std::vector<int> labels;
    double sse = 0.0;
    std::vector<double> trace;
};

MatrixXd kmeanspp_seed(const MatrixXd& x, int k, std::mt19937_64& rng) {
    const Index n = x.cols();
    MatrixXd c(x.rows(), k);
    std::uniform_int_distribution<Index> pick(0, n - 1);
    c.col(0) = x.col(pick(rng));
    Eigen::VectorXd d2 = (x.colwise() - c.col(0)).colwise().squaredNorm().transpose();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int j = 1; j < k; ++j) {
        const double total = d2.sum();
        Index chosen = 0;
        if (total > 0.0) {
            double r = u(rng) * total;
            for (chosen = 0; chosen < n - 1; ++chosen) {
                r -= d2[chosen];
                if (r < 0.0) break;
            }
            // Never pick an already-covered point because of rounding at the tail.
            while (d2[chosen] == 0.0 && chosen > 0) --chosen;
        } else {
            chosen = pick(rng);
        }
        c.col(j) = x.col(chosen);
        d2 = d2.cwiseMin((x.colwise() - c.col(j)).colwise().squaredNorm().transpose());
    }
    return c;
}

KmeansRun lloyd(const MatrixXd& x, int k, std::mt19937_64& rng, int max_iter, double tol) {
    const Index n = x.cols();
    MatrixXd c = kmeanspp_seed(x, k, rng);
    KmeansRun run;
    run.labels.assign(static_cast<std::size_t>(n), 0);
    for (int it = 0; it < max_iter; ++it) {
        double sse = 0.0;
        for (Index i = 0; i < n; ++i) {
            int best = 0;
            double bd = (x.col(i) - c.col(0)).squaredNorm();
            for (int j = 1; j < k; ++j) {
                const double d = (x.col(i) - c.col(j)).squaredNorm();
                if (d < bd) {
                    bd = d;
                    best = j;
                }
            }
            run.labels[static_cast<std::size_t>(i)] = best;
            sse += bd;
        }
        run.sse = sse;
        run.trace.push_back(sse);

        MatrixXd next = MatrixXd::Zero(x.rows(), k);
        std::vector<Index> count(static_cast<std::size_t>(k), 0);
        for (Index i = 0; i < n; ++i) {
            const int l = run.labels[static_cast<std::size_t>(i)];
            next.col(l) += x.col(i);
            ++count[static_cast<std::size_t>(l)];
        }
        double shift = 0.0;
        for (int j = 0; j < k; ++j) {
            if (count[static_cast<std::size_t>(j)] == 0) {
                next.col(j) = c.col(j);  // empty cluster keeps its centroid
            } else {
                next.col(j) /= static_cast<double>(count[static_cast<std::size_t>(j)]);
            }
            shift = std::max(shift, (next.col(j) - c.col(j)).norm());
        }
        c = std::move(next);
        if (shift < tol) break;
    }
    return run;
}

}  // namespace

ClusterAssignment kmeans(const MatrixXd& data, int k, std::uint64_t seed, int max_iter, double tol, int n_init,
                         std::vector<double>* sse_trace) {
    if (k < 1) throw ValidationError("k-means needs k >= 1");
    if (static_cast<Index>(k) > data.cols()) throw ValidationError("k-means needs k <= number of points");
    if (max_iter < 1 || n_init < 1) throw ValidationError("k-means needs max_iter >= 1 and n_init >= 1");
    std::mt19937_64 rng(seed);
    KmeansRun best;
    for (int r = 0; r < n_init; ++r) {
        KmeansRun run = lloyd(data, k, rng, max_iter, tol);
        if (r == 0 || run.sse < best.sse) best = std::move(run);
    }
    if (sse_trace) *sse_trace = best.trace;
    ClusterAssignment a;
    a.labels = std::move(best.labels);
    compact_labels(a);
    return a;
}

ClusterAssignment kmeans(std::span<const Vec3> points, int k, std::uint64_t seed, int max_iter, double tol,
                         std::vector<double>* sse_trace) {
    return kmeans(to_matrix(points), k, seed, max_iter, tol, 1, sse_trace);
}

// ---------------------------------------------------------------------------
// fuzzy c-means

MatrixXd fuzzy_memberships(std::span<const Vec3> points, std::span<const Vec3> centroids, double fuzzifier) {
    if (!(fuzzifier > 1.0)) throw ValidationError("fuzzifier must be > 1");
    const double power = 2.0 / (fuzzifier - 1.0);
    const Index c = static_cast<Index>(centroids.size());
    MatrixXd u = MatrixXd::Zero(static_cast<Index>(points.size()), c);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Index row = static_cast<Index>(i);
        Eigen::VectorXd d(c);
        Index coincident = -1;
        for (Index j = 0; j < c; ++j) {
            d[j] = (points[i] - centroids[static_cast<std::size_t>(j)]).norm();
            if (d[j] == 0.0 && coincident < 0) coincident = j;
        }
        if (coincident >= 0) {
            u(row, coincident) = 1.0;
            continue;
        }
        for (Index j = 0; j < c; ++j) {
            double s = 0.0;
            for (Index l = 0; l < c; ++l) s += std::pow(d[j] / d[l], power);
            u(row, j) = 1.0 / s;
        }
    }
    return u;
}

FuzzyResult fuzzy_cmeans(std::span<const Vec3> points, int c, double fuzzifier, std::uint64_t seed, int max_iter,
                         double tol, double uncertain_below) {
    if (c < 1) throw ValidationError("c-means needs c >= 1");
    if (static_cast<std::size_t>(c) > points.size()) throw ValidationError("c-means needs c <= number of points");
    const MatrixXd x = to_matrix(points);
    std::mt19937_64 rng(seed);
    const MatrixXd seeds = kmeanspp_seed(x, c, rng);
    FuzzyResult r;
    for (int j = 0; j < c; ++j) r.centroids.push_back(seeds.col(j));

    for (int it = 0; it < max_iter; ++it) {
        r.membership = fuzzy_memberships(points, r.centroids, fuzzifier);
        const MatrixXd w = r.membership.array().pow(fuzzifier).matrix();
        double shift = 0.0;
        for (int j = 0; j < c; ++j) {
            const double total = w.col(j).sum();
            if (total <= 0.0) continue;
            const Vec3 next = x * w.col(j) / total;
            shift = std::max(shift, (next - r.centroids[static_cast<std::size_t>(j)]).norm());
            r.centroids[static_cast<std::size_t>(j)] = next;
        }
        if (shift < tol) break;
    }
    r.membership = fuzzy_memberships(points, r.centroids, fuzzifier);

    auto& a = r.assignment;
    a.labels.resize(points.size());
    a.uncertain.resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        Index best = 0;
        const double m = r.membership.row(static_cast<Index>(i)).maxCoeff(&best);
        a.labels[i] = static_cast<int>(best);
        a.uncertain[i] = m < uncertain_below;
    }
    compact_labels(a);
    return r;
}

// ---------------------------------------------------------------------------
// DBSCAN

ClusterAssignment dbscan(std::span<const Vec3> points, double eps, int min_pts) {
    if (!(eps > 0.0)) throw ValidationError("DBSCAN needs eps > 0");
    if (min_pts < 1) throw ValidationError("DBSCAN needs min_pts >= 1");
    const std::size_t n = points.size();
    ClusterAssignment a;
    a.labels.assign(n, kNoise);
    if (n == 0) return a;

    const SpatialIndex index(points);
    std::vector<std::vector<std::size_t>> nbrs(n);
    std::vector<char> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        nbrs[i] = index.radius(points[i], eps);
        core[i] = nbrs[i].size() >= static_cast<std::size_t>(min_pts);
    }

    int next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < n; ++i) {
        if (a.labels[i] != kNoise || !core[i]) continue;
        a.labels[i] = next;
        stack.assign(1, i);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            for (std::size_t q : nbrs[p]) {
                if (a.labels[q] != kNoise) continue;
                a.labels[q] = next;
                if (core[q]) stack.push_back(q);
            }
        }
        ++next;
    }
    a.n_clusters = next;
    a.uncertain.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.uncertain[i] = a.labels[i] == kNoise;
    return a;
}

// ---------------------------------------------------------------------------
// OPTICS

OpticsResult optics_ordering(std::span<const Vec3> points, int min_pts, double max_eps) {
    if (min_pts < 2) throw ValidationError("OPTICS needs min_pts >= 2");
    if (!(max_eps > 0.0)) throw ValidationError("OPTICS needs max_eps > 0");
    const std::size_t n = points.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    OpticsResult r;
    r.reachability.assign(n, inf);
    r.core_distance.assign(n, inf);
    r.predecessor.assign(n, -1);
    if (n == 0) return r;

    const SpatialIndex index(points);
    const auto k = std::min(static_cast<std::size_t>(min_pts), n);
    for (std::size_t i = 0; i < n; ++i) {
        if (k < static_cast<std::size_t>(min_pts)) break;  // too few points for any core
        const double d = index.knn(points[i], k).back().distance;
        r.core_distance[i] = d <= max_eps ? d : inf;
    }

    const bool bounded = std::isfinite(max_eps);
    std::vector<char> processed(n, 0);
    std::set<std::pair<double, std::size_t>> seeds;  // finite reachability, unprocessed
    std::size_t scan = 0;                            // smallest possibly-unprocessed index
    r.ordering.reserve(n);

    for (std::size_t step = 0; step < n; ++step) {
        std::size_t p;
        if (!seeds.empty()) {
            p = seeds.begin()->second;
            seeds.erase(seeds.begin());
        } else {
            while (processed[scan]) ++scan;
            p = scan;
        }
        processed[p] = 1;
        r.ordering.push_back(p);
        if (!std::isfinite(r.core_distance[p])) continue;

        auto relax = [&](std::size_t q, double dist) {
            if (processed[q]) return;
            const double rd = std::max(dist, r.core_distance[p]);
            if (rd < r.reachability[q]) {
                if (std::isfinite(r.reachability[q])) seeds.erase({r.reachability[q], q});
                r.reachability[q] = rd;
                r.predecessor[q] = static_cast<long>(p);
                seeds.insert({rd, q});
            }
        };
        if (bounded) {
            for (const auto& nb : index.radius_with_distance(points[p], max_eps)) relax(nb.index, nb.distance);
        } else {
            for (std::size_t q = 0; q < n; ++q) relax(q, (points[q] - points[p]).norm());
        }
    }
    return r;
}

namespace {

struct SteepDown {
    std::size_t start, end;
    double mib;
};

std::size_t extend_region(const std::vector<char>& steep, const std::vector<char>& reverse, std::size_t start,
                          int min_pts) {
    const std::size_t n = steep.size();
    int non_steep = 0;
    std::size_t end = start;
    for (std::size_t i = start; i < n; ++i) {
        if (steep[i]) {
            non_steep = 0;
            end = i;
        } else if (!reverse[i]) {
            // Not steep, but still heading the same way.
            if (++non_steep > min_pts) break;
        } else {
            return end;
        }
    }
    return end;
}

void update_filter(std::vector<SteepDown>& sdas, double mib, double xi_c, const std::vector<double>& plot) {
    if (std::isinf(mib)) {
        sdas.clear();
        return;
    }
    std::erase_if(sdas, [&](const SteepDown& d) { return !(mib <= plot[d.start] * xi_c); });
    for (auto& d : sdas) d.mib = std::max(d.mib, mib);
}

// Shrinks [s, e] until the end point's predecessor lies inside the cluster.
bool correct_predecessor(const std::vector<double>& plot, const std::vector<long>& pred_plot,
                         const std::vector<std::size_t>& ordering, std::size_t& s, std::size_t& e) {
    while (s < e) {
        if (plot[s] > plot[e]) return true;
        const long pe = pred_plot[e];
        for (std::size_t i = s; i < e; ++i)
            if (pe == static_cast<long>(ordering[i])) return true;
        --e;
    }
    return false;
}

}  // namespace

std::vector<XiCluster> xi_clusters(const OpticsResult& r, int min_pts, double xi, double min_cluster_size) {
    if (!(xi > 0.0 && xi < 1.0)) throw ValidationError("xi must be in (0, 1)");
    const std::size_t n = r.ordering.size();
    if (n == 0) return {};
    const auto min_size = min_cluster_size < 1.0
                              ? std::max<std::size_t>(2, static_cast<std::size_t>(min_cluster_size * static_cast<double>(n)))
                              : static_cast<std::size_t>(min_cluster_size);

    std::vector<double> plot(n + 1);
    std::vector<long> pred_plot(n);
    for (std::size_t i = 0; i < n; ++i) {
        plot[i] = r.reachability[r.ordering[i]];
        pred_plot[i] = r.predecessor[r.ordering[i]];
    }
    plot[n] = std::numeric_limits<double>::infinity();

    const double xi_c = 1.0 - xi;
    std::vector<char> steep_up(n), steep_down(n), up(n), down(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ratio = plot[i] / plot[i + 1];  // NaN for inf/inf: every test false
        steep_up[i] = ratio <= xi_c;
        steep_down[i] = ratio >= 1.0 / xi_c;
        down[i] = ratio > 1.0;
        up[i] = ratio < 1.0;
    }

    std::vector<SteepDown> sdas;
    std::vector<XiCluster> clusters;
    std::size_t index = 0;
    double mib = 0.0;
    for (std::size_t steep = 0; steep < n; ++steep) {
        if (!(steep_up[steep] || steep_down[steep]) || steep < index) continue;
        mib = std::max(mib, *std::max_element(plot.begin() + static_cast<long>(index),
                                              plot.begin() + static_cast<long>(steep) + 1));
        if (steep_down[steep]) {
            update_filter(sdas, mib, xi_c, plot);
            const std::size_t d_end = extend_region(steep_down, up, steep, min_pts);
            sdas.push_back({steep, d_end, 0.0});
            index = d_end + 1;
            mib = plot[index];
            continue;
        }

        update_filter(sdas, mib, xi_c, plot);
        const std::size_t u_start = steep;
        const std::size_t u_end = extend_region(steep_up, down, u_start, min_pts);
        index = u_end + 1;
        mib = plot[index];

        std::vector<XiCluster> found;
        for (const auto& d : sdas) {
            std::size_t c_start = d.start, c_end = u_end;
            if (plot[c_end + 1] * xi_c < d.mib) continue;

            const double d_max = plot[d.start];
            if (d_max * xi_c >= plot[c_end + 1]) {
                while (plot[c_start + 1] > plot[c_end + 1] && c_start < d.end) ++c_start;
            } else if (plot[c_end + 1] * xi_c >= d_max) {
                while (plot[c_end - 1] > d_max && c_end > u_start) --c_end;
            }
            if (!correct_predecessor(plot, pred_plot, r.ordering, c_start, c_end)) continue;
            if (c_end - c_start + 1 < min_size) continue;
            if (c_start > d.end) continue;
            if (c_end < u_start) continue;
            found.push_back({c_start, c_end});
        }
        clusters.insert(clusters.end(), found.rbegin(), found.rend());  // smaller ones first
    }
    return clusters;
}

std::vector<int> xi_labels(const OpticsResult& r, std::span<const XiCluster> clusters) {
    const std::size_t n = r.ordering.size();
    std::vector<int> by_position(n, kNoise);
    int label = 0;
    for (const auto& c : clusters) {
        bool free = true;
        for (std::size_t i = c.start; i <= c.end && free; ++i) free = by_position[i] == kNoise;
        if (!free) continue;
        for (std::size_t i = c.start; i <= c.end; ++i) by_position[i] = label;
        ++label;
    }
    std::vector<int> labels(n, kNoise);
    for (std::size_t i = 0; i < n; ++i) labels[r.ordering[i]] = by_position[i];
    return labels;
}

ClusterAssignment optics(std::span<const Vec3> points, int min_pts, double xi, double min_cluster_size,
                         double max_eps) {
    const auto r = optics_ordering(points, min_pts, max_eps);
    ClusterAssignment a;
    a.labels = xi_labels(r, xi_clusters(r, min_pts, xi, min_cluster_size));
    compact_labels(a);
    for (std::size_t i = 0; i < a.labels.size(); ++i) a.uncertain[i] = a.labels[i] == kNoise;
    return a;
}

// ---------------------------------------------------------------------------
// spectral

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;

// D^-1/2 A D^-1/2 for the symmetrized k-NN connectivity graph, plus sqrt(degree).
std::pair<SparseMatrix, Eigen::VectorXd> normalized_affinity(std::span<const Vec3> points, int n_neighbors) {
    const std::size_t n = points.size();
    const SpatialIndex index(points);
    const auto k = std::min(static_cast<std::size_t>(n_neighbors), n);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(2 * n * k);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& nb : index.knn(points[i], k)) {
            trips.emplace_back(static_cast<Index>(i), static_cast<Index>(nb.index), 0.5);
            trips.emplace_back(static_cast<Index>(nb.index), static_cast<Index>(i), 0.5);
        }
    }
    SparseMatrix a(static_cast<Index>(n), static_cast<Index>(n));
    a.setFromTriplets(trips.begin(), trips.end());  // duplicates are summed
    Eigen::VectorXd dd(static_cast<Index>(n));
    for (Index j = 0; j < a.outerSize(); ++j) {
        double s = 0.0;
        for (SparseMatrix::InnerIterator it(a, j); it; ++it) s += it.value();
        dd[j] = std::sqrt(s);
    }
    for (Index j = 0; j < a.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(a, j); it; ++it) it.valueRef() /= dd[it.row()] * dd[it.col()];
    return {std::move(a), std::move(dd)};
}

constexpr std::size_t kDenseLimit = 1500;

// ARPACK reverse-communication driver, symmetric case.
extern "C" {
void dsaupd_(int* ido, char* bmat, int* n, char* which, int* nev, double* tol, double* resid, int* ncv, double* v,
             int* ldv, int* iparam, int* ipntr, double* workd, double* workl, int* lworkl, int* info);
void dseupd_(int* rvec, char* howmny, int* select, double* d, double* z, int* ldz, double* sigma, char* bmat, int* n,
             char* which, int* nev, double* tol, double* resid, int* ncv, double* v, int* ldv, int* iparam, int* ipntr,
             double* workd, double* workl, int* lworkl, int* info);
}

// Largest eigenpairs of a symmetric operator y = op(x), eigenvalues descending.
template <typename Op>
std::pair<Eigen::VectorXd, MatrixXd> arpack_largest(int n, int nev, Op op) {
    int ncv = std::min(n, std::max(2 * nev + 1, 20));
    int ldv = n, lworkl = ncv * (ncv + 8), ido = 0, info = 1;
    char bmat[] = "I", which[] = "LA", howmny[] = "A";
    double tol = 1e-12;
    // fixed start vector: the internal random one depends on earlier calls
    Eigen::VectorXd resid(n);
    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < n; ++i) resid[i] = u(rng);
    MatrixXd v(n, ncv);
    Eigen::VectorXd workd(3 * n), workl(lworkl);
    int iparam[11] = {1, 0, 3000, 1, 0, 0, 1, 0, 0, 0, 0};
    int ipntr[11] = {};
    for (;;) {
        dsaupd_(&ido, bmat, &n, which, &nev, &tol, resid.data(), &ncv, v.data(), &ldv, iparam, ipntr, workd.data(),
                workl.data(), &lworkl, &info);
        if (ido != -1 && ido != 1) break;
        Eigen::Map<const Eigen::VectorXd> x(workd.data() + ipntr[0] - 1, n);
        Eigen::Map<Eigen::VectorXd> y(workd.data() + ipntr[1] - 1, n);
        op(x, y);
    }
    if (info != 0) throw Error("sparse eigen solver failed (code " + std::to_string(info) + ")");
    int rvec = 1;
    std::vector<int> select(static_cast<std::size_t>(ncv));
    Eigen::VectorXd d(nev);
    MatrixXd z(n, nev);
    double sigma = 0.0;
    dseupd_(&rvec, howmny, select.data(), d.data(), z.data(), &ldv, &sigma, bmat, &n, which, &nev, &tol, resid.data(),
            &ncv, v.data(), &ldv, iparam, ipntr, workd.data(), workl.data(), &lworkl, &info);
    if (info != 0 || iparam[4] < nev) throw Error("sparse eigen solver did not converge");
    return {d.reverse(), z.rowwise().reverse()};
}

// Smallest `count` eigenpairs of the normalized Laplacian I - m, ascending.
std::pair<Eigen::VectorXd, MatrixXd> laplacian_eigenpairs(const SparseMatrix& m, int count) {
    const Index n = m.rows();
    SparseMatrix lap = -m;
    for (Index i = 0; i < n; ++i) lap.coeffRef(i, i) += 1.0;
    if (static_cast<std::size_t>(n) <= kDenseLimit || count >= n - 1) {
        const MatrixXd dense = lap;
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(dense);
        if (es.info() != Eigen::Success) throw Error("eigen decomposition failed");
        return {es.eigenvalues().head(count).cwiseMax(0.0), es.eigenvectors().leftCols(count)};
    }
    // Shift-invert on (L + I)^-1, the usual reference formulation. A shift near
    // zero converges far faster but makes timings incomparable with it.
    constexpr double shift = 1.0;
    SparseMatrix shifted = lap;
    for (Index i = 0; i < n; ++i) shifted.coeffRef(i, i) += shift;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(shifted);
    if (ldlt.info() != Eigen::Success) throw Error("Laplacian factorization failed");
    auto [theta, vecs] = arpack_largest(static_cast<int>(n), count, [&](const auto& x, auto& y) { y = ldlt.solve(x); });
    Eigen::VectorXd vals = (1.0 / theta.array() - shift).cwiseMax(0.0).matrix();
    return {vals, vecs};
}

}  // namespace

Eigen::VectorXd spectral_laplacian_eigenvalues(std::span<const Vec3> points, int n_neighbors, int count) {
    if (points.empty() || count < 1 || static_cast<std::size_t>(count) > points.size())
        throw ValidationError("bad eigenvalue count");
    const auto [m, dd] = normalized_affinity(points, n_neighbors);
    return laplacian_eigenpairs(m, count).first;
}

ClusterAssignment spectral(std::span<const Vec3> points, int k, std::uint64_t seed, int n_neighbors) {
    if (k < 1) throw ValidationError("spectral clustering needs k >= 1");
    if (static_cast<std::size_t>(k) > points.size()) throw ValidationError("spectral clustering needs k <= n");
    if (n_neighbors < 1) throw ValidationError("spectral clustering needs n_neighbors >= 1");
    if (k == 1) {
        ClusterAssignment a;
        a.labels.assign(points.size(), 0);
        compact_labels(a);
        return a;
    }
    const auto [m, dd] = normalized_affinity(points, n_neighbors);
    const auto vecs = laplacian_eigenpairs(m, k).second;

    MatrixXd emb(k, vecs.rows());
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd v = vecs.col(j).cwiseQuotient(dd);
        Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;  // deterministic sign
        emb.row(j) = v.transpose();
    }
    return kmeans(emb, k, seed, 300, 1e-6, 10);
}

// ---------------------------------------------------------------------------

std::string_view cluster_method_name(ClusterMethod m) {
    switch (m) {
        case ClusterMethod::kmeans: return "kmeans";
        case ClusterMethod::cmeans: return "cmeans";
        case ClusterMethod::dbscan: return "dbscan";
        case ClusterMethod::optics: return "optics";
        case ClusterMethod::spectral: return "spectral";
    }
    return "?";
}

ClusterMethod parse_cluster_method(std::string_view s) {
    for (auto m : kAllClusterMethods)
        if (cluster_method_name(m) == s) return m;
    throw ValidationError("unknown clustering method '" + std::string(s) + "'");
}

void ClusterParams::validate() const {
    const bool needs_k =
        method == ClusterMethod::kmeans || method == ClusterMethod::cmeans || method == ClusterMethod::spectral;
    if (needs_k && k < 1)
        throw ValidationError(std::string(cluster_method_name(method)) + " needs an explicit cluster count k");
    if (!(eps > 0.0) || !(max_eps > 0.0)) throw ValidationError("eps and max_eps must be positive");
    if (min_pts < 2) throw ValidationError("min_pts must be >= 2");
    if (!(xi > 0.0 && xi < 1.0)) throw ValidationError("xi must be in (0, 1)");
    if (!(min_cluster_size > 0.0)) throw ValidationError("min_cluster_size must be positive");
    if (n_neighbors < 1) throw ValidationError("n_neighbors must be >= 1");
    if (!(fuzzifier > 1.0)) throw ValidationError("fuzzifier must be > 1");
}

ClusterAssignment run_clustering(std::span<const Vec3> points, const ClusterParams& p) {
    p.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ClusterAssignment a;
    switch (p.method) {
        case ClusterMethod::kmeans: a = kmeans(points, p.k, p.seed); break;
        case ClusterMethod::cmeans:
            a = fuzzy_cmeans(points, p.k, p.fuzzifier, p.seed, 300, 1e-6, p.cmeans_threshold).assignment;
            break;
        case ClusterMethod::dbscan: a = dbscan(points, p.eps, p.min_pts); break;
        case ClusterMethod::optics: a = optics(points, p.min_pts, p.xi, p.min_cluster_size, p.max_eps); break;
        case ClusterMethod::spectral: a = spectral(points, p.k, p.seed, p.n_neighbors); break;
    }
    a.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return a;
}

ClassClusters cluster_class(const PointCloud& cloud, std::span<const int> labels, SemanticClass cls,
                            const ClusterParams& params) {
    if (labels.size() != cloud.size()) throw ValidationError("labels do not match the cloud");
    params.validate();
    ClassClusters out;
    const int target = class_index(cls);
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == target) out.indices.push_back(i);
    if (out.indices.empty()) return out;

    std::vector<Vec3> pts;
    pts.reserve(out.indices.size());
    for (auto i : out.indices) pts.push_back(cloud.points[i]);
    ClusterParams p = params;
    p.k = std::min<int>(p.k, static_cast<int>(pts.size()));
    out.assignment = run_clustering(pts, p);

    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(out.assignment.n_clusters));
    for (std::size_t j = 0; j < out.indices.size(); ++j) {
        const int l = out.assignment.labels[j];
        if (l == kNoise || out.assignment.uncertain[j]) continue;
        members[static_cast<std::size_t>(l)].push_back(out.indices[j]);
    }
    for (const auto& m : members)
        if (!m.empty()) out.instances.push_back(cloud.select(m));
    return out;
}

ClusterScore score_clusters(const ClusterAssignment& a, std::span<const int> truth_ids) {
    if (truth_ids.size() != a.size()) throw ValidationError("ground truth does not match the assignment");
    ClusterScore s;
    if (a.size() == 0) return s;
    std::map<std::pair<int, int>, std::size_t> overlap;
    std::size_t unsure = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.labels[i] == kNoise || a.uncertain[i]) {
            ++unsure;
            continue;
        }
        ++overlap[{a.labels[i], truth_ids[i]}];
    }
    std::vector<std::pair<std::size_t, std::pair<int, int>>> pairs;
    for (const auto& [key, count] : overlap) pairs.push_back({count, key});
    std::stable_sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    std::map<int, int> match;
    std::set<int> used_truth;
    for (const auto& [count, key] : pairs) {
        if (match.count(key.first) || used_truth.count(key.second)) continue;
        match[key.first] = key.second;
        used_truth.insert(key.second);
    }
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.labels[i] == kNoise || a.uncertain[i]) continue;
        const auto it = match.find(a.labels[i]);
        if (it == match.end() || it->second != truth_ids[i]) ++wrong;
    }
    const double n = static_cast<double>(a.size());
    s.mistakes_pct = 100.0 * static_cast<double>(wrong) / n;
    s.uncertain_pct = 100.0 * static_cast<double>(unsure) / n;
    s.matched = static_cast<int>(match.size());
    return s;
}

void write_cluster_csv(std::span<const ClusterReportRow> rows, const std::filesystem::path& path) {
    std::string out = "class,n_points,method,mistakes_pct,uncertain_pct,time_s\n";
    for (const auto& r : rows) {
        out += r.cls + ',' + std::to_string(r.n_points) + ',' + r.method + ',';
        append_double(out, r.mistakes_pct);
        out += ',';
        append_double(out, r.uncertain_pct);
        out += ',';
        if (r.time_s < 0.0)
            out += '-';
        else
            append_double(out, r.time_s);
        out += '\n';
    }
    write_text_file(path, out);
}

}  // namespace plantmodel
