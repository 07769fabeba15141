#pragma once

#include "plantmodel/classes.hpp"
#include "plantmodel/point_cloud.hpp"
#include "plantmodel/transform.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace plantmodel {

/// Dimensions of one tact; they size the structural templates.
struct TactDims {
    double length = 12.0;  // along x (line direction)
    double width = 8.0;    // along y
    double height = 5.0;   // along z
};

struct SceneSpec {
    std::uint64_t seed = 0;
    TactDims dims;
    std::vector<SemanticClass> classes{kAllClasses.begin(), kAllClasses.end()};
    double noise_sigma_mm = 1.0;
    double occlusion_fraction = 0.0;  // [0, 1)
    double points_per_m2 = 100.0;

    int n_cars = 2;
    int n_hangers = 2;
    int n_columns = 2;
    int n_lineside = 2;
    int n_clutter = 6;

    bool has(SemanticClass c) const;
    void validate() const;
};

struct GroundTruthObject {
    SemanticClass cls = SemanticClass::car;
    int instance_id = 0;
    RigidTransform placement;  // template frame -> scene frame
    ObjectPose pose;
};

struct GroundTruth {
    std::vector<GroundTruthObject> objects;
    std::vector<int> instance_ids;  // per point, id within the point's class

    /// Number of objects of class `c`.
    int count(SemanticClass c) const;
};

struct Scene {
    PointCloud cloud;  // labels always present
    GroundTruth truth;
};

/// Builds a labeled tact: planes for floor/ceiling/walls, boxes for columns
/// and lineside racks, a low prism for the band, composites for cars and
/// hangers, random small boxes for clutter. Gaussian noise and sector
/// occlusion are applied last. Bit-identical output for identical specs.
Scene generate_scene(const SceneSpec& spec);

/// Noise-free cloud of a class template in its canonical frame: a
/// cell-centered grid on every visible face plus the corners of each part.
/// Throws ValidationError for classes without a template (clutter).
PointCloud sample_reference(SemanticClass cls, double points_per_m2, const TactDims& dims = {});

/// Removes `fraction` of the points in contiguous azimuth sectors seen from
/// random scanner positions inside the cloud's bounds. Returns kept indices.
std::vector<std::size_t> occlude(std::span<const Vec3> points, double fraction, std::mt19937_64& rng,
                                 int n_scanners = 2);

}  // namespace plantmodel
