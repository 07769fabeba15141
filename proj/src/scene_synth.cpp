#include "plantmodel/scene_synth.hpp"

#include "plantmodel/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

namespace plantmodel {

namespace {

struct Rect {
    Vec3 origin, u, v;  // spans origin + a*u + b*v, a,b in [0,1]
};

struct Box {
    Vec3 center, size;
    bool hide_bottom = true;
    bool hide_top = false;
};

struct Shape {
    std::vector<Box> boxes;
    std::vector<Rect> rects;
};

std::vector<Rect> faces_of(const Box& b) {
    const Vec3 h = b.size / 2.0;
    const Vec3 lo = b.center - h;
    const Vec3 ex(b.size.x(), 0, 0), ey(0, b.size.y(), 0), ez(0, 0, b.size.z());
    std::vector<Rect> f;
    f.push_back({lo, ey, ez});       // -x
    f.push_back({lo + ex, ey, ez});  // +x
    f.push_back({lo, ex, ez});       // -y
    f.push_back({lo + ey, ex, ez});  // +y
    if (!b.hide_bottom) f.push_back({lo, ex, ey});
    if (!b.hide_top) f.push_back({lo + ez, ex, ey});
    return f;
}

void corners_of(const Box& b, std::vector<Vec3>& out) {
    const Vec3 h = b.size / 2.0;
    for (int sx : {-1, 1})
        for (int sy : {-1, 1})
            for (int sz : {-1, 1}) out.push_back(b.center + Vec3(sx * h.x(), sy * h.y(), sz * h.z()));
}

// Cell-centered grid: symmetric about the face center.
void sample_rect(const Rect& r, double density, std::vector<Vec3>& out) {
    const double step = 1.0 / std::sqrt(density);
    const long nu = std::max(1L, std::lround(r.u.norm() / step));
    const long nv = std::max(1L, std::lround(r.v.norm() / step));
    for (long i = 0; i < nu; ++i) {
        for (long j = 0; j < nv; ++j) {
            const double a = (static_cast<double>(i) + 0.5) / static_cast<double>(nu);
            const double b = (static_cast<double>(j) + 0.5) / static_cast<double>(nv);
            out.push_back(r.origin + a * r.u + b * r.v);
        }
    }
}

std::vector<Vec3> sample_shape(const Shape& s, double density, bool with_corners) {
    std::vector<Vec3> pts;
    for (const auto& b : s.boxes)
        for (const auto& f : faces_of(b)) sample_rect(f, density, pts);
    for (const auto& r : s.rects) sample_rect(r, density, pts);
    if (with_corners) {
        for (const auto& b : s.boxes) corners_of(b, pts);
        for (const auto& r : s.rects) {
            pts.push_back(r.origin);
            pts.push_back(r.origin + r.u);
            pts.push_back(r.origin + r.v);
            pts.push_back(r.origin + r.u + r.v);
        }
    }
    return pts;
}

Shape car_shape() {
    Shape s;
    s.boxes.push_back({Vec3(0, 0, 0.45), Vec3(4.4, 1.8, 0.9)});
    s.boxes.push_back({Vec3(-0.4, 0, 1.2), Vec3(2.4, 1.6, 0.6)});
    return s;
}

Shape hanger_shape() {
    constexpr double bar = 0.3;  // box beams; thinner frames give too few points to place at desk density
    Shape s;
    s.boxes.push_back({Vec3(0, 0, 0.04), Vec3(0.8, 0.8, 0.08)});
    s.boxes.push_back({Vec3(0, 0, 0.08 + 1.3), Vec3(bar, bar, 2.6), true, false});
    s.boxes.push_back({Vec3(bar / 2 + 0.7, 0, 2.68 - bar / 2), Vec3(1.4, bar, bar), false, false});
    s.boxes.push_back({Vec3(bar / 2 + 0.5, 0, 0.7), Vec3(1.0, bar, bar), false, false});
    return s;
}

Shape band_shape(const TactDims& d) {
    Shape s;
    s.boxes.push_back({Vec3(0, 0, 0.15), Vec3(d.length, 2.5, 0.3)});
    return s;
}

Shape lineside_shape() {
    Shape s;
    s.boxes.push_back({Vec3(0, 0, 0.8), Vec3(2.0, 0.8, 1.6)});
    return s;
}

Shape column_shape(const TactDims& d) {
    Shape s;
    s.boxes.push_back({Vec3(0, 0, d.height / 2), Vec3(0.4, 0.4, d.height), true, true});
    return s;
}

Shape horizontal_plane(const TactDims& d) {
    Shape s;
    s.rects.push_back({Vec3(-d.length / 2, -d.width / 2, 0), Vec3(d.length, 0, 0), Vec3(0, d.width, 0)});
    return s;
}

Shape wall_shape(const TactDims& d) {
    Shape s;
    s.rects.push_back({Vec3(-d.length / 2, 0, -d.height / 2), Vec3(d.length, 0, 0), Vec3(0, 0, d.height)});
    return s;
}

Shape template_shape(SemanticClass c, const TactDims& d) {
    switch (c) {
        case SemanticClass::car: return car_shape();
        case SemanticClass::hanger: return hanger_shape();
        case SemanticClass::floor:
        case SemanticClass::ceiling: return horizontal_plane(d);
        case SemanticClass::band: return band_shape(d);
        case SemanticClass::lineside: return lineside_shape();
        case SemanticClass::wall: return wall_shape(d);
        case SemanticClass::column: return column_shape(d);
        case SemanticClass::clutter: break;
    }
    throw ValidationError("class '" + std::string(class_name(c)) + "' has no reference template");
}

RigidTransform placement(double x, double y, double z, double yaw_deg) {
    RigidTransform t;
    t.rotation = rotation_from_euler_deg(0, 0, yaw_deg);
    t.translation = Vec3(x, y, z);
    return t;
}

class SceneBuilder {
public:
    SceneBuilder(const SceneSpec& spec, std::mt19937_64& rng) : spec_(spec), rng_(rng) {}

    void add(SemanticClass c, const std::vector<Vec3>& canonical, const RigidTransform& t) {
        const int id = next_id_[class_index(c)]++;
        for (const auto& p : canonical) {
            scene_.cloud.points.push_back(t.apply(p));
            scene_.cloud.labels.push_back(class_index(c));
            scene_.truth.instance_ids.push_back(id);
        }
        GroundTruthObject obj;
        obj.cls = c;
        obj.instance_id = id;
        obj.placement = t;
        obj.pose = pose_from_transform(t, std::string(class_name(c)), id);
        scene_.truth.objects.push_back(obj);
    }

    void add_template(SemanticClass c, const RigidTransform& t) {
        if (!spec_.has(c)) return;
        auto it = cache_.find(c);
        if (it == cache_.end())
            it = cache_.emplace(c, sample_reference(c, spec_.points_per_m2, spec_.dims)).first;
        add(c, it->second.points, t);
    }

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

    Scene finish() && { return std::move(scene_); }

private:
    const SceneSpec& spec_;
    std::mt19937_64& rng_;
    Scene scene_;
    std::array<int, kNumClasses> next_id_{};
    std::map<SemanticClass, PointCloud> cache_;
};

}  // namespace

bool SceneSpec::has(SemanticClass c) const { return std::find(classes.begin(), classes.end(), c) != classes.end(); }

void SceneSpec::validate() const {
    if (!(dims.length > 0 && dims.width > 0 && dims.height > 0))
        throw ValidationError("tact dimensions must be positive");
    if (dims.width < 6.0 || dims.length < 5.0 || dims.height < 2.5)
        throw ValidationError("tact must be at least 5 m x 6 m x 2.5 m to hold the line layout");
    if (classes.empty()) throw ValidationError("scene needs at least one class");
    if (!(noise_sigma_mm >= 0.0)) throw ValidationError("noise sigma must be non-negative");
    if (!(occlusion_fraction >= 0.0 && occlusion_fraction < 1.0))
        throw ValidationError("occlusion fraction must be in [0, 1)");
    if (!(points_per_m2 > 0.0)) throw ValidationError("point density must be positive");
    if (n_cars < 0 || n_hangers < 0 || n_columns < 0 || n_lineside < 0 || n_clutter < 0)
        throw ValidationError("object counts must be non-negative");
    if (n_cars > 0 && dims.length / n_cars < 5.0) throw ValidationError("too many cars for the tact length");
    if (n_hangers > 0 && dims.length / n_hangers < 2.0)
        throw ValidationError("too many hangers for the tact length");
    if (n_lineside > 0 && dims.length / n_lineside < 2.5)
        throw ValidationError("too many lineside racks for the tact length");
}

int GroundTruth::count(SemanticClass c) const {
    return static_cast<int>(std::count_if(objects.begin(), objects.end(), [c](const auto& o) { return o.cls == c; }));
}

PointCloud sample_reference(SemanticClass cls, double points_per_m2, const TactDims& dims) {
    if (!(points_per_m2 > 0.0)) throw ValidationError("point density must be positive");
    PointCloud out;
    out.points = sample_shape(template_shape(cls, dims), points_per_m2, true);
    return out;
}

std::vector<std::size_t> occlude(std::span<const Vec3> points, double fraction, std::mt19937_64& rng,
                                 int n_scanners) {
    std::vector<std::size_t> kept(points.size());
    std::iota(kept.begin(), kept.end(), std::size_t{0});
    if (fraction <= 0.0 || points.empty()) return kept;
    if (fraction >= 1.0) throw ValidationError("occlusion fraction must be below 1");

    const Bounds b = bounds_of(points);
    const std::size_t total_remove = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(points.size())));
    std::size_t removed = 0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int s = 0; s < n_scanners && removed < total_remove; ++s) {
        const std::size_t quota = s + 1 == n_scanners ? total_remove - removed : total_remove / n_scanners;
        const Vec3 scanner = b.min + b.extent().cwiseProduct(Vec3(unit(rng), unit(rng), unit(rng)));
        const double start = unit(rng) * 2.0 * std::numbers::pi;

        std::vector<std::pair<double, std::size_t>> by_angle;
        by_angle.reserve(kept.size());
        for (auto i : kept) {
            const Vec3 d = points[i] - scanner;
            double a = std::atan2(d.y(), d.x()) - start;
            a = std::fmod(a + 4.0 * std::numbers::pi, 2.0 * std::numbers::pi);
            by_angle.emplace_back(a, i);
        }
        std::sort(by_angle.begin(), by_angle.end());
        std::vector<std::size_t> next;
        next.reserve(by_angle.size());
        for (std::size_t k = quota; k < by_angle.size(); ++k) next.push_back(by_angle[k].second);
        std::sort(next.begin(), next.end());
        removed += kept.size() - next.size();
        kept = std::move(next);
    }
    return kept;
}

Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    SceneBuilder sb(spec, rng);
    const TactDims& d = spec.dims;
    const double mid_y = d.width / 2.0;

    sb.add_template(SemanticClass::floor, placement(d.length / 2, mid_y, 0.0, 0.0));
    sb.add_template(SemanticClass::ceiling, placement(d.length / 2, mid_y, d.height, 0.0));
    sb.add_template(SemanticClass::wall, placement(d.length / 2, 0.0, d.height / 2, 0.0));
    sb.add_template(SemanticClass::wall, placement(d.length / 2, d.width, d.height / 2, 0.0));
    sb.add_template(SemanticClass::band, placement(d.length / 2, mid_y, 0.0, 0.0));

    const double band_top = spec.has(SemanticClass::band) ? 0.3 : 0.0;
    for (int i = 0; i < spec.n_cars; ++i) {
        const double slot = d.length / spec.n_cars;
        const double x = slot * (i + 0.5) + sb.uniform(-0.3, 0.3);
        const double y = mid_y + sb.uniform(-0.05, 0.05);
        sb.add_template(SemanticClass::car, placement(x, y, band_top, sb.uniform(-3.0, 3.0)));
    }
    for (int i = 0; i < spec.n_hangers; ++i) {
        const double slot = d.length / spec.n_hangers;
        const double x = slot * (i + 0.5) + sb.uniform(-0.5, 0.5);
        const double y = mid_y + 1.9 + sb.uniform(-0.1, 0.1);
        sb.add_template(SemanticClass::hanger, placement(x, y, 0.0, 90.0 + sb.uniform(-5.0, 5.0)));
    }
    for (int i = 0; i < spec.n_columns; ++i) {
        const double x = spec.n_columns == 1 ? 0.4 : 0.4 + i * (d.length - 0.8) / (spec.n_columns - 1);
        sb.add_template(SemanticClass::column, placement(x, d.width - 0.35, 0.0, 0.0));
    }
    for (int i = 0; i < spec.n_lineside; ++i) {
        const double slot = d.length / spec.n_lineside;
        const double x = slot * (i + 0.5) + sb.uniform(-0.2, 0.2) * slot;
        sb.add_template(SemanticClass::lineside, placement(x, 0.6, 0.0, sb.uniform(-2.0, 2.0)));
    }
    if (spec.has(SemanticClass::clutter)) {
        std::vector<Vec3> centers;
        for (int i = 0; i < spec.n_clutter; ++i) {
            Vec3 c;
            for (int attempt = 0; attempt < 100; ++attempt) {
                c = Vec3(sb.uniform(0.5, d.length - 0.5), sb.uniform(1.4, mid_y - 1.5), 0.0);
                if (std::all_of(centers.begin(), centers.end(), [&](const Vec3& o) { return (o - c).norm() > 0.8; }))
                    break;
            }
            centers.push_back(c);
            const Vec3 size(sb.uniform(0.2, 0.5), sb.uniform(0.2, 0.5), sb.uniform(0.2, 0.5));
            Shape s;
            s.boxes.push_back({Vec3(0, 0, size.z() / 2), size});
            sb.add(SemanticClass::clutter, sample_shape(s, spec.points_per_m2, true),
                   placement(c.x(), c.y(), 0.0, sb.uniform(-45.0, 45.0)));
        }
    }

    Scene scene = std::move(sb).finish();

    if (spec.noise_sigma_mm > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_sigma_mm / 1000.0);
        for (auto& p : scene.cloud.points) p += Vec3(noise(rng), noise(rng), noise(rng));
    }
    if (spec.occlusion_fraction > 0.0) {
        const auto kept = occlude(scene.cloud.points, spec.occlusion_fraction, rng);
        std::vector<int> ids;
        ids.reserve(kept.size());
        for (auto i : kept) ids.push_back(scene.truth.instance_ids[i]);
        scene.cloud = scene.cloud.select(kept);
        scene.truth.instance_ids = std::move(ids);
    }
    return scene;
}

}  // namespace plantmodel
