#pragma once

#include "plantmodel/scene_synth.hpp"
#include "plantmodel/transform.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace plantmodel {

enum class PoseSource { estimated, ground_truth };

std::string_view pose_source_name(PoseSource s);  // "estimated" / "ground-truth"

struct SceneObject {
    ObjectPose pose;
    PoseSource source = PoseSource::estimated;
    std::string template_id;  // empty: no template attribute

    bool operator==(const SceneObject&) const = default;
};

/// Object poses in one scene frame: origin at the scene zero, Euler angles
/// intrinsic Z-Y-X. Instance ids are unique within a class.
struct SceneModel {
    std::string name;
    std::vector<SceneObject> objects;

    /// Throws ValidationError on unknown classes or duplicate (class, id).
    void validate() const;
};

/// Serializes to AML-style XML. Numbers use the shortest exact decimal form,
/// so a round trip is lossless. Output is byte-stable for equal models.
std::string to_aml(const SceneModel& model);
void write_aml(const SceneModel& model, const std::filesystem::path& path);

/// Throws SchemaError naming the offending element on structural problems
/// and IoError when the file cannot be read.
SceneModel parse_aml_string(const std::string& xml);
SceneModel parse_aml(const std::filesystem::path& path);

/// Ground-truth placements of a synthetic scene as a model.
SceneModel ground_truth_model(const GroundTruth& truth, std::string name);

struct SavingsInput {
    double cost_per_m2 = 1.5;       // EUR
    double area_per_plant = 950000.0;  // m2
    double scanned_fraction = 0.6;
    double n_plants = 10.0;
    double scans_per_year = 1.0;
    double automation_degree = 0.7;

    void validate() const;
};

struct Savings {
    double total_cost_per_year = 0.0;
    double savings_per_year = 0.0;
};

Savings compute_savings(const SavingsInput& in);

/// "5,985,000 €"; cents are shown only when the amount has any.
std::string format_euro(double amount);

}  // namespace plantmodel
