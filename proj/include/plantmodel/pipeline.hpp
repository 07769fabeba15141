#pragma once

#include "plantmodel/clustering.hpp"
#include "plantmodel/model_export.hpp"
#include "plantmodel/pose.hpp"
#include "plantmodel/scene_synth.hpp"
#include "plantmodel/segnet.hpp"
#include "plantmodel/uncertainty.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace plantmodel {

/// Everything a pipeline run depends on. Loaded from a TOML file; see
/// config/desk.toml for the keys and their defaults.
struct PipelineConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    bool timings = false;  // real seconds in time_s columns (breaks byte-stable reports)

    SceneSpec scene;  // template for every tact; the seed is derived per tact
    int train_tacts = 8;
    int test_tacts = 2;

    NetworkConfig net;
    TrainConfig train = [] {
        TrainConfig t = TrainConfig::defaults_for(NetMode::bayesian);
        t.epochs = 150;
        return t;
    }();
    double block_edge = 4.0;
    int mc_samples = 50;

    UncertaintyMethod filter_method = UncertaintyMethod::predictive;
    double k_sigma = 2.0;
    double credible_level = 0.95;

    ClusterParams cluster;
    std::vector<SemanticClass> cluster_classes{SemanticClass::car, SemanticClass::hanger};

    PoseParams pose;
    std::vector<SemanticClass> pose_classes{SemanticClass::car,  SemanticClass::hanger, SemanticClass::floor,
                                            SemanticClass::band, SemanticClass::lineside, SemanticClass::wall,
                                            SemanticClass::column, SemanticClass::ceiling};

    SavingsInput savings;

    std::optional<std::filesystem::path> quality_measured, quality_reference;

    void validate() const;

    /// Canonical text of the effective configuration; equal configs give equal text.
    std::string canonical() const;
    /// One section of canonical(): "top", "scene", "segnet", "train", ...
    std::string section(std::string_view name) const;
};

/// Throws ParseError (with line) on TOML syntax errors and ValidationError on
/// unknown keys, wrong types or invalid values.
PipelineConfig parse_config(const std::string& toml_text);
PipelineConfig load_config(const std::filesystem::path& path);

/// 64-bit FNV-1a as 16 hex digits.
std::string fingerprint(std::string_view text);

enum class Stage { synth, train, segment, uncertainty, cluster, pose, export_, quality, savings };
inline constexpr Stage kAllStages[] = {Stage::synth,   Stage::train, Stage::segment, Stage::uncertainty, Stage::cluster,
                                       Stage::pose,    Stage::export_, Stage::quality, Stage::savings};
std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view s);

struct RunOptions {
    bool force = false;        // recompute even when the manifest matches
    std::ostream* log = nullptr;  // progress and summary tables
};

/// Runs one stage. Each stage writes its artifacts under out_dir/<stage>/ and
/// a manifest.json recording seed, config hash, inputs, outputs and timings.
/// A stage whose manifest hash matches and whose outputs exist is skipped.
/// Returns true when the stage ran, false when it was reused.
/// Missing upstream artifacts raise StageError naming the file.
bool run_stage(Stage stage, const PipelineConfig& cfg, const RunOptions& opts = {});

/// synth through savings, in order.
void run_all(const PipelineConfig& cfg, const RunOptions& opts = {});

/// Rotational symmetry order of a template about the vertical axis (1 if none).
int yaw_symmetry(SemanticClass c);

}  // namespace plantmodel
