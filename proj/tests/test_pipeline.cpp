#include <doctest.h>

#include "plantmodel/error.hpp"
#include "plantmodel/pipeline.hpp"
#include "plantmodel/text_io.hpp"
#include "test_support.hpp"

#include <json.hpp>

#include <sstream>

using namespace plantmodel;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(seed = 7

[scene]
train_tacts = 1
test_tacts = 1
points_per_m2 = 20
n_clutter = 2

[segnet]
encoder_widths = [16]
global_width = 32
decoder_widths = [16]
block_size = 512
mc_samples = 4

[train]
epochs = 2
)";

PipelineConfig tiny(const fs::path& out) {
    PipelineConfig c = parse_config(kTiny);
    c.out_dir = out;
    return c;
}

std::string expect_error(const std::string& toml) {
    try {
        parse_config(toml);
    } catch (const ValidationError& e) {
        return e.what();
    }
    FAIL("no error for: " << toml);
    return {};
}

}  // namespace

TEST_CASE("empty config gives the defaults, and the bundled file spells them out") {
    const PipelineConfig d;
    CHECK(parse_config("").canonical() == d.canonical());
    CHECK(load_config(fs::path(PLANTMODEL_SOURCE_DIR) / "config" / "desk.toml").canonical() == d.canonical());
    CHECK(d.train.epochs == 150);
    CHECK(d.mc_samples == 50);
    CHECK(d.net.mode == NetMode::bayesian);
}

TEST_CASE("canonical text parses back to itself") {
    PipelineConfig c = parse_config(R"(
seed = 123
[segnet]
mode = "frequentist"
encoder_widths = []
[cluster]
classes = ["hanger"]
max_eps = inf
[quality]
measured = "a \"b\".xyzl"
)");
    CHECK(c.seed == 123);
    CHECK(c.net.encoder_widths.empty());
    CHECK(std::isinf(c.cluster.max_eps));
    REQUIRE(c.quality_measured);
    CHECK(c.quality_measured->string() == "a \"b\".xyzl");
    CHECK(parse_config(c.canonical()).canonical() == c.canonical());
    CHECK(fingerprint(c.canonical()) != fingerprint(PipelineConfig{}.canonical()));
}

TEST_CASE("learning-rate defaults follow the mode unless set") {
    const auto f = parse_config("[segnet]\nmode = \"frequentist\"\n");
    CHECK(f.train.lr_init == 0.001);
    CHECK(f.train.lr_decay_factor == 0.7);
    CHECK(f.train.epochs == 150);
    const auto g = parse_config("[segnet]\nmode = \"frequentist\"\n[train]\nlr_init = 0.05\n");
    CHECK(g.train.lr_init == 0.05);
    CHECK(g.train.lr_decay_factor == 0.7);
    CHECK(parse_config("[train]\nlr_init = 1\n").train.lr_init == 1.0);
}

TEST_CASE("config errors") {
    try {
        parse_config("seed = 1\n\n[scene\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    CHECK(expect_error("[scene]\nn_carz = 3\n").find("scene.n_carz") != std::string::npos);
    CHECK(expect_error("[render]\nx = 1\n").find("render") != std::string::npos);
    CHECK(expect_error("seed = -1\n").find("seed") != std::string::npos);
    CHECK(expect_error("seed = 1.5\n").find("seed") != std::string::npos);
    CHECK(expect_error("scene = 3\n").find("must be a table") != std::string::npos);
    CHECK(expect_error("[segnet]\nmc_samples = 1\n").find("mc_samples") != std::string::npos);
    CHECK(expect_error("[segnet]\nmode = \"deep\"\n").find("deep") != std::string::npos);
    CHECK(expect_error("[cluster]\nclasses = [\"boat\"]\n").find("boat") != std::string::npos);
    CHECK(expect_error("[uncertainty]\nlevel = 1.0\n").find("credible") != std::string::npos);
    CHECK(expect_error("[savings]\nscanned_fraction = 2\n").find("fraction") != std::string::npos);
    CHECK_THROWS_AS(load_config("/nonexistent/plantmodel.toml"), IoError);
}

TEST_CASE("fingerprint is 64-bit FNV-1a") {
    CHECK(fingerprint("") == "cbf29ce484222325");
    CHECK(fingerprint("a") == "af63dc4c8601ec8c");
    CHECK(fingerprint("foobar") == "85944171f73967e8");
}

TEST_CASE("stage names") {
    for (Stage s : kAllStages) CHECK(parse_stage(stage_name(s)) == s);
    CHECK(stage_name(Stage::export_) == "export");
    CHECK_THROWS_AS(parse_stage("render"), ValidationError);
    CHECK(yaw_symmetry(SemanticClass::car) == 1);
    CHECK(yaw_symmetry(SemanticClass::column) == 4);
}

TEST_CASE("run-all writes every artifact and a manifest per stage") {
    const auto dir = testing::scratch_dir("pipeline_all");
    const auto cfg = tiny(dir);
    std::ostringstream log;
    run_all(cfg, {false, &log});

    for (Stage s : kAllStages) {
        const auto m = nlohmann::json::parse(read_text_file(dir / stage_name(s) / "manifest.json"));
        CHECK(m["stage"] == stage_name(s));
        CHECK(m["seed"] == 7);
        CHECK(m["config_hash"] == fingerprint(cfg.canonical()));
        CHECK(m["timings"]["seconds"].get<double>() >= 0.0);
        CHECK(!m["outputs"].empty());
        for (const auto& o : m["outputs"]) CHECK(fs::exists(dir / stage_name(s) / o.get<std::string>()));
    }
    CHECK(fs::exists(dir / "export" / "test_00.aml"));
    CHECK(parse_aml(dir / "synth" / "test_00_truth.aml").objects.size() > 0);
    CHECK(read_text_file(dir / "savings" / "savings.csv").find(",8550000,5985000\n") != std::string::npos);
    CHECK(log.str().find("5,985,000 €") != std::string::npos);
    CHECK(read_text_file(dir / "uncertainty" / "filtering.csv").starts_with("tact,method,drop_pct"));

    SUBCASE("unchanged stages are reused") {
        for (Stage s : kAllStages) CHECK_FALSE(run_stage(s, cfg));
        CHECK(run_stage(Stage::cluster, cfg, {true, nullptr}));
    }
    SUBCASE("a change reruns the stage and what depends on it") {
        PipelineConfig c = cfg;
        c.savings.n_plants = 20;
        c.k_sigma = 3.0;
        CHECK_FALSE(run_stage(Stage::synth, c));
        CHECK_FALSE(run_stage(Stage::segment, c));
        CHECK(run_stage(Stage::uncertainty, c));
        CHECK(run_stage(Stage::cluster, c));
        CHECK(run_stage(Stage::pose, c));
        CHECK(run_stage(Stage::export_, c));
        CHECK_FALSE(run_stage(Stage::quality, c));
        CHECK(run_stage(Stage::savings, c));
        CHECK(read_text_file(dir / "savings" / "savings.csv").find(",17100000,11970000\n") != std::string::npos);
    }
    SUBCASE("a deleted output forces a rerun") {
        fs::remove(dir / "quality" / "quality.csv");
        CHECK(run_stage(Stage::quality, cfg));
    }
    SUBCASE("quality on supplied clouds") {
        PipelineConfig c = cfg;
        c.quality_measured = dir / "synth" / "test_00_reference.xyzl";
        c.quality_reference = dir / "synth" / "test_00_reference.xyzl";
        CHECK(run_stage(Stage::quality, c));
        CHECK(read_text_file(dir / "quality" / "quality.csv").find("test_00_reference.xyzl,test_00_reference.xyzl,0,1,")
              != std::string::npos);
    }
}

TEST_CASE("reports are byte-identical across runs and directories") {
    const auto a = testing::scratch_dir("pipeline_a"), b = testing::scratch_dir("pipeline_b");
    run_all(tiny(a));
    run_all(tiny(b));
    int compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        const auto ext = e.path().extension();
        if (ext != ".csv" && ext != ".aml") continue;
        const auto rel = fs::relative(e.path(), a);
        CHECK_MESSAGE(read_text_file(e.path()) == read_text_file(b / rel), rel.string());
        ++compared;
    }
    CHECK(compared >= 10);
}

TEST_CASE("missing upstream artifacts are named") {
    const auto dir = testing::scratch_dir("pipeline_missing");
    const auto cfg = tiny(dir);
    try {
        run_stage(Stage::segment, cfg);
        FAIL("segment ran without a checkpoint");
    } catch (const StageError& e) {
        CHECK(std::string(e.what()).find("checkpoint missing") != std::string::npos);
        CHECK(std::string(e.what()).find("model.ckpt") != std::string::npos);
    }
    try {
        run_stage(Stage::cluster, cfg);
        FAIL("cluster ran without inputs");
    } catch (const StageError& e) {
        CHECK(std::string(e.what()).find("test_00_filtered.xyzl") != std::string::npos);
    }
    CHECK_THROWS_AS(run_stage(Stage::train, cfg), StageError);
    CHECK(run_stage(Stage::savings, cfg));

    PipelineConfig bad = cfg;
    bad.mc_samples = 1;
    CHECK_THROWS_AS(run_stage(Stage::savings, bad), ValidationError);
}
