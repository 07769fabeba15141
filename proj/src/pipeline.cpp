#include "plantmodel/pipeline.hpp"

#include "plantmodel/error.hpp"
#include "plantmodel/quality.hpp"
#include "plantmodel/text_io.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace plantmodel {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view stage_name(Stage s) {
    switch (s) {
        case Stage::synth: return "synth";
        case Stage::train: return "train";
        case Stage::segment: return "segment";
        case Stage::uncertainty: return "uncertainty";
        case Stage::cluster: return "cluster";
        case Stage::pose: return "pose";
        case Stage::export_: return "export";
        case Stage::quality: return "quality";
        case Stage::savings: return "savings";
    }
    return "?";
}

Stage parse_stage(std::string_view s) {
    for (Stage st : kAllStages)
        if (stage_name(st) == s) return st;
    throw ValidationError("unknown stage '" + std::string(s) + "'");
}

int yaw_symmetry(SemanticClass c) {
    switch (c) {
        case SemanticClass::band:
        case SemanticClass::lineside: return 2;
        case SemanticClass::column: return 4;
        default: return 1;
    }
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string two_digits(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d", i);
    return buf;
}

std::string train_name(int t) { return "train_" + two_digits(t); }
std::string test_name(int t) { return "test_" + two_digits(t); }

// Per-tact seeds are drawn from one counter across train and test tacts.
std::uint64_t tact_seed(const PipelineConfig& cfg, bool test, int t) {
    return mix(cfg.seed, 100 + static_cast<std::uint64_t>(test ? cfg.train_tacts + t : t));
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out(1);
    for (char c : line) {
        if (c == ',')
            out.emplace_back();
        else
            out.back() += c;
    }
    return out;
}

std::string num(double v) { return format_double(v); }

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

double accuracy_of(std::span<const int> predicted, std::span<const int> truth) {
    if (truth.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double mean_iou(std::span<const int> predicted, std::span<const int> truth) {
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool p = predicted[i] == c, t = truth[i] == c;
            inter += p && t;
            uni += p || t;
        }
        if (uni == 0) continue;
        sum += static_cast<double>(inter) / static_cast<double>(uni);
        ++n;
    }
    return n ? sum / n : 0.0;
}

std::vector<std::size_t> read_indices(const fs::path& path) {
    std::vector<std::size_t> out;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(static_cast<std::size_t>(parse_int(line)));
    return out;
}

std::vector<int> read_ints(const fs::path& path) {
    std::vector<int> out;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(static_cast<int>(parse_int(line)));
    return out;
}

template <typename Range>
std::string lines_of(const Range& values) {
    std::string out;
    for (const auto& v : values) out += std::to_string(v) + '\n';
    return out;
}

// Everything a stage body needs, plus the bookkeeping for its manifest.
struct Ctx {
    const PipelineConfig& cfg;
    std::ostream* log;
    fs::path dir;
    std::vector<std::string> inputs, outputs;

    fs::path in(const std::string& rel) {
        inputs.push_back(rel);
        return cfg.out_dir / rel;
    }
    fs::path out(const std::string& name) {
        outputs.push_back(name);
        return dir / name;
    }
    template <typename... T>
    void say(const T&... parts) const {
        if (!log) return;
        ((*log) << ... << parts);
        *log << std::endl;
    }
};

// ---------------------------------------------------------------------------
// Stage bodies

void run_synth(Ctx& ctx) {
    const auto& cfg = ctx.cfg;
    ctx.say("tact       points  objects");
    auto one = [&](bool test, int t) {
        const std::string name = test ? test_name(t) : train_name(t);
        SceneSpec spec = cfg.scene;
        spec.seed = tact_seed(cfg, test, t);
        const Scene scene = generate_scene(spec);
        save_cloud(scene.cloud, ctx.out(name + ".xyzl"));
        write_text_file(ctx.out(name + ".ids"), lines_of(scene.truth.instance_ids));
        write_aml(ground_truth_model(scene.truth, name), ctx.out(name + "_truth.aml"));
        if (test) {
            spec.noise_sigma_mm = 0.0;
            spec.occlusion_fraction = 0.0;
            save_cloud(generate_scene(spec).cloud, ctx.out(name + "_reference.xyzl"));
        }
        ctx.say(std::left, std::setw(9), name, std::right, std::setw(8), scene.cloud.size(), std::setw(9),
                scene.truth.objects.size());
    };
    for (int t = 0; t < cfg.train_tacts; ++t) one(false, t);
    for (int t = 0; t < cfg.test_tacts; ++t) one(true, t);
}

void run_train(Ctx& ctx) {
    const auto& cfg = ctx.cfg;
    std::vector<TrainBlock> blocks;
    for (int t = 0; t < cfg.train_tacts; ++t) {
        const PointCloud cloud = load_cloud(ctx.in("synth/" + train_name(t) + ".xyzl"));
        auto b = make_training_blocks(cloud, cfg.net, {cfg.block_edge, mix(cfg.seed, 200 + t)});
        std::move(b.begin(), b.end(), std::back_inserter(blocks));
    }
    if (blocks.empty()) throw StageError("train: no training blocks");
    TrainConfig tc = cfg.train;
    tc.seed = mix(cfg.seed, 2);
    ctx.say(mode_name(cfg.net.mode), " network, ", blocks.size(), " blocks, ", tc.epochs, " epochs");
    const int every = std::max(1, tc.epochs / 10);
    const auto result = train(tc, cfg.net, blocks, [&](const EpochMetrics& m) {
        if (m.epoch % every == 0 || m.epoch == tc.epochs)
            ctx.say("epoch ", std::setw(4), m.epoch, "  loss ", fixed(m.loss, 4), "  accuracy ", fixed(m.accuracy, 4));
    });
    save_checkpoint(cfg.net, result.params, ctx.out("model.ckpt"));
    write_metrics_csv(result.history, ctx.out("metrics.csv"));
}

void run_segment(Ctx& ctx) {
    const auto& cfg = ctx.cfg;
    const Checkpoint ckpt = load_checkpoint(ctx.in("train/model.ckpt"));
    std::string csv = "tact,n_points,accuracy,mean_iou\n";
    ctx.say("tact      accuracy  mean IoU");
    for (int t = 0; t < cfg.test_tacts; ++t) {
        const std::string name = test_name(t);
        const PointCloud cloud = load_cloud(ctx.in("synth/" + name + ".xyzl"));
        const auto samples = predict_cloud(ckpt.config, ckpt.params, cloud, cfg.mc_samples, mix(cfg.seed, 300 + t),
                                           {cfg.block_edge, mix(cfg.seed, 400 + t)});
        samples.save(ctx.out(name + ".samples"));
        PointCloud predicted = cloud;
        predicted.labels = predict_class(samples);
        save_cloud(predicted, ctx.out(name + "_pred.xyzl"));
        const double acc = accuracy_of(predicted.labels, cloud.labels);
        const double iou = mean_iou(predicted.labels, cloud.labels);
        csv += name + ',' + std::to_string(cloud.size()) + ',' + num(acc) + ',' + num(iou) + '\n';
        ctx.say(std::left, std::setw(9), name, std::right, std::setw(9), fixed(acc, 4), std::setw(10), fixed(iou, 4));
    }
    write_text_file(ctx.out("segmentation.csv"), csv);
}

void run_uncertainty(Ctx& ctx) {
    const auto& cfg = ctx.cfg;
    std::string csv = "tact,method,drop_pct,baseline_accuracy,retained_accuracy\n";
    ctx.say("tact      method      drop %  accuracy  retained");
    for (int t = 0; t < cfg.test_tacts; ++t) {
        const std::string name = test_name(t);
        const PointCloud truth = load_cloud(ctx.in("synth/" + name + ".xyzl"));
        const auto samples = PredictiveSamples::load(ctx.in("segment/" + name + ".samples"));
        if (samples.points() != truth.size())
            throw StageError("uncertainty: " + name + ".samples does not match the tact's point count");
        const auto report = assess_uncertainty(samples, cfg.k_sigma, cfg.credible_level);
        write_uncertainty_csv(report, ctx.out(name + "_uncertainty.csv"));

        const double base = accuracy_of(report.predicted, truth.labels);
        for (UncertaintyMethod m : kAllMethods) {
            const auto flags = report.uncertain(m);
            std::size_t kept = 0, hit = 0;
            for (std::size_t i = 0; i < flags.size(); ++i) {
                if (flags[i]) continue;
                ++kept;
                hit += report.predicted[i] == truth.labels[i];
            }
            const double drop = 100.0 * static_cast<double>(flags.size() - kept) / static_cast<double>(flags.size());
            const double retained = kept ? static_cast<double>(hit) / static_cast<double>(kept) : 0.0;
            csv += name + ',' + std::string(method_name(m)) + ',' + num(drop) + ',' + num(base) + ',' + num(retained) + '\n';
            ctx.say(std::left, std::setw(9), name, ' ', std::setw(10), method_name(m), std::right, std::setw(8),
                    fixed(drop, 2), std::setw(10), fixed(base, 4), std::setw(10), fixed(retained, 4));
        }

        PointCloud predicted = truth;
        predicted.labels = report.predicted;
        const auto filtered = filter_certain(predicted, report.uncertain(cfg.filter_method));
        save_cloud(filtered.cloud, ctx.out(name + "_filtered.xyzl"));
        write_text_file(ctx.out(name + "_kept.txt"), lines_of(filtered.kept));
    }
    write_text_file(ctx.out("filtering.csv"), csv);
}

std::map<SemanticClass, int> truth_counts(const SceneModel& truth) {
    std::map<SemanticClass, int> n;
    for (const auto& o : truth.objects) ++n[parse_class(o.pose.class_name)];
    return n;
}

void run_cluster(Ctx& ctx) {
    const auto& cfg = ctx.cfg;
    ctx.say("tact      class      points  method    mistakes %  uncertain %");
    for (int t = 0; t < cfg.test_tacts; ++t) {
        const std::string name = test_name(t);
        const PointCloud filtered = load_cloud(ctx.in("uncertainty/" + name + "_filtered.xyzl"));
        const auto kept = read_indices(ctx.in("uncertainty/" + name + "_kept.txt"));
        const PointCloud truth = load_cloud(ctx.in("synth/" + name + ".xyzl"));
        const auto ids = read_ints(ctx.in("synth/" + name + ".ids"));
        const auto counts = truth_counts(parse_aml(ctx.in("synth/" + name + "_truth.aml")));
        if (kept.size() != filtered.size() || ids.size() != truth.size())
            throw StageError("cluster: artifacts of " + name + " disagree in size");

        std::vector<ClusterReportRow> rows;
        for (SemanticClass cls : cfg.cluster_classes) {
            const auto it = counts.find(cls);
            const int k = it == counts.end() ? 0 : it->second;
            std::vector<Vec3> pts;
            std::vector<int> key;  // instance id, or a negative code for points of other classes
            for (std::size_t i = 0; i < filtered.size(); ++i) {
                if (filtered.labels[i] != class_index(cls)) continue;
                pts.push_back(filtered.points[i]);
                const std::size_t src = kept[i];
                key.push_back(truth.labels[src] == class_index(cls) ? ids[src] : -1 - truth.labels[src]);
            }
            if (k == 0 || pts.size() < static_cast<std::size_t>(k)) continue;
            for (ClusterMethod m : kAllClusterMethods) {
                ClusterParams p = cfg.cluster;
                p.method = m;
                p.k = k;
                p.seed = mix(mix(cfg.seed, 600 + t), static_cast<std::uint64_t>(cls));
                const auto a = run_clustering(pts, p);
                const auto score = score_clusters(a, key);
                ClusterReportRow row{std::string(class_name(cls)), pts.size(), std::string(cluster_method_name(m)),
                                     score.mistakes_pct, score.uncertain_pct, cfg.timings ? a.runtime_s : -1.0};
                ctx.say(std::left, std::setw(9), name, ' ', std::setw(9), row.cls, std::right, std::setw(8), row.n_points,
                        "  ", std::left, std::setw(9), row.method, std::right, std::setw(11), fixed(row.mistakes_pct, 2),
                        std::setw(13), fixed(row.uncertain_pct, 2));
                rows.push_back(std::move(row));
            }
        }
        write_cluster_csv(rows, ctx.out("clusters_" + name + ".csv"));
    }
}

struct Deviation {
    int gt_id = -1;
    double d[6] = {};
};

Deviation deviation(const ObjectPose& est, const SceneModel& truth) {
    Deviation best;
    double best_dist = std::numeric_limits<double>::infinity();
    const ObjectPose* gt = nullptr;
    for (const auto& o : truth.objects) {
        if (o.pose.class_name != est.class_name) continue;
        const double dist = std::hypot(est.x_mm - o.pose.x_mm, est.y_mm - o.pose.y_mm, est.z_mm - o.pose.z_mm);
        if (dist < best_dist) {
            best_dist = dist;
            gt = &o.pose;
        }
    }
    if (!gt) return best;
    best.gt_id = gt->instance_id;
    best.d[0] = est.x_mm - gt->x_mm;
    best.d[1] = est.y_mm - gt->y_mm;
    best.d[2] = est.z_mm - gt->z_mm;
    best.d[3] = wrap_deg(est.roll_deg - gt->roll_deg);
    best.d[4] = wrap_deg(est.pitch_deg - gt->pitch_deg);
    // A symmetric template matches equally well turned by a multiple of 360/order.
    const int order = yaw_symmetry(parse_class(est.class_name));
    double yaw = wrap_deg(est.yaw_deg - gt->yaw_deg);
    for (int k = 1; k < order; ++k) {
        const double alt = wrap_deg(est.yaw_deg - gt->yaw_deg - 360.0 * k / order);
        if (std::abs(alt) < std::abs(yaw)) yaw = alt;
    }
    best.d[5] = yaw;
    return best;
}

// The column prism is open at both ends, so a fit turned upside down covers
// the same points. Report the upright member of the pair.
ObjectPose upright(const ObjectPose& p, SemanticClass cls, const TactDims& dims) {
    if (cls != SemanticClass::column) return p;
    const RigidTransform t = transform_from_pose(p);
    if (t.rotation(2, 2) >= 0.0) return p;
    RigidTransform flip;
    flip.rotation = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
    flip.translation = Vec3(0.0, 0.0, dims.height);
    return pose_from_transform(t.compose(flip), p.class_name, p.instance_id);
}

constexpr const char* kPoseHeader =
    "class,instance_id,x_mm,y_mm,z_mm,roll_deg,pitch_deg,yaw_deg,gt_instance_id,dx_mm,dy_mm,dz_mm,droll_deg,"
    "dpitch_deg,dyaw_deg\n";

void run_pose(Ctx& ctx) {
    const auto& cfg = ctx.cfg;
    std::map<SemanticClass, PointCloud> refs;
    for (SemanticClass c : cfg.pose_classes)
        if (!is_structural(c) && c != SemanticClass::clutter)
            refs[c] = sample_reference(c, cfg.scene.points_per_m2, cfg.scene.dims);

    struct Acc {
        int n = 0;
        double sum[6] = {};
    };
    std::map<std::string, Acc> summary;
    for (int t = 0; t < cfg.test_tacts; ++t) {
        const std::string name = test_name(t);
        const PointCloud cloud = load_cloud(ctx.in("uncertainty/" + name + "_filtered.xyzl"));
        const SceneModel truth = parse_aml(ctx.in("synth/" + name + "_truth.aml"));
        ClusterParams cp = cfg.cluster;
        cp.seed = mix(cfg.seed, 500 + t);
        PoseParams pp = cfg.pose;
        pp.seed = mix(cfg.seed, 550 + t);
        PoseReport report = estimate_all(cloud, cfg.pose_classes, refs, cp, pp);
        for (auto& p : report.poses) p = upright(p, parse_class(p.class_name), cfg.scene.dims);

        std::string csv = kPoseHeader;
        for (const auto& p : report.poses) {
            const Deviation dev = deviation(p, truth);
            csv += p.class_name + ',' + std::to_string(p.instance_id);
            for (double v : {p.x_mm, p.y_mm, p.z_mm, p.roll_deg, p.pitch_deg, p.yaw_deg}) csv += ',' + num(v);
            csv += ',' + (dev.gt_id < 0 ? std::string("-") : std::to_string(dev.gt_id));
            for (double v : dev.d) csv += ',' + (dev.gt_id < 0 ? std::string("-") : num(v));
            csv += '\n';
            if (dev.gt_id < 0) continue;
            auto& acc = summary[p.class_name];
            ++acc.n;
            for (int i = 0; i < 6; ++i) acc.sum[i] += std::abs(dev.d[i]);
        }
        write_text_file(ctx.out("poses_" + name + ".csv"), csv);

        std::string fails = "class,instance_id,message\n";
        for (const auto& f : report.failures) {
            fails += f.class_name + ',' + std::to_string(f.instance_id) + ',' + csv_field(f.message) + '\n';
            ctx.say("warning: ", name, ": ", f.message);
        }
        write_text_file(ctx.out("failures_" + name + ".csv"), fails);
        ctx.say(name, ": ", report.poses.size(), " poses, ", report.failures.size(), " failures");
    }

    std::string csv = "class,n,mean_abs_dx_mm,mean_abs_dy_mm,mean_abs_dz_mm,mean_abs_droll_deg,mean_abs_dpitch_deg,"
                      "mean_abs_dyaw_deg\n";
    ctx.say("class        n     |dx| mm   |dy| mm   |dz| mm  |roll|  |pitch|  |yaw|");
    for (const auto& [cls, acc] : summary) {
        csv += cls + ',' + std::to_string(acc.n);
        std::ostringstream line;
        line << std::left << std::setw(10) << cls << std::right << std::setw(4) << acc.n;
        for (int i = 0; i < 6; ++i) {
            const double mean = acc.sum[i] / acc.n;
            csv += ',' + num(mean);
            line << std::setw(i < 3 ? 10 : 8) << fixed(mean, i < 3 ? 2 : 3);
        }
        csv += '\n';
        ctx.say(line.str());
    }
    write_text_file(ctx.out("pose_deviation.csv"), csv);
}

void run_export(Ctx& ctx) {
    const auto& cfg = ctx.cfg;
    for (int t = 0; t < cfg.test_tacts; ++t) {
        const std::string name = test_name(t);
        std::istringstream in(read_text_file(ctx.in("pose/poses_" + name + ".csv")));
        std::string line;
        std::getline(in, line);
        SceneModel model;
        model.name = name;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() < 8) throw StageError("export: malformed row in poses_" + name + ".csv");
            SceneObject o;
            o.pose.class_name = f[0];
            o.pose.instance_id = static_cast<int>(parse_int(f[1]));
            double* fields[] = {&o.pose.x_mm,     &o.pose.y_mm,      &o.pose.z_mm,
                                &o.pose.roll_deg, &o.pose.pitch_deg, &o.pose.yaw_deg};
            for (int i = 0; i < 6; ++i) *fields[i] = parse_double(f[2 + i]);
            if (!is_structural(parse_class(f[0]))) o.template_id = f[0];
            model.objects.push_back(std::move(o));
        }
        write_aml(model, ctx.out(name + ".aml"));
        ctx.say(name, ".aml: ", model.objects.size(), " objects");
    }
}

void run_quality(Ctx& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path measured_path =
        cfg.quality_measured ? *cfg.quality_measured : ctx.in("synth/" + test_name(0) + ".xyzl");
    const fs::path reference_path =
        cfg.quality_reference ? *cfg.quality_reference : ctx.in("synth/" + test_name(0) + "_reference.xyzl");
    const PointCloud measured = load_cloud(measured_path);
    const PointCloud reference = load_cloud(reference_path);
    const auto q = assess_quality(measured, reference);
    // Only file names go into the report so it does not depend on where the run lives.
    write_text_file(ctx.out("quality.csv"), "measured,reference,accuracy_mm,completeness,density\n" +
                                                csv_field(measured_path.filename().string()) + ',' +
                                                csv_field(reference_path.filename().string()) + ',' +
                                                num(q.accuracy_mm) + ',' + num(q.completeness) + ',' +
                                                num(q.density) + '\n');
    ctx.say("accuracy ", fixed(q.accuracy_mm, 3), " mm, completeness ", fixed(100.0 * q.completeness, 2),
            " %, density ", fixed(q.density, 3), " points within 10 mm");
}

void run_savings(Ctx& ctx) {
    const auto& in = ctx.cfg.savings;
    const Savings s = compute_savings(in);
    write_text_file(ctx.out("savings.csv"),
                    "cost_per_m2,area_per_plant,scanned_fraction,n_plants,scans_per_year,automation_degree,"
                    "total_cost_per_year,savings_per_year\n" +
                        num(in.cost_per_m2) + ',' + num(in.area_per_plant) + ',' + num(in.scanned_fraction) + ',' +
                        num(in.n_plants) + ',' + num(in.scans_per_year) + ',' + num(in.automation_degree) + ',' +
                        num(s.total_cost_per_year) + ',' + num(s.savings_per_year) + '\n');
    ctx.say("manual modelling cost per year: ", format_euro(s.total_cost_per_year));
    ctx.say("savings per year:               ", format_euro(s.savings_per_year));
}

// ---------------------------------------------------------------------------
// Bookkeeping

// Files a stage reads, checked before it runs so the error names the file.
std::vector<std::string> required_inputs(Stage s, const PipelineConfig& cfg) {
    std::vector<std::string> r;
    auto each_test = [&](std::initializer_list<std::string> patterns) {
        for (int t = 0; t < cfg.test_tacts; ++t)
            for (const auto& p : patterns) {
                std::string rel = p;
                rel.replace(rel.find('@'), 1, test_name(t));
                r.push_back(rel);
            }
    };
    switch (s) {
        case Stage::synth:
        case Stage::savings: break;
        case Stage::train:
            for (int t = 0; t < cfg.train_tacts; ++t) r.push_back("synth/" + train_name(t) + ".xyzl");
            break;
        case Stage::segment:
            r.push_back("train/model.ckpt");
            each_test({"synth/@.xyzl"});
            break;
        case Stage::uncertainty: each_test({"synth/@.xyzl", "segment/@.samples"}); break;
        case Stage::cluster:
            each_test({"uncertainty/@_filtered.xyzl", "uncertainty/@_kept.txt", "synth/@.xyzl", "synth/@.ids",
                       "synth/@_truth.aml"});
            break;
        case Stage::pose: each_test({"uncertainty/@_filtered.xyzl", "synth/@_truth.aml"}); break;
        case Stage::export_: each_test({"pose/poses_@.csv"}); break;
        case Stage::quality:
            if (!cfg.quality_measured) r.push_back("synth/" + test_name(0) + ".xyzl");
            if (!cfg.quality_reference) r.push_back("synth/" + test_name(0) + "_reference.xyzl");
            break;
    }
    return r;
}

std::vector<Stage> upstream(Stage s, const PipelineConfig& cfg) {
    switch (s) {
        case Stage::train: return {Stage::synth};
        case Stage::segment: return {Stage::train, Stage::synth};
        case Stage::uncertainty: return {Stage::segment, Stage::synth};
        case Stage::cluster:
        case Stage::pose: return {Stage::uncertainty, Stage::synth};
        case Stage::export_: return {Stage::pose};
        case Stage::quality:
            if (!cfg.quality_measured || !cfg.quality_reference) return {Stage::synth};
            return {};
        default: return {};
    }
}

std::string config_key(Stage s, const PipelineConfig& cfg) {
    std::string k = "seed = " + std::to_string(cfg.seed) + '\n';
    switch (s) {
        case Stage::synth: k += cfg.section("scene"); break;
        case Stage::train: k += cfg.section("segnet") + cfg.section("train"); break;
        case Stage::segment: k += cfg.section("segnet"); break;
        case Stage::uncertainty: k += cfg.section("uncertainty"); break;
        case Stage::cluster: k += cfg.section("cluster") + (cfg.timings ? "timings\n" : ""); break;
        case Stage::pose: k += cfg.section("scene") + cfg.section("cluster") + cfg.section("pose"); break;
        case Stage::export_: break;
        case Stage::quality: k += cfg.section("quality"); break;
        case Stage::savings: k += cfg.section("savings"); break;
    }
    return k;
}

std::optional<json> read_manifest(const fs::path& dir) {
    const fs::path p = dir / "manifest.json";
    if (!fs::exists(p)) return std::nullopt;
    try {
        return json::parse(read_text_file(p));
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

std::string stage_hash(Stage s, const PipelineConfig& cfg) {
    for (const auto& rel : required_inputs(s, cfg)) {
        if (fs::exists(cfg.out_dir / rel)) continue;
        if (rel == "train/model.ckpt")
            throw StageError("segment: checkpoint missing: " + (cfg.out_dir / rel).string() + " (run 'train' first)");
        throw StageError(std::string(stage_name(s)) + ": missing upstream artifact " + (cfg.out_dir / rel).string());
    }
    std::string key = std::string(stage_name(s)) + '\n' + config_key(s, cfg);
    for (Stage up : upstream(s, cfg)) {
        const auto m = read_manifest(cfg.out_dir / stage_name(up));
        key += std::string(stage_name(up)) + " = ";
        if (m && m->contains("stage_hash") && (*m)["stage_hash"].is_string()) {
            key += (*m)["stage_hash"].get<std::string>();
        } else {
            // Hand-placed inputs without a manifest: hash their contents instead.
            std::string contents;
            for (const auto& rel : required_inputs(s, cfg))
                if (rel.starts_with(std::string(stage_name(up)) + '/')) contents += read_text_file(cfg.out_dir / rel);
            key += fingerprint(contents);
        }
        key += '\n';
    }
    for (const auto& p : {cfg.quality_measured, cfg.quality_reference})
        if (s == Stage::quality && p) key += fingerprint(read_text_file(*p)) + '\n';
    return fingerprint(key);
}

bool up_to_date(const fs::path& dir, const std::string& hash) {
    const auto m = read_manifest(dir);
    if (!m || !m->contains("stage_hash") || (*m)["stage_hash"] != hash || !m->contains("outputs")) return false;
    for (const auto& o : (*m)["outputs"])
        if (!o.is_string() || !fs::exists(dir / o.get<std::string>())) return false;
    return true;
}

}  // namespace

bool run_stage(Stage stage, const PipelineConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    const fs::path dir = cfg.out_dir / stage_name(stage);
    const std::string hash = stage_hash(stage, cfg);
    if (!opts.force && up_to_date(dir, hash)) {
        if (opts.log) *opts.log << "[" << stage_name(stage) << "] up to date, reusing " << dir.string() << std::endl;
        return false;
    }
    if (opts.log) *opts.log << "[" << stage_name(stage) << "]" << std::endl;
    fs::create_directories(dir);
    fs::remove(dir / "manifest.json");

    Ctx ctx{cfg, opts.log, dir, {}, {}};
    const auto t0 = std::chrono::steady_clock::now();
    switch (stage) {
        case Stage::synth: run_synth(ctx); break;
        case Stage::train: run_train(ctx); break;
        case Stage::segment: run_segment(ctx); break;
        case Stage::uncertainty: run_uncertainty(ctx); break;
        case Stage::cluster: run_cluster(ctx); break;
        case Stage::pose: run_pose(ctx); break;
        case Stage::export_: run_export(ctx); break;
        case Stage::quality: run_quality(ctx); break;
        case Stage::savings: run_savings(ctx); break;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json m;
    m["stage"] = stage_name(stage);
    m["seed"] = cfg.seed;
    m["config_hash"] = fingerprint(cfg.canonical());
    m["stage_hash"] = hash;
    m["inputs"] = ctx.inputs;
    m["outputs"] = ctx.outputs;
    m["timings"] = {{"seconds", seconds}};
    write_text_file(dir / "manifest.json", m.dump(2) + '\n');
    return true;
}

void run_all(const PipelineConfig& cfg, const RunOptions& opts) {
    for (Stage s : kAllStages) run_stage(s, cfg, opts);
}

}  // namespace plantmodel
