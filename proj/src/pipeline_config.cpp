#include "plantmodel/error.hpp"
#include "plantmodel/pipeline.hpp"
#include "plantmodel/text_io.hpp"

#include <toml.hpp>

#include <cmath>
#include <cstdio>
#include <set>

namespace plantmodel {

namespace {

// Reads typed values out of one TOML table and remembers which keys were
// used, so leftovers can be reported as unknown.
class Section {
public:
    Section(const toml::table* t, std::string name) : table_(t), name_(std::move(name)) {}

    template <typename T>
    void get(const char* key, T& out) {
        const toml::node* n = find(key);
        if (!n) return;
        if constexpr (std::is_same_v<T, bool>) {
            const auto v = n->value_exact<bool>();
            if (!v) fail(key, "a boolean");
            out = *v;
        } else if constexpr (std::is_same_v<T, std::string>) {
            const auto v = n->value_exact<std::string>();
            if (!v) fail(key, "a string");
            out = *v;
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!n->is_number()) fail(key, "a number");
            out = *n->value<double>();
        } else {
            const auto v = n->value_exact<std::int64_t>();
            if (!v) fail(key, "an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (*v < 0) fail(key, "a non-negative integer");
            } else if (*v < std::numeric_limits<T>::min() || *v > std::numeric_limits<T>::max()) {
                fail(key, "an integer in range");
            }
            out = static_cast<T>(*v);
        }
    }

    void get_ints(const char* key, std::vector<int>& out) {
        const toml::node* n = find(key);
        if (!n) return;
        const auto* arr = n->as_array();
        if (!arr) fail(key, "an array of integers");
        out.clear();
        for (const auto& e : *arr) {
            const auto v = e.value_exact<std::int64_t>();
            if (!v || *v < 0 || *v > 1 << 20) fail(key, "an array of integers");
            out.push_back(static_cast<int>(*v));
        }
    }

    void get_classes(const char* key, std::vector<SemanticClass>& out) {
        const toml::node* n = find(key);
        if (!n) return;
        const auto* arr = n->as_array();
        if (!arr) fail(key, "an array of class names");
        out.clear();
        for (const auto& e : *arr) {
            const auto v = e.value_exact<std::string>();
            if (!v) fail(key, "an array of class names");
            out.push_back(parse_class(*v));
        }
    }

    template <typename Parse>
    void get_enum(const char* key, Parse parse) {
        std::string s;
        get(key, s);
        if (find(key)) parse(s);
    }

    void allow(const char* key) {
        if (table_) used_.insert(key);
    }

    void finish() const {
        if (!table_) return;
        for (const auto& [k, v] : *table_)
            if (!used_.count(std::string(k.str())))
                throw ValidationError("unknown config key '" + prefix() + std::string(k.str()) + "'");
    }

private:
    const toml::node* find(const char* key) {
        if (!table_) return nullptr;
        used_.insert(key);
        return table_->get(key);
    }

    [[noreturn]] void fail(const char* key, const char* what) const {
        throw ValidationError("config key '" + prefix() + key + "' must be " + what);
    }

    std::string prefix() const { return name_.empty() ? "" : name_ + "."; }

    const toml::table* table_;
    std::string name_;
    std::set<std::string, std::less<>> used_;
};

void line(std::string& out, const char* key, double v) {
    out += key;
    out += " = ";
    if (std::isinf(v))
        out += v > 0 ? "inf" : "-inf";
    else
        append_double(out, v);
    out += '\n';
}

void line(std::string& out, const char* key, long long v) { out += std::string(key) + " = " + std::to_string(v) + '\n'; }
void line(std::string& out, const char* key, int v) { line(out, key, static_cast<long long>(v)); }
void line(std::string& out, const char* key, bool v) { out += std::string(key) + (v ? " = true\n" : " = false\n"); }

void line(std::string& out, const char* key, std::string_view v) {
    out += std::string(key) + " = \"";
    for (char c : v) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    out += "\"\n";
}

void line(std::string& out, const char* key, const std::vector<int>& v) {
    out += std::string(key) + " = [";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
    out += "]\n";
}

void line(std::string& out, const char* key, const std::vector<SemanticClass>& v) {
    out += std::string(key) + " = [";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", \"" : "\"") + std::string(class_name(v[i])) + '"';
    out += "]\n";
}

}  // namespace

PipelineConfig parse_config(const std::string& toml_text) {
    toml::table doc;
    try {
        doc = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        throw ParseError(static_cast<std::size_t>(e.source().begin.line), std::string(e.description()));
    }

    Section top(&doc, "");
    auto sub = [&](const char* name) {
        top.allow(name);
        const toml::node* n = doc.get(name);
        if (n && !n->is_table()) throw ValidationError(std::string("config key '") + name + "' must be a table");
        return Section(n ? n->as_table() : nullptr, name);
    };

    PipelineConfig c;
    top.get("seed", c.seed);
    std::string out = c.out_dir.string();
    top.get("out", out);
    c.out_dir = out;
    top.get("timings", c.timings);

    Section scene = sub("scene");
    scene.get("train_tacts", c.train_tacts);
    scene.get("test_tacts", c.test_tacts);
    scene.get("points_per_m2", c.scene.points_per_m2);
    scene.get("noise_sigma_mm", c.scene.noise_sigma_mm);
    scene.get("occlusion_fraction", c.scene.occlusion_fraction);
    scene.get("length", c.scene.dims.length);
    scene.get("width", c.scene.dims.width);
    scene.get("height", c.scene.dims.height);
    scene.get("n_cars", c.scene.n_cars);
    scene.get("n_hangers", c.scene.n_hangers);
    scene.get("n_columns", c.scene.n_columns);
    scene.get("n_lineside", c.scene.n_lineside);
    scene.get("n_clutter", c.scene.n_clutter);
    scene.get_classes("classes", c.scene.classes);
    scene.finish();

    Section net = sub("segnet");
    net.get_enum("mode", [&](const std::string& s) { c.net.mode = parse_mode(s); });
    net.get_ints("encoder_widths", c.net.encoder_widths);
    net.get("global_width", c.net.global_width);
    net.get_ints("decoder_widths", c.net.decoder_widths);
    net.get("block_size", c.net.block_size);
    net.get("block_edge", c.block_edge);
    net.get("mc_samples", c.mc_samples);
    net.finish();

    // Learning-rate defaults follow the mode unless set explicitly.
    const int epochs = c.train.epochs;
    c.train = TrainConfig::defaults_for(c.net.mode);
    c.train.epochs = epochs;
    Section train = sub("train");
    train.get("epochs", c.train.epochs);
    train.get("batch_size", c.train.batch_size);
    train.get("momentum", c.train.momentum);
    train.get("lr_init", c.train.lr_init);
    train.get("lr_decay_every", c.train.lr_decay_every);
    train.get("lr_decay_factor", c.train.lr_decay_factor);
    train.get("kl_weight", c.train.kl_weight);
    train.finish();

    Section unc = sub("uncertainty");
    unc.get_enum("method", [&](const std::string& s) { c.filter_method = parse_method(s); });
    unc.get("k_sigma", c.k_sigma);
    unc.get("level", c.credible_level);
    unc.finish();

    Section cl = sub("cluster");
    cl.get_enum("method", [&](const std::string& s) { c.cluster.method = parse_cluster_method(s); });
    cl.get_classes("classes", c.cluster_classes);
    cl.get("eps", c.cluster.eps);
    cl.get("min_pts", c.cluster.min_pts);
    cl.get("xi", c.cluster.xi);
    cl.get("min_cluster_size", c.cluster.min_cluster_size);
    cl.get("max_eps", c.cluster.max_eps);
    cl.get("n_neighbors", c.cluster.n_neighbors);
    cl.get("fuzzifier", c.cluster.fuzzifier);
    cl.get("cmeans_threshold", c.cluster.cmeans_threshold);
    cl.finish();

    Section pose = sub("pose");
    pose.get_classes("classes", c.pose_classes);
    pose.get("voxel", c.pose.voxel);
    pose.get("ransac_iter", c.pose.ransac_iter);
    pose.get("inlier_tol", c.pose.inlier_tol);
    pose.get("icp_max_iter", c.pose.icp_max_iter);
    pose.get("icp_tol", c.pose.icp_tol);
    pose.get("with_scale", c.pose.with_scale);
    pose.finish();

    Section sav = sub("savings");
    sav.get("cost_per_m2", c.savings.cost_per_m2);
    sav.get("area_per_plant", c.savings.area_per_plant);
    sav.get("scanned_fraction", c.savings.scanned_fraction);
    sav.get("n_plants", c.savings.n_plants);
    sav.get("scans_per_year", c.savings.scans_per_year);
    sav.get("automation_degree", c.savings.automation_degree);
    sav.finish();

    Section q = sub("quality");
    std::string measured, reference;
    q.get("measured", measured);
    q.get("reference", reference);
    if (!measured.empty()) c.quality_measured = measured;
    if (!reference.empty()) c.quality_reference = reference;
    q.finish();

    top.finish();
    c.validate();
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_text_file(path));
}

void PipelineConfig::validate() const {
    scene.validate();
    net.validate();
    train.validate();
    cluster.validate();
    pose.validate();
    savings.validate();
    if (train_tacts < 1 || test_tacts < 1) throw ValidationError("train_tacts and test_tacts must be at least 1");
    if (!(block_edge > 0.0) || !std::isfinite(block_edge)) throw ValidationError("block_edge must be positive");
    if (mc_samples < 2) throw ValidationError("mc_samples must be at least 2");
    if (!(k_sigma > 0.0) || !std::isfinite(k_sigma)) throw ValidationError("k_sigma must be positive");
    if (!(credible_level > 0.0 && credible_level < 1.0)) throw ValidationError("credible level must lie in (0, 1)");
    if (out_dir.empty()) throw ValidationError("out must not be empty");
}

std::string PipelineConfig::section(std::string_view name) const {
    std::string o;
    if (name == "top") {
        line(o, "seed", static_cast<long long>(seed));
        line(o, "timings", timings);
    } else if (name == "scene") {
        o += "[scene]\n";
        line(o, "train_tacts", train_tacts);
        line(o, "test_tacts", test_tacts);
        line(o, "points_per_m2", scene.points_per_m2);
        line(o, "noise_sigma_mm", scene.noise_sigma_mm);
        line(o, "occlusion_fraction", scene.occlusion_fraction);
        line(o, "length", scene.dims.length);
        line(o, "width", scene.dims.width);
        line(o, "height", scene.dims.height);
        line(o, "n_cars", scene.n_cars);
        line(o, "n_hangers", scene.n_hangers);
        line(o, "n_columns", scene.n_columns);
        line(o, "n_lineside", scene.n_lineside);
        line(o, "n_clutter", scene.n_clutter);
        line(o, "classes", scene.classes);
    } else if (name == "segnet") {
        o += "[segnet]\n";
        line(o, "mode", mode_name(net.mode));
        line(o, "encoder_widths", net.encoder_widths);
        line(o, "global_width", net.global_width);
        line(o, "decoder_widths", net.decoder_widths);
        line(o, "block_size", net.block_size);
        line(o, "block_edge", block_edge);
        line(o, "mc_samples", mc_samples);
    } else if (name == "train") {
        o += "[train]\n";
        line(o, "epochs", train.epochs);
        line(o, "batch_size", train.batch_size);
        line(o, "momentum", train.momentum);
        line(o, "lr_init", train.lr_init);
        line(o, "lr_decay_every", train.lr_decay_every);
        line(o, "lr_decay_factor", train.lr_decay_factor);
        line(o, "kl_weight", train.kl_weight);
    } else if (name == "uncertainty") {
        o += "[uncertainty]\n";
        line(o, "method", method_name(filter_method));
        line(o, "k_sigma", k_sigma);
        line(o, "level", credible_level);
    } else if (name == "cluster") {
        o += "[cluster]\n";
        line(o, "method", cluster_method_name(cluster.method));
        line(o, "classes", cluster_classes);
        line(o, "eps", cluster.eps);
        line(o, "min_pts", cluster.min_pts);
        line(o, "xi", cluster.xi);
        line(o, "min_cluster_size", cluster.min_cluster_size);
        line(o, "max_eps", cluster.max_eps);
        line(o, "n_neighbors", cluster.n_neighbors);
        line(o, "fuzzifier", cluster.fuzzifier);
        line(o, "cmeans_threshold", cluster.cmeans_threshold);
    } else if (name == "pose") {
        o += "[pose]\n";
        line(o, "classes", pose_classes);
        line(o, "voxel", pose.voxel);
        line(o, "ransac_iter", pose.ransac_iter);
        line(o, "inlier_tol", pose.inlier_tol);
        line(o, "icp_max_iter", pose.icp_max_iter);
        line(o, "icp_tol", pose.icp_tol);
        line(o, "with_scale", pose.with_scale);
    } else if (name == "savings") {
        o += "[savings]\n";
        line(o, "cost_per_m2", savings.cost_per_m2);
        line(o, "area_per_plant", savings.area_per_plant);
        line(o, "scanned_fraction", savings.scanned_fraction);
        line(o, "n_plants", savings.n_plants);
        line(o, "scans_per_year", savings.scans_per_year);
        line(o, "automation_degree", savings.automation_degree);
    } else if (name == "quality") {
        o += "[quality]\n";
        if (quality_measured) line(o, "measured", quality_measured->string());
        if (quality_reference) line(o, "reference", quality_reference->string());
    } else {
        throw ValidationError("unknown config section '" + std::string(name) + "'");
    }
    return o;
}

std::string PipelineConfig::canonical() const {
    // The output directory is deliberately left out: moving a run does not change it.
    std::string o;
    for (const char* s : {"top", "scene", "segnet", "train", "uncertainty", "cluster", "pose", "savings", "quality"}) {
        if (!o.empty()) o += '\n';
        o += section(s);
    }
    return o;
}

std::string fingerprint(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace plantmodel
