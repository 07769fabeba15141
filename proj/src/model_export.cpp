#include "plantmodel/model_export.hpp"

#include "plantmodel/classes.hpp"
#include "plantmodel/error.hpp"
#include "plantmodel/text_io.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <cmath>
#include <set>
#include <sstream>

namespace plantmodel {

namespace pt = boost::property_tree;

std::string_view pose_source_name(PoseSource s) {
    return s == PoseSource::estimated ? "estimated" : "ground-truth";
}

void SceneModel::validate() const {
    std::set<std::pair<std::string, int>> seen;
    for (const auto& o : objects) {
        if (!class_from_name(o.pose.class_name))
            throw ValidationError("unknown class '" + o.pose.class_name + "' in scene model");
        if (!seen.emplace(o.pose.class_name, o.pose.instance_id).second)
            throw ValidationError("duplicate instance " + o.pose.class_name + " " + std::to_string(o.pose.instance_id));
    }
}

namespace {

void append_escaped(std::string& out, std::string_view s) {
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out += c;
        }
    }
}

void attr(std::string& out, std::string_view key, std::string_view value) {
    out += ' ';
    out += key;
    out += "=\"";
    append_escaped(out, value);
    out += '"';
}

void attr(std::string& out, std::string_view key, double value) { attr(out, key, format_double(value)); }

constexpr const char* kPoseFields[] = {"x_mm", "y_mm", "z_mm", "roll_deg", "pitch_deg", "yaw_deg"};

double* pose_field(ObjectPose& p, int i) {
    double* fields[] = {&p.x_mm, &p.y_mm, &p.z_mm, &p.roll_deg, &p.pitch_deg, &p.yaw_deg};
    return fields[i];
}

const pt::ptree& attributes(const pt::ptree& node) {
    static const pt::ptree none;
    const auto it = node.find("<xmlattr>");
    return it == node.not_found() ? none : it->second;
}

std::string required(const pt::ptree& node, const std::string& element, const std::string& key) {
    const auto& a = attributes(node);
    const auto it = a.find(key);
    if (it == a.not_found()) throw SchemaError(element + ": missing attribute '" + key + "'");
    return it->second.data();
}

double number(const pt::ptree& node, const std::string& element, const std::string& key) {
    const std::string s = required(node, element, key);
    double v = 0.0;
    try {
        v = parse_double(s);
    } catch (const ValidationError&) {
        throw SchemaError(element + ": attribute '" + key + "' is not a number");
    }
    if (!std::isfinite(v)) throw SchemaError(element + ": attribute '" + key + "' is not finite");
    return v;
}

bool is_meta(const std::string& key) { return key == "<xmlattr>" || key == "<xmlcomment>"; }

}  // namespace

std::string to_aml(const SceneModel& model) {
    model.validate();
    std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<SceneModel";
    attr(out, "name", model.name);
    attr(out, "euler", "zyx-intrinsic");
    attr(out, "origin", "scene-zero");
    out += ">\n  <InstanceHierarchy>\n";
    for (const auto& o : model.objects) {
        out += "    <InternalElement";
        attr(out, "class", o.pose.class_name);
        attr(out, "id", std::to_string(o.pose.instance_id));
        attr(out, "source", pose_source_name(o.source));
        if (!o.template_id.empty()) attr(out, "template", o.template_id);
        out += ">\n      <Pose";
        ObjectPose p = o.pose;
        for (int i = 0; i < 6; ++i) attr(out, kPoseFields[i], *pose_field(p, i));
        out += "/>\n    </InternalElement>\n";
    }
    out += "  </InstanceHierarchy>\n</SceneModel>\n";
    return out;
}

void write_aml(const SceneModel& model, const std::filesystem::path& path) { write_text_file(path, to_aml(model)); }

SceneModel parse_aml_string(const std::string& xml) {
    pt::ptree doc;
    try {
        std::istringstream in(xml);
        pt::read_xml(in, doc);
    } catch (const pt::xml_parser_error& e) {
        throw SchemaError(std::string("malformed XML: ") + e.message());
    }
    const pt::ptree* root = nullptr;
    for (const auto& [key, child] : doc) {
        if (key == "<xmlcomment>") continue;
        if (key != "SceneModel" || root) throw SchemaError("document root must be a single SceneModel element");
        root = &child;
    }
    if (!root) throw SchemaError("document root must be a single SceneModel element");

    SceneModel m;
    m.name = required(*root, "SceneModel", "name");
    if (required(*root, "SceneModel", "euler") != "zyx-intrinsic")
        throw SchemaError("SceneModel: unsupported euler convention");
    required(*root, "SceneModel", "origin");

    const pt::ptree* hierarchy = nullptr;
    for (const auto& [key, child] : *root) {
        if (is_meta(key)) continue;
        if (key != "InstanceHierarchy" || hierarchy) throw SchemaError("SceneModel: unexpected element <" + key + ">");
        hierarchy = &child;
    }
    if (!hierarchy) throw SchemaError("SceneModel: missing InstanceHierarchy");

    std::set<std::pair<std::string, int>> seen;
    for (const auto& [key, el] : *hierarchy) {
        if (is_meta(key)) continue;
        if (key != "InternalElement") throw SchemaError("InstanceHierarchy: unexpected element <" + key + ">");
        SceneObject o;
        o.pose.class_name = required(el, "InternalElement", "class");
        if (!class_from_name(o.pose.class_name))
            throw SchemaError("InternalElement: unknown class '" + o.pose.class_name + "'");
        const std::string id = required(el, "InternalElement", "id");
        try {
            const long long v = parse_int(id);
            if (v < 0 || v > INT32_MAX) throw ValidationError("range");
            o.pose.instance_id = static_cast<int>(v);
        } catch (const ValidationError&) {
            throw SchemaError("InternalElement: attribute 'id' is not a non-negative integer");
        }
        const std::string source = required(el, "InternalElement", "source");
        if (source == "estimated")
            o.source = PoseSource::estimated;
        else if (source == "ground-truth")
            o.source = PoseSource::ground_truth;
        else
            throw SchemaError("InternalElement: attribute 'source' must be estimated or ground-truth");
        const auto& a = attributes(el);
        if (const auto t = a.find("template"); t != a.not_found()) o.template_id = t->second.data();
        if (!seen.emplace(o.pose.class_name, o.pose.instance_id).second)
            throw SchemaError("InternalElement: duplicate instance " + o.pose.class_name + " " + id);

        const pt::ptree* pose = nullptr;
        for (const auto& [k, child] : el) {
            if (is_meta(k)) continue;
            if (k != "Pose" || pose) throw SchemaError("InternalElement: unexpected element <" + k + ">");
            pose = &child;
        }
        if (!pose) throw SchemaError("InternalElement: missing Pose");
        for (int i = 0; i < 6; ++i) *pose_field(o.pose, i) = number(*pose, "Pose", kPoseFields[i]);
        m.objects.push_back(std::move(o));
    }
    return m;
}

SceneModel parse_aml(const std::filesystem::path& path) { return parse_aml_string(read_text_file(path)); }

SceneModel ground_truth_model(const GroundTruth& truth, std::string name) {
    SceneModel m;
    m.name = std::move(name);
    for (const auto& obj : truth.objects) {
        SceneObject o;
        o.pose = obj.pose;
        o.source = PoseSource::ground_truth;
        m.objects.push_back(std::move(o));
    }
    return m;
}

void SavingsInput::validate() const {
    for (double v : {cost_per_m2, area_per_plant, scanned_fraction, n_plants, scans_per_year, automation_degree})
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("savings inputs must be finite and non-negative");
    if (scanned_fraction > 1.0 || automation_degree > 1.0) throw ValidationError("fractions must not exceed 1");
}

Savings compute_savings(const SavingsInput& in) {
    in.validate();
    Savings s;
    s.total_cost_per_year = in.cost_per_m2 * in.area_per_plant * in.scanned_fraction * in.n_plants * in.scans_per_year;
    s.savings_per_year = s.total_cost_per_year * in.automation_degree;
    return s;
}

std::string format_euro(double amount) {
    const bool negative = amount < 0;
    const auto cents = static_cast<long long>(std::llround(std::abs(amount) * 100.0));
    std::string digits = std::to_string(cents / 100);
    std::string grouped;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (i > 0 && (digits.size() - i) % 3 == 0) grouped += ',';
        grouped += digits[i];
    }
    if (cents % 100 != 0) {
        const auto c = cents % 100;
        grouped += '.';
        grouped += static_cast<char>('0' + c / 10);
        grouped += static_cast<char>('0' + c % 10);
    }
    return (negative ? "-" : "") + grouped + " €";
}

}  // namespace plantmodel
