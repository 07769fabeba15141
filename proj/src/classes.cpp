#include "plantmodel/classes.hpp"

#include "plantmodel/error.hpp"

namespace plantmodel {

namespace {
constexpr std::array<std::string_view, kNumClasses> kNames{
    "car", "hanger", "floor", "band", "lineside", "wall", "column", "ceiling", "clutter",
};
}  // namespace

std::string_view class_name(SemanticClass c) { return kNames.at(static_cast<std::size_t>(c)); }

std::optional<SemanticClass> class_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kNames.size(); ++i) {
        if (kNames[i] == name) return static_cast<SemanticClass>(i);
    }
    return std::nullopt;
}

SemanticClass parse_class(std::string_view name) {
    if (auto c = class_from_name(name)) return *c;
    throw ValidationError("unknown class '" + std::string(name) + "'");
}

}  // namespace plantmodel
