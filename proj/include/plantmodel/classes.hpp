#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace plantmodel {

/// Semantic classes of a car-body assembly tact. The numeric value is the
/// label index stored in clouds and predicted by the network.
enum class SemanticClass : std::uint8_t {
    car = 0,
    hanger,
    floor,
    band,
    lineside,
    wall,
    column,
    ceiling,
    clutter,
};

inline constexpr int kNumClasses = 9;

inline constexpr std::array<SemanticClass, kNumClasses> kAllClasses{
    SemanticClass::car,      SemanticClass::hanger, SemanticClass::floor,
    SemanticClass::band,     SemanticClass::lineside, SemanticClass::wall,
    SemanticClass::column,   SemanticClass::ceiling, SemanticClass::clutter,
};

std::string_view class_name(SemanticClass c);
std::optional<SemanticClass> class_from_name(std::string_view name);

/// Throws ValidationError for names outside the class list.
SemanticClass parse_class(std::string_view name);

inline int class_index(SemanticClass c) { return static_cast<int>(c); }

/// Building parts whose pose is a plane fit rather than a template alignment.
inline bool is_structural(SemanticClass c) {
    return c == SemanticClass::floor || c == SemanticClass::ceiling || c == SemanticClass::wall;
}

}  // namespace plantmodel
