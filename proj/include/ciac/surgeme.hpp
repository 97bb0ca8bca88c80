#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace ciac {

// Surgeme classes with their stable integer codes.
enum class GestureClass : int { Other = 0, Positioning = 1, Push = 2, Pull = 3, Handoff = 4 };

inline constexpr int kGestureClassCount = 5;

inline constexpr std::array<GestureClass, kGestureClassCount> kAllGestureClasses = {
    GestureClass::Other, GestureClass::Positioning, GestureClass::Push, GestureClass::Pull,
    GestureClass::Handoff};

constexpr int code(GestureClass g) { return static_cast<int>(g); }

std::string_view gesture_name(GestureClass g);
std::optional<GestureClass> gesture_from_code(int code);
std::optional<GestureClass> gesture_from_name(std::string_view name);

}  // namespace ciac
