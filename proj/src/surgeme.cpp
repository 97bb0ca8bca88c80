#include "ciac/surgeme.hpp"

namespace ciac {

std::string_view gesture_name(GestureClass g) {
  switch (g) {
    case GestureClass::Other: return "Other";
    case GestureClass::Positioning: return "Positioning";
    case GestureClass::Push: return "Push";
    case GestureClass::Pull: return "Pull";
    case GestureClass::Handoff: return "Handoff";
  }
  return "?";
}

std::optional<GestureClass> gesture_from_code(int c) {
  if (c < 0 || c >= kGestureClassCount) return std::nullopt;
  return static_cast<GestureClass>(c);
}

std::optional<GestureClass> gesture_from_name(std::string_view name) {
  for (GestureClass g : kAllGestureClasses)
    if (gesture_name(g) == name) return g;
  return std::nullopt;
}

}  // namespace ciac
