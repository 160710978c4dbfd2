#pragma once

#include <string>
#include <vector>

namespace stclip {

/// One description aspect and its candidate class words.
struct Aspect {
  std::string name;
  std::vector<std::string> words;
};

using AspectSet = std::vector<Aspect>;

/// Scene / Surface / Width / Accessibility with 5/4/4/3 words.
inline AspectSet traffic_scene_aspects() {
  return {
      {"scene", {"field", "vehicles", "alley", "stall", "unknown"}},
      {"surface", {"normal", "broken", "soil", "unknown"}},
      {"width", {"normal", "narrow", "extremely narrow", "unknown"}},
      {"accessibility", {"easy", "hard", "extremely hard"}},
  };
}

inline std::vector<std::size_t> class_counts(const AspectSet& aspects) {
  std::vector<std::size_t> out;
  out.reserve(aspects.size());
  for (const auto& a : aspects) out.push_back(a.words.size());
  return out;
}

}  // namespace stclip
