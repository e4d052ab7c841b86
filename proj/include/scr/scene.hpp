#pragma once

#include <cstddef>
#include <vector>

#include "scr/numerics.hpp"

namespace scr {

/// Predicate class 0 is background (no annotated relation).
inline constexpr ClassIndex kBackground = 0;

struct Entity {
  ClassIndex label = 0;
  RealVector features;

  friend bool operator==(const Entity&, const Entity&) = default;
};

struct Triplet {
  std::size_t subject = 0;  // entity index
  std::size_t object = 0;   // entity index
  ClassIndex predicate = 0; // >= 1

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// One synthetic scene. Ordered entity pairs without a triplet are background.
struct SceneRecord {
  std::vector<Entity> entities;
  std::vector<Triplet> triplets;

  /// Dense predicate lookup: result[s * n + o] is the predicate of (s, o).
  std::vector<ClassIndex> predicate_grid() const {
    const std::size_t n = entities.size();
    std::vector<ClassIndex> grid(n * n, kBackground);
    for (const auto& t : triplets) grid[t.subject * n + t.object] = t.predicate;
    return grid;
  }

  friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};

}  // namespace scr
