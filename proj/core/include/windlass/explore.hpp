#pragma once

#include <functional>

#include "windlass/fabric.hpp"

namespace windlass::det {

struct ExploreOptions {
  std::uint64_t max_schedules = 1'000'000;
  // Paths whose waits exceed the per-wait probe budget are counted as
  // truncated (unfair schedules) instead of explored to completion.
};

struct ExploreStats {
  std::uint64_t schedules = 0;
  std::uint64_t truncated = 0;
  bool exhausted = true;  // false if max_schedules stopped the search
};

using RankBody = std::function<void(Rank&)>;

/// Depth-first enumeration of every scheduler interleaving (deterministic
/// mode). `make_body` runs once per path so closures can carry fresh per-path
/// state; `inspect`, when set, runs after each completed schedule with the
/// finished fabric. Throws the first body failure.
ExploreStats explore(FabricConfig cfg,
                     const std::function<RankBody()>& make_body,
                     const std::function<void(Fabric&)>& inspect = {},
                     ExploreOptions opts = {});

}  // namespace windlass::det
