#include "windlass/explore.hpp"

#include "engine.hpp"

namespace windlass::det {

ExploreStats explore(FabricConfig cfg,
                     const std::function<RankBody()>& make_body,
                     const std::function<void(Fabric&)>& inspect,
                     ExploreOptions opts) {
  if (cfg.mode != ExecMode::Deterministic)
    raise(errc::mode_mismatch, "explore requires deterministic mode");

  ExploreStats stats;
  std::vector<std::uint32_t> script;
  while (true) {
    auto strat = std::make_unique<detail::ScriptedStrategy>(script);
    auto* strat_ptr = strat.get();
    Fabric fabric(cfg, std::move(strat));
    RankBody body = make_body();
    bool completed = fabric.run_path(body);
    ++stats.schedules;
    if (completed) {
      if (inspect) inspect(fabric);
    } else {
      ++stats.truncated;
    }
    if (stats.schedules >= opts.max_schedules) {
      stats.exhausted = false;
      break;
    }

    // Backtrack to the deepest choice point with untried alternatives.
    auto trace = strat_ptr->trace();
    while (!trace.empty() && trace.back().taken + 1 >= trace.back().options)
      trace.pop_back();
    if (trace.empty()) break;
    script.clear();
    script.reserve(trace.size());
    for (std::size_t i = 0; i + 1 < trace.size(); ++i)
      script.push_back(trace[i].taken);
    script.push_back(trace.back().taken + 1);
  }
  return stats;
}

}  // namespace windlass::det
