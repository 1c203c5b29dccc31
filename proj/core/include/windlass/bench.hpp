#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "windlass/fabric.hpp"

namespace windlass {

/// One emitted measurement. Application runs fill the optional columns.
struct ResultRow {
  std::string bench;
  std::uint64_t p = 0;
  std::uint64_t size = 0;
  std::uint64_t sample_count = 0;
  double median_s = 0.0;
  std::uint64_t ops_remote = 0;
  std::optional<double> inserts_per_s_virtual;
  std::optional<std::uint64_t> delivered;
};

void write_csv(std::ostream& os, const std::vector<ResultRow>& rows);
void write_json(std::ostream& os, const std::vector<ResultRow>& rows);

struct BenchResult {
  std::string name;
  RankId p = 0;
  std::uint64_t samples = 0;
  std::vector<ResultRow> points;
};

enum class LatencyKind { Put, Get };
enum class SyncKind { Fence, PscwRing, LockUnlock };

/// Median virtual time of one operation plus its flush, per transfer size.
/// One origin drives a locked target, holding the lock across the whole
/// size loop. Requires deterministic mode and p >= 2.
BenchResult bench_latency(FabricConfig cfg, LatencyKind kind,
                          const std::vector<std::uint64_t>& sizes,
                          std::uint64_t samples = 1000);

/// Per-operation injection overhead: issues a batch of 8-byte transfers
/// with no synchronization and divides the elapsed virtual time. Reports
/// inter-node and (when ranks share a node) intra-node rows.
BenchResult bench_message_rate(FabricConfig cfg, std::uint64_t batch = 1000);

/// Synchronization scaling: fence time vs p, neighborhood epoch time at
/// fixed k vs p, and lock/unlock time vs p.
BenchResult bench_sync(FabricConfig cfg, SyncKind kind,
                       const std::vector<RankId>& p_list, std::uint32_t k = 2,
                       std::uint64_t samples = 1000);

struct FittedModel {
  double intercept = 0.0;
  double slope = 0.0;
  double residual = 0.0;  // RMS of residuals relative to RMS of the data
};

enum class Regressor { Size, LogP, K };

/// Ordinary least squares over the result points (>= 6 of them).
FittedModel fit_model(const BenchResult& result, Regressor regressor);

}  // namespace windlass
