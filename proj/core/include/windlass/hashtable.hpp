#pragma once

#include "windlass/comm.hpp"

namespace windlass {

struct HashtableConfig {
  std::uint64_t table_slots = 16384;   // per local volume
  std::uint64_t heap_entries = 32768;  // per-volume overflow capacity
};

/// Distributed multiset of 8-byte values keyed by 64-bit hashes. Each rank
/// owns a local volume: a slot table plus an overflow heap with a registered
/// next-free counter and per-chain last-entry hints. Inserts claim a slot by
/// CAS and chase chains with CAS-linked overflow entries; all remote access
/// runs under one lock_all epoch.
class DistributedHashtable {
 public:
  DistributedHashtable(Rank& rank, std::vector<RankId> group,
                       HashtableConfig cfg = {});

  void epoch_begin();  // lock_all
  void epoch_end();    // flush + unlock_all

  /// Inserts under an open epoch. Throws Error(heap_exhausted) when the
  /// owner's overflow heap is full.
  void insert(std::uint64_t key, std::uint64_t value);

  struct VerifyReport {
    std::uint64_t local_count = 0;
    std::uint64_t global_count = 0;
  };
  /// Collective, quiescent: walks the local volume validating chain shape
  /// (throws Error(corrupt_chain) on cycles or wild links) and sums counts.
  VerifyReport verify();

  std::vector<std::uint64_t> local_values();

  Window& window() { return win_; }
  void free();

  static constexpr std::uint64_t kEmpty = ~0ull;
  static constexpr std::uint64_t kNil = ~0ull;

 private:
  std::uint64_t owner_of(std::uint64_t key) const;
  std::uint64_t slot_of(std::uint64_t key) const;
  void walk_chain(std::span<const std::uint64_t> words, std::uint64_t slot,
                  std::vector<std::uint64_t>* values,
                  std::uint64_t* count) const;

  HashtableConfig cfg_;
  Window win_;
  std::uint64_t seed1_ = 0, seed2_ = 0;

  // Word offsets inside a volume.
  std::uint64_t heap_base_ = 0;   // first heap word (entries are 2 words)
  std::uint64_t next_free_ = 0;   // registered allocation counter
  std::uint64_t hints_base_ = 0;  // per-slot last-entry hints
  std::uint64_t words_ = 0;
};

struct HashtableRunResult {
  std::uint64_t attempted = 0;
  std::uint64_t inserted = 0;
  std::uint64_t exhausted = 0;
  std::uint64_t global_count = 0;
  double virtual_seconds = 0.0;  // max across ranks
  std::uint64_t remote_ops = 0;  // total
  bool verified = false;
};

/// Workload driver: every rank inserts `inserts_per_rank` random elements,
/// then the table is verified. Deterministic given the fabric seed.
HashtableRunResult run_hashtable(FabricConfig cfg,
                                 std::uint64_t inserts_per_rank,
                                 HashtableConfig hcfg = {});

}  // namespace windlass
