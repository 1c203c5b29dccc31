#pragma once

#include "windlass/comm.hpp"

namespace windlass {

struct DsdeConfig {
  std::uint32_t k = 6;        // random targets per rank per round
  std::uint64_t slots = 64;   // receive slots per rank
};

/// Dynamic sparse data exchange: nobody knows in advance who will send to
/// them. The reservation protocol brackets each round in fences; senders
/// fetch-add the receiver's counter for a slot and put an 8-byte payload
/// carrying (source, sequence number).
class DsdeExchange {
 public:
  DsdeExchange(Rank& rank, std::vector<RankId> group, DsdeConfig cfg = {});

  struct Payload {
    std::uint32_t source;
    std::uint32_t seq;
  };
  struct RoundResult {
    std::vector<Payload> received;
    std::uint64_t data_ops = 0;    // remote ops between the fences
    std::uint64_t data_bytes = 0;  // remote bytes between the fences
  };

  /// Reservation protocol round. Throws Error(slot_overflow) when a
  /// receiver's slot array fills up.
  RoundResult exchange(std::uint32_t round,
                       std::span<const std::uint32_t> targets);

  /// Same delivery contract via a counting phase: a vector sum over all
  /// ranks announces per-target volumes, then sources put into their
  /// dedicated per-source slot.
  RoundResult baseline(std::uint32_t round,
                       std::span<const std::uint32_t> targets);

  /// k distinct targets excluding self, deterministic per (seed, rank,
  /// round).
  static std::vector<std::uint32_t> pick_targets(std::uint64_t seed,
                                                 std::uint32_t self,
                                                 std::uint32_t p,
                                                 std::uint32_t k,
                                                 std::uint32_t round);

  Window& window() { return win_; }
  void free();

 private:
  DsdeConfig cfg_;
  std::uint64_t slot_words_ = 0;  // max(slots, group size)
  Window win_;
};

struct DsdeRunResult {
  std::uint64_t rounds = 0;
  bool exactly_once = false;
  std::uint64_t delivered = 0;
  std::uint64_t max_data_ops_per_rank = 0;
  std::uint64_t max_data_bytes_per_rank = 0;
  double virtual_seconds = 0.0;
};

DsdeRunResult run_dsde(FabricConfig cfg, std::uint32_t k, std::uint32_t rounds,
                       std::uint64_t slots, bool baseline);

}  // namespace windlass
