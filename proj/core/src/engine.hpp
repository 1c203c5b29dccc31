#pragma once

#include <atomic>
#include <boost/context/fiber.hpp>
#include <chrono>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_map>

#include "windlass/fabric.hpp"

namespace windlass::detail {

// Keys in this space were agreed out of band (register_with_key).
inline constexpr RegionKey kAgreedKeyBit = 1ull << 63;

// Source of all scheduling nondeterminism in deterministic mode. pick(n)
// chooses among n ordered options; network_progress() decides whether the
// simulated network applies a pending transfer at this step.
struct Strategy {
  virtual ~Strategy() = default;
  virtual std::size_t pick(std::size_t n) = 0;
  virtual bool network_progress() = 0;
  virtual bool exploring() const { return false; }
};

class RandomStrategy final : public Strategy {
 public:
  RandomStrategy(std::uint64_t seed, double progress_prob)
      : rng_(seed), progress_prob_(progress_prob) {}
  std::size_t pick(std::size_t n) override {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_);
  }
  bool network_progress() override {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) <
           progress_prob_;
  }

 private:
  std::mt19937_64 rng_;
  double progress_prob_;
};

// Replays a scripted choice prefix, then takes option 0 while recording the
// option counts it saw. The exhaustive explorer backtracks over the record.
class ScriptedStrategy final : public Strategy {
 public:
  explicit ScriptedStrategy(std::vector<std::uint32_t> script)
      : script_(std::move(script)) {}
  std::size_t pick(std::size_t n) override {
    if (n <= 1) return 0;
    std::uint32_t choice = pos_ < script_.size() ? script_[pos_] : 0;
    trace_.push_back({static_cast<std::uint32_t>(n), choice});
    ++pos_;
    return choice;
  }
  bool network_progress() override { return false; }
  bool exploring() const override { return true; }

  struct Choice {
    std::uint32_t options;
    std::uint32_t taken;
  };
  const std::vector<Choice>& trace() const { return trace_; }

 private:
  std::vector<std::uint32_t> script_;
  std::vector<Choice> trace_;
  std::size_t pos_ = 0;
};

// Thrown inside a fiber to abandon an exploration path whose wait exceeded
// the probe budget (an unfair schedule); the explorer counts it and moves on.
struct TruncatedPath {};
// Thrown inside a fiber to unwind it when the run is being aborted.
struct AbortFiber {};

struct LocalRegion {
  std::uint64_t length = 0;
  std::vector<std::byte> bytes;
  RegionKey key = 0;  // 0 = allocated but not registered
};

struct PendingOp {
  std::uint64_t id = 0;
  OpClass cls = OpClass::Put;
  RankId origin = 0;
  RankId target = 0;
  bool intra = false;
  RegionKey key = 0;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
  std::vector<std::byte> staged;  // put payload captured at issue
  std::byte* dest = nullptr;      // get destination
  bool applied = false;
};

enum class FiberStatus : std::uint8_t { NotStarted, Runnable, Waiting, Done };

class Engine {
 public:
  Engine(FabricConfig cfg, std::unique_ptr<Strategy> strategy);
  ~Engine();

  const FabricConfig& config() const { return cfg_; }

  enum class RunStatus { Completed, Truncated };
  RunStatus run(Fabric& fabric, std::vector<Rank>& ranks,
                const std::function<void(Rank&)>& body);

  // --- address space ---
  VAddr alloc(RankId r, std::uint64_t bytes);
  bool try_reserve(RankId r, VAddr base, std::uint64_t bytes);
  void release(RankId r, VAddr base);
  std::span<std::byte> local_span(RankId r, VAddr base, std::uint64_t len);

  // --- registration ---
  RemoteDescriptor register_at(RankId r, VAddr base, std::uint64_t bytes,
                               RegionKey agreed_key);  // 0 = fresh key
  RemoteDescriptor register_fresh(RankId r, std::uint64_t bytes);
  void deregister(RankId r, const RemoteDescriptor& d);
  std::uint64_t live_registrations(RankId r) const;
  bool descriptor_live(RankId r, const RemoteDescriptor& d);
  std::span<std::byte> local_view(RankId r, const RemoteDescriptor& d);
  std::span<std::byte> map_region(RankId r, const RemoteDescriptor& d);

  // --- transfers & atomics ---
  OpHandle issue_transfer(RankId origin, OpClass cls, const RemoteDescriptor& d,
                          std::uint64_t offset, std::span<const std::byte> src,
                          std::span<std::byte> dst);
  std::int64_t fadd64(RankId origin, const RemoteDescriptor& d,
                      std::uint64_t offset, std::int64_t operand);
  std::uint64_t cas64(RankId origin, const RemoteDescriptor& d,
                      std::uint64_t offset, std::uint64_t compare,
                      std::uint64_t swap);
  void wait(RankId origin, const OpHandle& h);
  bool test(RankId origin, const OpHandle& h);
  void gsync(RankId origin, std::optional<RankId> target);
  bool op_complete(RankId origin, const OpHandle& h) const;

  std::uint64_t load_local_u64(RankId r, const RemoteDescriptor& d,
                               std::uint64_t offset);
  void store_local_u64(RankId r, const RemoteDescriptor& d,
                       std::uint64_t offset, std::uint64_t value);

  // --- scheduling ---
  void yield(RankId r);
  void poll(RankId r, const std::function<bool()>& probe);
  double now(RankId r) const;
  std::mt19937_64& body_rng(RankId r);

  OpCounters counters_snapshot() const;
  const std::vector<CompletionRecord>& completion_log() const { return log_; }

  // Shared debug registry for collective call-discipline checks
  // (deterministic mode). Keyed by context id, then call sequence.
  void collective_entry(std::uint64_t ctx_id, std::uint64_t seq,
                        std::uint64_t kind_hash);
  void collective_forget(std::uint64_t ctx_id);

  std::uint64_t ctx_nonce(RankId r, std::uint64_t salt);

  bool deterministic() const { return cfg_.mode == ExecMode::Deterministic; }

 private:
  struct RankState {
    std::map<VAddr, LocalRegion> regions;     // by base address
    std::map<RegionKey, VAddr> by_key;
    VAddr bump = 0;
    std::deque<PendingOp> pending;
    RankCounters ctr;
    double clock = 0.0;
    std::uint64_t next_key_seq = 1;
    std::uint64_t live_regs = 0;
    std::mt19937_64 body_rng;
    std::mt19937_64 jitter_rng;
    std::map<std::uint64_t, std::uint64_t> nonces;

    // fiber state (deterministic mode)
    boost::context::fiber fiber;
    boost::context::fiber sched_cont;  // scheduler continuation while running
    FiberStatus status = FiberStatus::NotStarted;
    std::exception_ptr failure;
    std::uint64_t woken_at = 0;  // progress seq when last unblocked
  };

  LocalRegion& region_by_key(RankId owner, RegionKey key, errc on_missing);
  const LocalRegion* find_region(RankId owner, RegionKey key) const;
  void apply(PendingOp& op);
  void retire(RankId origin, PendingOp& op);
  void charge_completion(RankId origin, const PendingOp& op);
  void progress_event();
  void maybe_spontaneous_progress();
  bool any_unapplied() const;
  void check_bounds(const RemoteDescriptor& d, std::uint64_t offset,
                    std::uint64_t size, bool atomic) const;
  std::uint64_t* word_ptr(LocalRegion& reg, std::uint64_t offset);
  void record(CompletionRecord rec);
  bool intra_node(RankId a, RankId b) const {
    return a / cfg_.ranks_per_node == b / cfg_.ranks_per_node;
  }
  void count_op(RankId origin, RankId target, OpClass cls, std::uint64_t size);

  // fiber machinery
  void switch_to(RankId r);
  void yield_to_scheduler();
  RunStatus scheduler_loop(Fabric& fabric, std::vector<Rank>& ranks,
                           const std::function<void(Rank&)>& body);
  void abort_all();
  void ensure_current(RankId r) const;

  FabricConfig cfg_;
  std::unique_ptr<Strategy> strategy_;
  std::vector<RankState> ranks_;
  std::vector<CompletionRecord> log_;
  std::uint64_t next_op_id_ = 1;
  std::uint64_t log_seq_ = 0;
  std::uint64_t progress_seq_ = 1;
  std::uint64_t num_unapplied_ = 0;

  // deterministic scheduler
  RankId current_ = 0;
  bool in_fiber_ = false;
  bool aborting_ = false;
  bool truncated_ = false;

  // preemptive mode
  mutable std::recursive_mutex mu_;
  std::chrono::steady_clock::time_point wall_start_;

  std::unordered_map<std::uint64_t, std::map<std::uint64_t, std::uint64_t>>
      collective_debug_;
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

}  // namespace windlass::detail
