#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "windlass/error.hpp"

namespace windlass {

using RankId = std::uint32_t;
using NodeId = std::uint32_t;
using RegionKey = std::uint64_t;
using VAddr = std::uint64_t;

enum class ExecMode {
  // Each rank runs on its own OS thread; wall-clock time, no model checks.
  Preemptive,
  // Seeded cooperative scheduler over rank fibers; virtual-time cost model.
  Deterministic,
};

enum class OpClass { Put, Get, Atomic };

/// Token for a remotely accessible memory region. Value-copyable; any rank
/// holding a descriptor may address the owner's region through the fabric.
struct RemoteDescriptor {
  RankId owner = 0;
  RegionKey key = 0;
  std::uint64_t length = 0;
  NodeId node = 0;
};

/// Handle for one outstanding nonblocking transfer. PENDING until retired by
/// wait/gsync on the issuing rank; after that the data movement is visible.
struct OpHandle {
  std::uint64_t id = 0;
  RankId origin = 0;
  RankId target = 0;
  OpClass cls = OpClass::Put;
  std::uint64_t size = 0;
};

struct FabricConfig {
  RankId p = 8;
  std::uint32_t ranks_per_node = 1;

  // Linear transfer cost model: a completed transfer of s bytes charges
  // issue_* at injection and (alpha_* - issue_*) + beta_* * s at the call
  // that retires it, so one op plus its flush totals alpha + beta*s.
  double alpha_inter = 1.0e-6;       // seconds
  double beta_inter = 0.16e-9;       // seconds per byte
  double alpha_intra = 0.1e-6;
  double beta_intra = 0.05e-9;
  double issue_inter = 416.0e-9;     // per-op injection overhead
  double issue_intra = 80.0e-9;
  double atomic_latency = 2.4e-6;    // blocking 8-byte atomics

  std::uint64_t seed = 42;
  ExecMode mode = ExecMode::Deterministic;

  std::uint64_t max_registrations_per_rank = 1u << 20;
  double alloc_fail_prob = 0.0;      // symmetric-allocation failure injection
  bool record_completions = false;   // keep an ordered completion log
  double progress_prob = 0.125;      // deterministic: spontaneous network progress
  std::size_t fiber_stack_bytes = 256 * 1024;

  // Spin-wait backoff (deterministic mode): yields double from 1 up to this
  // cap with seeded jitter; past the cap the rank blocks until any progress.
  std::uint32_t backoff_cap = 1024;
  std::uint32_t explore_probe_cap = 64;  // per-wait probe budget when exploring
};

/// Per-rank operation tallies. Remote counts cover ops whose target is a
/// different rank; self-targeted ops land in local_ops. The intra_* fields
/// are the same-node subset of the remote counts.
struct RankCounters {
  std::uint64_t puts_issued = 0;
  std::uint64_t gets_issued = 0;
  std::uint64_t atomics_issued = 0;
  std::uint64_t bytes_put = 0;
  std::uint64_t bytes_got = 0;
  std::uint64_t intra_puts = 0;
  std::uint64_t intra_gets = 0;
  std::uint64_t intra_atomics = 0;
  std::uint64_t local_ops = 0;
  std::vector<std::uint64_t> remote_ops_to;

  std::uint64_t remote_total() const {
    return puts_issued + gets_issued + atomics_issued;
  }
};

struct OpCounters {
  std::vector<RankCounters> per_rank;

  std::uint64_t remote_total() const {
    std::uint64_t n = 0;
    for (const auto& c : per_rank) n += c.remote_total();
    return n;
  }
};

enum class OpKind { Put, Get, Fadd, Cas };

/// One entry of the ordered completion log (enabled by record_completions).
/// Replaying records in seq order against a flat byte model reproduces all
/// observed memory contents; tests use this as the mirror oracle.
struct CompletionRecord {
  std::uint64_t seq = 0;
  OpKind kind = OpKind::Put;
  RankId origin = 0;
  RankId target = 0;
  RegionKey key = 0;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
  std::vector<std::byte> payload;  // put: bytes written, get: bytes observed
  std::uint64_t arg0 = 0;          // fadd operand / cas compare
  std::uint64_t arg1 = 0;          // cas swap
  std::uint64_t result = 0;        // atomics: pre-operation value
};

namespace detail {
class Engine;
struct Strategy;
}  // namespace detail

class Fabric;

/// Per-rank execution context handed to the rank body. All inter-rank
/// interaction goes through this interface; in deterministic mode every
/// fabric operation is a scheduling point.
class Rank {
 public:
  RankId id() const { return id_; }
  RankId world_size() const;
  NodeId node() const;
  NodeId node_of(RankId r) const;

  // --- local address space (per-process virtual heap) ---
  VAddr alloc(std::uint64_t bytes);
  bool try_reserve(VAddr base, std::uint64_t bytes);
  void release(VAddr base);
  std::span<std::byte> local_span(VAddr base, std::uint64_t len);

  // --- registration ---
  RemoteDescriptor register_region(std::uint64_t bytes);  // alloc + expose, zeroed
  RemoteDescriptor register_at(VAddr base, std::uint64_t bytes);
  // Registration under a key all ranks can derive without communication
  // (symmetric windows, collective state).
  RemoteDescriptor register_with_key(std::uint64_t bytes, RegionKey agreed_key);
  RemoteDescriptor register_at_with_key(VAddr base, std::uint64_t bytes,
                                        RegionKey agreed_key);
  // Maps a peer's registered region for direct load/store access; the peer
  // must live on the same node.
  std::span<std::byte> map_region(const RemoteDescriptor& d);
  void deregister(const RemoteDescriptor& d);
  std::uint64_t live_registrations() const;
  bool descriptor_live(const RemoteDescriptor& d);  // probe; counted as a get
  std::span<std::byte> local_view(const RemoteDescriptor& d);  // owner only
  // Forms the descriptor a peer obtains from register_with_key(bytes, key),
  // without communication.
  RemoteDescriptor shared_descriptor(RankId owner, RegionKey agreed_key,
                                     std::uint64_t bytes) const;

  // --- one-sided transfers (nonblocking) ---
  OpHandle put(const RemoteDescriptor& d, std::uint64_t offset,
               std::span<const std::byte> src);
  OpHandle get(const RemoteDescriptor& d, std::uint64_t offset,
               std::span<std::byte> dst);
  OpHandle put_u64(const RemoteDescriptor& d, std::uint64_t offset,
                   std::uint64_t value);

  // --- blocking 8-byte atomics ---
  std::int64_t fadd64(const RemoteDescriptor& d, std::uint64_t offset,
                      std::int64_t operand);
  std::uint64_t cas64(const RemoteDescriptor& d, std::uint64_t offset,
                      std::uint64_t compare, std::uint64_t swap);

  // --- completion ---
  void wait(OpHandle h);
  bool test(OpHandle h);  // nonblocking completion check + retire
  void gsync();
  void gsync_to(RankId target);
  bool complete(const OpHandle& h) const;

  // --- local access to own registered memory (wakes waiting peers) ---
  std::uint64_t load_local_u64(const RemoteDescriptor& d, std::uint64_t offset);
  void store_local_u64(const RemoteDescriptor& d, std::uint64_t offset,
                       std::uint64_t value);

  // --- scheduling ---
  void yield();
  // Re-evaluates probe until it returns true. Backs off exponentially
  // between probes and eventually blocks until any fabric progress.
  void poll(const std::function<bool()>& probe);
  double now() const;
  std::mt19937_64& rng();
  // Monotone per-(rank, salt) counter; lets ranks that follow the same
  // call discipline agree on identifiers without communication.
  std::uint64_t context_nonce(std::uint64_t salt);

  Fabric& fabric() { return *fabric_; }

 private:
  friend class Fabric;
  friend class detail::Engine;
  Rank(Fabric* f, detail::Engine* e, RankId id)
      : fabric_(f), engine_(e), id_(id) {}
  Fabric* fabric_;
  detail::Engine* engine_;
  RankId id_;
};

/// Owns one registration and deregisters it on destruction.
class Registration {
 public:
  Registration() = default;
  Registration(Rank& r, RemoteDescriptor d) : rank_(&r), desc_(d) {}
  Registration(Registration&& o) noexcept : rank_(o.rank_), desc_(o.desc_) {
    o.rank_ = nullptr;
  }
  Registration& operator=(Registration&& o) noexcept {
    if (this != &o) {
      reset();
      rank_ = o.rank_;
      desc_ = o.desc_;
      o.rank_ = nullptr;
    }
    return *this;
  }
  Registration(const Registration&) = delete;
  Registration& operator=(const Registration&) = delete;
  ~Registration() { reset(); }

  void reset();
  const RemoteDescriptor& desc() const { return desc_; }
  bool valid() const { return rank_ != nullptr; }

 private:
  Rank* rank_ = nullptr;
  RemoteDescriptor desc_{};
};

/// Observer interface for lock-protocol safety monitoring (tests install it;
/// events fire from the synchronization layer in deterministic mode).
struct LockEvent {
  enum class What { AcquireShared, AcquireExclusive, AcquireAll,
                    ReleaseShared, ReleaseExclusive, ReleaseAll };
  What what;
  RankId origin;
  RankId target;       // meaningless for *All
  std::uint64_t window_id;
};

class Fabric {
 public:
  explicit Fabric(FabricConfig cfg);
  Fabric(FabricConfig cfg, std::unique_ptr<detail::Strategy> strategy);
  ~Fabric();

  Fabric(const Fabric&) = delete;
  Fabric& operator=(const Fabric&) = delete;

  const FabricConfig& config() const;

  /// Runs one SPMD execution: the body is invoked once per rank. Returns when
  /// every rank finished; rethrows the first rank failure. In deterministic
  /// mode a global stall raises Error(errc::deadlock).
  void run(const std::function<void(Rank&)>& body);

  /// Like run(), but returns false when a schedule-exploration path was
  /// abandoned for exceeding its probe budget (used by det::explore).
  bool run_path(const std::function<void(Rank&)>& body);

  OpCounters counters() const;
  double clock(RankId r) const;
  std::uint64_t registration_count(RankId r) const;
  const std::vector<CompletionRecord>& completion_log() const;

  // Debug hook: invoked on lock acquire/release protocol events.
  void set_lock_observer(std::function<void(const LockEvent&)> fn);
  const std::function<void(const LockEvent&)>& lock_observer() const;

  detail::Engine& engine() { return *engine_; }

 private:
  std::unique_ptr<detail::Engine> engine_;
  std::vector<Rank> ranks_;
  std::function<void(const LockEvent&)> lock_observer_;
};

}  // namespace windlass
