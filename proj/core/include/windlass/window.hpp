#pragma once

#include <map>
#include <memory>
#include <set>
#include <vector>

#include "windlass/collectives.hpp"
#include "windlass/fabric.hpp"

namespace windlass {

enum class WinKind { Traditional, Allocated, Dynamic, Shared };
enum class LockType { Shared, Exclusive };

struct WindowConfig {
  std::uint32_t k_max = 8;  // bound on PSCW neighbors; matching capacity 16k
  std::uint32_t max_dynamic_regions = 64;
  std::uint32_t alloc_retry_limit = 64;
  bool dynamic_notify = false;  // detach notification instead of id polling
  std::uint32_t accumulate_fallback_threshold = 64;  // elements
};

/// Epoch bookkeeping shared with the synchronization layer.
struct EpochState {
  bool fence_active = false;
  bool access_open = false;
  bool exposure_open = false;
  std::vector<std::uint32_t> access_group;
  std::vector<std::uint32_t> exposure_group;
  std::map<std::uint32_t, LockType> held_locks;  // by target group index
  std::uint32_t exclusive_held = 0;
  bool lock_all_active = false;

  bool passive_open() const { return lock_all_active || !held_locks.empty(); }
  bool any_open() const {
    return access_open || exposure_open || passive_open();
  }
};

/// One RMA window. Targets are addressed by group index. Creation is
/// collective over the group; every flavor registers the protocol words the
/// synchronization layer needs (local/global lock words, matching list,
/// accumulate lock) under keys derived from the window id.
class Window {
 public:
  static Window create(Rank& rank, std::vector<RankId> group, VAddr base,
                       std::uint64_t size, std::uint32_t disp_unit,
                       WindowConfig wcfg = {});
  static Window allocate(Rank& rank, std::vector<RankId> group,
                         std::uint64_t size, std::uint32_t disp_unit,
                         WindowConfig wcfg = {});
  static Window create_dynamic(Rank& rank, std::vector<RankId> group,
                               WindowConfig wcfg = {});
  static Window allocate_shared(Rank& rank, std::vector<RankId> group,
                                std::uint64_t size, WindowConfig wcfg = {});

  Window(Window&&) = default;
  Window& operator=(Window&&) = default;

  WinKind kind() const { return kind_; }
  std::uint64_t id() const { return win_id_; }
  Rank& rank() { return *rank_; }
  CollectiveContext& ctx() { return *ctx_; }
  const WindowConfig& config() const { return wcfg_; }
  std::uint32_t group_size() const { return ctx_->size(); }
  std::uint32_t my_index() const { return ctx_->my_index(); }
  RankId world_rank(std::uint32_t idx) const { return ctx_->world_rank(idx); }

  VAddr base() const { return my_base_; }
  std::uint64_t size() const { return my_size_; }
  std::uint32_t disp_unit() const { return my_disp_; }
  std::span<std::byte> local_data();

  /// Collective teardown: barrier, then deregistration. Requires all epochs
  /// closed. The destructor only releases local resources.
  void free();

  // --- dynamic windows ---
  void attach(VAddr base, std::uint64_t size);
  void detach(VAddr base);
  struct Resolved {
    RemoteDescriptor desc;
    std::uint64_t offset;
  };
  Resolved resolve_dynamic(std::uint32_t target, VAddr addr,
                           std::uint64_t len);

  // --- shared windows ---
  std::pair<VAddr, std::uint64_t> shared_query(std::uint32_t target);
  std::span<std::byte> shared_span(std::uint32_t target);

  /// Maps (target, displacement, length) to a fabric descriptor and byte
  /// offset. For dynamic windows the displacement is the target's absolute
  /// address.
  Resolved locate(std::uint32_t target, std::uint64_t target_disp,
                  std::uint64_t bytes);

  // --- memory accounting (persistent per-rank protocol state) ---
  std::uint64_t persistent_state_bytes() const;
  std::uint64_t pscw_state_bytes() const;
  std::uint64_t alloc_rounds() const { return alloc_rounds_; }

  // --- protocol word access (synchronization and accumulate layers) ---
  std::uint32_t matching_capacity() const { return 16 * wcfg_.k_max; }
  RemoteDescriptor local_lock_of(std::uint32_t idx) const;
  RemoteDescriptor global_lock() const;  // lives at group index 0
  RemoteDescriptor pscw_of(std::uint32_t idx) const;
  RemoteDescriptor acc_lock_of(std::uint32_t idx) const;
  EpochState& epoch() { return epoch_; }

  // Matching-list word offsets inside the pscw region.
  static constexpr std::uint64_t kTailWord = 0;
  static constexpr std::uint64_t kHeadWord = 8;
  static constexpr std::uint64_t kCompletionWord = 16;
  static constexpr std::uint64_t kSlotsBase = 24;

  // Owner-side matching bookkeeping (used by start).
  std::set<std::uint64_t>& consumed_slots() { return consumed_; }
  std::map<std::uint32_t, std::uint64_t>& post_head_hints() {
    return post_head_hint_;
  }

 private:
  Window(Rank& rank, std::vector<RankId> group, WinKind kind,
         WindowConfig wcfg);
  void register_sync_block();
  std::uint64_t derive(std::uint64_t salt) const;
  std::uint64_t dyn_list_bytes() const;
  void dyn_refetch(std::uint32_t target);
  void notify_register_self(std::uint32_t target);

  Rank* rank_ = nullptr;
  std::unique_ptr<CollectiveContext> ctx_;
  WinKind kind_ = WinKind::Traditional;
  WindowConfig wcfg_{};
  std::uint64_t win_id_ = 0;
  bool freed_ = false;

  VAddr my_base_ = 0;
  std::uint64_t my_size_ = 0;
  std::uint32_t my_disp_ = 1;
  Registration data_reg_;
  bool owns_reservation_ = false;
  std::uint64_t alloc_rounds_ = 0;

  struct RemoteEntry {
    RegionKey key = 0;
    VAddr base = 0;
    std::uint64_t size = 0;
    std::uint32_t disp = 1;
  };
  std::vector<RemoteEntry> full_table_;  // traditional
  RemoteEntry symmetric_{};              // allocated

  std::vector<std::uint64_t> shared_offsets_;
  std::vector<std::uint64_t> shared_sizes_;

  // dynamic: target side
  Registration dyn_list_;
  Registration dyn_holders_;  // notify variant: who caches my descriptors
  Registration dyn_inval_;    // notify variant: per-target invalidation words
  // dynamic: origin-side descriptor cache
  struct CacheEntry {
    VAddr base;
    std::uint64_t len;
    RegionKey key;
  };
  struct TargetCache {
    bool valid = false;
    bool holder_registered = false;
    std::uint64_t cached_id = 0;
    std::vector<CacheEntry> entries;
  };
  std::map<std::uint32_t, TargetCache> dyn_cache_;

  // sync block
  Registration local_lock_;
  Registration global_lock_;  // master only
  Registration pscw_;
  Registration acc_lock_;
  EpochState epoch_;
  std::set<std::uint64_t> consumed_;
  std::map<std::uint32_t, std::uint64_t> post_head_hint_;
};

}  // namespace windlass
