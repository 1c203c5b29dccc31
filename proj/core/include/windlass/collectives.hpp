#pragma once

#include <cstring>
#include <span>
#include <vector>

#include "windlass/fabric.hpp"

namespace windlass {

enum class ReduceOp { And, Sum, Max };

/// Group collectives built purely on fabric puts and atomics. All members
/// must construct the context together and issue the same sequence of
/// collective calls on it (one collective in flight per context).
///
/// Construction registers one signal word per dissemination round, a
/// broadcast flag, and a gather scratch region, under keys every member
/// derives from the group and a creation nonce, then barriers, so later
/// collectives touch only live registrations.
class CollectiveContext {
 public:
  CollectiveContext(Rank& rank, std::vector<RankId> group,
                    std::uint64_t scratch_item_hint = 64);
  ~CollectiveContext();
  CollectiveContext(CollectiveContext&&) = default;
  CollectiveContext& operator=(CollectiveContext&&) = default;
  CollectiveContext(const CollectiveContext&) = delete;
  CollectiveContext& operator=(const CollectiveContext&) = delete;

  const std::vector<RankId>& group() const { return group_; }
  std::uint32_t size() const { return static_cast<std::uint32_t>(group_.size()); }
  std::uint32_t my_index() const { return me_; }
  RankId world_rank(std::uint32_t idx) const { return group_[idx]; }
  std::uint64_t id() const { return ctx_id_; }
  Rank& rank() { return *rank_; }

  void barrier();
  // Dissemination signal rounds used by barrier and allgather.
  std::uint32_t rounds() const { return rounds_; }

  /// Root's data lands in every member's buf. All callers pass equal sizes.
  void broadcast(std::uint32_t root_idx, std::span<std::byte> buf);

  /// Gathers an equal-size contribution from every member, ordered by group
  /// index.
  std::vector<std::byte> allgather(std::span<const std::byte> contrib);

  template <typename T>
  std::vector<T> allgather_pod(const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    auto bytes = allgather(
        {reinterpret_cast<const std::byte*>(&value), sizeof(T)});
    std::vector<T> out(size());
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
  }

  std::int64_t allreduce(std::int64_t value, ReduceOp op);
  std::vector<std::int64_t> allreduce_sum(std::span<const std::int64_t> values);

  // Derives a fresh key salt the whole group agrees on (call discipline).
  std::uint64_t derive_key(std::uint64_t salt) const;
  std::uint64_t next_object_nonce() { return object_nonce_++; }

  std::uint64_t barrier_calls() const { return barriers_; }
  std::uint64_t allgather_calls() const { return allgathers_; }
  std::uint64_t broadcast_calls() const { return broadcasts_; }
  std::uint64_t allreduce_calls() const { return allreduces_; }

 private:
  void enter(std::uint64_t kind, std::uint64_t param);
  void barrier_impl();
  void gather_impl(std::span<const std::byte> contrib, std::byte* out);
  void ensure_scratch(std::uint64_t bytes);
  RemoteDescriptor flags_of(std::uint32_t idx) const;
  RemoteDescriptor scratch_of(std::uint32_t idx) const;
  RemoteDescriptor bcast_flag_of(std::uint32_t idx) const;

  Rank* rank_ = nullptr;
  std::vector<RankId> group_;
  std::uint32_t me_ = 0;
  std::uint32_t rounds_ = 0;
  std::uint64_t ctx_id_ = 0;
  Registration flags_;
  Registration bcast_flag_;
  Registration scratch_;
  std::uint64_t scratch_bytes_ = 0;
  std::uint32_t scratch_gen_ = 0;
  std::uint64_t round_seq_ = 0;
  std::uint64_t bcast_seq_ = 0;
  std::uint64_t call_seq_ = 0;
  std::uint64_t object_nonce_ = 0;
  std::uint64_t barriers_ = 0;
  std::uint64_t allgathers_ = 0;
  std::uint64_t broadcasts_ = 0;
  std::uint64_t allreduces_ = 0;
};

}  // namespace windlass
