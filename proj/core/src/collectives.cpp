#include "windlass/collectives.hpp"

#include <algorithm>

#include "engine.hpp"

namespace windlass {

namespace {

std::uint32_t ceil_log2(std::uint32_t n) {
  std::uint32_t r = 0;
  while ((1u << r) < n) ++r;
  return r;
}

std::uint64_t hash_group(const std::vector<RankId>& group) {
  std::uint64_t h = 0x9e3779b97f4a7c15ull ^ group.size();
  for (RankId r : group) h = detail::mix64(h, r + 1);
  return h;
}

enum : std::uint64_t { kFlagsSalt = 1, kBcastSalt = 2, kScratchSalt = 3 };
enum : std::uint64_t { kKindBarrier = 1, kKindBcast, kKindAllgather,
                       kKindAllreduce };

}  // namespace

CollectiveContext::CollectiveContext(Rank& rank, std::vector<RankId> group,
                                     std::uint64_t scratch_item_hint)
    : rank_(&rank), group_(std::move(group)) {
  if (group_.empty()) raise(errc::invalid_argument, "empty group");
  auto it = std::find(group_.begin(), group_.end(), rank.id());
  if (it == group_.end())
    raise(errc::invalid_argument, "calling rank not in group");
  me_ = static_cast<std::uint32_t>(it - group_.begin());
  rounds_ = ceil_log2(size());

  std::uint64_t gh = hash_group(group_);
  ctx_id_ = detail::mix64(gh, rank.context_nonce(gh));

  flags_ = Registration(
      rank, rank.register_with_key(std::max<std::uint64_t>(rounds_, 1) * 8,
                                   derive_key(kFlagsSalt)));
  bcast_flag_ =
      Registration(rank, rank.register_with_key(8, derive_key(kBcastSalt)));
  scratch_bytes_ = size() * std::max<std::uint64_t>(scratch_item_hint, 8);
  scratch_ = Registration(
      rank, rank.register_with_key(
                scratch_bytes_,
                detail::mix64(derive_key(kScratchSalt), scratch_gen_)));

  // Launch handshake: make sure each signal target exists before the first
  // barrier fadd can be issued, then synchronize the whole group so every
  // member's registrations are live.
  for (std::uint32_t r = 0; r < rounds_; ++r) {
    auto partner = flags_of((me_ + (1u << r)) % size());
    rank_->poll([&] { return rank_->descriptor_live(partner); });
  }
  barrier_impl();
}

CollectiveContext::~CollectiveContext() {
  if (rank_) rank_->fabric().engine().collective_forget(ctx_id_);
}

std::uint64_t CollectiveContext::derive_key(std::uint64_t salt) const {
  return detail::mix64(ctx_id_, salt) >> 1;  // engine reserves the top bit
}

RemoteDescriptor CollectiveContext::flags_of(std::uint32_t idx) const {
  return rank_->shared_descriptor(group_[idx],
                                  derive_key(kFlagsSalt),
                                  std::max<std::uint64_t>(rounds_, 1) * 8);
}

RemoteDescriptor CollectiveContext::bcast_flag_of(std::uint32_t idx) const {
  return rank_->shared_descriptor(group_[idx], derive_key(kBcastSalt), 8);
}

RemoteDescriptor CollectiveContext::scratch_of(std::uint32_t idx) const {
  return rank_->shared_descriptor(
      group_[idx], detail::mix64(derive_key(kScratchSalt), scratch_gen_),
      scratch_bytes_);
}

void CollectiveContext::enter(std::uint64_t kind, std::uint64_t param) {
  ++call_seq_;
  rank_->fabric().engine().collective_entry(ctx_id_, call_seq_,
                                            detail::mix64(kind, param));
}

void CollectiveContext::barrier_impl() {
  ++round_seq_;
  std::uint64_t want = round_seq_;
  for (std::uint32_t r = 0; r < rounds_; ++r) {
    std::uint32_t partner = (me_ + (1u << r)) % size();
    rank_->fadd64(flags_of(partner), r * 8, 1);
    rank_->poll([&, r] {
      return rank_->load_local_u64(flags_.desc(), r * 8) >= want;
    });
  }
}

void CollectiveContext::barrier() {
  enter(kKindBarrier, 0);
  ++barriers_;
  barrier_impl();
}

void CollectiveContext::ensure_scratch(std::uint64_t bytes) {
  if (bytes <= scratch_bytes_) return;
  scratch_ = Registration();  // deregister before the replacing registration
  ++scratch_gen_;
  scratch_bytes_ = bytes;
  scratch_ = Registration(
      *rank_, rank_->register_with_key(
                  bytes, detail::mix64(derive_key(kScratchSalt), scratch_gen_)));
  barrier_impl();  // nobody targets a peer's scratch before it exists
}

void CollectiveContext::gather_impl(std::span<const std::byte> contrib,
                                    std::byte* out) {
  std::uint32_t n = size();
  std::uint64_t item = contrib.size();
  if (n == 1) {
    std::memcpy(out, contrib.data(), item);
    return;
  }
  ensure_scratch(n * item);
  ++round_seq_;
  std::uint64_t want = round_seq_;

  auto my_scratch = rank_->local_view(scratch_.desc());
  std::memcpy(my_scratch.data(), contrib.data(), item);

  // Doubling exchange: after round r each rank holds 2^(r+1) consecutive
  // blocks starting at its own, so log2 rounds cover the group.
  for (std::uint32_t r = 0; r < rounds_; ++r) {
    std::uint32_t step = 1u << r;
    std::uint64_t blocks = std::min<std::uint64_t>(step, n - step);
    std::uint32_t partner = (me_ + n - step) % n;
    RankId partner_world = group_[partner];
    rank_->put(scratch_of(partner), step * item,
               {my_scratch.data(), blocks * item});
    rank_->gsync_to(partner_world);
    rank_->fadd64(flags_of(partner), r * 8, 1);
    rank_->poll([&, r] {
      return rank_->load_local_u64(flags_.desc(), r * 8) >= want;
    });
  }

  // Scratch slot j holds the block of group index (me + j) mod n.
  for (std::uint32_t g = 0; g < n; ++g) {
    std::uint32_t slot = (g + n - me_) % n;
    std::memcpy(out + g * item, my_scratch.data() + slot * item, item);
  }

  // Nobody may start the next scratch-writing episode while a slow member
  // still reads this one.
  barrier_impl();
}

std::vector<std::byte> CollectiveContext::allgather(
    std::span<const std::byte> contrib) {
  enter(kKindAllgather, contrib.size());
  ++allgathers_;
  std::vector<std::byte> out(size() * contrib.size());
  gather_impl(contrib, out.data());
  return out;
}

void CollectiveContext::broadcast(std::uint32_t root_idx,
                                  std::span<std::byte> buf) {
  enter(kKindBcast, detail::mix64(root_idx, buf.size()));
  ++broadcasts_;
  std::uint32_t n = size();
  if (n == 1) return;
  ensure_scratch(buf.size());
  ++bcast_seq_;
  std::uint64_t want = bcast_seq_;

  auto my_scratch = rank_->local_view(scratch_.desc());
  std::uint32_t rel = (me_ + n - root_idx) % n;
  if (rel == 0) {
    std::memcpy(my_scratch.data(), buf.data(), buf.size());
  } else {
    rank_->poll([&] {
      return rank_->load_local_u64(bcast_flag_.desc(), 0) >= want;
    });
    std::memcpy(buf.data(), my_scratch.data(), buf.size());
  }
  // Binomial forwarding: children of rel are rel + step for powers of two
  // strictly above rel.
  std::uint32_t step = 1;
  while (step <= rel) step <<= 1;
  for (; rel + step < n; step <<= 1) {
    std::uint32_t child = (root_idx + rel + step) % n;
    rank_->put(scratch_of(child), 0, {my_scratch.data(), buf.size()});
    rank_->gsync_to(group_[child]);
    rank_->fadd64(bcast_flag_of(child), 0, 1);
  }
  barrier_impl();  // scratch reuse fence, as in gather
}

std::int64_t CollectiveContext::allreduce(std::int64_t value, ReduceOp op) {
  enter(kKindAllreduce, static_cast<std::uint64_t>(op));
  ++allreduces_;
  std::vector<std::int64_t> all(size());
  gather_impl({reinterpret_cast<const std::byte*>(&value), 8},
              reinterpret_cast<std::byte*>(all.data()));
  std::int64_t acc = all[0];
  for (std::uint32_t i = 1; i < size(); ++i) {
    switch (op) {
      case ReduceOp::And: acc = (acc != 0 && all[i] != 0) ? 1 : 0; break;
      case ReduceOp::Sum: acc += all[i]; break;
      case ReduceOp::Max: acc = std::max(acc, all[i]); break;
    }
  }
  return acc;
}

std::vector<std::int64_t> CollectiveContext::allreduce_sum(
    std::span<const std::int64_t> values) {
  enter(kKindAllreduce, detail::mix64(0x5e5, values.size()));
  ++allreduces_;
  std::uint64_t item = values.size() * 8;
  std::vector<std::int64_t> rows(size() * values.size());
  gather_impl({reinterpret_cast<const std::byte*>(values.data()), item},
              reinterpret_cast<std::byte*>(rows.data()));
  std::vector<std::int64_t> out(values.size(), 0);
  for (std::uint32_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < values.size(); ++j)
      out[j] += rows[i * values.size() + j];
  return out;
}

}  // namespace windlass
