#include "windlass/window.hpp"

#include <algorithm>
#include <cstring>

#include "engine.hpp"

namespace windlass {

namespace {

enum : std::uint64_t {
  kWinData = 10,
  kLocalLock = 11,
  kPscw = 12,
  kAccLock = 13,
  kGlobalLock = 14,
  kDynList = 15,
  kDynHold = 16,
  kDynInval = 17,
};

constexpr VAddr kSymmetricZone = 1ull << 40;
constexpr VAddr kSymmetricSpan = 1ull << 38;

struct GatherNet {
  RegionKey key;
  std::uint64_t size;
};
struct GatherAddr {
  std::uint64_t base;
  std::uint64_t disp;
};

std::uint64_t blocking_get_u64(Rank& r, const RemoteDescriptor& d,
                               std::uint64_t offset) {
  std::uint64_t v = 0;
  r.wait(r.get(d, offset, {reinterpret_cast<std::byte*>(&v), 8}));
  return v;
}

}  // namespace

Window::Window(Rank& rank, std::vector<RankId> group, WinKind kind,
               WindowConfig wcfg)
    : rank_(&rank),
      ctx_(std::make_unique<CollectiveContext>(rank, std::move(group))),
      kind_(kind),
      wcfg_(wcfg) {
  win_id_ = detail::mix64(ctx_->id(), ctx_->next_object_nonce());
}

std::uint64_t Window::derive(std::uint64_t salt) const {
  return detail::mix64(win_id_, salt) >> 1;
}

void Window::register_sync_block() {
  local_lock_ =
      Registration(*rank_, rank_->register_with_key(8, derive(kLocalLock)));
  acc_lock_ =
      Registration(*rank_, rank_->register_with_key(8, derive(kAccLock)));
  pscw_ = Registration(
      *rank_, rank_->register_with_key((3 + matching_capacity()) * 8ull,
                                       derive(kPscw)));
  if (ctx_->my_index() == 0)
    global_lock_ =
        Registration(*rank_, rank_->register_with_key(8, derive(kGlobalLock)));
}

RemoteDescriptor Window::local_lock_of(std::uint32_t idx) const {
  return rank_->shared_descriptor(ctx_->world_rank(idx), derive(kLocalLock),
                                  8);
}

RemoteDescriptor Window::global_lock() const {
  return rank_->shared_descriptor(ctx_->world_rank(0), derive(kGlobalLock), 8);
}

RemoteDescriptor Window::pscw_of(std::uint32_t idx) const {
  return rank_->shared_descriptor(ctx_->world_rank(idx), derive(kPscw),
                                  (3 + matching_capacity()) * 8ull);
}

RemoteDescriptor Window::acc_lock_of(std::uint32_t idx) const {
  return rank_->shared_descriptor(ctx_->world_rank(idx), derive(kAccLock), 8);
}

// ---------------------------------------------------------------------------
// Creation flavors
// ---------------------------------------------------------------------------

Window Window::create(Rank& rank, std::vector<RankId> group, VAddr base,
                      std::uint64_t size, std::uint32_t disp_unit,
                      WindowConfig wcfg) {
  Window w(rank, std::move(group), WinKind::Traditional, wcfg);
  w.my_base_ = base;
  w.my_size_ = size;
  w.my_disp_ = disp_unit == 0 ? 1 : disp_unit;
  w.register_sync_block();
  RegionKey key = 0;
  if (size > 0) {
    w.data_reg_ = Registration(rank, rank.register_at(base, size));
    key = w.data_reg_.desc().key;
  }
  // Every member keeps the full address table: one exchange for transport
  // descriptors, one for addressing information.
  auto net = w.ctx_->allgather_pod(GatherNet{key, size});
  auto addr = w.ctx_->allgather_pod(GatherAddr{base, w.my_disp_});
  w.full_table_.resize(w.ctx_->size());
  for (std::uint32_t i = 0; i < w.ctx_->size(); ++i)
    w.full_table_[i] = RemoteEntry{net[i].key, addr[i].base, net[i].size,
                                   static_cast<std::uint32_t>(addr[i].disp)};
  return w;
}

Window Window::allocate(Rank& rank, std::vector<RankId> group,
                        std::uint64_t size, std::uint32_t disp_unit,
                        WindowConfig wcfg) {
  Window w(rank, std::move(group), WinKind::Allocated, wcfg);
  w.my_size_ = size;
  w.my_disp_ = disp_unit == 0 ? 1 : disp_unit;
  w.register_sync_block();

  auto sizes = w.ctx_->allgather_pod<std::uint64_t>(size);
  for (auto s : sizes)
    if (s != size)
      raise(errc::size_mismatch, "symmetric windows require a uniform size");

  // Leader proposes symmetric bases until every member can reserve one.
  const auto& cfg = rank.fabric().config();
  bool reserved = false;
  std::uint64_t candidate = 0;
  std::uint32_t attempt = 0;
  for (; attempt < w.wcfg_.alloc_retry_limit; ++attempt) {
    if (w.ctx_->my_index() == 0) {
      std::uint64_t s = detail::mix64(detail::mix64(w.win_id_, cfg.seed),
                                      0xa110c + attempt);
      candidate =
          kSymmetricZone + (detail::splitmix64(s) % kSymmetricSpan & ~0xfffull);
    }
    w.ctx_->broadcast(0, {reinterpret_cast<std::byte*>(&candidate), 8});
    bool ok = true;
    if (size > 0) {
      if (cfg.alloc_fail_prob > 0.0) {
        std::uint64_t s =
            detail::mix64(detail::mix64(w.win_id_, cfg.seed),
                          detail::mix64(attempt, 0x600d + rank.id()));
        double u = static_cast<double>(detail::splitmix64(s) >> 11) *
                   0x1.0p-53;
        if (u < cfg.alloc_fail_prob) ok = false;
      }
      if (ok) ok = rank.try_reserve(candidate, size);
    }
    bool all = w.ctx_->allreduce(ok ? 1 : 0, ReduceOp::And) != 0;
    if (all) {
      reserved = true;
      ++attempt;
      break;
    }
    if (ok && size > 0) rank.release(candidate);
  }
  w.alloc_rounds_ = attempt;
  if (!reserved)
    raise(errc::retry_limit_exceeded, "symmetric allocation failed");

  w.my_base_ = candidate;
  if (size > 0) {
    w.owns_reservation_ = true;
    w.data_reg_ = Registration(
        rank, rank.register_at_with_key(candidate, size, w.derive(kWinData)));
  }
  w.symmetric_ = RemoteEntry{w.derive(kWinData), candidate, size, w.my_disp_};
  w.ctx_->barrier();  // all registrations live before first access
  return w;
}

Window Window::create_dynamic(Rank& rank, std::vector<RankId> group,
                              WindowConfig wcfg) {
  Window w(rank, std::move(group), WinKind::Dynamic, wcfg);
  w.register_sync_block();
  w.dyn_list_ = Registration(
      rank, rank.register_with_key(w.dyn_list_bytes(), w.derive(kDynList)));
  if (w.wcfg_.dynamic_notify) {
    w.dyn_holders_ = Registration(
        rank, rank.register_with_key((1 + w.ctx_->size()) * 8ull,
                                     w.derive(kDynHold)));
    w.dyn_inval_ = Registration(
        rank,
        rank.register_with_key(w.ctx_->size() * 8ull, w.derive(kDynInval)));
  }
  w.ctx_->barrier();
  return w;
}

Window Window::allocate_shared(Rank& rank, std::vector<RankId> group,
                               std::uint64_t size, WindowConfig wcfg) {
  Window w(rank, std::move(group), WinKind::Shared, wcfg);
  for (RankId r : w.ctx_->group())
    if (rank.node_of(r) != rank.node())
      raise(errc::group_spans_nodes,
            "shared windows require a single-node group");
  w.my_size_ = size;
  w.my_disp_ = 1;
  w.register_sync_block();

  auto sizes = w.ctx_->allgather_pod<std::uint64_t>(size);
  w.shared_sizes_.assign(sizes.begin(), sizes.end());
  w.shared_offsets_.resize(sizes.size());
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    w.shared_offsets_[i] = total;
    total += sizes[i];
  }
  std::uint64_t leader_base = 0;
  if (w.ctx_->my_index() == 0 && total > 0) {
    leader_base = rank.alloc(total);
    w.owns_reservation_ = true;
    w.data_reg_ = Registration(
        rank, rank.register_at_with_key(leader_base, total, w.derive(kWinData)));
  }
  w.ctx_->broadcast(0, {reinterpret_cast<std::byte*>(&leader_base), 8});
  w.my_base_ = leader_base + w.shared_offsets_[w.ctx_->my_index()];
  w.ctx_->barrier();
  return w;
}

// ---------------------------------------------------------------------------

std::span<std::byte> Window::local_data() {
  switch (kind_) {
    case WinKind::Traditional:
    case WinKind::Allocated:
      return my_size_ ? rank_->local_span(my_base_, my_size_)
                      : std::span<std::byte>{};
    case WinKind::Shared:
      return shared_span(ctx_->my_index());
    case WinKind::Dynamic:
      raise(errc::invalid_argument, "dynamic windows have no fixed region");
  }
  return {};
}

std::pair<VAddr, std::uint64_t> Window::shared_query(std::uint32_t target) {
  if (kind_ != WinKind::Shared)
    raise(errc::invalid_argument, "shared_query on a non-shared window");
  VAddr leader_base = my_base_ - shared_offsets_[ctx_->my_index()];
  return {leader_base + shared_offsets_[target], shared_sizes_[target]};
}

std::span<std::byte> Window::shared_span(std::uint32_t target) {
  if (kind_ != WinKind::Shared)
    raise(errc::invalid_argument, "shared_span on a non-shared window");
  std::uint64_t total =
      shared_offsets_.back() + shared_sizes_.back();
  if (shared_sizes_[target] == 0) return {};
  auto whole = rank_->map_region(
      rank_->shared_descriptor(ctx_->world_rank(0), derive(kWinData), total));
  return whole.subspan(shared_offsets_[target], shared_sizes_[target]);
}

Window::Resolved Window::locate(std::uint32_t target, std::uint64_t target_disp,
                                std::uint64_t bytes) {
  switch (kind_) {
    case WinKind::Traditional: {
      const auto& e = full_table_.at(target);
      std::uint64_t off = target_disp * e.disp;
      if (off > e.size || bytes > e.size - off)
        raise(errc::out_of_bounds, "target displacement outside window");
      return {RemoteDescriptor{ctx_->world_rank(target), e.key, e.size,
                               rank_->node_of(ctx_->world_rank(target))},
              off};
    }
    case WinKind::Allocated: {
      std::uint64_t off = target_disp * symmetric_.disp;
      if (off > symmetric_.size || bytes > symmetric_.size - off)
        raise(errc::out_of_bounds, "target displacement outside window");
      return {rank_->shared_descriptor(ctx_->world_rank(target),
                                       symmetric_.key, symmetric_.size),
              off};
    }
    case WinKind::Shared: {
      std::uint64_t off = shared_offsets_.at(target) + target_disp;
      if (target_disp > shared_sizes_[target] ||
          bytes > shared_sizes_[target] - target_disp)
        raise(errc::out_of_bounds, "target displacement outside segment");
      std::uint64_t total = shared_offsets_.back() + shared_sizes_.back();
      return {rank_->shared_descriptor(ctx_->world_rank(0), derive(kWinData),
                                       total),
              off};
    }
    case WinKind::Dynamic:
      return resolve_dynamic(target, target_disp, bytes);
  }
  raise(errc::invalid_argument, "bad window kind");
}

// ---------------------------------------------------------------------------
// Dynamic windows
// ---------------------------------------------------------------------------

std::uint64_t Window::dyn_list_bytes() const {
  return (2 + 4ull * wcfg_.max_dynamic_regions) * 8;
}

void Window::attach(VAddr base, std::uint64_t size) {
  if (kind_ != WinKind::Dynamic)
    raise(errc::invalid_argument, "attach on a non-dynamic window");
  if (size == 0) raise(errc::zero_length, "attach of zero bytes");
  auto list = dyn_list_.desc();
  std::uint32_t cap = wcfg_.max_dynamic_regions;
  std::uint32_t slot = cap;
  for (std::uint32_t i = 0; i < cap; ++i) {
    std::uint64_t valid = rank_->load_local_u64(list, (2 + 4ull * i + 3) * 8);
    if (valid) {
      std::uint64_t rbase = rank_->load_local_u64(list, (2 + 4ull * i) * 8);
      std::uint64_t rlen = rank_->load_local_u64(list, (2 + 4ull * i + 1) * 8);
      if (base < rbase + rlen && rbase < base + size)
        raise(errc::overlapping_region, "attach overlaps an attached region");
    } else if (slot == cap) {
      slot = i;
    }
  }
  if (slot == cap)
    raise(errc::registration_budget, "dynamic region capacity exhausted");

  auto d = rank_->register_at(base, size);
  std::uint64_t w = (2 + 4ull * slot) * 8;
  rank_->store_local_u64(list, w, base);
  rank_->store_local_u64(list, w + 8, size);
  rank_->store_local_u64(list, w + 16, d.key);
  rank_->store_local_u64(list, w + 24, 1);
  std::uint64_t count = rank_->load_local_u64(list, 8);
  if (slot + 1 > count) rank_->store_local_u64(list, 8, slot + 1);
  rank_->store_local_u64(list, 0, rank_->load_local_u64(list, 0) + 1);
}

void Window::detach(VAddr base) {
  if (kind_ != WinKind::Dynamic)
    raise(errc::invalid_argument, "detach on a non-dynamic window");
  auto list = dyn_list_.desc();
  std::uint32_t cap = wcfg_.max_dynamic_regions;
  for (std::uint32_t i = 0; i < cap; ++i) {
    std::uint64_t w = (2 + 4ull * i) * 8;
    if (rank_->load_local_u64(list, w + 24) &&
        rank_->load_local_u64(list, w) == base) {
      std::uint64_t len = rank_->load_local_u64(list, w + 8);
      RegionKey key = rank_->load_local_u64(list, w + 16);
      if (wcfg_.dynamic_notify) {
        // Tell every rank holding cached descriptors to drop them, then
        // forget the holder list.
        auto holders = dyn_holders_.desc();
        std::uint64_t n = rank_->load_local_u64(holders, 0);
        std::uint32_t me = ctx_->my_index();
        for (std::uint64_t h = 0; h < n; ++h) {
          std::uint64_t who = rank_->load_local_u64(holders, (1 + h) * 8);
          if (who == 0) continue;
          auto peer_inval = rank_->shared_descriptor(
              ctx_->world_rank(static_cast<std::uint32_t>(who - 1)),
              derive(kDynInval), ctx_->size() * 8ull);
          rank_->put_u64(peer_inval, me * 8ull, 1);
          rank_->gsync_to(peer_inval.owner);
          rank_->store_local_u64(holders, (1 + h) * 8, 0);
        }
        rank_->store_local_u64(holders, 0, 0);
      }
      rank_->deregister(RemoteDescriptor{rank_->id(), key, len, rank_->node()});
      rank_->store_local_u64(list, w + 24, 0);
      rank_->store_local_u64(list, 0, rank_->load_local_u64(list, 0) + 1);
      return;
    }
  }
  raise(errc::detach_unknown_region, "detach: no region at this base");
}

void Window::dyn_refetch(std::uint32_t target) {
  auto list = rank_->shared_descriptor(ctx_->world_rank(target),
                                       derive(kDynList), dyn_list_bytes());
  std::vector<std::uint64_t> snap(dyn_list_bytes() / 8);
  rank_->wait(rank_->get(
      list, 0,
      {reinterpret_cast<std::byte*>(snap.data()), dyn_list_bytes()}));
  auto& tc = dyn_cache_[target];
  tc.entries.clear();
  std::uint64_t count = std::min<std::uint64_t>(snap[1],
                                                wcfg_.max_dynamic_regions);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t* rec = &snap[2 + 4 * i];
    if (rec[3]) tc.entries.push_back(CacheEntry{rec[0], rec[1], rec[2]});
  }
  tc.cached_id = snap[0];
  tc.valid = true;
}

void Window::notify_register_self(std::uint32_t target) {
  auto holders = rank_->shared_descriptor(ctx_->world_rank(target),
                                          derive(kDynHold),
                                          (1 + ctx_->size()) * 8ull);
  std::uint64_t slot =
      static_cast<std::uint64_t>(rank_->fadd64(holders, 0, 1));
  if (slot >= ctx_->size())
    raise(errc::protocol_error, "holder list overflow");
  rank_->put_u64(holders, (1 + slot) * 8, ctx_->my_index() + 1);
  rank_->gsync_to(holders.owner);
  dyn_cache_[target].holder_registered = true;
}

Window::Resolved Window::resolve_dynamic(std::uint32_t target, VAddr addr,
                                         std::uint64_t len) {
  if (kind_ != WinKind::Dynamic)
    raise(errc::invalid_argument, "resolve on a non-dynamic window");
  auto& tc = dyn_cache_[target];

  auto lookup = [&]() -> const CacheEntry* {
    for (const auto& e : tc.entries)
      if (addr >= e.base && addr - e.base + len <= e.len) return &e;
    return nullptr;
  };

  const CacheEntry* hit = nullptr;
  if (wcfg_.dynamic_notify) {
    if (rank_->load_local_u64(dyn_inval_.desc(), target * 8ull) != 0) {
      rank_->store_local_u64(dyn_inval_.desc(), target * 8ull, 0);
      tc.valid = false;
      tc.holder_registered = false;
    }
    if (tc.valid) hit = lookup();
    if (!hit) {
      dyn_refetch(target);
      if (!tc.holder_registered) notify_register_self(target);
      hit = lookup();
    }
  } else {
    // One remote read of the target's change counter decides whether the
    // cached table is still usable.
    auto list = rank_->shared_descriptor(ctx_->world_rank(target),
                                         derive(kDynList), dyn_list_bytes());
    std::uint64_t rid = blocking_get_u64(*rank_, list, 0);
    if (!tc.valid || rid != tc.cached_id) dyn_refetch(target);
    hit = lookup();
  }
  if (!hit)
    raise(errc::address_not_attached, "no attached region covers the range");
  return {RemoteDescriptor{ctx_->world_rank(target), hit->key, hit->len,
                           rank_->node_of(ctx_->world_rank(target))},
          addr - hit->base};
}

// ---------------------------------------------------------------------------

void Window::free() {
  if (epoch_.any_open())
    raise(errc::epoch_still_open, "close all epochs before freeing");
  ctx_->barrier();
  if (kind_ == WinKind::Dynamic) {
    auto list = dyn_list_.desc();
    for (std::uint32_t i = 0; i < wcfg_.max_dynamic_regions; ++i) {
      std::uint64_t w = (2 + 4ull * i) * 8;
      if (rank_->load_local_u64(list, w + 24)) {
        RegionKey key = rank_->load_local_u64(list, w + 16);
        std::uint64_t len = rank_->load_local_u64(list, w + 8);
        rank_->deregister(
            RemoteDescriptor{rank_->id(), key, len, rank_->node()});
      }
    }
  }
  data_reg_ = Registration();
  dyn_list_ = Registration();
  dyn_holders_ = Registration();
  dyn_inval_ = Registration();
  local_lock_ = Registration();
  global_lock_ = Registration();
  pscw_ = Registration();
  acc_lock_ = Registration();
  if (owns_reservation_) {
    VAddr base = kind_ == WinKind::Shared
                     ? my_base_ - shared_offsets_[ctx_->my_index()]
                     : my_base_;
    rank_->release(base);
    owns_reservation_ = false;
  }
  freed_ = true;
}

std::uint64_t Window::pscw_state_bytes() const {
  return (3 + matching_capacity()) * 8ull + consumed_.size() * 8;
}

std::uint64_t Window::persistent_state_bytes() const {
  std::uint64_t b = 0;
  switch (kind_) {
    case WinKind::Traditional:
      b += full_table_.size() * sizeof(RemoteEntry);
      break;
    case WinKind::Allocated:
      b += sizeof(RemoteEntry);
      break;
    case WinKind::Shared:
      b += (shared_offsets_.size() + shared_sizes_.size()) * 8;
      break;
    case WinKind::Dynamic:
      b += dyn_list_bytes();
      for (const auto& [t, tc] : dyn_cache_)
        b += 24 + tc.entries.size() * sizeof(CacheEntry);
      if (wcfg_.dynamic_notify) b += (1 + 2 * ctx_->size()) * 8;
      break;
  }
  b += 8 + 8;                            // local lock + accumulate lock
  b += (3 + matching_capacity()) * 8ull;  // matching list
  if (ctx_->my_index() == 0) b += 8;     // global lock word
  b += post_head_hint_.size() * 16 + consumed_.size() * 8;
  return b;
}

}  // namespace windlass
