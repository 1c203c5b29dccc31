#include "engine.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>

namespace windlass::detail {

namespace {

constexpr VAddr kBumpBase = 0x0010'0000;
constexpr VAddr kBumpSkew = 0x0002'0000;  // per-rank skew so bases differ

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  return splitmix64(s);
}

Engine::Engine(FabricConfig cfg, std::unique_ptr<Strategy> strategy)
    : cfg_(cfg), strategy_(std::move(strategy)) {
  if (cfg_.p < 1) raise(errc::invalid_argument, "rank count must be >= 1");
  if (cfg_.ranks_per_node < 1)
    raise(errc::invalid_argument, "ranks_per_node must be >= 1");
  if (cfg_.alpha_inter < 0 || cfg_.beta_inter < 0 || cfg_.alpha_intra < 0 ||
      cfg_.beta_intra < 0 || cfg_.atomic_latency < 0 || cfg_.issue_inter < 0 ||
      cfg_.issue_intra < 0)
    raise(errc::invalid_argument, "cost model constants must be >= 0");
  if (!strategy_)
    strategy_ = std::make_unique<RandomStrategy>(cfg_.seed, cfg_.progress_prob);
  ranks_.resize(cfg_.p);
  for (RankId r = 0; r < cfg_.p; ++r) {
    auto& st = ranks_[r];
    st.bump = kBumpBase + static_cast<VAddr>(r) * kBumpSkew;
    st.ctr.remote_ops_to.assign(cfg_.p, 0);
    st.body_rng.seed(mix64(cfg_.seed, 0x1000 + r));
    st.jitter_rng.seed(mix64(cfg_.seed, 0x2000 + r));
  }
  wall_start_ = std::chrono::steady_clock::now();
}

Engine::~Engine() = default;

// ---------------------------------------------------------------------------
// Address space
// ---------------------------------------------------------------------------

VAddr Engine::alloc(RankId r, std::uint64_t bytes) {
  if (bytes == 0) raise(errc::zero_length, "alloc of zero bytes");
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  auto& st = ranks_[r];
  VAddr base = (st.bump + 15) & ~VAddr{15};
  st.bump = base + bytes;
  LocalRegion reg;
  reg.length = bytes;
  reg.bytes.assign(bytes, std::byte{0});
  st.regions.emplace(base, std::move(reg));
  return base;
}

bool Engine::try_reserve(RankId r, VAddr base, std::uint64_t bytes) {
  if (bytes == 0) raise(errc::zero_length, "reserve of zero bytes");
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  auto& st = ranks_[r];
  auto next = st.regions.lower_bound(base);
  if (next != st.regions.end() && next->first < base + bytes) return false;
  if (next != st.regions.begin()) {
    auto prev = std::prev(next);
    if (prev->first + prev->second.length > base) return false;
  }
  LocalRegion reg;
  reg.length = bytes;
  reg.bytes.assign(bytes, std::byte{0});
  st.regions.emplace(base, std::move(reg));
  return true;
}

void Engine::release(RankId r, VAddr base) {
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  auto& st = ranks_[r];
  auto it = st.regions.find(base);
  if (it == st.regions.end())
    raise(errc::invalid_argument, "release of unknown region");
  if (it->second.key != 0) st.by_key.erase(it->second.key), --st.live_regs;
  st.regions.erase(it);
}

std::span<std::byte> Engine::local_span(RankId r, VAddr base,
                                        std::uint64_t len) {
  auto& st = ranks_[r];
  auto it = st.regions.upper_bound(base);
  if (it == st.regions.begin())
    raise(errc::invalid_argument, "address not allocated");
  --it;
  if (base < it->first || base + len > it->first + it->second.length)
    raise(errc::out_of_bounds, "span outside allocated region");
  return {it->second.bytes.data() + (base - it->first), len};
}

// ---------------------------------------------------------------------------
// Registration
// ---------------------------------------------------------------------------

RemoteDescriptor Engine::register_at(RankId r, VAddr base, std::uint64_t bytes,
                                     RegionKey agreed_key) {
  if (bytes == 0) raise(errc::zero_length, "cannot register an empty region");
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  auto& st = ranks_[r];
  if (st.live_regs >= cfg_.max_registrations_per_rank)
    raise(errc::registration_budget, "registration budget exceeded");
  auto it = st.regions.find(base);
  if (it == st.regions.end())
    raise(errc::invalid_argument, "register_at: unknown base address");
  if (it->second.length < bytes)
    raise(errc::out_of_bounds, "register_at: length exceeds allocation");
  if (it->second.key != 0)
    raise(errc::overlapping_region, "region already registered");
  RegionKey key = agreed_key;
  if (key == 0) {
    key = (static_cast<RegionKey>(r) + 1) << 40 | st.next_key_seq++;
  } else {
    key |= kAgreedKeyBit;
  }
  if (st.by_key.count(key)) raise(errc::duplicate_key, "key already in use");
  it->second.key = key;
  st.by_key.emplace(key, base);
  ++st.live_regs;
  progress_event();  // wakes peers polling descriptor_live
  return RemoteDescriptor{r, key, bytes, r / cfg_.ranks_per_node};
}

RemoteDescriptor Engine::register_fresh(RankId r, std::uint64_t bytes) {
  VAddr base = alloc(r, bytes);
  return register_at(r, base, bytes, 0);
}

void Engine::deregister(RankId r, const RemoteDescriptor& d) {
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  if (d.owner != r)
    raise(errc::invalid_argument, "deregister must run on the owner rank");
  auto& st = ranks_[r];
  auto it = st.by_key.find(d.key);
  if (it == st.by_key.end())
    raise(errc::stale_descriptor, "deregister: key not registered");
  st.regions[it->second].key = 0;
  st.by_key.erase(it);
  --st.live_regs;
  progress_event();
}

std::uint64_t Engine::live_registrations(RankId r) const {
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  return ranks_[r].live_regs;
}

bool Engine::descriptor_live(RankId r, const RemoteDescriptor& d) {
  if (deterministic()) yield(r);
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  count_op(r, d.owner, OpClass::Get, 0);
  return find_region(d.owner, d.key) != nullptr;
}

std::span<std::byte> Engine::local_view(RankId r, const RemoteDescriptor& d) {
  if (d.owner != r)
    raise(errc::invalid_argument, "local_view is owner-only");
  auto& reg = region_by_key(r, d.key, errc::stale_descriptor);
  return {reg.bytes.data(), reg.length};
}

std::span<std::byte> Engine::map_region(RankId r, const RemoteDescriptor& d) {
  if (!intra_node(r, d.owner))
    raise(errc::group_spans_nodes, "direct mapping requires the same node");
  auto& reg = region_by_key(d.owner, d.key, errc::stale_descriptor);
  return {reg.bytes.data(), reg.length};
}

const LocalRegion* Engine::find_region(RankId owner, RegionKey key) const {
  const auto& st = ranks_[owner];
  auto it = st.by_key.find(key);
  if (it == st.by_key.end()) return nullptr;
  return &st.regions.at(it->second);
}

LocalRegion& Engine::region_by_key(RankId owner, RegionKey key,
                                   errc on_missing) {
  auto& st = ranks_[owner];
  auto it = st.by_key.find(key);
  if (it == st.by_key.end()) raise(on_missing, "descriptor no longer valid");
  return st.regions.at(it->second);
}

// ---------------------------------------------------------------------------
// Transfers and atomics
// ---------------------------------------------------------------------------

void Engine::check_bounds(const RemoteDescriptor& d, std::uint64_t offset,
                          std::uint64_t size, bool atomic) const {
  const LocalRegion* reg = find_region(d.owner, d.key);
  if (!reg) raise(errc::stale_descriptor, "descriptor no longer valid");
  std::uint64_t limit = std::min<std::uint64_t>(d.length, reg->length);
  if (offset > limit || size > limit - offset)
    raise(errc::out_of_bounds, "access outside registered region");
  if (atomic && offset % 8 != 0)
    raise(errc::misaligned, "atomics require 8-byte alignment");
}

void Engine::count_op(RankId origin, RankId target, OpClass cls,
                      std::uint64_t size) {
  auto& c = ranks_[origin].ctr;
  if (target == origin) {
    ++c.local_ops;
    return;
  }
  bool intra = intra_node(origin, target);
  switch (cls) {
    case OpClass::Put:
      ++c.puts_issued;
      c.bytes_put += size;
      if (intra) ++c.intra_puts;
      break;
    case OpClass::Get:
      ++c.gets_issued;
      c.bytes_got += size;
      if (intra) ++c.intra_gets;
      break;
    case OpClass::Atomic:
      ++c.atomics_issued;
      if (intra) ++c.intra_atomics;
      break;
  }
  ++c.remote_ops_to[target];
}

OpHandle Engine::issue_transfer(RankId origin, OpClass cls,
                                const RemoteDescriptor& d, std::uint64_t offset,
                                std::span<const std::byte> src,
                                std::span<std::byte> dst) {
  if (deterministic()) yield(origin);
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();

  std::uint64_t size = cls == OpClass::Put ? src.size() : dst.size();
  check_bounds(d, offset, size, false);

  PendingOp op;
  op.id = next_op_id_++;
  op.cls = cls;
  op.origin = origin;
  op.target = d.owner;
  op.intra = intra_node(origin, d.owner);
  op.key = d.key;
  op.offset = offset;
  op.size = size;
  if (cls == OpClass::Put) op.staged.assign(src.begin(), src.end());
  if (cls == OpClass::Get) op.dest = dst.data();

  count_op(origin, d.owner, cls, size);
  if (d.owner != origin)
    ranks_[origin].clock += op.intra ? cfg_.issue_intra : cfg_.issue_inter;

  OpHandle h{op.id, origin, d.owner, cls, size};
  ranks_[origin].pending.push_back(std::move(op));
  ++num_unapplied_;
  return h;
}

std::uint64_t* Engine::word_ptr(LocalRegion& reg, std::uint64_t offset) {
  return reinterpret_cast<std::uint64_t*>(reg.bytes.data() + offset);
}

std::int64_t Engine::fadd64(RankId origin, const RemoteDescriptor& d,
                            std::uint64_t offset, std::int64_t operand) {
  if (deterministic()) yield(origin);
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  check_bounds(d, offset, 8, true);
  auto& reg = region_by_key(d.owner, d.key, errc::stale_descriptor);
  std::uint64_t* w = word_ptr(reg, offset);
  std::uint64_t old = *w;
  *w = old + static_cast<std::uint64_t>(operand);
  count_op(origin, d.owner, OpClass::Atomic, 8);
  if (d.owner != origin) ranks_[origin].clock += cfg_.atomic_latency;
  if (cfg_.record_completions) {
    CompletionRecord rec;
    rec.kind = OpKind::Fadd;
    rec.origin = origin;
    rec.target = d.owner;
    rec.key = d.key;
    rec.offset = offset;
    rec.size = 8;
    rec.arg0 = static_cast<std::uint64_t>(operand);
    rec.result = old;
    record(std::move(rec));
  }
  progress_event();
  return static_cast<std::int64_t>(old);
}

std::uint64_t Engine::cas64(RankId origin, const RemoteDescriptor& d,
                            std::uint64_t offset, std::uint64_t compare,
                            std::uint64_t swap) {
  if (deterministic()) yield(origin);
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  check_bounds(d, offset, 8, true);
  auto& reg = region_by_key(d.owner, d.key, errc::stale_descriptor);
  std::uint64_t* w = word_ptr(reg, offset);
  std::uint64_t old = *w;
  if (old == compare) *w = swap;
  count_op(origin, d.owner, OpClass::Atomic, 8);
  if (d.owner != origin) ranks_[origin].clock += cfg_.atomic_latency;
  if (cfg_.record_completions) {
    CompletionRecord rec;
    rec.kind = OpKind::Cas;
    rec.origin = origin;
    rec.target = d.owner;
    rec.key = d.key;
    rec.offset = offset;
    rec.size = 8;
    rec.arg0 = compare;
    rec.arg1 = swap;
    rec.result = old;
    record(std::move(rec));
  }
  progress_event();
  return old;
}

void Engine::apply(PendingOp& op) {
  assert(!op.applied);
  const LocalRegion* creg = find_region(op.target, op.key);
  if (!creg) raise(errc::stale_descriptor, "region vanished before completion");
  auto& reg = const_cast<LocalRegion&>(*creg);
  CompletionRecord rec;
  rec.origin = op.origin;
  rec.target = op.target;
  rec.key = op.key;
  rec.offset = op.offset;
  rec.size = op.size;
  if (op.cls == OpClass::Put) {
    std::memcpy(reg.bytes.data() + op.offset, op.staged.data(), op.size);
    rec.kind = OpKind::Put;
    rec.payload = op.staged;
  } else {
    std::memcpy(op.dest, reg.bytes.data() + op.offset, op.size);
    rec.kind = OpKind::Get;
    rec.payload.assign(reg.bytes.data() + op.offset,
                       reg.bytes.data() + op.offset + op.size);
  }
  op.applied = true;
  --num_unapplied_;
  if (cfg_.record_completions) record(std::move(rec));
  progress_event();
}

void Engine::charge_completion(RankId origin, const PendingOp& op) {
  if (op.target == origin) return;
  double alpha = op.intra ? cfg_.alpha_intra : cfg_.alpha_inter;
  double beta = op.intra ? cfg_.beta_intra : cfg_.beta_inter;
  double issue = op.intra ? cfg_.issue_intra : cfg_.issue_inter;
  double rest = alpha > issue ? alpha - issue : 0.0;
  ranks_[origin].clock += rest + beta * static_cast<double>(op.size);
}

void Engine::retire(RankId origin, PendingOp& op) {
  if (!op.applied) apply(op);
  charge_completion(origin, op);
}

void Engine::wait(RankId origin, const OpHandle& h) {
  if (h.origin != origin)
    raise(errc::foreign_handle, "handle belongs to another rank");
  if (deterministic()) yield(origin);
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  auto& pend = ranks_[origin].pending;
  for (auto it = pend.begin(); it != pend.end(); ++it) {
    if (it->id == h.id) {
      retire(origin, *it);
      pend.erase(it);
      return;
    }
  }
  // Already retired: completion is idempotent.
}

bool Engine::test(RankId origin, const OpHandle& h) {
  if (h.origin != origin)
    raise(errc::foreign_handle, "handle belongs to another rank");
  if (deterministic()) yield(origin);
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  auto& pend = ranks_[origin].pending;
  for (auto it = pend.begin(); it != pend.end(); ++it) {
    if (it->id == h.id) {
      if (!it->applied) return false;
      charge_completion(origin, *it);
      pend.erase(it);
      return true;
    }
  }
  return true;
}

void Engine::gsync(RankId origin, std::optional<RankId> target) {
  if (deterministic()) yield(origin);
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  auto& pend = ranks_[origin].pending;
  for (auto it = pend.begin(); it != pend.end();) {
    if (!target || it->target == *target) {
      retire(origin, *it);
      it = pend.erase(it);
    } else {
      ++it;
    }
  }
}

bool Engine::op_complete(RankId origin, const OpHandle& h) const {
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  const auto& pend = ranks_[origin].pending;
  for (const auto& op : pend)
    if (op.id == h.id) return false;
  return true;
}

std::uint64_t Engine::load_local_u64(RankId r, const RemoteDescriptor& d,
                                     std::uint64_t offset) {
  if (d.owner != r) raise(errc::invalid_argument, "load_local is owner-only");
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  check_bounds(d, offset, 8, true);
  auto& reg = region_by_key(r, d.key, errc::stale_descriptor);
  return *word_ptr(reg, offset);
}

void Engine::store_local_u64(RankId r, const RemoteDescriptor& d,
                             std::uint64_t offset, std::uint64_t value) {
  if (d.owner != r) raise(errc::invalid_argument, "store_local is owner-only");
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  check_bounds(d, offset, 8, true);
  auto& reg = region_by_key(r, d.key, errc::stale_descriptor);
  *word_ptr(reg, offset) = value;
  progress_event();
}

void Engine::record(CompletionRecord rec) {
  rec.seq = ++log_seq_;
  log_.push_back(std::move(rec));
}

OpCounters Engine::counters_snapshot() const {
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  OpCounters out;
  out.per_rank.reserve(ranks_.size());
  for (const auto& st : ranks_) out.per_rank.push_back(st.ctr);
  return out;
}

double Engine::now(RankId r) const {
  if (deterministic()) return ranks_[r].clock;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       wall_start_)
      .count();
}

std::mt19937_64& Engine::body_rng(RankId r) { return ranks_[r].body_rng; }

void Engine::collective_entry(std::uint64_t ctx_id, std::uint64_t seq,
                              std::uint64_t kind_hash) {
  if (!deterministic()) return;
  auto& calls = collective_debug_[ctx_id];
  auto [it, inserted] = calls.emplace(seq, kind_hash);
  if (!inserted && it->second != kind_hash)
    raise(errc::protocol_error, "mismatched collective call sequence");
  // Trim history nobody can still be behind on.
  while (calls.size() > 64) calls.erase(calls.begin());
}

void Engine::collective_forget(std::uint64_t ctx_id) {
  collective_debug_.erase(ctx_id);
}

std::uint64_t Engine::ctx_nonce(RankId r, std::uint64_t salt) {
  std::unique_lock<std::recursive_mutex> lk(mu_, std::defer_lock);
  if (!deterministic()) lk.lock();
  return ranks_[r].nonces[salt]++;
}

// ---------------------------------------------------------------------------
// Deterministic scheduler
// ---------------------------------------------------------------------------

void Engine::ensure_current(RankId r) const {
  assert(!deterministic() || (in_fiber_ && current_ == r));
  (void)r;
}

void Engine::progress_event() { ++progress_seq_; }

bool Engine::any_unapplied() const { return num_unapplied_ > 0; }

void Engine::maybe_spontaneous_progress() {
  if (num_unapplied_ == 0 || !strategy_->network_progress()) return;
  std::vector<RankId> with_pending;
  for (RankId r = 0; r < cfg_.p; ++r) {
    for (const auto& op : ranks_[r].pending) {
      if (!op.applied) {
        with_pending.push_back(r);
        break;
      }
    }
  }
  if (with_pending.empty()) return;
  RankId r = with_pending[strategy_->pick(with_pending.size())];
  for (auto& op : ranks_[r].pending) {
    if (!op.applied) {
      const LocalRegion* reg = find_region(op.target, op.key);
      if (reg) apply(op);  // otherwise leave it for the retiring call to flag
      break;
    }
  }
}

void Engine::yield(RankId r) {
  if (!deterministic()) {
    std::this_thread::yield();
    return;
  }
  ensure_current(r);
  yield_to_scheduler();
  if (aborting_) throw AbortFiber{};
}

void Engine::poll(RankId r, const std::function<bool()>& probe) {
  if (!deterministic()) {
    std::uint32_t attempts = 0;
    while (!probe()) {
      ++attempts;
      std::this_thread::yield();
      if (attempts > 16) {
        auto us = std::min<std::uint64_t>(
            1000, 1ull << std::min<std::uint32_t>(attempts - 16, 10));
        std::this_thread::sleep_for(std::chrono::microseconds(us));
      }
    }
    return;
  }
  ensure_current(r);
  std::uint32_t attempts = 0;
  while (!probe()) {
    ++attempts;
    if (strategy_->exploring()) {
      if (attempts > cfg_.explore_probe_cap) throw TruncatedPath{};
      auto& st = ranks_[r];
      st.status = FiberStatus::Waiting;
      st.woken_at = progress_seq_;
      yield_to_scheduler();
      if (aborting_) throw AbortFiber{};
      continue;
    }
    // Exponential backoff: 1,2,4,... capped, with seeded jitter; once the
    // cap is reached, block until any fabric progress.
    std::uint32_t shift = std::min<std::uint32_t>(attempts - 1, 20);
    std::uint64_t n = std::min<std::uint64_t>(1ull << shift, cfg_.backoff_cap);
    if ((1ull << shift) > cfg_.backoff_cap) {
      auto& st = ranks_[r];
      st.status = FiberStatus::Waiting;
      st.woken_at = progress_seq_;
      yield_to_scheduler();
      if (aborting_) throw AbortFiber{};
      continue;
    }
    if (n > 1) n += ranks_[r].jitter_rng() % std::max<std::uint64_t>(n / 4, 1);
    for (std::uint64_t i = 0; i < n; ++i) {
      yield_to_scheduler();
      if (aborting_) throw AbortFiber{};
    }
  }
}

void Engine::switch_to(RankId r) {
  auto& st = ranks_[r];
  current_ = r;
  in_fiber_ = true;
  st.fiber = std::move(st.fiber).resume();
  in_fiber_ = false;
}

void Engine::yield_to_scheduler() {
  auto& st = ranks_[current_];
  st.sched_cont = std::move(st.sched_cont).resume();
}

void Engine::abort_all() {
  aborting_ = true;
  bool live = true;
  while (live) {
    live = false;
    for (RankId r = 0; r < cfg_.p; ++r) {
      auto& st = ranks_[r];
      if (st.status == FiberStatus::Runnable ||
          st.status == FiberStatus::Waiting) {
        live = true;
        switch_to(r);
      }
    }
  }
}

Engine::RunStatus Engine::scheduler_loop(
    Fabric& fabric, std::vector<Rank>& ranks,
    const std::function<void(Rank&)>& body) {
  (void)fabric;
  namespace bctx = boost::context;
  for (RankId r = 0; r < cfg_.p; ++r) {
    auto& st = ranks_[r];
    st.failure = nullptr;
    st.fiber = bctx::fiber(
        std::allocator_arg, bctx::fixedsize_stack(cfg_.fiber_stack_bytes),
        [this, &ranks, &body, r](bctx::fiber&& sched) {
          auto& me = ranks_[r];
          me.sched_cont = std::move(sched);
          try {
            body(ranks[r]);
          } catch (const bctx::detail::forced_unwind&) {
            me.status = FiberStatus::Done;
            throw;
          } catch (const AbortFiber&) {
          } catch (const TruncatedPath&) {
            truncated_ = true;
          } catch (...) {
            me.failure = std::current_exception();
          }
          me.status = FiberStatus::Done;
          return std::move(me.sched_cont);
        });
    st.status = FiberStatus::Runnable;
  }
  aborting_ = false;
  truncated_ = false;

  std::vector<RankId> runnable;
  bool deadlock = false;
  while (true) {
    // Wake ranks blocked on progress.
    for (auto& st : ranks_) {
      if (st.status == FiberStatus::Waiting && st.woken_at < progress_seq_)
        st.status = FiberStatus::Runnable;
    }
    runnable.clear();
    bool all_done = true;
    for (RankId r = 0; r < cfg_.p; ++r) {
      if (ranks_[r].status == FiberStatus::Runnable) runnable.push_back(r);
      if (ranks_[r].status != FiberStatus::Done) all_done = false;
    }
    if (all_done) break;
    if (runnable.empty()) {
      // Every live rank is blocked and nothing in flight can wake it.
      deadlock = true;
      break;
    }
    maybe_spontaneous_progress();
    RankId next = runnable[strategy_->pick(runnable.size())];
    switch_to(next);
    if (truncated_) break;
  }

  if (deadlock || truncated_) abort_all();

  for (auto& st : ranks_) {
    if (st.failure) std::rethrow_exception(st.failure);
  }
  if (truncated_) return RunStatus::Truncated;
  if (deadlock)
    raise(errc::deadlock, "all ranks blocked with no progress possible");
  return RunStatus::Completed;
}

Engine::RunStatus Engine::run(Fabric& fabric, std::vector<Rank>& ranks,
                              const std::function<void(Rank&)>& body) {
  if (deterministic()) {
    return scheduler_loop(fabric, ranks, body);
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> failures(cfg_.p);
  threads.reserve(cfg_.p);
  for (RankId r = 0; r < cfg_.p; ++r) {
    threads.emplace_back([&, r] {
      try {
        body(ranks[r]);
      } catch (...) {
        failures[r] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
  return RunStatus::Completed;
}

}  // namespace windlass::detail
