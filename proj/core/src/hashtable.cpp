#include "windlass/hashtable.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <unordered_set>

#include "engine.hpp"
#include "windlass/sync.hpp"

namespace windlass {

namespace {
std::uint64_t mix(std::uint64_t x) {
  std::uint64_t s = x;
  return detail::splitmix64(s);
}
}  // namespace

DistributedHashtable::DistributedHashtable(Rank& rank,
                                           std::vector<RankId> group,
                                           HashtableConfig cfg)
    : cfg_(cfg),
      win_(Window::allocate(
          rank, std::move(group),
          (2 * cfg.table_slots + 2 * cfg.heap_entries + 1 + cfg.table_slots) *
              8,
          8)) {
  seed1_ = mix(rank.fabric().config().seed ^ 0x7ab1e5eedull);
  seed2_ = mix(rank.fabric().config().seed ^ 0x510715eedull);
  heap_base_ = 2 * cfg_.table_slots;
  next_free_ = heap_base_ + 2 * cfg_.heap_entries;
  hints_base_ = next_free_ + 1;
  words_ = hints_base_ + cfg_.table_slots;

  // Slots and links start out empty, allocation counter at zero.
  auto words = reinterpret_cast<std::uint64_t*>(win_.local_data().data());
  std::fill(words, words + words_, kEmpty);
  words[next_free_] = 0;
  win_.ctx().barrier();
}

std::uint64_t DistributedHashtable::owner_of(std::uint64_t key) const {
  return mix(key ^ seed1_) % win_.group_size();
}

std::uint64_t DistributedHashtable::slot_of(std::uint64_t key) const {
  return mix(key ^ seed2_) % cfg_.table_slots;
}

void DistributedHashtable::epoch_begin() { win_lock_all(win_); }

void DistributedHashtable::epoch_end() {
  win_flush_all(win_);
  win_unlock_all(win_);
}

void DistributedHashtable::insert(std::uint64_t key, std::uint64_t value) {
  if (value == kEmpty)
    raise(errc::invalid_argument, "the all-ones value is reserved");
  auto owner = static_cast<std::uint32_t>(owner_of(key));
  std::uint64_t slot = slot_of(key);

  // Fast path: claim the empty table slot.
  std::uint64_t prev = compare_and_swap(win_, owner, kEmpty, value, 2 * slot);
  if (prev == kEmpty) return;

  // Collision: take a fresh overflow entry at the owner.
  std::int64_t idx = fetch_and_op(win_, owner, 1, next_free_, AccumulateOp::Sum);
  if (static_cast<std::uint64_t>(idx) >= cfg_.heap_entries)
    raise(errc::heap_exhausted, "overflow heap full at the owner");
  std::uint64_t entry = heap_base_ + 2 * static_cast<std::uint64_t>(idx);
  std::uint64_t init[2] = {value, kNil};
  rma_put(win_, owner, {reinterpret_cast<std::byte*>(init), 16},
          Datatype::contiguous(2, Datatype::base(BaseType::Int64)), 1, entry,
          Datatype::contiguous(2, Datatype::base(BaseType::Int64)));
  win_flush(win_, owner);  // entry is fully visible before it gets linked

  // Link it: start at the last-entry hint when present, chase next pointers,
  // and on a lost race re-walk from the table slot.
  std::uint64_t hint =
      static_cast<std::uint64_t>(
          fetch_and_op(win_, owner, 0, hints_base_ + slot, AccumulateOp::NoOp));
  std::uint64_t cur = hint != kNil ? hint : 2 * slot;
  while (true) {
    std::uint64_t next = static_cast<std::uint64_t>(
        fetch_and_op(win_, owner, 0, cur + 1, AccumulateOp::NoOp));
    if (next == kNil) {
      std::uint64_t raced = compare_and_swap(win_, owner, kNil, entry, cur + 1);
      if (raced == kNil) break;
      cur = 2 * slot;
      continue;
    }
    cur = next;
  }
  // Second CAS refreshes the hint; losing it is harmless.
  compare_and_swap(win_, owner, hint, entry, hints_base_ + slot);
}

void DistributedHashtable::walk_chain(std::span<const std::uint64_t> words,
                                      std::uint64_t slot,
                                      std::vector<std::uint64_t>* values,
                                      std::uint64_t* count) const {
  if (words[2 * slot] == kEmpty) return;
  if (values) values->push_back(words[2 * slot]);
  ++*count;
  std::unordered_set<std::uint64_t> visited;
  std::uint64_t next = words[2 * slot + 1];
  std::uint64_t steps = 0;
  while (next != kNil) {
    bool in_heap = next >= heap_base_ && next < next_free_ &&
                   (next - heap_base_) % 2 == 0;
    if (!in_heap || !visited.insert(next).second ||
        ++steps > cfg_.heap_entries)
      raise(errc::corrupt_chain, "invalid overflow link");
    if (values) values->push_back(words[next]);
    ++*count;
    next = words[next + 1];
  }
}

DistributedHashtable::VerifyReport DistributedHashtable::verify() {
  win_.ctx().barrier();
  auto span = win_.local_data();
  std::span<const std::uint64_t> words{
      reinterpret_cast<const std::uint64_t*>(span.data()), words_};
  VerifyReport rep;
  for (std::uint64_t s = 0; s < cfg_.table_slots; ++s)
    walk_chain(words, s, nullptr, &rep.local_count);
  rep.global_count = static_cast<std::uint64_t>(win_.ctx().allreduce(
      static_cast<std::int64_t>(rep.local_count), ReduceOp::Sum));
  return rep;
}

std::vector<std::uint64_t> DistributedHashtable::local_values() {
  auto span = win_.local_data();
  std::span<const std::uint64_t> words{
      reinterpret_cast<const std::uint64_t*>(span.data()), words_};
  std::vector<std::uint64_t> out;
  std::uint64_t count = 0;
  for (std::uint64_t s = 0; s < cfg_.table_slots; ++s)
    walk_chain(words, s, &out, &count);
  return out;
}

void DistributedHashtable::free() { win_.free(); }

HashtableRunResult run_hashtable(FabricConfig cfg,
                                 std::uint64_t inserts_per_rank,
                                 HashtableConfig hcfg) {
  HashtableRunResult out;
  std::vector<std::uint64_t> inserted(cfg.p, 0), exhausted(cfg.p, 0);
  bool count_ok = false;
  std::uint64_t global_count = 0;
  double max_t = 0.0;

  Fabric fabric(cfg);
  fabric.run([&](Rank& r) {
    std::vector<RankId> group(r.world_size());
    std::iota(group.begin(), group.end(), 0);
    DistributedHashtable ht(r, group, hcfg);
    auto& rng = r.rng();

    double t0 = r.now();
    ht.epoch_begin();
    for (std::uint64_t i = 0; i < inserts_per_rank; ++i) {
      std::uint64_t key = rng();
      std::uint64_t value = rng() >> 1;  // keep the reserved pattern out
      try {
        ht.insert(key, value);
        ++inserted[r.id()];
      } catch (const Error& e) {
        if (e.code() != errc::heap_exhausted) throw;
        ++exhausted[r.id()];
      }
    }
    ht.epoch_end();
    max_t = std::max(max_t, r.now() - t0);

    auto rep = ht.verify();
    if (r.id() == 0) {
      global_count = rep.global_count;
      count_ok = true;
    }
    ht.free();
  });

  out.attempted = inserts_per_rank * cfg.p;
  out.inserted = std::accumulate(inserted.begin(), inserted.end(), 0ull);
  out.exhausted = std::accumulate(exhausted.begin(), exhausted.end(), 0ull);
  out.global_count = global_count;
  out.virtual_seconds = max_t;
  out.remote_ops = fabric.counters().remote_total();
  out.verified = count_ok && out.global_count == out.inserted &&
                 out.inserted + out.exhausted == out.attempted;
  return out;
}

}  // namespace windlass
