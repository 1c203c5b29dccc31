#include "windlass/sync.hpp"

#include <algorithm>
#include <atomic>
#include <limits>

namespace windlass {

namespace {

void notify(Window& win, LockEvent::What what, std::uint32_t target) {
  const auto& fn = win.rank().fabric().lock_observer();
  if (fn)
    fn(LockEvent{what, win.rank().id(),
                 target == UINT32_MAX ? win.rank().id()
                                      : win.world_rank(target),
                 win.id()});
}

std::uint64_t blocking_get_u64(Rank& r, const RemoteDescriptor& d,
                               std::uint64_t offset) {
  std::uint64_t v = 0;
  r.wait(r.get(d, offset, {reinterpret_cast<std::byte*>(&v), 8}));
  return v;
}

}  // namespace

void win_fence(Window& win) {
  auto& ep = win.epoch();
  if (ep.access_open || ep.exposure_open || ep.passive_open())
    raise(errc::epoch_conflict, "fence with another epoch open");
  win.rank().gsync();
  win.ctx().barrier();
  ep.fence_active = true;
}

// ---------------------------------------------------------------------------
// General active target
// ---------------------------------------------------------------------------

void win_post(Window& win, const std::vector<std::uint32_t>& group) {
  auto& ep = win.epoch();
  if (ep.exposure_open) raise(errc::epoch_conflict, "exposure epoch open");
  if (group.size() > win.config().k_max)
    raise(errc::invalid_argument, "group exceeds configured neighbor bound");
  Rank& r = win.rank();
  const std::uint64_t cap = win.matching_capacity();
  for (std::uint32_t j : group) {
    auto pscw = win.pscw_of(j);
    std::uint64_t slot =
        static_cast<std::uint64_t>(r.fadd64(pscw, Window::kTailWord, 1));
    auto& hint = win.post_head_hints()[j];
    if (slot >= hint + cap) {
      hint = blocking_get_u64(r, pscw, Window::kHeadWord);
      if (slot >= hint + cap)
        raise(errc::matching_list_overflow,
              "matching list full at the target");
    }
    r.put_u64(pscw, Window::kSlotsBase + (slot % cap) * 8,
              win.my_index() + 1);
    r.gsync_to(pscw.owner);
  }
  ep.exposure_open = true;
  ep.exposure_group = group;
}

void win_start(Window& win, const std::vector<std::uint32_t>& group) {
  auto& ep = win.epoch();
  if (ep.access_open) raise(errc::epoch_conflict, "access epoch open");
  if (group.size() > win.config().k_max)
    raise(errc::invalid_argument, "group exceeds configured neighbor bound");
  Rank& r = win.rank();
  auto mine = win.pscw_of(win.my_index());
  const std::uint64_t cap = win.matching_capacity();
  auto& consumed = win.consumed_slots();

  // Purely local matching: scan announcements between head and tail, consume
  // the oldest one from each required peer, then advance head over the
  // consumed prefix.
  for (std::uint32_t i : group) {
    r.poll([&] {
      std::uint64_t head = r.load_local_u64(mine, Window::kHeadWord);
      std::uint64_t tail = r.load_local_u64(mine, Window::kTailWord);
      for (std::uint64_t h = head; h < tail; ++h) {
        if (consumed.count(h)) continue;
        std::uint64_t off = Window::kSlotsBase + (h % cap) * 8;
        if (r.load_local_u64(mine, off) == i + 1) {
          r.store_local_u64(mine, off, 0);
          consumed.insert(h);
          while (consumed.count(head)) {
            consumed.erase(head);
            ++head;
          }
          r.store_local_u64(mine, Window::kHeadWord, head);
          return true;
        }
      }
      return false;
    });
  }
  ep.access_open = true;
  ep.access_group = group;
}

void win_complete(Window& win) {
  auto& ep = win.epoch();
  if (!ep.access_open) raise(errc::epoch_conflict, "no access epoch open");
  Rank& r = win.rank();
  for (std::uint32_t j : ep.access_group) {
    r.gsync_to(win.world_rank(j));
    r.fadd64(win.pscw_of(j), Window::kCompletionWord, 1);
  }
  ep.access_open = false;
  ep.access_group.clear();
}

void win_wait(Window& win) {
  auto& ep = win.epoch();
  if (!ep.exposure_open) raise(errc::epoch_conflict, "no exposure epoch open");
  Rank& r = win.rank();
  auto mine = win.pscw_of(win.my_index());
  const std::uint64_t want = ep.exposure_group.size();
  r.poll([&] {
    return r.load_local_u64(mine, Window::kCompletionWord) >= want;
  });
  r.store_local_u64(mine, Window::kCompletionWord,
                    r.load_local_u64(mine, Window::kCompletionWord) - want);
  ep.exposure_open = false;
  ep.exposure_group.clear();
}

bool win_test(Window& win) {
  auto& ep = win.epoch();
  if (!ep.exposure_open) raise(errc::epoch_conflict, "no exposure epoch open");
  Rank& r = win.rank();
  auto mine = win.pscw_of(win.my_index());
  const std::uint64_t want = ep.exposure_group.size();
  if (r.load_local_u64(mine, Window::kCompletionWord) < want) return false;
  r.store_local_u64(mine, Window::kCompletionWord,
                    r.load_local_u64(mine, Window::kCompletionWord) - want);
  ep.exposure_open = false;
  ep.exposure_group.clear();
  return true;
}

// ---------------------------------------------------------------------------
// Passive target
// ---------------------------------------------------------------------------

void win_lock(Window& win, std::uint32_t target, LockType type) {
  auto& ep = win.epoch();
  if (ep.access_open || ep.exposure_open)
    raise(errc::epoch_conflict, "active target epoch open");
  if (ep.lock_all_active) raise(errc::epoch_conflict, "lock_all epoch open");
  if (ep.held_locks.count(target))
    raise(errc::already_locked, "target already locked by this rank");
  Rank& r = win.rank();
  auto local = win.local_lock_of(target);

  if (type == LockType::Shared) {
    std::uint64_t prev =
        static_cast<std::uint64_t>(r.fadd64(local, 0, 1));
    if (prev & kWriterBit) {
      // Registration stays in place; wait for the writer to leave.
      r.poll([&] {
        return (blocking_get_u64(r, local, 0) & kWriterBit) == 0;
      });
    }
  } else {
    auto global = win.global_lock();
    r.poll([&] {
      if (ep.exclusive_held == 0) {
        std::uint64_t prev = static_cast<std::uint64_t>(r.fadd64(global, 0, 1));
        if (prev >> 32 != 0) {  // lock-all holders present: back off
          r.fadd64(global, 0, -1);
          return false;
        }
      }
      if (r.cas64(local, 0, 0, kWriterBit) == 0) return true;
      if (ep.exclusive_held == 0) r.fadd64(global, 0, -1);
      return false;
    });
    ++ep.exclusive_held;
  }
  ep.held_locks.emplace(target, type);
  notify(win,
         type == LockType::Shared ? LockEvent::What::AcquireShared
                                  : LockEvent::What::AcquireExclusive,
         target);
}

void win_unlock(Window& win, std::uint32_t target) {
  auto& ep = win.epoch();
  auto it = ep.held_locks.find(target);
  if (it == ep.held_locks.end())
    raise(errc::not_locked, "no lock held on this target");
  Rank& r = win.rank();
  auto local = win.local_lock_of(target);
  LockType type = it->second;

  r.gsync_to(win.world_rank(target));
  notify(win,
         type == LockType::Shared ? LockEvent::What::ReleaseShared
                                  : LockEvent::What::ReleaseExclusive,
         target);
  if (type == LockType::Shared) {
    r.fadd64(local, 0, -1);
  } else {
    r.fadd64(local, 0, std::numeric_limits<std::int64_t>::min());  // clear bit
    --ep.exclusive_held;
    if (ep.exclusive_held == 0) r.fadd64(win.global_lock(), 0, -1);
  }
  ep.held_locks.erase(it);
}

void win_lock_all(Window& win) {
  auto& ep = win.epoch();
  if (ep.any_open()) raise(errc::epoch_conflict, "another epoch is open");
  Rank& r = win.rank();
  auto global = win.global_lock();
  r.poll([&] {
    std::uint64_t prev = static_cast<std::uint64_t>(
        r.fadd64(global, 0, static_cast<std::int64_t>(kLockAllUnit)));
    if ((prev & kExclusiveMask) != 0) {
      r.fadd64(global, 0, -static_cast<std::int64_t>(kLockAllUnit));
      return false;
    }
    return true;
  });
  ep.lock_all_active = true;
  notify(win, LockEvent::What::AcquireAll, UINT32_MAX);
}

void win_unlock_all(Window& win) {
  auto& ep = win.epoch();
  if (!ep.lock_all_active) raise(errc::not_locked, "no lock_all epoch open");
  Rank& r = win.rank();
  r.gsync();
  notify(win, LockEvent::What::ReleaseAll, UINT32_MAX);
  r.fadd64(win.global_lock(), 0, -static_cast<std::int64_t>(kLockAllUnit));
  ep.lock_all_active = false;
}

// ---------------------------------------------------------------------------
// Flush family
// ---------------------------------------------------------------------------

namespace {
void require_passive(Window& win, std::uint32_t target) {
  auto& ep = win.epoch();
  if (ep.lock_all_active) return;
  if (ep.held_locks.count(target)) return;
  raise(errc::no_passive_epoch, "no passive epoch covers this target");
}
}  // namespace

void win_flush(Window& win, std::uint32_t target) {
  require_passive(win, target);
  win.rank().gsync_to(win.world_rank(target));
}

void win_flush_local(Window& win, std::uint32_t target) {
  // Shares the flush implementation: transfers are locally reusable once
  // captured, so remote completion subsumes local completion.
  win_flush(win, target);
}

void win_flush_all(Window& win) {
  if (!win.epoch().passive_open())
    raise(errc::no_passive_epoch, "no passive epoch open");
  win.rank().gsync();
}

void win_flush_local_all(Window& win) { win_flush_all(win); }

void win_sync(Window& win) {
  (void)win;
  std::atomic_thread_fence(std::memory_order_seq_cst);
}

void require_epoch(Window& win, std::uint32_t target) {
  auto& ep = win.epoch();
  if (ep.fence_active || ep.lock_all_active) return;
  if (ep.access_open &&
      std::find(ep.access_group.begin(), ep.access_group.end(), target) !=
          ep.access_group.end())
    return;
  if (ep.held_locks.count(target)) return;
  raise(errc::epoch_violation, "no epoch permits RMA to this target");
}

}  // namespace windlass
