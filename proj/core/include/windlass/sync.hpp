#pragma once

#include "windlass/window.hpp"

namespace windlass {

// Active target synchronization ---------------------------------------------

/// Collective: completes all outstanding operations of every member and
/// separates epochs. No general active target or passive epoch may be open.
void win_fence(Window& win);

/// Opens an exposure epoch for the given access group (group indexes).
/// Nonblocking: announces this rank in each member's matching list.
void win_post(Window& win, const std::vector<std::uint32_t>& group);

/// Opens an access epoch; blocks until every member of the group has posted
/// an epoch naming this rank. Issues no remote operations.
void win_start(Window& win, const std::vector<std::uint32_t>& group);

/// Closes the access epoch: completes outstanding operations to the group,
/// then bumps each member's completion counter.
void win_complete(Window& win);

/// Closes the exposure epoch; blocks until every access-group member
/// completed. Issues no remote operations.
void win_wait(Window& win);

/// Nonblocking win_wait: true (and closes the epoch) if all completions
/// arrived.
bool win_test(Window& win);

// Passive target synchronization --------------------------------------------

void win_lock(Window& win, std::uint32_t target, LockType type);
void win_unlock(Window& win, std::uint32_t target);
void win_lock_all(Window& win);
void win_unlock_all(Window& win);

void win_flush(Window& win, std::uint32_t target);
void win_flush_local(Window& win, std::uint32_t target);
void win_flush_all(Window& win);
void win_flush_local_all(Window& win);

/// Memory ordering point for direct (shared-window) accesses. No remote
/// operations.
void win_sync(Window& win);

/// Raises epoch_violation unless an epoch covering RMA to `target` is open.
void require_epoch(Window& win, std::uint32_t target);

// Lock word layouts: the local word keeps a writer flag in the top bit and a
// shared-holder count below it; the global word at group index 0 splits into
// a lock-all count (high half) and an exclusive-holder count (low half).
inline constexpr std::uint64_t kWriterBit = 1ull << 63;
inline constexpr std::uint64_t kLockAllUnit = 1ull << 32;
inline constexpr std::uint64_t kExclusiveMask = 0xffffffffull;

}  // namespace windlass
