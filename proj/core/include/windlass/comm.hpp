#pragma once

#include "windlass/datatype.hpp"
#include "windlass/sync.hpp"
#include "windlass/window.hpp"

namespace windlass {

enum class AccumulateOp { Sum, Min, Max, Replace, NoOp };

/// Nonblocking typed put/get: one fabric transfer per decomposition block,
/// a single transfer on the contiguous fast path. Completion comes from the
/// window's synchronization calls (flush, fence, complete, unlock).
void rma_put(Window& win, std::uint32_t target,
             std::span<const std::byte> origin, const Datatype& origin_dt,
             std::uint64_t count, std::uint64_t target_disp,
             const Datatype& target_dt);
void rma_get(Window& win, std::uint32_t target, std::span<std::byte> origin,
             const Datatype& origin_dt, std::uint64_t count,
             std::uint64_t target_disp, const Datatype& target_dt);

/// Element-wise atomic update of 8-byte elements. Integer SUM and REPLACE
/// ride the fabric atomics up to the configured element threshold; other
/// ops serialize through the window's per-target accumulate lock (lock,
/// get, apply locally, put back, flush, release).
void accumulate(Window& win, std::uint32_t target,
                std::span<const std::byte> buf, const Datatype& dt,
                std::uint64_t count, std::uint64_t target_disp,
                AccumulateOp op);

/// Atomic read-modify-write returning the pre-operation data in `result`.
/// NoOp reads without modifying.
void get_accumulate(Window& win, std::uint32_t target,
                    std::span<const std::byte> operand,
                    std::span<std::byte> result, const Datatype& dt,
                    std::uint64_t count, std::uint64_t target_disp,
                    AccumulateOp op);

std::int64_t fetch_and_op(Window& win, std::uint32_t target,
                          std::int64_t value, std::uint64_t target_disp,
                          AccumulateOp op);
std::uint64_t compare_and_swap(Window& win, std::uint32_t target,
                               std::uint64_t compare, std::uint64_t swap,
                               std::uint64_t target_disp);

/// Request-based variants: same semantics, per-operation completion.
class RmaRequest {
 public:
  bool pending() const { return !handles_.empty(); }

 private:
  friend RmaRequest rput(Window&, std::uint32_t, std::span<const std::byte>,
                         const Datatype&, std::uint64_t, std::uint64_t,
                         const Datatype&);
  friend RmaRequest rget(Window&, std::uint32_t, std::span<std::byte>,
                         const Datatype&, std::uint64_t, std::uint64_t,
                         const Datatype&);
  friend RmaRequest raccumulate(Window&, std::uint32_t,
                                std::span<const std::byte>, const Datatype&,
                                std::uint64_t, std::uint64_t, AccumulateOp);
  friend RmaRequest rget_accumulate(Window&, std::uint32_t,
                                    std::span<const std::byte>,
                                    std::span<std::byte>, const Datatype&,
                                    std::uint64_t, std::uint64_t,
                                    AccumulateOp);
  friend void request_wait(Window&, RmaRequest&);
  friend bool request_test(Window&, RmaRequest&);
  std::vector<OpHandle> handles_;
};

RmaRequest rput(Window& win, std::uint32_t target,
                std::span<const std::byte> origin, const Datatype& origin_dt,
                std::uint64_t count, std::uint64_t target_disp,
                const Datatype& target_dt);
RmaRequest rget(Window& win, std::uint32_t target, std::span<std::byte> origin,
                const Datatype& origin_dt, std::uint64_t count,
                std::uint64_t target_disp, const Datatype& target_dt);
RmaRequest raccumulate(Window& win, std::uint32_t target,
                       std::span<const std::byte> buf, const Datatype& dt,
                       std::uint64_t count, std::uint64_t target_disp,
                       AccumulateOp op);
RmaRequest rget_accumulate(Window& win, std::uint32_t target,
                           std::span<const std::byte> operand,
                           std::span<std::byte> result, const Datatype& dt,
                           std::uint64_t count, std::uint64_t target_disp,
                           AccumulateOp op);
void request_wait(Window& win, RmaRequest& req);
bool request_test(Window& win, RmaRequest& req);

}  // namespace windlass
