#include "windlass/comm.hpp"

#include <algorithm>
#include <cstring>

namespace windlass {

namespace {

std::uint64_t footprint(const Datatype& dt, std::uint64_t count) {
  return count * dt.extent();
}

struct Placement {
  RemoteDescriptor desc;
  std::uint64_t base;
};

Placement place(Window& win, std::uint32_t target, std::uint64_t target_disp,
                const Datatype& target_dt, std::uint64_t total_bytes) {
  std::uint64_t tcount =
      target_dt.size() ? total_bytes / target_dt.size() : 0;
  auto res = win.locate(target, target_disp, footprint(target_dt, tcount));
  return {res.desc, res.offset};
}

void check_acc_type(const Datatype& dt, AccumulateOp op) {
  if (dt.leaf() == BaseType::Byte)
    raise(errc::unsupported_type, "accumulate needs 8-byte element types");
  if (op == AccumulateOp::NoOp)
    raise(errc::invalid_argument, "NO_OP is only valid for fetching calls");
}

bool accelerated(Window& win, const Datatype& dt, std::uint64_t elems,
                 AccumulateOp op) {
  return dt.leaf() == BaseType::Int64 &&
         (op == AccumulateOp::Sum || op == AccumulateOp::Replace) &&
         elems <= win.config().accumulate_fallback_threshold;
}

std::uint64_t apply_op(AccumulateOp op, BaseType t, std::uint64_t oldw,
                       std::uint64_t arg) {
  if (t == BaseType::Float64) {
    double o, a;
    std::memcpy(&o, &oldw, 8);
    std::memcpy(&a, &arg, 8);
    double res = o;
    switch (op) {
      case AccumulateOp::Sum: res = o + a; break;
      case AccumulateOp::Min: res = std::min(o, a); break;
      case AccumulateOp::Max: res = std::max(o, a); break;
      case AccumulateOp::Replace: res = a; break;
      case AccumulateOp::NoOp: break;
    }
    std::uint64_t out;
    std::memcpy(&out, &res, 8);
    return out;
  }
  auto o = static_cast<std::int64_t>(oldw);
  auto a = static_cast<std::int64_t>(arg);
  std::int64_t res = o;
  switch (op) {
    case AccumulateOp::Sum: res = o + a; break;
    case AccumulateOp::Min: res = std::min(o, a); break;
    case AccumulateOp::Max: res = std::max(o, a); break;
    case AccumulateOp::Replace: res = a; break;
    case AccumulateOp::NoOp: break;
  }
  return static_cast<std::uint64_t>(res);
}

// Serializes fallback accumulates per target through a dedicated registered
// word: CAS 0->1 to acquire, write-back, flush, put 0 to release.
class AccumulateGuard {
 public:
  AccumulateGuard(Window& win, std::uint32_t target)
      : rank_(win.rank()), lock_(win.acc_lock_of(target)) {
    rank_.poll([&] { return rank_.cas64(lock_, 0, 0, 1) == 0; });
  }
  ~AccumulateGuard() {
    try {
      rank_.put_u64(lock_, 0, 0);
      rank_.gsync_to(lock_.owner);
    } catch (...) {
      // Unwinding during a run abort: the fabric is being torn down.
    }
  }

 private:
  Rank& rank_;
  RemoteDescriptor lock_;
};

std::vector<OpHandle> issue_transfer(Window& win, std::uint32_t target,
                                     std::span<const std::byte> out_buf,
                                     std::span<std::byte> in_buf, bool is_put,
                                     const Datatype& origin_dt,
                                     std::uint64_t count,
                                     std::uint64_t target_disp,
                                     const Datatype& target_dt) {
  require_epoch(win, target);
  std::uint64_t total = origin_dt.size() * count;
  Rank& r = win.rank();
  auto pl = place(win, target, target_disp, target_dt, total);
  std::vector<OpHandle> handles;

  if (origin_dt.dense() && target_dt.dense()) {
    if (origin_dt.leaf() != target_dt.leaf())
      raise(errc::type_mismatch, "origin and target base types differ");
    if (is_put)
      handles.push_back(r.put(pl.desc, pl.base, out_buf.first(total)));
    else
      handles.push_back(r.get(pl.desc, pl.base, in_buf.first(total)));
    return handles;
  }

  auto blocks = decompose(origin_dt, count, target_dt);
  handles.reserve(blocks.size());
  for (const auto& b : blocks) {
    if (is_put)
      handles.push_back(r.put(pl.desc, pl.base + b.target_offset,
                              out_buf.subspan(b.origin_offset, b.length)));
    else
      handles.push_back(r.get(pl.desc, pl.base + b.target_offset,
                              in_buf.subspan(b.origin_offset, b.length)));
  }
  return handles;
}

// Element streams for the atomic paths: (origin byte offset, target byte
// offset) per 8-byte element, derived from the dual decomposition.
std::vector<std::pair<std::uint64_t, std::uint64_t>> element_pairs(
    const Datatype& origin_dt, std::uint64_t count, const Datatype& target_dt) {
  auto blocks = decompose(origin_dt, count, target_dt);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  for (const auto& b : blocks) {
    if (b.length % 8 != 0 || b.origin_offset % 8 != 0)
      raise(errc::unsupported_type, "accumulate elements must stay aligned");
    for (std::uint64_t o = 0; o < b.length; o += 8)
      out.emplace_back(b.origin_offset + o, b.target_offset + o);
  }
  return out;
}

}  // namespace

void rma_put(Window& win, std::uint32_t target,
             std::span<const std::byte> origin, const Datatype& origin_dt,
             std::uint64_t count, std::uint64_t target_disp,
             const Datatype& target_dt) {
  issue_transfer(win, target, origin, {}, true, origin_dt, count, target_disp,
                 target_dt);
}

void rma_get(Window& win, std::uint32_t target, std::span<std::byte> origin,
             const Datatype& origin_dt, std::uint64_t count,
             std::uint64_t target_disp, const Datatype& target_dt) {
  issue_transfer(win, target, {}, origin, false, origin_dt, count, target_disp,
                 target_dt);
}

void accumulate(Window& win, std::uint32_t target,
                std::span<const std::byte> buf, const Datatype& dt,
                std::uint64_t count, std::uint64_t target_disp,
                AccumulateOp op) {
  check_acc_type(dt, op);
  require_epoch(win, target);
  Rank& r = win.rank();
  std::uint64_t total = dt.size() * count;
  auto pl = place(win, target, target_disp, dt, total);
  auto elems = element_pairs(dt, count, dt);

  if (accelerated(win, dt, elems.size(), op)) {
    for (auto [oo, to] : elems) {
      std::uint64_t v;
      std::memcpy(&v, buf.data() + oo, 8);
      if (op == AccumulateOp::Sum)
        r.fadd64(pl.desc, pl.base + to, static_cast<std::int64_t>(v));
      else
        r.put_u64(pl.desc, pl.base + to, v);  // atomic 8-byte replace
    }
    return;
  }

  AccumulateGuard guard(win, target);
  std::vector<std::byte> scratch(total);
  auto blocks = decompose(dt, count, dt);
  for (const auto& b : blocks)
    r.wait(r.get(pl.desc, pl.base + b.target_offset,
                 {scratch.data() + b.origin_offset, b.length}));
  for (auto [oo, to] : elems) {
    std::uint64_t oldw, arg;
    std::memcpy(&oldw, scratch.data() + oo, 8);
    std::memcpy(&arg, buf.data() + oo, 8);
    std::uint64_t neww = apply_op(op, dt.leaf(), oldw, arg);
    std::memcpy(scratch.data() + oo, &neww, 8);
  }
  for (const auto& b : blocks)
    r.put(pl.desc, pl.base + b.target_offset,
          {scratch.data() + b.origin_offset, b.length});
  r.gsync_to(pl.desc.owner);
}

void get_accumulate(Window& win, std::uint32_t target,
                    std::span<const std::byte> operand,
                    std::span<std::byte> result, const Datatype& dt,
                    std::uint64_t count, std::uint64_t target_disp,
                    AccumulateOp op) {
  if (dt.leaf() == BaseType::Byte)
    raise(errc::unsupported_type, "accumulate needs 8-byte element types");
  require_epoch(win, target);
  Rank& r = win.rank();
  std::uint64_t total = dt.size() * count;
  auto pl = place(win, target, target_disp, dt, total);
  auto elems = element_pairs(dt, count, dt);

  if (op == AccumulateOp::NoOp) {
    auto blocks = decompose(dt, count, dt);
    for (const auto& b : blocks)
      r.wait(r.get(pl.desc, pl.base + b.target_offset,
                   {result.data() + b.origin_offset, b.length}));
    return;
  }
  if (accelerated(win, dt, elems.size(), op) && op == AccumulateOp::Sum) {
    for (auto [oo, to] : elems) {
      std::uint64_t v;
      std::memcpy(&v, operand.data() + oo, 8);
      std::int64_t old =
          r.fadd64(pl.desc, pl.base + to, static_cast<std::int64_t>(v));
      std::memcpy(result.data() + oo, &old, 8);
    }
    return;
  }

  check_acc_type(dt, op);
  AccumulateGuard guard(win, target);
  auto blocks = decompose(dt, count, dt);
  for (const auto& b : blocks)
    r.wait(r.get(pl.desc, pl.base + b.target_offset,
                 {result.data() + b.origin_offset, b.length}));
  std::vector<std::byte> scratch(total);
  for (auto [oo, to] : elems) {
    std::uint64_t oldw, arg;
    std::memcpy(&oldw, result.data() + oo, 8);
    std::memcpy(&arg, operand.data() + oo, 8);
    std::uint64_t neww = apply_op(op, dt.leaf(), oldw, arg);
    std::memcpy(scratch.data() + oo, &neww, 8);
  }
  for (const auto& b : blocks)
    r.put(pl.desc, pl.base + b.target_offset,
          {scratch.data() + b.origin_offset, b.length});
  r.gsync_to(pl.desc.owner);
}

std::int64_t fetch_and_op(Window& win, std::uint32_t target,
                          std::int64_t value, std::uint64_t target_disp,
                          AccumulateOp op) {
  require_epoch(win, target);
  Rank& r = win.rank();
  auto pl = place(win, target, target_disp, Datatype::base(BaseType::Int64), 8);
  if (op == AccumulateOp::Sum) return r.fadd64(pl.desc, pl.base, value);
  if (op == AccumulateOp::NoOp) return r.fadd64(pl.desc, pl.base, 0);

  AccumulateGuard guard(win, target);
  std::uint64_t oldw = 0;
  r.wait(r.get(pl.desc, pl.base, {reinterpret_cast<std::byte*>(&oldw), 8}));
  std::uint64_t neww = apply_op(op, BaseType::Int64, oldw,
                                static_cast<std::uint64_t>(value));
  r.put_u64(pl.desc, pl.base, neww);
  r.gsync_to(pl.desc.owner);
  return static_cast<std::int64_t>(oldw);
}

std::uint64_t compare_and_swap(Window& win, std::uint32_t target,
                               std::uint64_t compare, std::uint64_t swap,
                               std::uint64_t target_disp) {
  require_epoch(win, target);
  auto pl = place(win, target, target_disp, Datatype::base(BaseType::Int64), 8);
  return win.rank().cas64(pl.desc, pl.base, compare, swap);
}

// ---------------------------------------------------------------------------
// Request-based variants
// ---------------------------------------------------------------------------

RmaRequest rput(Window& win, std::uint32_t target,
                std::span<const std::byte> origin, const Datatype& origin_dt,
                std::uint64_t count, std::uint64_t target_disp,
                const Datatype& target_dt) {
  RmaRequest req;
  req.handles_ = issue_transfer(win, target, origin, {}, true, origin_dt,
                                count, target_disp, target_dt);
  return req;
}

RmaRequest rget(Window& win, std::uint32_t target, std::span<std::byte> origin,
                const Datatype& origin_dt, std::uint64_t count,
                std::uint64_t target_disp, const Datatype& target_dt) {
  RmaRequest req;
  req.handles_ = issue_transfer(win, target, {}, origin, false, origin_dt,
                                count, target_disp, target_dt);
  return req;
}

RmaRequest raccumulate(Window& win, std::uint32_t target,
                       std::span<const std::byte> buf, const Datatype& dt,
                       std::uint64_t count, std::uint64_t target_disp,
                       AccumulateOp op) {
  accumulate(win, target, buf, dt, count, target_disp, op);
  return {};  // atomic paths complete eagerly
}

RmaRequest rget_accumulate(Window& win, std::uint32_t target,
                           std::span<const std::byte> operand,
                           std::span<std::byte> result, const Datatype& dt,
                           std::uint64_t count, std::uint64_t target_disp,
                           AccumulateOp op) {
  get_accumulate(win, target, operand, result, dt, count, target_disp, op);
  return {};
}

void request_wait(Window& win, RmaRequest& req) {
  for (auto& h : req.handles_) win.rank().wait(h);
  req.handles_.clear();
}

bool request_test(Window& win, RmaRequest& req) {
  for (auto& h : req.handles_)
    if (!win.rank().complete(h) && !win.rank().test(h)) return false;
  req.handles_.clear();
  return true;
}

}  // namespace windlass
