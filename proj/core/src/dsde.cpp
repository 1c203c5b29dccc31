#include "windlass/dsde.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "engine.hpp"
#include "windlass/sync.hpp"

namespace windlass {

namespace {
constexpr std::uint64_t kCountWord = 0;   // word offsets in the window
constexpr std::uint64_t kSlotsWord = 1;

std::uint64_t pack(std::uint32_t source, std::uint32_t seq) {
  return (static_cast<std::uint64_t>(source + 1) << 32) | seq;
}
}  // namespace

DsdeExchange::DsdeExchange(Rank& rank, std::vector<RankId> group,
                           DsdeConfig cfg)
    : cfg_(cfg),
      slot_words_(std::max<std::uint64_t>(cfg.slots, group.size())),
      win_(Window::allocate(rank, std::move(group),
                            (kSlotsWord + slot_words_) * 8, 8)) {}

std::vector<std::uint32_t> DsdeExchange::pick_targets(std::uint64_t seed,
                                                      std::uint32_t self,
                                                      std::uint32_t p,
                                                      std::uint32_t k,
                                                      std::uint32_t round) {
  std::uint64_t s = detail::mix64(detail::mix64(seed, self), 0xd5de + round);
  std::vector<std::uint32_t> pool;
  pool.reserve(p - 1);
  for (std::uint32_t i = 0; i < p; ++i)
    if (i != self) pool.push_back(i);
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < k && !pool.empty(); ++i) {
    std::size_t j = detail::splitmix64(s) % pool.size();
    out.push_back(pool[j]);
    pool.erase(pool.begin() + j);
  }
  return out;
}

DsdeExchange::RoundResult DsdeExchange::exchange(
    std::uint32_t round, std::span<const std::uint32_t> targets) {
  Rank& r = win_.rank();
  RoundResult res;
  win_fence(win_);

  auto before = r.fabric().counters().per_rank[r.id()];
  for (std::uint32_t i = 0; i < targets.size(); ++i) {
    std::int64_t slot =
        fetch_and_op(win_, targets[i], 1, kCountWord, AccumulateOp::Sum);
    if (static_cast<std::uint64_t>(slot) >= slot_words_)
      raise(errc::slot_overflow, "receive buffer full at the target");
    std::uint64_t payload = pack(win_.my_index(), round * 1000 + i);
    auto dt = Datatype::base(BaseType::Int64);
    rma_put(win_, targets[i], {reinterpret_cast<std::byte*>(&payload), 8}, dt,
            1, kSlotsWord + static_cast<std::uint64_t>(slot), dt);
  }
  auto after = r.fabric().counters().per_rank[r.id()];
  res.data_ops = after.remote_total() - before.remote_total();
  res.data_bytes = (after.bytes_put + after.bytes_got) -
                   (before.bytes_put + before.bytes_got);

  win_fence(win_);

  auto words = reinterpret_cast<std::uint64_t*>(win_.local_data().data());
  std::uint64_t n = std::min<std::uint64_t>(words[kCountWord], slot_words_);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint64_t v = words[kSlotsWord + i];
    res.received.push_back(Payload{
        static_cast<std::uint32_t>((v >> 32) - 1),
        static_cast<std::uint32_t>(v & 0xffffffffu)});
    words[kSlotsWord + i] = 0;
  }
  words[kCountWord] = 0;  // reset before entering the next round's fence
  return res;
}

DsdeExchange::RoundResult DsdeExchange::baseline(
    std::uint32_t round, std::span<const std::uint32_t> targets) {
  Rank& r = win_.rank();
  RoundResult res;
  std::uint32_t n = win_.group_size();
  win_fence(win_);

  auto before = r.fabric().counters().per_rank[r.id()];
  // Counting phase: vector reduction announces how many messages each rank
  // will receive; its cost grows with the group.
  std::vector<std::int64_t> counts(n, 0);
  for (auto t : targets) counts[t] += 1;
  auto sums = win_.ctx().allreduce_sum(counts);
  if (static_cast<std::uint64_t>(sums[win_.my_index()]) > slot_words_)
    raise(errc::slot_overflow, "receive buffer full at the target");

  // Delivery: at most one message per (source, target), so the source index
  // doubles as the slot reservation.
  for (std::uint32_t i = 0; i < targets.size(); ++i) {
    std::uint64_t payload = pack(win_.my_index(), round * 1000 + i);
    auto dt = Datatype::base(BaseType::Int64);
    rma_put(win_, targets[i], {reinterpret_cast<std::byte*>(&payload), 8}, dt,
            1, kSlotsWord + win_.my_index(), dt);
  }
  auto after = r.fabric().counters().per_rank[r.id()];
  res.data_ops = after.remote_total() - before.remote_total();
  res.data_bytes = (after.bytes_put + after.bytes_got) -
                   (before.bytes_put + before.bytes_got);

  win_fence(win_);

  auto words = reinterpret_cast<std::uint64_t*>(win_.local_data().data());
  std::uint64_t expected = static_cast<std::uint64_t>(sums[win_.my_index()]);
  for (std::uint32_t s = 0; s < n; ++s) {
    std::uint64_t v = words[kSlotsWord + s];
    if (v == 0) continue;
    res.received.push_back(Payload{
        static_cast<std::uint32_t>((v >> 32) - 1),
        static_cast<std::uint32_t>(v & 0xffffffffu)});
    words[kSlotsWord + s] = 0;
  }
  if (res.received.size() != expected)
    raise(errc::protocol_error, "delivery does not match the counting phase");
  return res;
}

void DsdeExchange::free() { win_.free(); }

DsdeRunResult run_dsde(FabricConfig cfg, std::uint32_t k, std::uint32_t rounds,
                       std::uint64_t slots, bool baseline) {
  DsdeRunResult out;
  out.rounds = rounds;

  struct Ledger {
    std::vector<std::uint64_t> sent;      // packed (source, seq)
    std::vector<std::uint64_t> received;
  };
  std::vector<Ledger> ledgers(rounds);
  std::vector<std::uint64_t> ops(cfg.p, 0), bytes(cfg.p, 0);
  double max_t = 0.0;

  Fabric fabric(cfg);
  fabric.run([&](Rank& r) {
    std::vector<RankId> group(r.world_size());
    std::iota(group.begin(), group.end(), 0);
    DsdeConfig dcfg;
    dcfg.k = k;
    dcfg.slots = slots;
    DsdeExchange ex(r, group, dcfg);

    double t0 = r.now();
    for (std::uint32_t round = 0; round < rounds; ++round) {
      auto targets = DsdeExchange::pick_targets(cfg.seed, r.id(),
                                                r.world_size(), k, round);
      for (std::uint32_t i = 0; i < targets.size(); ++i)
        ledgers[round].sent.push_back(pack(r.id(), round * 1000 + i));
      auto res = baseline ? ex.baseline(round, targets)
                          : ex.exchange(round, targets);
      for (const auto& pld : res.received)
        ledgers[round].received.push_back(pack(pld.source, pld.seq));
      ops[r.id()] = std::max(ops[r.id()], res.data_ops);
      bytes[r.id()] = std::max(bytes[r.id()], res.data_bytes);
      out.delivered += res.received.size();
    }
    max_t = std::max(max_t, r.now() - t0);
    ex.free();
  });

  out.exactly_once = true;
  for (auto& led : ledgers) {
    std::sort(led.sent.begin(), led.sent.end());
    std::sort(led.received.begin(), led.received.end());
    if (led.sent != led.received) out.exactly_once = false;
  }
  out.max_data_ops_per_rank = *std::max_element(ops.begin(), ops.end());
  out.max_data_bytes_per_rank = *std::max_element(bytes.begin(), bytes.end());
  out.virtual_seconds = max_t;
  return out;
}

}  // namespace windlass
