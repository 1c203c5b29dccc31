#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "windlass/collectives.hpp"

using namespace windlass;

namespace {

std::vector<RankId> all_ranks(RankId p) {
  std::vector<RankId> g(p);
  std::iota(g.begin(), g.end(), 0);
  return g;
}

FabricConfig det_cfg(RankId p, std::uint64_t seed = 42) {
  FabricConfig cfg;
  cfg.p = p;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("barrier: single member is immediate with zero remote ops") {
  Fabric f(det_cfg(1));
  f.run([](Rank& r) {
    CollectiveContext ctx(r, all_ranks(1));
    ctx.barrier();
    ctx.barrier();
  });
  CHECK(f.counters().remote_total() == 0);
}

TEST_CASE("barrier: dissemination rounds cost exactly log2 atomics each") {
  for (RankId p : {2u, 6u, 8u}) {
    Fabric f(det_cfg(p));
    std::vector<std::uint64_t> atomics_delta(p), time_rounds(p);
    f.run([&](Rank& r) {
      CollectiveContext ctx(r, all_ranks(r.world_size()));
      auto before = r.fabric().counters().per_rank[r.id()];
      double t0 = r.now();
      ctx.barrier();
      double dt = r.now() - t0;
      auto after = r.fabric().counters().per_rank[r.id()];
      atomics_delta[r.id()] = after.atomics_issued - before.atomics_issued;
      time_rounds[r.id()] =
          static_cast<std::uint64_t>(dt / 2.4e-6 + 0.5);  // atomic_latency
    });
    std::uint32_t rounds = 0;
    while ((1u << rounds) < p) ++rounds;
    for (RankId r = 0; r < p; ++r) {
      CHECK(atomics_delta[r] == rounds);
      CHECK(time_rounds[r] == rounds);
    }
  }
}

TEST_CASE("barrier separation: completed writes are visible after barrier") {
  Fabric f(det_cfg(4, 9));
  f.run([](Rank& r) {
    RankId p = r.world_size();
    r.register_with_key(8 * p, 100 + r.id());
    std::vector<RemoteDescriptor> slots;
    for (RankId t = 0; t < p; ++t)
      slots.push_back(r.shared_descriptor(t, 100 + t, 8 * p));
    CollectiveContext ctx(r, all_ranks(p));
    ctx.barrier();  // registrations live everywhere

    for (RankId t = 0; t < p; ++t)
      if (t != r.id()) r.put_u64(slots[t], 8 * r.id(), 7000 + r.id());
    r.gsync();
    ctx.barrier();
    for (RankId s = 0; s < p; ++s) {
      if (s == r.id()) continue;
      CHECK(r.load_local_u64(slots[r.id()], 8 * s) == 7000 + s);
    }
  });
}

TEST_CASE("allgather returns every contribution in group order") {
  Fabric f(det_cfg(5, 4));
  f.run([](Rank& r) {
    CollectiveContext ctx(r, all_ranks(r.world_size()));
    auto ids = ctx.allgather_pod<std::uint64_t>(r.id());
    REQUIRE(ids.size() == 5);
    for (std::uint64_t i = 0; i < 5; ++i) CHECK(ids[i] == i);
  });
}

TEST_CASE("allgather handles large items via scratch regrowth") {
  Fabric f(det_cfg(4, 5));
  f.run([](Rank& r) {
    CollectiveContext ctx(r, all_ranks(r.world_size()), 8);
    std::vector<std::byte> big(1024);
    for (std::size_t i = 0; i < big.size(); ++i)
      big[i] = std::byte((r.id() * 131 + i) & 0xff);
    auto out = ctx.allgather(big);
    REQUIRE(out.size() == 4 * 1024);
    for (RankId s = 0; s < 4; ++s)
      for (std::size_t i = 0; i < 1024; ++i)
        CHECK(out[s * 1024 + i] == std::byte((s * 131 + i) & 0xff));
  });
}

TEST_CASE("broadcast delivers the root payload to all members") {
  for (std::uint32_t root : {0u, 2u}) {
    Fabric f(det_cfg(6, 11));
    f.run([&](Rank& r) {
      CollectiveContext ctx(r, all_ranks(r.world_size()));
      std::uint64_t payload = r.id() == root ? 0xfeedface : 0;
      ctx.broadcast(root, {reinterpret_cast<std::byte*>(&payload), 8});
      CHECK(payload == 0xfeedface);
    });
  }
}

TEST_CASE("allreduce AND, SUM, MAX") {
  Fabric f(det_cfg(16, 2));
  f.run([](Rank& r) {
    CollectiveContext ctx(r, all_ranks(r.world_size()));
    CHECK(ctx.allreduce(1, ReduceOp::And) == 1);
    CHECK(ctx.allreduce(r.id() == 3 ? 0 : 1, ReduceOp::And) == 0);
    CHECK(ctx.allreduce(r.id(), ReduceOp::Sum) == 120);
    CHECK(ctx.allreduce(static_cast<std::int64_t>(r.id()), ReduceOp::Max) ==
          15);
  });
}

TEST_CASE("vector sum allreduce") {
  Fabric f(det_cfg(8, 3));
  f.run([](Rank& r) {
    CollectiveContext ctx(r, all_ranks(r.world_size()));
    std::vector<std::int64_t> v(10);
    for (int i = 0; i < 10; ++i) v[i] = r.id() + i;
    auto sum = ctx.allreduce_sum(v);
    for (int i = 0; i < 10; ++i) CHECK(sum[i] == 28 + 8 * i);
  });
}

TEST_CASE("collectives over a subgroup leave outsiders untouched") {
  Fabric f(det_cfg(5, 6));
  f.run([](Rank& r) {
    if (r.id() == 0 || r.id() == 4) return;
    CollectiveContext ctx(r, {1, 2, 3});
    auto ids = ctx.allgather_pod<std::uint64_t>(r.id());
    CHECK(ids == std::vector<std::uint64_t>{1, 2, 3});
  });
  auto c = f.counters();
  CHECK(c.per_rank[0].remote_total() == 0);
  CHECK(c.per_rank[4].remote_total() == 0);
}

TEST_CASE("mismatched collective kinds raise a protocol error") {
  Fabric f(det_cfg(2));
  CHECK_THROWS_AS(f.run([](Rank& r) {
    CollectiveContext ctx(r, {0, 1});
    if (r.id() == 0) {
      ctx.barrier();
    } else {
      std::uint64_t x = 0;
      ctx.broadcast(0, {reinterpret_cast<std::byte*>(&x), 8});
    }
  }),
                  Error);
}

TEST_CASE("collective remote-op bound: 3 log2 n ops per rank for allgather") {
  for (RankId p : {4u, 8u, 16u}) {
    Fabric f(det_cfg(p));
    std::vector<std::uint64_t> delta(p);
    f.run([&](Rank& r) {
      CollectiveContext ctx(r, all_ranks(r.world_size()));
      auto before = r.fabric().counters().per_rank[r.id()].remote_total();
      ctx.allgather_pod<std::uint64_t>(r.id());
      delta[r.id()] =
          r.fabric().counters().per_rank[r.id()].remote_total() - before;
    });
    std::uint32_t rounds = 0;
    while ((1u << rounds) < p) ++rounds;
    // One put and one signal per exchange round plus the reuse barrier.
    for (RankId r = 0; r < p; ++r) CHECK(delta[r] == 3 * rounds);
  }
}
