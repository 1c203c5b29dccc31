#pragma once

#include <cstring>
#include <map>
#include <vector>

#include "doctest.h"
#include "windlass/fabric.hpp"

namespace testutil {

using namespace windlass;

// Sequential byte-array model. Replaying the fabric completion log through
// it must reproduce every observed value: put bytes land as recorded, get
// payloads and atomic results must match the model state. This is the
// independent oracle for transfer visibility and atomic linearizability.
struct Mirror {
  std::map<std::pair<RankId, RegionKey>, std::vector<std::byte>> mem;
  std::uint64_t checked = 0;

  std::vector<std::byte>& range(const CompletionRecord& r) {
    auto& buf = mem[{r.target, r.key}];
    if (buf.size() < r.offset + r.size) buf.resize(r.offset + r.size);
    return buf;
  }

  void replay(const CompletionRecord& r) {
    auto& buf = range(r);
    switch (r.kind) {
      case OpKind::Put:
        std::memcpy(buf.data() + r.offset, r.payload.data(), r.size);
        break;
      case OpKind::Get:
        REQUIRE(std::memcmp(buf.data() + r.offset, r.payload.data(), r.size) ==
                0);
        ++checked;
        break;
      case OpKind::Fadd: {
        std::uint64_t w;
        std::memcpy(&w, buf.data() + r.offset, 8);
        REQUIRE(w == r.result);
        ++checked;
        w += r.arg0;
        std::memcpy(buf.data() + r.offset, &w, 8);
        break;
      }
      case OpKind::Cas: {
        std::uint64_t w;
        std::memcpy(&w, buf.data() + r.offset, 8);
        REQUIRE(w == r.result);
        ++checked;
        if (w == r.arg0) std::memcpy(buf.data() + r.offset, &r.arg1, 8);
        break;
      }
    }
  }

  void replay_all(const std::vector<CompletionRecord>& log) {
    for (const auto& r : log) replay(r);
  }
};

inline std::span<const std::byte> bytes_of(const std::uint64_t& v) {
  return {reinterpret_cast<const std::byte*>(&v), 8};
}

inline std::uint64_t remote_ops(const OpCounters& c, RankId r) {
  return c.per_rank[r].remote_total();
}

}  // namespace testutil
