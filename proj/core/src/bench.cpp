#include "windlass/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "windlass/comm.hpp"
#include "windlass/sync.hpp"
#include "windlass/window.hpp"

namespace windlass {

namespace {

std::vector<RankId> all_ranks(RankId p) {
  std::vector<RankId> g(p);
  std::iota(g.begin(), g.end(), 0);
  return g;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void require_deterministic(const FabricConfig& cfg) {
  if (cfg.mode != ExecMode::Deterministic)
    raise(errc::mode_mismatch, "benchmarks run on the virtual clock");
}

std::uint64_t my_remote_ops(Rank& r) {
  return r.fabric().counters().per_rank[r.id()].remote_total();
}

}  // namespace

void write_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  bool app = std::any_of(rows.begin(), rows.end(), [](const ResultRow& r) {
    return r.inserts_per_s_virtual || r.delivered;
  });
  os << "bench,p,size,sample_count,median_s,ops_remote";
  if (app) os << ",inserts_per_s_virtual,delivered";
  os << "\n";
  for (const auto& r : rows) {
    os << r.bench << ',' << r.p << ',' << r.size << ',' << r.sample_count
       << ',' << fmt_double(r.median_s) << ',' << r.ops_remote;
    if (app) {
      os << ',';
      if (r.inserts_per_s_virtual) os << fmt_double(*r.inserts_per_s_virtual);
      os << ',';
      if (r.delivered) os << *r.delivered;
    }
    os << "\n";
  }
}

void write_json(std::ostream& os, const std::vector<ResultRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["bench"] = r.bench;
    o["p"] = r.p;
    o["size"] = r.size;
    o["sample_count"] = r.sample_count;
    o["median_s"] = r.median_s;
    o["ops_remote"] = r.ops_remote;
    if (r.inserts_per_s_virtual)
      o["inserts_per_s_virtual"] = *r.inserts_per_s_virtual;
    if (r.delivered) o["delivered"] = *r.delivered;
    arr.push_back(std::move(o));
  }
  os << arr.dump(2) << "\n";
}

BenchResult bench_latency(FabricConfig cfg, LatencyKind kind,
                          const std::vector<std::uint64_t>& sizes,
                          std::uint64_t samples) {
  require_deterministic(cfg);
  if (cfg.p < 2) raise(errc::invalid_argument, "latency needs two ranks");
  std::uint64_t max_size =
      std::max<std::uint64_t>(8, *std::max_element(sizes.begin(), sizes.end()));

  BenchResult res;
  res.name = kind == LatencyKind::Put ? "latency-put" : "latency-get";
  res.p = cfg.p;
  res.samples = samples;

  std::vector<std::vector<double>> bucket(sizes.size());
  for (auto& b : bucket) b.assign(samples, 0.0);
  std::vector<std::uint64_t> ops_per_size(sizes.size(), 0);

  Fabric fabric(cfg);
  fabric.run([&](Rank& r) {
    auto win = Window::allocate(r, all_ranks(r.world_size()), max_size, 1);
    auto byte_dt = Datatype::base(BaseType::Byte);
    std::vector<std::byte> buf(max_size);
    if (r.id() == 0) {
      // One exclusive lock spans the whole size loop.
      win_lock(win, 1, LockType::Exclusive);
      for (std::size_t si = 0; si < sizes.size(); ++si) {
        std::uint64_t size = sizes[si];
        auto dt = size ? Datatype::contiguous(size, byte_dt) : byte_dt;
        for (std::uint64_t s = 0; s < samples; ++s) {
          std::uint64_t ops0 = my_remote_ops(r);
          double t0 = r.now();
          if (size) {
            if (kind == LatencyKind::Put)
              rma_put(win, 1, {buf.data(), size}, dt, 1, 0, dt);
            else
              rma_get(win, 1, {buf.data(), size}, dt, 1, 0, dt);
          }
          win_flush(win, 1);
          bucket[si][s] = std::max(bucket[si][s], r.now() - t0);
          ops_per_size[si] = my_remote_ops(r) - ops0;
        }
      }
      win_unlock(win, 1);
    }
    win.ctx().barrier();
    win.free();
  });

  for (std::size_t si = 0; si < sizes.size(); ++si) {
    res.points.push_back(ResultRow{res.name, cfg.p, sizes[si], samples,
                                   median(bucket[si]), ops_per_size[si],
                                   std::nullopt, std::nullopt});
  }
  return res;
}

BenchResult bench_message_rate(FabricConfig cfg, std::uint64_t batch) {
  require_deterministic(cfg);
  if (cfg.p < 2) raise(errc::invalid_argument, "message rate needs two ranks");

  BenchResult res;
  res.name = "message-rate";
  res.p = cfg.p;
  res.samples = batch;

  // First rank on another node (if any) and a same-node neighbor (if any).
  std::optional<RankId> inter, intra;
  for (RankId t = 1; t < cfg.p; ++t) {
    bool same = t / cfg.ranks_per_node == 0;
    if (same && !intra) intra = t;
    if (!same && !inter) inter = t;
  }

  double inter_cost = 0.0, intra_cost = 0.0;
  Fabric fabric(cfg);
  fabric.run([&](Rank& r) {
    auto win = Window::allocate(r, all_ranks(r.world_size()), 64, 1);
    if (r.id() == 0) {
      win_lock_all(win);
      std::uint64_t payload = 1;
      auto dt = Datatype::base(BaseType::Int64);
      auto shot = [&](RankId target, double& out) {
        double t0 = r.now();
        for (std::uint64_t i = 0; i < batch; ++i)
          rma_put(win, target, {reinterpret_cast<std::byte*>(&payload), 8}, dt,
                  1, 0, dt);
        out = (r.now() - t0) / static_cast<double>(batch);
        win_flush_all(win);  // drain, unmeasured
      };
      if (inter) shot(*inter, inter_cost);
      if (intra) shot(*intra, intra_cost);
      win_unlock_all(win);
    }
    win.ctx().barrier();
    win.free();
  });

  if (inter)
    res.points.push_back(ResultRow{"message-rate-inter", cfg.p, 8, batch,
                                   inter_cost, batch, std::nullopt,
                                   std::nullopt});
  if (intra)
    res.points.push_back(ResultRow{"message-rate-intra", cfg.p, 8, batch,
                                   intra_cost, batch, std::nullopt,
                                   std::nullopt});
  return res;
}

BenchResult bench_sync(FabricConfig cfg, SyncKind kind,
                       const std::vector<RankId>& p_list, std::uint32_t k,
                       std::uint64_t samples) {
  require_deterministic(cfg);
  BenchResult res;
  res.name = kind == SyncKind::Fence
                 ? "sync-fence"
                 : (kind == SyncKind::PscwRing ? "sync-pscw" : "sync-lock");
  res.samples = samples;

  for (RankId p : p_list) {
    FabricConfig c = cfg;
    c.p = p;
    std::vector<double> bucket(samples, 0.0);
    std::uint64_t ops = 0;

    Fabric fabric(c);
    fabric.run([&](Rank& r) {
      WindowConfig wcfg;
      wcfg.k_max = std::max<std::uint32_t>(8, k);
      auto win = Window::allocate(r, all_ranks(r.world_size()), 64, 1, wcfg);
      RankId n = r.world_size();

      switch (kind) {
        case SyncKind::Fence: {
          win_fence(win);  // warmup: opens the epoch
          for (std::uint64_t s = 0; s < samples; ++s) {
            std::uint64_t ops0 = my_remote_ops(r);
            double t0 = r.now();
            win_fence(win);
            bucket[s] = std::max(bucket[s], r.now() - t0);
            if (r.id() == 0 && s == 0) ops = my_remote_ops(r) - ops0;
          }
          break;
        }
        case SyncKind::PscwRing: {
          std::vector<std::uint32_t> access, exposure;
          for (std::uint32_t i = 1; i <= k; ++i) {
            access.push_back((r.id() + i) % n);
            exposure.push_back((r.id() + n - i) % n);
          }
          for (std::uint64_t s = 0; s < samples; ++s) {
            std::uint64_t ops0 = my_remote_ops(r);
            double t0 = r.now();
            win_post(win, exposure);
            win_start(win, access);
            win_complete(win);
            win_wait(win);
            bucket[s] = std::max(bucket[s], r.now() - t0);
            if (r.id() == 0 && s == 0) ops = my_remote_ops(r) - ops0;
          }
          break;
        }
        case SyncKind::LockUnlock: {
          std::uint32_t target = (r.id() + 1) % n;
          for (std::uint64_t s = 0; s < samples; ++s) {
            std::uint64_t ops0 = my_remote_ops(r);
            double t0 = r.now();
            win_lock(win, target, LockType::Exclusive);
            win_unlock(win, target);
            bucket[s] = std::max(bucket[s], r.now() - t0);
            if (r.id() == 0 && s == 0) ops = my_remote_ops(r) - ops0;
          }
          break;
        }
      }
      win.ctx().barrier();
      win.free();
    });

    res.points.push_back(ResultRow{
        res.name, p, kind == SyncKind::PscwRing ? k : 0, samples,
        median(bucket), ops, std::nullopt, std::nullopt});
  }
  return res;
}

FittedModel fit_model(const BenchResult& result, Regressor regressor) {
  if (result.points.size() < 6)
    raise(errc::invalid_argument, "model fits need at least 6 points");
  std::vector<double> x, y;
  for (const auto& pt : result.points) {
    switch (regressor) {
      case Regressor::Size: x.push_back(static_cast<double>(pt.size)); break;
      case Regressor::LogP:
        x.push_back(std::log2(static_cast<double>(pt.p)));
        break;
      case Regressor::K: x.push_back(static_cast<double>(pt.size)); break;
    }
    y.push_back(pt.median_s);
  }
  double n = static_cast<double>(x.size());
  double sx = std::accumulate(x.begin(), x.end(), 0.0);
  double sy = std::accumulate(y.begin(), y.end(), 0.0);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  double det = n * sxx - sx * sx;
  if (det == 0.0) raise(errc::degenerate_fit, "all regressor values equal");

  FittedModel m;
  m.slope = (n * sxy - sx * sy) / det;
  m.intercept = (sy - m.slope * sx) / n;
  double ss_res = 0, ss_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double e = y[i] - (m.intercept + m.slope * x[i]);
    ss_res += e * e;
    ss_y += y[i] * y[i];
  }
  m.residual = ss_y > 0 ? std::sqrt(ss_res / ss_y) : 0.0;
  return m;
}

}  // namespace windlass
