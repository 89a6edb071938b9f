#include "pmshadow/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <queue>
#include <random>
#include <vector>

#include "pmshadow/arena.hpp"
#include "pmshadow/checker.hpp"
#include "pmshadow/commit.hpp"
#include "pmshadow/errors.hpp"
#include "pmshadow/map.hpp"
#include "pmshadow/queue.hpp"
#include "pmshadow/reclaim.hpp"
#include "pmshadow/stack.hpp"
#include "pmshadow/trace_io.hpp"
#include "pmshadow/vector.hpp"

namespace pmshadow {

namespace {

constexpr const char* kRootName = "w";

bool workload_known(const std::string& w) {
  return w == "map" || w == "set" || w == "stack" || w == "queue" ||
         w == "vector" || w == "vec-swap" || w == "bfs";
}

// Captures per-section flush deltas plus phase-level counter baselines so
// setup work stays out of the measurements.
class Meter {
 public:
  explicit Meter(Arena& arena) : arena_(&arena) {}

  void start_phase() {
    const ArenaCounters& c = arena_->counters();
    fence_base_ = c.fences;
    flush_base_ = c.flushes;
    alloc_bytes_base_ = c.alloc_bytes;
    sim_base_ = arena_->sim_time_ns();
  }

  template <typename F>
  void fase(F&& body) {
    const std::uint64_t before = arena_->counters().flushes;
    body();
    flush_deltas_.push_back(
        static_cast<std::uint32_t>(arena_->counters().flushes - before));
  }

  void fill_report(BenchReport& r) const {
    const ArenaCounters& c = arena_->counters();
    r.ops = flush_deltas_.size();
    r.sim_time_ns = arena_->sim_time_ns() - sim_base_;
    r.peak_live_bytes = arena_->peak_live_bytes();
    if (r.ops == 0) {
      return;
    }
    const double ops = static_cast<double>(r.ops);
    r.fences_per_op = static_cast<double>(c.fences - fence_base_) / ops;
    r.flushes_per_op_mean =
        static_cast<double>(c.flushes - flush_base_) / ops;
    std::vector<std::uint32_t> sorted = flush_deltas_;
    std::nth_element(sorted.begin(), sorted.begin() + (sorted.size() - 1) / 2,
                     sorted.end());
    r.flushes_per_op_median =
        static_cast<double>(sorted[(sorted.size() - 1) / 2]);
    r.alloc_bytes_per_op =
        static_cast<double>(c.alloc_bytes - alloc_bytes_base_) / ops;
  }

 private:
  Arena* arena_;
  std::vector<std::uint32_t> flush_deltas_;
  std::uint64_t fence_base_ = 0;
  std::uint64_t flush_base_ = 0;
  std::uint64_t alloc_bytes_base_ = 0;
  double sim_base_ = 0.0;
};

std::vector<std::uint8_t> value_pattern(std::uint64_t key, std::uint64_t size) {
  std::vector<std::uint8_t> out(size);
  std::uint64_t x = key * 0x9e3779b97f4a7c15ull + 1;
  for (auto& b : out) {
    x ^= x >> 27;
    x *= 0x3c79ac492ba7b653ull;
    b = static_cast<std::uint8_t>(x);
  }
  return out;
}

void run_map(const BenchConfig& cfg, Arena& a, RefTable& refs, Meter& meter,
             std::uint64_t& sink) {
  const std::uint64_t vsize = cfg.value_size ? cfg.value_size : 32;
  PMap m(a, refs, vsize != 8);
  std::mt19937_64 rng(cfg.seed);
  ArenaOffset r = kNullOffset;
  std::vector<std::uint64_t> keys;
  keys.reserve(cfg.prefill + cfg.iterations / 2 + 1);
  for (std::uint64_t i = 0; i < cfg.prefill; ++i) {
    const std::uint64_t k = rng();
    const ArenaOffset next = m.insert(r, k, value_pattern(k, vsize));
    commit_single(a, refs, kRootName, r, next);
    r = next;
    keys.push_back(k);
  }
  meter.start_phase();
  for (std::uint64_t i = 0; i < cfg.iterations; ++i) {
    const bool insert = keys.empty() ||
                        rng() < cfg.insert_ratio * 18446744073709551615.0;
    if (insert) {
      const std::uint64_t k = rng();
      meter.fase([&] {
        const ArenaOffset next = m.insert(r, k, value_pattern(k, vsize));
        commit_single(a, refs, kRootName, r, next);
        r = next;
      });
      keys.push_back(k);
    } else {
      const auto hit = m.get(r, keys[rng() % keys.size()]);
      if (hit) {
        sink ^= hit->size();
      }
    }
  }
}

void run_set(const BenchConfig& cfg, Arena& a, RefTable& refs, Meter& meter,
             std::uint64_t& sink) {
  PSet s(a, refs);
  std::mt19937_64 rng(cfg.seed);
  ArenaOffset r = kNullOffset;
  std::vector<std::uint64_t> keys;
  keys.reserve(cfg.prefill + cfg.iterations / 2 + 1);
  for (std::uint64_t i = 0; i < cfg.prefill; ++i) {
    const std::uint64_t k = rng();
    const ArenaOffset next = s.insert(r, k);
    commit_single(a, refs, kRootName, r, next);
    r = next;
    keys.push_back(k);
  }
  meter.start_phase();
  for (std::uint64_t i = 0; i < cfg.iterations; ++i) {
    const bool insert = keys.empty() ||
                        rng() < cfg.insert_ratio * 18446744073709551615.0;
    if (insert) {
      const std::uint64_t k = rng();
      meter.fase([&] {
        const ArenaOffset next = s.insert(r, k);
        commit_single(a, refs, kRootName, r, next);
        r = next;
      });
      keys.push_back(k);
    } else {
      sink ^= s.contains(r, keys[rng() % keys.size()]) ? 1 : 0;
    }
  }
}

void run_stack(const BenchConfig& cfg, Arena& a, RefTable& refs,
               Meter& meter, std::uint64_t& sink) {
  PStack s(a, refs);
  std::mt19937_64 rng(cfg.seed);
  ArenaOffset r = kNullOffset;
  std::uint64_t depth = 0;
  for (std::uint64_t i = 0; i < cfg.prefill; ++i) {
    const ArenaOffset next = s.push(r, rng());
    commit_single(a, refs, kRootName, r, next);
    r = next;
    ++depth;
  }
  meter.start_phase();
  for (std::uint64_t i = 0; i < cfg.iterations; ++i) {
    const bool push = depth == 0 ||
                      rng() < cfg.insert_ratio * 18446744073709551615.0;
    meter.fase([&] {
      ArenaOffset next;
      if (push) {
        next = s.push(r, rng());
        ++depth;
      } else {
        auto [rest, value] = s.pop(r);
        next = rest;
        sink ^= value;
        --depth;
      }
      commit_single(a, refs, kRootName, r, next);
      r = next;
    });
  }
}

void run_queue(const BenchConfig& cfg, Arena& a, RefTable& refs,
               Meter& meter, std::uint64_t& sink) {
  PQueue q(a, refs);
  std::mt19937_64 rng(cfg.seed);
  ArenaOffset r = kNullOffset;
  std::uint64_t depth = 0;
  for (std::uint64_t i = 0; i < cfg.prefill; ++i) {
    const ArenaOffset next = q.enqueue(r, rng());
    commit_single(a, refs, kRootName, r, next);
    r = next;
    ++depth;
  }
  meter.start_phase();
  for (std::uint64_t i = 0; i < cfg.iterations; ++i) {
    const bool enq = depth == 0 ||
                     rng() < cfg.insert_ratio * 18446744073709551615.0;
    meter.fase([&] {
      ArenaOffset next;
      if (enq) {
        next = q.enqueue(r, rng());
        ++depth;
      } else {
        auto [rest, value] = q.dequeue(r);
        next = rest;
        sink ^= value;
        --depth;
      }
      commit_single(a, refs, kRootName, r, next);
      r = next;
    });
  }
}

void run_vector(const BenchConfig& cfg, Arena& a, RefTable& refs,
                Meter& meter, std::uint64_t& sink) {
  PVector v(a, refs);
  std::mt19937_64 rng(cfg.seed);
  ArenaOffset r = kNullOffset;
  std::uint64_t len = 0;
  for (std::uint64_t i = 0; i < cfg.prefill; ++i) {
    const ArenaOffset next = v.push_back(r, rng());
    commit_single(a, refs, kRootName, r, next);
    r = next;
    ++len;
  }
  meter.start_phase();
  for (std::uint64_t i = 0; i < cfg.iterations; ++i) {
    const bool grow = len == 0 ||
                      rng() < cfg.insert_ratio * 18446744073709551615.0;
    meter.fase([&] {
      ArenaOffset next;
      if (grow) {
        next = v.push_back(r, rng());
        ++len;
      } else {
        const std::uint64_t idx = rng() % len;
        sink ^= v.get(r, idx);
        next = v.update(r, idx, rng());
      }
      commit_single(a, refs, kRootName, r, next);
      r = next;
    });
  }
}

void run_vec_swap(const BenchConfig& cfg, Arena& a, RefTable& refs,
                  Meter& meter, std::uint64_t& sink) {
  PVector v(a, refs);
  std::mt19937_64 rng(cfg.seed);
  ArenaOffset r = kNullOffset;
  const std::uint64_t len = std::max<std::uint64_t>(2, cfg.prefill);
  for (std::uint64_t i = 0; i < len; ++i) {
    const ArenaOffset next = v.push_back(r, rng());
    commit_single(a, refs, kRootName, r, next);
    r = next;
  }
  meter.start_phase();
  for (std::uint64_t i = 0; i < cfg.iterations; ++i) {
    const std::uint64_t x = rng() % len;
    std::uint64_t y = rng() % len;
    if (y == x) {
      y = (y + 1) % len;
    }
    meter.fase([&] {
      const std::uint64_t vx = v.get(r, x);
      const std::uint64_t vy = v.get(r, y);
      sink ^= vx ^ vy;
      FaseScope scope(a, refs);
      const ArenaOffset mid = v.update(r, x, vy);
      scope.record_update(kRootName, r, mid);
      const ArenaOffset next = v.update(mid, y, vx);
      scope.record_update(kRootName, mid, next);
      scope.commit();
      r = next;
    });
  }
}

std::vector<std::vector<std::uint32_t>> bfs_graph(std::uint64_t nodes,
                                                  std::uint64_t degree,
                                                  std::uint64_t seed) {
  std::vector<std::vector<std::uint32_t>> adj(nodes);
  std::mt19937_64 rng(seed);
  const auto link = [&](std::uint64_t u, std::uint64_t v) {
    adj[u].push_back(static_cast<std::uint32_t>(v));
    adj[v].push_back(static_cast<std::uint32_t>(u));
  };
  for (std::uint64_t v = 1; v < nodes; ++v) {
    link(rng() % v, v);
  }
  const std::uint64_t target_edges = nodes * degree / 2;
  for (std::uint64_t e = nodes - 1; e < target_edges; ++e) {
    const std::uint64_t u = rng() % nodes;
    const std::uint64_t v = rng() % nodes;
    if (u != v) {
      link(u, v);
    }
  }
  return adj;
}

void run_bfs(const BenchConfig& cfg, Arena& a, RefTable& refs, Meter& meter,
             std::uint64_t& sink) {
  const std::uint64_t n = std::max<std::uint64_t>(1, cfg.bfs_nodes);
  const auto adj = bfs_graph(n, cfg.bfs_degree, cfg.seed);
  PQueue q(a, refs);
  ArenaOffset r = kNullOffset;
  std::vector<std::uint8_t> visited(n, 0);
  std::vector<std::uint32_t> order;
  order.reserve(n);
  meter.start_phase();
  meter.fase([&] {
    const ArenaOffset next = q.enqueue(r, 0);
    commit_single(a, refs, kRootName, r, next);
    r = next;
  });
  visited[0] = 1;
  order.push_back(0);
  while (r != kNullOffset) {
    std::uint64_t u = 0;
    meter.fase([&] {
      auto [rest, value] = q.dequeue(r);
      commit_single(a, refs, kRootName, r, rest);
      r = rest;
      u = value;
    });
    for (const std::uint32_t w : adj[u]) {
      if (visited[w]) {
        continue;
      }
      visited[w] = 1;
      order.push_back(w);
      meter.fase([&] {
        const ArenaOffset next = q.enqueue(r, w);
        commit_single(a, refs, kRootName, r, next);
        r = next;
      });
    }
  }

  // Oracle traversal over the same graph must agree step for step.
  std::vector<std::uint8_t> ovisited(n, 0);
  std::vector<std::uint32_t> oorder;
  oorder.reserve(n);
  std::queue<std::uint32_t> oq;
  oq.push(0);
  ovisited[0] = 1;
  oorder.push_back(0);
  while (!oq.empty()) {
    const std::uint32_t u = oq.front();
    oq.pop();
    for (const std::uint32_t w : adj[u]) {
      if (!ovisited[w]) {
        ovisited[w] = 1;
        oorder.push_back(w);
        oq.push(w);
      }
    }
  }
  if (order != oorder || order.size() != n) {
    throw Error("bench: bfs diverged from its oracle traversal");
  }
  sink ^= order.size();
}

}  // namespace

BenchReport run_bench(const BenchConfig& config) {
  if (!workload_known(config.workload)) {
    throw MisuseError("bench: unknown workload '" + config.workload + "'");
  }
  if (config.iterations == 0) {
    throw MisuseError("bench: iterations must be at least 1");
  }
  ArenaOptions opt;
  opt.size = config.arena_size;
  opt.retain_trace = !config.trace_path.empty();
  auto arena = Arena::create_anonymous(opt);
  TraceChecker checker(arena->data_start());
  arena->set_event_hook(
      [&checker](const Arena&, const Event& e) { checker.feed(e); });

  RefTable refs;
  Meter meter(*arena);
  std::uint64_t sink = 0;
  const auto wall_start = std::chrono::steady_clock::now();
  if (config.workload == "map") {
    run_map(config, *arena, refs, meter, sink);
  } else if (config.workload == "set") {
    run_set(config, *arena, refs, meter, sink);
  } else if (config.workload == "stack") {
    run_stack(config, *arena, refs, meter, sink);
  } else if (config.workload == "queue") {
    run_queue(config, *arena, refs, meter, sink);
  } else if (config.workload == "vector") {
    run_vector(config, *arena, refs, meter, sink);
  } else if (config.workload == "vec-swap") {
    run_vec_swap(config, *arena, refs, meter, sink);
  } else {
    run_bfs(config, *arena, refs, meter, sink);
  }
  const auto wall_end = std::chrono::steady_clock::now();

  arena->set_event_hook({});
  checker.finish();
  if (!checker.violations().empty()) {
    const Violation& v = checker.violations().front();
    throw Error(std::string("bench: trace violation ") +
                violation_kind_name(v.kind) + " at seq " +
                std::to_string(v.seq));
  }

  BenchReport report;
  report.workload = config.workload;
  meter.fill_report(report);
  report.wall_seconds =
      std::chrono::duration<double>(wall_end - wall_start).count();
  (void)sink;
  if (!config.trace_path.empty()) {
    write_trace(config.trace_path, arena->trace());
  }
  if (!config.report_path.empty()) {
    write_report_csv(config.report_path, report);
  }
  return report;
}

void write_report_csv(const std::string& path, const BenchReport& report) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("bench: cannot write '" + path + "'");
  }
  out << "workload,ops,fences_per_op,flushes_per_op_mean,"
         "flushes_per_op_median,alloc_bytes_per_op,sim_time_ns,"
         "peak_live_bytes\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%llu\n",
                report.workload.c_str(),
                static_cast<unsigned long long>(report.ops),
                report.fences_per_op, report.flushes_per_op_mean,
                report.flushes_per_op_median, report.alloc_bytes_per_op,
                report.sim_time_ns,
                static_cast<unsigned long long>(report.peak_live_bytes));
  out << buf;
  if (!out) {
    throw IoError("bench: write failed for '" + path + "'");
  }
}

double measure_growth(const std::string& workload, std::uint64_t n1,
                      std::uint64_t n2) {
  if (!workload_known(workload) || workload == "vec-swap" ||
      workload == "bfs") {
    throw MisuseError("bench: growth needs a container workload");
  }
  if (n1 == 0 || n2 <= n1) {
    throw MisuseError("bench: growth needs n2 > n1 > 0");
  }
  ArenaOptions opt;
  opt.size = 1ull << 30;
  opt.retain_trace = false;
  auto arena = Arena::create_anonymous(opt);
  RefTable refs;
  PMap m(*arena, refs, false);
  PSet s(*arena, refs);
  PStack st(*arena, refs);
  PQueue q(*arena, refs);
  PVector v(*arena, refs);
  ArenaOffset r = kNullOffset;
  std::uint64_t at_n1 = 0;
  for (std::uint64_t i = 0; i < n2; ++i) {
    ArenaOffset next;
    if (workload == "map") {
      next = m.insert_u64(r, i, i);
    } else if (workload == "set") {
      next = s.insert(r, i);
    } else if (workload == "stack") {
      next = st.push(r, i);
    } else if (workload == "queue") {
      next = q.enqueue(r, i);
    } else {
      next = v.push_back(r, i);
    }
    commit_single(*arena, refs, kRootName, r, next);
    r = next;
    if (i + 1 == n1) {
      at_n1 = arena->live_bytes();
    }
  }
  return static_cast<double>(arena->live_bytes()) /
         static_cast<double>(at_n1);
}

FlushModelParams bench_flush_model(const std::string& csv_path) {
  const std::vector<FlushMeasurement> points = read_flush_csv(csv_path);
  const FlushModelParams fitted = fit_karp_flatt(points);
  std::printf("fitted serial_fraction=%.6f base_latency_ns=%.3f\n",
              fitted.serial_fraction, fitted.base_latency_ns);
  std::printf("%12s %16s %16s %12s\n", "concurrency", "measured_ns",
              "model_ns", "rel_err");
  for (const FlushMeasurement& p : points) {
    const double model = avg_flush_latency(p.concurrency, fitted);
    const double err =
        p.avg_latency_ns == 0.0
            ? 0.0
            : (model - p.avg_latency_ns) / p.avg_latency_ns;
    std::printf("%12llu %16.3f %16.3f %11.2f%%\n",
                static_cast<unsigned long long>(p.concurrency),
                p.avg_latency_ns, model, err * 100.0);
  }
  return fitted;
}

}  // namespace pmshadow
