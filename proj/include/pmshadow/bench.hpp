#pragma once

#include <cstdint>
#include <string>

#include "pmshadow/flush_model.hpp"

namespace pmshadow {

struct BenchConfig {
  std::string workload = "map";
  std::uint64_t iterations = 100000;
  std::uint64_t seed = 42;
  std::uint64_t value_size = 0;  // 0 picks the workload default
  std::uint64_t arena_size = 1ull << 30;
  std::string report_path;
  std::string trace_path;
  double insert_ratio = 0.5;
  std::uint64_t prefill = 10000;
  std::uint64_t bfs_nodes = 10000;
  std::uint64_t bfs_degree = 12;
};

// Per-run measurables. An op is one failure-atomic section; read-only
// iterations contribute to wall time but not to ops.
struct BenchReport {
  std::string workload;
  std::uint64_t ops = 0;
  double fences_per_op = 0.0;
  double flushes_per_op_mean = 0.0;
  double flushes_per_op_median = 0.0;
  double alloc_bytes_per_op = 0.0;
  double sim_time_ns = 0.0;
  std::uint64_t peak_live_bytes = 0;
  double wall_seconds = 0.0;  // informational, not part of the report file
};

BenchReport run_bench(const BenchConfig& config);

void write_report_csv(const std::string& path, const BenchReport& report);

// Builds the named structure to n1 elements, grows it to n2, and returns
// the live-byte ratio.
double measure_growth(const std::string& workload, std::uint64_t n1,
                      std::uint64_t n2);

// Fits model parameters to a measurement file and prints the fit plus a
// model-versus-input table.
FlushModelParams bench_flush_model(const std::string& csv_path);

}  // namespace pmshadow
