#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "pmshadow/bench.hpp"

namespace {

void print_report(const pmshadow::BenchReport& r) {
  std::printf("workload            %s\n", r.workload.c_str());
  std::printf("ops                 %llu\n",
              static_cast<unsigned long long>(r.ops));
  std::printf("fences/op           %.6f\n", r.fences_per_op);
  std::printf("flushes/op mean     %.6f\n", r.flushes_per_op_mean);
  std::printf("flushes/op median   %.1f\n", r.flushes_per_op_median);
  std::printf("alloc bytes/op      %.3f\n", r.alloc_bytes_per_op);
  std::printf("simulated time      %.3f ms\n", r.sim_time_ns / 1e6);
  std::printf("peak live bytes     %llu\n",
              static_cast<unsigned long long>(r.peak_live_bytes));
  std::printf("wall clock          %.3f s\n", r.wall_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"microbenchmarks for the shadow-updated durable structures"};
  app.require_subcommand(0, 1);

  pmshadow::BenchConfig cfg;
  app.add_option("--workload", cfg.workload,
                 "one of map, set, stack, queue, vector, vec-swap, bfs");
  app.add_option("--iters", cfg.iterations, "measured iterations");
  app.add_option("--seed", cfg.seed, "workload seed");
  app.add_option("--value-size", cfg.value_size,
                 "map value bytes, 0 for the default");
  app.add_option("--arena-size", cfg.arena_size, "arena bytes")
      ->transform(CLI::AsSizeValue(false));
  app.add_option("--report", cfg.report_path, "CSV report path");
  app.add_option("--trace", cfg.trace_path, "write the event trace here");
  app.add_option("--mix", cfg.insert_ratio, "update fraction of iterations");
  app.add_option("--prefill", cfg.prefill, "elements present before timing");
  app.add_option("--bfs-nodes", cfg.bfs_nodes, "graph nodes for bfs");
  app.add_option("--bfs-degree", cfg.bfs_degree, "average degree for bfs");

  std::string growth_workload = "map";
  std::uint64_t n1 = 100000;
  std::uint64_t n2 = 200000;
  CLI::App* growth = app.add_subcommand("growth", "live-byte growth ratio");
  growth->add_option("--workload", growth_workload,
                     "map, set, stack, queue, or vector");
  growth->add_option("--n1", n1, "smaller element count");
  growth->add_option("--n2", n2, "larger element count");

  std::string model_csv;
  CLI::App* flushmodel =
      app.add_subcommand("flushmodel", "fit latency measurements");
  flushmodel->add_option("--csv", model_csv, "measurement CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (growth->parsed()) {
      const double ratio = pmshadow::measure_growth(growth_workload, n1, n2);
      std::printf("%s %llu -> %llu live-byte ratio %.4f\n",
                  growth_workload.c_str(), static_cast<unsigned long long>(n1),
                  static_cast<unsigned long long>(n2), ratio);
    } else if (flushmodel->parsed()) {
      pmshadow::bench_flush_model(model_csv);
    } else {
      print_report(pmshadow::run_bench(cfg));
    }
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
