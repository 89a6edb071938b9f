#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pmshadow {

// Latency model for write-back instructions whose cost amortizes when
// several lines are in flight at once. The serial fraction `s` is the part
// of a single flush that cannot overlap with its peers.
struct FlushModelParams {
  double serial_fraction = 0.18;
  double base_latency_ns = 353.0;
};

struct FlushMeasurement {
  std::uint64_t concurrency = 0;
  double avg_latency_ns = 0.0;
};

// Mean per-flush latency observed when n flushes are outstanding together.
double avg_flush_latency(std::uint64_t n, const FlushModelParams& params = {});

// Total time to retire a group of n concurrent flushes. Zero for n == 0.
double group_latency(std::uint64_t n, const FlushModelParams& params = {});

// Recover (serial_fraction, base_latency_ns) from measured points.
// Requires a concurrency-1 point and at least two distinct concurrencies.
FlushModelParams fit_karp_flatt(std::span<const FlushMeasurement> points);

std::vector<FlushMeasurement> read_flush_csv(const std::string& path);
void write_flush_csv(const std::string& path,
                     std::span<const FlushMeasurement> points);

}  // namespace pmshadow
