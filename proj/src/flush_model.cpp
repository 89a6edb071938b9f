#include "pmshadow/flush_model.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "pmshadow/errors.hpp"

namespace pmshadow {

double avg_flush_latency(std::uint64_t n, const FlushModelParams& params) {
  if (n == 0) {
    throw MisuseError("avg_flush_latency: concurrency must be positive");
  }
  const double s = params.serial_fraction;
  const double dn = static_cast<double>(n);
  return params.base_latency_ns * (s + (1.0 - s) / dn);
}

double group_latency(std::uint64_t n, const FlushModelParams& params) {
  if (n == 0) {
    return 0.0;
  }
  const double s = params.serial_fraction;
  const double dn = static_cast<double>(n);
  return params.base_latency_ns * ((1.0 - s) + s * dn);
}

FlushModelParams fit_karp_flatt(std::span<const FlushMeasurement> points) {
  double base = 0.0;
  bool have_base = false;
  for (const auto& p : points) {
    if (p.concurrency == 1) {
      base = p.avg_latency_ns;
      have_base = true;
      break;
    }
  }
  if (!have_base) {
    throw MisuseError("fit_karp_flatt: need a concurrency-1 measurement");
  }

  double sum = 0.0;
  std::uint64_t used = 0;
  for (const auto& p : points) {
    if (p.concurrency <= 1) {
      continue;
    }
    const double inv_n = 1.0 / static_cast<double>(p.concurrency);
    const double ratio = p.avg_latency_ns / base;
    sum += (ratio - inv_n) / (1.0 - inv_n);
    ++used;
  }
  if (used == 0) {
    throw MisuseError("fit_karp_flatt: need at least two distinct concurrencies");
  }

  double s = sum / static_cast<double>(used);
  if (s < 0.0) s = 0.0;
  if (s > 1.0) s = 1.0;
  return FlushModelParams{s, base};
}

std::vector<FlushMeasurement> read_flush_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("read_flush_csv: cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("read_flush_csv: empty file " + path);
  }
  if (line != "concurrency,avg_latency_ns") {
    throw ParseError("read_flush_csv: bad header in " + path);
  }
  std::vector<FlushMeasurement> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    std::istringstream row(line);
    FlushMeasurement m;
    char comma = 0;
    if (!(row >> m.concurrency >> comma >> m.avg_latency_ns) || comma != ',') {
      throw ParseError("read_flush_csv: bad row " + std::to_string(lineno) +
                       " in " + path);
    }
    out.push_back(m);
  }
  return out;
}

void write_flush_csv(const std::string& path,
                     std::span<const FlushMeasurement> points) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("write_flush_csv: cannot open " + path);
  }
  out << "concurrency,avg_latency_ns\n";
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g\n",
                  static_cast<unsigned long long>(p.concurrency),
                  p.avg_latency_ns);
    out << buf;
  }
  if (!out) {
    throw IoError("write_flush_csv: write failed for " + path);
  }
}

}  // namespace pmshadow
