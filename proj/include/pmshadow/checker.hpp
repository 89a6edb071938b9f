#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "pmshadow/arena.hpp"
#include "pmshadow/trace_io.hpp"

namespace pmshadow {

enum class ViolationKind : std::uint8_t {
  WriteToOldMemory,  // write outside this episode's fresh allocations
  UnflushedWrite,    // line still dirty when a fence (or the trace) ended
  TornCommit,        // commit-region write that is not one aligned word
  AtomicityBreach,   // crash image recovered to an impossible state
};

const char* violation_kind_name(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::uint64_t seq;     // event that carries the blame
  std::uint64_t offset;  // offending byte or line
};

// Streaming validator for write-ahead shadowing discipline. Data-area
// writes must land in memory allocated since the last commit ended, every
// dirtied line must be flushed before the next fence, and commit-region
// writes must be single aligned words.
class TraceChecker {
 public:
  explicit TraceChecker(std::uint64_t data_start,
                        std::uint64_t line_size = kLineSize);

  void feed(const Event& e);
  void finish();  // end of trace: anything still dirty was never flushed

  const std::vector<Violation>& violations() const { return violations_; }

 private:
  void note_write(const Event& e);

  std::uint64_t data_start_;
  std::uint64_t line_;
  bool in_commit_ = false;
  std::map<std::uint64_t, std::uint64_t> fresh_;  // offset -> end, this episode
  std::map<std::uint64_t, std::uint64_t> dirty_;  // line -> first write seq
  std::vector<Violation> violations_;
};

std::vector<Violation> check_trace(std::span<const Event> events,
                                   std::uint64_t data_start);

}  // namespace pmshadow
