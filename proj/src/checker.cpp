#include "pmshadow/checker.hpp"

namespace pmshadow {

const char* violation_kind_name(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::WriteToOldMemory:
      return "WriteToOldMemory";
    case ViolationKind::UnflushedWrite:
      return "UnflushedWrite";
    case ViolationKind::TornCommit:
      return "TornCommit";
    case ViolationKind::AtomicityBreach:
      return "AtomicityBreach";
  }
  return "Unknown";
}

TraceChecker::TraceChecker(std::uint64_t data_start, std::uint64_t line_size)
    : data_start_(data_start), line_(line_size) {}

void TraceChecker::note_write(const Event& e) {
  if (e.offset >= data_start_) {
    // shadow discipline: only memory allocated this episode may be written
    auto it = fresh_.upper_bound(e.offset);
    const bool inside = it != fresh_.begin() &&
                        (--it, e.offset >= it->first &&
                                   e.offset + e.size <= it->second);
    if (!inside) {
      violations_.push_back(
          {ViolationKind::WriteToOldMemory, e.seq, e.offset});
    }
  } else if (e.offset >= kTableCapacityOffset) {
    // allocation table protocol region: governed by alloc and free events
  } else if (e.offset >= kRootDirBase && in_commit_) {
    if (e.size != 8 || e.offset % 8 != 0) {
      violations_.push_back({ViolationKind::TornCommit, e.seq, e.offset});
    }
  } else {
    // the header always, and commit regions outside a commit
    violations_.push_back({ViolationKind::WriteToOldMemory, e.seq, e.offset});
  }

  const std::uint64_t first = e.offset / line_;
  const std::uint64_t last = (e.offset + e.size - 1) / line_;
  for (std::uint64_t ln = first; ln <= last; ++ln) {
    dirty_.try_emplace(ln * line_, e.seq);
  }
}

void TraceChecker::feed(const Event& e) {
  switch (e.kind) {
    case EventKind::Alloc:
      fresh_[e.offset] = e.offset + e.size;
      return;
    case EventKind::Write:
      note_write(e);
      return;
    case EventKind::Flush: {
      const std::uint64_t start = e.offset - e.offset % line_;
      for (std::uint64_t ln = start; ln < e.offset + e.size; ln += line_) {
        dirty_.erase(ln);
      }
      return;
    }
    case EventKind::Fence:
      for (const auto& [ln, seq] : dirty_) {
        violations_.push_back({ViolationKind::UnflushedWrite, seq, ln});
      }
      dirty_.clear();
      return;
    case EventKind::CommitBegin:
      in_commit_ = true;
      return;
    case EventKind::CommitEnd:
      in_commit_ = false;
      fresh_.clear();  // the episode is over; its memory is old now
      return;
    case EventKind::Free:
      return;
  }
}

void TraceChecker::finish() {
  for (const auto& [ln, seq] : dirty_) {
    violations_.push_back({ViolationKind::UnflushedWrite, seq, ln});
  }
  dirty_.clear();
}

std::vector<Violation> check_trace(std::span<const Event> events,
                                   std::uint64_t data_start) {
  TraceChecker checker(data_start);
  for (const Event& e : events) {
    checker.feed(e);
  }
  checker.finish();
  return checker.violations();
}

}  // namespace pmshadow
