#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pmshadow {

enum class EventKind : std::uint8_t {
  Alloc,
  Write,
  Flush,
  Fence,
  CommitBegin,
  CommitEnd,
  Free,
};

// One entry in an arena's operation trace. Fence and commit markers carry
// no operands; their offset and size are zero and render as "-".
struct Event {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::Write;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
};

bool event_has_operands(EventKind kind);
const char* event_kind_token(EventKind kind);

std::string format_event(const Event& e);
Event parse_event(const std::string& line);

void write_trace(const std::string& path, std::span<const Event> events);
std::vector<Event> parse_trace(const std::string& path);

}  // namespace pmshadow
