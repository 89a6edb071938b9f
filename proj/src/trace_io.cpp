#include "pmshadow/trace_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pmshadow/errors.hpp"

namespace pmshadow {

bool event_has_operands(EventKind kind) {
  switch (kind) {
    case EventKind::Fence:
    case EventKind::CommitBegin:
    case EventKind::CommitEnd:
      return false;
    default:
      return true;
  }
}

const char* event_kind_token(EventKind kind) {
  switch (kind) {
    case EventKind::Alloc:
      return "A";
    case EventKind::Write:
      return "W";
    case EventKind::Flush:
      return "F";
    case EventKind::Fence:
      return "S";
    case EventKind::CommitBegin:
      return "CB";
    case EventKind::CommitEnd:
      return "CE";
    case EventKind::Free:
      return "R";
  }
  return "?";
}

static bool token_to_kind(const std::string& tok, EventKind& out) {
  if (tok == "A") out = EventKind::Alloc;
  else if (tok == "W") out = EventKind::Write;
  else if (tok == "F") out = EventKind::Flush;
  else if (tok == "S") out = EventKind::Fence;
  else if (tok == "CB") out = EventKind::CommitBegin;
  else if (tok == "CE") out = EventKind::CommitEnd;
  else if (tok == "R") out = EventKind::Free;
  else return false;
  return true;
}

std::string format_event(const Event& e) {
  char buf[96];
  if (event_has_operands(e.kind)) {
    std::snprintf(buf, sizeof buf, "%" PRIu64 " %s %" PRIx64 " %" PRIx64,
                  e.seq, event_kind_token(e.kind), e.offset, e.size);
  } else {
    std::snprintf(buf, sizeof buf, "%" PRIu64 " %s - -", e.seq,
                  event_kind_token(e.kind));
  }
  return buf;
}

static std::uint64_t parse_hex(const std::string& tok, const std::string& line) {
  std::uint64_t v = 0;
  if (std::sscanf(tok.c_str(), "%" SCNx64, &v) != 1) {
    throw ParseError("trace: bad hex field in line: " + line);
  }
  return v;
}

Event parse_event(const std::string& line) {
  std::istringstream in(line);
  std::string seq_tok, kind_tok, off_tok, size_tok;
  if (!(in >> seq_tok >> kind_tok >> off_tok >> size_tok)) {
    throw ParseError("trace: short line: " + line);
  }
  std::string extra;
  if (in >> extra) {
    throw ParseError("trace: trailing tokens in line: " + line);
  }

  Event e;
  if (std::sscanf(seq_tok.c_str(), "%" SCNu64, &e.seq) != 1) {
    throw ParseError("trace: bad sequence number in line: " + line);
  }
  if (!token_to_kind(kind_tok, e.kind)) {
    throw ParseError("trace: unknown event kind in line: " + line);
  }
  if (event_has_operands(e.kind)) {
    e.offset = parse_hex(off_tok, line);
    e.size = parse_hex(size_tok, line);
  } else {
    if (off_tok != "-" || size_tok != "-") {
      throw ParseError("trace: operands on operand-free event: " + line);
    }
  }
  return e;
}

void write_trace(const std::string& path, std::span<const Event> events) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("write_trace: cannot open " + path);
  }
  for (const auto& e : events) {
    out << format_event(e) << '\n';
  }
  if (!out) {
    throw IoError("write_trace: write failed for " + path);
  }
}

std::vector<Event> parse_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("parse_trace: cannot open " + path);
  }
  std::vector<Event> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    out.push_back(parse_event(line));
  }
  return out;
}

}  // namespace pmshadow
