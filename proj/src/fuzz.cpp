#include "pmshadow/fuzz.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "pmshadow/errors.hpp"
#include "pmshadow/map.hpp"
#include "pmshadow/queue.hpp"
#include "pmshadow/reclaim.hpp"
#include "pmshadow/stack.hpp"
#include "pmshadow/vector.hpp"

namespace pmshadow {

std::uint64_t snapshot_value_hash(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

Snapshot snapshot_map(Arena& a, ArenaOffset droot, bool indirect) {
  RefTable scratch;
  PMap m(a, scratch, indirect);
  Snapshot out;
  for (const auto& [key, value] : m.items(droot)) {
    out.emplace_back(key, snapshot_value_hash(value));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Snapshot snapshot_set(Arena& a, ArenaOffset droot) {
  RefTable scratch;
  PSet s(a, scratch);
  Snapshot out;
  for (std::uint64_t key : s.items(droot)) {
    out.emplace_back(key, 0);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

Snapshot positional(const std::vector<std::uint64_t>& values) {
  Snapshot out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.emplace_back(i, values[i]);
  }
  return out;
}

}  // namespace

Snapshot snapshot_vector(Arena& a, ArenaOffset droot, std::uint8_t radix_bits) {
  RefTable scratch;
  PVector v(a, scratch, radix_bits);
  return positional(v.items(droot));
}

Snapshot snapshot_stack(Arena& a, ArenaOffset droot) {
  RefTable scratch;
  PStack s(a, scratch);
  return positional(s.items(droot));
}

Snapshot snapshot_queue(Arena& a, ArenaOffset droot) {
  RefTable scratch;
  PQueue q(a, scratch);
  return positional(q.items(droot));
}

CrashFuzzer::CrashFuzzer(Arena& arena, FuzzConfig cfg)
    : arena_(&arena), cfg_(cfg), rng_(cfg.seed) {}

CrashFuzzer::~CrashFuzzer() {
  if (armed_) {
    arena_->set_event_hook({});
  }
}

void CrashFuzzer::watch(const std::string& name, EnumerateFn enumerate) {
  if (armed_) {
    throw MisuseError("fuzz: watch requires a disarmed fuzzer");
  }
  Watched w;
  w.name = name;
  w.field = arena_->root_entry_field(name);
  w.enumerate = std::move(enumerate);
  const ArenaOffset cur = arena_->find_root(name).value_or(kNullOffset);
  w.known.emplace_back(cur, w.enumerate(*arena_, cur));
  watched_.push_back(std::move(w));
  committed_tuple_.push_back(cur);
}

void CrashFuzzer::begin() {
  if (watched_.empty()) {
    throw MisuseError("fuzz: nothing watched");
  }
  pending_tuple_ = committed_tuple_;
  armed_ = true;
  arena_->set_event_hook(
      [this](const Arena&, const Event& e) { on_event(e); });
}

void CrashFuzzer::end() {
  if (armed_) {
    arena_->set_event_hook({});
    armed_ = false;
  }
}

void CrashFuzzer::set_pending(const std::string& name, Snapshot after) {
  for (Watched& w : watched_) {
    if (w.name == name) {
      w.pending = std::move(after);
      w.has_pending = true;
      return;
    }
  }
  throw MisuseError("fuzz: unwatched root '" + name + "'");
}

void CrashFuzzer::set_pending_group(
    const std::vector<std::pair<std::string, Snapshot>>& after) {
  if (!cfg_.group_tuples) {
    throw MisuseError("fuzz: group snapshots need group_tuples");
  }
  for (const auto& [name, snap] : after) {
    set_pending(name, snap);
  }
  pending_tuple_ = committed_tuple_;
  tuple_in_flight_ = true;
}

void CrashFuzzer::group_committed() {
  for (std::size_t i = 0; i < watched_.size(); ++i) {
    committed_tuple_[i] =
        arena_->find_root(watched_[i].name).value_or(kNullOffset);
  }
  tuple_in_flight_ = false;
}

void CrashFuzzer::on_event(const Event& e) {
  if (e.kind == EventKind::Write && e.size == 8) {
    for (std::size_t i = 0; i < watched_.size(); ++i) {
      Watched& w = watched_[i];
      if (e.offset != w.field) {
        continue;
      }
      if (!w.has_pending) {
        throw MisuseError("fuzz: root '" + w.name +
                          "' switched without a pending snapshot");
      }
      const ArenaOffset val = arena_->read_u64(w.field);
      w.known.emplace_back(val, std::move(w.pending));
      w.has_pending = false;
      // Only versions still exposable by a crash stay relevant: the
      // durable root, its predecessor pinned by an unfenced swing, and
      // the in-flight value.
      if (w.known.size() > 3) {
        w.known.erase(w.known.begin());
      }
      if (cfg_.group_tuples) {
        pending_tuple_[i] = val;
      }
    }
  }
  fuzz_point(e.seq);
}

void CrashFuzzer::fuzz_point(std::uint64_t seq) {
  const std::vector<ArenaOffset> lines = arena_->uncertain_lines();
  const std::size_t u = lines.size();
  std::uint64_t images = 0;
  std::uint64_t bad = 0;
  const auto run = [&](const std::map<ArenaOffset, LineChoice>& choices) {
    ++images;
    if (!test_image(choices, seq)) {
      ++bad;
    }
  };
  if (u <= cfg_.exhaustive_limit) {
    for (std::uint64_t mask = 0; mask < (1ull << u); ++mask) {
      std::map<ArenaOffset, LineChoice> choices;
      for (std::size_t b = 0; b < u; ++b) {
        choices[lines[b]] = (mask >> b) & 1 ? LineChoice::KeepVolatile
                                            : LineChoice::KeepDurable;
      }
      run(choices);
    }
  } else {
    std::map<ArenaOffset, LineChoice> choices;
    for (ArenaOffset line : lines) {
      choices[line] = LineChoice::KeepDurable;
    }
    run(choices);
    for (ArenaOffset line : lines) {
      choices[line] = LineChoice::KeepVolatile;
    }
    run(choices);
    for (std::uint64_t k = 0; k < cfg_.samples; ++k) {
      for (ArenaOffset line : lines) {
        choices[line] = rng_() & 1 ? LineChoice::KeepVolatile
                                   : LineChoice::KeepDurable;
      }
      run(choices);
    }
  }
  report_.rows.push_back({seq, images, bad});
  report_.points += 1;
  report_.images += images;
  report_.breaches += bad;
}

bool CrashFuzzer::test_image(const std::map<ArenaOffset, LineChoice>& choices,
                             std::uint64_t seq) {
  std::unique_ptr<Arena> img = arena_->crash(choices);
  RefTable rt;
  try {
    recover(*img, rt);
  } catch (const std::exception& ex) {
    breach(seq, std::string("recovery failed: ") + ex.what());
    return false;
  }
  bool ok = true;
  bool any_old = false;
  bool any_new = false;
  for (std::size_t i = 0; i < watched_.size(); ++i) {
    Watched& w = watched_[i];
    const ArenaOffset droot = img->find_root(w.name).value_or(kNullOffset);
    const auto it = std::find_if(
        w.known.rbegin(), w.known.rend(),
        [droot](const auto& entry) { return entry.first == droot; });
    if (it == w.known.rend()) {
      breach(seq, "root '" + w.name + "' recovered to an unknown version");
      ok = false;
      continue;
    }
    if (w.enumerate(*img, droot) != it->second) {
      breach(seq,
             "root '" + w.name + "' diverges from its recorded contents");
      ok = false;
    }
    (droot == committed_tuple_[i] ? any_old : any_new) = true;
  }
  if (cfg_.group_tuples && ok) {
    const bool mixed = any_old && any_new;
    if (tuple_in_flight_ ? mixed : any_new) {
      breach(seq, "multi-root switch recovered partially applied");
      ok = false;
    }
  }
  if (leak_check(*img) != 0) {
    breach(seq, "unreachable live bytes after recovery");
    ok = false;
  }
  return ok;
}

void CrashFuzzer::breach(std::uint64_t seq, const std::string& what) {
  if (report_.notes.size() < 20) {
    report_.notes.push_back("seq=" + std::to_string(seq) + ": " + what);
  }
}

void CrashFuzzer::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) {
    throw IoError("fuzz: cannot write '" + path + "'");
  }
  out << "crash_point,choices_tested,violations\n";
  for (const FuzzPointRow& row : report_.rows) {
    out << row.seq << ',' << row.images << ',' << row.violations << '\n';
  }
}

}  // namespace pmshadow
