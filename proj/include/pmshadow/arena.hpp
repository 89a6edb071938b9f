#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pmshadow/flush_model.hpp"
#include "pmshadow/trace_io.hpp"

namespace pmshadow {

typedef std::uint64_t ArenaOffset;

inline constexpr ArenaOffset kNullOffset = 0;
inline constexpr std::uint64_t kLineSize = 64;

inline constexpr std::uint64_t kRootDirEntries = 64;
inline constexpr std::uint64_t kRootNameSize = 32;
inline constexpr std::uint64_t kRootEntrySize = 40;
inline constexpr std::uint64_t kRootDirBase = 16;

inline constexpr std::uint64_t kUndoCapacity = 256;
inline constexpr std::uint64_t kUndoCountOffset = 2576;
inline constexpr std::uint64_t kUndoCommittedOffset = 2584;
inline constexpr std::uint64_t kUndoRecordsBase = 2592;

inline constexpr std::uint64_t kTableCapacityOffset = 6688;
inline constexpr std::uint64_t kTableRecordsBase = 6704;

// Durability of one cache line relative to the last fence. Lines with no
// tracked entry are CleanDurable: volatile and durable content agree.
enum class LineState : std::uint8_t {
  CleanDurable,
  DirtyVolatile,
  FlushedUnfenced,
};

// Outcome chosen for one uncertain line when composing a crash image.
enum class LineChoice : std::uint8_t {
  KeepDurable,
  KeepVolatile,
};

struct ArenaOptions {
  std::uint64_t size = 64ull << 20;
  std::uint64_t table_capacity = 0;  // 0 derives from size
  FlushModelParams flush_model;
  bool retain_trace = true;
};

struct ArenaCounters {
  std::uint64_t allocs = 0;
  std::uint64_t frees = 0;
  std::uint64_t writes = 0;
  std::uint64_t flushes = 0;
  std::uint64_t fences = 0;
  std::uint64_t alloc_bytes = 0;
};

struct Allocation {
  std::uint64_t size = 0;
  std::uint32_t slot = 0;
};

// Byte arena with simulated persistence. All content lives in one mapped
// region; per-line state tracks what a crash could revert. Writes never
// reach durability until the line is flushed and a fence retires it.
class Arena {
 public:
  using EventHook = std::function<void(const Arena&, const Event&)>;

  static std::unique_ptr<Arena> create(const std::string& path,
                                       const ArenaOptions& options = {});
  static std::unique_ptr<Arena> create_anonymous(const ArenaOptions& options = {});
  static std::unique_ptr<Arena> open_existing(const std::string& path,
                                              const FlushModelParams& model = {});

  ~Arena();
  Arena(const Arena&) = delete;
  Arena& operator=(const Arena&) = delete;

  // Allocation.
  ArenaOffset alloc(std::uint64_t size);
  void free(ArenaOffset offset);
  bool is_live(ArenaOffset offset) const;
  std::uint64_t allocation_size(ArenaOffset offset) const;
  const std::map<ArenaOffset, Allocation>& allocations() const { return live_; }
  // Reinstates a table record for a range recovery proved reachable.
  void resurrect_record(ArenaOffset offset, std::uint64_t size);

  // Data access. Checked writes must target a live allocation, or the root
  // directory and undo log while a commit window is open.
  void write(ArenaOffset offset, const void* src, std::uint64_t size);
  void write_u64(ArenaOffset offset, std::uint64_t value);
  void unchecked_write(ArenaOffset offset, const void* src, std::uint64_t size);
  void unchecked_write_u64(ArenaOffset offset, std::uint64_t value);
  void read(ArenaOffset offset, void* dst, std::uint64_t size) const;
  std::uint64_t read_u64(ArenaOffset offset) const;
  const std::uint8_t* data() const { return base_; }

  // Persistence control.
  void flush(ArenaOffset offset);
  void flush_range(ArenaOffset offset, std::uint64_t size);
  void fence();

  LineState line_state(ArenaOffset offset) const;
  std::vector<ArenaOffset> uncertain_lines() const;
  std::unique_ptr<Arena> crash(const std::map<ArenaOffset, LineChoice>& choices) const;
  std::unique_ptr<Arena> crash_all(LineChoice choice) const;

  // Root directory. Entries pair a fixed-size name with one offset word;
  // offset 0 means the named structure is empty.
  ArenaOffset root_entry_claim(std::string_view name);
  void set_root(std::string_view name, ArenaOffset offset);
  ArenaOffset get_root(std::string_view name) const;
  std::optional<ArenaOffset> find_root(std::string_view name) const;
  std::vector<std::pair<std::string, ArenaOffset>> roots() const;
  ArenaOffset root_entry_field(std::string_view name) const;

  // Commit window and failure-atomic section bookkeeping.
  void commit_begin();
  void commit_end();
  bool in_commit() const { return in_commit_; }
  bool fase_open() const { return fase_open_; }
  void set_fase_open(bool open);

  // Undo log inspection.
  std::uint64_t undo_count() const { return read_u64(kUndoCountOffset); }
  std::uint64_t undo_committed() const { return read_u64(kUndoCommittedOffset); }
  std::pair<ArenaOffset, ArenaOffset> undo_record(std::uint64_t index) const;

  // Trace.
  const std::vector<Event>& trace() const { return trace_; }
  void clear_trace() { trace_.clear(); }
  void set_event_hook(EventHook hook) { hook_ = std::move(hook); }

  // Introspection.
  std::uint64_t size() const { return size_; }
  std::uint64_t data_start() const { return data_start_; }
  std::uint64_t table_capacity() const { return table_capacity_; }
  std::uint64_t live_bytes() const { return live_bytes_; }
  std::uint64_t peak_live_bytes() const { return peak_live_bytes_; }
  const ArenaCounters& counters() const { return counters_; }
  const FlushModelParams& flush_model() const { return flush_model_; }
  double sim_time_ns() const { return sim_time_; }
  std::uint64_t pending_flushes() const { return pending_flushes_; }

 private:
  struct LineRec {
    LineState state = LineState::DirtyVolatile;
    std::uint8_t snapshot[kLineSize];
  };

  Arena() = default;
  void init_new(const ArenaOptions& options);
  void map_file(const std::string& path, std::uint64_t size, bool fresh);
  void load_header();
  void rebuild_allocator();
  void carve_hole(ArenaOffset offset, std::uint64_t size);
  void insert_hole(ArenaOffset offset, std::uint64_t size);
  std::uint32_t claim_slot();
  std::uint64_t record_addr(std::uint32_t slot) const;
  void apply_write(ArenaOffset offset, const void* src, std::uint64_t size);
  void emit(EventKind kind, std::uint64_t offset, std::uint64_t size);
  void touch_line(std::uint64_t line_base);
  int find_root_index(std::string_view name) const;
  void check_writable(ArenaOffset offset, std::uint64_t size) const;

  std::uint8_t* base_ = nullptr;
  std::uint64_t size_ = 0;
  int fd_ = -1;
  FlushModelParams flush_model_;
  std::uint64_t table_capacity_ = 0;
  std::uint64_t data_start_ = 0;

  std::map<ArenaOffset, Allocation> live_;
  std::map<ArenaOffset, std::uint64_t> holes_;
  std::set<std::pair<std::uint64_t, ArenaOffset>> holes_by_size_;
  std::vector<std::uint32_t> free_slots_;
  std::uint32_t next_slot_ = 0;
  struct LimboEntry {
    ArenaOffset offset;
    std::uint64_t size;
    std::uint32_t slot;
  };
  std::vector<LimboEntry> limbo_;

  std::unordered_map<std::uint64_t, LineRec> line_states_;
  std::uint64_t pending_flushes_ = 0;
  double sim_time_ = 0.0;

  std::uint64_t seq_ = 0;
  std::vector<Event> trace_;
  bool retain_trace_ = true;
  EventHook hook_;

  bool in_commit_ = false;
  bool fase_open_ = false;

  ArenaCounters counters_;
  std::uint64_t live_bytes_ = 0;
  std::uint64_t peak_live_bytes_ = 0;
};

inline ArenaOffset pm_alloc(Arena& a, std::uint64_t size) { return a.alloc(size); }
inline void pm_free(Arena& a, ArenaOffset offset) { a.free(offset); }
inline void pm_write(Arena& a, ArenaOffset offset, const void* src,
                     std::uint64_t size) {
  a.write(offset, src, size);
}
inline void pm_flush(Arena& a, ArenaOffset offset) { a.flush(offset); }
inline void pm_fence(Arena& a) { a.fence(); }

// Opens or creates a file-backed arena and brings it to a consistent state.
std::unique_ptr<Arena> create_arena(const std::string& path,
                                    const ArenaOptions& options = {});

}  // namespace pmshadow
