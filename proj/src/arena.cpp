#include "pmshadow/arena.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>

#include "pmshadow/errors.hpp"

namespace pmshadow {

static_assert(kRootDirBase + kRootDirEntries * kRootEntrySize == kUndoCountOffset);
static_assert(kUndoRecordsBase + kUndoCapacity * 16 == kTableCapacityOffset);
static_assert(kUndoRecordsBase % 16 == 0);
static_assert(kTableRecordsBase % 16 == 0);
static_assert((kRootDirBase + kRootNameSize) % 8 == 0 && kRootEntrySize % 8 == 0);

namespace {

constexpr std::uint64_t kMinArenaSize = kTableRecordsBase + 16 * 16 + 2 * kLineSize;
constexpr char kMagic[8] = {'M', 'O', 'D', 'A', 'R', 'E', 'N', 'A'};
constexpr std::uint64_t kFormatVersion = 1;

std::uint64_t round8(std::uint64_t n) { return (n + 7) & ~std::uint64_t{7}; }
std::uint64_t align_line(std::uint64_t n) {
  return (n + kLineSize - 1) & ~(kLineSize - 1);
}
std::uint64_t line_of(std::uint64_t off) { return off & ~(kLineSize - 1); }

std::uint64_t load_u64(const std::uint8_t* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return v;
}

void store_u64(std::uint8_t* p, std::uint64_t v) { std::memcpy(p, &v, 8); }

}  // namespace

std::unique_ptr<Arena> Arena::create(const std::string& path,
                                     const ArenaOptions& options) {
  auto a = std::unique_ptr<Arena>(new Arena());
  a->map_file(path, options.size, true);
  a->init_new(options);
  return a;
}

std::unique_ptr<Arena> Arena::create_anonymous(const ArenaOptions& options) {
  auto a = std::unique_ptr<Arena>(new Arena());
  void* mem = ::mmap(nullptr, options.size, PROT_READ | PROT_WRITE,
                     MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  if (mem == MAP_FAILED) {
    throw IoError("arena: anonymous mapping failed");
  }
  a->base_ = static_cast<std::uint8_t*>(mem);
  a->size_ = options.size;
  a->init_new(options);
  return a;
}

std::unique_ptr<Arena> Arena::open_existing(const std::string& path,
                                            const FlushModelParams& model) {
  auto a = std::unique_ptr<Arena>(new Arena());
  struct stat st;
  if (::stat(path.c_str(), &st) != 0) {
    throw IoError("arena: cannot stat " + path);
  }
  a->map_file(path, static_cast<std::uint64_t>(st.st_size), false);
  a->flush_model_ = model;
  a->load_header();
  a->rebuild_allocator();
  return a;
}

Arena::~Arena() {
  if (base_ != nullptr) {
    if (fd_ >= 0) {
      ::msync(base_, size_, MS_SYNC);
    }
    ::munmap(base_, size_);
  }
  if (fd_ >= 0) {
    ::close(fd_);
  }
}

void Arena::map_file(const std::string& path, std::uint64_t size, bool fresh) {
  if (size < kMinArenaSize) {
    throw MisuseError("arena: size below minimum");
  }
  const int flags = fresh ? (O_RDWR | O_CREAT | O_TRUNC) : O_RDWR;
  fd_ = ::open(path.c_str(), flags, 0644);
  if (fd_ < 0) {
    throw IoError("arena: cannot open " + path);
  }
  if (fresh && ::ftruncate(fd_, static_cast<off_t>(size)) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw IoError("arena: cannot size " + path);
  }
  void* mem = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, fd_, 0);
  if (mem == MAP_FAILED) {
    ::close(fd_);
    fd_ = -1;
    throw IoError("arena: cannot map " + path);
  }
  base_ = static_cast<std::uint8_t*>(mem);
  size_ = size;
}

void Arena::init_new(const ArenaOptions& options) {
  if (size_ < kMinArenaSize) {
    throw MisuseError("arena: size below minimum");
  }
  flush_model_ = options.flush_model;
  retain_trace_ = options.retain_trace;

  std::uint64_t capacity = options.table_capacity;
  if (capacity == 0) {
    const std::uint64_t derived = std::max<std::uint64_t>(64, size_ / 384);
    const std::uint64_t budget = size_ - size_ / 4;
    const std::uint64_t fit =
        budget > kTableRecordsBase ? (budget - kTableRecordsBase) / 16 : 0;
    capacity = std::min(derived, fit);
  }
  const std::uint64_t table_end = kTableRecordsBase + 16 * capacity;
  const std::uint64_t start = align_line(table_end);
  if (capacity < 16 || start + kLineSize > size_) {
    throw MisuseError("arena: allocation table does not fit");
  }
  table_capacity_ = capacity;
  data_start_ = start;

  std::memcpy(base_, kMagic, 8);
  store_u64(base_ + 8, kFormatVersion);
  store_u64(base_ + kTableCapacityOffset, capacity);
  insert_hole(data_start_, size_ - data_start_);
}

void Arena::load_header() {
  if (size_ < kMinArenaSize || std::memcmp(base_, kMagic, 8) != 0) {
    throw CorruptArenaError("arena: bad magic");
  }
  if (load_u64(base_ + 8) != kFormatVersion) {
    throw CorruptArenaError("arena: unsupported version");
  }
  const std::uint64_t capacity = load_u64(base_ + kTableCapacityOffset);
  const std::uint64_t start = align_line(kTableRecordsBase + 16 * capacity);
  if (capacity < 16 || start + kLineSize > size_) {
    throw CorruptArenaError("arena: table capacity out of range");
  }
  table_capacity_ = capacity;
  data_start_ = start;
}

void Arena::rebuild_allocator() {
  live_.clear();
  holes_.clear();
  holes_by_size_.clear();
  free_slots_.clear();
  limbo_.clear();
  next_slot_ = 0;

  std::vector<bool> used(table_capacity_, false);
  for (std::uint64_t slot = 0; slot < table_capacity_; ++slot) {
    const std::uint64_t rec = record_addr(static_cast<std::uint32_t>(slot));
    const std::uint64_t off = load_u64(base_ + rec);
    const std::uint64_t sz = load_u64(base_ + rec + 8);
    if (sz == 0) {
      continue;
    }
    if (off < data_start_ || off + sz > size_ || off % 8 != 0 || sz % 8 != 0) {
      throw CorruptArenaError("arena: allocation record out of range");
    }
    if (!live_.emplace(off, Allocation{sz, static_cast<std::uint32_t>(slot)})
             .second) {
      throw CorruptArenaError("arena: duplicate allocation record");
    }
    used[slot] = true;
    next_slot_ = std::max(next_slot_, static_cast<std::uint32_t>(slot + 1));
  }

  live_bytes_ = 0;
  std::uint64_t cursor = data_start_;
  for (const auto& [off, info] : live_) {
    if (off < cursor) {
      throw CorruptArenaError("arena: overlapping allocation records");
    }
    if (off > cursor) {
      insert_hole(cursor, off - cursor);
    }
    cursor = off + info.size;
    live_bytes_ += info.size;
  }
  if (cursor < size_) {
    insert_hole(cursor, size_ - cursor);
  }
  peak_live_bytes_ = live_bytes_;

  for (std::uint32_t slot = next_slot_; slot-- > 0;) {
    if (!used[slot]) {
      free_slots_.push_back(slot);
    }
  }
}

void Arena::insert_hole(ArenaOffset offset, std::uint64_t size) {
  auto next = holes_.lower_bound(offset);
  if (next != holes_.begin()) {
    auto prev = std::prev(next);
    if (prev->first + prev->second == offset) {
      offset = prev->first;
      size += prev->second;
      holes_by_size_.erase({prev->second, prev->first});
      holes_.erase(prev);
    }
  }
  if (next != holes_.end() && offset + size == next->first) {
    size += next->second;
    holes_by_size_.erase({next->second, next->first});
    holes_.erase(next);
  }
  holes_.emplace(offset, size);
  holes_by_size_.emplace(size, offset);
}

void Arena::carve_hole(ArenaOffset offset, std::uint64_t size) {
  auto it = holes_.upper_bound(offset);
  if (it == holes_.begin()) {
    throw CorruptionError("arena: range is not free");
  }
  --it;
  const ArenaOffset hoff = it->first;
  const std::uint64_t hsize = it->second;
  if (offset < hoff || offset + size > hoff + hsize) {
    throw CorruptionError("arena: range is not free");
  }
  holes_by_size_.erase({hsize, hoff});
  holes_.erase(it);
  if (offset > hoff) {
    holes_.emplace(hoff, offset - hoff);
    holes_by_size_.emplace(offset - hoff, hoff);
  }
  const std::uint64_t tail = hoff + hsize - (offset + size);
  if (tail > 0) {
    holes_.emplace(offset + size, tail);
    holes_by_size_.emplace(tail, offset + size);
  }
}

std::uint32_t Arena::claim_slot() {
  if (!free_slots_.empty()) {
    const std::uint32_t slot = free_slots_.back();
    free_slots_.pop_back();
    return slot;
  }
  if (next_slot_ >= table_capacity_) {
    throw CapacityError("arena: allocation table full");
  }
  return next_slot_++;
}

std::uint64_t Arena::record_addr(std::uint32_t slot) const {
  return kTableRecordsBase + 16ull * slot;
}

void Arena::emit(EventKind kind, std::uint64_t offset, std::uint64_t size) {
  Event e{seq_++, kind, offset, size};
  if (retain_trace_) {
    trace_.push_back(e);
  }
  if (hook_) {
    hook_(*this, e);
  }
}

void Arena::touch_line(std::uint64_t line_base) {
  auto [it, fresh] = line_states_.try_emplace(line_base);
  if (fresh) {
    std::memcpy(it->second.snapshot, base_ + line_base, kLineSize);
  }
  it->second.state = LineState::DirtyVolatile;
}

void Arena::apply_write(ArenaOffset offset, const void* src, std::uint64_t size) {
  const std::uint64_t first = line_of(offset);
  const std::uint64_t last = line_of(offset + size - 1);
  for (std::uint64_t l = first; l <= last; l += kLineSize) {
    touch_line(l);
  }
  std::memcpy(base_ + offset, src, size);
  counters_.writes++;
  emit(EventKind::Write, offset, size);
}

void Arena::check_writable(ArenaOffset offset, std::uint64_t size) const {
  if (size == 0) {
    throw MisuseError("arena: empty write");
  }
  if (offset + size > size_ || offset + size < offset) {
    throw WildWriteError("arena: write out of bounds");
  }
  if (offset >= data_start_) {
    auto it = live_.upper_bound(offset);
    if (it != live_.begin()) {
      --it;
      if (offset + size <= it->first + it->second.size) {
        return;
      }
    }
    throw WildWriteError("arena: write outside any live allocation");
  }
  if (offset >= kRootDirBase && offset + size <= kUndoCountOffset) {
    if (!in_commit_) {
      throw WildWriteError("arena: root directory write outside a commit");
    }
    return;
  }
  if (offset >= kUndoCountOffset && offset + size <= kTableCapacityOffset) {
    if (!in_commit_) {
      throw WildWriteError("arena: undo log write outside a commit");
    }
    return;
  }
  throw WildWriteError("arena: write into reserved region");
}

void Arena::write(ArenaOffset offset, const void* src, std::uint64_t size) {
  check_writable(offset, size);
  apply_write(offset, src, size);
}

void Arena::write_u64(ArenaOffset offset, std::uint64_t value) {
  if (offset % 8 != 0) {
    throw MisuseError("arena: unaligned word write");
  }
  write(offset, &value, 8);
}

void Arena::unchecked_write(ArenaOffset offset, const void* src,
                            std::uint64_t size) {
  if (size == 0 || offset + size > size_ || offset + size < offset) {
    throw MisuseError("arena: unchecked write out of bounds");
  }
  apply_write(offset, src, size);
}

void Arena::unchecked_write_u64(ArenaOffset offset, std::uint64_t value) {
  if (offset % 8 != 0) {
    throw MisuseError("arena: unaligned word write");
  }
  unchecked_write(offset, &value, 8);
}

void Arena::read(ArenaOffset offset, void* dst, std::uint64_t size) const {
  if (offset + size > size_ || offset + size < offset) {
    throw MisuseError("arena: read out of bounds");
  }
  std::memcpy(dst, base_ + offset, size);
}

std::uint64_t Arena::read_u64(ArenaOffset offset) const {
  if (offset % 8 != 0) {
    throw MisuseError("arena: unaligned word read");
  }
  if (offset + 8 > size_) {
    throw MisuseError("arena: read out of bounds");
  }
  return load_u64(base_ + offset);
}

ArenaOffset Arena::alloc(std::uint64_t size) {
  if (size == 0) {
    throw MisuseError("arena: zero-size allocation");
  }
  const std::uint64_t rsize = round8(size);
  auto it = holes_by_size_.lower_bound({rsize, 0});
  if (it == holes_by_size_.end()) {
    throw OutOfMemoryError("arena: no free range large enough");
  }
  const std::uint32_t slot = claim_slot();
  const auto [hsize, hoff] = *it;
  holes_by_size_.erase(it);
  holes_.erase(hoff);
  if (hsize > rsize) {
    holes_.emplace(hoff + rsize, hsize - rsize);
    holes_by_size_.emplace(hsize - rsize, hoff + rsize);
  }

  live_.emplace(hoff, Allocation{rsize, slot});
  live_bytes_ += rsize;
  peak_live_bytes_ = std::max(peak_live_bytes_, live_bytes_);
  counters_.allocs++;
  counters_.alloc_bytes += rsize;
  emit(EventKind::Alloc, hoff, rsize);

  const std::uint64_t rec = record_addr(slot);
  std::uint8_t words[16];
  store_u64(words, hoff);
  store_u64(words + 8, rsize);
  apply_write(rec, words, 16);
  flush(rec);
  return hoff;
}

void Arena::free(ArenaOffset offset) {
  auto it = live_.find(offset);
  if (it == live_.end()) {
    throw InvalidFreeError("arena: free of non-live offset");
  }
  const std::uint64_t size = it->second.size;
  const std::uint32_t slot = it->second.slot;

  const std::uint64_t zero = 0;
  apply_write(record_addr(slot) + 8, &zero, 8);
  flush(record_addr(slot));

  live_.erase(it);
  live_bytes_ -= size;
  counters_.frees++;
  limbo_.push_back({offset, size, slot});
  emit(EventKind::Free, offset, size);
}

bool Arena::is_live(ArenaOffset offset) const { return live_.count(offset) != 0; }

std::uint64_t Arena::allocation_size(ArenaOffset offset) const {
  auto it = live_.find(offset);
  if (it == live_.end()) {
    throw NotFoundError("arena: offset is not a live allocation");
  }
  return it->second.size;
}

void Arena::resurrect_record(ArenaOffset offset, std::uint64_t size) {
  if (offset % 8 != 0 || size == 0 || size % 8 != 0 || offset < data_start_ ||
      offset + size > size_) {
    throw CorruptionError("arena: bad resurrection range");
  }
  auto it = live_.upper_bound(offset);
  if (it != live_.begin()) {
    auto prev = std::prev(it);
    if (prev->first + prev->second.size > offset) {
      throw CorruptionError("arena: resurrection overlaps live allocation");
    }
  }
  if (it != live_.end() && it->first < offset + size) {
    throw CorruptionError("arena: resurrection overlaps live allocation");
  }

  const std::uint32_t slot = claim_slot();
  carve_hole(offset, size);
  live_.emplace(offset, Allocation{size, slot});
  live_bytes_ += size;
  peak_live_bytes_ = std::max(peak_live_bytes_, live_bytes_);
  emit(EventKind::Alloc, offset, size);

  const std::uint64_t rec = record_addr(slot);
  std::uint8_t words[16];
  store_u64(words, offset);
  store_u64(words + 8, size);
  apply_write(rec, words, 16);
  flush(rec);
}

void Arena::flush(ArenaOffset offset) {
  if (offset >= size_) {
    throw MisuseError("arena: flush out of bounds");
  }
  const std::uint64_t line = line_of(offset);
  auto it = line_states_.find(line);
  if (it == line_states_.end() || it->second.state != LineState::DirtyVolatile) {
    return;
  }
  it->second.state = LineState::FlushedUnfenced;
  pending_flushes_++;
  counters_.flushes++;
  emit(EventKind::Flush, line, kLineSize);
}

void Arena::flush_range(ArenaOffset offset, std::uint64_t size) {
  if (size == 0) {
    return;
  }
  const std::uint64_t first = line_of(offset);
  const std::uint64_t last = line_of(offset + size - 1);
  for (std::uint64_t l = first; l <= last; l += kLineSize) {
    flush(l);
  }
}

void Arena::fence() {
  for (auto it = line_states_.begin(); it != line_states_.end();) {
    if (it->second.state == LineState::FlushedUnfenced) {
      it = line_states_.erase(it);
    } else {
      ++it;
    }
  }
  sim_time_ += group_latency(pending_flushes_, flush_model_);
  pending_flushes_ = 0;
  for (const auto& entry : limbo_) {
    insert_hole(entry.offset, entry.size);
    free_slots_.push_back(entry.slot);
  }
  limbo_.clear();
  counters_.fences++;
  emit(EventKind::Fence, 0, 0);
}

LineState Arena::line_state(ArenaOffset offset) const {
  auto it = line_states_.find(line_of(offset));
  return it == line_states_.end() ? LineState::CleanDurable : it->second.state;
}

std::vector<ArenaOffset> Arena::uncertain_lines() const {
  std::vector<ArenaOffset> lines;
  lines.reserve(line_states_.size());
  for (const auto& [line, rec] : line_states_) {
    lines.push_back(line);
  }
  std::sort(lines.begin(), lines.end());
  return lines;
}

std::unique_ptr<Arena> Arena::crash(
    const std::map<ArenaOffset, LineChoice>& choices) const {
  auto img = std::unique_ptr<Arena>(new Arena());
  void* mem = ::mmap(nullptr, size_, PROT_READ | PROT_WRITE,
                     MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  if (mem == MAP_FAILED) {
    throw IoError("arena: crash image mapping failed");
  }
  img->base_ = static_cast<std::uint8_t*>(mem);
  img->size_ = size_;
  img->flush_model_ = flush_model_;
  img->retain_trace_ = retain_trace_;
  std::memcpy(img->base_, base_, size_);
  for (const auto& [line, rec] : line_states_) {
    auto it = choices.find(line);
    if (it == choices.end()) {
      throw MisuseError("arena: crash image lacks a choice for an uncertain line");
    }
    if (it->second == LineChoice::KeepDurable) {
      std::memcpy(img->base_ + line, rec.snapshot, kLineSize);
    }
  }
  img->load_header();
  img->rebuild_allocator();
  return img;
}

std::unique_ptr<Arena> Arena::crash_all(LineChoice choice) const {
  std::map<ArenaOffset, LineChoice> choices;
  for (const auto& [line, rec] : line_states_) {
    choices.emplace(line, choice);
  }
  return crash(choices);
}

int Arena::find_root_index(std::string_view name) const {
  for (std::uint64_t i = 0; i < kRootDirEntries; ++i) {
    const std::uint8_t* entry = base_ + kRootDirBase + i * kRootEntrySize;
    std::uint64_t len = 0;
    while (len < kRootNameSize && entry[len] != 0) {
      ++len;
    }
    if (len == 0) {
      continue;
    }
    if (name.size() == len && std::memcmp(entry, name.data(), len) == 0) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

ArenaOffset Arena::root_entry_claim(std::string_view name) {
  if (!in_commit_) {
    throw MisuseError("arena: root directory writes require an open commit");
  }
  if (name.empty() || name.size() > kRootNameSize) {
    throw MisuseError("arena: root name must be 1..32 bytes");
  }
  int idx = find_root_index(name);
  if (idx < 0) {
    for (std::uint64_t i = 0; i < kRootDirEntries; ++i) {
      const std::uint8_t* entry = base_ + kRootDirBase + i * kRootEntrySize;
      if (entry[0] == 0) {
        idx = static_cast<int>(i);
        break;
      }
    }
    if (idx < 0) {
      throw CapacityError("arena: root directory full");
    }
    std::uint8_t padded[kRootNameSize] = {};
    std::memcpy(padded, name.data(), name.size());
    const std::uint64_t entry = kRootDirBase + idx * kRootEntrySize;
    for (std::uint64_t w = 0; w < kRootNameSize; w += 8) {
      write_u64(entry + w, load_u64(padded + w));
      flush(entry + w);
    }
  }
  return kRootDirBase + idx * kRootEntrySize + kRootNameSize;
}

void Arena::set_root(std::string_view name, ArenaOffset offset) {
  const ArenaOffset field = root_entry_claim(name);
  write_u64(field, offset);
  flush(field);
}

ArenaOffset Arena::get_root(std::string_view name) const {
  const int idx = find_root_index(name);
  if (idx < 0) {
    throw NotFoundError("arena: no root named " + std::string(name));
  }
  return load_u64(base_ + kRootDirBase + idx * kRootEntrySize + kRootNameSize);
}

std::optional<ArenaOffset> Arena::find_root(std::string_view name) const {
  const int idx = find_root_index(name);
  if (idx < 0) {
    return std::nullopt;
  }
  return load_u64(base_ + kRootDirBase + idx * kRootEntrySize + kRootNameSize);
}

std::vector<std::pair<std::string, ArenaOffset>> Arena::roots() const {
  std::vector<std::pair<std::string, ArenaOffset>> out;
  for (std::uint64_t i = 0; i < kRootDirEntries; ++i) {
    const std::uint8_t* entry = base_ + kRootDirBase + i * kRootEntrySize;
    std::uint64_t len = 0;
    while (len < kRootNameSize && entry[len] != 0) {
      ++len;
    }
    if (len == 0) {
      continue;
    }
    out.emplace_back(std::string(reinterpret_cast<const char*>(entry), len),
                     load_u64(entry + kRootNameSize));
  }
  return out;
}

ArenaOffset Arena::root_entry_field(std::string_view name) const {
  const int idx = find_root_index(name);
  if (idx < 0) {
    throw NotFoundError("arena: no root named " + std::string(name));
  }
  return kRootDirBase + idx * kRootEntrySize + kRootNameSize;
}

void Arena::commit_begin() {
  if (in_commit_) {
    throw MisuseError("arena: commit window already open");
  }
  in_commit_ = true;
  emit(EventKind::CommitBegin, 0, 0);
}

void Arena::commit_end() {
  if (!in_commit_) {
    throw MisuseError("arena: no commit window open");
  }
  in_commit_ = false;
  emit(EventKind::CommitEnd, 0, 0);
}

void Arena::set_fase_open(bool open) {
  if (open && fase_open_) {
    throw MisuseError("arena: failure-atomic section already open");
  }
  if (!open && !fase_open_) {
    throw MisuseError("arena: no failure-atomic section open");
  }
  fase_open_ = open;
}

std::pair<ArenaOffset, ArenaOffset> Arena::undo_record(std::uint64_t index) const {
  if (index >= kUndoCapacity) {
    throw MisuseError("arena: undo record index out of range");
  }
  const std::uint64_t rec = kUndoRecordsBase + 16 * index;
  return {load_u64(base_ + rec), load_u64(base_ + rec + 8)};
}

}  // namespace pmshadow
