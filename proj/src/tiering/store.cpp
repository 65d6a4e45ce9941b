#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "extent_codec.hpp"
#include "kvdrive/binary_io.hpp"
#include "kvdrive/tiering.hpp"

namespace kvdrive {

namespace detail {

void decode_extent(std::span<const std::byte> bytes, const Extent& extent, std::size_t dim,
                   std::span<const std::uint32_t> slots, std::vector<KVEntry>& out) {
  ByteCursor cur(bytes);
  const auto n = cur.get<std::uint32_t>();
  require(n == extent.token_ids.size(), ErrorCode::kFormat,
          "extent " + std::to_string(extent.extent_id) + " of " + extent.owner.str() +
              " has a corrupt header");
  for (std::uint32_t i = 0; i < n; ++i) {
    require(cur.get<std::uint32_t>() == extent.token_ids[i], ErrorCode::kFormat,
            "extent token table disagrees with the layout");
  }
  const std::size_t payload = cur.position();
  const std::size_t stride = 2 * dim * sizeof(float);
  for (std::uint32_t slot : slots) {
    require(slot < n, ErrorCode::kFormat, "slot out of range");
    ByteCursor entry(bytes.subspan(payload + slot * stride, stride));
    KVEntry e;
    e.token_index = extent.token_ids[slot];
    e.key.resize(dim);
    e.value.resize(dim);
    entry.get_floats(e.key);
    entry.get_floats(e.value);
    out.push_back(std::move(e));
  }
}

std::vector<std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>>> group_by_extent(
    const TieredStore& store, const std::vector<TokenSet>& wanted) {
  require(wanted.size() == store.stream_count(), ErrorCode::kInvalidArgument,
          "request must list tokens for every (layer, head)");
  std::vector<std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>>> out(wanted.size());
  for (std::size_t s = 0; s < wanted.size(); ++s) {
    std::map<std::uint32_t, std::vector<std::uint32_t>> groups;
    for (TokenIndex t : wanted[s]) {
      const TokenLocation& loc = store.locate(s, t);
      groups[loc.extent].push_back(loc.slot);
    }
    out[s].assign(groups.begin(), groups.end());
  }
  return out;
}

void sort_entries(std::vector<KVEntry>& entries) {
  std::sort(entries.begin(), entries.end(),
            [](const KVEntry& a, const KVEntry& b) { return a.token_index < b.token_index; });
}

}  // namespace detail

namespace {

constexpr std::string_view kIndexSectionMagic = "KVIS";

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

}  // namespace

// "KVDX" u32 version u32 L u32 H u32 d u32 extent_capacity_tokens
// { u16 layer u16 head u64 offset u64 length } per segment, then the segments
// at 4 KiB aligned offsets. Extent: u32 n, u32 token_id[n], n x (key, value).
// An optional "KVIS" u32 count + KVIX index blobs follows the last segment.
void write_store(const std::filesystem::path& path, const std::vector<Matrix>& keys,
                 const std::vector<Matrix>& values, const LayoutPlan& plan,
                 const std::vector<HierIndex>* indexes) {
  plan.validate();
  require(keys.size() == plan.stream_count() && values.size() == plan.stream_count(),
          ErrorCode::kInvalidArgument, "store needs keys and values for every (layer, head)");
  for (std::size_t s = 0; s < keys.size(); ++s) {
    require(keys[s].rows() == plan.context_length && values[s].rows() == plan.context_length,
            ErrorCode::kInvalidArgument, "layout does not cover the entries of " +
                                             plan.segments[s].owner.str());
    if (keys[s].dim() != plan.dim) throw DimensionError(s, plan.dim, keys[s].dim());
    if (values[s].dim() != plan.dim) throw DimensionError(s, plan.dim, values[s].dim());
  }
  if (indexes != nullptr) {
    require(indexes->size() == plan.stream_count(), ErrorCode::kInvalidArgument,
            "index section needs one index per (layer, head)");
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot create " + path.string());
  BinaryWriter w(os);
  w.put_magic("KVDX");
  w.put<std::uint32_t>(kStoreFormatVersion);
  w.put<std::uint32_t>(plan.layers);
  w.put<std::uint32_t>(plan.heads);
  w.put<std::uint32_t>(plan.dim);
  w.put<std::uint32_t>(plan.extent_capacity_tokens);
  for (const Segment& seg : plan.segments) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(seg.owner.layer));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(seg.owner.head));
    w.put<std::uint64_t>(seg.file_offset);
    w.put<std::uint64_t>(seg.length);
  }
  for (std::size_t s = 0; s < plan.segments.size(); ++s) {
    const Segment& seg = plan.segments[s];
    while (w.written() < seg.file_offset) w.put<std::uint8_t>(0);
    for (const Extent& e : seg.extents) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(e.token_ids.size()));
      for (TokenIndex t : e.token_ids) w.put<std::uint32_t>(t);
      for (TokenIndex t : e.token_ids) {
        w.put_floats(keys[s].row(t));
        w.put_floats(values[s].row(t));
      }
    }
  }
  if (indexes != nullptr) {
    w.pad_to(kSegmentAlignment);
    w.put_magic(kIndexSectionMagic);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(indexes->size()));
    for (const HierIndex& index : *indexes) {
      std::ostringstream blob;
      write_index(blob, index);
      const std::string bytes = blob.str();
      w.put<std::uint64_t>(bytes.size());
      os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
  }
  os.flush();
  w.check();
}

void write_store(const std::filesystem::path& path, const DecodingTrace& trace,
                 const LayoutPlan& plan, const std::vector<HierIndex>* indexes) {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;
  for (std::size_t s = 0; s < trace.stream_count(); ++s) {
    keys.push_back(trace.keys(s));
    values.push_back(trace.values(s));
  }
  write_store(path, keys, values, plan, indexes);
}

TieredStore::~TieredStore() {
  if (fd_ >= 0) ::close(fd_);
}

void TieredStore::read_at(std::uint64_t offset, std::uint64_t length, std::byte* out) const {
  std::uint64_t done = 0;
  while (done < length) {
    const ssize_t got = ::pread(fd_, out + done, length - done, static_cast<off_t>(offset + done));
    if (got < 0 && errno == EINTR) continue;
    require(got > 0, ErrorCode::kIo,
            "read of " + path_.string() + " failed: " + (got < 0 ? std::strerror(errno) : "EOF"));
    done += static_cast<std::uint64_t>(got);
  }
}

const TokenLocation& TieredStore::locate(std::size_t stream, TokenIndex token) const {
  require(stream < locations_.size(), ErrorCode::kNotFound,
          "stream " + std::to_string(stream) + " not in store");
  require(token < plan_.context_length, ErrorCode::kNotFound,
          "token " + std::to_string(token) + " not in store");
  return locations_[stream][token];
}

std::shared_ptr<TieredStore> TieredStore::open(const std::filesystem::path& path) {
  std::shared_ptr<TieredStore> store(new TieredStore());
  store->path_ = path;
  store->fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  require(store->fd_ >= 0, ErrorCode::kIo, "cannot open " + path.string());
  std::error_code ec;
  const std::uint64_t file_size = std::filesystem::file_size(path, ec);
  require(!ec, ErrorCode::kIo, "cannot stat " + path.string());

  std::ifstream is(path, std::ios::binary);
  BinaryReader r(is, "store " + path.filename().string());
  r.expect_magic("KVDX");
  require(r.get<std::uint32_t>() == kStoreFormatVersion, ErrorCode::kFormat,
          "unsupported store version");
  LayoutPlan& plan = store->plan_;
  plan.layers = r.get<std::uint32_t>();
  plan.heads = r.get<std::uint32_t>();
  plan.dim = r.get<std::uint32_t>();
  plan.extent_capacity_tokens = r.get<std::uint32_t>();
  const std::uint64_t streams = static_cast<std::uint64_t>(plan.layers) * plan.heads;
  require(streams >= 1 && streams * 20 + 24 <= file_size && plan.dim >= 1 && plan.dim <= 65536 &&
              plan.extent_capacity_tokens >= 1,
          ErrorCode::kFormat, "implausible store header");
  for (std::uint64_t s = 0; s < streams; ++s) {
    Segment seg;
    seg.owner.layer = r.get<std::uint16_t>();
    seg.owner.head = r.get<std::uint16_t>();
    seg.file_offset = r.get<std::uint64_t>();
    seg.length = r.get<std::uint64_t>();
    require(seg.file_offset + seg.length <= file_size && seg.file_offset + seg.length >= seg.file_offset,
            ErrorCode::kFormat, "segment " + seg.owner.str() + " extends past end of file");
    plan.segments.push_back(std::move(seg));
  }

  std::vector<std::byte> header(4 + 4ull * plan.extent_capacity_tokens);
  for (Segment& seg : plan.segments) {
    std::uint64_t cursor = 0;
    while (cursor < seg.length) {
      require(seg.length - cursor >= 4, ErrorCode::kFormat, "truncated extent header");
      store->read_at(seg.file_offset + cursor, 4, header.data());
      const auto n = ByteCursor(std::span(header.data(), 4)).get<std::uint32_t>();
      require(n >= 1 && n <= plan.extent_capacity_tokens, ErrorCode::kFormat,
              "extent size out of range in " + seg.owner.str());
      Extent e;
      e.extent_id = static_cast<std::uint32_t>(seg.extents.size());
      e.owner = seg.owner;
      e.byte_offset = cursor;
      e.byte_length = extent_bytes(n, plan.dim);
      require(cursor + e.byte_length <= seg.length, ErrorCode::kFormat, "extent exceeds its segment");
      store->read_at(seg.file_offset + cursor + 4, 4ull * n, header.data());
      ByteCursor ids(std::span(header.data(), 4ull * n));
      e.token_ids.resize(n);
      for (auto& t : e.token_ids) t = ids.get<std::uint32_t>();
      cursor += e.byte_length;
      seg.extents.push_back(std::move(e));
    }
  }
  std::uint64_t tokens = 0;
  for (const Extent& e : plan.segments.front().extents) tokens += e.token_ids.size();
  plan.context_length = static_cast<std::uint32_t>(tokens);
  plan.validate();
  store->locations_ = plan.locations();

  const std::uint64_t tail = align_up(plan.file_size(), kSegmentAlignment);
  if (file_size > plan.file_size()) {
    require(file_size >= tail + 8, ErrorCode::kFormat, "trailing bytes after the last segment");
    is.seekg(static_cast<std::streamoff>(tail));
    BinaryReader ir(is, "index section");
    ir.expect_magic(kIndexSectionMagic);
    const auto count = ir.get<std::uint32_t>();
    require(count == streams, ErrorCode::kFormat, "index section needs one index per stream");
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto bytes = ir.get<std::uint64_t>();
      require(bytes <= file_size, ErrorCode::kFormat, "implausible index blob size");
      std::string blob(bytes, '\0');
      is.read(blob.data(), static_cast<std::streamsize>(bytes));
      require(is.gcount() == static_cast<std::streamsize>(bytes), ErrorCode::kFormat,
              "index section: truncated input");
      std::istringstream bs(blob);
      store->indexes_.push_back(read_index(bs));
      require(store->indexes_.back().token_count() == plan.context_length &&
                  store->indexes_.back().dim() == plan.dim,
              ErrorCode::kFormat, "index does not match the store");
    }
  }
  return store;
}

std::vector<std::vector<KVEntry>> TieredStore::read_entries(const std::vector<TokenSet>& wanted) const {
  const auto groups = detail::group_by_extent(*this, wanted);
  std::vector<std::vector<KVEntry>> out(groups.size());
  std::vector<std::byte> buffer;
  for (std::size_t s = 0; s < groups.size(); ++s) {
    const Segment& seg = plan_.segments[s];
    for (const auto& [extent_id, slots] : groups[s]) {
      const Extent& e = seg.extents[extent_id];
      buffer.resize(e.byte_length);
      read_at(seg.file_offset + e.byte_offset, e.byte_length, buffer.data());
      detail::decode_extent(buffer, e, plan_.dim, slots, out[s]);
    }
    detail::sort_entries(out[s]);
  }
  return out;
}

}  // namespace kvdrive
