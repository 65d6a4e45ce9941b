#include "kvdrive/binary_io.hpp"
#include "kvdrive/index.hpp"

namespace kvdrive {

namespace {
constexpr std::uint32_t kIndexVersion = 1;
}

// "KVIX" u32 version u32 chunk_size u32 token_count u32 dim
// u32 chunk_count { u32 begin u32 end f32[dim] }
// u32 centroid_count { f32[dim] u32 member_count u32[member_count] }
void write_index(std::ostream& os, const HierIndex& index) {
  BinaryWriter w(os);
  w.put_magic("KVIX");
  w.put<std::uint32_t>(kIndexVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.chunk_size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.token_count()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.dim()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.chunks().size()));
  for (const auto& c : index.chunks()) {
    w.put<std::uint32_t>(c.begin);
    w.put<std::uint32_t>(c.end);
    w.put_floats(c.representative);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.centroids().size()));
  for (const auto& c : index.centroids()) {
    w.put_floats(c.vector);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.members.size()));
    for (auto m : c.members) w.put<std::uint32_t>(m);
  }
  w.check();
}

HierIndex read_index(std::istream& is) {
  BinaryReader r(is, "index section");
  r.expect_magic("KVIX");
  require(r.get<std::uint32_t>() == kIndexVersion, ErrorCode::kFormat, "unsupported index version");
  const auto chunk_size = r.get<std::uint32_t>();
  const auto token_count = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint32_t>();
  const auto chunk_count = r.get<std::uint32_t>();
  require(chunk_size >= 1 && chunk_count <= token_count && dim >= 1 && dim <= 65536,
          ErrorCode::kFormat, "implausible index header");
  std::vector<Chunk> chunks(chunk_count);
  for (std::uint32_t i = 0; i < chunk_count; ++i) {
    chunks[i].chunk_id = i;
    chunks[i].begin = r.get<std::uint32_t>();
    chunks[i].end = r.get<std::uint32_t>();
    chunks[i].representative.resize(dim);
    r.get_floats(chunks[i].representative);
  }
  const auto centroid_count = r.get<std::uint32_t>();
  require(centroid_count <= chunk_count, ErrorCode::kFormat, "implausible centroid count");
  std::vector<Centroid> centroids(centroid_count);
  for (std::uint32_t i = 0; i < centroid_count; ++i) {
    centroids[i].centroid_id = i;
    centroids[i].vector.resize(dim);
    r.get_floats(centroids[i].vector);
    const auto members = r.get<std::uint32_t>();
    require(members <= chunk_count, ErrorCode::kFormat, "implausible member count");
    centroids[i].members.resize(members);
    for (auto& m : centroids[i].members) m = r.get<std::uint32_t>();
  }
  HierIndex index(std::move(chunks), std::move(centroids), chunk_size, token_count, dim);
  index.validate();
  return index;
}

}  // namespace kvdrive
