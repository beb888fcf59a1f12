#include "pddpm/app/checkpoint.hpp"

#include <cstring>

#include "../bytes.hpp"
#include "pddpm/error.hpp"
#include "pddpm/hashing.hpp"

namespace pddpm::app {

namespace {

constexpr char kMagic[4] = {'P', 'D', 'C', 'K'};
constexpr const char* kParamPrefix = "param/";
constexpr const char* kFirstPrefix = "adam_m/";
constexpr const char* kSecondPrefix = "adam_v/";

void put_tensor(detail::ByteWriter& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.data()) w.f32(v);
}

struct NamedTensor {
  std::string name;
  Tensor value;
};

NamedTensor get_tensor(detail::ByteReader& r) {
  NamedTensor out;
  out.name = r.str();
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError(FormatError::Kind::kBadHeader, "checkpoint: tensor '" + out.name + "' has rank " + std::to_string(rank));
  Shape shape;
  std::size_t n = 1;
  for (std::uint32_t k = 0; k < rank; ++k) {
    const std::uint32_t d = r.u32();
    if (d == 0 || d > (1u << 24)) throw FormatError(FormatError::Kind::kBadHeader, "checkpoint: tensor '" + out.name + "' has a bad extent");
    shape.push_back(static_cast<int>(d));
    n *= d;
  }
  if (n * 4 > r.remaining()) throw FormatError(FormatError::Kind::kTruncated, "checkpoint: tensor '" + out.name + "' runs past the end");
  std::vector<float> data(n);
  for (auto& v : data) v = r.f32();
  out.value = Tensor(std::move(shape), std::move(data));
  return out;
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  const Sha256Digest hash = digest_from_hex(ck.config_hash);
  detail::ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.raw(hash.data(), hash.size());
  w.str(ck.contract);
  w.str(ck.metadata);
  w.u64(ck.params.step());
  w.u32(static_cast<std::uint32_t>(3 * ck.params.size()));
  for (const auto& e : ck.params.entries()) put_tensor(w, kParamPrefix + e.name, e.value);
  for (const auto& e : ck.params.entries()) put_tensor(w, kFirstPrefix + e.name, e.first_moment);
  for (const auto& e : ck.params.entries()) put_tensor(w, kSecondPrefix + e.name, e.second_moment);
  auto& bytes = w.bytes();
  w.u32(crc32(bytes));
  return std::move(bytes);
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes, const std::optional<std::string>& expected_contract) {
  using Kind = FormatError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(Kind::kBadMagic, "checkpoint: not a PDCK file");
  if (bytes.size() < 8 + 32 + 4) throw FormatError(Kind::kTruncated, "checkpoint: file too short");
  const auto body = bytes.first(bytes.size() - 4);
  detail::ByteReader trailer(bytes.last(4));
  if (trailer.u32() != crc32(body)) throw FormatError(Kind::kChecksum, "checkpoint: CRC32 mismatch (file truncated or corrupt)");

  detail::ByteReader r(body);
  char magic[4];
  r.raw(magic, 4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(Kind::kBadVersion, "checkpoint: version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  }
  Sha256Digest hash;
  r.raw(hash.data(), hash.size());
  Checkpoint ck;
  ck.config_hash = to_hex(hash);
  ck.contract = r.str();
  if (expected_contract && ck.contract != *expected_contract) {
    throw FormatError(Kind::kContract, "checkpoint: channel order '" + ck.contract + "' does not match expected '" + *expected_contract + "'");
  }
  ck.metadata = r.str();
  const std::uint64_t step = r.u64();
  const std::uint32_t count = r.u32();
  if (count % 3 != 0) throw FormatError(Kind::kBadHeader, "checkpoint: tensor count is not a multiple of 3");
  std::vector<NamedTensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) tensors.push_back(get_tensor(r));
  if (r.remaining() != 0) throw FormatError(Kind::kBadHeader, "checkpoint: trailing bytes after the last tensor");

  const std::size_t n = count / 3;
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = tensors[i];
    if (!starts_with(p.name, kParamPrefix)) throw FormatError(Kind::kBadHeader, "checkpoint: unexpected tensor '" + p.name + "'");
    const std::string name = p.name.substr(std::strlen(kParamPrefix));
    ck.params.add(name, std::move(p.value));
    auto& entry = ck.params.entry(name);
    auto& m = tensors[n + i];
    auto& v = tensors[2 * n + i];
    if (m.name != kFirstPrefix + name || v.name != kSecondPrefix + name) {
      throw FormatError(Kind::kBadHeader, "checkpoint: optimizer state for '" + name + "' missing or out of order");
    }
    if (m.value.shape() != entry.value.shape() || v.value.shape() != entry.value.shape()) {
      throw FormatError(Kind::kBadHeader, "checkpoint: optimizer state shape differs for '" + name + "'");
    }
    entry.first_moment = std::move(m.value);
    entry.second_moment = std::move(v.value);
  }
  ck.params.set_step(step);
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  detail::write_file_atomic(path.string(), encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_contract) {
  return decode_checkpoint(detail::read_file(path.string()), expected_contract);
}

}  // namespace pddpm::app
