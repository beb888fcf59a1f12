#include "pddpm/volume.hpp"

#include <algorithm>
#include <cstring>

#include "bytes.hpp"
#include "pddpm/error.hpp"

namespace pddpm {

namespace {

constexpr char kMagic[4] = {'P', 'D', 'V', '1'};
constexpr std::uint32_t kVersion = 1;

std::size_t count(int channels, const std::vector<int>& extents) {
  std::size_t n = static_cast<std::size_t>(channels);
  for (int e : extents) n *= static_cast<std::size_t>(e);
  return n;
}

void validate(int channels, const std::vector<int>& extents) {
  if (channels < 1) throw ShapeError("volume: channel count must be >= 1");
  if (extents.empty()) throw ShapeError("volume: at least one spatial axis required");
  for (int e : extents) {
    if (e < 1) throw ShapeError("volume: extents must be >= 1, got " + shape_str(extents));
  }
}

}  // namespace

Volume::Volume(int channels, std::vector<int> extents, float fill)
    : channels_(channels), extents_(std::move(extents)) {
  validate(channels_, extents_);
  data_.assign(count(channels_, extents_), fill);
}

Volume::Volume(int channels, std::vector<int> extents, std::vector<float> data)
    : channels_(channels), extents_(std::move(extents)), data_(std::move(data)) {
  validate(channels_, extents_);
  if (data_.size() != count(channels_, extents_)) {
    throw ShapeError("volume: " + std::to_string(channels_) + " x " + shape_str(extents_) +
                     " does not match " + std::to_string(data_.size()) + " elements");
  }
}

std::size_t Volume::spatial_size() const { return count(1, extents_); }

std::span<float> Volume::channel(int c) {
  const std::size_t n = spatial_size();
  return std::span<float>(data_).subspan(static_cast<std::size_t>(c) * n, n);
}

std::span<const float> Volume::channel(int c) const {
  const std::size_t n = spatial_size();
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(c) * n, n);
}

Volume Volume::crop(std::span<const int> origin, std::span<const int> size) const {
  if (spatial_rank() != 2 || origin.size() != 2 || size.size() != 2) {
    throw ShapeError("volume crop: only 2-D volumes are supported");
  }
  for (int k = 0; k < 2; ++k) {
    if (origin[k] < 0 || size[k] < 1 || origin[k] + size[k] > extents_[k]) {
      throw ShapeError("volume crop: window [" + std::to_string(origin[k]) + ", " +
                       std::to_string(origin[k] + size[k]) + ") outside extent " +
                       std::to_string(extents_[k]) + " on axis " + std::to_string(k));
    }
  }
  Volume out(channels_, {size[0], size[1]});
  for (int c = 0; c < channels_; ++c) {
    for (int y = 0; y < size[0]; ++y) {
      const float* src = &data_[(static_cast<std::size_t>(c) * extents_[0] + origin[0] + y) * extents_[1] + origin[1]];
      std::copy(src, src + size[1], &out.at(c, y, 0));
    }
  }
  return out;
}

Volume Volume::concat(std::span<const Volume> parts) {
  if (parts.empty()) throw ShapeError("volume concat: no inputs");
  int channels = 0;
  for (const auto& p : parts) {
    if (p.extents_ != parts.front().extents_) {
      throw ShapeError("volume concat: extents " + shape_str(p.extents_) + " vs " +
                       shape_str(parts.front().extents_));
    }
    channels += p.channels_;
  }
  std::vector<float> data;
  data.reserve(count(channels, parts.front().extents_));
  for (const auto& p : parts) data.insert(data.end(), p.data_.begin(), p.data_.end());
  return Volume(channels, parts.front().extents_, std::move(data));
}

Tensor Volume::to_tensor() const {
  if (spatial_rank() != 2) throw ShapeError("volume to_tensor: only 2-D volumes are supported");
  return Tensor({1, channels_, extents_[0], extents_[1]}, data_);
}

Volume Volume::from_tensor(const Tensor& batch, int n) {
  if (batch.rank() != 4 || n < 0 || n >= batch.dim(0)) {
    throw ShapeError("volume from_tensor: need [N, C, H, W] and valid index, got " + shape_str(batch.shape()));
  }
  const std::size_t per = shape_numel({batch.dim(1), batch.dim(2), batch.dim(3)});
  const auto begin = batch.data().begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(n));
  return Volume(batch.dim(1), {batch.dim(2), batch.dim(3)}, std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(per)));
}

std::vector<unsigned char> encode_volume(const Volume& volume) {
  detail::ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(volume.spatial_rank()));
  for (int e : volume.extents()) w.u32(static_cast<std::uint32_t>(e));
  w.u32(static_cast<std::uint32_t>(volume.channels()));
  for (float v : volume.data()) w.f32(v);
  return std::move(w.bytes());
}

Volume decode_volume(std::span<const unsigned char> bytes) {
  using Kind = FormatError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(Kind::kBadMagic, "not a PDV1 volume (magic mismatch)");
  }
  detail::ByteReader r(bytes.subspan(4));
  std::uint32_t version, dims, channels;
  std::vector<int> extents;
  try {
    version = r.u32();
    if (version != kVersion) {
      throw FormatError(Kind::kBadVersion, "unsupported volume version " + std::to_string(version));
    }
    dims = r.u32();
    if (dims < 1 || dims > 8) throw FormatError(Kind::kBadHeader, "bad dimension count " + std::to_string(dims));
    for (std::uint32_t i = 0; i < dims; ++i) {
      const std::uint32_t e = r.u32();
      if (e < 1 || e > (1u << 20)) throw FormatError(Kind::kBadHeader, "bad extent " + std::to_string(e));
      extents.push_back(static_cast<int>(e));
    }
    channels = r.u32();
    if (channels < 1 || channels > (1u << 16)) {
      throw FormatError(Kind::kBadHeader, "bad channel count " + std::to_string(channels));
    }
  } catch (const FormatError& e) {
    if (e.kind() == Kind::kTruncated) throw FormatError(Kind::kBadHeader, "truncated header");
    throw;
  }
  const std::size_t n = count(static_cast<int>(channels), extents);
  if (r.remaining() != n * 4) {
    throw FormatError(Kind::kTruncated, "header declares " + std::to_string(n) + " values but payload holds " +
                                            std::to_string(r.remaining()) + " bytes");
  }
  std::vector<float> data(n);
  for (auto& v : data) v = r.f32();
  return Volume(static_cast<int>(channels), std::move(extents), std::move(data));
}

void save_volume(const Volume& volume, const std::filesystem::path& path) {
  const auto bytes = encode_volume(volume);
  detail::write_file_atomic(path.string(), bytes);
}

Volume load_volume(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path.string());
  try {
    return decode_volume(bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + std::string(e.what()).substr(8));
  }
}

}  // namespace pddpm
