#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "pddpm/tensor.hpp"

namespace pddpm {

// A channel-first scalar grid over D spatial axes: layout [C, e_0, ..., e_{D-1}],
// row-major. Carries images, masks, coordinate grids and noise fields.
class Volume {
 public:
  Volume() = default;
  Volume(int channels, std::vector<int> extents, float fill = 0.0f);
  Volume(int channels, std::vector<int> extents, std::vector<float> data);

  int channels() const { return channels_; }
  const std::vector<int>& extents() const { return extents_; }
  int spatial_rank() const { return static_cast<int>(extents_.size()); }
  std::size_t spatial_size() const;
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<float> channel(int c);
  std::span<const float> channel(int c) const;

  // 2-D accessors.
  int height() const { return extents_.at(0); }
  int width() const { return extents_.at(1); }
  float& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * extents_[0] + y) * extents_[1] + x];
  }
  float at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * extents_[0] + y) * extents_[1] + x];
  }

  bool same_extents(const Volume& other) const { return extents_ == other.extents_; }

  // 2-D crop of every channel: [origin, origin + size) per axis.
  Volume crop(std::span<const int> origin, std::span<const int> size) const;

  // Concatenate along the channel axis; extents must match.
  static Volume concat(std::span<const Volume> parts);

  // [1, C, H, W] view as a tensor (2-D only).
  Tensor to_tensor() const;
  // Extract batch item n from an [N, C, H, W] tensor.
  static Volume from_tensor(const Tensor& batch, int n);

  bool operator==(const Volume& other) const = default;

 private:
  int channels_ = 0;
  std::vector<int> extents_;
  std::vector<float> data_;
};

// PDV1 file format: "PDV1", then little-endian u32 {version, dims,
// extent[dims], channels}, then float32 little-endian payload.
void save_volume(const Volume& volume, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

std::vector<unsigned char> encode_volume(const Volume& volume);
Volume decode_volume(std::span<const unsigned char> bytes);

}  // namespace pddpm
