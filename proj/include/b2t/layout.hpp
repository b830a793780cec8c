#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace b2t {

// Electrode montage on the unit head disk. x runs left (-1) to right (+1),
// y runs back (-1) to front (+1); all positions satisfy x^2 + y^2 <= 1.
struct ChannelLayout {
  std::vector<std::string> names;
  std::vector<std::array<double, 2>> positions;

  std::size_t size() const { return names.size(); }
};

// 64 electrodes on concentric rings (1 + 8 + 12 + 19 + 24), names E01..E64
// ordered centre outwards.
ChannelLayout default_layout();

// indices of channels within `radius` of the disk centre
std::vector<std::size_t> central_channels(const ChannelLayout& layout, double radius);

// the two front-most channels (largest y); used as the ocular reference pair
std::array<std::size_t, 2> frontal_pair(const ChannelLayout& layout);

}  // namespace b2t
