#include "b2t/layout.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace b2t {

ChannelLayout default_layout() {
  // ring radii and channel counts; 1 + 8 + 12 + 19 + 24 = 64
  const std::array<double, 5> radii = {0.0, 0.22, 0.45, 0.68, 0.90};
  const std::array<int, 5> counts = {1, 8, 12, 19, 24};

  ChannelLayout layout;
  int index = 0;
  for (std::size_t ring = 0; ring < radii.size(); ++ring) {
    for (int k = 0; k < counts[ring]; ++k) {
      // start each ring at the front (+y) and walk clockwise
      const double angle =
          M_PI / 2.0 - 2.0 * M_PI * static_cast<double>(k) / counts[ring];
      const double x = radii[ring] * std::cos(angle);
      const double y = radii[ring] * std::sin(angle);
      char name[16];
      std::snprintf(name, sizeof(name), "E%02d", index + 1);
      layout.names.emplace_back(name);
      layout.positions.push_back({x, y});
      ++index;
    }
  }
  return layout;
}

std::vector<std::size_t> central_channels(const ChannelLayout& layout, double radius) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& p = layout.positions[i];
    if (std::hypot(p[0], p[1]) <= radius) out.push_back(i);
  }
  return out;
}

std::array<std::size_t, 2> frontal_pair(const ChannelLayout& layout) {
  if (layout.size() < 2) {
    throw std::invalid_argument("frontal_pair: layout needs at least two channels");
  }
  std::size_t first = 0, second = 1;
  if (layout.positions[second][1] > layout.positions[first][1]) std::swap(first, second);
  for (std::size_t i = 2; i < layout.size(); ++i) {
    const double y = layout.positions[i][1];
    if (y > layout.positions[first][1]) {
      second = first;
      first = i;
    } else if (y > layout.positions[second][1]) {
      second = i;
    }
  }
  return {first, second};
}

}  // namespace b2t
