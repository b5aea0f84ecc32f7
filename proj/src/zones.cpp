#include "adaptforce/zones.hpp"

#include <charconv>

#include "adaptforce/error.hpp"

namespace adaptforce {

const std::vector<Zone>& bundled_zones() {
  static const std::vector<Zone> zones = {
      {"zone1", {2.0, -135.0, -2.0}, false},
      {"zone2", {1.2, -160.0, -1.2}, false},
      {"zone3", {3.0, -115.0, -3.0}, false},
      {"zone4", {1.6, -147.5, -1.6}, true},
      {"zone5", {3.45, -109.25, -3.45}, true},
  };
  return zones;
}

std::vector<Zone> training_zones(const std::vector<Zone>& zones) {
  std::vector<Zone> out;
  for (const auto& z : zones) {
    if (!z.held_out) out.push_back(z);
  }
  return out;
}

const Zone& find_zone(const std::vector<Zone>& zones, const std::string& id) {
  for (const auto& z : zones) {
    if (z.name == id) return z;
  }
  std::size_t index = 0;
  auto [ptr, ec] = std::from_chars(id.data(), id.data() + id.size(), index);
  if (ec == std::errc{} && ptr == id.data() + id.size() && index >= 1 && index <= zones.size()) {
    return zones[index - 1];
  }
  throw InputError("unknown zone '" + id + "'");
}

}  // namespace adaptforce
