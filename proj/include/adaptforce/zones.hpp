#pragma once

#include <string>
#include <vector>

#include "adaptforce/contact_model.hpp"

namespace adaptforce {

struct Zone {
  std::string name;
  ContactModel model;
  bool held_out = false;  // never used for fitting/solving/training
};

/// Three training zones followed by two held-out zones. The held-out ones
/// are a midpoint of zones 1-2 and a perturbed copy of zone 3. All reach
/// 24-30 N before 0.02 m depth.
const std::vector<Zone>& bundled_zones();

std::vector<Zone> training_zones(const std::vector<Zone>& zones);

/// Lookup by name ("zone1") or 1-based index ("1"). Throws InputError.
const Zone& find_zone(const std::vector<Zone>& zones, const std::string& id);

}  // namespace adaptforce
