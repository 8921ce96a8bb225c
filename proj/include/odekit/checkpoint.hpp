#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "odekit/autodiff.hpp"

namespace odekit::ad {

// Parameter checkpoint: a JSON manifest (names, shapes, dtype, offsets) next
// to a raw little-endian float64 payload. Round-trips are bit-exact.
void save_checkpoint(const std::string& json_path, const std::string& bin_path,
                     const std::vector<const Tensor*>& tensors,
                     const nlohmann::json& extra = nlohmann::json::object());

// Loads by name into the given tensors; every tensor must be present in the
// manifest with a matching shape.
nlohmann::json load_checkpoint(const std::string& json_path, const std::string& bin_path,
                               const std::vector<Tensor*>& tensors);

}  // namespace odekit::ad
