#include "odekit/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "odekit/common.hpp"

namespace odekit::ad {

namespace {

constexpr const char* kModule = "autodiff_engine";

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; byte-swapping is not implemented");

}  // namespace

void save_checkpoint(const std::string& json_path, const std::string& bin_path,
                     const std::vector<const Tensor*>& tensors, const nlohmann::json& extra) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["dtype"] = "f64";
  manifest["payload"] = bin_path.substr(bin_path.find_last_of('/') + 1);
  nlohmann::json entries = nlohmann::json::array();

  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  check(bin.good(), kModule, "save_checkpoint", "cannot open " + bin_path);
  uint64_t offset = 0;
  for (const Tensor* t : tensors) {
    check(!t->name.empty(), kModule, "save_checkpoint", "unnamed tensor in checkpoint");
    entries.push_back({{"name", t->name},
                       {"shape", {t->rows(), t->cols()}},
                       {"offset", offset},
                       {"count", t->size()}});
    bin.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
    offset += t->size();
  }
  check(bin.good(), kModule, "save_checkpoint", "write failed for " + bin_path);
  bin.close();

  manifest["tensors"] = std::move(entries);
  if (!extra.is_null() && !extra.empty()) manifest["extra"] = extra;
  std::ofstream js(json_path, std::ios::trunc);
  check(js.good(), kModule, "save_checkpoint", "cannot open " + json_path);
  js << manifest.dump(2) << "\n";
}

nlohmann::json load_checkpoint(const std::string& json_path, const std::string& bin_path,
                               const std::vector<Tensor*>& tensors) {
  std::ifstream js(json_path);
  check(js.good(), kModule, "load_checkpoint", "cannot open " + json_path);
  nlohmann::json manifest;
  js >> manifest;
  check(manifest.value("dtype", "") == "f64", kModule, "load_checkpoint",
        "unsupported dtype in " + json_path);

  std::ifstream bin(bin_path, std::ios::binary);
  check(bin.good(), kModule, "load_checkpoint", "cannot open " + bin_path);

  for (Tensor* t : tensors) {
    const nlohmann::json* entry = nullptr;
    for (const auto& e : manifest.at("tensors")) {
      if (e.at("name").get<std::string>() == t->name) {
        entry = &e;
        break;
      }
    }
    check(entry != nullptr, kModule, "load_checkpoint", "tensor '" + t->name + "' not in manifest");
    auto shape = entry->at("shape").get<std::vector<int>>();
    check(shape.size() == 2 && shape[0] == t->rows() && shape[1] == t->cols(), kModule,
          "load_checkpoint", "shape mismatch for tensor '" + t->name + "'");
    uint64_t offset = entry->at("offset").get<uint64_t>();
    bin.seekg(static_cast<std::streamoff>(offset * sizeof(double)));
    bin.read(reinterpret_cast<char*>(t->data.data()),
             static_cast<std::streamsize>(t->size() * sizeof(double)));
    check(bin.good(), kModule, "load_checkpoint",
          "payload read failed for tensor '" + t->name + "'");
  }
  return manifest.contains("extra") ? manifest["extra"] : nlohmann::json::object();
}

}  // namespace odekit::ad
