#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace llgan::train {

inline constexpr int kCheckpointVersion = 1;

// Directory layout: meta.json (config snapshot, step, phase, version),
// arrays.bin (little-endian float32, concatenated in name order),
// index.json (name -> byte offset + shape). Round trips bit-exactly.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, std::pair<std::vector<int>, std::vector<float>>>
      arrays;

  void put(const std::string& name, std::vector<int> shape,
           std::vector<float> values) {
    arrays[name] = {std::move(shape), std::move(values)};
  }
  const std::vector<float>& get(const std::string& name) const;
  bool has(const std::string& name) const { return arrays.count(name) > 0; }
};

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace llgan::train
