#include "llgan/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace llgan::train {

using json = nlohmann::json;

const std::vector<float>& Checkpoint::get(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end())
    throw std::runtime_error("checkpoint: missing array '" + name + "'");
  return it->second.second;
}

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json meta = ckpt.meta;
  meta["format_version"] = kCheckpointVersion;

  json index = json::object();
  {
    std::ofstream bin(dir / "arrays.bin", std::ios::binary);
    if (!bin)
      throw std::runtime_error("checkpoint: cannot write " +
                               (dir / "arrays.bin").string());
    uint64_t offset = 0;
    for (const auto& [name, entry] : ckpt.arrays) {
      const auto& [shape, values] = entry;
      index[name] = {{"offset", offset}, {"shape", shape}};
      bin.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(float)));
      offset += values.size() * sizeof(float);
    }
  }
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
  std::ofstream(dir / "index.json") << index.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf)
    throw std::runtime_error("checkpoint: missing meta.json in " +
                             dir.string());
  Checkpoint ckpt;
  ckpt.meta = json::parse(mf);
  const int version = ckpt.meta.value("format_version", -1);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: format version " +
                             std::to_string(version) + " != expected " +
                             std::to_string(kCheckpointVersion));

  std::ifstream idxf(dir / "index.json");
  if (!idxf)
    throw std::runtime_error("checkpoint: missing index.json in " +
                             dir.string());
  json index;
  try {
    index = json::parse(idxf);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: corrupt index: ") +
                             e.what());
  }

  std::ifstream bin(dir / "arrays.bin", std::ios::binary);
  if (!bin)
    throw std::runtime_error("checkpoint: missing arrays.bin in " +
                             dir.string());
  bin.seekg(0, std::ios::end);
  const uint64_t size = static_cast<uint64_t>(bin.tellg());

  for (const auto& [name, entry] : index.items()) {
    const uint64_t offset = entry.at("offset");
    std::vector<int> shape = entry.at("shape");
    uint64_t count = 1;
    for (int d : shape) count *= static_cast<uint64_t>(d);
    if (offset + count * sizeof(float) > size)
      throw std::runtime_error("checkpoint: corrupt index: array '" + name +
                               "' extends past end of arrays.bin");
    std::vector<float> values(count);
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(values.data()),
             static_cast<std::streamsize>(count * sizeof(float)));
    if (!bin)
      throw std::runtime_error("checkpoint: truncated read of '" + name + "'");
    ckpt.put(name, std::move(shape), std::move(values));
  }
  return ckpt;
}

}  // namespace llgan::train
