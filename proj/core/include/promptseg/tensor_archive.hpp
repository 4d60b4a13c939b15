#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/tensor.hpp"

namespace promptseg {

// Versioned named-tensor container used for backbone weights and decoder
// checkpoints.
//
// Layout (little-endian):
//   8 bytes   magic "PSEGTNSR"
//   u32       format version
//   u64       header length N
//   N bytes   UTF-8 JSON header {"metadata": {...}, "tensors": [{name, dtype, rows, cols, offset}]}
//   ...       raw tensor payloads, offsets relative to the end of the header
class TensorArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  enum class DType { F32, F64 };

  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  void put(const std::string& name, const MatrixF& value);
  void put(const std::string& name, const MatrixD& value);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  // Converting reads; throw FormatError when missing or when the shape differs
  // from the expected one (pass -1 to skip a dimension check).
  MatrixF get_f32(const std::string& name, long rows = -1, long cols = -1) const;
  MatrixD get_f64(const std::string& name, long rows = -1, long cols = -1) const;

  std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  struct Entry {
    DType dtype = DType::F64;
    long rows = 0;
    long cols = 0;
    std::vector<std::byte> bytes;
  };
  const Entry& entry(const std::string& name, long rows, long cols) const;

  nlohmann::json metadata_ = nlohmann::json::object();
  std::map<std::string, Entry> entries_;
};

}  // namespace promptseg
