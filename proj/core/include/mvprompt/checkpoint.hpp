#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvprompt/tensor.hpp"

namespace mvp {

/// Named float32 arrays in the flat weight format shared by every model.
///
/// Layout (all integers little-endian):
///   "MVPROMPT" (8 bytes) | u32 version
///   repeated until EOF:
///     u32 name_len | name bytes | u32 rank | u32 dims[rank] | f32 values (row-major)
class Checkpoint {
 public:
  static constexpr std::string_view kMagic = "MVPROMPT";
  static constexpr std::uint32_t kVersion = 1;

  struct Array {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
  };

  void put(const std::string& name, const Mat& m);
  void put(const std::string& name, const RowVec& v);
  void put(const std::string& name, std::vector<std::uint32_t> dims,
           std::span<const double> values);

  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  const Array& get(const std::string& name) const;
  /// Throws DimensionError unless the stored array is exactly rows x cols.
  Mat matrix(const std::string& name, int rows, int cols) const;
  RowVec vector(const std::string& name, int size) const;

  std::size_t size() const { return arrays_.size(); }
  const std::map<std::string, Array>& arrays() const { return arrays_; }

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, Array> arrays_;
};

}  // namespace mvp
