#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flowforge/tensor.hpp"

namespace flowforge {

/// Ordered registry of named parameters. Registration order is the
/// canonical order used by checkpoints and optimisers.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::shared_ptr<Tensor<T>> value;
    bool frozen = false;
  };

  void add(std::string name, Tensor<T> value);
  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }
  const Entry& entry(std::string_view name) const;
  Entry& entry(std::string_view name);
  const Tensor<T>& at(std::string_view name) const { return *entry(name).value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Sets the frozen flag on every parameter whose name starts with `prefix`.
  void set_frozen(std::string_view prefix, bool frozen);
  std::size_t parameter_count(std::string_view prefix = "") const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  std::string header;  // architecture description (JSON text)
  std::vector<NamedTensor> params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): "FFWT", u32 version, u32 header length, header
/// bytes, u32 parameter count, then per parameter: u32 name length, UTF-8
/// name, four u32 extents (N, C, H, W), f32 data.
void save_checkpoint(const std::string& path, const std::string& header, const ParamStore<float>& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace flowforge
