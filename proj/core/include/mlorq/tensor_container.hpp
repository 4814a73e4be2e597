#ifndef MLORQ_TENSOR_CONTAINER_HPP
#define MLORQ_TENSOR_CONTAINER_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlorq/matrix.hpp"

namespace mlorq {

enum class DType : std::uint8_t { F32 = 1, I32 = 2 };

std::size_t dtype_size(DType dtype);

/// One named tensor: dtype code, shape, raw little-endian row-major bytes.
struct TensorEntry {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> data;

  std::uint64_t element_count() const;
};

/// Ordered collection of uniquely named tensors. Serialization preserves
/// insertion order so two writes of the same container are byte-identical.
class TensorContainer {
 public:
  void add(TensorEntry entry);
  void add_f32(const std::string& name, const Matrix& m);
  void add_f32_vector(const std::string& name, const std::vector<double>& v);
  void add_i32(const std::string& name, const std::vector<std::int32_t>& values,
               const std::vector<std::uint64_t>& shape);

  bool has(const std::string& name) const;
  const TensorEntry& get(const std::string& name) const;

  /// Decodes an f32 tensor (must be 2-d) into a double matrix.
  Matrix get_matrix(const std::string& name) const;
  /// Decodes a 1-d (or 2-d with one row/col) f32 tensor.
  std::vector<double> get_vector(const std::string& name) const;
  std::vector<std::int32_t> get_i32(const std::string& name) const;

  const std::vector<TensorEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<TensorEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Binary layout: magic "MLRQ", version u32 LE, entry count u32 LE; per
/// entry: name length u16 LE, name bytes, dtype u8, ndim u8, dims u64 LE,
/// raw row-major element data LE.
TensorContainer read_container(const std::string& path);
void write_container(const TensorContainer& container, const std::string& path);

inline constexpr std::uint32_t kContainerVersion = 1;

}  // namespace mlorq

#endif  // MLORQ_TENSOR_CONTAINER_HPP
