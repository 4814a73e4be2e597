#include "mlorq/tensor_container.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#include "mlorq/errors.hpp"

namespace mlorq {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'R', 'Q'};

void put_bytes(std::vector<std::uint8_t>& out, const void* src, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(src);
  out.insert(out.end(), p, p + n);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  void read(void* dst, std::size_t n) {
    if (pos_ + n > size_)
      throw Error(ErrorCode::TruncatedBuffer, "container file ends mid-record");
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }

  std::uint16_t u16() {
    std::uint8_t b[2];
    read(b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32() {
    std::uint8_t b[4];
    read(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    std::uint8_t b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

// Little-endian f32 encode/decode via explicit byte layout.
void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

float decode_f32(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

std::int32_t decode_i32(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  std::int32_t v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::F32:
    case DType::I32:
      return 4;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown dtype code");
}

std::uint64_t TensorEntry::element_count() const {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) n *= d;
  return n;
}

namespace {

bool valid_utf8(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    if (c < 0x80) extra = 0;
    else if ((c & 0xe0) == 0xc0 && c >= 0xc2) extra = 1;
    else if ((c & 0xf0) == 0xe0) extra = 2;
    else if ((c & 0xf8) == 0xf0 && c <= 0xf4) extra = 3;
    else return false;
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k)
      if ((static_cast<unsigned char>(s[i + k]) & 0xc0) != 0x80) return false;
    i += extra + 1;
  }
  return true;
}

}  // namespace

void TensorContainer::add(TensorEntry entry) {
  if (entry.name.empty())
    throw Error(ErrorCode::InvalidArgument, "tensor name must be non-empty");
  if (!valid_utf8(entry.name))
    throw Error(ErrorCode::InvalidArgument, "tensor name is not valid UTF-8");
  if (index_.count(entry.name))
    throw Error(ErrorCode::DuplicateName, "duplicate tensor name: " + entry.name);
  if (entry.data.size() != entry.element_count() * dtype_size(entry.dtype))
    throw Error(ErrorCode::TruncatedBuffer,
                "tensor '" + entry.name + "' buffer length does not match its shape");
  index_[entry.name] = entries_.size();
  entries_.push_back(std::move(entry));
}

void TensorContainer::add_f32(const std::string& name, const Matrix& m) {
  TensorEntry e;
  e.name = name;
  e.dtype = DType::F32;
  e.shape = {m.rows(), m.cols()};
  e.data.reserve(m.size() * 4);
  for (std::size_t i = 0; i < m.size(); ++i) put_f32(e.data, static_cast<float>(m.data()[i]));
  add(std::move(e));
}

void TensorContainer::add_f32_vector(const std::string& name, const std::vector<double>& v) {
  TensorEntry e;
  e.name = name;
  e.dtype = DType::F32;
  e.shape = {v.size()};
  e.data.reserve(v.size() * 4);
  for (double x : v) put_f32(e.data, static_cast<float>(x));
  add(std::move(e));
}

void TensorContainer::add_i32(const std::string& name, const std::vector<std::int32_t>& values,
                              const std::vector<std::uint64_t>& shape) {
  TensorEntry e;
  e.name = name;
  e.dtype = DType::I32;
  e.shape = shape;
  if (e.element_count() != values.size())
    throw Error(ErrorCode::ShapeMismatch, "i32 tensor '" + name + "': shape/value count mismatch");
  e.data.reserve(values.size() * 4);
  for (std::int32_t v : values) put_u32(e.data, static_cast<std::uint32_t>(v));
  add(std::move(e));
}

bool TensorContainer::has(const std::string& name) const { return index_.count(name) != 0; }

const TensorEntry& TensorContainer::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw Error(ErrorCode::MissingTensor, "tensor not found: " + name);
  return entries_[it->second];
}

Matrix TensorContainer::get_matrix(const std::string& name) const {
  const TensorEntry& e = get(name);
  if (e.dtype != DType::F32)
    throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' is not f32");
  if (e.shape.size() != 2)
    throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' is not 2-d");
  Matrix m(static_cast<std::size_t>(e.shape[0]), static_cast<std::size_t>(e.shape[1]));
  for (std::size_t i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<double>(decode_f32(e.data.data() + 4 * i));
  return m;
}

std::vector<double> TensorContainer::get_vector(const std::string& name) const {
  const TensorEntry& e = get(name);
  if (e.dtype != DType::F32)
    throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' is not f32");
  const std::uint64_t n = e.element_count();
  std::vector<double> v(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<double>(decode_f32(e.data.data() + 4 * i));
  return v;
}

std::vector<std::int32_t> TensorContainer::get_i32(const std::string& name) const {
  const TensorEntry& e = get(name);
  if (e.dtype != DType::I32)
    throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' is not i32");
  const std::uint64_t n = e.element_count();
  std::vector<std::int32_t> v(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = decode_i32(e.data.data() + 4 * i);
  return v;
}

TensorContainer read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open container file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  Reader r(bytes.data(), bytes.size());

  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "file does not start with MLRQ magic: " + path);
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    throw Error(ErrorCode::UnsupportedVersion,
                "unsupported container version " + std::to_string(version));
  const std::uint32_t count = r.u32();

  TensorContainer container;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry e;
    const std::uint16_t name_len = r.u16();
    e.name.resize(name_len);
    r.read(e.name.data(), name_len);
    std::uint8_t dtype_code;
    r.read(&dtype_code, 1);
    if (dtype_code != 1 && dtype_code != 2)
      throw Error(ErrorCode::InvalidArgument,
                  "unknown dtype code in entry '" + e.name + "'");
    e.dtype = static_cast<DType>(dtype_code);
    std::uint8_t ndim;
    r.read(&ndim, 1);
    e.shape.resize(ndim);
    for (std::uint8_t d = 0; d < ndim; ++d) e.shape[d] = r.u64();
    const std::uint64_t bytes_needed = e.element_count() * dtype_size(e.dtype);
    e.data.resize(static_cast<std::size_t>(bytes_needed));
    r.read(e.data.data(), e.data.size());
    container.add(std::move(e));
  }
  return container;
}

void write_container(const TensorContainer& container, const std::string& path) {
  if (container.size() > std::numeric_limits<std::uint32_t>::max())
    throw Error(ErrorCode::InvalidArgument, "too many tensors for a single container");

  std::vector<std::uint8_t> out;
  put_bytes(out, kMagic, 4);
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(container.size()));
  for (const TensorEntry& e : container.entries()) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw Error(ErrorCode::InvalidArgument, "tensor name too long: " + e.name);
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    put_bytes(out, e.name.data(), e.name.size());
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    out.push_back(static_cast<std::uint8_t>(e.shape.size()));
    for (std::uint64_t d : e.shape) put_u64(out, d);
    put_bytes(out, e.data.data(), e.data.size());
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoFailure, "cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorCode::IoFailure, "write failed: " + path);
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedBuffer: return "TruncatedBuffer";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingTensor: return "MissingTensor";
    case ErrorCode::BrokenChain: return "BrokenChain";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::EmptyCalibration: return "EmptyCalibration";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NoFeasibleBit: return "NoFeasibleBit";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::SvdNoConvergence: return "SvdNoConvergence";
    case ErrorCode::ZeroSignal: return "ZeroSignal";
  }
  return "Unknown";
}

}  // namespace mlorq
