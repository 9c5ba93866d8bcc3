#ifndef MICRONET_TENSOR_HPP
#define MICRONET_TENSOR_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "micronet/errors.hpp"

namespace micronet {

// Dense 4-D array in (batch, channels, height, width) row-major layout.
// T is float for training speed or double for gradient checks.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(int64_t n, int64_t c, int64_t h, int64_t w)
      : n_(n), c_(c), h_(h), w_(w), data_(static_cast<size_t>(n * c * h * w), T{}) {
    if (n < 0 || c < 0 || h < 0 || w < 0) {
      throw ShapeError("tensor dims must be non-negative");
    }
  }

  static Tensor full(int64_t n, int64_t c, int64_t h, int64_t w, T value) {
    Tensor t(n, c, h, w);
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor zeros_like(const Tensor& other) {
    return Tensor(other.n_, other.c_, other.h_, other.w_);
  }

  int64_t n() const { return n_; }
  int64_t c() const { return c_; }
  int64_t h() const { return h_; }
  int64_t w() const { return w_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  std::array<int64_t, 4> shape() const { return {n_, c_, h_, w_}; }

  bool same_shape(const Tensor& other) const {
    return n_ == other.n_ && c_ == other.c_ && h_ == other.h_ && w_ == other.w_;
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  int64_t index(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return ((n * c_ + c) * h_ + h) * w_ + w;
  }

  T& at(int64_t n, int64_t c, int64_t h, int64_t w) { return data_[index(n, c, h, w)]; }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[index(n, c, h, w)];
  }

  T& operator[](int64_t i) { return data_[i]; }
  const T& operator[](int64_t i) const { return data_[i]; }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n_, c_, h_, w_);
    for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  int64_t n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

namespace detail {

template <typename T>
constexpr uint8_t dtype_code();
template <>
constexpr uint8_t dtype_code<float>() { return 0; }
template <>
constexpr uint8_t dtype_code<double>() { return 1; }

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IntegrityError("truncated file while reading " + what + " at offset " +
                         std::to_string(static_cast<long long>(is.tellg())));
  }
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace detail

// Raw tensor file: magic "MNT1", dtype code u8 (0=f32, 1=f64), 4 x u32 dims,
// then packed row-major data, all little-endian.
template <typename T>
void save_tensor(const Tensor<T>& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("MNT1", 4);
  uint8_t code = detail::dtype_code<T>();
  os.write(reinterpret_cast<const char*>(&code), 1);
  detail::write_u32(os, static_cast<uint32_t>(t.n()));
  detail::write_u32(os, static_cast<uint32_t>(t.c()));
  detail::write_u32(os, static_cast<uint32_t>(t.h()));
  detail::write_u32(os, static_cast<uint32_t>(t.w()));
  os.write(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(T));
  if (!os) throw IoError("write failed: " + path);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MNT1", 4) != 0) {
    throw IntegrityError("bad tensor magic at offset 0: " + path);
  }
  uint8_t code;
  if (!is.read(reinterpret_cast<char*>(&code), 1)) {
    throw IntegrityError("truncated file while reading dtype at offset 4");
  }
  if (code > 1) throw IntegrityError("unknown dtype code " + std::to_string(code));
  int64_t dims[4];
  for (int i = 0; i < 4; ++i) dims[i] = detail::read_u32(is, "dims");
  Tensor<T> out(dims[0], dims[1], dims[2], dims[3]);
  auto read_data = [&](auto* sample) {
    using S = std::remove_pointer_t<decltype(sample)>;
    std::vector<S> buf(static_cast<size_t>(out.size()));
    if (!is.read(reinterpret_cast<char*>(buf.data()), out.size() * sizeof(S))) {
      throw IntegrityError("truncated tensor data at offset " +
                           std::to_string(static_cast<long long>(is.tellg())));
    }
    for (int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(buf[i]);
  };
  if (code == 0) {
    read_data(static_cast<float*>(nullptr));
  } else {
    read_data(static_cast<double*>(nullptr));
  }
  return out;
}

}  // namespace micronet

#endif
