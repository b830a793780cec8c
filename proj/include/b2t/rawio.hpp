#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "b2t/linalg.hpp"

namespace b2t {

static_assert(std::endian::native == std::endian::little,
              "raw container files are little-endian");

// row-major little-endian float32 blob, no header
inline void write_f32(const std::string& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write: " + path);
}

inline std::vector<float> read_f32(const std::string& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<float> values(count);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float))) {
    throw std::runtime_error("short read (shape disagrees with file): " + path);
  }
  char extra = 0;
  if (in.read(&extra, 1), in.gcount() != 0) {
    throw std::runtime_error("trailing bytes (shape disagrees with file): " + path);
  }
  return values;
}

// float64 variant, used where quantization would change results on reload
inline void write_f64(const std::string& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write: " + path);
}

inline std::vector<double> read_f64(const std::string& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    throw std::runtime_error("short read (shape disagrees with file): " + path);
  }
  char extra = 0;
  if (in.read(&extra, 1), in.gcount() != 0) {
    throw std::runtime_error("trailing bytes (shape disagrees with file): " + path);
  }
  return values;
}

inline void write_f32_matrix(const std::string& path, const Matrix& m) {
  std::vector<float> values(m.data().size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(m.data()[i]);
  write_f32(path, values);
}

inline Matrix read_f32_matrix(const std::string& path, std::size_t rows, std::size_t cols) {
  const std::vector<float> values = read_f32(path, rows * cols);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = values[i];
  return m;
}

}  // namespace b2t
