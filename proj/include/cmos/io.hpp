#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string_view>

#include "cmos/tensor.hpp"

namespace cmos {

// CMOT1 record layout: "CMOT1", u8 dtype (0=f32, 1=f64), u8 rank,
// rank x u32 extents, row-major payload. All integers and floats little-endian.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <Real T>
constexpr DType dtype_of() {
  return std::same_as<T, float> ? DType::f32 : DType::f64;
}

template <Real T>
void write_tensor(std::ostream& out, const Tensor<T>& tensor);

/// Reads one CMOT1 record, converting the payload to T when the stored dtype differs.
template <Real T>
Tensor<T> read_tensor(std::istream& in);

template <Real T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor);

template <Real T>
Tensor<T> load_tensor(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Little-endian primitives shared with the checkpoint container.
void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
void read_exact(std::istream& in, char* dst, std::size_t n);

}  // namespace cmos
