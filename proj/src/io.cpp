#include "cmos/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace cmos {
namespace {

constexpr std::array<char, 5> kMagic = {'C', 'M', 'O', 'T', '1'};

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::array<unsigned char, sizeof(U)> swapped{};
    for (std::size_t i = 0; i < sizeof(U); ++i) swapped[i] = bytes[sizeof(U) - 1 - i];
    return std::bit_cast<U>(swapped);
  } else {
    return v;
  }
}

template <typename U>
void write_le(std::ostream& out, U v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_le(std::istream& in) {
  U v{};
  read_exact(in, reinterpret_cast<char*>(&v), sizeof(U));
  return to_little(v);
}

template <typename Stored, Real T>
void read_payload(std::istream& in, std::vector<T>& out) {
  for (auto& v : out) v = static_cast<T>(read_le<Stored>(in));
}

}  // namespace

void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("unexpected end of data");
}

void write_u8(std::ostream& out, std::uint8_t v) { write_le(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
std::uint8_t read_u8(std::istream& in) { return read_le<std::uint8_t>(in); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }

template <Real T>
void write_tensor(std::ostream& out, const Tensor<T>& tensor) {
  if (tensor.rank() > 255) throw ShapeError("CMOT1 supports rank <= 255");
  out.write(kMagic.data(), kMagic.size());
  write_u8(out, static_cast<std::uint8_t>(dtype_of<T>()));
  write_u8(out, static_cast<std::uint8_t>(tensor.rank()));
  for (std::size_t e : tensor.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("extent exceeds u32");
    write_u32(out, static_cast<std::uint32_t>(e));
  }
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(T)));
  } else {
    for (T v : tensor.data()) write_le(out, v);
  }
}

template <Real T>
Tensor<T> read_tensor(std::istream& in) {
  std::array<char, 5> magic{};
  read_exact(in, magic.data(), magic.size());
  if (magic != kMagic) throw FormatError("bad magic: not a CMOT1 tensor");
  const auto dtype = read_u8(in);
  if (dtype > 1) throw FormatError("unsupported CMOT1 dtype " + std::to_string(dtype));
  const auto rank = read_u8(in);
  Shape shape(rank);
  for (auto& e : shape) {
    e = read_u32(in);
    if (e == 0) throw FormatError("CMOT1 extent of zero");
  }
  std::vector<T> data(shape_numel(shape));
  if (static_cast<DType>(dtype) == dtype_of<T>() && std::endian::native == std::endian::little) {
    read_exact(in, reinterpret_cast<char*>(data.data()), data.size() * sizeof(T));
  } else if (static_cast<DType>(dtype) == DType::f32) {
    read_payload<float>(in, data);
  } else {
    read_payload<double>(in, data);
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <Real T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& tensor) {
  std::ostringstream buf(std::ios::binary);
  write_tensor(buf, tensor);
  write_file_atomic(path, buf.str());
}

template <Real T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open tensor file " + path.string());
  try {
    return read_tensor<T>(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace cmos
