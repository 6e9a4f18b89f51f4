#include "milbench/tensor_io.hpp"

#include <array>
#include <bit>
#include <fstream>

#include "milbench/errors.hpp"

namespace milbench {

namespace {

constexpr std::array<char, 8> kMagic = {'M', 'I', 'L', 'C', 'K', 'P', 'T', '\0'};

void put_le(std::ofstream& out, std::uint64_t v, std::size_t bytes) {
  std::array<char, 8> buf{};
  for (std::size_t i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(buf.data(), static_cast<std::streamsize>(bytes));
}

std::uint64_t get_le(std::ifstream& in, std::size_t bytes, const std::filesystem::path& path) {
  std::array<unsigned char, 8> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) throw IoError("truncated tensor file: " + path.string());
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor_blob(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_le(out, kTensorBlobVersion, 4);
  put_le(out, tensors.size(), 4);
  for (const auto& t : tensors) {
    put_le(out, t.name.size(), 4);
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_le(out, t.value.rows(), 8);
    put_le(out, t.value.cols(), 8);
    for (double v : t.value.values()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<NamedTensor> read_tensor_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 8 || magic != kMagic) throw IoError("not a tensor blob (bad magic): " + path.string());
  const auto version = get_le(in, 4, path);
  if (version != kTensorBlobVersion) {
    throw IoError("unsupported tensor blob version " + std::to_string(version) + ": " + path.string());
  }
  const auto n = get_le(in, 4, path);
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name.resize(get_le(in, 4, path));
    in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    if (static_cast<std::size_t>(in.gcount()) != t.name.size()) throw IoError("truncated tensor file: " + path.string());
    const auto rows = get_le(in, 8, path);
    const auto cols = get_le(in, 8, path);
    t.value = Matrix(rows, cols);
    for (double& v : t.value.values()) v = std::bit_cast<double>(get_le(in, 8, path));
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace milbench
