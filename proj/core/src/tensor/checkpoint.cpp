#include "lap/tensor/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "lap/errors.hpp"

namespace lap {
namespace {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

constexpr char kMagic[4] = {'L', 'A', 'P', 'W'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

bool get_u32(std::istream& is, std::uint32_t& v) {
  is.read(reinterpret_cast<char*>(&v), 4);
  return is.gcount() == 4;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const TensorMap& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write weights to " + path.string());
  os.write(kMagic, 4);
  put_u32(os, kWeightFormatVersion);
  for (const auto& [name, t] : tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw IoError("short write to " + path.string());
}

TensorMap load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weights " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path.string() + ": not a LAPW file");
  std::uint32_t version = 0;
  if (!get_u32(is, version) || version != kWeightFormatVersion) {
    throw IoError(path.string() + ": unsupported weight format version " + std::to_string(version));
  }
  TensorMap out;
  std::uint32_t name_len = 0;
  while (get_u32(is, name_len)) {
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint32_t rank = 0;
    if (static_cast<std::uint32_t>(is.gcount()) != name_len || !get_u32(is, rank) || rank == 0 || rank > 4) {
      throw IoError(path.string() + ": truncated record header");
    }
    Shape shape(rank);
    for (auto& e : shape) {
      std::uint32_t v = 0;
      if (!get_u32(is, v) || v == 0) throw IoError(path.string() + ": bad extent in record " + name);
      e = static_cast<int>(v);
    }
    Tensor t(shape);
    const auto bytes = static_cast<std::streamsize>(t.numel() * sizeof(double));
    is.read(reinterpret_cast<char*>(t.data().data()), bytes);
    if (is.gcount() != bytes) throw IoError(path.string() + ": truncated payload for " + name);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace lap
