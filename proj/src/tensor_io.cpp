#include "ganforge/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace ganforge {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated GFT1 stream");
  return to_le(v);
}

}  // namespace

void write_gft(std::ostream& os, const Tensor& t) {
  os.write("GFT1", 4);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  } else {
    for (double v : t.values()) {
      const auto u = to_le(std::bit_cast<std::uint64_t>(v));
      os.write(reinterpret_cast<const char*>(&u), 8);
    }
  }
  if (!os) throw IoError("failed writing GFT1 block");
}

Tensor read_gft(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "GFT1", 4) != 0) throw IoError("missing GFT1 magic");
  const std::uint32_t rank = get_u32(is);
  if (rank == 0 || rank > 16) throw IoError("GFT1 rank " + std::to_string(rank) + " out of range");
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = get_u32(is);
    if (d == 0) throw IoError("GFT1 zero dimension");
    count *= d;
    if (count > (std::uint64_t{1} << 34)) throw IoError("GFT1 tensor too large");
  }
  std::vector<double> data(count);
  if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
    throw IoError("truncated GFT1 payload");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : data) v = std::bit_cast<double>(to_le(std::bit_cast<std::uint64_t>(v)));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_gft(os, t);
  write_file_atomic(path, os.str());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_gft(is);
}

void write_container(std::ostream& os, const char magic[4], const std::string& header_json,
                     const NamedTensors& tensors) {
  os.write(magic, 4);
  put_u32(os, static_cast<std::uint32_t>(header_json.size()));
  os.write(header_json.data(), static_cast<std::streamsize>(header_json.size()));
  for (const auto& [name, t] : tensors) write_gft(os, t);
  if (!os) throw IoError("failed writing container");
}

std::string read_container(std::istream& is, const char magic[4], NamedTensors& tensors) {
  char m[4];
  if (!is.read(m, 4) || std::memcmp(m, magic, 4) != 0) {
    throw IoError(std::string("missing ") + std::string(magic, 4) + " magic");
  }
  const std::uint32_t len = get_u32(is);
  std::string header(len, '\0');
  if (!is.read(header.data(), len)) throw IoError("truncated container header");
  const auto j = nlohmann::json::parse(header, nullptr, false);
  if (j.is_discarded() || !j.contains("tensors") || !j["tensors"].is_array()) {
    throw IoError("container header lacks a tensors array");
  }
  tensors.clear();
  for (const auto& name : j["tensors"]) tensors.emplace_back(name.get<std::string>(), read_gft(is));
  return header;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  try {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw IoError("cannot write " + path.string());
      os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!os) throw IoError("failed writing " + path.string());
    }
    std::filesystem::rename(tmp, path);
  } catch (const std::filesystem::filesystem_error& e) {
    throw IoError("cannot write " + path.string() + ": " + e.code().message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace ganforge
