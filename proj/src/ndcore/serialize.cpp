#include "pasfuse/ndcore/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace pasfuse {

namespace {

constexpr char kMagic[4] = {'N', 'D', 'C', '1'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

void put_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("NDC1: truncated");
  return to_little(v);
}

}  // namespace

void write_container(std::ostream& os, const TensorDict& tensors) {
  os.write(kMagic, 4);
  put_u64(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(os, t.shape().size());
    for (Index e : t.shape()) put_u64(os, static_cast<std::uint64_t>(e));
    for (Index i = 0; i < t.size(); ++i) {
      const float v = to_little(t.data()[i]);
      os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
  if (!os) throw FormatError("NDC1: write failed");
}

TensorDict read_container(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("NDC1: bad magic");
  }
  const std::uint64_t count = get_u64(is);
  TensorDict out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint64_t len = get_u64(is);
    if (len > (1u << 20)) throw FormatError("NDC1: implausible name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) {
      throw FormatError("NDC1: truncated name");
    }
    const std::uint64_t rank = get_u64(is);
    if (rank > 16) throw FormatError("NDC1: implausible rank");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<Index>(get_u64(is));
    Tensor<float> t(shape);
    for (Index i = 0; i < t.size(); ++i) {
      float v;
      if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("NDC1: truncated data");
      t.data()[i] = to_little(v);
    }
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

void save_container(const std::filesystem::path& path, const TensorDict& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_container(os, tensors);
}

TensorDict load_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_container(is);
}

}  // namespace pasfuse
