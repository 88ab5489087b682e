#include "pasfuse/datapipe/formats.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace pasfuse {

namespace {

using Bytes = std::vector<char>;

Bytes read_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(DataError::Kind::io, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(is), {});
}

void write_all(const std::filesystem::path& path, const Bytes& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError(DataError::Kind::io, "cannot write " + path.string());
}

template <typename T>
T load(const char* p, bool swap) {
  std::array<char, sizeof(T)> raw;
  std::memcpy(raw.data(), p, sizeof(T));
  if (swap) std::reverse(raw.begin(), raw.end());
  T v;
  std::memcpy(&v, raw.data(), sizeof(T));
  return v;
}

template <typename T>
void store_le(char* p, T v) {
  std::array<char, sizeof(T)> raw;
  std::memcpy(raw.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  std::memcpy(p, raw.data(), sizeof(T));
}

constexpr bool kHostBig = std::endian::native == std::endian::big;

// Little-endian f32 payload helpers shared by .rvol and .rimg.
void append_f32le(Bytes& out, const Buffer<float>& values) {
  const std::size_t start = out.size();
  out.resize(start + 4 * static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) store_le(out.data() + start + 4 * i, values[i]);
}

Buffer<float> parse_f32le(const char* p, Index n) {
  Buffer<float> v(n);
  for (Index i = 0; i < n; ++i) v[i] = load<float>(p + 4 * i, kHostBig);
  return v;
}

struct RawHeader {
  nlohmann::json json;
  std::size_t payload = 0;  // offset of the first data byte
};

RawHeader parse_raw_header(const Bytes& bytes, const std::filesystem::path& path) {
  auto nl = std::find(bytes.begin(), bytes.end(), '\n');
  if (nl == bytes.end()) throw DataError(DataError::Kind::invalid, path.string() + ": missing header line");
  RawHeader h;
  try {
    h.json = nlohmann::json::parse(bytes.begin(), nl);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataError::Kind::invalid, path.string() + ": bad header: " + e.what());
  }
  if (h.json.value("dtype", std::string()) != "f32le") {
    throw DataError(DataError::Kind::unsupported_datatype, path.string() + ": dtype must be f32le");
  }
  h.payload = static_cast<std::size_t>(nl - bytes.begin()) + 1;
  return h;
}

void require_payload(const Bytes& bytes, std::size_t start, Index n, const std::filesystem::path& path) {
  if (bytes.size() < start + 4 * static_cast<std::size_t>(n)) {
    throw DataError(DataError::Kind::truncated, path.string() + ": payload shorter than header extents");
  }
}

}  // namespace

Volume read_nifti(const std::filesystem::path& path) {
  const Bytes b = read_all(path);
  const auto name = path.string();
  if (b.size() < static_cast<std::size_t>(kNiftiVoxOffset)) {
    throw DataError(DataError::Kind::too_small, name + ": shorter than a NIfTI-1 header");
  }
  const char* magic = b.data() + 344;
  if (std::memcmp(magic, "ni1\0", 4) == 0) {
    throw DataError(DataError::Kind::detached_header,
                    name + ": detached .hdr/.img NIfTI is not supported");
  }
  if (std::memcmp(magic, "n+1\0", 4) != 0) throw DataError(DataError::Kind::bad_magic, name + ": bad NIfTI magic");

  // dim[0] must be 1..7; if it is not in native order, the file is swapped.
  bool swap = false;
  const short d0 = load<short>(b.data() + 40, false);
  if (d0 < 1 || d0 > 7) {
    swap = true;
    const short s0 = load<short>(b.data() + 40, true);
    if (s0 < 1 || s0 > 7) throw DataError(DataError::Kind::invalid, name + ": dim[0] out of range");
  }
  if (load<std::int32_t>(b.data(), swap) != kNiftiHeaderSize) {
    throw DataError(DataError::Kind::invalid, name + ": sizeof_hdr is not 348");
  }
  std::array<short, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load<short>(b.data() + 40 + 2 * i, swap);
  for (int i = 4; i <= dim[0]; ++i) {
    if (dim[i] != 1) throw DataError(DataError::Kind::unsupported_dims, name + ": only 3D volumes are supported");
  }
  std::array<Index, 3> e{1, 1, 1};
  for (int i = 0; i < 3 && i < dim[0]; ++i) {
    if (dim[i + 1] < 1) throw DataError(DataError::Kind::invalid, name + ": non-positive extent");
    e[i] = dim[i + 1];
  }

  const short datatype = load<short>(b.data() + 70, swap);
  std::size_t bytes_per = 0;
  switch (static_cast<NiftiType>(datatype)) {
    case NiftiType::u8:
      bytes_per = 1;
      break;
    case NiftiType::i16:
      bytes_per = 2;
      break;
    case NiftiType::f32:
      bytes_per = 4;
      break;
    case NiftiType::f64:
      bytes_per = 8;
      break;
    default:
      throw DataError(DataError::Kind::unsupported_datatype,
                      name + ": unsupported datatype " + std::to_string(datatype));
  }
  const float vox_offset = load<float>(b.data() + 108, swap);
  const std::size_t start = std::max<std::size_t>(kNiftiVoxOffset, static_cast<std::size_t>(vox_offset));
  const Index n = e[0] * e[1] * e[2];
  if (b.size() < start + bytes_per * static_cast<std::size_t>(n)) {
    throw DataError(DataError::Kind::truncated, name + ": voxel data truncated");
  }

  const float slope = load<float>(b.data() + 112, swap);
  const float inter = load<float>(b.data() + 116, swap);
  const bool scaled = slope != 0.0f && std::isfinite(slope);

  Volume v(e);
  v.hwd_axes = {1, 0, 2};
  for (int i = 0; i < 3; ++i) {
    const float s = load<float>(b.data() + 76 + 4 * (i + 1), swap);
    v.spacing[i] = s > 0 ? s : 1.0;
  }
  const char* data = b.data() + start;
  // File order has the first axis fastest.
  Index f = 0;
  for (Index z = 0; z < e[2]; ++z) {
    for (Index y = 0; y < e[1]; ++y) {
      for (Index x = 0; x < e[0]; ++x, ++f) {
        const char* p = data + bytes_per * static_cast<std::size_t>(f);
        double value = 0;
        switch (static_cast<NiftiType>(datatype)) {
          case NiftiType::u8:
            value = static_cast<unsigned char>(*p);
            break;
          case NiftiType::i16:
            value = load<std::int16_t>(p, swap);
            break;
          case NiftiType::f32:
            value = load<float>(p, swap);
            break;
          case NiftiType::f64:
            value = load<double>(p, swap);
            break;
        }
        float out = static_cast<float>(value);
        if (scaled) out = static_cast<float>(value * slope + inter);
        v(x, y, z) = out;
      }
    }
  }
  return v;
}

void write_nifti(const std::filesystem::path& path, const Volume& volume) {
  Bytes b(static_cast<std::size_t>(kNiftiVoxOffset), 0);
  char* h = b.data();
  store_le<std::int32_t>(h, kNiftiHeaderSize);
  h[38] = 'r';  // "regular"
  const std::array<short, 8> dim{3,
                                 static_cast<short>(volume.extents[0]),
                                 static_cast<short>(volume.extents[1]),
                                 static_cast<short>(volume.extents[2]),
                                 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store_le<short>(h + 40 + 2 * i, dim[i]);
  store_le<short>(h + 70, static_cast<short>(NiftiType::f32));
  store_le<short>(h + 72, 32);
  store_le<float>(h + 76, 1.0f);
  for (int i = 0; i < 3; ++i) store_le<float>(h + 80 + 4 * i, static_cast<float>(volume.spacing[i]));
  store_le<float>(h + 108, static_cast<float>(kNiftiVoxOffset));
  std::memcpy(h + 344, "n+1\0", 4);

  const auto& e = volume.extents;
  Buffer<float> file_order(volume.size());
  Index f = 0;
  for (Index z = 0; z < e[2]; ++z)
    for (Index y = 0; y < e[1]; ++y)
      for (Index x = 0; x < e[0]; ++x) file_order[f++] = volume(x, y, z);
  append_f32le(b, file_order);
  write_all(path, b);
}

Volume read_rvol(const std::filesystem::path& path) {
  const Bytes b = read_all(path);
  const auto h = parse_raw_header(b, path);
  const auto ext = h.json.value("extents", std::vector<Index>{});
  if (ext.size() != 3 || std::any_of(ext.begin(), ext.end(), [](Index x) { return x < 1; })) {
    throw DataError(DataError::Kind::invalid, path.string() + ": extents must be three positive integers");
  }
  Volume v({ext[0], ext[1], ext[2]});
  require_payload(b, h.payload, v.size(), path);
  v.voxels = parse_f32le(b.data() + h.payload, v.size());
  return v;
}

void write_rvol(const std::filesystem::path& path, const Volume& volume) {
  nlohmann::json h{{"extents", volume.extents}, {"dtype", "f32le"}};
  const std::string line = h.dump() + "\n";
  Bytes b(line.begin(), line.end());
  append_f32le(b, volume.voxels);
  write_all(path, b);
}

Image read_rimg(const std::filesystem::path& path) {
  const Bytes b = read_all(path);
  const auto h = parse_raw_header(b, path);
  const auto ext = h.json.value("extents", std::vector<Index>{});
  const Index c = h.json.value("channels", Index{1});
  if (ext.size() != 2 || ext[0] < 1 || ext[1] < 1 || c < 1) {
    throw DataError(DataError::Kind::invalid, path.string() + ": extents must be two positive integers");
  }
  Image img(c, {ext[0], ext[1]});
  require_payload(b, h.payload, img.pixels.size(), path);
  img.pixels = parse_f32le(b.data() + h.payload, img.pixels.size());
  return img;
}

void write_rimg(const std::filesystem::path& path, const Image& image) {
  nlohmann::json h{{"extents", image.extents}, {"channels", image.channels}, {"dtype", "f32le"}};
  const std::string line = h.dump() + "\n";
  Bytes b(line.begin(), line.end());
  append_f32le(b, image.pixels);
  write_all(path, b);
}

Volume read_volume(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".nii") return read_nifti(path);
  if (ext == ".rvol") return read_rvol(path);
  throw DataError(DataError::Kind::invalid, path.string() + ": unknown volume extension");
}

}  // namespace pasfuse
