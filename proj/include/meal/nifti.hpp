#pragma once

// NIfTI-1 reader and writer (.nii and .nii.gz).

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "meal/volume.hpp"

namespace meal {

enum class VolumeFormat { nifti };

namespace nifti_detail {

inline constexpr std::size_t kHeaderSize = 348;

inline bool ends_with_gz(const std::string& p) {
  return p.size() >= 3 && p.compare(p.size() - 3, 3, ".gz") == 0;
}

// gzread handles both compressed and plain files.
inline std::vector<unsigned char> read_all(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path);
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> buf;
  unsigned char chunk[1 << 16];
  for (;;) {
    const int n = gzread(f, chunk, sizeof(chunk));
    if (n < 0) {
      gzclose(f);
      throw IoError("corrupt compressed stream in " + path);
    }
    if (n == 0) break;
    buf.insert(buf.end(), chunk, chunk + n);
  }
  gzclose(f);
  return buf;
}

template <class V>
V load_raw(const unsigned char* p, bool swap) {
  unsigned char b[sizeof(V)];
  std::memcpy(b, p, sizeof(V));
  if (swap) std::reverse(b, b + sizeof(V));
  V v;
  std::memcpy(&v, b, sizeof(V));
  return v;
}

template <class V>
void store_raw(std::vector<unsigned char>& buf, std::size_t off, V v) {
  std::memcpy(buf.data() + off, &v, sizeof(V));
}

inline double read_voxel(const unsigned char* p, int datatype, bool swap) {
  switch (datatype) {
    case 2: return *p;
    case 256: return static_cast<std::int8_t>(*p);
    case 4: return load_raw<std::int16_t>(p, swap);
    case 512: return load_raw<std::uint16_t>(p, swap);
    case 8: return load_raw<std::int32_t>(p, swap);
    case 768: return load_raw<std::uint32_t>(p, swap);
    case 16: return load_raw<float>(p, swap);
    case 64: return load_raw<double>(p, swap);
    default: throw IoError("unsupported NIfTI datatype " + std::to_string(datatype));
  }
}

inline std::size_t datatype_bytes(int datatype) {
  switch (datatype) {
    case 2: case 256: return 1;
    case 4: case 512: return 2;
    case 8: case 768: case 16: return 4;
    case 64: return 8;
    default: throw IoError("unsupported NIfTI datatype " + std::to_string(datatype));
  }
}

}  // namespace nifti_detail

/// Reads a NIfTI-1 volume. NIfTI axes (i, j, k) map to (H, W, D).
inline Volume load_volume(const std::string& path, VolumeFormat = VolumeFormat::nifti) {
  using namespace nifti_detail;
  const std::vector<unsigned char> buf = read_all(path);
  if (buf.size() < kHeaderSize) throw IoError(path + ": truncated NIfTI header");
  const unsigned char* h = buf.data();
  bool swap = false;
  if (load_raw<std::int32_t>(h, false) != 348) {
    if (load_raw<std::int32_t>(h, true) != 348) throw IoError(path + ": not a NIfTI-1 file");
    swap = true;
  }
  if (std::memcmp(h + 344, "n+1", 3) != 0 && std::memcmp(h + 344, "ni1", 3) != 0)
    throw IoError(path + ": bad NIfTI magic");
  if (std::memcmp(h + 344, "ni1", 3) == 0)
    throw IoError(path + ": detached .hdr/.img pairs are not supported");

  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = load_raw<std::int16_t>(h + 40 + 2 * i, swap);
  const int ndim = dim[0];
  if (ndim < 1 || ndim > 7) throw IoError(path + ": invalid dim[0]");
  if (ndim > 4) throw ShapeError(path + ": more than 4 dimensions");
  if (ndim == 4 && dim[4] != 1) throw ShapeError(path + ": non-singleton 4th dimension");
  std::size_t n[3] = {1, 1, 1};
  for (int i = 0; i < std::min(ndim, 3); ++i) {
    if (dim[i + 1] < 1) throw IoError(path + ": non-positive dimension");
    n[i] = static_cast<std::size_t>(dim[i + 1]);
  }
  const int datatype = load_raw<std::int16_t>(h + 70, swap);
  const std::size_t bytes = datatype_bytes(datatype);
  const float vox_offset = load_raw<float>(h + 108, swap);
  const float slope = load_raw<float>(h + 112, swap);
  const float inter = load_raw<float>(h + 116, swap);
  const auto offset = static_cast<std::size_t>(vox_offset < 352.0f ? 352.0f : vox_offset);
  const std::size_t count = n[0] * n[1] * n[2];
  if (buf.size() < offset + count * bytes) throw IoError(path + ": truncated voxel data");

  Volume v(Dims3{n[0], n[1], n[2]});
  for (int a = 0; a < 3; ++a) {
    const float p = load_raw<float>(h + 80 + 4 * a, swap);
    v.spacing[a] = p > 0.0f ? p : 1.0;
  }
  if (load_raw<std::int16_t>(h + 254, swap) > 0) {
    std::array<std::array<double, 4>, 3> aff{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) aff[r][c] = load_raw<float>(h + 280 + 16 * r + 4 * c, swap);
    v.affine = aff;
  }
  const bool scaled = slope != 0.0f && std::isfinite(slope);
  const unsigned char* p = h + offset;
  for (std::size_t k = 0; k < n[2]; ++k)
    for (std::size_t j = 0; j < n[1]; ++j)
      for (std::size_t i = 0; i < n[0]; ++i, p += bytes) {
        double x = read_voxel(p, datatype, swap);
        if (scaled) x = slope * x + inter;
        if (!std::isfinite(x)) throw IoError(path + ": non-finite voxel value");
        v.at(i, j, k) = static_cast<float>(x);
      }
  return v;
}

/// Writes a float32 NIfTI-1 single file; gzip-compressed when the path ends in .gz.
inline void save_volume(const std::string& path, const Volume& v) {
  using namespace nifti_detail;
  const Dims3 s = v.dims();
  if (s.h > 32767 || s.w > 32767 || s.d > 32767) throw ShapeError("volume too large for NIfTI-1");
  std::vector<unsigned char> buf(352 + v.size() * 4, 0);
  store_raw<std::int32_t>(buf, 0, 348);
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(s.h), static_cast<std::int16_t>(s.w),
                                static_cast<std::int16_t>(s.d), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store_raw<std::int16_t>(buf, 40 + 2 * i, dims[i]);
  store_raw<std::int16_t>(buf, 70, 16);
  store_raw<std::int16_t>(buf, 72, 32);
  store_raw<float>(buf, 76, 1.0f);
  for (int a = 0; a < 3; ++a) store_raw<float>(buf, 80 + 4 * a, static_cast<float>(v.spacing[a]));
  store_raw<float>(buf, 108, 352.0f);
  store_raw<float>(buf, 112, 1.0f);
  store_raw<std::uint8_t>(buf, 123, 10);  // xyzt_units: mm, s
  if (v.affine) {
    store_raw<std::int16_t>(buf, 254, 1);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        store_raw<float>(buf, 280 + 16 * r + 4 * c, static_cast<float>((*v.affine)[r][c]));
  }
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  std::size_t off = 352;
  for (std::size_t k = 0; k < s.d; ++k)
    for (std::size_t j = 0; j < s.w; ++j)
      for (std::size_t i = 0; i < s.h; ++i, off += 4) store_raw<float>(buf, off, v.at(i, j, k));

  if (ends_with_gz(path)) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write " + path);
    const int w = gzwrite(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (gzclose(f) != Z_OK || w != static_cast<int>(buf.size()))
      throw IoError("short write to " + path);
  } else {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("cannot write " + path);
  }
}

}  // namespace meal
