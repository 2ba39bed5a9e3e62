#include "voxreg/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

namespace voxreg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PFM

Image<float> read_pfm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  is >> magic >> w >> h >> scale;
  if (!is || magic != "Pf" || w <= 0 || h <= 0 || scale == 0)
    throw DataError(path.string() + ": not a single-channel PFM");
  is.get();  // single whitespace before the raster
  const bool little = scale < 0;
  Image<float> img(w, h);
  std::vector<std::uint32_t> row(static_cast<std::size_t>(w));
  for (int y = h - 1; y >= 0; --y) {
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
    if (!is) throw DataError(path.string() + ": truncated PFM raster");
    for (int x = 0; x < w; ++x) {
      std::uint32_t bits = row[x];
      if (little != (std::endian::native == std::endian::little)) bits = __builtin_bswap32(bits);
      img(x, y) = std::bit_cast<float>(bits);
    }
  }
  return img;
}

void write_pfm(const Image<float>& img, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "Pf\n" << img.width() << ' ' << img.height() << "\n-1.0\n";
  for (int y = img.height() - 1; y >= 0; --y)
    os.write(reinterpret_cast<const char*>(&img(0, y)),
             static_cast<std::streamsize>(img.width() * sizeof(float)));
  if (!os) throw DataError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// PNG (libpng)

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp, png_const_charp msg) {
  throw DataError(std::string("libpng: ") + msg);
}
void png_warn(png_structp, png_const_charp) {}

}  // namespace

PngData read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError(path.string() + ": not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialization failed");
  }
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_png(png, info,
               PNG_TRANSFORM_PACKING | PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_SWAP_ENDIAN, nullptr);

  PngData out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  if (out.bit_depth != 8 && out.bit_depth != 16)
    throw DataError(path.string() + ": unsupported PNG bit depth");
  png_bytepp rows = png_get_rows(png, info);
  const std::size_t per_row = static_cast<std::size_t>(out.width) * out.channels;
  out.samples.resize(per_row * out.height);
  for (int y = 0; y < out.height; ++y) {
    for (std::size_t k = 0; k < per_row; ++k) {
      std::uint16_t v;
      if (out.bit_depth == 16) std::memcpy(&v, rows[y] + 2 * k, 2);
      else v = rows[y][k];
      out.samples[y * per_row + k] = v;
    }
  }
  return out;
}

void write_png(const PngData& data, const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialization failed");
  }
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  int color_type = PNG_COLOR_TYPE_GRAY;
  if (data.channels == 2) color_type = PNG_COLOR_TYPE_GRAY_ALPHA;
  else if (data.channels == 3) color_type = PNG_COLOR_TYPE_RGB;
  else if (data.channels == 4) color_type = PNG_COLOR_TYPE_RGB_ALPHA;

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(data.width),
               static_cast<png_uint_32>(data.height), data.bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t per_row = static_cast<std::size_t>(data.width) * data.channels;
  std::vector<png_byte> row(per_row * (data.bit_depth / 8));
  for (int y = 0; y < data.height; ++y) {
    for (std::size_t k = 0; k < per_row; ++k) {
      const std::uint16_t v = data.samples[y * per_row + k];
      if (data.bit_depth == 16) {
        row[2 * k] = static_cast<png_byte>(v >> 8);  // PNG is big-endian
        row[2 * k + 1] = static_cast<png_byte>(v & 0xff);
      } else {
        row[k] = static_cast<png_byte>(v);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
}

namespace {

PngData read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::string magic;
  is >> magic;
  if (magic != "P5" && magic != "P6") throw DataError(path.string() + ": not a binary PGM/PPM");
  auto next_int = [&] {
    int v = 0;
    while (is >> std::ws && is.peek() == '#') {
      std::string skip;
      std::getline(is, skip);
    }
    is >> v;
    return v;
  };
  PngData out;
  out.width = next_int();
  out.height = next_int();
  const int maxval = next_int();
  is.get();
  if (!is || out.width <= 0 || out.height <= 0 || maxval <= 0 || maxval > 65535)
    throw DataError(path.string() + ": malformed PGM header");
  out.channels = magic == "P5" ? 1 : 3;
  out.bit_depth = maxval > 255 ? 16 : 8;
  const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (out.bit_depth == 16) {
      const int hi = is.get(), lo = is.get();
      out.samples[i] = static_cast<std::uint16_t>((hi << 8) | lo);
    } else {
      out.samples[i] = static_cast<std::uint16_t>(is.get());
    }
  }
  if (!is) throw DataError(path.string() + ": truncated PGM raster");
  return out;
}

PngData read_raster(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pgm" || ext == ".ppm") return read_pgm(path);
  return read_png(path);
}

}  // namespace

GrayImage read_gray(const fs::path& path) {
  const PngData d = read_raster(path);
  const double maxv = d.bit_depth == 16 ? 65535.0 : 255.0;
  GrayImage g(d.width, d.height);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * d.width + x) * d.channels;
      double v;
      if (d.channels >= 3)
        v = 0.299 * d.samples[base] + 0.587 * d.samples[base + 1] + 0.114 * d.samples[base + 2];
      else
        v = d.samples[base];
      g(x, y) = static_cast<float>(v / maxv);
    }
  return g;
}

RgbImage read_rgb(const fs::path& path) {
  const PngData d = read_raster(path);
  const int shift = d.bit_depth == 16 ? 8 : 0;
  RgbImage img(d.width, d.height);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * d.width + x) * d.channels;
      auto ch = [&](int c) {
        return static_cast<unsigned char>(d.samples[base + (d.channels >= 3 ? c : 0)] >> shift);
      };
      img(x, y) = Rgb{ch(0), ch(1), ch(2)};
    }
  return img;
}

void write_gray_png(const GrayImage& img, const fs::path& path) {
  PngData d{img.width(), img.height(), 1, 8, {}};
  d.samples.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    d.samples[i] = static_cast<std::uint16_t>(
        std::lround(std::clamp(static_cast<double>(img.data()[i]), 0.0, 1.0) * 255.0));
  write_png(d, path);
}

void write_rgb_png(const RgbImage& img, const fs::path& path) {
  PngData d{img.width(), img.height(), 3, 8, {}};
  d.samples.resize(img.size() * 3);
  for (std::size_t i = 0; i < img.size(); ++i) {
    d.samples[3 * i] = img.data()[i].r;
    d.samples[3 * i + 1] = img.data()[i].g;
    d.samples[3 * i + 2] = img.data()[i].b;
  }
  write_png(d, path);
}

DepthMap read_depth(const fs::path& path) {
  constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();
  if (path.extension() == ".pfm") {
    DepthMap d = read_pfm(path);
    for (float& v : d.data())
      if (!valid_depth(v)) v = kNaN;
    return d;
  }
  const PngData png = read_png(path);
  if (png.bit_depth != 16 || png.channels != 1)
    throw DataError(path.string() + ": depth PNG must be 16-bit single channel");
  DepthMap d(png.width, png.height);
  for (std::size_t i = 0; i < png.samples.size(); ++i)
    d.data()[i] = png.samples[i] == 0 ? kNaN : static_cast<float>(png.samples[i] * 1e-3);
  return d;
}

void write_depth_png_mm(const DepthMap& depth, const fs::path& path) {
  PngData d{depth.width(), depth.height(), 1, 16, {}};
  d.samples.resize(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const float v = depth.data()[i];
    d.samples[i] = valid_depth(v)
                       ? static_cast<std::uint16_t>(std::clamp(std::lround(v * 1000.0), 0L, 65535L))
                       : 0;
  }
  write_png(d, path);
}

// ---------------------------------------------------------------------------
// Poses

std::vector<Pose> read_poses(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<Pose> poses;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::array<double, 12> m{};
    for (double& v : m) {
      if (!(ls >> v)) {
        throw DataError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 12 numbers per pose line");
      }
    }
    std::string extra;
    if (ls >> extra)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": trailing data on pose line");
    Pose p = Pose::from_row_major_3x4(m);
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    poses.push_back(p);
  }
  return poses;
}

void write_poses(const std::vector<Pose>& poses, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.precision(17);
  for (const Pose& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) os << p.rotation(r, c) << ' ';
      os << p.translation[r] << (r == 2 ? '\n' : ' ');
    }
  }
  if (!os) throw DataError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// KITTI

namespace {

std::array<double, 12> kitti_row(const fs::path& path, std::string_view key) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    if (name != std::string(key) + ":") continue;
    std::array<double, 12> m{};
    for (double& v : m)
      if (!(ls >> v))
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 12 numbers");
    return m;
  }
  throw DataError(path.string() + ": no " + std::string(key) + " entry");
}

}  // namespace

CameraModel read_kitti_calib(const fs::path& path) {
  const auto p0 = kitti_row(path, "P0");
  const auto p1 = kitti_row(path, "P1");
  CameraModel cam;
  cam.fx = p0[0];
  cam.cx = p0[2];
  cam.fy = p0[5];
  cam.cy = p0[6];
  if (!(cam.fx > 0)) throw DataError(path.string() + ": non-positive focal length");
  cam.baseline = -p1[3] / p1[0];
  return cam;
}

Pose read_kitti_velo_to_cam(const fs::path& path) {
  const Pose p = Pose::from_row_major_3x4(kitti_row(path, "Tr"));
  try {
    p.validate(1e-4);
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return p;
}

std::vector<Vec3d> read_velodyne_scan(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<Vec3d> out;
  std::array<float, 4> rec{};
  while (is.read(reinterpret_cast<char*>(rec.data()), sizeof rec))
    out.emplace_back(rec[0], rec[1], rec[2]);
  if (is.gcount() != 0) throw DataError(path.string() + ": truncated scan record");
  return out;
}

std::vector<fs::path> list_files(const fs::path& dir, std::initializer_list<std::string_view> extensions) {
  if (!fs::is_directory(dir)) throw DataError("missing directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    for (std::string_view e : extensions)
      if (ext == e) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

RgbImage colorize(const Image<float>& values, float lo, float hi) {
  RgbImage out(values.width(), values.height());
  const float span = hi > lo ? hi - lo : 1.0f;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values.data()[i];
    if (!std::isfinite(v)) continue;
    const double t = std::clamp((v - lo) / span, 0.0f, 1.0f);
    // Blue -> cyan -> yellow -> red ramp.
    const double r = std::clamp(2.0 * t - 0.5, 0.0, 1.0);
    const double g = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
    const double b = std::clamp(1.5 - 2.0 * t, 0.0, 1.0);
    out.data()[i] = Rgb{static_cast<unsigned char>(r * 255), static_cast<unsigned char>(g * 255),
                        static_cast<unsigned char>(b * 255)};
  }
  return out;
}

}  // namespace voxreg
