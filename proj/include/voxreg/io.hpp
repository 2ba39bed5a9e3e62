#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "voxreg/fusion.hpp"
#include "voxreg/image.hpp"

namespace voxreg {

/// Malformed or missing input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Portable float map, single channel. Rows are stored bottom-up; a negative
// scale marks little-endian samples.
Image<float> read_pfm(const std::filesystem::path& path);
void write_pfm(const Image<float>& img, const std::filesystem::path& path);

struct PngData {
  int width = 0, height = 0;
  int channels = 0;   ///< 1 gray, 2 gray+alpha, 3 RGB, 4 RGBA
  int bit_depth = 0;  ///< 8 or 16
  std::vector<std::uint16_t> samples;  ///< interleaved, row-major
};

PngData read_png(const std::filesystem::path& path);
void write_png(const PngData& png, const std::filesystem::path& path);

/// 8-bit PNG or binary PGM (P5), gray or RGB, as intensities in [0, 1].
GrayImage read_gray(const std::filesystem::path& path);
/// 8-bit RGB PNG (gray files are replicated).
RgbImage read_rgb(const std::filesystem::path& path);
void write_gray_png(const GrayImage& img, const std::filesystem::path& path);
void write_rgb_png(const RgbImage& img, const std::filesystem::path& path);

/// Depth from PFM (meters; NaN or <= 0 invalid) or 16-bit PNG (millimeters;
/// 0 invalid), chosen by extension.
DepthMap read_depth(const std::filesystem::path& path);
void write_depth_png_mm(const DepthMap& depth, const std::filesystem::path& path);

/// One pose per line: 12 numbers, row-major 3x4 camera-to-world. Blank lines
/// are not allowed. Errors name the offending line.
std::vector<Pose> read_poses(const std::filesystem::path& path);
void write_poses(const std::vector<Pose>& poses, const std::filesystem::path& path);

/// KITTI odometry calib.txt: intrinsics from P0 and baseline from P1. Image
/// size is not part of the file and is left at zero.
CameraModel read_kitti_calib(const std::filesystem::path& path);
/// The "Tr" line of a KITTI calib.txt: laser to left camera.
Pose read_kitti_velo_to_cam(const std::filesystem::path& path);
/// Velodyne .bin scan: float32 x, y, z, reflectance records.
std::vector<Vec3d> read_velodyne_scan(const std::filesystem::path& path);

/// Regular files in `dir` with one of the given extensions, sorted by name.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                              std::initializer_list<std::string_view> extensions);

/// False-color rendering of a scalar map over [lo, hi]; NaN renders black.
RgbImage colorize(const Image<float>& values, float lo, float hi);

}  // namespace voxreg
