#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "voxreg/fusion.hpp"
#include "voxreg/regularizer.hpp"
#include "voxreg/stereo.hpp"
#include "voxreg/voxel_store.hpp"

namespace voxreg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat key=value pipeline configuration. Unset optional fields fall back to
/// values that depend on the voxel size.
struct Config {
  double voxel_size = 0.10;

  // Volumetric regularizer.
  std::optional<double> lambda_3d;
  double sigma_p = 0.5;
  double tau = 1.0 / 6.0;
  double theta = 1.0;
  int iters_3d = 200;

  // Fusion.
  std::optional<double> mu_3d;
  double max_weight = 100.0;
  double max_range = 25.0;
  std::size_t table_size = 1u << 16;
  std::optional<std::size_t> memory_budget_bytes;

  // Stereo.
  double lambda_2d = 0.5;
  double alpha1 = 1.0;
  double alpha2 = 5.0;
  double beta = 1.0;
  double gamma = 4.0;
  int iters_2d = 80;
  int census_window = 5;
  int d_min = 0;
  int d_max = 128;

  // Extraction and evaluation.
  double min_weight = 1.0;
  bool eval_sample_surface = false;
  std::size_t eval_samples = 200000;

  // Camera.
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  double baseline = 0;

  // Inputs; relative paths resolve against the data directory.
  std::string poses_file = "poses.txt";
  std::string depth_dir = "depth";
  std::string left_dir = "left";
  std::string right_dir = "right";
  std::string reference_file = "reference.xyz";

  std::uint64_t seed = 1;
  int threads = 0;  ///< 0 = library default

  bool operator==(const Config&) const = default;

  /// Table values: 0.8 / 1.0 m at 10 cm voxels, 0.4 / 1.6 m at 20 cm; other
  /// sizes take the entry of the nearest tabulated voxel size.
  double effective_lambda_3d() const;
  double effective_mu_3d() const;

  FusionParams fusion_params() const;
  RegParams reg_params() const;
  StereoParams stereo_params() const;
  CameraModel camera() const;
  BlockMapOptions map_options() const;

  /// Throws ConfigError on out-of-range values.
  void validate() const;

  /// Assigns one key; throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);

  std::string emit() const;
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);
};

}  // namespace voxreg
