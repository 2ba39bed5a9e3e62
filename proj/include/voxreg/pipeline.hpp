#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "voxreg/config.hpp"
#include "voxreg/synthetic.hpp"

namespace voxreg {

using Json = nlohmann::ordered_json;

/// Caps the worker threads of parallel stages; 0 keeps the default.
void set_thread_count(int threads);

/// Each stage returns its machine-readable statistics. Inputs are resolved
/// relative to `data` using the path fields of the config.

Json stage_gen(const SceneSpec& scene, const Config& base, const std::filesystem::path& out);

/// Stereo pairs to depth maps for the right camera of each pair. Writes
/// out/depth/*.pfm and out/poses.txt (right camera poses).
Json stage_stereo(const Config& cfg, const std::filesystem::path& data,
                  const std::filesystem::path& out);

Json stage_fuse(const Config& cfg, const std::filesystem::path& data,
                const std::filesystem::path& snapshot);

Json stage_regularize(const Config& cfg, const std::filesystem::path& in,
                      const std::filesystem::path& out);

Json stage_extract(const Config& cfg, const std::filesystem::path& in,
                   const std::filesystem::path& ply);

Json stage_eval(const Config& cfg, const std::filesystem::path& ply,
                const std::filesystem::path& reference,
                const std::optional<std::filesystem::path>& histogram_csv = std::nullopt);

Json stage_info(const std::filesystem::path& snapshot);

/// KITTI laser scans, one per pose, moved into the world frame and written as
/// an xyz reference cloud. `stride` keeps every n-th point.
Json stage_consolidate(const std::filesystem::path& scans_dir,
                       const std::filesystem::path& poses_file,
                       const std::filesystem::path& calib_file,
                       const std::filesystem::path& out, int stride = 1);

/// fuse, regularize, extract and (when a reference cloud exists) eval, with
/// the raw and regularized results side by side. Runs the stereo stage first
/// when `use_stereo` is set or the data has no depth maps.
Json stage_pipeline(const Config& cfg, const std::filesystem::path& data,
                    const std::filesystem::path& out, bool use_stereo = false);

void write_json(const Json& j, const std::filesystem::path& path);

}  // namespace voxreg
