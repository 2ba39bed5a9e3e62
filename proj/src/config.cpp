#include "voxreg/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <type_traits>
#include <variant>

namespace voxreg {

namespace {

using Field = std::variant<double Config::*, std::optional<double> Config::*, int Config::*,
                           std::size_t Config::*, std::optional<std::size_t> Config::*,
                           bool Config::*, std::string Config::*>;

struct Entry {
  std::string_view key;
  Field field;
};

const std::array kFields{
    Entry{"voxel_size", &Config::voxel_size},
    Entry{"lambda_3d", &Config::lambda_3d},
    Entry{"sigma_p", &Config::sigma_p},
    Entry{"tau", &Config::tau},
    Entry{"theta", &Config::theta},
    Entry{"iters_3d", &Config::iters_3d},
    Entry{"mu_3d", &Config::mu_3d},
    Entry{"max_weight", &Config::max_weight},
    Entry{"max_range", &Config::max_range},
    Entry{"table_size", &Config::table_size},
    Entry{"memory_budget_bytes", &Config::memory_budget_bytes},
    Entry{"lambda_2d", &Config::lambda_2d},
    Entry{"alpha1", &Config::alpha1},
    Entry{"alpha2", &Config::alpha2},
    Entry{"beta", &Config::beta},
    Entry{"gamma", &Config::gamma},
    Entry{"iters_2d", &Config::iters_2d},
    Entry{"census_window", &Config::census_window},
    Entry{"d_min", &Config::d_min},
    Entry{"d_max", &Config::d_max},
    Entry{"min_weight", &Config::min_weight},
    Entry{"eval_sample_surface", &Config::eval_sample_surface},
    Entry{"eval_samples", &Config::eval_samples},
    Entry{"fx", &Config::fx},
    Entry{"fy", &Config::fy},
    Entry{"cx", &Config::cx},
    Entry{"cy", &Config::cy},
    Entry{"width", &Config::width},
    Entry{"height", &Config::height},
    Entry{"baseline", &Config::baseline},
    Entry{"poses_file", &Config::poses_file},
    Entry{"depth_dir", &Config::depth_dir},
    Entry{"left_dir", &Config::left_dir},
    Entry{"right_dir", &Config::right_dir},
    Entry{"reference_file", &Config::reference_file},
    Entry{"seed", &Config::seed},
    Entry{"threads", &Config::threads},
};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(v) + "'");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  return parse_number<double>(key, v);
}

template <typename T>
std::string to_text(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  }
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

struct TableRow {
  double voxel_size, lambda, mu;
};
constexpr std::array kTable{TableRow{0.10, 0.8, 1.0}, TableRow{0.20, 0.4, 1.6}};

const TableRow& nearest_row(double voxel_size) {
  const TableRow* best = &kTable[0];
  for (const auto& r : kTable)
    if (std::abs(r.voxel_size - voxel_size) < std::abs(best->voxel_size - voxel_size)) best = &r;
  return *best;
}

}  // namespace

double Config::effective_lambda_3d() const {
  return lambda_3d.value_or(nearest_row(voxel_size).lambda);
}

double Config::effective_mu_3d() const { return mu_3d.value_or(nearest_row(voxel_size).mu); }

FusionParams Config::fusion_params() const {
  return FusionParams{effective_mu_3d(), max_weight, max_range};
}

RegParams Config::reg_params() const {
  RegParams p;
  p.lambda = effective_lambda_3d();
  p.sigma_p = sigma_p;
  p.tau = tau;
  p.theta = theta;
  p.iterations = iters_3d;
  return p;
}

StereoParams Config::stereo_params() const {
  StereoParams p;
  p.lambda = lambda_2d;
  p.alpha1 = alpha1;
  p.alpha2 = alpha2;
  p.beta = beta;
  p.gamma = gamma;
  p.window = census_window;
  p.d_min = d_min;
  p.d_max = d_max;
  p.outer_iterations = iters_2d;
  return p;
}

CameraModel Config::camera() const { return CameraModel{fx, fy, cx, cy, width, height, baseline}; }

BlockMapOptions Config::map_options() const { return BlockMapOptions{table_size, memory_budget_bytes}; }

void Config::validate() const {
  if (!(voxel_size > 0) || !std::isfinite(voxel_size))
    throw ConfigError("voxel_size must be positive");
  if (table_size == 0) throw ConfigError("table_size must be positive");
  if (!(min_weight >= 0)) throw ConfigError("min_weight must be non-negative");
  if (threads < 0) throw ConfigError("threads must be non-negative");
  try {
    fusion_params().validate();
    reg_params().validate();
    stereo_params().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void Config::set(std::string_view key, std::string_view value) {
  for (const Entry& e : kFields) {
    if (e.key != key) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(this->*member)>;
          T& slot = this->*member;
          if constexpr (std::is_same_v<T, double>) {
            slot = parse_double(key, value);
          } else if constexpr (std::is_same_v<T, std::optional<double>>) {
            if (value.empty() || value == "auto") slot.reset();
            else slot = parse_double(key, value);
          } else if constexpr (std::is_same_v<T, std::optional<std::size_t>>) {
            if (value.empty() || value == "none") slot.reset();
            else slot = parse_number<std::size_t>(key, value);
          } else if constexpr (std::is_same_v<T, bool>) {
            if (value == "1" || value == "true") slot = true;
            else if (value == "0" || value == "false") slot = false;
            else throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(value) + "'");
          } else if constexpr (std::is_same_v<T, std::string>) {
            slot = std::string(value);
          } else {
            slot = parse_number<T>(key, value);
          }
        },
        e.field);
    return;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string Config::emit() const {
  std::string out;
  for (const Entry& e : kFields) {
    std::string text;
    bool present = true;
    std::visit(
        [&](auto member) {
          const auto& v = this->*member;
          using T = std::remove_cvref_t<decltype(v)>;
          if constexpr (std::is_same_v<T, std::optional<double>> ||
                        std::is_same_v<T, std::optional<std::size_t>>) {
            present = v.has_value();
            if (present) text = to_text(*v);
          } else if constexpr (std::is_same_v<T, bool>) {
            text = v ? "true" : "false";
          } else if constexpr (std::is_same_v<T, std::string>) {
            text = v;
          } else {
            text = to_text(v);
          }
        },
        e.field);
    if (!present) continue;
    out += e.key;
    out += " = ";
    out += text;
    out += '\n';
  }
  return out;
}

Config Config::parse(std::string_view text) {
  Config c;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

}  // namespace voxreg
