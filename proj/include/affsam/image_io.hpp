#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace affsam {

/// H x W map of non-negative action-possibility strength, row-major.
struct AffordanceMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  static AffordanceMap zeros(std::size_t height, std::size_t width);
  static AffordanceMap from(std::size_t height, std::size_t width, std::vector<double> values);

  std::size_t size() const { return values.size(); }
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double max() const;
};

/// Channel-major C x H x W image with samples in [0,1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
};

/// Raw netpbm raster (P5 greyscale or P6 RGB), samples interleaved per pixel.
struct PnmRaster {
  int channels = 1;
  std::size_t width = 0;
  std::size_t height = 0;
  unsigned maxval = 255;
  std::vector<std::uint16_t> samples;
};

/// Parses binary P5/P6 data; header comments and any whitespace are accepted,
/// maxval up to 65535 (16-bit samples big-endian).
PnmRaster parse_pnm(std::span<const std::uint8_t> bytes);
/// Canonical binary encoding: "P5\n<w> <h>\n255\n" (or P6) followed by 8-bit samples.
std::vector<std::uint8_t> encode_pnm(const PnmRaster& raster);

PnmRaster read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const PnmRaster& raster);

std::uint8_t quantize_unit(double value);

/// Value v is stored as round(255 * clamp(v, 0, 1)).
void write_map_pgm(const std::filesystem::path& path, const AffordanceMap& map);
/// Sample s is read as s / maxval.
AffordanceMap read_map_pgm(const std::filesystem::path& path);
/// The map as it reads back after a PGM round trip.
AffordanceMap quantized(const AffordanceMap& map);

void write_image_ppm(const std::filesystem::path& path, const Image& image);
/// P6 yields 3 channels, P5 one.
Image read_image(const std::filesystem::path& path);

/// Raw float sidecar: "AFMAPF64", u32 height, u32 width, then height*width
/// little-endian float64 values.
void write_map_f64(const std::filesystem::path& path, const AffordanceMap& map);
AffordanceMap read_map_f64(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace affsam
