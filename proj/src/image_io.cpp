#include "affsam/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "affsam/detail/binary.hpp"
#include "affsam/errors.hpp"

namespace affsam {

AffordanceMap AffordanceMap::zeros(std::size_t height, std::size_t width) {
  return {height, width, std::vector<double>(height * width, 0.0)};
}

AffordanceMap AffordanceMap::from(std::size_t height, std::size_t width, std::vector<double> values) {
  if (values.size() != height * width) {
    throw DimensionError("affordance map " + std::to_string(height) + "x" + std::to_string(width) + " given " +
                         std::to_string(values.size()) + " values");
  }
  return {height, width, std::move(values)};
}

double AffordanceMap::max() const {
  if (values.empty()) return 0.0;
  return *std::max_element(values.begin(), values.end());
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    unsigned long value = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000'000UL) throw IoError(std::string("pnm: ") + what + " too large");
      ++pos_;
    }
    if (pos_ == start) throw IoError(std::string("pnm: missing ") + what);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw IoError("pnm: malformed header terminator");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

PnmRaster parse_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw IoError("pnm: only binary P5/P6 files are supported");
  }
  PnmRaster r;
  r.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader header(bytes);
  header.advance(2);
  r.width = header.number("width");
  r.height = header.number("height");
  const unsigned long maxval = header.number("maxval");
  if (r.width == 0 || r.height == 0) throw IoError("pnm: empty raster");
  if (maxval == 0 || maxval > 65535) throw IoError("pnm: maxval out of range");
  r.maxval = static_cast<unsigned>(maxval);
  header.single_whitespace();

  const std::size_t count = r.width * r.height * static_cast<std::size_t>(r.channels);
  const std::size_t bytes_per = r.maxval < 256 ? 1 : 2;
  if (bytes.size() - header.pos() < count * bytes_per) throw IoError("pnm: truncated raster");
  r.samples.resize(count);
  const std::uint8_t* data = bytes.data() + header.pos();
  for (std::size_t i = 0; i < count; ++i) {
    r.samples[i] = bytes_per == 1 ? data[i] : static_cast<std::uint16_t>((data[2 * i] << 8) | data[2 * i + 1]);
    if (r.samples[i] > r.maxval) throw IoError("pnm: sample exceeds maxval");
  }
  return r;
}

std::vector<std::uint8_t> encode_pnm(const PnmRaster& raster) {
  if (raster.maxval != 255) throw IoError("pnm: writer emits maxval 255 only");
  if (raster.samples.size() != raster.width * raster.height * static_cast<std::size_t>(raster.channels)) {
    throw DimensionError("pnm: sample count does not match raster size");
  }
  const std::string header = std::string(raster.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(raster.width) +
                             " " + std::to_string(raster.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + raster.samples.size());
  for (auto s : raster.samples) out.push_back(static_cast<std::uint8_t>(s));
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

PnmRaster read_pnm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_pnm(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_pnm(const std::filesystem::path& path, const PnmRaster& raster) { write_file_bytes(path, encode_pnm(raster)); }

std::uint8_t quantize_unit(double value) {
  if (!(value > 0.0)) return 0;  // also maps NaN to 0
  if (value >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(value * 255.0));
}

void write_map_pgm(const std::filesystem::path& path, const AffordanceMap& map) {
  PnmRaster r;
  r.channels = 1;
  r.width = map.width;
  r.height = map.height;
  r.samples.reserve(map.values.size());
  for (double v : map.values) r.samples.push_back(quantize_unit(v));
  write_pnm(path, r);
}

AffordanceMap read_map_pgm(const std::filesystem::path& path) {
  const PnmRaster r = read_pnm(path);
  if (r.channels != 1) throw IoError(path.string() + ": affordance maps must be single-channel P5");
  AffordanceMap map = AffordanceMap::zeros(r.height, r.width);
  for (std::size_t i = 0; i < r.samples.size(); ++i) map.values[i] = r.samples[i] / static_cast<double>(r.maxval);
  return map;
}

AffordanceMap quantized(const AffordanceMap& map) {
  AffordanceMap out = map;
  for (auto& v : out.values) v = quantize_unit(v) / 255.0;
  return out;
}

void write_image_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DimensionError("ppm: images must have 1 or 3 channels");
  PnmRaster r;
  r.channels = static_cast<int>(image.channels);
  r.width = image.width;
  r.height = image.height;
  const std::size_t plane = image.width * image.height;
  r.samples.resize(plane * image.channels);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < image.channels; ++c) r.samples[i * image.channels + c] = quantize_unit(image.values[c * plane + i]);
  }
  write_pnm(path, r);
}

Image read_image(const std::filesystem::path& path) {
  const PnmRaster r = read_pnm(path);
  Image img;
  img.channels = static_cast<std::size_t>(r.channels);
  img.height = r.height;
  img.width = r.width;
  const std::size_t plane = r.width * r.height;
  img.values.resize(plane * img.channels);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < img.channels; ++c) {
      img.values[c * plane + i] = r.samples[i * img.channels + c] / static_cast<double>(r.maxval);
    }
  }
  return img;
}

namespace {

constexpr char kF64Magic[8] = {'A', 'F', 'M', 'A', 'P', 'F', '6', '4'};

}  // namespace

void write_map_f64(const std::filesystem::path& path, const AffordanceMap& map) {
  std::vector<std::uint8_t> out(std::begin(kF64Magic), std::end(kF64Magic));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.height));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.width));
  for (double v : map.values) detail::put_le<double>(out, v);
  write_file_bytes(path, out);
}

AffordanceMap read_map_f64(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kF64Magic, 8) != 0) {
    throw IoError(path.string() + ": not a float64 map sidecar");
  }
  std::size_t pos = 8;
  const auto h = detail::get_le<std::uint32_t>(bytes, pos);
  const auto w = detail::get_le<std::uint32_t>(bytes, pos);
  AffordanceMap map = AffordanceMap::zeros(h, w);
  for (auto& v : map.values) v = detail::get_le<double>(bytes, pos);
  return map;
}

}  // namespace affsam
