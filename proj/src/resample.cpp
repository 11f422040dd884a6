#include "affsam/resample.hpp"

#include <algorithm>
#include <cmath>

#include "affsam/errors.hpp"

namespace affsam {

std::vector<LinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw DimensionError("bilinear resize with an empty axis");
  std::vector<LinearTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double w1 = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - w1, w1};
  }
  return taps;
}

std::vector<double> resize_bilinear(std::span<const double> src, std::size_t h, std::size_t w,
                                    std::size_t out_h, std::size_t out_w) {
  if (src.size() != h * w) throw DimensionError("resize_bilinear: plane size does not match h*w");
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  std::vector<double> out(out_h * out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const auto& y = ty[oy];
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const auto& x = tx[ox];
      out[oy * out_w + ox] = y.w0 * (x.w0 * src[y.i0 * w + x.i0] + x.w1 * src[y.i0 * w + x.i1]) +
                             y.w1 * (x.w0 * src[y.i1 * w + x.i0] + x.w1 * src[y.i1 * w + x.i1]);
    }
  }
  return out;
}

}  // namespace affsam
