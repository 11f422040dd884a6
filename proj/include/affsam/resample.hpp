#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace affsam {

/// One output sample of a 1-D linear interpolation: w0*in[i0] + w1*in[i1].
struct LinearTap {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double w0 = 1.0;
  double w1 = 0.0;
};

/// Half-pixel-centred linear interpolation taps from `in` samples to `out`.
std::vector<LinearTap> bilinear_taps(std::size_t in, std::size_t out);

/// Bilinear resize of a single row-major h x w plane.
std::vector<double> resize_bilinear(std::span<const double> src, std::size_t h, std::size_t w,
                                    std::size_t out_h, std::size_t out_w);

}  // namespace affsam
