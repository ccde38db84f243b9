#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "countlab/scene.hpp"

namespace countlab {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Row-major 8-bit RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, 0) {}

  [[nodiscard]] Rgb at(int x, int y) const {
    const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
  void set(int x, int y, Rgb c) {
    const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3;
    pixels[i] = c.r;
    pixels[i + 1] = c.g;
    pixels[i + 2] = c.b;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Geometry constants of the rasterizer. Cell i spans [b(i), b(i+1)) with
/// b(i) = round(i * side / 9).
struct RenderSpec {
  int side = 672;
  double large_fraction = 0.80;  // shape extent relative to the cell side
  double small_fraction = 0.40;
  double star_inner_ratio = 0.45;
  double plus_bar_fraction = 1.0 / 3.0;
};

Rgb color_rgb(Color c);
int cell_boundary(const RenderSpec& spec, int i);

/// Hard-edged drawing of every object centered in its cell on a black
/// background. A pixel is filled when its center lies inside the shape.
Image rasterize(const Scene& scene, const RenderSpec& spec = {});

nlohmann::ordered_json render_spec_to_json(const RenderSpec& spec);

}  // namespace countlab
