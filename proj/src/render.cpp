#include "countlab/render.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace countlab {

namespace {

struct Point {
  double x, y;
};

// Unit vectors of the ten star vertices, starting at the top and turning
// clockwise in screen space (y grows downwards). Angles are multiples of 36
// degrees, so only square roots are needed, which are exactly rounded on
// every IEEE-754 platform.
std::array<Point, 10> star_directions() {
  const double s5 = std::sqrt(5.0);
  const double c36 = (1.0 + s5) / 4.0;
  const double s36 = std::sqrt(10.0 - 2.0 * s5) / 4.0;
  const double c72 = (s5 - 1.0) / 4.0;
  const double s72 = std::sqrt(10.0 + 2.0 * s5) / 4.0;
  // angle measured from "up", clockwise: (sin a, -cos a)
  return {{{0.0, -1.0},
           {s36, -c36},
           {s72, -c72},
           {s72, c72},
           {s36, c36},
           {0.0, 1.0},
           {-s36, c36},
           {-s72, c72},
           {-s72, -c72},
           {-s36, -c36}}};
}

bool inside_polygon(std::span<const Point> poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      const double xc = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (x < xc) in = !in;
    }
  }
  return in;
}

double cross(Point a, Point b, Point p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); }

void draw_object(Image& img, const SceneObject& o, const RenderSpec& spec) {
  const int x0 = cell_boundary(spec, o.cell.col);
  const int x1 = cell_boundary(spec, o.cell.col + 1);
  const int y0 = cell_boundary(spec, o.cell.row);
  const int y1 = cell_boundary(spec, o.cell.row + 1);
  const double cx = 0.5 * (x0 + x1);
  const double cy = 0.5 * (y0 + y1);
  const double frac = o.size == Size::large ? spec.large_fraction : spec.small_fraction;
  const double extent = frac * std::min(x1 - x0, y1 - y0);
  const double half = 0.5 * extent;
  const Rgb color = color_rgb(o.color);

  std::array<Point, 10> star{};
  if (o.cls == ObjectClass::star) {
    const auto dirs = star_directions();
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      const double r = (i % 2 == 0) ? half : half * spec.star_inner_ratio;
      star[i] = {cx + r * dirs[i].x, cy + r * dirs[i].y};
    }
  }
  const double tri_h = extent * std::sqrt(3.0) / 2.0;
  const Point apex{cx, cy - tri_h / 2.0};
  const Point base_l{cx - half, cy + tri_h / 2.0};
  const Point base_r{cx + half, cy + tri_h / 2.0};
  const double bar = 0.5 * extent * spec.plus_bar_fraction;

  for (int y = y0; y < y1; ++y) {
    const double py = y + 0.5;
    const double dy = py - cy;
    for (int x = x0; x < x1; ++x) {
      const double px = x + 0.5;
      const double dx = px - cx;
      bool in = false;
      switch (o.cls) {
        case ObjectClass::square:
          in = std::abs(dx) <= half && std::abs(dy) <= half;
          break;
        case ObjectClass::circle:
          in = dx * dx + dy * dy <= half * half;
          break;
        case ObjectClass::triangle: {
          const Point p{px, py};
          // Vertices run apex -> base_r -> base_l (clockwise on screen).
          in = cross(apex, base_r, p) >= 0 && cross(base_r, base_l, p) >= 0 && cross(base_l, apex, p) >= 0;
          break;
        }
        case ObjectClass::star:
          in = inside_polygon(star, px, py);
          break;
        case ObjectClass::plus:
          in = (std::abs(dx) <= half && std::abs(dy) <= bar) || (std::abs(dy) <= half && std::abs(dx) <= bar);
          break;
      }
      if (in) img.set(x, y, color);
    }
  }
}

}  // namespace

Rgb color_rgb(Color c) {
  switch (c) {
    case Color::red: return {255, 0, 0};
    case Color::green: return {0, 255, 0};
    case Color::blue: return {0, 0, 255};
    case Color::cyan: return {0, 255, 255};
    case Color::magenta: return {255, 0, 255};
    case Color::yellow: return {255, 255, 0};
    case Color::white: return {255, 255, 255};
  }
  return {};
}

int cell_boundary(const RenderSpec& spec, int i) {
  // round(i * side / 9) in integer arithmetic, halves rounding up.
  return (2 * i * spec.side + kGridDim) / (2 * kGridDim);
}

Image rasterize(const Scene& scene, const RenderSpec& spec) {
  Image img(spec.side, spec.side);
  for (const auto& o : scene.objects()) draw_object(img, o, spec);
  return img;
}

nlohmann::ordered_json render_spec_to_json(const RenderSpec& spec) {
  nlohmann::ordered_json j;
  j["width"] = spec.side;
  j["height"] = spec.side;
  j["grid"] = kGridDim;
  j["cell_boundary"] = "round(i*" + std::to_string(spec.side) + "/9)";
  j["large_fraction"] = spec.large_fraction;
  j["small_fraction"] = spec.small_fraction;
  j["star_inner_ratio"] = spec.star_inner_ratio;
  j["plus_bar_fraction"] = spec.plus_bar_fraction;
  j["background"] = {0, 0, 0};
  nlohmann::ordered_json colors;
  for (Color c : kAllColors) {
    const Rgb rgb = color_rgb(c);
    colors[std::string(to_string(c))] = {rgb.r, rgb.g, rgb.b};
  }
  j["colors"] = colors;
  return j;
}

}  // namespace countlab
