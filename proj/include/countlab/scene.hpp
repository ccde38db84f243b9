#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace countlab {

enum class ObjectClass : std::uint8_t { square, circle, triangle, star, plus };
enum class Color : std::uint8_t { red, green, blue, cyan, magenta, yellow, white };
enum class Size : std::uint8_t { small, large };

inline constexpr std::array kAllClasses{ObjectClass::square, ObjectClass::circle,
                                        ObjectClass::triangle, ObjectClass::star,
                                        ObjectClass::plus};
inline constexpr std::array kAllColors{Color::red,     Color::green,  Color::blue, Color::cyan,
                                       Color::magenta, Color::yellow, Color::white};

std::string_view to_string(ObjectClass c);
std::string_view to_string(Color c);
std::string_view to_string(Size s);
/// Regular plural used in questions ("circles", "stars", ...).
std::string plural(ObjectClass c);

// Parsers throw ValidationError on unknown names.
ObjectClass parse_class(std::string_view name);
Color parse_color(std::string_view name);
Size parse_size(std::string_view name);

inline constexpr int kGridDim = 9;
inline constexpr int kCellCount = kGridDim * kGridDim;

struct Cell {
  int row = 0;
  int col = 0;

  /// Throws ValidationError when outside the 9x9 grid.
  static Cell at(int row, int col);
  static Cell from_index(int index) { return at(index / kGridDim, index % kGridDim); }

  [[nodiscard]] int index() const { return row * kGridDim + col; }
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// max(|drow|, |dcol|)
int chebyshev(const Cell& a, const Cell& b);

struct SceneObject {
  ObjectClass cls = ObjectClass::circle;
  Color color = Color::red;
  Size size = Size::large;
  Cell cell;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

/// Class plus optional attributes; absent attributes match anything.
struct TargetSpec {
  ObjectClass cls = ObjectClass::circle;
  std::optional<Color> color;
  std::optional<Size> size;

  /// The fully specified spec an object induces on itself.
  static TargetSpec of(const SceneObject& o) { return {o.cls, o.color, o.size}; }
  /// "<size?> <color?> <class-plural>", e.g. "large magenta circles".
  [[nodiscard]] std::string describe() const;
  /// Stable short key, e.g. "circle/magenta/large" with "*" for wildcards.
  [[nodiscard]] std::string key() const;

  friend bool operator==(const TargetSpec&, const TargetSpec&) = default;
};

/// A 9x9 grid holding at most one object per cell. Immutable: add_object
/// returns a new scene.
class Scene {
 public:
  Scene() = default;

  [[nodiscard]] const std::vector<SceneObject>& objects() const { return objects_; }
  [[nodiscard]] std::size_t size() const { return objects_.size(); }
  [[nodiscard]] bool empty() const { return objects_.empty(); }
  [[nodiscard]] bool occupied(const Cell& c) const { return occupied_.test(static_cast<std::size_t>(c.index())); }
  [[nodiscard]] std::vector<Cell> free_cells() const;

  /// Builds a scene from a list; throws OccupiedCell on duplicates.
  static Scene from_objects(const std::vector<SceneObject>& objects);

  /// Multiset equality (insertion order is irrelevant).
  friend bool operator==(const Scene& a, const Scene& b);

 private:
  friend Scene add_object(const Scene& scene, const SceneObject& object);
  std::vector<SceneObject> objects_;
  std::bitset<kCellCount> occupied_;
};

bool match(const SceneObject& object, const TargetSpec& spec);
std::size_t count_matches(const Scene& scene, const TargetSpec& spec);

/// Returns a copy of scene with object added. Throws OccupiedCell when the
/// cell is taken.
Scene add_object(const Scene& scene, const SceneObject& object);

/// Objects that are in `child` but not in `parent` (multiset difference).
/// Returns nullopt when `parent` is not a sub-multiset of `child`.
std::optional<std::vector<SceneObject>> scene_difference(const Scene& child, const Scene& parent);

/// Objects sorted by (row, col, class, color, size).
std::vector<SceneObject> canonical_objects(const Scene& scene);

/// Canonical compact JSON array of objects ("[]" for the empty scene).
std::string canonical_serialize(const Scene& scene);

/// {"grid": 9, "objects": [...]} with canonical object order.
nlohmann::ordered_json scene_to_json(const Scene& scene);

/// Accepts either the bare object array or the {"grid", "objects"} form.
Scene scene_from_json(const nlohmann::json& j);
Scene parse_scene(std::string_view text);

nlohmann::ordered_json target_to_json(const TargetSpec& spec);
TargetSpec target_from_json(const nlohmann::json& j);

}  // namespace countlab
