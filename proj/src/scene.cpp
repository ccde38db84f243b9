#include "countlab/scene.hpp"

#include <algorithm>
#include <cstdlib>
#include <tuple>

#include "countlab/errors.hpp"

namespace countlab {

namespace {

constexpr std::array<std::string_view, 5> kClassNames{"square", "circle", "triangle", "star",
                                                      "plus"};
constexpr std::array<std::string_view, 7> kColorNames{"red",     "green",  "blue", "cyan",
                                                      "magenta", "yellow", "white"};
constexpr std::array<std::string_view, 2> kSizeNames{"small", "large"};

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view name, const std::array<std::string_view, N>& names,
                std::string_view what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == name) return static_cast<Enum>(i);
  }
  throw ValidationError("unknown " + std::string(what) + " '" + std::string(name) + "'");
}

auto sort_key(const SceneObject& o) {
  return std::make_tuple(o.cell.row, o.cell.col, static_cast<int>(o.cls),
                         static_cast<int>(o.color), static_cast<int>(o.size));
}

nlohmann::ordered_json object_to_json(const SceneObject& o) {
  nlohmann::ordered_json j;
  j["class"] = to_string(o.cls);
  j["color"] = to_string(o.color);
  j["size"] = to_string(o.size);
  j["row"] = o.cell.row;
  j["col"] = o.cell.col;
  return j;
}

}  // namespace

std::string_view to_string(ObjectClass c) { return kClassNames.at(static_cast<std::size_t>(c)); }
std::string_view to_string(Color c) { return kColorNames.at(static_cast<std::size_t>(c)); }
std::string_view to_string(Size s) { return kSizeNames.at(static_cast<std::size_t>(s)); }
std::string plural(ObjectClass c) {
  const std::string name(to_string(c));
  return c == ObjectClass::plus ? name + "es" : name + "s";
}

ObjectClass parse_class(std::string_view name) {
  return parse_enum<ObjectClass>(name, kClassNames, "object class");
}
Color parse_color(std::string_view name) { return parse_enum<Color>(name, kColorNames, "color"); }
Size parse_size(std::string_view name) { return parse_enum<Size>(name, kSizeNames, "size"); }

Cell Cell::at(int row, int col) {
  if (row < 0 || row >= kGridDim || col < 0 || col >= kGridDim) {
    throw ValidationError("cell (" + std::to_string(row) + "," + std::to_string(col) +
                          ") outside the 9x9 grid");
  }
  return Cell{row, col};
}

int chebyshev(const Cell& a, const Cell& b) {
  return std::max(std::abs(a.row - b.row), std::abs(a.col - b.col));
}

std::string TargetSpec::describe() const {
  std::string out;
  if (size) out += std::string(to_string(*size)) + " ";
  if (color) out += std::string(to_string(*color)) + " ";
  out += plural(cls);
  return out;
}

std::string TargetSpec::key() const {
  std::string out(to_string(cls));
  out += "/";
  out += color ? std::string(to_string(*color)) : "*";
  out += "/";
  out += size ? std::string(to_string(*size)) : "*";
  return out;
}

std::vector<Cell> Scene::free_cells() const {
  std::vector<Cell> cells;
  cells.reserve(kCellCount - objects_.size());
  for (int i = 0; i < kCellCount; ++i) {
    if (!occupied_.test(static_cast<std::size_t>(i))) cells.push_back(Cell::from_index(i));
  }
  return cells;
}

Scene Scene::from_objects(const std::vector<SceneObject>& objects) {
  Scene s;
  for (const auto& o : objects) s = add_object(s, o);
  return s;
}

bool operator==(const Scene& a, const Scene& b) {
  return a.occupied_ == b.occupied_ && canonical_objects(a) == canonical_objects(b);
}

bool match(const SceneObject& object, const TargetSpec& spec) {
  if (object.cls != spec.cls) return false;
  if (spec.color && *spec.color != object.color) return false;
  if (spec.size && *spec.size != object.size) return false;
  return true;
}

std::size_t count_matches(const Scene& scene, const TargetSpec& spec) {
  return static_cast<std::size_t>(std::count_if(
      scene.objects().begin(), scene.objects().end(),
      [&](const SceneObject& o) { return match(o, spec); }));
}

Scene add_object(const Scene& scene, const SceneObject& object) {
  const Cell cell = Cell::at(object.cell.row, object.cell.col);
  if (scene.occupied(cell)) {
    throw OccupiedCell("cell (" + std::to_string(cell.row) + "," + std::to_string(cell.col) +
                       ") is already occupied");
  }
  Scene next = scene;
  next.objects_.push_back(object);
  next.occupied_.set(static_cast<std::size_t>(cell.index()));
  return next;
}

std::optional<std::vector<SceneObject>> scene_difference(const Scene& child, const Scene& parent) {
  std::vector<SceneObject> remaining = child.objects();
  for (const auto& p : parent.objects()) {
    auto it = std::find(remaining.begin(), remaining.end(), p);
    if (it == remaining.end()) return std::nullopt;
    remaining.erase(it);
  }
  return remaining;
}

std::vector<SceneObject> canonical_objects(const Scene& scene) {
  auto objs = scene.objects();
  std::sort(objs.begin(), objs.end(),
            [](const SceneObject& a, const SceneObject& b) { return sort_key(a) < sort_key(b); });
  return objs;
}

std::string canonical_serialize(const Scene& scene) {
  return scene_to_json(scene)["objects"].dump();
}

nlohmann::ordered_json scene_to_json(const Scene& scene) {
  nlohmann::ordered_json j;
  j["grid"] = kGridDim;
  j["objects"] = nlohmann::ordered_json::array();
  for (const auto& o : canonical_objects(scene)) j["objects"].push_back(object_to_json(o));
  return j;
}

Scene scene_from_json(const nlohmann::json& j) {
  const nlohmann::json* list = &j;
  if (j.is_object()) {
    if (j.value("grid", kGridDim) != kGridDim) {
      throw ValidationError("only 9x9 grids are supported");
    }
    list = &j.at("objects");
  }
  if (!list->is_array()) throw ValidationError("scene JSON must hold an object array");
  Scene s;
  try {
    for (const auto& o : *list) {
      SceneObject obj;
      obj.cls = parse_class(o.at("class").get<std::string>());
      obj.color = parse_color(o.at("color").get<std::string>());
      obj.size = parse_size(o.at("size").get<std::string>());
      obj.cell = Cell::at(o.at("row").get<int>(), o.at("col").get<int>());
      s = add_object(s, obj);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed scene JSON: ") + e.what());
  }
  return s;
}

Scene parse_scene(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed scene JSON: ") + e.what());
  }
  return scene_from_json(j);
}

nlohmann::ordered_json target_to_json(const TargetSpec& spec) {
  nlohmann::ordered_json j;
  j["class"] = to_string(spec.cls);
  j["color"] = spec.color ? nlohmann::ordered_json(to_string(*spec.color)) : nullptr;
  j["size"] = spec.size ? nlohmann::ordered_json(to_string(*spec.size)) : nullptr;
  return j;
}

TargetSpec target_from_json(const nlohmann::json& j) {
  try {
    TargetSpec t;
    t.cls = parse_class(j.at("class").get<std::string>());
    if (j.contains("color") && !j["color"].is_null()) t.color = parse_color(j["color"].get<std::string>());
    if (j.contains("size") && !j["size"].is_null()) t.size = parse_size(j["size"].get<std::string>());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed target JSON: ") + e.what());
  }
}

}  // namespace countlab
