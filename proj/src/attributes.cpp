#include "modnet/attributes.hpp"

#include "modnet/common.hpp"

namespace modnet::vqa {

bool Combination::has_instance(int instance) const {
  if (instance < 0 || instance >= kNumInstances)
    throw IndexError("attribute instance " + std::to_string(instance) + " out of range");
  if (instance < kNumCategories) return category == instance;
  instance -= kNumCategories;
  if (instance < kNumColors) return color == instance;
  instance -= kNumColors;
  if (instance < kNumLights) return light == instance;
  instance -= kNumLights;
  return size == instance;
}

std::array<int, 4> Combination::instances() const {
  return {category, kNumCategories + color, kNumCategories + kNumColors + light,
          kNumCategories + kNumColors + kNumLights + size};
}

std::string instance_name(int instance) {
  if (instance < 0 || instance >= kNumInstances)
    throw IndexError("attribute instance " + std::to_string(instance) + " out of range");
  if (instance < kNumCategories) return "cat_" + std::to_string(instance);
  instance -= kNumCategories;
  if (instance < kNumColors) return kColorNames[static_cast<size_t>(instance)];
  instance -= kNumColors;
  if (instance < kNumLights) return kLightNames[static_cast<size_t>(instance)];
  instance -= kNumLights;
  return kSizeNames[static_cast<size_t>(instance)];
}

int instance_index(const std::string& name) {
  for (int i = 0; i < kNumInstances; ++i)
    if (instance_name(i) == name) return i;
  return -1;
}

std::string combination_name(const Combination& c) {
  return "cat_" + std::to_string(c.category) + "/" + kColorNames[static_cast<size_t>(c.color)] + "/" +
         kLightNames[static_cast<size_t>(c.light)] + "/" + kSizeNames[static_cast<size_t>(c.size)];
}

namespace {

int instance_group(int instance) {
  if (instance < kNumCategories) return 0;
  if (instance < kNumCategories + kNumColors) return 1;
  if (instance < kNumCategories + kNumColors + kNumLights) return 2;
  return 3;
}

}  // namespace

SubtaskRegistry extraction_registry() {
  SubtaskRegistry reg;
  reg.groups = {"category", "color", "light", "size"};
  for (int i = 0; i < kNumInstances; ++i) {
    reg.subtasks.push_back(instance_name(i));
    reg.group_map.push_back(instance_group(i));
  }
  return reg;
}

SubtaskRegistry pair_comparison_registry() {
  SubtaskRegistry reg;
  reg.groups = {"category",       "color",        "light",        "size",
                "cmp_category",   "cmp_color",    "cmp_light",    "cmp_size"};
  reg.subtasks = {"category", "color", "light", "size"};
  reg.group_map = {0, 1, 2, 3};
  auto add = [&](const char* name, int group) {
    reg.subtasks.push_back(name);
    reg.group_map.push_back(group);
  };
  add("same_category", 4);
  add("different_category", 4);
  add("same_color", 5);
  add("different_color", 5);
  add("same_light", 6);
  add("different_light", 6);
  add("brighter", 6);
  add("darker", 6);
  add("same_size", 7);
  add("different_size", 7);
  add("larger", 7);
  add("smaller", 7);
  return reg;
}

SubtaskRegistry spatial_registry() {
  SubtaskRegistry reg = extraction_registry();
  reg.groups.push_back("spatial");
  for (const char* rel : kSpatialRelations) {
    reg.subtasks.push_back(rel);
    reg.group_map.push_back(4);
  }
  return reg;
}

SubtaskRegistry sqoop_registry(const std::vector<std::string>& objects) {
  SubtaskRegistry reg;
  reg.groups = {"object", "relation"};
  for (auto& o : objects) {
    reg.subtasks.push_back(o);
    reg.group_map.push_back(0);
  }
  for (const char* rel : kSpatialRelations) {
    reg.subtasks.push_back(rel);
    reg.group_map.push_back(1);
  }
  return reg;
}

bool pair_relation_holds(const std::string& relation, const Combination& a, const Combination& b) {
  if (relation == "same_category") return a.category == b.category;
  if (relation == "different_category") return a.category != b.category;
  if (relation == "same_color") return a.color == b.color;
  if (relation == "different_color") return a.color != b.color;
  if (relation == "same_light") return a.light == b.light;
  if (relation == "different_light") return a.light != b.light;
  // factors decrease along the light/size index order, so "brighter" means a
  // strictly smaller index
  if (relation == "brighter") return a.light < b.light;
  if (relation == "darker") return a.light > b.light;
  if (relation == "same_size") return a.size == b.size;
  if (relation == "different_size") return a.size != b.size;
  if (relation == "larger") return a.size < b.size;
  if (relation == "smaller") return a.size > b.size;
  throw ConfigError("unknown pair relation '" + relation + "'");
}

std::string pair_relation_leaf(const std::string& relation) {
  auto ends_with = [&](const char* sfx) {
    std::string s(sfx);
    return relation.size() >= s.size() && relation.compare(relation.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with("category")) return "category";
  if (ends_with("color")) return "color";
  if (relation == "same_light" || relation == "different_light" || relation == "brighter" ||
      relation == "darker")
    return "light";
  if (ends_with("size") || relation == "larger" || relation == "smaller") return "size";
  throw ConfigError("unknown pair relation '" + relation + "'");
}

}  // namespace modnet::vqa
