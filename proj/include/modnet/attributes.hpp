#pragma once

#include <array>
#include <string>
#include <vector>

#include "modnet/library.hpp"

namespace modnet::vqa {

// Object attribute space: 10 digit categories, 5 colors, 3 light levels, 3
// sizes; 21 attribute instances, 450 combinations.
inline constexpr int kNumCategories = 10;
inline constexpr int kNumColors = 5;
inline constexpr int kNumLights = 3;
inline constexpr int kNumSizes = 3;
inline constexpr int kNumInstances = kNumCategories + kNumColors + kNumLights + kNumSizes;
inline constexpr int kNumCombinations = kNumCategories * kNumColors * kNumLights * kNumSizes;

inline constexpr std::array<const char*, kNumColors> kColorNames = {"red", "green", "blue", "yellow",
                                                                    "pink"};
inline constexpr std::array<std::array<float, 3>, kNumColors> kColorRgb = {{
    {1.0f, 0.0f, 0.0f},
    {0.0f, 1.0f, 0.0f},
    {0.0f, 0.0f, 1.0f},
    {1.0f, 1.0f, 0.0f},
    {1.0f, 105.0f / 255.0f, 180.0f / 255.0f},
}};
inline constexpr std::array<const char*, kNumLights> kLightNames = {"bright", "half_bright", "dark"};
inline constexpr std::array<float, kNumLights> kLightFactors = {1.0f, 0.7f, 0.4f};
inline constexpr std::array<const char*, kNumSizes> kSizeNames = {"large", "medium", "small"};
inline constexpr std::array<float, kNumSizes> kSizeFactors = {1.0f, 5.0f / 7.0f, 0.5f};

struct Combination {
  int category = 0;
  int color = 0;
  int light = 0;
  int size = 0;

  bool operator==(const Combination&) const = default;

  // attribute-instance index: categories 0..9, colors 10..14, lights 15..17,
  // sizes 18..20
  bool has_instance(int instance) const;
  std::array<int, 4> instances() const;
};

std::string instance_name(int instance);
int instance_index(const std::string& name);  // -1 if unknown
std::string combination_name(const Combination& c);

// Sub-task registries per task family; group divisions follow the attribute
// types (and relation types for the comparison tasks).
SubtaskRegistry extraction_registry();
SubtaskRegistry pair_comparison_registry();
SubtaskRegistry spatial_registry();
SubtaskRegistry sqoop_registry(const std::vector<std::string>& objects);

// relation names
inline constexpr std::array<const char*, 4> kSpatialRelations = {"left_of", "right_of", "above", "below"};
inline constexpr std::array<const char*, 12> kPairRelations = {
    "same_category", "different_category", "same_color", "different_color", "same_light", "different_light",
    "brighter",      "darker",             "same_size",  "different_size",  "larger",     "smaller"};

// does relation(a, b) hold, arguments in image order
bool pair_relation_holds(const std::string& relation, const Combination& a, const Combination& b);
// leaf sub-task (attribute type name) for a pair-comparison relation
std::string pair_relation_leaf(const std::string& relation);

}  // namespace modnet::vqa
