#pragma once

#include <array>
#include <string>
#include <vector>

#include "modnet/library.hpp"

namespace modnet {

// Ground-truth composition tree: a single sub-task node, or a root with two
// leaf children. Nodes are stored children-first (valid topological order).
struct ProgramLayout {
  struct Node {
    int subtask = -1;
    std::array<int, 2> children{-1, -1};
    bool is_leaf() const { return children[0] < 0; }
  };
  std::vector<Node> nodes;
  int root = -1;

  int node_count() const { return static_cast<int>(nodes.size()); }
  std::vector<int> leaves() const;
  void validate() const;
};

// Grammar (UTF-8, whitespace-insensitive):
//   layout := ident | ident '(' layout ',' layout ')'
//   ident  := [a-z0-9_]+
// Only the supported shapes parse; errors carry the byte position.
ProgramLayout parse_layout(const std::string& text, const SubtaskRegistry& registry);
std::string serialize_layout(const ProgramLayout& layout, const SubtaskRegistry& registry);

}  // namespace modnet
