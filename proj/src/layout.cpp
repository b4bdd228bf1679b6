#include "modnet/layout.hpp"

namespace modnet {

std::vector<int> ProgramLayout::leaves() const {
  std::vector<int> out;
  for (int i = 0; i < node_count(); ++i)
    if (nodes[static_cast<size_t>(i)].is_leaf()) out.push_back(i);
  return out;
}

void ProgramLayout::validate() const {
  if (nodes.empty() || root < 0 || root >= node_count()) throw LayoutError("layout: empty or bad root");
  const Node& r = nodes[static_cast<size_t>(root)];
  if (nodes.size() == 1) {
    if (!r.is_leaf()) throw LayoutError("layout: single node must have no children");
    return;
  }
  if (nodes.size() != 3 || r.children[0] < 0 || r.children[1] < 0)
    throw LayoutError("layout: supported shapes are a single node or a root with two leaf children");
  for (int c : r.children) {
    if (c < 0 || c >= node_count() || c == root)
      throw LayoutError("layout: bad child index " + std::to_string(c));
    if (!nodes[static_cast<size_t>(c)].is_leaf()) throw LayoutError("layout: children must be leaves");
    if (c > root) throw LayoutError("layout: children must precede the root");
  }
  if (r.children[0] == r.children[1]) throw LayoutError("layout: duplicate child node");
}

namespace {

struct Parser {
  const std::string& text;
  const SubtaskRegistry& reg;
  size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' || text[pos] == '\n' || text[pos] == '\r'))
      ++pos;
  }

  [[noreturn]] void fail(const std::string& msg) {
    throw ParseError("layout parse error at position " + std::to_string(pos) + ": " + msg);
  }

  static bool ident_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  }

  std::string ident() {
    skip_ws();
    size_t start = pos;
    while (pos < text.size() && ident_char(text[pos])) ++pos;
    if (pos == start) fail("expected identifier");
    return text.substr(start, pos - start);
  }

  int subtask(const std::string& name, size_t at) {
    int idx = reg.index_of(name);
    if (idx < 0) {
      pos = at;
      fail("unknown sub-task '" + name + "'");
    }
    return idx;
  }

  ProgramLayout parse() {
    ProgramLayout layout;
    skip_ws();
    size_t at = pos;
    std::string head = ident();
    skip_ws();
    if (pos < text.size() && text[pos] == '(') {
      ++pos;
      size_t child_at = pos;
      skip_ws();
      child_at = pos;
      std::string left = ident();
      int left_idx = subtask(left, child_at);
      skip_ws();
      if (pos >= text.size() || text[pos] != ',') fail("expected ',' between children");
      ++pos;
      skip_ws();
      child_at = pos;
      std::string right = ident();
      int right_idx = subtask(right, child_at);
      skip_ws();
      if (pos >= text.size() || text[pos] != ')') {
        if (pos < text.size() && text[pos] == ',') fail("arity > 2 is not supported");
        fail("expected ')'");
      }
      ++pos;
      layout.nodes.push_back({left_idx, {-1, -1}});
      layout.nodes.push_back({right_idx, {-1, -1}});
      layout.nodes.push_back({subtask(head, at), {0, 1}});
      layout.root = 2;
    } else {
      layout.nodes.push_back({subtask(head, at), {-1, -1}});
      layout.root = 0;
    }
    skip_ws();
    if (pos != text.size()) fail("trailing characters");
    layout.validate();
    return layout;
  }
};

}  // namespace

ProgramLayout parse_layout(const std::string& text, const SubtaskRegistry& registry) {
  Parser p{text, registry};
  return p.parse();
}

std::string serialize_layout(const ProgramLayout& layout, const SubtaskRegistry& registry) {
  layout.validate();
  auto name = [&](int node) {
    int k = layout.nodes[static_cast<size_t>(node)].subtask;
    return registry.subtasks.at(static_cast<size_t>(k));
  };
  const auto& r = layout.nodes[static_cast<size_t>(layout.root)];
  if (r.is_leaf()) return name(layout.root);
  return name(layout.root) + "(" + name(r.children[0]) + ", " + name(r.children[1]) + ")";
}

}  // namespace modnet
