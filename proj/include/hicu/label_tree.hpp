#pragma once

// ICD-9 style code parsing, the five-level code hierarchy and its
// depth-uniform augmentation.
//
// Level layout of a code path (root is level 0):
//   1: chapter range      "680-709"
//   2: sub-chapter range  "680-686"   (or a same-start-end range "36-36")
//   3: integer code       "682"
//   4: one-decimal code   "682.6"     (integer code copied when absent)
//   5: two-decimal code   "682.61"    (previous level copied when absent)

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hicu/error.hpp"
#include "hicu/text_io.hpp"

namespace hicu {

inline constexpr int kIcdLevels = 5;
inline constexpr std::string_view kRootLabel = "<root>";

enum class CodeKind { diagnosis, procedure };

struct IcdCode {
  std::string raw;
  CodeKind kind = CodeKind::diagnosis;
  std::string integer_part;
  std::string decimals;

  std::string formatted() const {
    return decimals.empty() ? integer_part : integer_part + "." + decimals;
  }
  friend bool operator==(const IcdCode&, const IcdCode&) = default;
};

namespace detail {

inline bool all_digits(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

inline bool valid_integer_part(std::string_view s, CodeKind kind) {
  if (kind == CodeKind::procedure) return s.size() == 2 && all_digits(s);
  if (!s.empty() && s.front() == 'V') return s.size() == 3 && all_digits(s.substr(1));
  if (!s.empty() && s.front() == 'E') return s.size() == 4 && all_digits(s.substr(1));
  return s.size() == 3 && all_digits(s);
}

}  // namespace detail

inline IcdCode parse_code(std::string_view raw, CodeKind kind) {
  auto bad = [&](const char* why) -> IcdCode {
    fail(ErrorCode::parse, "malformed ICD code '" + std::string(raw) + "': " + why);
  };
  if (raw.empty()) return bad("empty");
  for (char c : raw) {
    bool ok = std::isdigit(static_cast<unsigned char>(c)) || c == '.' ||
              (kind == CodeKind::diagnosis && (c == 'V' || c == 'E'));
    if (!ok) return bad("unexpected character");
  }
  auto dot = raw.find('.');
  std::string_view integer = raw.substr(0, dot);
  std::string_view decimals;
  if (dot != std::string_view::npos) {
    decimals = raw.substr(dot + 1);
    if (decimals.empty()) return bad("dangling separator");
    if (decimals.find('.') != std::string_view::npos) return bad("more than one separator");
    if (decimals.size() > 2) return bad("more than two decimals");
    if (!detail::all_digits(decimals)) return bad("non-digit decimals");
  }
  if (!detail::valid_integer_part(integer, kind))
    return bad(kind == CodeKind::procedure ? "procedure codes have a two-digit integer part"
                                           : "diagnosis codes have a three-digit integer part");
  return IcdCode{std::string(raw), kind, std::string(integer), std::string(decimals)};
}

// Diagnosis integer parts have three characters (digits, V + 2 digits or
// E + 3 digits); procedure integer parts have two digits.
inline IcdCode parse_code(std::string_view raw) {
  auto dot = raw.find('.');
  auto integer = raw.substr(0, dot);
  bool procedure = integer.size() == 2 && detail::all_digits(integer);
  return parse_code(raw, procedure ? CodeKind::procedure : CodeKind::diagnosis);
}

// A range bound such as "680", "V01" or "E800", ordered within its prefix.
struct RangeBound {
  char prefix = 0;
  int number = 0;
  std::string text;

  static RangeBound parse(std::string_view s) {
    RangeBound b;
    b.text = std::string(s);
    std::string_view digits = s;
    if (!s.empty() && (s.front() == 'V' || s.front() == 'E')) {
      b.prefix = s.front();
      digits = s.substr(1);
    }
    if (digits.empty() || !detail::all_digits(digits))
      fail(ErrorCode::parse, "malformed range bound '" + std::string(s) + "'");
    b.number = static_cast<int>(parse_integer(digits));
    return b;
  }
};

struct RangeRow {
  CodeKind kind = CodeKind::diagnosis;
  RangeBound l1_start, l1_end;
  // Unset when the row is written with '*' bounds: every integer code inside
  // the chapter then gets its own same-start-end sub-range.
  std::optional<RangeBound> l2_start, l2_end;

  std::string l1_label() const { return l1_start.text + "-" + l1_end.text; }

  bool covers_l2(char prefix, int number) const {
    if (!l2_start) return covers_l1(prefix, number);
    return prefix == l2_start->prefix && number >= l2_start->number && number <= l2_end->number;
  }
  bool covers_l1(char prefix, int number) const {
    return prefix == l1_start.prefix && number >= l1_start.number && number <= l1_end.number;
  }
};

// Rows of the code hierarchy: `kind l1_start l1_end l2_start l2_end`,
// tab separated, '#' comments.
class RangeTable {
 public:
  RangeTable() = default;
  explicit RangeTable(std::vector<RangeRow> rows) : rows_(std::move(rows)) { validate(); }

  static RangeTable parse(std::istream& in) {
    std::vector<RangeRow> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto body = trim(line);
      if (body.empty() || body.front() == '#') continue;
      auto fields = split(body, '\t');
      if (fields.size() != 5)
        fail(ErrorCode::parse, "range table line " + std::to_string(line_no) + ": expected 5 tab-separated fields");
      RangeRow row;
      if (fields[0] == "D") row.kind = CodeKind::diagnosis;
      else if (fields[0] == "P") row.kind = CodeKind::procedure;
      else fail(ErrorCode::parse, "range table line " + std::to_string(line_no) + ": kind must be D or P");
      row.l1_start = RangeBound::parse(fields[1]);
      row.l1_end = RangeBound::parse(fields[2]);
      if (fields[3] == "*" || fields[4] == "*") {
        if (fields[3] != fields[4])
          fail(ErrorCode::parse, "range table line " + std::to_string(line_no) + ": '*' must fill both level-2 fields");
      } else {
        row.l2_start = RangeBound::parse(fields[3]);
        row.l2_end = RangeBound::parse(fields[4]);
      }
      rows.push_back(std::move(row));
    }
    return RangeTable(std::move(rows));
  }

  static RangeTable load(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse(in);
  }

  std::string serialize() const {
    std::ostringstream out;
    out << "# kind\tl1_start\tl1_end\tl2_start\tl2_end\n";
    for (const auto& r : rows_) {
      out << (r.kind == CodeKind::diagnosis ? 'D' : 'P') << '\t' << r.l1_start.text << '\t' << r.l1_end.text << '\t'
          << (r.l2_start ? r.l2_start->text : "*") << '\t' << (r.l2_end ? r.l2_end->text : "*") << '\n';
    }
    return out.str();
  }

  const std::vector<RangeRow>& rows() const { return rows_; }

  // The row whose level-2 range contains the code's integer part.
  const RangeRow* find(const IcdCode& code) const {
    auto key = RangeBound::parse(code.integer_part);
    for (const auto& r : rows_)
      if (r.kind == code.kind && r.covers_l2(key.prefix, key.number)) return &r;
    return nullptr;
  }

 private:
  void validate() const {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const auto& a = rows_[i];
      auto where = "range row " + std::to_string(i + 1) + " (" + a.l1_label() + ")";
      require(a.l1_start.prefix == a.l1_end.prefix && a.l1_start.number <= a.l1_end.number, ErrorCode::parse,
              where + ": inverted level-1 range");
      if (a.l2_start) {
        require(a.l2_start->prefix == a.l2_end->prefix && a.l2_start->number <= a.l2_end->number, ErrorCode::parse,
                where + ": inverted level-2 range");
        require(a.covers_l1(a.l2_start->prefix, a.l2_start->number) && a.covers_l1(a.l2_end->prefix, a.l2_end->number),
                ErrorCode::parse, where + ": level-2 range outside its level-1 range");
      }
      for (std::size_t j = 0; j < i; ++j) {
        const auto& b = rows_[j];
        if (a.kind != b.kind || a.l1_start.prefix != b.l1_start.prefix) continue;
        bool same_l1 = a.l1_start.number == b.l1_start.number && a.l1_end.number == b.l1_end.number;
        bool l1_overlap = a.l1_start.number <= b.l1_end.number && b.l1_start.number <= a.l1_end.number;
        require(same_l1 || !l1_overlap, ErrorCode::parse, where + ": overlapping level-1 ranges");
        if (!same_l1) continue;
        require(a.l2_start && b.l2_start, ErrorCode::parse,
                where + ": a '*' row must be the only row of its level-1 range");
        bool l2_overlap = a.l2_start->number <= b.l2_end->number && b.l2_start->number <= a.l2_end->number;
        require(!l2_overlap, ErrorCode::parse, where + ": overlapping level-2 ranges");
      }
    }
  }

  std::vector<RangeRow> rows_;
};

struct NodeId {
  int level = 0;
  std::string label;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct Path {
  std::vector<NodeId> nodes;  // level 1 .. leaf level
};

inline Path build_path(const IcdCode& code, const RangeTable& ranges) {
  const RangeRow* row = ranges.find(code);
  if (row == nullptr)
    fail(ErrorCode::coverage, "code '" + code.raw + "' is not covered by any range table row");
  const std::string& integer = code.integer_part;
  std::string l2 = row->l2_start ? row->l2_start->text + "-" + row->l2_end->text : integer + "-" + integer;
  std::string l4 = code.decimals.empty() ? integer : integer + "." + code.decimals.substr(0, 1);
  std::string l5 = code.decimals.size() == 2 ? integer + "." + code.decimals : l4;
  return Path{{{1, row->l1_label()}, {2, std::move(l2)}, {3, integer}, {4, std::move(l4)}, {5, std::move(l5)}}};
}

class AugmentedLabelTree;

// Rooted tree stored level by level. Labels are unique within a level and
// sorted lexicographically; each node stores the index of its parent at the
// previous level. A node whose label equals its parent's label is a padding
// copy of that parent.
class LabelTree {
 public:
  LabelTree() = default;

  // Union of root-to-target paths. The last node of each path is a target.
  static LabelTree from_paths(std::span<const Path> paths) {
    require(!paths.empty(), ErrorCode::domain, "empty label set");
    std::map<NodeId, std::string> parent_of;  // node -> parent label
    std::set<NodeId> targets;
    int max_level = 0;
    for (const auto& p : paths) {
      require(!p.nodes.empty(), ErrorCode::domain, "empty path");
      for (std::size_t i = 0; i < p.nodes.size(); ++i) {
        const auto& n = p.nodes[i];
        require(n.level == static_cast<int>(i) + 1, ErrorCode::domain,
                "path levels must run 1..K without gaps (node '" + n.label + "')");
        require(n.label != kRootLabel && !n.label.empty(), ErrorCode::domain, "invalid node label");
        std::string parent = i == 0 ? std::string(kRootLabel) : p.nodes[i - 1].label;
        auto [it, inserted] = parent_of.emplace(n, parent);
        require(inserted || it->second == parent, ErrorCode::domain,
                "node '" + n.label + "' at level " + std::to_string(n.level) + " has two parents ('" + it->second +
                    "' and '" + parent + "')");
      }
      targets.insert(p.nodes.back());
      max_level = std::max(max_level, static_cast<int>(p.nodes.size()));
    }
    return LabelTree(parent_of, targets, max_level);
  }

  int max_level() const { return max_level_; }

  std::span<const std::string> labels_at(int level) const { return levels_.at(static_cast<std::size_t>(level)); }

  std::size_t level_size(int level) const { return levels_.at(static_cast<std::size_t>(level)).size(); }

  // Parent index (at level-1) of node i at the given level (>= 1).
  std::size_t parent_index(int level, std::size_t i) const {
    return parents_.at(static_cast<std::size_t>(level)).at(i);
  }

  std::optional<std::size_t> index_of(int level, std::string_view label) const {
    auto labels = labels_at(level);
    auto it = std::lower_bound(labels.begin(), labels.end(), label);
    if (it == labels.end() || *it != label) return std::nullopt;
    return static_cast<std::size_t>(it - labels.begin());
  }

  bool is_copy(int level, std::size_t i) const {
    return level >= 2 && labels_at(level)[i] == labels_at(level - 1)[parent_index(level, i)];
  }

  // Target nodes (path ends), sorted by level then label.
  const std::vector<NodeId>& target_nodes() const { return target_nodes_; }

  // The target label set C in lexicographic order.
  std::vector<std::string> targets() const {
    std::vector<std::string> out;
    for (const auto& n : target_nodes_) out.push_back(n.label);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  std::size_t node_count() const {
    std::size_t n = 0;
    for (const auto& l : levels_) n += l.size();
    return n;
  }

  // Tab-separated `level label parent target` rows, ordered by level then label.
  std::string serialize() const {
    std::ostringstream out;
    out << "# hicu label tree v1\n# level\tlabel\tparent\ttarget\n";
    std::set<NodeId> target_set(target_nodes_.begin(), target_nodes_.end());
    for (int k = 1; k <= max_level_; ++k) {
      auto labels = labels_at(k);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        out << k << '\t' << labels[i] << '\t' << labels_at(k - 1)[parent_index(k, i)] << '\t'
            << (target_set.count(NodeId{k, labels[i]}) ? 1 : 0) << '\n';
      }
    }
    return out.str();
  }

  static LabelTree parse(std::istream& in) {
    std::map<NodeId, std::string> parent_of;
    std::set<NodeId> targets;
    int max_level = 0;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto body = trim(line);
      if (body.empty() || body.front() == '#') continue;
      auto f = split(body, '\t');
      if (f.size() != 4) fail(ErrorCode::parse, "tree file line " + std::to_string(line_no) + ": expected 4 fields");
      NodeId node{static_cast<int>(parse_integer(f[0])), std::string(f[1])};
      require(node.level >= 1, ErrorCode::parse, "tree file line " + std::to_string(line_no) + ": level must be >= 1");
      max_level = std::max(max_level, node.level);
      parent_of.emplace(node, std::string(f[2]));
      if (f[3] == "1") targets.insert(node);
    }
    require(!parent_of.empty(), ErrorCode::domain, "empty label set");
    for (const auto& [node, parent] : parent_of) {
      bool ok = node.level == 1 ? parent == kRootLabel : parent_of.count(NodeId{node.level - 1, parent}) == 1;
      require(ok, ErrorCode::parse, "tree file: parent '" + parent + "' of '" + node.label + "' is missing");
    }
    return LabelTree(parent_of, targets, max_level);
  }

  static LabelTree load(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse(in);
  }

  friend bool operator==(const LabelTree&, const LabelTree&) = default;

 private:
  LabelTree(const std::map<NodeId, std::string>& parent_of, const std::set<NodeId>& targets, int max_level)
      : max_level_(max_level), target_nodes_(targets.begin(), targets.end()) {
    levels_.assign(static_cast<std::size_t>(max_level) + 1, {});
    parents_.assign(static_cast<std::size_t>(max_level) + 1, {});
    levels_[0] = {std::string(kRootLabel)};
    for (const auto& [node, parent] : parent_of) levels_[static_cast<std::size_t>(node.level)].push_back(node.label);
    // std::map iteration already yields lexicographic order within a level.
    for (int k = 1; k <= max_level; ++k) {
      for (const auto& label : levels_[static_cast<std::size_t>(k)]) {
        const auto& parent = parent_of.at(NodeId{k, label});
        auto idx = index_of(k - 1, parent);
        require(idx.has_value(), ErrorCode::domain, "parent '" + parent + "' of '" + label + "' is missing");
        parents_[static_cast<std::size_t>(k)].push_back(*idx);
      }
    }
    // A label reused on a deeper level must be a padding copy chain.
    std::map<std::string, int> first_level;
    for (int k = 1; k <= max_level; ++k) {
      auto labels = labels_at(k);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = first_level.emplace(labels[i], k);
        require(inserted || is_copy(k, i), ErrorCode::domain,
                "label '" + labels[i] + "' appears on levels " + std::to_string(it->second) + " and " +
                    std::to_string(k) + " without being a padding copy");
      }
    }
  }

  int max_level_ = 0;
  std::vector<std::vector<std::string>> levels_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<NodeId> target_nodes_;

  friend class AugmentedLabelTree;
  friend AugmentedLabelTree augment_tree(const LabelTree&);
};

inline LabelTree build_label_tree(std::span<const IcdCode> codes, const RangeTable& ranges) {
  require(!codes.empty(), ErrorCode::domain, "empty label set");
  std::vector<Path> paths;
  paths.reserve(codes.size());
  for (const auto& c : codes) {
    try {
      paths.push_back(build_path(c, ranges));
    } catch (const Error& e) {
      throw Error(e.code(), std::string(e.what()) + " [code " + c.raw + "]");
    }
  }
  return LabelTree::from_paths(paths);
}

// Label tree whose targets all sit on the deepest level. Only produced by
// augment_tree or by parsing a tree that is already uniform.
class AugmentedLabelTree {
 public:
  AugmentedLabelTree() = default;

  const LabelTree& tree() const { return tree_; }
  int max_level() const { return tree_.max_level(); }
  std::span<const std::string> labels_at(int level) const { return tree_.labels_at(level); }
  std::size_t level_size(int level) const { return tree_.level_size(level); }
  std::size_t parent_index(int level, std::size_t i) const { return tree_.parent_index(level, i); }
  std::optional<std::size_t> index_of(int level, std::string_view label) const { return tree_.index_of(level, label); }
  bool is_copy(int level, std::size_t i) const { return tree_.is_copy(level, i); }

  // The target set C; equal to the labels of the deepest level.
  std::span<const std::string> targets() const { return labels_at(max_level()); }

  friend bool operator==(const AugmentedLabelTree&, const AugmentedLabelTree&) = default;

 private:
  explicit AugmentedLabelTree(LabelTree t) : tree_(std::move(t)) {}
  LabelTree tree_;
  friend AugmentedLabelTree augment_tree(const LabelTree&);
};

// Pads every target down to the deepest level with self-copy nodes.
inline AugmentedLabelTree augment_tree(const LabelTree& tree) {
  const int kmax = tree.max_level();
  std::map<NodeId, std::string> parent_of;
  for (int k = 1; k <= kmax; ++k) {
    auto labels = tree.labels_at(k);
    for (std::size_t i = 0; i < labels.size(); ++i)
      parent_of.emplace(NodeId{k, labels[i]}, tree.labels_at(k - 1)[tree.parent_index(k, i)]);
  }
  std::set<NodeId> targets;
  for (const auto& t : tree.target_nodes()) {
    for (int k = t.level + 1; k <= kmax; ++k) {
      auto [it, inserted] = parent_of.emplace(NodeId{k, t.label}, t.label);
      require(inserted || it->second == t.label, ErrorCode::domain,
              "padding copy of '" + t.label + "' collides with an existing node");
    }
    targets.insert(NodeId{kmax, t.label});
  }
  LabelTree padded(parent_of, targets, kmax);
  auto deepest = padded.labels_at(kmax);
  std::set<std::string> target_labels;
  for (const auto& t : targets) target_labels.insert(t.label);
  require(std::equal(deepest.begin(), deepest.end(), target_labels.begin(), target_labels.end()), ErrorCode::domain,
          "deepest level contains non-target nodes");
  return AugmentedLabelTree(std::move(padded));
}

inline std::vector<std::string> level_labels(const AugmentedLabelTree& tree, int level) {
  require(level >= 1 && level <= tree.max_level(), ErrorCode::domain,
          "level " + std::to_string(level) + " outside 1.." + std::to_string(tree.max_level()));
  auto labels = tree.labels_at(level);
  return {labels.begin(), labels.end()};
}

// Index of each level-(k+1) node's parent within level k.
inline std::vector<std::size_t> parent_index_map(const AugmentedLabelTree& tree, int level) {
  require(level >= 1 && level < tree.max_level(), ErrorCode::domain,
          "parent map level " + std::to_string(level) + " outside 1.." + std::to_string(tree.max_level() - 1));
  std::vector<std::size_t> map(tree.level_size(level + 1));
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = tree.parent_index(level + 1, i);
  return map;
}

// Level-k node is positive iff some positive leaf's augmented path passes through it.
inline std::vector<std::uint8_t> ancestor_targets(std::span<const std::uint8_t> leaf_targets,
                                                  const AugmentedLabelTree& tree, int level) {
  const int kmax = tree.max_level();
  require(leaf_targets.size() == tree.level_size(kmax), ErrorCode::dimension,
          "target vector has " + std::to_string(leaf_targets.size()) + " entries, expected " +
              std::to_string(tree.level_size(kmax)));
  require(level >= 1 && level <= kmax, ErrorCode::domain, "level " + std::to_string(level) + " out of range");
  std::vector<std::uint8_t> current(leaf_targets.begin(), leaf_targets.end());
  for (int k = kmax; k > level; --k) {
    std::vector<std::uint8_t> up(tree.level_size(k - 1), 0);
    for (std::size_t i = 0; i < current.size(); ++i)
      if (current[i]) up[tree.parent_index(k, i)] = 1;
    current = std::move(up);
  }
  return current;
}

}  // namespace hicu
