#pragma once

// Dataset ingestion, tokenization, vocabulary, word-embedding loading and a
// synthetic hierarchical corpus generator.
//
// Dataset files hold one JSON object per line:
//   {"id": "doc-1", "text": "free text ...", "labels": ["682.6", "401.9"]}

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hicu/error.hpp"
#include "hicu/label_tree.hpp"
#include "hicu/text_io.hpp"

namespace hicu {

using Eigen::MatrixXd;

// Lowercased maximal runs of ASCII letters; everything else separates.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::isalpha(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab() : tokens_{"<pad>", "<unk>"} { rebuild(); }

  // Reserved entries first, then the given tokens in order.
  explicit Vocab(std::vector<std::string> tokens, int min_count = 1) : min_count_(min_count) {
    tokens_ = {"<pad>", "<unk>"};
    for (auto& t : tokens) tokens_.push_back(std::move(t));
    rebuild();
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int min_count() const { return min_count_; }
  int lookup(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }
  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  // Non-reserved tokens in index order.
  std::vector<std::string> words() const { return {tokens_.begin() + 2, tokens_.end()}; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void rebuild() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
      require(inserted, ErrorCode::domain, "duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int min_count_ = 1;
};

// Tokens with frequency >= min_count, ordered by frequency desc then lexicographically.
inline Vocab build_vocab(std::span<const std::vector<std::string>> corpus, int min_count) {
  require(!corpus.empty(), ErrorCode::domain, "cannot build a vocabulary from an empty corpus");
  std::map<std::string, long long> counts;
  for (const auto& doc : corpus)
    for (const auto& t : doc) ++counts[t];
  std::vector<std::pair<std::string, long long>> kept;
  for (auto& [t, c] : counts)
    if (c >= min_count) kept.emplace_back(t, c);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [t, c] : kept) tokens.push_back(t);
  return Vocab(std::move(tokens), min_count);
}

struct RawDocument {
  std::string id;
  std::string text;
  std::vector<std::string> labels;
};

struct Document {
  std::string id;
  std::vector<int> tokens;
  std::vector<std::string> labels;  // sorted, unique
};

struct Dataset {
  std::vector<Document> docs;
  std::size_t skipped_empty = 0;
};

inline std::vector<RawDocument> parse_records(std::istream& in, const std::string& source = "dataset") {
  std::vector<RawDocument> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      RawDocument d;
      d.id = j.at("id").get<std::string>();
      d.text = j.at("text").get<std::string>();
      d.labels = j.at("labels").get<std::vector<std::string>>();
      out.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::parse, source + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<RawDocument> read_records(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_records(in, path.string());
}

inline std::string serialize_records(std::span<const RawDocument> docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::json j = {{"id", d.id}, {"text", d.text}, {"labels", d.labels}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

// Tokenizes, maps to vocabulary indices and keeps the first max_len tokens.
// Documents with no tokens are skipped and counted.
inline Dataset to_dataset(std::span<const RawDocument> records, const Vocab& vocab,
                          std::span<const std::string> target_labels, std::size_t max_len) {
  require(max_len >= 1, ErrorCode::config, "max_len must be positive");
  std::set<std::string_view> known(target_labels.begin(), target_labels.end());
  Dataset ds;
  for (const auto& r : records) {
    for (const auto& l : r.labels)
      require(known.count(l) == 1, ErrorCode::not_found,
              "document '" + r.id + "' has label '" + l + "' that is not a leaf of the label tree");
    Document d;
    d.id = r.id;
    for (const auto& t : tokenize(r.text)) {
      if (d.tokens.size() == max_len) break;
      d.tokens.push_back(vocab.lookup(t));
    }
    if (d.tokens.empty()) {
      ++ds.skipped_empty;
      continue;
    }
    d.labels = r.labels;
    std::sort(d.labels.begin(), d.labels.end());
    d.labels.erase(std::unique(d.labels.begin(), d.labels.end()), d.labels.end());
    ds.docs.push_back(std::move(d));
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, const Vocab& vocab, const AugmentedLabelTree& tree,
                            std::size_t max_len = 4096) {
  auto records = read_records(path);
  return to_dataset(records, vocab, tree.targets(), max_len);
}

// Keeps the k most frequent labels (ties lexicographic) and drops documents
// left without labels. Returns the kept labels in sorted order.
template <class Doc>
std::pair<std::vector<Doc>, std::vector<std::string>> filter_top_k_labels(std::span<const Doc> docs, std::size_t k) {
  require(k >= 1, ErrorCode::config, "top-k label filter needs k >= 1");
  std::map<std::string, long long> counts;
  for (const auto& d : docs)
    for (const auto& l : d.labels) ++counts[l];
  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > k) ranked.resize(k);
  std::set<std::string> keep;
  for (auto& [l, c] : ranked) keep.insert(l);
  std::vector<Doc> out;
  for (const auto& d : docs) {
    Doc copy = d;
    std::erase_if(copy.labels, [&](const std::string& l) { return keep.count(l) == 0; });
    if (!copy.labels.empty()) out.push_back(std::move(copy));
  }
  return {std::move(out), std::vector<std::string>(keep.begin(), keep.end())};
}

inline Dataset filter_top_k_labels(const Dataset& ds, std::size_t k, std::vector<std::string>* kept = nullptr) {
  auto [docs, labels] = filter_top_k_labels<Document>(ds.docs, k);
  if (kept) *kept = std::move(labels);
  return Dataset{std::move(docs), ds.skipped_empty};
}

// Word vectors in the `n d` header + `word v1 .. vd` row format. Vocabulary
// words missing from the file get seeded uniform [-0.1, 0.1] rows; the
// padding row is zero.
inline MatrixXd load_embeddings(std::istream& in, const Vocab& vocab, int dim, std::uint64_t seed,
                                std::size_t* loaded_rows = nullptr) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::parse, "word embedding file: missing header");
  auto header = split_ws(trim(line));
  require(header.size() == 2, ErrorCode::parse, "word embedding file: header must be 'n d'");
  const auto n = parse_integer(header[0]);
  const auto d = parse_integer(header[1]);
  require(d == dim, ErrorCode::dimension,
          "word embedding file has dimension " + std::to_string(d) + ", expected " + std::to_string(dim));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  MatrixXd m(vocab.size(), dim);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  std::size_t loaded = 0;
  for (long long r = 0; r < n; ++r) {
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::parse, "word embedding file: truncated");
    auto f = split_ws(trim(line));
    require(f.size() == static_cast<std::size_t>(dim) + 1, ErrorCode::parse,
            "word embedding file line " + std::to_string(r + 2) + ": wrong arity");
    const int idx = vocab.lookup(f[0]);
    if (idx == Vocab::kUnk && f[0] != "<unk>") continue;
    for (int j = 0; j < dim; ++j) m(idx, j) = parse_double(f[static_cast<std::size_t>(j) + 1]);
    ++loaded;
  }
  m.row(Vocab::kPad).setZero();
  if (loaded_rows) *loaded_rows = loaded;
  return m;
}

inline MatrixXd load_embeddings(const std::filesystem::path& path, const Vocab& vocab, int dim, std::uint64_t seed,
                                std::size_t* loaded_rows = nullptr) {
  auto in = open_input(path);
  return load_embeddings(in, vocab, dim, seed, loaded_rows);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthConfig {
  std::vector<int> branching{3, 2, 4, 3, 3};  // children per node, levels 1..5
  double zipf_exponent = 1.0;
  int tokens_per_signature = 2;
  int doc_length = 48;
  double noise_rate = 0.1;  // fraction of doc_length filled with noise words
  int max_labels_per_doc = 5;
  int noise_vocab = 200;
  int train_docs = 2000;
  int valid_docs = 300;
  int test_docs = 300;
  std::uint64_t seed = 0;

  void validate() const {
    require(branching.size() == 5, ErrorCode::config, "synthetic branching needs 5 entries");
    for (int b : branching) require(b >= 1, ErrorCode::config, "branching factors must be positive");
    require(branching[3] <= 10 && branching[4] <= 10, ErrorCode::config,
            "decimal levels allow at most 10 children");
    require(branching[0] * branching[1] * branching[2] <= 999, ErrorCode::config,
            "at most 999 integer codes are available");
    require(zipf_exponent > 0, ErrorCode::config, "zipf exponent must be positive");
    require(tokens_per_signature >= 1, ErrorCode::config, "tokens per signature must be positive");
    require(doc_length >= 1, ErrorCode::config, "document length must be positive");
    require(noise_rate >= 0 && noise_rate < 1, ErrorCode::config, "noise rate must lie in [0, 1)");
    require(max_labels_per_doc >= 1, ErrorCode::config, "labels per document must be positive");
    require(noise_vocab >= 1, ErrorCode::config, "noise vocabulary must be positive");
    require(train_docs >= 1 && valid_docs >= 1 && test_docs >= 1, ErrorCode::config, "split sizes must be positive");
  }
};

struct SynthCorpus {
  std::vector<RawDocument> train, valid, test;
  RangeTable ranges;
  LabelTree tree;
  std::vector<std::string> leaves;                              // every generated leaf code
  std::map<std::string, std::vector<std::string>> signatures;  // node label -> signature words
};

namespace detail {

// Alphabetic word for an index: prefix + base-26 digits.
inline std::string synthetic_word(char prefix, std::size_t n) {
  std::string s;
  do {
    s.push_back(static_cast<char>('a' + n % 26));
    n /= 26;
  } while (n > 0);
  std::reverse(s.begin(), s.end());
  return std::string(1, prefix) + s;
}

inline std::string pad3(int n) {
  std::ostringstream o;
  o << std::setw(3) << std::setfill('0') << n;
  return o.str();
}

}  // namespace detail

inline SynthCorpus synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthCorpus out;
  const auto& b = cfg.branching;

  // Code hierarchy: chapter ranges, sub-chapter ranges, integer codes
  // 001.., then one and two decimal places.
  std::vector<RangeRow> rows;
  std::vector<Path> leaf_paths;
  int next_code = 1;
  for (int c = 0; c < b[0]; ++c) {
    const int chapter_first = next_code;
    const int chapter_last = next_code + b[1] * b[2] - 1;
    for (int s = 0; s < b[1]; ++s) {
      RangeRow row;
      row.kind = CodeKind::diagnosis;
      row.l1_start = RangeBound::parse(detail::pad3(chapter_first));
      row.l1_end = RangeBound::parse(detail::pad3(chapter_last));
      row.l2_start = RangeBound::parse(detail::pad3(next_code));
      row.l2_end = RangeBound::parse(detail::pad3(next_code + b[2] - 1));
      rows.push_back(row);
      next_code += b[2];
    }
  }
  out.ranges = RangeTable(rows);
  for (int code = 1; code < next_code; ++code) {
    for (int d1 = 0; d1 < b[3]; ++d1)
      for (int d2 = 0; d2 < b[4]; ++d2)
        out.leaves.push_back(detail::pad3(code) + "." + std::to_string(d1) + std::to_string(d2));
  }
  std::vector<Path> paths;
  for (const auto& leaf : out.leaves) paths.push_back(build_path(parse_code(leaf, CodeKind::diagnosis), out.ranges));

  // Disjoint signatures, assigned in level order.
  std::size_t word_index = 0;
  std::map<std::string, std::vector<std::string>> signatures;
  {
    auto full = LabelTree::from_paths(paths);
    for (int k = 1; k <= full.max_level(); ++k) {
      for (const auto& label : full.labels_at(k)) {
        auto& sig = signatures[label];
        for (int t = 0; t < cfg.tokens_per_signature; ++t) sig.push_back(detail::synthetic_word('s', word_index++));
      }
    }
  }
  std::vector<std::string> noise_words;
  for (int i = 0; i < cfg.noise_vocab; ++i) noise_words.push_back(detail::synthetic_word('n', static_cast<std::size_t>(i)));

  std::mt19937_64 rng(cfg.seed);
  const std::size_t n_leaves = out.leaves.size();
  // Zipf weights over a seeded random ranking of the leaves.
  std::vector<std::size_t> rank(n_leaves);
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<double> weight(n_leaves);
  for (std::size_t r = 0; r < n_leaves; ++r)
    weight[rank[r]] = 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf_exponent);

  auto sample_labels = [&](std::optional<std::size_t> forced) {
    std::uniform_int_distribution<int> count_dist(1, std::min<int>(cfg.max_labels_per_doc, static_cast<int>(n_leaves)));
    const int count = count_dist(rng);
    std::vector<double> w = weight;
    std::vector<std::size_t> chosen;
    if (forced) {
      chosen.push_back(*forced);
      w[*forced] = 0.0;
    }
    while (static_cast<int>(chosen.size()) < count) {
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      const auto leaf = pick(rng);
      chosen.push_back(leaf);
      w[leaf] = 0.0;
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  };

  auto make_doc = [&](const std::string& id, const std::vector<std::size_t>& leaves) {
    std::set<std::string> nodes;
    for (auto l : leaves)
      for (const auto& n : paths[l].nodes) nodes.insert(n.label);
    std::vector<std::string> sig;
    for (const auto& n : nodes)
      for (const auto& w : signatures.at(n)) sig.push_back(w);
    std::vector<std::string> words = sig;
    const auto sig_slots = static_cast<std::size_t>(std::lround((1.0 - cfg.noise_rate) * cfg.doc_length));
    std::vector<std::string> cycle = sig;
    std::shuffle(cycle.begin(), cycle.end(), rng);
    for (std::size_t i = 0; words.size() < sig_slots; ++i) words.push_back(cycle[i % cycle.size()]);
    const auto noise = static_cast<std::size_t>(std::lround(cfg.noise_rate * cfg.doc_length));
    std::uniform_int_distribution<std::size_t> noise_pick(0, noise_words.size() - 1);
    for (std::size_t i = 0; i < noise; ++i) words.push_back(noise_words[noise_pick(rng)]);
    std::shuffle(words.begin(), words.end(), rng);
    RawDocument d;
    d.id = id;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) d.text += ' ';
      d.text += words[i];
    }
    for (auto l : leaves) d.labels.push_back(out.leaves[l]);
    return d;
  };

  // Every leaf appears in at least one training document when the split is
  // large enough.
  std::vector<std::size_t> coverage(n_leaves);
  std::iota(coverage.begin(), coverage.end(), 0);
  std::shuffle(coverage.begin(), coverage.end(), rng);
  auto id_for = [](const char* split, int i) {
    std::ostringstream o;
    o << split << '-' << std::setw(5) << std::setfill('0') << i;
    return o.str();
  };
  for (int i = 0; i < cfg.train_docs; ++i) {
    std::optional<std::size_t> forced;
    if (static_cast<std::size_t>(i) < n_leaves) forced = coverage[static_cast<std::size_t>(i)];
    out.train.push_back(make_doc(id_for("train", i), sample_labels(forced)));
  }
  std::set<std::string> train_labels;
  for (const auto& d : out.train) train_labels.insert(d.labels.begin(), d.labels.end());
  auto held_out = [&](const char* split, int count, std::vector<RawDocument>& dst) {
    for (int i = 0; i < count; ++i) {
      auto chosen = sample_labels(std::nullopt);
      std::erase_if(chosen, [&](std::size_t l) { return train_labels.count(out.leaves[l]) == 0; });
      if (chosen.empty()) {
        --i;
        continue;
      }
      dst.push_back(make_doc(id_for(split, i), chosen));
    }
  };
  held_out("valid", cfg.valid_docs, out.valid);
  held_out("test", cfg.test_docs, out.test);

  std::vector<IcdCode> codes;
  for (const auto& l : train_labels) codes.push_back(parse_code(l, CodeKind::diagnosis));
  out.tree = build_label_tree(codes, out.ranges);
  out.signatures = std::move(signatures);
  return out;
}

}  // namespace hicu
