#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "droidlens/error.hpp"
#include "droidlens/fsutil.hpp"
#include "droidlens/text.hpp"

namespace droidlens {

enum class BugKind { IntraPage, InterPage };

inline const char* to_string(BugKind k) { return k == BugKind::IntraPage ? "intra_page" : "inter_page"; }

inline std::optional<BugKind> parse_bug_kind(std::string_view s) {
  const std::string v = text::lower(s);
  if (v == "intra_page" || v == "intrapage" || v == "intra-page" || v == "intra") return BugKind::IntraPage;
  if (v == "inter_page" || v == "interpage" || v == "inter-page" || v == "inter") return BugKind::InterPage;
  return std::nullopt;
}

using Vector = std::vector<double>;

/// Word vectors in the plain text layout: one "word v1 v2 ... vD" per line,
/// with an optional leading "count dim" header.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  static EmbeddingTable parse(std::string_view content) {
    EmbeddingTable t;
    std::istringstream in{std::string(content)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (text::trim(line).empty()) continue;
      std::istringstream ls(line);
      std::string word;
      ls >> word;
      Vector v;
      double x;
      while (ls >> x) v.push_back(x);
      if (!ls.eof()) throw Error(ErrorCode::ConfigError, "embedding line " + std::to_string(line_no) + ": bad number");
      if (line_no == 1 && v.size() == 1 && text::is_all_digits(word)) continue;  // header
      if (v.empty()) throw Error(ErrorCode::ConfigError, "embedding line " + std::to_string(line_no) + ": no vector");
      t.add(text::lower(word), std::move(v));
    }
    if (t.dim_ == 0) throw Error(ErrorCode::ConfigError, "embedding table is empty");
    return t;
  }

  static EmbeddingTable load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::ConfigError, "embedding table not found: " + path.string());
    return parse(fs::read_text(path));
  }

  void add(std::string word, Vector v) {
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_)
      throw Error(ErrorCode::ConfigError, "embedding for '" + word + "' has dimension " + std::to_string(v.size()) +
                                              ", expected " + std::to_string(dim_));
    vectors_[std::move(word)] = std::move(v);
  }

  const Vector* find(const std::string& word) const {
    const auto it = vectors_.find(word);
    return it == vectors_.end() ? nullptr : &it->second;
  }

  std::size_t dimension() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Vector> vectors_;
};

/// Splits camel case ("BudgetActivity" -> budget, activity; "HTMLView" ->
/// html, view), then lowercases and splits on non-alphanumerics.
inline std::vector<std::string> embedding_tokens(std::string_view s) {
  std::string spaced;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (i > 0) {
      const char p = s[i - 1];
      const bool lower_upper = std::islower(static_cast<unsigned char>(p)) && std::isupper(static_cast<unsigned char>(c));
      const bool acronym_end = std::isupper(static_cast<unsigned char>(p)) && std::isupper(static_cast<unsigned char>(c)) &&
                               i + 1 < s.size() && std::islower(static_cast<unsigned char>(s[i + 1]));
      const bool digit_edge = (text::is_digit(p) != text::is_digit(c)) && text::is_alnum(p) && text::is_alnum(c);
      if (lower_upper || acronym_end || digit_edge) spaced += ' ';
    }
    spaced += c;
  }
  return text::alnum_tokens(spaced);
}

/// Mean of the in-vocabulary token vectors; zero vector if none hit.
inline Vector embed(const EmbeddingTable& table, std::string_view s) {
  Vector out(table.dimension(), 0.0);
  std::size_t hits = 0;
  for (const auto& tok : embedding_tokens(s)) {
    if (const Vector* v = table.find(tok)) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*v)[i];
      ++hits;
    }
  }
  if (hits > 0)
    for (auto& x : out) x /= static_cast<double>(hits);
  return out;
}

/// 0 when either side has zero norm.
inline double cosine(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::InvalidArgument, "cosine of vectors with different dimension");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

struct ExampleBug {
  std::string id;
  std::string description;
  std::string screenshot_ref;  // may be empty
  std::string reproduction_path;
  std::string activity_context;
  BugKind kind = BugKind::InterPage;
  Vector embedding;

  friend bool operator==(const ExampleBug&, const ExampleBug&) = default;
};

struct ScoredExample {
  ExampleBug example;
  double similarity = 0.0;
};

/// Immutable-by-value exemplar store; `with` returns an enlarged copy.
class ExampleStore {
 public:
  ExampleStore() = default;
  explicit ExampleStore(EmbeddingTable table) : table_(std::move(table)) {}

  const EmbeddingTable& table() const noexcept { return table_; }
  const std::vector<ExampleBug>& examples() const noexcept { return examples_; }
  std::size_t size() const noexcept { return examples_.size(); }

  /// Embeds (if needed) and appends; ids must be unique.
  void add(ExampleBug b) {
    if (text::trim(b.description).empty()) throw Error(ErrorCode::SchemaViolation, "exemplar description is empty");
    if (b.id.empty()) b.id = next_id();
    for (const auto& e : examples_)
      if (e.id == b.id) throw Error(ErrorCode::SchemaViolation, "duplicate exemplar id " + b.id);
    if (b.embedding.empty()) b.embedding = embed(table_, b.activity_context);
    if (b.embedding.size() != table_.dimension())
      throw Error(ErrorCode::SchemaViolation, "exemplar " + b.id + " embedding dimension mismatch");
    examples_.push_back(std::move(b));
  }

  ExampleStore with(ExampleBug b) const {
    ExampleStore copy = *this;
    copy.add(std::move(b));
    return copy;
  }

  std::string next_id() const {
    std::size_t n = examples_.size() + 1;
    while (true) {
      const std::string id = "ex-" + std::to_string(n);
      bool used = false;
      for (const auto& e : examples_) used = used || e.id == id;
      if (!used) return id;
      ++n;
    }
  }

 private:
  EmbeddingTable table_;
  std::vector<ExampleBug> examples_;
};

inline constexpr std::size_t kDefaultTopK = 5;

/// Descending cosine, ties by ascending id.
inline std::vector<ScoredExample> top_k(const ExampleStore& store, std::string_view activity_context,
                                        std::size_t k = kDefaultTopK) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "top_k needs k >= 1");
  const Vector q = embed(store.table(), activity_context);
  std::vector<ScoredExample> scored;
  scored.reserve(store.size());
  for (const auto& e : store.examples()) scored.push_back({e, cosine(q, e.embedding)});
  std::stable_sort(scored.begin(), scored.end(), [](const ScoredExample& a, const ScoredExample& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.example.id < b.example.id;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

// ---------------------------------------------------------------------------
// Corpus file: one JSON object per line.

inline nlohmann::json exemplar_to_json(const ExampleBug& b) {
  nlohmann::json j = {{"id", b.id},
                      {"description", b.description},
                      {"reproduction_path", b.reproduction_path},
                      {"activity_context", b.activity_context},
                      {"kind", to_string(b.kind)}};
  if (!b.screenshot_ref.empty()) j["screenshot_ref"] = b.screenshot_ref;
  return j;
}

inline ExampleBug exemplar_from_json(const nlohmann::json& j, std::size_t index) {
  const auto fail = [&](const std::string& why) {
    return Error(ErrorCode::SchemaViolation, "exemplar record " + std::to_string(index) + ": " + why);
  };
  if (!j.is_object()) throw fail("not an object");
  const auto str = [&](const char* key, bool required) -> std::string {
    if (!j.contains(key)) {
      if (required) throw fail(std::string("missing field '") + key + "'");
      return {};
    }
    if (!j[key].is_string()) throw fail(std::string("field '") + key + "' must be a string");
    return j[key].get<std::string>();
  };
  ExampleBug b;
  b.id = str("id", true);
  b.description = str("description", true);
  if (text::trim(b.description).empty()) throw fail("empty description");
  b.reproduction_path = str("reproduction_path", true);
  b.activity_context = str("activity_context", true);
  b.screenshot_ref = str("screenshot_ref", false);
  const auto kind = parse_bug_kind(str("kind", true));
  if (!kind) throw fail("kind must be intra_page or inter_page");
  b.kind = *kind;
  return b;
}

/// Parses a JSON-lines corpus; blank lines are skipped, indices count records from 0.
inline ExampleStore ingest(std::string_view jsonl, EmbeddingTable table) {
  ExampleStore store(std::move(table));
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::SchemaViolation, "exemplar record " + std::to_string(index) + ": " + e.what());
    }
    ExampleBug b = exemplar_from_json(j, index);
    try {
      store.add(std::move(b));
    } catch (const Error& e) {
      throw Error(ErrorCode::SchemaViolation, "exemplar record " + std::to_string(index) + ": " + e.what());
    }
    ++index;
  }
  return store;
}

inline ExampleStore ingest_file(const std::filesystem::path& path, EmbeddingTable table) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::ConfigError, "corpus not found: " + path.string());
  return ingest(fs::read_text(path), std::move(table));
}

inline std::string corpus_to_jsonl(const ExampleStore& store) {
  std::string out;
  for (const auto& e : store.examples()) out += exemplar_to_json(e).dump() + "\n";
  return out;
}

}  // namespace droidlens
