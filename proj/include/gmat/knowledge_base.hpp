#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmat/error.hpp"
#include "gmat/hashing.hpp"
#include "gmat/text.hpp"

namespace gmat {

inline constexpr const char* kUntagged = "untagged";

struct SourceDocument {
  std::string doc_id;
  std::string title;
  std::string body;
  std::string provenance;
};

struct KnowledgeChunk {
  std::string chunk_id;
  std::string doc_id;
  std::string text;
  std::set<std::string> class_tags;
  int token_count = 0;

  bool operator==(const KnowledgeChunk&) const = default;
};

/// class label -> alternative names used for tagging and scoring.
using AliasTable = std::map<std::string, std::vector<std::string>>;

/// Terms that identify a class: the label itself followed by its aliases.
inline std::vector<std::string> class_terms(const std::string& label, const AliasTable& aliases) {
  std::vector<std::string> terms{label};
  if (auto it = aliases.find(label); it != aliases.end()) {
    terms.insert(terms.end(), it->second.begin(), it->second.end());
  }
  return terms;
}

inline void check_aliases(const AliasTable& aliases, const std::vector<std::string>& class_labels) {
  for (const auto& [label, _] : aliases) {
    if (std::find(class_labels.begin(), class_labels.end(), label) == class_labels.end()) {
      throw Error(ErrorCode::UnknownClassAlias, "alias table references unregistered label '" + label + "'");
    }
  }
}

namespace detail {

inline std::vector<std::string> paragraphs(const std::string& body) {
  std::vector<std::string> out;
  std::string cur;
  for (const auto& line : text::split_lines(body)) {
    if (text::is_blank(line)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      continue;
    }
    if (!cur.empty()) cur.push_back('\n');
    cur += text::trim(line);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Cut a paragraph longer than the limit into whitespace-delimited pieces.
// A single word longer than the limit is hard-cut on a UTF-8 boundary.
inline std::vector<std::string> split_long(const std::string& para, std::size_t limit) {
  std::vector<std::string> out;
  std::string_view rest = para;
  while (rest.size() > limit) {
    std::size_t cut = limit;
    while (cut > 0 && !text::is_space(rest[cut])) --cut;
    if (cut == 0) {
      cut = limit;
      while (cut > 0 && (static_cast<unsigned char>(rest[cut]) & 0xC0) == 0x80) --cut;
      if (cut == 0) cut = limit;
      out.emplace_back(rest.substr(0, cut));
      rest.remove_prefix(cut);
    } else {
      out.emplace_back(text::trim(rest.substr(0, cut)));
      rest.remove_prefix(cut);
    }
    rest = text::trim(rest);
  }
  if (!rest.empty()) out.emplace_back(rest);
  return out;
}

inline std::string chunk_id(const std::string& doc_id, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return doc_id + "#" + buf;
}

}  // namespace detail

/// Splits a document into paragraph-aligned chunks of at most `chunk_size`
/// bytes and tags each chunk with every class whose label or alias occurs in
/// it (case-insensitive, whole-word).
inline std::vector<KnowledgeChunk> ingest_document(const SourceDocument& doc,
                                                   const std::vector<std::string>& class_labels,
                                                   std::size_t chunk_size,
                                                   const AliasTable& aliases = {}) {
  if (text::is_blank(doc.body)) throw Error(ErrorCode::EmptyDocument, "document '" + doc.doc_id + "' has a blank body");
  require(chunk_size >= 64, ErrorCode::InvalidArgument, "chunk_size must be at least 64 characters");
  check_aliases(aliases, class_labels);

  std::vector<std::string> pieces;
  for (const auto& p : detail::paragraphs(doc.body)) {
    for (auto& s : detail::split_long(p, chunk_size)) pieces.push_back(std::move(s));
  }

  std::vector<std::string> merged;
  std::string cur;
  for (const auto& p : pieces) {
    if (cur.empty()) {
      cur = p;
    } else if (cur.size() + 2 + p.size() <= chunk_size) {
      cur += "\n\n";
      cur += p;
    } else {
      merged.push_back(std::move(cur));
      cur = p;
    }
  }
  if (!cur.empty()) merged.push_back(std::move(cur));

  std::vector<KnowledgeChunk> chunks;
  chunks.reserve(merged.size());
  for (std::size_t i = 0; i < merged.size(); ++i) {
    KnowledgeChunk c;
    c.chunk_id = detail::chunk_id(doc.doc_id, i);
    c.doc_id = doc.doc_id;
    c.text = std::move(merged[i]);
    c.token_count = static_cast<int>(text::whitespace_word_count(c.text));
    for (const auto& label : class_labels) {
      for (const auto& term : class_terms(label, aliases)) {
        if (text::contains_term(c.text, term)) {
          c.class_tags.insert(label);
          break;
        }
      }
    }
    if (c.class_tags.empty()) c.class_tags.insert(kUntagged);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

/// Immutable after build(); all queries are const.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  static KnowledgeBase build(const std::vector<SourceDocument>& docs, std::vector<std::string> class_labels,
                             const AliasTable& aliases, std::size_t chunk_size) {
    KnowledgeBase kb;
    kb.class_labels_ = std::move(class_labels);
    kb.aliases_ = aliases;
    kb.check_labels();
    check_aliases(kb.aliases_, kb.class_labels_);
    std::set<std::string> doc_ids;
    for (const auto& d : docs) {
      if (!doc_ids.insert(d.doc_id).second) {
        throw Error(ErrorCode::InvalidArgument, "duplicate doc_id '" + d.doc_id + "'");
      }
      for (auto& c : ingest_document(d, kb.class_labels_, chunk_size, kb.aliases_)) kb.chunks_.push_back(std::move(c));
    }
    return kb;
  }

  static KnowledgeBase from_parts(std::vector<std::string> class_labels, std::vector<KnowledgeChunk> chunks,
                                  AliasTable aliases = {}) {
    KnowledgeBase kb;
    kb.class_labels_ = std::move(class_labels);
    kb.chunks_ = std::move(chunks);
    kb.aliases_ = std::move(aliases);
    kb.check_labels();
    check_aliases(kb.aliases_, kb.class_labels_);
    std::set<std::string> ids;
    for (const auto& c : kb.chunks_) {
      require(!c.text.empty(), ErrorCode::SchemaError, "chunk '" + c.chunk_id + "' has empty text");
      require(ids.insert(c.chunk_id).second, ErrorCode::SchemaError, "duplicate chunk_id '" + c.chunk_id + "'");
      for (const auto& t : c.class_tags) {
        require(t == kUntagged || kb.has_class(t), ErrorCode::SchemaError, "chunk tag '" + t + "' is not a class label");
      }
    }
    return kb;
  }

  const std::vector<KnowledgeChunk>& chunks() const { return chunks_; }
  const std::vector<std::string>& class_labels() const { return class_labels_; }
  const AliasTable& aliases() const { return aliases_; }

  bool has_class(const std::string& label) const {
    return std::find(class_labels_.begin(), class_labels_.end(), label) != class_labels_.end();
  }

  /// Number of distinct class terms (label + aliases) present in the chunk.
  int relevance(const KnowledgeChunk& chunk, const std::string& label) const {
    int score = 0;
    std::set<std::string> seen;
    for (const auto& term : class_terms(label, aliases_)) {
      if (!seen.insert(text::to_lower(term)).second) continue;
      if (text::contains_term(chunk.text, term)) ++score;
    }
    return score;
  }

  std::size_t tagged_count(const std::string& label) const {
    return static_cast<std::size_t>(std::count_if(chunks_.begin(), chunks_.end(),
                                                  [&](const auto& c) { return c.class_tags.contains(label); }));
  }

  std::size_t total_chars() const {
    std::size_t n = 0;
    for (const auto& c : chunks_) n += c.text.size();
    return n;
  }

  /// Chunks tagged with `label`, best relevance first (ties by chunk_id),
  /// cut at the first chunk that would push the total text past the budget.
  std::vector<KnowledgeChunk> query(const std::string& label, std::size_t budget_chars) const {
    if (!has_class(label)) throw Error(ErrorCode::UnknownClass, "class '" + label + "' is not in the knowledge base");
    require(budget_chars > 0, ErrorCode::InvalidArgument, "budget_chars must be positive");
    std::vector<std::pair<int, const KnowledgeChunk*>> scored;
    for (const auto& c : chunks_) {
      if (c.class_tags.contains(label)) scored.emplace_back(relevance(c, label), &c);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second->chunk_id < b.second->chunk_id;
    });
    std::vector<KnowledgeChunk> out;
    std::size_t used = 0;
    for (const auto& [_, c] : scored) {
      if (used + c->text.size() > budget_chars) break;
      used += c->text.size();
      out.push_back(*c);
    }
    return out;
  }

 private:
  void check_labels() const {
    require(!class_labels_.empty(), ErrorCode::InvalidArgument, "knowledge base needs at least one class label");
    std::set<std::string> uniq(class_labels_.begin(), class_labels_.end());
    require(uniq.size() == class_labels_.size(), ErrorCode::InvalidArgument, "class labels must be unique");
    require(!uniq.contains(kUntagged), ErrorCode::InvalidArgument, "'untagged' is reserved");
  }

  std::vector<KnowledgeChunk> chunks_;
  std::vector<std::string> class_labels_;
  AliasTable aliases_;
};

inline nlohmann::json to_json(const KnowledgeBase& kb) {
  nlohmann::json chunks = nlohmann::json::array();
  for (const auto& c : kb.chunks()) {
    chunks.push_back({{"chunk_id", c.chunk_id},
                      {"doc_id", c.doc_id},
                      {"text", c.text},
                      {"class_tags", c.class_tags},
                      {"token_count", c.token_count}});
  }
  nlohmann::json j = {{"class_labels", kb.class_labels()}, {"chunks", chunks}};
  if (!kb.aliases().empty()) j["aliases"] = kb.aliases();
  return j;
}

inline KnowledgeBase knowledge_base_from_json(const nlohmann::json& j) {
  try {
    std::vector<KnowledgeChunk> chunks;
    for (const auto& c : j.at("chunks")) {
      KnowledgeChunk k;
      k.chunk_id = c.at("chunk_id").get<std::string>();
      k.doc_id = c.at("doc_id").get<std::string>();
      k.text = c.at("text").get<std::string>();
      k.class_tags = c.at("class_tags").get<std::set<std::string>>();
      k.token_count = c.at("token_count").get<int>();
      chunks.push_back(std::move(k));
    }
    AliasTable aliases;
    if (j.contains("aliases")) aliases = j.at("aliases").get<AliasTable>();
    return KnowledgeBase::from_parts(j.at("class_labels").get<std::vector<std::string>>(), std::move(chunks),
                                     std::move(aliases));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("knowledge base JSON: ") + e.what());
  }
}

inline void save_knowledge_base(const KnowledgeBase& kb, const std::string& path) {
  write_file(path, to_json(kb).dump(2) + "\n");
}

inline KnowledgeBase load_knowledge_base(const std::string& path) {
  const auto raw = read_file(path);
  auto j = nlohmann::json::parse(raw, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::SchemaError, "knowledge base file is not valid JSON: " + path);
  return knowledge_base_from_json(j);
}

inline AliasTable load_alias_table(const std::string& path) {
  auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::SchemaError, "alias table must be a JSON object: " + path);
  try {
    return j.get<AliasTable>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("alias table: ") + e.what());
  }
}

}  // namespace gmat
