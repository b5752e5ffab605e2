#include "finrag/index.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

using nlohmann::json;

void Bm25Params::validate() const {
  if (!(k1 > 0.0)) throw InvalidArgument("bm25: k1 must be > 0");
  if (!(b >= 0.0 && b <= 1.0)) throw InvalidArgument("bm25: b must be in [0, 1]");
}

bool ranks_before(const ScoredChunk& a, const ScoredChunk& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

namespace {

std::vector<ScoredChunk> top_k(std::vector<ScoredChunk> all, std::size_t k) {
  const auto n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), ranks_before);
  all.resize(n);
  return all;
}

void write_header(std::ostream& out, std::string_view magic) {
  out << magic << ' ' << kIndexFormatVersion << '\n';
}

void read_header(std::istream& in, std::string_view magic) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("index file is empty");
  const std::string expected = std::string(magic) + " " + std::to_string(kIndexFormatVersion);
  if (line != expected) {
    throw FormatError("bad index header '" + line + "', expected '" + expected + "'");
  }
}

json read_body(std::istream& in) {
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(std::string("index body: ") + e.what());
  }
}

}  // namespace

void InvertedIndex::add(const ChunkId& id, std::string_view text) {
  if (doc_lengths_.contains(id)) throw InvalidArgument("duplicate chunk id " + id.str());
  const auto terms = tokenize_terms(text);
  std::map<std::string, std::uint32_t> tf;
  for (const auto& t : terms) ++tf[t];
  for (const auto& [term, count] : tf) {
    auto& list = postings_[term];
    const Posting p{id, count};
    // Keep posting lists id-sorted regardless of insertion order.
    list.insert(std::upper_bound(list.begin(), list.end(), p,
                                 [](const Posting& a, const Posting& b) { return a.id < b.id; }),
                p);
  }
  doc_lengths_[id] = static_cast<std::uint32_t>(terms.size());
  total_length_ += terms.size();
}

double InvertedIndex::avg_doc_length() const {
  if (doc_lengths_.empty()) return 0.0;
  return static_cast<double>(total_length_) / static_cast<double>(doc_lengths_.size());
}

std::size_t InvertedIndex::document_frequency(const std::string& term) const {
  const auto it = postings_.find(term);
  return it == postings_.end() ? 0 : it->second.size();
}

std::uint32_t InvertedIndex::term_frequency(const std::string& term, const ChunkId& id) const {
  const auto it = postings_.find(term);
  if (it == postings_.end()) return 0;
  const auto& list = it->second;
  const auto pos = std::lower_bound(list.begin(), list.end(), id,
                                    [](const Posting& p, const ChunkId& key) { return p.id < key; });
  return (pos != list.end() && pos->id == id) ? pos->tf : 0;
}

double InvertedIndex::idf(const std::string& term) const {
  const double n = static_cast<double>(size());
  const double df = static_cast<double>(document_frequency(term));
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

namespace {

double term_contribution(double idf, double tf, double len, double avgdl, const Bm25Params& p) {
  if (tf <= 0.0) return 0.0;
  const double norm = avgdl > 0.0 ? len / avgdl : 0.0;
  return idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

}  // namespace

double bm25_score(std::span<const std::string> query_terms, const ChunkId& id,
                  const InvertedIndex& idx, const Bm25Params& p) {
  const auto len_it = idx.doc_lengths().find(id);
  if (len_it == idx.doc_lengths().end()) throw NotFound("bm25: unknown chunk " + id.str());
  const double len = len_it->second;
  const double avgdl = idx.avg_doc_length();
  double score = 0.0;
  for (const auto& term : query_terms) {
    score += term_contribution(idx.idf(term), idx.term_frequency(term, id), len, avgdl, p);
  }
  return score;
}

std::vector<ScoredChunk> search_sparse(std::string_view query, std::size_t k,
                                       const InvertedIndex& idx, const Bm25Params& p) {
  if (k == 0 || idx.size() == 0) return {};
  const auto terms = tokenize_terms(query);
  const double avgdl = idx.avg_doc_length();

  std::vector<ScoredChunk> all;
  all.reserve(idx.size());
  std::map<ChunkId, std::size_t> slot;
  for (const auto& [id, len] : idx.doc_lengths()) {
    slot.emplace(id, all.size());
    all.push_back({id, 0.0});
  }
  // Accumulate term by term in query order so sums match bm25_score exactly.
  for (const auto& term : terms) {
    const auto it = idx.postings().find(term);
    if (it == idx.postings().end()) continue;
    const double idf = idx.idf(term);
    for (const auto& posting : it->second) {
      const double len = idx.doc_lengths().at(posting.id);
      all[slot.at(posting.id)].score += term_contribution(idf, posting.tf, len, avgdl, p);
    }
  }
  return top_k(std::move(all), k);
}

void InvertedIndex::save(std::ostream& out, const Bm25Params& params) const {
  write_header(out, kSparseMagic);
  json lengths = json::object();
  for (const auto& [id, len] : doc_lengths_) lengths[id.str()] = len;
  json postings = json::object();
  for (const auto& [term, list] : postings_) {
    json arr = json::array();
    for (const auto& p : list) arr.push_back({p.id.str(), p.tf});
    postings[term] = arr;
  }
  json body = {{"params", {{"k1", params.k1}, {"b", params.b}}},
               {"corpus_size", doc_lengths_.size()},
               {"avg_doc_length", avg_doc_length()},
               {"doc_lengths", lengths},
               {"postings", postings}};
  out << body.dump() << '\n';
}

InvertedIndex InvertedIndex::load(std::istream& in, Bm25Params* params) {
  read_header(in, kSparseMagic);
  const json body = read_body(in);
  InvertedIndex idx;
  try {
    if (params) {
      params->k1 = body.at("params").at("k1").get<double>();
      params->b = body.at("params").at("b").get<double>();
      params->validate();
    }
    for (const auto& [key, len] : body.at("doc_lengths").items()) {
      const auto l = len.get<std::uint32_t>();
      idx.doc_lengths_[ChunkId::parse(key)] = l;
      idx.total_length_ += l;
    }
    for (const auto& [term, arr] : body.at("postings").items()) {
      auto& list = idx.postings_[term];
      for (const auto& entry : arr) {
        Posting p{ChunkId::parse(entry.at(0).get<std::string>()), entry.at(1).get<std::uint32_t>()};
        if (!idx.doc_lengths_.contains(p.id)) {
          throw FormatError("posting for '" + term + "' references unknown chunk " + p.id.str());
        }
        list.push_back(std::move(p));
      }
      if (!std::is_sorted(list.begin(), list.end(),
                          [](const Posting& a, const Posting& b) { return a.id < b.id; })) {
        throw FormatError("posting list for '" + term + "' is not id-sorted");
      }
    }
    if (body.at("corpus_size").get<std::size_t>() != idx.doc_lengths_.size()) {
      throw FormatError("corpus_size disagrees with doc_lengths");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("sparse index: ") + e.what());
  }
  return idx;
}

void VectorIndex::add(const ChunkId& id, EmbeddingVector v) {
  if (entries_.empty() && dim_ == 0) dim_ = v.dim();
  if (v.dim() != dim_) throw InvalidArgument("vector index: dimension mismatch for " + id.str());
  if (!entries_.emplace(id, std::move(v)).second) {
    throw InvalidArgument("vector index: duplicate chunk id " + id.str());
  }
}

const EmbeddingVector& VectorIndex::at(const ChunkId& id) const {
  const auto it = entries_.find(id);
  if (it == entries_.end()) throw NotFound("vector index: unknown chunk " + id.str());
  return it->second;
}

void VectorIndex::save(std::ostream& out, std::string_view magic) const {
  write_header(out, magic);
  json entries = json::array();
  for (const auto& [id, v] : entries_) entries.push_back({id.str(), v.values});
  out << json{{"dim", dim_}, {"entries", entries}}.dump() << '\n';
}

VectorIndex VectorIndex::load(std::istream& in, std::string_view magic) {
  read_header(in, magic);
  const json body = read_body(in);
  try {
    VectorIndex idx(body.at("dim").get<std::size_t>());
    for (const auto& e : body.at("entries")) {
      EmbeddingVector v{e.at(1).get<std::vector<double>>()};
      for (double x : v.values) {
        if (!std::isfinite(x)) throw FormatError("vector index: non-finite component");
      }
      if (std::abs(v.norm() - 1.0) > 1e-6) throw FormatError("vector index: vector is not unit-norm");
      idx.add(ChunkId::parse(e.at(0).get<std::string>()), std::move(v));
    }
    return idx;
  } catch (const json::exception& e) {
    throw FormatError(std::string("vector index: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
}

std::vector<ScoredChunk> search_dense(const EmbeddingVector& query, std::size_t k,
                                      const VectorIndex& idx) {
  if (k == 0 || idx.size() == 0) return {};
  if (query.dim() != idx.dim()) throw InvalidArgument("search: query dimension mismatch");
  std::vector<ScoredChunk> all;
  all.reserve(idx.size());
  for (const auto& [id, v] : idx.entries()) all.push_back({id, cosine(query, v)});
  return top_k(std::move(all), k);
}

std::vector<ScoredChunk> search_metadata(const EmbeddingVector& query, std::size_t k,
                                         const VectorIndex& meta_idx) {
  return search_dense(query, k, meta_idx);
}

}  // namespace finrag
