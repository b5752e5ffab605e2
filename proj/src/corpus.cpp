#include "finrag/corpus.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

using nlohmann::json;

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Text:
      return "text";
    case Modality::Table:
      return "table";
    case Modality::Figure:
      return "figure";
  }
  return "text";
}

Modality parse_modality(std::string_view s) {
  const auto lower = to_lower(s);
  if (lower == "text") return Modality::Text;
  if (lower == "table") return Modality::Table;
  if (lower == "figure") return Modality::Figure;
  throw InvalidArgument("unknown modality: " + std::string(s));
}

std::string ChunkId::str() const { return doc_id + "#" + std::to_string(position); }

ChunkId ChunkId::parse(std::string_view s) {
  const auto hash = s.rfind('#');
  if (hash == std::string_view::npos || hash + 1 >= s.size()) {
    throw InvalidArgument("malformed chunk id: " + std::string(s));
  }
  ChunkId id;
  id.doc_id = std::string(s.substr(0, hash));
  const auto digits = s.substr(hash + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id.position);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) {
    throw InvalidArgument("malformed chunk id: " + std::string(s));
  }
  return id;
}

std::vector<std::string> split_fixed_length(std::string_view text, std::size_t chunk_length) {
  if (chunk_length < 1) throw InvalidArgument("chunk_length must be >= 1");
  const auto words = split_words(text);
  std::vector<std::string> pieces;
  for (std::size_t i = 0; i < words.size(); i += chunk_length) {
    pieces.push_back(join_words(words, i, std::min(words.size(), i + chunk_length)));
  }
  return pieces;
}

std::vector<Chunk> chunk_document(const DocumentRecord& doc, std::size_t chunk_length) {
  if (chunk_length < 1) throw InvalidArgument("chunk_length must be >= 1");
  std::vector<Chunk> chunks;
  std::uint32_t position = 0;
  for (const auto& block : doc.sections) {
    std::vector<std::string> pieces;
    if (block.modality == Modality::Text) {
      pieces = split_fixed_length(block.text, chunk_length);
    } else {
      auto whole = normalize_whitespace(block.text);
      if (!whole.empty()) pieces.push_back(std::move(whole));
    }
    for (auto& piece : pieces) {
      Chunk c;
      c.id = ChunkId{doc.doc_id, position++};
      c.modality = block.modality;
      c.word_count = word_count(piece);
      c.text = std::move(piece);
      c.section_path = block.section_path;
      chunks.push_back(std::move(c));
    }
  }
  return chunks;
}

namespace {

DocumentRecord doc_from_json(const json& j) {
  DocumentRecord d;
  d.doc_id = j.at("doc_id").get<std::string>();
  d.title = j.value("title", "");
  d.filing_type = j.value("filing_type", "");
  d.period = j.value("period", "");
  for (const auto& s : j.value("sections", json::array())) {
    Block b;
    b.section_path = s.value("path", "");
    b.modality = parse_modality(s.value("modality", "text"));
    b.text = s.value("text", "");
    d.sections.push_back(std::move(b));
  }
  return d;
}

json doc_to_json(const DocumentRecord& d) {
  json sections = json::array();
  for (const auto& b : d.sections) {
    sections.push_back({{"path", b.section_path},
                        {"modality", std::string(to_string(b.modality))},
                        {"text", b.text}});
  }
  return {{"doc_id", d.doc_id},
          {"title", d.title},
          {"filing_type", d.filing_type},
          {"period", d.period},
          {"sections", sections}};
}

json chunk_to_json(const Chunk& c) {
  json j = {{"id", c.id.str()},
            {"doc_id", c.id.doc_id},
            {"position", c.id.position},
            {"modality", std::string(to_string(c.modality))},
            {"section_path", c.section_path},
            {"text", c.text},
            {"word_count", c.word_count}};
  if (c.summary) j["summary"] = *c.summary;
  if (c.embedding) j["embedding"] = c.embedding->values;
  if (c.unresolved) j["unresolved"] = true;
  return j;
}

Chunk chunk_from_json(const json& j) {
  Chunk c;
  c.id.doc_id = j.at("doc_id").get<std::string>();
  c.id.position = j.at("position").get<std::uint32_t>();
  c.modality = parse_modality(j.value("modality", "text"));
  c.section_path = j.value("section_path", "");
  c.text = j.at("text").get<std::string>();
  c.word_count = j.value("word_count", word_count(c.text));
  if (j.contains("summary")) c.summary = j["summary"].get<std::string>();
  if (j.contains("embedding")) c.embedding = EmbeddingVector{j["embedding"].get<std::vector<double>>()};
  c.unresolved = j.value("unresolved", false);
  return c;
}

template <typename T, typename F>
std::vector<T> read_lines(std::istream& in, F&& parse, const char* what) {
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_whitespace(line).empty()) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(std::string(what) + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return in;
}

}  // namespace

std::vector<DocumentRecord> read_corpus(std::istream& in) {
  return read_lines<DocumentRecord>(in, doc_from_json, "corpus");
}

std::vector<DocumentRecord> read_corpus_file(const std::string& path) {
  auto in = open_in(path);
  return read_corpus(in);
}

void write_corpus(std::ostream& out, const std::vector<DocumentRecord>& docs) {
  for (const auto& d : docs) out << doc_to_json(d).dump() << '\n';
}

std::vector<Chunk> read_chunks(std::istream& in) {
  return read_lines<Chunk>(in, chunk_from_json, "chunk store");
}

std::vector<Chunk> read_chunks_file(const std::string& path) {
  auto in = open_in(path);
  return read_chunks(in);
}

void write_chunks(std::ostream& out, const std::vector<Chunk>& chunks) {
  for (const auto& c : chunks) out << chunk_to_json(c).dump() << '\n';
}

void write_chunks_file(const std::string& path, const std::vector<Chunk>& chunks) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  write_chunks(out, chunks);
}

}  // namespace finrag
