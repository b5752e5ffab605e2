#include "finrag/knowledge_base.hpp"

#include <filesystem>
#include <fstream>
#include <future>

#include <nlohmann/json.hpp>

#include "finrag/error.hpp"

namespace finrag {

namespace fs = std::filesystem;
using nlohmann::json;

KnowledgeBase::KnowledgeBase() : embedder_(default_embedder()) {}

KnowledgeBase KnowledgeBase::from_chunks(std::vector<Chunk> chunks,
                                         std::shared_ptr<const Embedder> embedder,
                                         Bm25Params bm25) {
  bm25.validate();
  KnowledgeBase kb;
  kb.embedder_ = embedder ? std::move(embedder) : default_embedder();
  kb.bm25_ = bm25;
  kb.chunks_ = std::move(chunks);
  for (std::size_t i = 0; i < kb.chunks_.size(); ++i) {
    const auto& c = kb.chunks_[i];
    if (!c.embedding) throw InvalidArgument("chunk " + c.id.str() + " has no embedding");
    if (!kb.by_id_.emplace(c.id, i).second) throw InvalidArgument("duplicate chunk id " + c.id.str());
  }

  const auto& chunks_ref = kb.chunks_;
  const auto& emb = *kb.embedder_;
  auto sparse = std::async(std::launch::async, [&] {
    InvertedIndex idx;
    for (const auto& c : chunks_ref) idx.add(c.id, c.text);
    return idx;
  });
  auto dense = std::async(std::launch::async, [&] {
    VectorIndex idx(emb.dim());
    for (const auto& c : chunks_ref) idx.add(c.id, *c.embedding);
    return idx;
  });
  auto meta = std::async(std::launch::async, [&] {
    VectorIndex idx(emb.dim());
    std::map<std::string, EmbeddingVector> cache;
    for (const auto& c : chunks_ref) {
      if (!c.summary || c.summary->empty()) continue;
      auto it = cache.find(*c.summary);
      if (it == cache.end()) it = cache.emplace(*c.summary, emb.embed(*c.summary)).first;
      idx.add(c.id, it->second);
    }
    return idx;
  });
  kb.sparse_ = sparse.get();
  kb.dense_ = dense.get();
  kb.metadata_ = meta.get();
  return kb;
}

const Chunk* KnowledgeBase::find(const ChunkId& id) const {
  const auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &chunks_[it->second];
}

const Chunk& KnowledgeBase::chunk(const ChunkId& id) const {
  const auto* c = find(id);
  if (!c) throw NotFound("unknown chunk " + id.str());
  return *c;
}

const Chunk* KnowledgeBase::at_position(const std::string& doc_id, std::int64_t position) const {
  if (position < 0 || position > static_cast<std::int64_t>(UINT32_MAX)) return nullptr;
  return find(ChunkId{doc_id, static_cast<std::uint32_t>(position)});
}

namespace {

json embedder_json(const Embedder& e) {
  json j = {{"name", e.name()}, {"dim", e.dim()}};
  if (const auto* h = dynamic_cast<const HashedNgramEmbedder*>(&e)) {
    j["ngram_min"] = h->config().ngram_min;
    j["ngram_max"] = h->config().ngram_max;
    j["seed"] = h->config().seed;
  }
  return j;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  return in;
}

}  // namespace

void KnowledgeBase::save(const std::string& dir) const {
  fs::create_directories(dir);
  const fs::path root(dir);
  {
    auto out = open_out(root / "chunks.jsonl");
    write_chunks(out, chunks_);
  }
  {
    auto out = open_out(root / "sparse.idx");
    sparse_.save(out, bm25_);
  }
  {
    auto out = open_out(root / "dense.idx");
    dense_.save(out, kDenseMagic);
  }
  {
    auto out = open_out(root / "meta.idx");
    metadata_.save(out, kMetadataMagic);
  }
  auto out = open_out(root / "kb.json");
  out << json{{"format_version", kIndexFormatVersion},
              {"chunk_count", chunks_.size()},
              {"embedder", embedder_json(*embedder_)},
              {"bm25", {{"k1", bm25_.k1}, {"b", bm25_.b}}}}
             .dump(2)
      << '\n';
}

KnowledgeBase KnowledgeBase::load(const std::string& dir, std::shared_ptr<const Embedder> embedder) {
  const fs::path root(dir);
  json meta;
  {
    auto in = open_in(root / "kb.json");
    try {
      meta = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError(std::string("kb.json: ") + e.what());
    }
  }
  if (meta.value("format_version", 0) != kIndexFormatVersion) {
    throw FormatError("kb.json: unsupported format version");
  }
  if (!embedder) {
    const auto& e = meta.at("embedder");
    if (e.value("name", "") != "hashed-ngram") {
      throw InvalidArgument("knowledge base uses embedder '" + e.value("name", "") +
                            "'; supply it explicitly");
    }
    EmbedderConfig cfg;
    cfg.dim = e.at("dim").get<std::size_t>();
    cfg.ngram_min = e.at("ngram_min").get<std::size_t>();
    cfg.ngram_max = e.at("ngram_max").get<std::size_t>();
    cfg.seed = e.at("seed").get<std::uint64_t>();
    embedder = default_embedder(cfg);
  }

  KnowledgeBase kb;
  kb.embedder_ = std::move(embedder);
  {
    auto in = open_in(root / "chunks.jsonl");
    kb.chunks_ = read_chunks(in);
  }
  for (std::size_t i = 0; i < kb.chunks_.size(); ++i) {
    if (!kb.by_id_.emplace(kb.chunks_[i].id, i).second) {
      throw FormatError("chunk store: duplicate id " + kb.chunks_[i].id.str());
    }
  }
  {
    auto in = open_in(root / "sparse.idx");
    kb.sparse_ = InvertedIndex::load(in, &kb.bm25_);
  }
  {
    auto in = open_in(root / "dense.idx");
    kb.dense_ = VectorIndex::load(in, kDenseMagic);
  }
  {
    auto in = open_in(root / "meta.idx");
    kb.metadata_ = VectorIndex::load(in, kMetadataMagic);
  }
  if (kb.sparse_.size() != kb.chunks_.size() || kb.dense_.size() != kb.chunks_.size()) {
    throw FormatError("index sizes disagree with the chunk store");
  }
  if (kb.dense_.size() > 0 && kb.dense_.dim() != kb.embedder_->dim()) {
    throw FormatError("dense index dimension disagrees with the embedder");
  }
  return kb;
}

}  // namespace finrag
