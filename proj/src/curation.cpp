#include "finrag/curation.hpp"

#include <map>
#include <mutex>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"
#include "finrag/parallel.hpp"
#include "finrag/prompts.hpp"
#include "finrag/text.hpp"

namespace finrag {

void CurationConfig::validate() const {
  if (!(tau_sim > 0.0 && tau_sim <= 1.0)) throw InvalidArgument("tau_sim must be in (0, 1]");
  if (chunk_length < 1) throw InvalidArgument("chunk_length must be >= 1");
}

namespace {

ChatRequest make_request(std::string_view task, const std::string& model, std::string_view system,
                         std::string payload) {
  ChatRequest req;
  req.task = std::string(task);
  req.model = model;
  req.messages.push_back({"system", std::string(system)});
  req.messages.push_back({"user", std::move(payload)});
  return req;
}

}  // namespace

std::vector<Chunk> transform_nontext(const Chunk& chunk, LlmGateway& gateway,
                                     const CurationConfig& cfg) {
  if (chunk.modality == Modality::Text) {
    throw InvalidArgument("transform_nontext: " + chunk.id.str() + " is already text");
  }
  const auto system = chunk.modality == Modality::Table ? prompts::table_to_text() : prompts::figure_to_text();
  std::string narrative;
  try {
    const auto resp = gateway.complete(make_request(task::kTransform, cfg.models.transform, system, chunk.text));
    narrative = normalize_whitespace(resp.text.value_or(""));
  } catch (const std::exception& e) {
    throw ChunkError(chunk.id, std::string("transformation failed: ") + e.what());
  }
  if (narrative.empty()) throw ChunkError(chunk.id, "transformation returned no text");

  std::vector<Chunk> out;
  for (auto& piece : split_fixed_length(narrative, cfg.chunk_length)) {
    Chunk c;
    c.id = chunk.id;
    c.modality = Modality::Text;
    c.section_path = chunk.section_path;
    c.word_count = word_count(piece);
    c.text = std::move(piece);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Chunk> deduplicate(std::span<const Chunk> chunks, double tau_sim) {
  std::vector<Chunk> kept;
  for (const auto& c : chunks) {
    if (!c.embedding) throw InvalidArgument("deduplicate: chunk " + c.id.str() + " has no embedding");
    bool duplicate = false;
    for (const auto& r : kept) {
      if (cosine(*r.embedding, *c.embedding) > tau_sim) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) kept.push_back(c);
  }
  return kept;
}

Chunk resolve_coreferences(const Chunk& chunk, const std::string& section_context,
                           LlmGateway& gateway, const ModelSlots& models) {
  if (chunk.modality != Modality::Text) {
    throw InvalidArgument("resolve_coreferences: " + chunk.id.str() + " is not text");
  }
  ChatRequest req;
  req.task = std::string(task::kCoreference);
  req.model = models.coreference;
  req.messages.push_back({"system", std::string(prompts::coreference())});
  if (!section_context.empty()) req.messages.push_back({"user", "Section context:\n" + section_context});
  req.messages.push_back({"user", chunk.text});

  Chunk out = chunk;
  try {
    const auto resp = gateway.complete(req);
    auto text = normalize_whitespace(resp.text.value_or(""));
    if (text.empty()) throw GatewayError("empty rewrite");
    out.text = std::move(text);
    out.word_count = word_count(out.text);
    out.unresolved = false;
  } catch (const std::exception& e) {
    spdlog::warn("co-reference resolution failed for {}: {}", chunk.id.str(), e.what());
    out = chunk;
    out.unresolved = true;
  }
  return out;
}

std::string generate_section_summary(std::span<const Chunk> section_chunks, LlmGateway& gateway,
                                     const ModelSlots& models) {
  if (section_chunks.empty()) throw InvalidArgument("generate_section_summary: empty section");
  std::string joined;
  for (const auto& c : section_chunks) {
    if (c.section_path != section_chunks.front().section_path) {
      throw InvalidArgument("generate_section_summary: mixed section paths");
    }
    if (!joined.empty()) joined.push_back(' ');
    joined += c.text;
  }
  const auto resp = gateway.complete(make_request(task::kSummary, models.summary, prompts::section_summary(), joined));
  return normalize_whitespace(resp.text.value_or(""));
}

namespace {

struct DocWork {
  std::vector<Chunk> chunks;
  std::size_t transformed = 0;
  std::size_t skipped = 0;
  std::size_t unresolved = 0;
  std::vector<std::string> warnings;
};

// Consecutive runs of chunks that share doc and section.
template <typename Fn>
void for_each_section(std::vector<Chunk>& chunks, Fn&& fn) {
  std::size_t i = 0;
  while (i < chunks.size()) {
    std::size_t j = i + 1;
    while (j < chunks.size() && chunks[j].id.doc_id == chunks[i].id.doc_id &&
           chunks[j].section_path == chunks[i].section_path) {
      ++j;
    }
    fn(std::span<Chunk>(chunks.data() + i, j - i));
    i = j;
  }
}

DocWork curate_document(std::span<const Chunk> raw, const CurationConfig& cfg, LlmGateway& gateway,
                        const Embedder& embedder) {
  DocWork w;
  for (const auto& c : raw) {
    if (c.modality == Modality::Text) {
      w.chunks.push_back(c);
      continue;
    }
    try {
      auto pieces = transform_nontext(c, gateway, cfg);
      ++w.transformed;
      for (auto& p : pieces) w.chunks.push_back(std::move(p));
    } catch (const ChunkError& e) {
      ++w.skipped;
      w.warnings.push_back(e.what());
      spdlog::warn("skipping chunk {}", e.what());
    }
  }
  std::uint32_t pos = 0;
  for (auto& c : w.chunks) c.id.position = pos++;

  const std::vector<Chunk> before = w.chunks;
  for (std::size_t i = 0; i < w.chunks.size(); ++i) {
    std::string context;
    if (i > 0 && before[i - 1].section_path == before[i].section_path) context = before[i - 1].text;
    w.chunks[i] = resolve_coreferences(before[i], context, gateway, cfg.models);
    if (w.chunks[i].unresolved) {
      ++w.unresolved;
      w.warnings.push_back(before[i].id.str() + ": co-reference resolution failed");
    }
    w.chunks[i].embedding = embedder.embed(w.chunks[i].text);
  }
  return w;
}

}  // namespace

std::vector<Chunk> curate_chunks(std::vector<Chunk> raw, const CurationConfig& cfg, LlmGateway& gateway,
                                 const Embedder& embedder, CurationReport* report) {
  cfg.validate();
  // Group by document, keeping first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<Chunk>> by_doc;
  for (auto& c : raw) {
    auto [it, inserted] = by_doc.try_emplace(c.id.doc_id);
    if (inserted) order.push_back(c.id.doc_id);
    it->second.push_back(std::move(c));
  }

  std::vector<DocWork> work(order.size());
  parallel_for(order.size(), cfg.jobs, [&](std::size_t i) {
    work[i] = curate_document(by_doc.at(order[i]), cfg, gateway, embedder);
  });

  std::vector<Chunk> merged;
  CurationReport rep;
  rep.documents = order.size();
  for (const auto& [doc, chunks] : by_doc) rep.raw_chunks += chunks.size();
  for (auto& w : work) {
    rep.transformed += w.transformed;
    rep.skipped += w.skipped;
    rep.unresolved += w.unresolved;
    for (auto& m : w.warnings) rep.warnings.push_back(std::move(m));
    for (auto& c : w.chunks) merged.push_back(std::move(c));
  }

  auto kept = deduplicate(merged, cfg.tau_sim);
  rep.duplicates_removed = merged.size() - kept.size();

  std::vector<std::span<Chunk>> sections;
  for_each_section(kept, [&](std::span<Chunk> s) { sections.push_back(s); });
  std::vector<std::string> summaries(sections.size());
  parallel_for(sections.size(), cfg.jobs, [&](std::size_t i) {
    try {
      summaries[i] = generate_section_summary(sections[i], gateway, cfg.models);
    } catch (const std::exception& e) {
      spdlog::warn("section summary failed for {}: {}", sections[i].front().id.str(), e.what());
    }
  });
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (summaries[i].empty()) {
      rep.warnings.push_back(sections[i].front().id.str() + ": no section summary");
      continue;
    }
    for (auto& c : sections[i]) c.summary = summaries[i];
  }
  rep.final_chunks = kept.size();
  if (report) *report = std::move(rep);
  return kept;
}

KnowledgeBase build_knowledge_base(std::span<const DocumentRecord> docs, const CurationConfig& cfg,
                                   LlmGateway& gateway, std::shared_ptr<const Embedder> embedder,
                                   CurationReport* report) {
  cfg.validate();
  if (!embedder) embedder = default_embedder();
  std::vector<Chunk> raw;
  for (const auto& d : docs) {
    for (auto& c : chunk_document(d, cfg.chunk_length)) raw.push_back(std::move(c));
  }
  auto curated = curate_chunks(std::move(raw), cfg, gateway, *embedder, report);
  return KnowledgeBase::from_chunks(std::move(curated), embedder);
}

}  // namespace finrag
