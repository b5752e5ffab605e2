#include "finrag/embedding.hpp"

#include <algorithm>
#include <cmath>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

double EmbeddingVector::norm() const {
  double sum = 0.0;
  for (double v : values) sum += v * v;
  return std::sqrt(sum);
}

void EmbedderConfig::validate() const {
  if (ngram_min < 1 || ngram_min > ngram_max) {
    throw InvalidArgument("embedder config: require 1 <= ngram_min <= ngram_max");
  }
  if (dim < 8) throw InvalidArgument("embedder config: dim must be >= 8");
}

std::uint64_t ngram_hash(std::string_view gram, std::uint64_t seed) {
  // FNV-1a, then salted through splitmix so distinct seeds decorrelate.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : gram) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h ^ splitmix64(seed));
}

EmbeddingVector embed(std::string_view text, const EmbedderConfig& cfg) {
  cfg.validate();
  const std::string normalized = to_lower(normalize_whitespace(text));
  if (normalized.empty()) throw InvalidArgument("empty input");

  EmbeddingVector out;
  out.values.assign(cfg.dim, 0.0);
  bool any = false;
  for (std::size_t n = cfg.ngram_min; n <= cfg.ngram_max; ++n) {
    if (normalized.size() < n) break;
    for (std::size_t i = 0; i + n <= normalized.size(); ++i) {
      const auto bucket = ngram_hash(std::string_view(normalized).substr(i, n), cfg.seed) % cfg.dim;
      out.values[bucket] += 1.0;
      any = true;
    }
  }
  if (!any) {
    // Shorter than ngram_min: fall back to the whole string as one gram.
    out.values[ngram_hash(normalized, cfg.seed) % cfg.dim] = 1.0;
  }
  const double n = out.norm();
  for (double& v : out.values) v /= n;
  return out;
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dim() != v.dim()) throw InvalidArgument("cosine: dimension mismatch");
  double dot = 0.0;
  double nu = 0.0;
  double nv = 0.0;
  for (std::size_t i = 0; i < u.dim(); ++i) {
    dot += u.values[i] * v.values[i];
    nu += u.values[i] * u.values[i];
    nv += v.values[i] * v.values[i];
  }
  if (nu == 0.0 || nv == 0.0) throw InvalidArgument("degenerate vector");
  if (!std::isfinite(dot) || !std::isfinite(nu) || !std::isfinite(nv)) {
    throw InvalidArgument("cosine: non-finite component");
  }
  const double c = dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(c, -1.0, 1.0);
}

HashedNgramEmbedder::HashedNgramEmbedder(EmbedderConfig cfg) : cfg_(cfg) { cfg_.validate(); }

EmbeddingVector HashedNgramEmbedder::embed(std::string_view text) const {
  return finrag::embed(text, cfg_);
}

std::shared_ptr<const Embedder> default_embedder(const EmbedderConfig& cfg) {
  return std::make_shared<HashedNgramEmbedder>(cfg);
}

}  // namespace finrag
