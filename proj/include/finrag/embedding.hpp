#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace finrag {

/// Dense text representation. Vectors produced by an Embedder are unit-norm.
struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  double norm() const;
  bool operator==(const EmbeddingVector&) const = default;
};

struct EmbedderConfig {
  std::size_t dim = 256;
  std::size_t ngram_min = 3;
  std::size_t ngram_max = 5;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument unless 1 <= ngram_min <= ngram_max and dim >= 8.
  void validate() const;
  bool operator==(const EmbedderConfig&) const = default;
};

/// Salted 64-bit hash of one character n-gram.
std::uint64_t ngram_hash(std::string_view gram, std::uint64_t seed);

/// Hashes lowercase character n-grams (ngram_min..ngram_max) of the
/// whitespace-normalized text into cfg.dim buckets weighted by term
/// frequency, then L2-normalizes. Throws InvalidArgument("empty input") for
/// blank text.
EmbeddingVector embed(std::string_view text, const EmbedderConfig& cfg);

/// dot(u, v) / (|u| |v|), clamped to [-1, 1]. Throws on dimension mismatch
/// or a zero vector ("degenerate vector").
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

/// Text-to-unit-vector provider. Implementations must be safe to call
/// concurrently.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed(std::string_view text) const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;
};

class HashedNgramEmbedder final : public Embedder {
 public:
  explicit HashedNgramEmbedder(EmbedderConfig cfg = {});

  EmbeddingVector embed(std::string_view text) const override;
  std::size_t dim() const override { return cfg_.dim; }
  std::string name() const override { return "hashed-ngram"; }
  const EmbedderConfig& config() const { return cfg_; }

 private:
  EmbedderConfig cfg_;
};

std::shared_ptr<const Embedder> default_embedder(const EmbedderConfig& cfg = {});

}  // namespace finrag
