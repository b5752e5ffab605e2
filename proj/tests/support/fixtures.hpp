#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "finrag/corpus.hpp"
#include "finrag/embedding.hpp"
#include "finrag/knowledge_base.hpp"
#include "finrag/text.hpp"

namespace fixture {

/// Directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("finrag-test-" + std::to_string(std::random_device{}()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline finrag::Chunk chunk(const std::string& doc, std::uint32_t pos, const std::string& text,
                           const std::string& section = "Body") {
  finrag::Chunk c;
  c.id = {doc, pos};
  c.text = text;
  c.section_path = section;
  c.word_count = finrag::split_words(text).size();
  return c;
}

inline std::shared_ptr<const finrag::Embedder> embedder() {
  static auto e = finrag::default_embedder();
  return e;
}

/// Embeds and indexes the chunks as given.
inline finrag::KnowledgeBase kb(std::vector<finrag::Chunk> chunks) {
  for (auto& c : chunks) c.embedding = embedder()->embed(c.text);
  return finrag::KnowledgeBase::from_chunks(std::move(chunks), embedder());
}

}  // namespace fixture
