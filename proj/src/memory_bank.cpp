#include "finrag/memory_bank.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

using nlohmann::json;

namespace {

constexpr int kBankFormatVersion = 1;

ChunkId question_key(std::size_t i) { return ChunkId{"q", static_cast<std::uint32_t>(i)}; }

// Index of the first occurrence of `phrase` in `words` at or after `from`.
std::optional<std::size_t> find_phrase(const std::vector<std::string>& words,
                                       const std::vector<std::string>& phrase, std::size_t from = 0) {
  if (phrase.empty() || phrase.size() > words.size()) return std::nullopt;
  for (std::size_t i = from; i + phrase.size() <= words.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) return i;
  }
  return std::nullopt;
}

void erase_phrase(std::vector<std::string>& words, const std::vector<std::string>& phrase) {
  while (const auto at = find_phrase(words, phrase)) {
    words.erase(words.begin() + static_cast<std::ptrdiff_t>(*at),
                words.begin() + static_cast<std::ptrdiff_t>(*at + phrase.size()));
  }
}

struct Block {
  std::size_t a, b, size;
};

// Longest common block in a[alo,ahi) x b[blo,bhi); earliest in a, then b.
Block longest_match(std::string_view a, std::string_view b, std::size_t alo, std::size_t ahi, std::size_t blo,
                    std::size_t bhi) {
  Block best{alo, blo, 0};
  std::vector<std::size_t> prev(bhi - blo + 1, 0);
  std::vector<std::size_t> cur(bhi - blo + 1, 0);
  for (std::size_t i = alo; i < ahi; ++i) {
    for (std::size_t j = blo; j < bhi; ++j) {
      const std::size_t k = j - blo + 1;
      cur[k] = a[i] == b[j] ? prev[k - 1] + 1 : 0;
      if (cur[k] > best.size) best = {i + 1 - cur[k], j + 1 - cur[k], cur[k]};
    }
    std::swap(prev, cur);
  }
  return best;
}

std::size_t matched_chars(std::string_view a, std::string_view b) {
  std::size_t total = 0;
  std::vector<std::array<std::size_t, 4>> stack{{0, a.size(), 0, b.size()}};
  while (!stack.empty()) {
    const auto [alo, ahi, blo, bhi] = stack.back();
    stack.pop_back();
    if (alo >= ahi || blo >= bhi) continue;
    const auto m = longest_match(a, b, alo, ahi, blo, bhi);
    if (m.size == 0) continue;
    total += m.size;
    stack.push_back({alo, m.a, blo, m.b});
    stack.push_back({m.a + m.size, ahi, m.b + m.size, bhi});
  }
  return total;
}

}  // namespace

void MatchThresholds::validate() const {
  for (double t : {tau_seq, tau_bm25, tau_sem}) {
    if (!(t > 0.0 && t <= 1.0)) throw InvalidArgument("match thresholds must lie in (0, 1]");
  }
}

MemoryBank::MemoryBank(std::shared_ptr<const Embedder> embedder)
    : embedder_(embedder ? std::move(embedder) : default_embedder()) {}

std::string MemoryBank::normalize(std::string_view q) const {
  auto words = split_words(strip_punctuation(q));
  for (const auto& e : stop_entities_) erase_phrase(words, split_words(strip_punctuation(e)));
  for (const auto& p : periods_) erase_phrase(words, split_words(strip_punctuation(p)));
  return join_words(words, 0, words.size());
}

std::optional<std::size_t> MemoryBank::detect_period(std::string_view q) const {
  const auto words = split_words(strip_punctuation(q));
  for (std::size_t i = periods_.size(); i-- > 0;) {
    if (find_phrase(words, split_words(strip_punctuation(periods_[i])))) return i;
  }
  return std::nullopt;
}

std::size_t MemoryBank::add_question(std::string_view text, std::string subject) {
  auto norm = normalize(text);
  if (norm.empty()) throw InvalidArgument("canonical question is empty after normalization");
  if (find_question(norm)) throw InvalidArgument("duplicate canonical question: " + norm);
  auto emb = embedder_->embed(norm);
  questions_.push_back({std::move(norm), std::move(emb), std::move(subject)});
  reindex();
  return questions_.size() - 1;
}

std::size_t MemoryBank::add_period(std::string_view label) {
  const auto norm = normalize_whitespace(label);
  if (norm.empty()) throw InvalidArgument("empty period label");
  if (find_period(norm)) throw InvalidArgument("duplicate period: " + norm);
  periods_.push_back(norm);
  return periods_.size() - 1;
}

void MemoryBank::set_cell(std::size_t question, std::size_t period, Cell cell) {
  if (question >= questions_.size() || period >= periods_.size()) throw InvalidArgument("cell index out of range");
  cells_[{question, period}] = std::move(cell);
}

const Cell* MemoryBank::cell(std::size_t question, std::size_t period) const {
  const auto it = cells_.find({question, period});
  return it == cells_.end() ? nullptr : &it->second;
}

void MemoryBank::verify(std::size_t question, std::size_t period, std::optional<std::string> value) {
  const auto it = cells_.find({question, period});
  if (it == cells_.end()) {
    if (!value || question >= questions_.size() || period >= periods_.size()) {
      throw NotFound("no cell for question " + std::to_string(question) + ", period " + std::to_string(period));
    }
    cells_[{question, period}] = Cell{*value, {}, true};
    return;
  }
  if (value) it->second.value = *value;
  it->second.verified = true;
}

std::optional<std::size_t> MemoryBank::find_question(std::string_view text) const {
  const auto norm = normalize(text);
  for (std::size_t i = 0; i < questions_.size(); ++i) {
    if (questions_[i].text == norm) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> MemoryBank::find_period(std::string_view label) const {
  const auto norm = to_lower(normalize_whitespace(label));
  for (std::size_t i = 0; i < periods_.size(); ++i) {
    if (to_lower(periods_[i]) == norm) return i;
  }
  return std::nullopt;
}

void MemoryBank::reindex() {
  index_ = InvertedIndex{};
  for (std::size_t i = 0; i < questions_.size(); ++i) index_.add(question_key(i), questions_[i].text);
  self_scores_.assign(questions_.size(), 0.0);
  const Bm25Params params;
  for (std::size_t i = 0; i < questions_.size(); ++i) {
    const auto terms = tokenize_terms(questions_[i].text);
    self_scores_[i] = bm25_score(terms, question_key(i), index_, params);
  }
}

json MemoryBank::to_json() const {
  json qs = json::array();
  for (const auto& q : questions_) qs.push_back({{"text", q.text}, {"subject", q.subject}});
  json cells = json::array();
  for (const auto& [key, c] : cells_) {
    cells.push_back({{"question", key.first},
                     {"period", periods_[key.second]},
                     {"value", c.value},
                     {"sources", c.source_chunk_ids},
                     {"verified", c.verified}});
  }
  return {{"format_version", kBankFormatVersion},
          {"periods", periods_},
          {"stop_entities", stop_entities_},
          {"questions", qs},
          {"cells", cells}};
}

MemoryBank MemoryBank::from_json(const json& j, std::shared_ptr<const Embedder> embedder) {
  MemoryBank bank(std::move(embedder));
  try {
    if (j.value("format_version", kBankFormatVersion) != kBankFormatVersion) {
      throw FormatError("unsupported memory bank version");
    }
    bank.set_stop_entities(j.value("stop_entities", std::vector<std::string>{}));
    for (const auto& p : j.value("periods", std::vector<std::string>{})) bank.add_period(p);
    for (const auto& q : j.value("questions", json::array())) {
      if (q.is_string()) {
        bank.add_question(q.get<std::string>());
      } else {
        bank.add_question(q.at("text").get<std::string>(), q.value("subject", ""));
      }
    }
    for (const auto& c : j.value("cells", json::array())) {
      const auto qi = c.at("question").get<std::size_t>();
      const auto& pj = c.at("period");
      std::size_t pi = 0;
      if (pj.is_number_unsigned() || pj.is_number_integer()) {
        pi = pj.get<std::size_t>();
      } else {
        const auto found = bank.find_period(pj.get<std::string>());
        if (!found) throw FormatError("cell refers to unknown period " + pj.get<std::string>());
        pi = *found;
      }
      if (qi >= bank.questions_.size() || pi >= bank.periods_.size()) throw FormatError("cell index out of range");
      bank.cells_[{qi, pi}] =
          Cell{c.value("value", ""), c.value("sources", std::vector<std::string>{}), c.value("verified", false)};
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("memory bank: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("memory bank: ") + e.what());
  }
  return bank;
}

void MemoryBank::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << to_json().dump(2) << '\n';
}

MemoryBank MemoryBank::load(const std::string& path, std::shared_ptr<const Embedder> embedder) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return from_json(j, std::move(embedder));
}

// ---------------------------------------------------------------------------

double subseq_similarity(std::string_view a, std::string_view b) {
  if (a.empty() || b.empty()) throw InvalidArgument("subseq_similarity: empty string");
  const double total = static_cast<double>(a.size() + b.size());
  const auto m = std::max(matched_chars(a, b), matched_chars(b, a));
  return 2.0 * static_cast<double>(m) / total;
}

std::vector<double> bm25_match(std::string_view q, const MemoryBank& bank) {
  std::vector<double> out(bank.size(), 0.0);
  const auto terms = tokenize_terms(bank.normalize(q));
  if (terms.empty()) return out;
  const Bm25Params params;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double self = bank.self_scores()[i];
    if (self <= 0.0) continue;
    const double s = bm25_score(terms, question_key(i), bank.question_index(), params);
    out[i] = std::clamp(s / self, 0.0, 1.0);
  }
  return out;
}

std::vector<double> semantic_match(std::string_view q, const MemoryBank& bank) {
  std::vector<double> out(bank.size(), 0.0);
  const auto norm = bank.normalize(q);
  if (norm.empty() || bank.empty()) return out;
  const auto v = bank.embedder().embed(norm);
  for (std::size_t i = 0; i < bank.size(); ++i) out[i] = cosine(v, bank.questions()[i].embedding);
  return out;
}

double MatchScores::best() const { return std::max({seq, bm25, sem}); }

bool fires(const MatchScores& s, const MatchThresholds& th) {
  return s.seq > th.tau_seq || s.bm25 > th.tau_bm25 || s.sem > th.tau_sem;
}

std::vector<MatchScores> match_scores(std::string_view q, const MemoryBank& bank) {
  std::vector<MatchScores> out(bank.size());
  const auto norm = bank.normalize(q);
  if (norm.empty()) return out;
  const auto bm = bm25_match(q, bank);
  const auto sem = semantic_match(q, bank);
  for (std::size_t i = 0; i < bank.size(); ++i) {
    out[i] = {subseq_similarity(norm, bank.questions()[i].text), bm[i], sem[i]};
  }
  return out;
}

std::optional<BankMatch> match(std::string_view q, const MemoryBank& bank, const MatchThresholds& th) {
  th.validate();
  if (bank.empty()) return std::nullopt;
  const auto scores = match_scores(q, bank);
  std::optional<BankMatch> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!fires(scores[i], th)) continue;
    if (!best || scores[i].best() > best->scores.best()) best = BankMatch{i, scores[i]};
  }
  return best;
}

json BankAnswer::to_json() const {
  return {{"question", question},
          {"period", period},
          {"value", value},
          {"sources", sources},
          {"scores", {{"seq", scores.seq}, {"bm25", scores.bm25}, {"sem", scores.sem}}}};
}

LookupResult lookup(std::string_view q, const std::optional<std::string>& period, const MemoryBank& bank,
                    const MatchThresholds& th) {
  LookupResult r;
  if (bank.empty() || bank.periods().empty()) {
    r.miss_reason = "empty bank";
    return r;
  }
  const auto m = match(q, bank, th);
  if (!m) {
    r.miss_reason = "no match";
    return r;
  }
  std::optional<std::size_t> pi;
  if (period) {
    pi = bank.find_period(*period);
    if (!pi) {
      r.miss_reason = "unknown period";
      return r;
    }
  } else {
    pi = bank.detect_period(q);
    if (!pi) pi = bank.periods().size() - 1;
  }
  const Cell* c = bank.cell(m->question, *pi);
  if (!c || !c->verified) {
    r.miss_reason = "unverified";
    return r;
  }
  r.answer = BankAnswer{bank.questions()[m->question].text, bank.periods()[*pi], c->value, c->source_chunk_ids,
                        m->scores};
  return r;
}

}  // namespace finrag
