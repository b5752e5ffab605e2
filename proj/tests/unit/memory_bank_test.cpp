#include <cmath>

#include <gtest/gtest.h>

#include "finrag/error.hpp"
#include "finrag/memory_bank.hpp"
#include "finrag/random.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace finrag;

namespace {

MemoryBank sample_bank() {
  MemoryBank b(fixture::embedder());
  b.set_stop_entities({"Norvik Auto"});
  b.add_period("2024Q1");
  b.add_period("2024Q2");
  for (auto q : {"What was the total revenue of Norvik Auto?", "What was the net income of Norvik Auto?",
                 "How many vehicles did Norvik Auto deliver?", "What was the gross margin of Norvik Auto?"}) {
    b.add_question(q);
  }
  return b;
}

// Ratcliff-Obershelp by direct recursion.
std::size_t ro_matches(const std::string& a, const std::string& b) {
  if (a.empty() || b.empty()) return 0;
  std::size_t best = 0, ia = 0, ib = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      std::size_t k = 0;
      while (i + k < a.size() && j + k < b.size() && a[i + k] == b[j + k]) ++k;
      if (k > best) best = k, ia = i, ib = j;
    }
  if (best == 0) return 0;
  return best + ro_matches(a.substr(0, ia), b.substr(0, ib)) + ro_matches(a.substr(ia + best), b.substr(ib + best));
}

double ro_ratio(const std::string& a, const std::string& b) {
  return std::max(2.0 * ro_matches(a, b), 2.0 * ro_matches(b, a)) / static_cast<double>(a.size() + b.size());
}

}  // namespace

TEST(SubseqSimilarity, KnownValues) {
  EXPECT_EQ(subseq_similarity("abcd", "abed"), 0.75);
  EXPECT_EQ(subseq_similarity("net income", "net income"), 1.0);
  EXPECT_EQ(subseq_similarity("abc", "xyz"), 0.0);
  EXPECT_THROW(subseq_similarity("", "x"), InvalidArgument);
}

TEST(SubseqSimilarity, OracleSymmetryIdentity) {
  Rng rng(6);
  for (int t = 0; t < 400; ++t) {
    std::string a, b;
    const auto la = 1 + uniform_index(rng, 14), lb = 1 + uniform_index(rng, 14);
    for (std::size_t i = 0; i < la; ++i) a += static_cast<char>('a' + uniform_index(rng, 4));
    for (std::size_t i = 0; i < lb; ++i) b += static_cast<char>('a' + uniform_index(rng, 4));
    const double s = subseq_similarity(a, b);
    EXPECT_EQ(s, subseq_similarity(b, a));
    EXPECT_NEAR(s, ro_ratio(a, b), 1e-15) << a << " " << b;
    EXPECT_EQ(s == 1.0, a == b);
  }
}

TEST(Bm25Match, SelfNormalizedAndOracle) {
  const auto b = sample_bank();
  const auto self = bm25_match("What was the net income of Norvik Auto?", b);
  EXPECT_NEAR(self[1], 1.0, 1e-12);
  const auto none = bm25_match("weather forecast tomorrow", b);
  for (double x : none) EXPECT_EQ(x, 0.0);

  std::vector<oracle::Doc> docs;
  for (std::size_t i = 0; i < b.size(); ++i) docs.push_back({{"q", static_cast<std::uint32_t>(i)}, b.questions()[i].text});
  const std::string q = "what was total income";
  const auto got = bm25_match(q, b);
  const auto raw = oracle::bm25_rank(docs, b.normalize(q), docs.size());
  const auto self_raw = [&](std::size_t i) {
    for (const auto& s : oracle::bm25_rank(docs, docs[i].text, docs.size()))
      if (s.id == docs[i].id) return s.score;
    return 0.0;
  };
  for (const auto& s : raw) {
    const double want = std::clamp(s.score / self_raw(s.id.position), 0.0, 1.0);
    EXPECT_NEAR(got[s.id.position], want, 1e-12);
  }
}

TEST(SemanticMatch, IdentityUnrelatedSymmetric) {
  const auto b = sample_bank();
  EXPECT_NEAR(semantic_match("What was the gross margin of Norvik Auto?", b)[3], 1.0, 1e-12);
  for (double x : semantic_match("zebra xylophone quartz", b)) EXPECT_LT(x, MatchThresholds{}.tau_sem);
  const auto e = fixture::embedder();
  EXPECT_EQ(cosine(e->embed("alpha beta"), e->embed("beta gamma")), cosine(e->embed("beta gamma"), e->embed("alpha beta")));
}

TEST(Match, ExactFiresAllThree) {
  const auto b = sample_bank();
  const auto m = match("What was the net income of Norvik Auto?", b);
  ASSERT_TRUE(m);
  EXPECT_EQ(m->question, 1u);
  EXPECT_NEAR(m->scores.seq, 1.0, 1e-12);
  EXPECT_NEAR(m->scores.bm25, 1.0, 1e-12);
  EXPECT_NEAR(m->scores.sem, 1.0, 1e-12);
  const MatchThresholds th;
  EXPECT_GT(m->scores.seq, th.tau_seq);
  EXPECT_GT(m->scores.bm25, th.tau_bm25);
  EXPECT_GT(m->scores.sem, th.tau_sem);
}

TEST(Match, SingleDisjunctParaphrases) {
  const auto b = sample_bank();
  const MatchThresholds th;
  const auto only_seq = match_scores("what was the totl revenu", b)[0];
  EXPECT_GT(only_seq.seq, th.tau_seq);
  EXPECT_LE(only_seq.bm25, th.tau_bm25);
  EXPECT_LE(only_seq.sem, th.tau_sem);
  ASSERT_TRUE(match("what was the totl revenu", b));
  EXPECT_EQ(match("what was the totl revenu", b)->question, 0u);

  const auto only_bm25 = match_scores("Tell me the revenue total", b)[0];
  EXPECT_LE(only_bm25.seq, th.tau_seq);
  EXPECT_GT(only_bm25.bm25, th.tau_bm25);
  EXPECT_LE(only_bm25.sem, th.tau_sem);
  ASSERT_TRUE(match("Tell me the revenue total", b));
  EXPECT_EQ(match("Tell me the revenue total", b)->question, 0u);
}

TEST(Match, UnrelatedNoneAndEmptyBank) {
  const auto b = sample_bank();
  EXPECT_FALSE(match("Who chairs the audit committee?", b));
  EXPECT_FALSE(match("anything", MemoryBank(fixture::embedder())));
}

TEST(Match, ThresholdGridMonotone) {
  const auto b = sample_bank();
  const std::vector<std::string> queries{"What was the total revenue of Norvik Auto?", "what was the totl revenu",
                                         "Tell me the revenue total", "whats the total revenue",
                                         "What were total revenues?", "revenue", "net income in 2024Q1",
                                         "vehicles delivered", "Who chairs the audit committee?"};
  const double grid[5] = {0.2, 0.4, 0.6, 0.8, 1.0};
  for (const auto& q : queries) {
    const auto scores = match_scores(q, b);
    bool matched[5][5][5];
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j)
        for (int k = 0; k < 5; ++k) {
          const MatchThresholds th{grid[i], grid[j], grid[k]};
          const auto m = match(q, b, th);
          bool any = false;
          for (const auto& s : scores) any = any || s.seq > th.tau_seq || s.bm25 > th.tau_bm25 || s.sem > th.tau_sem;
          EXPECT_EQ(m.has_value(), any);
          matched[i][j][k] = m.has_value();
        }
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j)
        for (int k = 0; k < 5; ++k) {
          if (!matched[i][j][k]) continue;
          for (int a = 0; a <= i; ++a)
            for (int c = 0; c <= j; ++c)
              for (int d = 0; d <= k; ++d) EXPECT_TRUE(matched[a][c][d]) << q;
        }
  }
}

TEST(Match, Deterministic) {
  const auto b = sample_bank();
  for (int i = 0; i < 5; ++i) {
    const auto m = match("whats the total revenue", b);
    ASSERT_TRUE(m);
    EXPECT_EQ(m->question, 0u);
  }
  EXPECT_THROW((MatchThresholds{0.0, 0.5, 0.5}.validate()), InvalidArgument);
  EXPECT_THROW((MatchThresholds{0.5, 1.5, 0.5}.validate()), InvalidArgument);
}

TEST(Lookup, VerifiedCellsOnly) {
  auto b = sample_bank();
  b.set_cell(0, 0, {"RMB 10.1 billion", {"NVK-2024Q1#3"}, false});
  b.set_cell(0, 1, {"RMB 12.4 billion", {"NVK-2024Q2#3"}, false});
  EXPECT_EQ(lookup("What was the total revenue of Norvik Auto?", std::nullopt, b).miss_reason, "unverified");
  b.verify(0, 1);
  const auto latest = lookup("What was the total revenue of Norvik Auto?", std::nullopt, b);
  ASSERT_TRUE(latest.hit());
  EXPECT_EQ(latest.answer->period, "2024Q2");
  EXPECT_EQ(latest.answer->value, "RMB 12.4 billion");
  EXPECT_EQ(latest.answer->sources, (std::vector<std::string>{"NVK-2024Q2#3"}));
  EXPECT_EQ(lookup("What was the total revenue of Norvik Auto in 2024Q1?", std::nullopt, b).miss_reason, "unverified");
  EXPECT_EQ(lookup("total revenue", std::string("2024Q1"), b).miss_reason, "unverified");
  b.verify(0, 0, "RMB 10.2 billion");
  EXPECT_EQ(lookup("What was the total revenue of Norvik Auto in 2024Q1?", std::nullopt, b).answer->value,
            "RMB 10.2 billion");
  EXPECT_EQ(lookup("total revenue", std::string("2019Q1"), b).miss_reason, "unknown period");
  EXPECT_EQ(lookup("Who chairs the audit committee?", std::nullopt, b).miss_reason, "no match");
  EXPECT_EQ(lookup("x", std::nullopt, MemoryBank(fixture::embedder())).miss_reason, "empty bank");
  EXPECT_EQ(lookup("What was the net income of Norvik Auto?", std::nullopt, b).miss_reason, "unverified");
}

TEST(Verify, FlipsExactlyNamedCell) {
  auto b = sample_bank();
  for (std::size_t q = 0; q < b.size(); ++q)
    for (std::size_t p = 0; p < 2; ++p) b.set_cell(q, p, {"v", {}, false});
  b.verify(2, 1);
  for (const auto& [key, cell] : b.cells()) EXPECT_EQ(cell.verified, key.first == 2 && key.second == 1);
  MemoryBank empty(fixture::embedder());
  empty.add_question("a question");
  empty.add_period("2024Q1");
  EXPECT_THROW(empty.verify(0, 0), NotFound);
  EXPECT_NO_THROW(empty.verify(0, 0, "value"));
  EXPECT_TRUE(empty.cell(0, 0)->verified);
  EXPECT_THROW(empty.verify(5, 0, "v"), NotFound);
}

TEST(MemoryBankState, NormalizationAndErrors) {
  auto b = sample_bank();
  EXPECT_EQ(b.normalize("What was Norvik Auto's revenue in 2024Q2?"), "what was s revenue in");
  EXPECT_EQ(b.detect_period("revenue for 2024q1 and 2024Q2"), 1u);
  EXPECT_FALSE(b.detect_period("revenue"));
  EXPECT_THROW(b.add_question("what was the net income of norvik auto"), InvalidArgument);
  EXPECT_THROW(b.add_question("Norvik Auto"), InvalidArgument);
  EXPECT_THROW(b.add_period("2024Q1"), InvalidArgument);
  EXPECT_EQ(b.find_period("2024q2"), 1u);
  EXPECT_EQ(b.find_question("What was the NET income of Norvik Auto?"), 1u);
}

TEST(MemoryBankState, JsonRoundTrip) {
  auto b = sample_bank();
  b.set_cell(1, 0, {"RMB 1.0 billion", {"NVK-2024Q1#5"}, true});
  fixture::TempDir dir;
  b.save(dir.file("bank.json"));
  const auto back = MemoryBank::load(dir.file("bank.json"), fixture::embedder());
  EXPECT_EQ(back.to_json(), b.to_json());
  EXPECT_EQ(back.stop_entities(), b.stop_entities());
  EXPECT_EQ(back.questions()[2].embedding, b.questions()[2].embedding);
  EXPECT_EQ(match("whats the total revenue", back)->question, 0u);
  EXPECT_THROW(MemoryBank::from_json(nlohmann::json{{"format_version", 99}}), FormatError);
}
