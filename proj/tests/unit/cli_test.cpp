#ifdef FINRAG_CLI_PATH

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"

namespace {

struct Output {
  int code = -1;
  std::string out;
};

Output run(const std::string& args) {
  const std::string cmd = std::string(FINRAG_CLI_PATH) + " " + args + " 2>/dev/null";
  Output o;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return o;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) o.out.append(buf.data(), n);
  const int status = pclose(p);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::string q(const std::string& s) { return "'" + s + "'"; }

}  // namespace

TEST(Cli, CostEstimate) {
  const auto r = run("cost-estimate --n 1 --t 0");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("tokens=5350\n"), std::string::npos);
  EXPECT_NE(r.out.find("usd_per_1k_queries=1.510"), std::string::npos);
  const auto j = run("cost-estimate --n 2 --t 1 --json");
  EXPECT_NE(j.out.find("\"tokens\": 10500"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("cost-estimate --bogus").code, 2);
  EXPECT_EQ(run("cost-estimate --n 0").code, 2);
  EXPECT_EQ(run("train-reranker --stage s3 --out x").code, 2);
  EXPECT_EQ(run("eval --qrels /nonexistent --run /nonexistent").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, EvalPrintsFourMetrics) {
  fixture::TempDir dir;
  write(dir.file("q.txt"), "q1 a 1\nq1 b 1\nq2 c 1\n");
  write(dir.file("a.run"), "q1 x 1 3.0 test\nq1 a 2 2.0 test\nq2 c 1 5.0 test\n");
  const auto r = run("eval --run " + q(dir.file("a.run")) + " --qrels " + q(dir.file("q.txt")) + " --k 5");
  ASSERT_EQ(r.code, 0);
  for (const char* m : {"ndcg@5=", "mrr@5=0.7500", "precision@5=0.2000", "recall@5=0.7500"})
    EXPECT_NE(r.out.find(m), std::string::npos) << m << "\n" << r.out;
}

TEST(Cli, TrainRerankerIsDeterministic) {
  fixture::TempDir dir;
  ASSERT_EQ(run("synth --out " + q(dir.file("data"))).code, 0);
  const std::string common =
      "--seed 7 train-reranker --stage both --strategy complete --epochs 5 --data " + q(dir.file("data"));
  ASSERT_EQ(run(common + " --out " + q(dir.file("a.model"))).code, 0);
  ASSERT_EQ(run(common + " --out " + q(dir.file("b.model"))).code, 0);
  const auto a = slurp(dir.file("a.model"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir.file("b.model")));
  ASSERT_EQ(run("--seed 8 train-reranker --stage control-s2-only --epochs 5 --data " + q(dir.file("data")) +
                " --out " + q(dir.file("c.model")))
                .code,
            0);
  EXPECT_NE(slurp(dir.file("c.model")), a);
}

TEST(Cli, BankWorkflowAndConfigOverride) {
  fixture::TempDir dir;
  ASSERT_EQ(run("synth --out " + q(dir.file("data"))).code, 0);
  ASSERT_EQ(run("index --chunks " + q(dir.file("data/chunks.jsonl")) + " --out " + q(dir.file("kb"))).code, 0);
  ASSERT_EQ(run("bank-init --kb " + q(dir.file("kb")) + " --questions " + q(dir.file("data/bank_questions.json")) +
                " --out " + q(dir.file("bank.json")))
                .code,
            0);
  const std::string ask = q("What was the revenue of Norvik Auto in 2024Q1?");
  const auto miss = run("bank-lookup --bank " + q(dir.file("bank.json")) + " " + ask);
  EXPECT_EQ(miss.code, 1);
  EXPECT_NE(miss.out.find("unverified"), std::string::npos);

  // The config names a bank that does not exist; the flag wins.
  write(dir.file("cfg.json"), R"({"bank": "missing.json", "kb": "kb"})");
  const std::string cfg = "--config " + q(dir.file("cfg.json")) + " ";
  EXPECT_EQ(run(cfg + "bank-verify --question 0 --period 2024Q1").code, 1);
  ASSERT_EQ(run(cfg + "bank-verify --bank " + q(dir.file("bank.json")) + " --question 0 --period 2024Q1 --value " +
                q("RMB 10.2 billion"))
                .code,
            0);
  const auto hit = run("bank-lookup --bank " + q(dir.file("bank.json")) + " " + ask);
  EXPECT_EQ(hit.code, 0);
  EXPECT_NE(hit.out.find("RMB 10.2 billion"), std::string::npos);

  const auto answer = run(cfg + "query --bank " + q(dir.file("bank.json")) + " " + ask);
  EXPECT_EQ(answer.code, 0);
  EXPECT_NE(answer.out.find("RMB 10.2 billion"), std::string::npos);
}

TEST(Cli, IngestAndIndexFromCorpus) {
  fixture::TempDir dir;
  write(dir.file("corpus.jsonl"),
        R"({"doc_id":"D","title":"t","filing_type":"10-Q","period":"2024Q1","sections":[{"path":"A","modality":"text","text":"alpha beta gamma delta"}]})"
        "\n");
  const auto ing = run("ingest --corpus " + q(dir.file("corpus.jsonl")) + " --out " + q(dir.file("raw.jsonl")));
  EXPECT_EQ(ing.code, 0);
  EXPECT_NE(ing.out.find("chunks=1"), std::string::npos);
  const auto idx = run("index --corpus " + q(dir.file("corpus.jsonl")) + " --out " + q(dir.file("kb")));
  EXPECT_EQ(idx.code, 0);
  EXPECT_NE(idx.out.find("chunks=1"), std::string::npos);
}

#endif
