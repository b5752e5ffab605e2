#include "finrag/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

namespace {

std::string fmt_double(double v, int precision = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::string fmt_fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.4f", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad " + what + ": '" + s + "'");
  }
}

struct PerQuery {
  double ndcg, rr, p, r;
};

PerQuery per_query(const std::vector<RunEntry>* ranking, const std::map<std::string, int>& judged, std::size_t k) {
  std::size_t total_rel = 0;
  for (const auto& [id, g] : judged) total_rel += g > 0 ? 1 : 0;
  double dcg = 0.0;
  double rr = 0.0;
  std::size_t hits = 0;
  if (ranking) {
    for (std::size_t i = 0; i < ranking->size() && i < k; ++i) {
      const auto it = judged.find((*ranking)[i].chunk_id);
      if (it == judged.end() || it->second <= 0) continue;
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
      if (rr == 0.0) rr = 1.0 / static_cast<double>(i + 1);
    }
  }
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, total_rel); ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return {idcg > 0 ? dcg / idcg : 0.0, rr, static_cast<double>(hits) / static_cast<double>(k),
          static_cast<double>(hits) / static_cast<double>(total_rel)};
}

template <typename F>
double mean_over(const RunResult& run, const Qrels& qrels, std::size_t k, F pick) {
  if (k == 0) throw InvalidArgument("k must be >= 1");
  const auto qs = evaluable_queries(qrels);
  if (qs.empty()) throw InvalidArgument("no evaluable queries");
  double sum = 0.0;
  for (const auto& q : qs) {
    const auto it = run.find(q);
    sum += pick(per_query(it == run.end() ? nullptr : &it->second, qrels.at(q), k));
  }
  return sum / static_cast<double>(qs.size());
}

}  // namespace

Qrels read_qrels(std::istream& in) {
  Qrels q;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto f = split_words(line);
    if (f.empty() || f[0][0] == '#') continue;
    if (f.size() != 3 && f.size() != 4) {
      throw FormatError("qrels line " + std::to_string(lineno) + ": expected 3 fields");
    }
    const auto& grade = f.back();
    if (grade != "0" && grade != "1") {
      throw FormatError("qrels line " + std::to_string(lineno) + ": grade must be 0 or 1");
    }
    q[f[0]][f[f.size() - 2]] = grade == "1" ? 1 : 0;
  }
  return q;
}

Qrels read_qrels_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_qrels(in);
}

void write_qrels(std::ostream& out, const Qrels& qrels) {
  for (const auto& [q, judged] : qrels) {
    for (const auto& [id, g] : judged) out << q << ' ' << id << ' ' << g << '\n';
  }
}

RunResult read_run(std::istream& in, std::string* label) {
  std::map<std::string, std::vector<std::pair<long, RunEntry>>> tmp;
  std::string line;
  std::size_t lineno = 0;
  bool labelled = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto f = split_words(line);
    if (f.empty() || f[0][0] == '#') continue;
    if (f.size() != 5) throw FormatError("run line " + std::to_string(lineno) + ": expected 5 fields");
    long rank = 0;
    try {
      rank = std::stol(f[2]);
    } catch (const std::exception&) {
      throw FormatError("run line " + std::to_string(lineno) + ": bad rank");
    }
    tmp[f[0]].push_back({rank, RunEntry{f[1], parse_double(f[3], "score")}});
    if (label && !labelled) {
      *label = f[4];
      labelled = true;
    }
  }
  RunResult run;
  for (auto& [q, entries] : tmp) {
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& list = run[q];
    for (auto& e : entries) list.push_back(std::move(e.second));
  }
  return run;
}

RunResult read_run_file(const std::string& path, std::string* label) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_run(in, label);
}

void write_run(std::ostream& out, const RunResult& run, const std::string& label) {
  for (const auto& [q, list] : run) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      out << q << ' ' << list[i].chunk_id << ' ' << (i + 1) << ' ' << fmt_double(list[i].score) << ' ' << label
          << '\n';
    }
  }
}

void write_run_file(const std::string& path, const RunResult& run, const std::string& label) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  write_run(out, run, label);
}

void validate_run(const RunResult& run) {
  for (const auto& [q, list] : run) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!seen.insert(list[i].chunk_id).second) {
        throw InvalidArgument("run: duplicate chunk " + list[i].chunk_id + " for query " + q);
      }
      if (i > 0 && list[i].score > list[i - 1].score) {
        throw InvalidArgument("run: scores not sorted for query " + q);
      }
    }
  }
}

std::vector<std::string> evaluable_queries(const Qrels& qrels) {
  std::vector<std::string> out;
  for (const auto& [q, judged] : qrels) {
    if (std::any_of(judged.begin(), judged.end(), [](const auto& p) { return p.second > 0; })) out.push_back(q);
  }
  return out;
}

double ndcg_at_k(const RunResult& run, const Qrels& qrels, std::size_t k) {
  return mean_over(run, qrels, k, [](const PerQuery& m) { return m.ndcg; });
}

double mrr_at_k(const RunResult& run, const Qrels& qrels, std::size_t k) {
  return mean_over(run, qrels, k, [](const PerQuery& m) { return m.rr; });
}

double precision_at_k(const RunResult& run, const Qrels& qrels, std::size_t k) {
  return mean_over(run, qrels, k, [](const PerQuery& m) { return m.p; });
}

double recall_at_k(const RunResult& run, const Qrels& qrels, std::size_t k) {
  return mean_over(run, qrels, k, [](const PerQuery& m) { return m.r; });
}

MetricSet evaluate(const RunResult& run, const Qrels& qrels, std::size_t k) {
  return {ndcg_at_k(run, qrels, k), mrr_at_k(run, qrels, k), precision_at_k(run, qrels, k),
          recall_at_k(run, qrels, k)};
}

double hit_rate(const RunResult& run, const std::map<std::string, std::vector<std::string>>& gold,
                const ChunkTextLookup& text_of, const Embedder& embedder, std::size_t k, double tau_hit,
                std::vector<std::string>* warnings) {
  if (k == 0) throw InvalidArgument("k must be >= 1");
  for (const auto& [q, list] : run) {
    if (!gold.contains(q)) {
      if (warnings) warnings->push_back("query " + q + " has no gold evidence; skipped");
    }
  }
  if (gold.empty()) throw InvalidArgument("no gold evidence");
  std::size_t hits = 0;
  for (const auto& [q, texts] : gold) {
    const auto it = run.find(q);
    if (it == run.end()) continue;
    std::vector<EmbeddingVector> gold_vecs;
    bool hit = false;
    for (std::size_t i = 0; i < it->second.size() && i < k && !hit; ++i) {
      const auto text = text_of(it->second[i].chunk_id);
      if (!text) {
        if (warnings) warnings->push_back("unknown chunk " + it->second[i].chunk_id);
        continue;
      }
      for (std::size_t g = 0; g < texts.size() && !hit; ++g) {
        double sim = 0.0;
        if (*text == texts[g]) {
          sim = 1.0;
        } else {
          if (gold_vecs.size() < texts.size()) {
            gold_vecs.clear();
            for (const auto& t : texts) gold_vecs.push_back(embedder.embed(t));
          }
          sim = cosine(embedder.embed(*text), gold_vecs[g]);
        }
        hit = sim >= tau_hit;
      }
    }
    hits += hit ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

// ---------------------------------------------------------------------------

const ReportRow& Report::row(const std::string& label, std::size_t k) const {
  for (const auto& r : rows) {
    if (r.label == label && r.k == k) return r;
  }
  throw NotFound("no report row for " + label + " @" + std::to_string(k));
}

MetricSet Report::delta(const std::string& label, std::size_t k) const {
  const auto& a = row(label, k).metrics;
  const auto& b = row(baseline, k).metrics;
  return {a.ndcg - b.ndcg, a.mrr - b.mrr, a.precision - b.precision, a.recall - b.recall};
}

std::string Report::to_text() const {
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.label.size() + 2);
  const auto pad = [&](const std::string& s) { return s + std::string(width > s.size() ? width - s.size() : 1, ' '); };
  std::ostringstream out;
  char buf[256];
  out << pad("run");
  std::snprintf(buf, sizeof buf, "%4s  %-8s %-8s %-8s %-8s %-9s %-9s %-9s %-9s\n", "k", "NDCG", "MRR", "P", "R",
                "FactCorr", "RespRel", "CtxRec", "CtxPrec");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%4zu  %-8.4f %-8.4f %-8.4f %-8.4f %-9s %-9s %-9s %-9s\n", r.k, r.metrics.ndcg,
                  r.metrics.mrr, r.metrics.precision, r.metrics.recall, "n/a", "n/a", "n/a", "n/a");
    out << pad(r.label) << buf;
  }
  if (!baseline.empty()) {
    out << "\ndelta vs " << baseline << '\n';
    for (const auto& r : rows) {
      if (r.label == baseline) continue;
      const auto d = delta(r.label, r.k);
      out << pad(r.label);
      std::snprintf(buf, sizeof buf, "%4zu  ", r.k);
      out << buf << fmt_fixed(d.ndcg) << "  " << fmt_fixed(d.mrr) << "  " << fmt_fixed(d.precision) << "  "
          << fmt_fixed(d.recall) << '\n';
    }
  }
  out << '\n';
  if (!baseline.empty()) out << "BASELINE " << baseline << '\n';
  for (const auto& r : rows) {
    out << "ROW " << r.label << ' ' << r.k << ' ' << fmt_double(r.metrics.ndcg) << ' ' << fmt_double(r.metrics.mrr)
        << ' ' << fmt_double(r.metrics.precision) << ' ' << fmt_double(r.metrics.recall) << '\n';
  }
  return out.str();
}

Report Report::parse(const std::string& text) {
  Report rep;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto f = split_words(line);
    if (f.empty()) continue;
    if (f[0] == "BASELINE" && f.size() == 2) {
      rep.baseline = f[1];
    } else if (f[0] == "ROW") {
      if (f.size() != 7) throw FormatError("report: malformed ROW line");
      ReportRow r;
      r.label = f[1];
      r.k = static_cast<std::size_t>(parse_double(f[2], "k"));
      r.metrics = {parse_double(f[3], "ndcg"), parse_double(f[4], "mrr"), parse_double(f[5], "precision"),
                   parse_double(f[6], "recall")};
      rep.rows.push_back(std::move(r));
    }
  }
  return rep;
}

Report compare_runs(std::span<const std::pair<std::string, RunResult>> runs, const Qrels& qrels,
                    std::span<const std::size_t> ks, const std::string& baseline) {
  Report rep;
  if (runs.empty()) return rep;
  rep.baseline = baseline.empty() ? runs.front().first : baseline;
  for (const auto& [label, run] : runs) {
    if (label.empty() || label.find_first_of(" \t") != std::string::npos) {
      throw InvalidArgument("run labels must be single words");
    }
    for (std::size_t k : ks) rep.rows.push_back({label, k, evaluate(run, qrels, k)});
  }
  if (!ks.empty()) rep.row(rep.baseline, ks.front());
  return rep;
}

}  // namespace finrag
