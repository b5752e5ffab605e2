#include "finrag/reranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"
#include "finrag/parallel.hpp"
#include "finrag/prompts.hpp"
#include "finrag/random.hpp"
#include "finrag/retrieval.hpp"
#include "finrag/text.hpp"

namespace finrag {

using nlohmann::json;

namespace {

std::set<std::string> bigrams(const std::vector<std::string>& terms) {
  std::set<std::string> out;
  for (std::size_t i = 0; i + 1 < terms.size(); ++i) out.insert(terms[i] + " " + terms[i + 1]);
  return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.contains(x) ? 1 : 0;
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

// BM25 of each candidate for the query with statistics from the set itself.
std::vector<double> set_bm25(const std::vector<std::string>& q_terms,
                             const std::vector<std::vector<std::string>>& cand_terms) {
  constexpr double k1 = 1.2;
  constexpr double b = 0.75;
  const double n = static_cast<double>(cand_terms.size());
  double total = 0.0;
  std::map<std::string, std::size_t> df;
  std::vector<std::map<std::string, std::size_t>> tf(cand_terms.size());
  for (std::size_t i = 0; i < cand_terms.size(); ++i) {
    total += static_cast<double>(cand_terms[i].size());
    for (const auto& t : cand_terms[i]) ++tf[i][t];
    for (const auto& [t, c] : tf[i]) ++df[t];
  }
  const double avgdl = n > 0 ? total / n : 0.0;
  std::vector<double> scores(cand_terms.size(), 0.0);
  for (std::size_t i = 0; i < cand_terms.size(); ++i) {
    const double len = static_cast<double>(cand_terms[i].size());
    for (const auto& t : q_terms) {
      const auto it = tf[i].find(t);
      if (it == tf[i].end()) continue;
      const double d = static_cast<double>(df[t]);
      const double idf = std::log(1.0 + (n - d + 0.5) / (d + 0.5));
      const double f = static_cast<double>(it->second);
      const double norm = avgdl > 0 ? len / avgdl : 0.0;
      scores[i] += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * norm));
    }
  }
  return scores;
}

}  // namespace

EmbeddingVector FeatureExtractor::cached_embed(const std::string& text) const {
  {
    std::lock_guard lock(mutex_);
    const auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
  }
  auto v = embedder_.embed(text);
  std::lock_guard lock(mutex_);
  return cache_.emplace(text, std::move(v)).first->second;
}

std::vector<FeatureVector> FeatureExtractor::extract(std::string_view query,
                                                     std::span<const std::string> candidates) const {
  const std::string q(query);
  const auto q_vec = cached_embed(q);
  const auto q_terms = tokenize_terms(q);
  const std::set<std::string> q_uni(q_terms.begin(), q_terms.end());
  const auto q_bi = bigrams(q_terms);

  std::vector<std::vector<std::string>> cand_terms;
  cand_terms.reserve(candidates.size());
  for (const auto& c : candidates) cand_terms.push_back(tokenize_terms(c));
  const auto bm25 = set_bm25(q_terms, cand_terms);
  double lo = 0.0;
  double hi = 0.0;
  if (!bm25.empty()) {
    lo = *std::min_element(bm25.begin(), bm25.end());
    hi = *std::max_element(bm25.begin(), bm25.end());
  }

  std::vector<FeatureVector> out;
  out.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& terms = cand_terms[i];
    const std::set<std::string> uni(terms.begin(), terms.end());
    FeatureVector phi{};
    phi[0] = cosine(q_vec, cached_embed(candidates[i]));
    phi[1] = jaccard(q_uni, uni);
    phi[2] = jaccard(q_bi, bigrams(terms));
    phi[3] = hi > lo ? (bm25[i] - lo) / (hi - lo) : 0.0;
    const double lq = static_cast<double>(q_terms.size());
    const double lc = static_cast<double>(terms.size());
    phi[4] = (lq + lc) > 0 ? lc / (lq + lc) : 0.0;
    phi[5] = 1.0;
    out.push_back(phi);
  }
  return out;
}

// ---------------------------------------------------------------------------

RerankModel RerankModel::zeros() {
  RerankModel m;
  m.w_yes.assign(kFeatureDim, 0.0);
  m.w_no.assign(kFeatureDim, 0.0);
  m.version = "zero";
  return m;
}

RerankModel RerankModel::base() {
  RerankModel m = zeros();
  m.w_yes[0] = 4.0;
  m.version = "base";
  return m;
}

void RerankModel::validate() const {
  if (w_yes.size() != kFeatureDim || w_no.size() != kFeatureDim) {
    throw InvalidArgument("rerank model: weight vectors must have " + std::to_string(kFeatureDim) + " entries");
  }
}

double RerankModel::z_yes(const FeatureVector& phi) const {
  double z = 0.0;
  for (std::size_t i = 0; i < kFeatureDim; ++i) z += w_yes[i] * phi[i];
  return z;
}

double RerankModel::z_no(const FeatureVector& phi) const {
  double z = 0.0;
  for (std::size_t i = 0; i < kFeatureDim; ++i) z += w_no[i] * phi[i];
  return z;
}

void RerankModel::save(std::ostream& out) const {
  validate();
  out << kModelMagic << ' ' << kModelFormatVersion << '\n';
  out << json{{"version", version}, {"feature_dim", kFeatureDim}, {"w_yes", w_yes}, {"w_no", w_no}}.dump()
      << '\n';
}

void RerankModel::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  save(out);
}

RerankModel RerankModel::load(std::istream& in) {
  std::string header;
  std::getline(in, header);
  const std::string expected = std::string(kModelMagic) + " " + std::to_string(kModelFormatVersion);
  if (header != expected) throw FormatError("bad model header '" + header + "'");
  RerankModel m;
  try {
    const auto j = json::parse(in);
    if (j.at("feature_dim").get<std::size_t>() != kFeatureDim) throw FormatError("model feature_dim mismatch");
    m.version = j.value("version", "");
    m.w_yes = j.at("w_yes").get<std::vector<double>>();
    m.w_no = j.at("w_no").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return m;
}

RerankModel RerankModel::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return load(in);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double score(const FeatureVector& phi, const RerankModel& model) {
  for (double f : phi) {
    if (!std::isfinite(f)) throw InvalidArgument("score: non-finite feature");
  }
  return sigmoid(model.z_yes(phi) - model.z_no(phi));
}

double score(std::string_view q, const std::string& c, const RerankModel& model,
             const FeatureExtractor& features) {
  return score(features.extract(q, std::span<const std::string>(&c, 1)).front(), model);
}

std::vector<double> score_candidates(std::string_view q, std::span<const std::string> candidates,
                                     const RerankModel& model, const FeatureExtractor& features) {
  model.validate();
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& phi : features.extract(q, candidates)) out.push_back(score(phi, model));
  return out;
}

// ---------------------------------------------------------------------------

double contrastive_loss(double logit_pos, std::span<const double> logits_neg) {
  if (logits_neg.empty()) throw InvalidArgument("contrastive_loss: no negatives");
  double m = logit_pos;
  for (double s : logits_neg) {
    if (!std::isfinite(s)) throw InvalidArgument("contrastive_loss: non-finite logit");
    m = std::max(m, s);
  }
  if (!std::isfinite(logit_pos)) throw InvalidArgument("contrastive_loss: non-finite logit");
  // log1p keeps precision when the positive dominates.
  bool skipped_max = false;
  double rest = 0.0;
  const auto add = [&](double s) {
    if (!skipped_max && s == m) {
      skipped_max = true;
      return;
    }
    rest += std::exp(s - m);
  };
  add(logit_pos);
  for (double s : logits_neg) add(s);
  const double loss = (m - logit_pos) + std::log1p(rest);
  return std::max(loss, 0.0);
}

LossGradient contrastive_gradient(const RerankModel& model, const FeatureVector& positive,
                                  std::span<const FeatureVector> negatives) {
  model.validate();
  if (negatives.empty()) throw InvalidArgument("contrastive_gradient: no negatives");
  std::vector<double> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(model.logit_diff(positive));
  for (const auto& n : negatives) logits.push_back(model.logit_diff(n));

  LossGradient g;
  g.loss = contrastive_loss(logits[0], std::span<const double>(logits).subspan(1));
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double s : logits) z += std::exp(s - m);

  // dL/dd = Σ_i (p_i − y_i) φ_i with d = w_yes − w_no.
  std::vector<double> dd(kFeatureDim, 0.0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = std::exp(logits[i] - m) / z;
    const double coeff = p - (i == 0 ? 1.0 : 0.0);
    const auto& phi = i == 0 ? positive : negatives[i - 1];
    for (std::size_t f = 0; f < kFeatureDim; ++f) dd[f] += coeff * phi[f];
  }
  g.grad_yes = dd;
  g.grad_no.resize(kFeatureDim);
  for (std::size_t f = 0; f < kFeatureDim; ++f) g.grad_no[f] = -dd[f];
  return g;
}

std::string_view default_rerank_prompt() {
  return "Given a query and a passage from a financial filing, answer Yes if the passage helps "
         "answer the query and No otherwise.";
}

namespace {

TrainingQuadruple quad_from_json(const json& j) {
  TrainingQuadruple q;
  q.q = j.at("q").get<std::string>();
  q.positives = j.value("positives", std::vector<std::string>{});
  q.negatives = j.value("negatives", std::vector<std::string>{});
  q.prompt = j.value("prompt", std::string(default_rerank_prompt()));
  return q;
}

}  // namespace

std::vector<TrainingQuadruple> read_quadruples(std::istream& in) {
  std::vector<TrainingQuadruple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_whitespace(line).empty()) continue;
    try {
      out.push_back(quad_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError("quadruples line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TrainingQuadruple> read_quadruples_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_quadruples(in);
}

void write_quadruples(std::ostream& out, std::span<const TrainingQuadruple> quads) {
  for (const auto& q : quads) {
    out << json{{"q", q.q}, {"positives", q.positives}, {"negatives", q.negatives}, {"prompt", q.prompt}}.dump()
        << '\n';
  }
}

void write_quadruples_file(const std::string& path, std::span<const TrainingQuadruple> quads) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  write_quadruples(out, quads);
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning_rate must be finite and non-negative");
  }
  if (negatives_per_step < 1) throw InvalidArgument("negatives_per_step must be >= 1");
}

TrainResult train(const RerankModel& model, std::span<const TrainingQuadruple> data, const TrainConfig& cfg,
                  const FeatureExtractor& features) {
  cfg.validate();
  model.validate();
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].positives.empty() && !data[i].negatives.empty()) trainable.push_back(i);
  }
  if (trainable.empty()) throw InvalidArgument("train: no trainable quadruples");

  TrainResult result{model, {}};
  RerankModel& m = result.model;
  Rng rng(cfg.seed);
  const std::size_t k = cfg.negatives_per_step;
  std::vector<double> step_loss(data.size(), 0.0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = trainable;
    shuffle(order, rng);
    for (std::size_t qi : order) {
      const auto& quad = data[qi];
      std::vector<std::string> group;
      group.reserve(k + 1);
      group.push_back(quad.positives[uniform_index(rng, quad.positives.size())]);
      const std::size_t n = quad.negatives.size();
      auto picked = sample_without_replacement(rng, n, std::min(k, n));
      std::sort(picked.begin(), picked.end());
      for (std::size_t i = 0; picked.size() < k; ++i) picked.push_back(picked[i]);
      for (std::size_t idx : picked) group.push_back(quad.negatives[idx]);

      const auto phis = features.extract(quad.q, group);
      const auto g = contrastive_gradient(m, phis[0], std::span<const FeatureVector>(phis).subspan(1));
      step_loss[qi] = g.loss;
      for (std::size_t f = 0; f < kFeatureDim; ++f) {
        m.w_yes[f] -= cfg.learning_rate * g.grad_yes[f];
        m.w_no[f] -= cfg.learning_rate * g.grad_no[f];
      }
    }
    double sum = 0.0;
    for (std::size_t qi : trainable) sum += step_loss[qi];
    result.epoch_loss.push_back(sum / static_cast<double>(trainable.size()));
  }
  m.version = model.version + "+trained";
  return result;
}

// ---------------------------------------------------------------------------

std::string_view to_string(AbstractionStrategy s) {
  switch (s) {
    case AbstractionStrategy::ProductPerson:
      return "product-person";
    case AbstractionStrategy::CompanyName:
      return "company-name";
    case AbstractionStrategy::Complete:
      return "complete";
  }
  return "complete";
}

AbstractionStrategy parse_strategy(std::string_view s) {
  const auto l = to_lower(s);
  if (l == "product-person" || l == "productperson" || l == "product_person") return AbstractionStrategy::ProductPerson;
  if (l == "company-name" || l == "companyname" || l == "company_name" || l == "company") {
    return AbstractionStrategy::CompanyName;
  }
  if (l == "complete" || l == "full") return AbstractionStrategy::Complete;
  throw InvalidArgument("unknown abstraction strategy: " + std::string(s));
}

void EntityLexicon::validate(AbstractionStrategy strategy) const {
  std::set<std::string> seen;
  for (const auto* list : {&companies, &products, &persons, &competitors}) {
    for (const auto& e : *list) {
      if (e.empty()) throw InvalidArgument("lexicon: empty entry");
      if (!seen.insert(to_lower(e)).second) throw InvalidArgument("lexicon: '" + e + "' appears twice");
    }
  }
  switch (strategy) {
    case AbstractionStrategy::ProductPerson:
      if (products.empty() && persons.empty()) throw InvalidArgument("lexicon: needs products or persons");
      break;
    case AbstractionStrategy::CompanyName:
      if (companies.empty()) throw InvalidArgument("lexicon: needs companies");
      if (companies.size() > 1 && competitors.empty()) throw InvalidArgument("lexicon: needs competitors");
      break;
    case AbstractionStrategy::Complete:
      if (companies.empty() && products.empty() && persons.empty()) {
        throw InvalidArgument("lexicon: needs at least one entity");
      }
      break;
  }
}

EntityLexicon EntityLexicon::from_json(const json& j) {
  EntityLexicon l;
  l.companies = j.value("companies", std::vector<std::string>{});
  l.products = j.value("products", std::vector<std::string>{});
  l.persons = j.value("persons", std::vector<std::string>{});
  l.competitors = j.value("competitors", std::vector<std::string>{});
  return l;
}

json EntityLexicon::to_json() const {
  return {{"companies", companies}, {"products", products}, {"persons", persons}, {"competitors", competitors}};
}

namespace {

enum class EntityClass { Company, Product, Person };

struct Surface {
  std::string lower;
  EntityClass cls;
  std::size_t ordinal;  // index within its lexicon list
};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

class Abstracter {
 public:
  Abstracter(AbstractionStrategy strategy, const EntityLexicon& lex, std::uint64_t seed)
      : strategy_(strategy), lex_(lex), rng_(seed) {
    const auto add = [&](const std::vector<std::string>& list, EntityClass cls) {
      for (std::size_t i = 0; i < list.size(); ++i) surfaces_.push_back({to_lower(list[i]), cls, i});
    };
    if (strategy != AbstractionStrategy::ProductPerson) add(lex.companies, EntityClass::Company);
    if (strategy != AbstractionStrategy::CompanyName) {
      add(lex.products, EntityClass::Product);
      add(lex.persons, EntityClass::Person);
    }
    std::stable_sort(surfaces_.begin(), surfaces_.end(),
                     [](const Surface& a, const Surface& b) { return a.lower.size() > b.lower.size(); });
    competitor_pool_ = lex.competitors;
  }

  std::string apply(const std::string& text) {
    const std::string lower = to_lower(text);
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
      const Surface* hit = nullptr;
      if (i == 0 || !is_word_char(text[i - 1])) {
        for (const auto& s : surfaces_) {
          const auto end = i + s.lower.size();
          if (end > text.size() || lower.compare(i, s.lower.size(), s.lower) != 0) continue;
          if (end < text.size() && is_word_char(text[end]) && is_word_char(text[end - 1])) continue;
          hit = &s;
          break;
        }
      }
      if (hit) {
        out += replacement(*hit);
        i += hit->lower.size();
      } else {
        out.push_back(text[i++]);
      }
    }
    return out;
  }

 private:
  std::string replacement(const Surface& s) {
    const auto key = std::make_pair(static_cast<int>(s.cls), s.lower);
    if (const auto it = mapping_.find(key); it != mapping_.end()) return it->second;
    std::string value;
    if (strategy_ == AbstractionStrategy::CompanyName) {
      if (s.ordinal == 0) {
        value = "COMPANY_TARGET";
      } else if (competitor_pool_.empty()) {
        value = "COMPANY_OTHER";
      } else {
        const auto pick = uniform_index(rng_, competitor_pool_.size());
        value = competitor_pool_[pick];
        competitor_pool_.erase(competitor_pool_.begin() + static_cast<std::ptrdiff_t>(pick));
        if (competitor_pool_.empty()) competitor_pool_ = lex_.competitors;
      }
    } else {
      static constexpr const char* kPrefix[] = {"COMPANY_", "PRODUCT_", "PERSON_"};
      const auto cls = static_cast<int>(s.cls);
      value = kPrefix[cls] + std::to_string(++counters_[cls]);
    }
    mapping_.emplace(key, value);
    return value;
  }

  AbstractionStrategy strategy_;
  const EntityLexicon& lex_;
  Rng rng_;
  std::vector<Surface> surfaces_;
  std::vector<std::string> competitor_pool_;
  std::map<std::pair<int, std::string>, std::string> mapping_;
  int counters_[3] = {0, 0, 0};
};

}  // namespace

TrainingQuadruple abstract_entities(const TrainingQuadruple& quad, AbstractionStrategy strategy,
                                    const EntityLexicon& lexicon, std::uint64_t seed) {
  Abstracter a(strategy, lexicon, seed);
  TrainingQuadruple out;
  out.prompt = quad.prompt;
  out.q = a.apply(quad.q);
  for (const auto& p : quad.positives) out.positives.push_back(a.apply(p));
  for (const auto& n : quad.negatives) out.negatives.push_back(a.apply(n));
  return out;
}

// ---------------------------------------------------------------------------

std::optional<bool> parse_annotation(std::string_view reply) {
  std::vector<std::string> lines;
  std::string current;
  for (char c : reply) {
    if (c == '\n') {
      lines.push_back(current);
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  lines.push_back(current);
  while (!lines.empty() && normalize_whitespace(lines.back()).empty()) lines.pop_back();
  if (lines.size() != 2) return std::nullopt;

  const auto label_line = normalize_whitespace(lines[0]);
  constexpr std::string_view kLabel = "relevant:";
  if (to_lower(label_line).rfind(kLabel, 0) != 0) return std::nullopt;
  const auto value = to_lower(normalize_whitespace(label_line.substr(kLabel.size())));
  const auto reason = to_lower(normalize_whitespace(lines[1]));
  if (reason.rfind("reason:", 0) != 0) return std::nullopt;
  if (value == "yes") return true;
  if (value == "no") return false;
  return std::nullopt;
}

AnnotationResult auto_annotate(std::string_view q, std::span<const LabeledChunk> retrieved, LlmGateway& annotator,
                               const std::string& model) {
  AnnotationResult r;
  for (const auto& chunk : retrieved) {
    ChatRequest req;
    req.task = std::string(task::kAnnotate);
    req.model = model;
    req.messages.push_back({"system", std::string(prompts::relevance_annotation())});
    req.messages.push_back({"user", "Query: " + std::string(q) + "\nChunk ID: " + chunk.id + "\nChunk: " + chunk.text});
    std::optional<bool> label;
    try {
      label = parse_annotation(annotator.complete(req).text.value_or(""));
    } catch (const std::exception& e) {
      r.warnings.push_back(chunk.id + ": annotator error: " + e.what());
      continue;
    }
    if (!label) {
      r.warnings.push_back(chunk.id + ": unparseable annotator reply");
      spdlog::warn("annotation skipped for {}: unparseable reply", chunk.id);
      continue;
    }
    (*label ? r.positives : r.hard_negatives).push_back(chunk);
  }
  return r;
}

std::vector<LabeledChunk> sample_negatives(std::span<const LabeledChunk> n_hard, std::span<const LabeledChunk> corpus,
                                           std::span<const LabeledChunk> positives, std::size_t count_random,
                                           std::uint64_t seed, std::vector<std::string>* warnings) {
  if (corpus.empty()) throw InvalidArgument("sample_negatives: empty corpus");
  std::set<std::string> excluded;
  for (const auto& c : n_hard) excluded.insert(c.id);
  for (const auto& c : positives) excluded.insert(c.id);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!excluded.contains(corpus[i].id)) pool.push_back(i);
  }
  if (pool.size() < count_random && warnings) {
    warnings->push_back("sample_negatives: only " + std::to_string(pool.size()) + " of " +
                        std::to_string(count_random) + " random negatives available");
  }
  std::vector<LabeledChunk> out(n_hard.begin(), n_hard.end());
  Rng rng(seed);
  for (std::size_t i : sample_without_replacement(rng, pool.size(), count_random)) out.push_back(corpus[pool[i]]);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t i) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (i + 1));
  x = (x ^ (x >> 31)) * 0xbf58476d1ce4e5b9ULL;
  return x ^ (x >> 29);
}

}  // namespace

TrainResult train_general(const RerankModel& base, std::span<const TrainingQuadruple> d_human,
                          AbstractionStrategy strategy, const EntityLexicon& lexicon, const TwoStageConfig& cfg,
                          const FeatureExtractor& features) {
  if (d_human.empty()) throw InvalidArgument("stage 1: empty human dataset");
  lexicon.validate(strategy);
  std::vector<TrainingQuadruple> augmented;
  augmented.reserve(d_human.size());
  for (std::size_t i = 0; i < d_human.size(); ++i) {
    augmented.push_back(abstract_entities(d_human[i], strategy, lexicon, mix_seed(cfg.seed, i)));
  }
  auto result = train(base, augmented, cfg.stage1, features);
  result.model.version = base.version + "+s1";
  return result;
}

Stage2Dataset build_stage2_dataset(std::span<const std::string> q_target, const KnowledgeBase& kb,
                                   LlmGateway& annotator, const TwoStageConfig& cfg) {
  std::vector<LabeledChunk> corpus;
  corpus.reserve(kb.size());
  for (const auto& c : kb.chunks()) corpus.push_back({c.id.str(), c.text});

  struct PerQuery {
    std::optional<TrainingQuadruple> quad;
    std::vector<std::string> warnings;
  };
  std::vector<PerQuery> results(q_target.size());
  parallel_for(q_target.size(), cfg.jobs, [&](std::size_t i) {
    const auto& q = q_target[i];
    std::vector<LabeledChunk> retrieved;
    for (const auto& cand : multipath_retrieve(q, cfg.retrieve_k_each, kb)) {
      retrieved.push_back({cand.id.str(), kb.chunk(cand.id).text});
    }
    auto ann = auto_annotate(q, retrieved, annotator, cfg.annotate_model);
    auto& out = results[i];
    out.warnings = std::move(ann.warnings);
    if (ann.positives.empty()) {
      out.warnings.push_back("query '" + q + "': no positive chunk; dropped");
      return;
    }
    const auto negatives = sample_negatives(ann.hard_negatives, corpus, ann.positives, cfg.random_negatives,
                                            mix_seed(cfg.seed + 1, i), &out.warnings);
    TrainingQuadruple quad;
    quad.q = q;
    quad.prompt = std::string(default_rerank_prompt());
    for (const auto& p : ann.positives) quad.positives.push_back(p.text);
    for (const auto& n : negatives) quad.negatives.push_back(n.text);
    out.quad = std::move(quad);
  });

  Stage2Dataset ds;
  for (auto& r : results) {
    if (r.quad) ds.quadruples.push_back(std::move(*r.quad));
    for (auto& w : r.warnings) ds.warnings.push_back(std::move(w));
  }
  return ds;
}

TrainResult train_specialized(const RerankModel& model, std::span<const TrainingQuadruple> d_auto,
                              const TwoStageConfig& cfg, const FeatureExtractor& features) {
  auto result = train(model, d_auto, cfg.stage2, features);
  result.model.version = model.version + "+s2";
  return result;
}

TwoStageResult two_stage_pipeline(const RerankModel& base, std::span<const TrainingQuadruple> d_human,
                                  AbstractionStrategy strategy, const EntityLexicon& lexicon,
                                  std::span<const std::string> q_target, const KnowledgeBase& kb_target,
                                  LlmGateway& annotator, const TwoStageConfig& cfg) {
  if (d_human.empty()) throw InvalidArgument("two_stage_pipeline: empty human dataset");
  if (q_target.empty()) throw InvalidArgument("two_stage_pipeline: no target queries");
  const FeatureExtractor features(kb_target.embedder());

  TwoStageResult out;
  auto general = train_general(base, d_human, strategy, lexicon, cfg, features);
  out.general = general.model;
  out.stage1_loss = std::move(general.epoch_loss);
  out.augmented_examples = d_human.size();
  if (!cfg.general_model_path.empty()) out.general.save_file(cfg.general_model_path);

  auto ds = build_stage2_dataset(q_target, kb_target, annotator, cfg);
  out.warnings = std::move(ds.warnings);
  out.auto_examples = ds.quadruples.size();
  auto specialized = train_specialized(out.general, ds.quadruples, cfg, features);
  out.specialized = specialized.model;
  out.stage2_loss = std::move(specialized.epoch_loss);
  return out;
}

}  // namespace finrag
