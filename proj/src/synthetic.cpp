#include "finrag/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "finrag/error.hpp"
#include "finrag/random.hpp"
#include "finrag/text.hpp"

namespace finrag {

using nlohmann::json;

namespace {

struct Metric {
  const char* name;
  const char* unit;
  double base;
};

constexpr Metric kMetrics[] = {
    {"revenue", "million", 4200.0},
    {"gross margin", "percent", 14.0},
    {"vehicle deliveries", "units", 38000.0},
    {"net loss", "million", 1900.0},
    {"research spending", "million", 850.0},
    {"operating cash flow", "million", 600.0},
    {"capital expenditures", "million", 720.0},
    {"cash reserves", "million", 9100.0},
    {"selling expenses", "million", 640.0},
    {"inventory", "million", 2300.0},
    {"free cash flow", "million", 310.0},
    {"order backlog", "units", 52000.0},
};

struct Company {
  std::string name;
  std::string ticker;
  std::vector<std::string> products;
  std::vector<std::string> persons;
};

const std::vector<Company>& companies() {
  static const std::vector<Company> c = {
      {"Norvik Auto", "NVK", {"Norvik N7", "Norvik Vela"}, {"Dana Holt", "Arun Mehta"}},
      {"Halden Mobility", "HLD", {"Halden H3", "Halden Sprint"}, {"Lena Brandt", "Oskar Lind"}},
      {"Corvane Motors", "CRV", {"Corvane Strata", "Corvane Pulse"}, {"Tomas Reyes", "Ines Pardo"}},
      {"Ostrava Electric", "OST", {"Ostrava Arc", "Ostrava Meridian"}, {"Mira Kovac", "Pavel Hruby"}},
  };
  return c;
}

const std::vector<std::string> kCompetitors = {"Brightway Cars", "Kestrel Auto", "Lumora Vehicles", "Sable Motors",
                                               "Tidewater EV"};

const std::vector<std::string> kFiller = {
    "The company continued to expand its sales network in several regions.",
    "Supply conditions for semiconductors improved compared with earlier quarters.",
    "Management kept its focus on cost discipline across all operating units.",
    "Foreign exchange movements had a limited effect on reported figures.",
    "The board approved additional investment in charging infrastructure.",
    "Headcount in manufacturing functions was broadly stable.",
    "Logistics costs eased as shipping capacity normalized.",
    "The group renewed several long term supplier agreements.",
    "Warranty provisions were reviewed and adjusted where necessary.",
    "Software updates delivered over the air added new driver assistance features.",
    "The company opened new service centers to support its growing fleet.",
    "Raw material prices for battery cells remained volatile.",
    "Customer satisfaction surveys showed steady improvement.",
    "The treasury team extended the maturity profile of outstanding debt.",
    "A new regional hub began operations ahead of schedule.",
    "Marketing activity concentrated on digital channels and test drive events.",
    "Energy efficiency projects at the plants lowered utility consumption.",
    "Quality audits found no material production issues.",
    "The company filed additional patents related to thermal management.",
    "Dealer partners reported healthy showroom traffic.",
};

const std::vector<std::string> kDrivers = {
    "stronger demand in export markets",      "a richer product mix",
    "pricing adjustments on entry trims",      "higher utilization at the main plant",
    "lower battery procurement costs",        "seasonal softness in domestic orders",
    "the ramp up of a new production line",   "promotional incentives during the quarter",
    "timing of fleet customer deliveries",    "scale benefits from shared platforms",
};

const std::vector<std::string> kRiskTopics = {
    "regulatory changes affecting vehicle emissions rules",
    "cybersecurity threats to connected vehicle systems",
    "dependence on a limited number of battery suppliers",
    "litigation arising from product liability claims",
    "fluctuations in interest rates and access to credit",
    "trade restrictions and tariffs on imported components",
    "the retention of key engineering personnel",
    "disruptions caused by extreme weather events",
    "changes in government purchase incentives",
    "the protection of intellectual property rights",
    "competition from established manufacturers",
    "the reliability of third party logistics providers",
    "data privacy obligations in multiple jurisdictions",
};

std::string pick(Rng& rng, const std::vector<std::string>& v) { return v[uniform_index(rng, v.size())]; }

std::string fmt_value(double v, const char* unit) {
  char buf[64];
  if (std::string(unit) == "percent") {
    std::snprintf(buf, sizeof buf, "%.1f percent", v);
  } else if (std::string(unit) == "units") {
    std::snprintf(buf, sizeof buf, "%.0f units", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.1f million", v);
  }
  return buf;
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string fillers(Rng& rng, std::size_t n) {
  std::string out;
  auto idx = sample_without_replacement(rng, kFiller.size(), n);
  for (auto i : idx) out += " " + kFiller[i];
  return out;
}

std::string fact_text(Rng& rng, const Company& c, const Metric& m, const std::string& period) {
  const double v = m.base * (0.7 + 0.6 * uniform_real(rng));
  const double change = -20.0 + 45.0 * uniform_real(rng);
  char cmp[96];
  std::snprintf(cmp, sizeof cmp, "%s %.1f percent from a year earlier", change >= 0 ? "up" : "down", std::abs(change));
  return c.name + " reported " + m.name + " of " + fmt_value(v, m.unit) + " in " + period + ", " + cmp +
         ". Demand for the " + pick(rng, c.products) + " was cited as a factor." + fillers(rng, 2);
}

std::string detail_text(Rng& rng, const Company& c, const Metric& m, const std::string& period) {
  return capitalize(m.name) + " for " + period + " was shaped by " + pick(rng, kDrivers) + ". " +
         pick(rng, c.persons) + ", the chief financial officer, said the " + m.name + " result in " + period +
         " reflected " + pick(rng, kDrivers) + "." + fillers(rng, 2);
}

std::string commentary_text(Rng& rng, const Company& c, const Metric& m, int variant) {
  const std::string mn = m.name;
  switch (variant % 3) {
    case 0:
      return "The " + mn + " of " + c.name + " is followed closely by analysts. Management of " + c.name +
             " regards " + mn + " as a core measure, and " + c.name + " discusses " + mn + " trends with investors.";
    case 1:
      return "Investors in " + c.name + " often ask about the " + mn + " of " + c.name + ". The " + mn + " of " +
             c.name + " depends on many factors that " + c.name + " reviews each year.";
    default:
      return "Commentary on the " + mn + " of " + c.name + " appears in several places. " + c.name +
             " notes that the " + mn + " of " + c.name + " can vary." + fillers(rng, 1);
  }
}

std::string risk_text(Rng& rng, const Company& c) {
  return c.name + " faces risks related to " + pick(rng, kRiskTopics) + " and " + pick(rng, kRiskTopics) + "." +
         fillers(rng, 3);
}

std::vector<std::string> period_labels(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(std::to_string(2022 + i / 4) + "Q" + std::to_string(i % 4 + 1));
  }
  return out;
}

std::string query_text(Rng& rng, const Company& c, const Metric& m, const std::string& period) {
  switch (uniform_index(rng, 3)) {
    case 0:
      return "What was the " + std::string(m.name) + " of " + c.name + " in " + period + "?";
    case 1:
      return "How much " + std::string(m.name) + " did " + c.name + " report for " + period + "?";
    default:
      return "What " + std::string(m.name) + " figure did " + c.name + " disclose in " + period + "?";
  }
}

// Drops one interior letter from every word of four or more letters and
// discards shorter words.
std::string misspell(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& w : tokenize_terms(text)) {
    if (w.size() < 4) continue;
    std::string m = w;
    m.erase(m.size() / 2, 1);
    out.push_back(m);
  }
  return join_words(out, 0, out.size());
}

struct DocBuilder {
  DocumentRecord doc;
  std::vector<std::pair<std::string, std::string>> summaries;  // per block

  ChunkId add(const std::string& section, const std::string& text, const std::string& summary) {
    doc.sections.push_back({section, Modality::Text, text});
    summaries.emplace_back(section, summary);
    return ChunkId{doc.doc_id, static_cast<std::uint32_t>(doc.sections.size() - 1)};
  }
};

}  // namespace

MockScript SyntheticData::annotator_script() const {
  MockScript s;
  const auto add_rules = [&](const std::vector<SyntheticQuery>& qs) {
    for (const auto& q : qs) {
      for (const auto& id : q.relevant) {
        MockRule r;
        r.task = std::string(task::kAnnotate);
        r.contains = "Query: " + q.text + "\nChunk ID: " + id.str() + "\n";
        r.text = "Relevant: Yes\nReason: The chunk states the requested figure for the requested period.";
        s.rules.push_back(std::move(r));
      }
    }
  };
  add_rules(train_queries);
  add_rules(eval_queries);
  MockRule no;
  no.task = std::string(task::kAnnotate);
  no.text = "Relevant: No\nReason: The chunk does not give the requested figure for the requested period.";
  s.rules.push_back(std::move(no));
  return s;
}

Qrels SyntheticData::qrels(std::span<const SyntheticQuery> queries) const {
  Qrels q;
  for (const auto& sq : queries) {
    for (const auto& id : sq.relevant) q[sq.id][id.str()] = 1;
  }
  return q;
}

std::optional<std::string> SyntheticData::text_of(const std::string& chunk_id) const {
  const auto id = ChunkId::parse(chunk_id);
  for (const auto& c : chunks) {
    if (c.id == id) return c.text;
  }
  return std::nullopt;
}

void SyntheticData::write(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto path = [&](const char* name) { return (fs::path(dir) / name).string(); };
  const auto open = [&](const char* name) {
    std::ofstream out(path(name), std::ios::trunc);
    if (!out) throw Error("cannot write " + path(name));
    return out;
  };
  {
    auto out = open("corpus.jsonl");
    write_corpus(out, documents);
  }
  write_chunks_file(path("chunks.jsonl"), chunks);
  write_quadruples_file(path("human.jsonl"), human);
  open("lexicon.json") << lexicon.to_json().dump(2) << '\n';
  {
    json rules = json::array();
    for (const auto& r : annotator_script().rules) {
      json j = {{"task", r.task}, {"text", *r.text}};
      if (!r.contains.empty()) j["contains"] = r.contains;
      rules.push_back(j);
    }
    open("annotator.json") << json{{"rules", rules}}.dump(2) << '\n';
  }
  const auto write_queries = [&](const char* qfile, const char* rfile, const std::vector<SyntheticQuery>& qs) {
    auto out = open(qfile);
    for (const auto& q : qs) out << q.id << '\t' << q.text << '\n';
    auto rel = open(rfile);
    write_qrels(rel, qrels(qs));
  };
  write_queries("queries_train.tsv", "qrels_train.txt", train_queries);
  write_queries("queries_eval.tsv", "qrels_eval.txt", eval_queries);
  {
    json qs = json::array();
    for (const auto& q : bank_questions) qs.push_back({{"text", q.text}, {"subject", q.subject}});
    open("bank_questions.json") << json{{"questions", qs}, {"periods", periods}, {"stop_entities", stop_entities}}
                                       .dump(2)
                                << '\n';
  }
  open("tools.json") << tools_json.dump(2) << '\n';
}

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.periods < 2) throw InvalidArgument("synthetic corpus needs at least two periods");
  Rng rng(cfg.seed);
  SyntheticData d;
  const auto& all = companies();
  const Company& target = all[0];
  d.company = target.name;
  d.periods = period_labels(cfg.periods);
  for (const auto& m : kMetrics) d.metrics.push_back(m.name);
  const std::size_t nm = d.metrics.size();

  // Target company documents: one report per period plus an outlook file.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<ChunkId>> relevant;  // (metric, period)
  std::vector<DocBuilder> builders;
  for (std::size_t p = 0; p < d.periods.size(); ++p) {
    const auto& period = d.periods[p];
    DocBuilder b;
    b.doc = {target.ticker + "-" + period, target.name + " quarterly report " + period, "quarterly", period, {}};
    for (std::size_t m = 0; m < nm; ++m) {
      const auto& metric = kMetrics[m];
      const std::string section = "Results > " + capitalize(metric.name);
      const std::string summary =
          target.name + " " + period + " quarterly report, results section on " + metric.name + ".";
      relevant[{m, p}].push_back(b.add(section, fact_text(rng, target, metric, period), summary));
      relevant[{m, p}].push_back(b.add(section, detail_text(rng, target, metric, period), summary));
    }
    for (std::size_t f = 0; f < cfg.filler_per_doc; ++f) {
      b.add("Risk Factors", risk_text(rng, target),
            target.name + " " + period + " quarterly report, risk factors and general disclosures.");
    }
    builders.push_back(std::move(b));
  }
  {
    DocBuilder b;
    b.doc = {target.ticker + "-OUTLOOK", target.name + " investor outlook", "outlook", "", {}};
    for (std::size_t m = 0; m < nm; ++m) {
      const std::string section = "Outlook > " + capitalize(kMetrics[m].name);
      for (int v = 0; v < 3; ++v) {
        b.add(section, commentary_text(rng, target, kMetrics[m], v),
              target.name + " investor outlook, commentary on " + std::string(kMetrics[m].name) + ".");
      }
    }
    builders.push_back(std::move(b));
  }
  {
    // Probe chunks, each findable by exactly one kind of signal.
    DocBuilder b;
    b.doc = {"ZPRB-" + target.ticker, target.name + " operational register", "register", "", {}};
    const std::vector<std::string> sites = {"Aldmere", "Brisk Hollow", "Caverton", "Dunmore", "Eastfold",
                                            "Farrowby", "Glenhurst", "Holmby", "Ivel Cross", "Juniper Bay",
                                            "Kettering Vale", "Larchmont", "Millbrook", "Northam", "Oakridge"};
    const std::vector<std::string> partners = {
        "battery recycling partnership with Greencell Materials covering cathode recovery",
        "autonomous shuttle pilot with Metroline Transit across downtown corridors",
        "solar canopy installation with Brightfield Energy above employee parking",
        "hydrogen logistics trial with Polaris Freight between inland warehouses",
        "semiconductor packaging venture with Quantix Devices near coastal foundries",
        "fleet telematics contract with Routewise Analytics monitoring rental vehicles",
        "charging roaming alliance with Voltpath Networks spanning northern highways",
        "seat fabric sourcing arrangement with Loomcraft Textiles using recycled polyester",
        "aluminium casting collaboration with Forgeline Industries producing rear underbodies",
        "insurance bundling scheme with Harbor Mutual protecting leased sedans",
        "drone inspection program with Skyward Robotics surveying paint shops",
        "lithium refining offtake with Andes Mineral Holdings securing hydroxide supply",
        "customer financing facility with Keystone Credit Union supporting first buyers",
        "wind tunnel booking with Aerolab Testing validating roofline changes",
        "virtual showroom platform with Pixelcraft Studios streaming guided tours",
    };
    const std::vector<std::string> programs = {
        "water usage reduction program",    "apprentice training scholarship",
        "noise abatement initiative",      "biodiversity restoration project",
        "community road safety campaign",  "heritage building restoration",
        "night shift wellbeing scheme",    "rainwater harvesting upgrade",
        "local school robotics sponsorship", "employee cycling incentive",
        "wetland conservation partnership", "veteran hiring commitment",
        "packaging waste elimination drive", "flood defence contribution",
        "rooftop garden pilot",
    };
    const std::vector<std::string> program_texts = {
        "Consumption at the facility fell after a closed loop cooling system was commissioned.",
        "Twelve young technicians joined the plant after completing a two year course.",
        "Residents near the site reported fewer disturbances during evening hours.",
        "Native hedgerows were replanted along the northern boundary of the site.",
        "Volunteers visited primary schools to teach children how to cross streets.",
        "The old brick warehouse received a new roof and restored windows.",
        "Staff working late hours gained access to counselling and healthier meals.",
        "Gutters now feed storage tanks that supply the paint shop rinsing line.",
        "Pupils built small machines with kits donated by the engineering team.",
        "Employees received vouchers for bicycles and secure storage was added.",
        "Reed beds were planted with the help of a regional nature trust.",
        "Former service members were offered interviews for maintenance roles.",
        "Suppliers switched to returnable crates instead of single use cartons.",
        "Funds were given to the council to raise embankments along the river.",
        "Vegetables and herbs are now grown above the staff canteen.",
    };
    const std::size_t n = std::min<std::size_t>(cfg.probes_per_kind, sites.size());
    for (std::size_t i = 0; i < n; ++i) {
      char code[16];
      std::snprintf(code, sizeof code, "KX%04u", static_cast<unsigned>(1000 + uniform_index(rng, 9000)));
      const auto id = b.add("Register > Permits " + std::to_string(i),
                            "Permit reference " + std::string(code) + " covers the " + sites[i] +
                                " site and was renewed without conditions." + fillers(rng, 1),
                            target.name + " operational register, environmental permits.");
      d.probes.push_back({"L" + std::to_string(i), "Which site is covered by permit " + std::string(code) + "?", id,
                          ProbeKind::Lexical});
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::string text = target.name + " agreed a " + partners[i] + ".";
      const auto id = b.add("Register > Agreements " + std::to_string(i), text + fillers(rng, 1),
                            target.name + " operational register, commercial agreements.");
      d.probes.push_back({"F" + std::to_string(i), misspell(partners[i]), id, ProbeKind::Fuzzy});
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto id = b.add("Register > Community " + std::to_string(i), program_texts[i],
                            "The " + programs[i] + " at the " + sites[i] + " plant.");
      d.probes.push_back({"S" + std::to_string(i), programs[i] + " at the " + sites[i] + " plant", id,
                          ProbeKind::Section});
    }
    builders.push_back(std::move(b));
  }

  for (auto& b : builders) {
    auto chunks = chunk_document(b.doc);
    if (chunks.size() != b.summaries.size()) throw Error("synthetic block exceeded the chunk length");
    for (std::size_t i = 0; i < chunks.size(); ++i) chunks[i].summary = b.summaries[i].second;
    d.chunks.insert(d.chunks.end(), chunks.begin(), chunks.end());
    d.documents.push_back(std::move(b.doc));
  }

  // Target queries: every (metric, period) pair, split in half.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t m = 0; m < nm; ++m) {
    for (std::size_t p = 0; p < d.periods.size(); ++p) pairs.emplace_back(m, p);
  }
  shuffle(pairs, rng);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [m, p] = pairs[i];
    const bool train = i < pairs.size() / 2;
    auto& list = train ? d.train_queries : d.eval_queries;
    SyntheticQuery q;
    q.id = (train ? "T" : "E") + std::to_string(list.size());
    q.text = query_text(rng, target, kMetrics[m], d.periods[p]);
    q.relevant = relevant[{m, p}];
    list.push_back(std::move(q));
  }

  // Human-labelled quadruples on the source companies.
  for (std::size_t i = 0; i < cfg.human_queries; ++i) {
    const Company& c = all[1 + i % 3];
    const std::size_t m = uniform_index(rng, nm);
    const std::size_t p = uniform_index(rng, d.periods.size());
    const auto& metric = kMetrics[m];
    TrainingQuadruple quad;
    quad.q = query_text(rng, c, metric, d.periods[p]);
    quad.prompt = std::string(default_rerank_prompt());
    quad.positives = {fact_text(rng, c, metric, d.periods[p]), detail_text(rng, c, metric, d.periods[p])};
    for (int k = 0; k < 3; ++k) {
      std::size_t other = uniform_index(rng, d.periods.size() - 1);
      if (other >= p) ++other;
      quad.negatives.push_back(k % 2 == 0 ? fact_text(rng, c, metric, d.periods[other])
                                          : detail_text(rng, c, metric, d.periods[other]));
    }
    for (int v = 0; v < 3; ++v) quad.negatives.push_back(commentary_text(rng, c, metric, v));
    for (int k = 0; k < 2; ++k) {
      std::size_t other = uniform_index(rng, nm - 1);
      if (other >= m) ++other;
      quad.negatives.push_back(fact_text(rng, c, kMetrics[other], d.periods[p]));
    }
    quad.negatives.push_back(risk_text(rng, c));
    d.human.push_back(std::move(quad));
  }

  for (std::size_t i = 1; i < all.size(); ++i) {
    d.lexicon.companies.push_back(all[i].name);
    for (const auto& p : all[i].products) d.lexicon.products.push_back(p);
    for (const auto& p : all[i].persons) d.lexicon.persons.push_back(p);
  }
  d.lexicon.competitors = kCompetitors;

  for (const auto& m : kMetrics) {
    d.bank_questions.push_back({"What was the " + std::string(m.name) + " of " + target.name + "?", m.name});
  }
  d.stop_entities = {target.name};

  d.tools_json = json::array(
      {{{"name", "stock_price"},
        {"description", "Returns the latest share price quote for a listed company"},
        {"parameters", {{"type", "object"}, {"properties", {{"query", {{"type", "string"}}}}}}},
        {"canned", {{"symbol", target.ticker}, {"price", 23.41}, {"currency", "USD"}}}},
       {{"name", "exchange_rate"},
        {"description", "Converts between currencies using the latest exchange rate"},
        {"parameters", {{"type", "object"}, {"properties", {{"query", {{"type", "string"}}}}}}},
        {"canned", {{"pair", "USD/EUR"}, {"rate", 0.92}}}}});
  d.tools = ToolRegistry::from_json(d.tools_json);
  return d;
}

KnowledgeBase synthetic_kb(const SyntheticData& data, std::shared_ptr<const Embedder> embedder) {
  if (!embedder) embedder = default_embedder();
  auto chunks = data.chunks;
  for (auto& c : chunks) c.embedding = embedder->embed(c.text);
  return KnowledgeBase::from_chunks(std::move(chunks), embedder);
}

}  // namespace finrag
