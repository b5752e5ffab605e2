#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "finrag/error.hpp"
#include "finrag/evaluation.hpp"
#include "finrag/memory_bank.hpp"
#include "finrag/query_pipeline.hpp"
#include "finrag/retrieval.hpp"
#include "finrag/service.hpp"
#include "finrag/synthetic.hpp"

namespace py = pybind11;
using namespace finrag;

namespace {

using PyRun = std::map<std::string, std::vector<std::pair<std::string, double>>>;

RunResult to_run(const PyRun& in) {
  RunResult out;
  for (const auto& [q, list] : in)
    for (const auto& [c, s] : list) out[q].push_back({c, s});
  return out;
}

std::shared_ptr<const KnowledgeBase> kb_from_chunks(const std::string& path) {
  auto chunks = read_chunks_file(path);
  const auto emb = default_embedder();
  for (auto& c : chunks)
    if (!c.embedding) c.embedding = emb->embed(c.text);
  return std::make_shared<KnowledgeBase>(KnowledgeBase::from_chunks(std::move(chunks), emb));
}

py::list search(const KnowledgeBase& kb, const std::string& query, std::size_t k_each) {
  std::vector<Candidate> cands;
  {
    py::gil_scoped_release release;
    cands = multipath_retrieve(query, k_each, kb);
  }
  py::list out;
  for (const auto& c : cands) {
    py::list paths;
    for (auto p : c.provenance()) paths.append(std::string(to_string(p)));
    out.append(py::make_tuple(c.id.str(), c.fused_score, paths));
  }
  return out;
}

/// Everything answer_query needs, kept alive together.
class Pipeline {
 public:
  Pipeline(std::shared_ptr<const KnowledgeBase> kb, std::shared_ptr<MemoryBank> bank, const std::string& tools_path,
           const std::string& model_path, const std::string& mock_script, std::size_t jobs,
           std::optional<std::uint64_t> schedule_seed)
      : kb_(std::move(kb)), bank_(std::move(bank)) {
    if (!tools_path.empty()) tools_ = ToolRegistry::load(tools_path);
    model_ = model_path.empty() ? RerankModel::base() : RerankModel::load_file(model_path);
    gateway_ = make_gateway(nlohmann::json{{"backend", "mock"}}, mock_script);
    cfg_.jobs = jobs;
    cfg_.schedule_seed = schedule_seed;
  }

  std::string answer(const std::string& text, const std::vector<std::pair<std::string, std::string>>& history) {
    std::vector<ConversationTurn> turns;
    for (const auto& [role, t] : history) turns.push_back({role, t, 0});
    const Handles h{kb_.get(), bank_.get(), tools_ ? &*tools_ : nullptr, &model_, gateway_.get()};
    py::gil_scoped_release release;
    return answer_query(text, turns, h, cfg_).to_json().dump();
  }

 private:
  std::shared_ptr<const KnowledgeBase> kb_;
  std::shared_ptr<MemoryBank> bank_;
  std::optional<ToolRegistry> tools_;
  RerankModel model_;
  std::shared_ptr<LlmGateway> gateway_;
  PipelineConfig cfg_;
};

}  // namespace

PYBIND11_MODULE(_finrag, m) {
  m.doc() = "finrag core bindings; JSON-shaped results are returned as strings";

  // Later registrations are tried first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NotFound>(m, "NotFound", PyExc_KeyError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def("version", [] { return std::string(build_version()); });
  m.def("estimate_cost", [](int n, int t) { return estimate_cost(n, t).to_json().dump(); }, py::arg("n"),
        py::arg("t"));
  m.def("embed", [](const std::string& text) { return default_embedder()->embed(text).values; });
  m.def("cosine", [](const std::vector<double>& a, const std::vector<double>& b) {
    return cosine(EmbeddingVector{a}, EmbeddingVector{b});
  });
  m.def("sigmoid", &sigmoid);
  m.def("contrastive_loss",
        [](double pos, const std::vector<double>& negs) { return contrastive_loss(pos, negs); });
  m.def("subseq_similarity", [](const std::string& a, const std::string& b) { return subseq_similarity(a, b); });

  m.def(
      "evaluate",
      [](const PyRun& run, const Qrels& qrels, std::size_t k) {
        const auto r = evaluate(to_run(run), qrels, k);
        return std::map<std::string, double>{
            {"ndcg", r.ndcg}, {"mrr", r.mrr}, {"precision", r.precision}, {"recall", r.recall}};
      },
      py::arg("run"), py::arg("qrels"), py::arg("k"));

  py::class_<KnowledgeBase, std::shared_ptr<KnowledgeBase>>(m, "KnowledgeBase")
      .def_static("load", [](const std::string& dir) { return std::make_shared<KnowledgeBase>(KnowledgeBase::load(dir)); })
      .def_static("from_chunks_file",
                  [](const std::string& path) { return std::const_pointer_cast<KnowledgeBase>(kb_from_chunks(path)); })
      .def_static(
          "synthetic",
          [](std::uint64_t seed) {
            SyntheticConfig sc;
            sc.seed = seed;
            return std::make_shared<KnowledgeBase>(synthetic_kb(generate_synthetic(sc)));
          },
          py::arg("seed") = 7)
      .def("__len__", &KnowledgeBase::size)
      .def("save", &KnowledgeBase::save)
      .def("chunk_text", [](const KnowledgeBase& kb, const std::string& id) { return kb.chunk(ChunkId::parse(id)).text; })
      .def("search", &search, py::arg("query"), py::arg("k_each") = 10);

  py::class_<RerankModel>(m, "RerankModel")
      .def_static("base", &RerankModel::base)
      .def_static("zeros", &RerankModel::zeros)
      .def_static("load", &RerankModel::load_file)
      .def("save", &RerankModel::save_file)
      .def_readonly("version", &RerankModel::version)
      .def_readonly("w_yes", &RerankModel::w_yes)
      .def_readonly("w_no", &RerankModel::w_no)
      .def("score", [](const RerankModel& model, const std::string& q, const std::vector<std::string>& texts) {
        const FeatureExtractor fx(*default_embedder());
        return score_candidates(q, texts, model, fx);
      });

  py::class_<MemoryBank, std::shared_ptr<MemoryBank>>(m, "MemoryBank")
      .def_static("load", [](const std::string& path) { return std::make_shared<MemoryBank>(MemoryBank::load(path)); })
      .def("__len__", &MemoryBank::size)
      .def_property_readonly("periods", &MemoryBank::periods)
      .def("save", &MemoryBank::save)
      .def("to_json", [](const MemoryBank& b) { return b.to_json().dump(); })
      .def(
          "lookup",
          [](const MemoryBank& b, const std::string& q, std::optional<std::string> period) -> py::object {
            const auto r = lookup(q, period, b);
            if (!r.hit()) return py::none();
            return py::str(r.answer->to_json().dump());
          },
          py::arg("question"), py::arg("period") = py::none())
      .def(
          "miss_reason",
          [](const MemoryBank& b, const std::string& q, std::optional<std::string> period) {
            return lookup(q, period, b).miss_reason;
          },
          py::arg("question"), py::arg("period") = py::none())
      .def(
          "verify",
          [](MemoryBank& b, std::size_t question, const std::string& period, std::optional<std::string> value) {
            const auto p = b.find_period(period);
            if (!p) throw NotFound("unknown period: " + period);
            b.verify(question, *p, std::move(value));
          },
          py::arg("question"), py::arg("period"), py::arg("value") = py::none());

  m.def(
      "write_synthetic",
      [](const std::string& dir, std::uint64_t seed) {
        SyntheticConfig sc;
        sc.seed = seed;
        const auto d = generate_synthetic(sc);
        d.write(dir);
        return d.chunks.size();
      },
      py::arg("dir"), py::arg("seed") = 7);

  py::class_<Pipeline>(m, "Pipeline")
      .def(py::init<std::shared_ptr<const KnowledgeBase>, std::shared_ptr<MemoryBank>, std::string, std::string,
                    std::string, std::size_t, std::optional<std::uint64_t>>(),
           py::arg("kb"), py::arg("bank") = nullptr, py::arg("tools") = "", py::arg("model") = "",
           py::arg("mock_script") = "", py::arg("jobs") = 4, py::arg("schedule_seed") = py::none())
      .def("answer", &Pipeline::answer, py::arg("text"),
           py::arg("history") = std::vector<std::pair<std::string, std::string>>{});
}
