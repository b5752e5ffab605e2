#include "finrag/prompts.hpp"

namespace finrag::prompts {

std::string_view table_to_text() {
  return "You convert a table extracted from a financial filing into plain English "
         "statements. State the main figures, the direction and size of changes between "
         "periods, and any relationships between rows. Do not invent numbers. Reply with "
         "the statements only.";
}

std::string_view figure_to_text() {
  return "You write a structured caption for a chart or figure extracted from a financial "
         "filing. Describe what is plotted, the key values, and the trend it shows. Reply "
         "with the caption only.";
}

std::string_view coreference() {
  return "Rewrite the passage so that every pronoun and vague reference (it, they, the "
         "company, this segment) is replaced by the entity it refers to, using the section "
         "context provided earlier. Change nothing else. Reply with the rewritten passage "
         "only.";
}

std::string_view section_summary() {
  return "Summarize this section of a financial filing in two or three sentences. Name the "
         "company, the reporting period, and the topics covered. Reply with the summary only.";
}

std::string_view query_rewrite() {
  return "Rewrite the user's latest question as a single self-contained English question. "
         "Translate it to English if needed and resolve references to earlier turns of the "
         "conversation. Reply with the rewritten question only.";
}

std::string_view decompose() {
  return "Split the question into the smallest self-contained sub-questions. Assign each a "
         "route: MemoryBank (a frequently asked quantitative fact), Tool (needs live data "
         "from one of the listed tools), DeepRetrieval (needs the filings), or Direct "
         "(general knowledge). Reply with JSON: {\"subqueries\": [{\"text\": ..., "
         "\"route\": ...}]}.";
}

std::string_view tool_select() {
  return "Choose the tool that can answer the request and call it with suitable arguments. "
         "If no tool applies, reply in text.";
}

std::string_view subquery_answer() {
  return "Answer the question using only the numbered evidence passages that follow it. Cite "
         "passage numbers. If the evidence is insufficient, say so.";
}

std::string_view direct_answer() {
  return "Answer the question from general financial knowledge. Be brief and say when the "
         "answer may be out of date.";
}

std::string_view merge_answers() {
  return "Combine the labeled partial answers into one coherent answer to the original "
         "question. Keep every figure and its source label; do not add new facts.";
}

std::string_view relevance_annotation() {
  return "You are an expert annotator of financial documents. Decide whether the chunk is "
         "relevant to the query.\n"
         "Relevant when the chunk: directly states the requested fact; gives context needed "
         "to interpret it; or covers the requested metric for an adjacent or overlapping "
         "time period.\n"
         "Not relevant when the chunk: discusses the topic only in generic terms; or "
         "mentions the entity or metric in passing while being about something else.\n"
         "Reply with exactly two lines and nothing else:\n"
         "Relevant: Yes or No\n"
         "Reason: one sentence";
}

std::string_view bank_value() {
  return "Using only the evidence passages that follow, state the value asked for by the "
         "question for the given period, as a short phrase with units. If the evidence does "
         "not contain it, reply UNKNOWN.";
}

}  // namespace finrag::prompts
