#pragma once

#include <string_view>

// System instructions for each gateway task. The user message carries the
// text being operated on.
namespace finrag::prompts {

std::string_view table_to_text();
std::string_view figure_to_text();
std::string_view coreference();
std::string_view section_summary();
std::string_view query_rewrite();
std::string_view decompose();
std::string_view tool_select();
std::string_view subquery_answer();
std::string_view direct_answer();
std::string_view merge_answers();
/// Relevance annotation with a strict two-line reply:
///   Relevant: Yes|No
///   Reason: <one sentence>
std::string_view relevance_annotation();
std::string_view bank_value();

}  // namespace finrag::prompts
