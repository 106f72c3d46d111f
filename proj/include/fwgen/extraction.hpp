#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fwgen/corpus.hpp"
#include "fwgen/gateway.hpp"

namespace fwgen {

enum class ExtractionMode { explicit_section, implicit_keyword, none };

std::string_view to_string(ExtractionMode mode);
ExtractionMode parse_extraction_mode(std::string_view name);

/// Extraction lineage of one paper: tool text, LLM-refined text, raw reviews,
/// validated reviewer goals and the merged ground truth.
struct FutureWorkRecord {
    std::string paper_id;
    std::string tool_extracted;     // F_t
    std::string llm_extracted;      // F_g
    std::string review_raw;         // O_Ft
    std::string review_candidates;  // first review pass, before goal validation
    std::string review_goals;       // O_Fg
    std::string merged_ground_truth;
    ExtractionMode extraction_mode = ExtractionMode::none;
    bool valid = true;
    std::vector<std::string> flags;

    bool operator==(const FutureWorkRecord&) const = default;
};

nlohmann::json to_json(const FutureWorkRecord& record);
FutureWorkRecord lineage_from_json(const nlohmann::json& j);

/// Heading and keyword rules for the tool-based pass. All matching is
/// case-insensitive substring matching.
struct ExtractionRules {
    std::vector<std::string> explicit_headings{"future work", "future direction"};
    std::vector<std::string> denied_headings{"abstract", "introduction", "related work", "method"};
    std::vector<std::string> keywords{"future"};
    std::vector<std::string> stop_keywords{"grant", "discussion", "acknowledgements", "acknowledgments"};
};

struct RuleExtraction {
    std::string text;
    ExtractionMode mode = ExtractionMode::none;
};

/// Explicit mode returns the full text of every future-work-titled section.
/// Otherwise, in each eligible section, the first keyword sentence and every
/// later sentence up to (excluding) the first stop-keyword sentence are taken;
/// spans from several sections are joined in document order.
RuleExtraction extract_future_work_rule_based(const PaperRecord& paper, const ExtractionRules& rules = {});

struct SubsetVerdict {
    bool ok = true;
    std::vector<std::string> violations;
};

/// Every sentence of `extracted` must occur in `source` after normalization.
SubsetVerdict verify_extractive_subset(std::string_view source, std::string_view extracted);

struct CheckedText {
    std::string text;
    SubsetVerdict verdict;
};

std::string extractor_prompt(std::string_view tool_text);
std::string review_suggestion_prompt(std::string_view reviews);
std::string long_term_goal_prompt(std::string_view candidates);
std::string merge_prompt(std::string_view author_future_work, std::string_view review_goals);

/// F_t → F_g. Empty input makes no gateway call.
CheckedText llm_refine_extraction(std::string_view tool_text, llm::Gateway& gateway, const std::string& model);

struct ReviewGoals {
    std::string raw;         // O_Ft
    std::string candidates;  // first-pass suggestions
};

/// Reviews are concatenated in order, separated by a blank line.
inline constexpr std::string_view kReviewSeparator = "\n\n";

ReviewGoals extract_review_goals(const ReviewSet& reviews, llm::Gateway& gateway, const std::string& model);

/// Second pass keeping only long-term goals; output checked against `candidates`.
CheckedText validate_long_term_goals(std::string_view candidates, llm::Gateway& gateway, const std::string& model);

/// Master-agent merge. When one side is empty the other passes through
/// without a gateway call. Repeated sentences in the model output are dropped
/// and every remaining sentence must trace to one of the inputs.
CheckedText merge_ground_truth(std::string_view author_future_work, std::string_view review_goals,
                               llm::Gateway& gateway, const std::string& model);

/// Runs the whole lineage for one paper. Subset violations and an empty
/// ground truth mark the record invalid instead of throwing.
FutureWorkRecord build_lineage(const PaperRecord& paper, const ReviewSet* reviews, llm::Gateway& gateway,
                               const llm::RoleModels& models, const ExtractionRules& rules = {});

}  // namespace fwgen
