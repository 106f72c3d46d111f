#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fwgen/gateway.hpp"

namespace fwgen::judge {

/// Quality scores on a 1-5 scale with the judge's justification.
struct JudgeScores {
    int coherence = 0;
    int relevance = 0;
    int readability = 0;
    int grammar = 0;
    int overall = 0;
    std::string justification;

    bool operator==(const JudgeScores&) const = default;
};

struct NoveltyVerdict {
    int score = 0;  // 0-10
    std::string reason;

    bool operator==(const NoveltyVerdict&) const = default;
};

enum class NliLabel { entailment, neutral, contradiction };

std::string_view to_string(NliLabel label);

struct HallucinationVerdict {
    NliLabel label = NliLabel::entailment;
    bool hallucinated = false;
};

struct FeasibilityVerdict {
    bool feasible = false;
};

/// True for neutral and contradiction.
constexpr bool is_hallucination(NliLabel label) { return label != NliLabel::entailment; }

std::string quality_prompt(std::string_view generated, std::string_view ground_truth);
std::string novelty_prompt(std::string_view generated, std::string_view ground_truth);
std::string hallucination_prompt(std::string_view premise, std::string_view hypothesis);
std::string feasibility_prompt(std::string_view paper_text, std::string_view generated);

inline constexpr std::string_view kJsonReprompt = "Respond with only the JSON object, with no other text.";
inline constexpr std::string_view kLabelReprompt =
    "Respond with only the label: entailment, neutral, or contradiction.";
inline constexpr std::string_view kFeasibilityReprompt = "Respond with only 'feasible' or 'not feasible'.";

// Strict parsers. Missing or non-integer fields throw ParseError, scores out
// of range throw RangeError. No field is ever defaulted.
JudgeScores parse_quality(std::string_view response);
NoveltyVerdict parse_novelty(std::string_view response);
NliLabel parse_nli(std::string_view response);
bool parse_feasibility(std::string_view response);

/// Each judge_* call sends its prompt; if the response fails to parse it
/// re-prompts once in the same conversation, then lets ParseError escape.
JudgeScores judge_quality(std::string_view generated, std::string_view ground_truth, llm::Gateway& gateway,
                          const std::string& model);
NoveltyVerdict judge_novelty(std::string_view generated, std::string_view ground_truth, llm::Gateway& gateway,
                             const std::string& model);
/// Premise is the paper text followed by the ground truth; hypothesis is the generation.
HallucinationVerdict judge_hallucination(std::string_view paper_text, std::string_view ground_truth,
                                         std::string_view generated, llm::Gateway& gateway, const std::string& model);
FeasibilityVerdict judge_feasibility(std::string_view paper_text, std::string_view generated, llm::Gateway& gateway,
                                     const std::string& model);

struct Rate {
    std::size_t positive = 0;
    std::size_t total = 0;
    /// positive / total × 100.
    double percent = 0.0;
};

/// Throws InvalidArgument on empty input.
Rate rate_of(std::span<const bool> flags);

struct CorpusRates {
    std::optional<Rate> hallucination;
    std::optional<Rate> feasibility;
};

/// Per-record verdicts; either side may be missing for a record.
struct VerdictRecord {
    std::optional<bool> hallucinated;
    std::optional<bool> feasible;
};

/// Throws InvalidArgument when `verdicts` is empty.
CorpusRates aggregate_rates(std::span<const VerdictRecord> verdicts);

/// Two decimals, e.g. "23.08".
std::string format_rate(const Rate& rate);

nlohmann::json to_json(const JudgeScores& s);
nlohmann::json to_json(const NoveltyVerdict& v);
JudgeScores judge_scores_from_json(const nlohmann::json& j);
NoveltyVerdict novelty_from_json(const nlohmann::json& j);

}  // namespace fwgen::judge
