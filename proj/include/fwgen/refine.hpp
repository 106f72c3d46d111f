#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fwgen/gateway.hpp"
#include "fwgen/generation.hpp"
#include "fwgen/judge.hpp"

namespace fwgen::refine {

struct RefinementPolicy {
    int quality_threshold = 3;   // 1-5
    int novelty_threshold = 7;   // 0-10
    int max_refinements = 1;     // 0-2

    /// Throws InvalidArgument when a field is out of range.
    void validate() const;
};

struct RefinementDecision {
    bool refine = false;
    /// Triggering justifications joined by "\n"; empty when refine is false.
    std::string feedback;
};

/// Refines when any quality score is at or below the quality threshold or the
/// novelty score is at or below the novelty threshold.
RefinementDecision needs_refinement(const judge::JudgeScores& scores, const judge::NoveltyVerdict& novelty,
                                    const RefinementPolicy& policy);

struct IterationRecord {
    generation::GenerationTrace trace;
    judge::JudgeScores quality;
    judge::NoveltyVerdict novelty;
    RefinementDecision decision;
};

struct LoopResult {
    std::vector<IterationRecord> iterations;
    /// Set when a gateway or judge error ended the loop; completed iterations are kept.
    std::optional<std::string> error;
};

struct LoopModels {
    generation::GenerationConfig generator;
    std::string judge_model = "gpt-4o-mini";
};

/// Generates, judges against `ground_truth`, and regenerates with the judge's
/// feedback while refinement is needed and the policy allows another pass.
LoopResult run_refinement_loop(const generation::PromptBundle& bundle, const std::string& ground_truth,
                               const RefinementPolicy& policy, llm::Gateway& gateway, const LoopModels& models,
                               const generation::PromptTemplates& templates = {});

nlohmann::json to_json(const IterationRecord& record);

}  // namespace fwgen::refine
