#include "fwgen/refine.hpp"

#include <exception>

#include <spdlog/spdlog.h>

#include "fwgen/errors.hpp"

namespace fwgen::refine {

void RefinementPolicy::validate() const {
    if (quality_threshold < 1 || quality_threshold > 5) {
        throw InvalidArgument("quality_threshold must be in [1, 5], got " + std::to_string(quality_threshold));
    }
    if (novelty_threshold < 0 || novelty_threshold > 10) {
        throw InvalidArgument("novelty_threshold must be in [0, 10], got " + std::to_string(novelty_threshold));
    }
    if (max_refinements < 0 || max_refinements > 2) {
        throw InvalidArgument("max_refinements must be in [0, 2], got " + std::to_string(max_refinements));
    }
}

RefinementDecision needs_refinement(const judge::JudgeScores& s, const judge::NoveltyVerdict& novelty,
                                    const RefinementPolicy& policy) {
    const int t = policy.quality_threshold;
    const bool quality_low =
        s.coherence <= t || s.relevance <= t || s.readability <= t || s.grammar <= t || s.overall <= t;
    const bool novelty_low = novelty.score <= policy.novelty_threshold;

    RefinementDecision d;
    d.refine = quality_low || novelty_low;
    if (quality_low && !s.justification.empty()) {
        d.feedback = s.justification;
    }
    if (novelty_low && !novelty.reason.empty()) {
        if (!d.feedback.empty()) {
            d.feedback += "\n";
        }
        d.feedback += novelty.reason;
    }
    return d;
}

LoopResult run_refinement_loop(const generation::PromptBundle& bundle, const std::string& ground_truth,
                               const RefinementPolicy& policy, llm::Gateway& gateway, const LoopModels& models,
                               const generation::PromptTemplates& templates) {
    policy.validate();
    LoopResult result;
    generation::PromptBundle prompt = bundle;
    std::optional<std::string> feedback;
    try {
        for (std::size_t iteration = 1;; ++iteration) {
            IterationRecord rec;
            rec.trace = generation::generate_future_work(prompt, gateway, models.generator, iteration, feedback);
            rec.quality = judge::judge_quality(rec.trace.output_text, ground_truth, gateway, models.judge_model);
            rec.novelty = judge::judge_novelty(rec.trace.output_text, ground_truth, gateway, models.judge_model);
            rec.decision = needs_refinement(rec.quality, rec.novelty, policy);
            const bool again = rec.decision.refine && iteration <= static_cast<std::size_t>(policy.max_refinements);
            result.iterations.push_back(rec);
            if (!again) {
                break;
            }
            if (rec.decision.feedback.empty()) {
                throw ParseError("judge requested refinement without any justification text");
            }
            feedback = rec.decision.feedback;
            prompt = generation::assemble_refinement_prompt(bundle, *feedback, templates);
        }
    } catch (const std::exception& e) {
        spdlog::error("{}: refinement loop stopped after {} iteration(s): {}", bundle.paper_id,
                      result.iterations.size(), e.what());
        result.error = e.what();
    }
    return result;
}

nlohmann::json to_json(const IterationRecord& r) {
    nlohmann::json j;
    j["paper_id"] = r.trace.paper_id;
    j["iteration"] = r.trace.iteration;
    j["mode"] = generation::to_string(r.trace.prompt.mode);
    j["prompt"] = generation::render(r.trace.prompt);
    j["tokens"] = generation::token_report(r.trace.prompt);
    nlohmann::json retrieved = nlohmann::json::array();
    for (const auto& c : r.trace.prompt.retrieved) {
        retrieved.push_back({{"chunk_id", c.chunk.chunk_id},
                             {"paper_id", c.chunk.paper_id},
                             {"rank", c.rank},
                             {"fused_score", c.fused_score}});
    }
    j["retrieved"] = retrieved;
    j["feedback_used"] = r.trace.feedback_used ? nlohmann::json(*r.trace.feedback_used) : nlohmann::json(nullptr);
    j["output"] = r.trace.output_text;
    j["warnings"] = r.trace.warnings;
    j["quality"] = judge::to_json(r.quality);
    j["novelty"] = judge::to_json(r.novelty);
    j["refine"] = r.decision.refine;
    j["feedback"] = r.decision.feedback;
    return j;
}

}  // namespace fwgen::refine
