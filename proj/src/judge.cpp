#include "fwgen/judge.hpp"

#include <cmath>
#include <cstdio>

#include "fwgen/errors.hpp"
#include "fwgen/text.hpp"

namespace fwgen::judge {
namespace {

nlohmann::json extract_json_object(std::string_view response) {
    const auto open = response.find('{');
    const auto close = response.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
        throw ParseError("judge response contains no JSON object");
    }
    try {
        auto j = nlohmann::json::parse(response.substr(open, close - open + 1));
        if (!j.is_object()) {
            throw ParseError("judge response is not a JSON object");
        }
        return j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("judge response JSON is malformed: ") + e.what());
    }
}

int integer_field(const nlohmann::json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end()) {
        throw ParseError(std::string("judge response is missing '") + key + "'");
    }
    if (it->is_number_integer()) {
        return it->get<int>();
    }
    if (it->is_number_float()) {
        const double v = it->get<double>();
        if (std::isfinite(v) && std::floor(v) == v) {
            return static_cast<int>(v);
        }
    }
    throw ParseError(std::string("judge field '") + key + "' is not an integer");
}

std::string text_field(const nlohmann::json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
        throw ParseError(std::string("judge response is missing string field '") + key + "'");
    }
    auto value = text::trim(it->get<std::string>());
    if (value.empty()) {
        throw ParseError(std::string("judge field '") + key + "' is empty");
    }
    return value;
}

void check_range(const char* key, int value, int lo, int hi) {
    if (value < lo || value > hi) {
        throw RangeError(std::string("judge score '") + key + "' = " + std::to_string(value) + " is outside [" +
                         std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
}

// Lowercase, trimmed, internal whitespace collapsed, surrounding quotes,
// emphasis markers and punctuation removed.
std::string normalize_verdict(std::string_view response) {
    auto s = text::normalize_sentence(response);
    constexpr std::string_view kStrip = "\"'`*_.!?,;:()[] ";
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && kStrip.find(s[b]) != std::string_view::npos) {
        ++b;
    }
    while (e > b && kStrip.find(s[e - 1]) != std::string_view::npos) {
        --e;
    }
    return s.substr(b, e - b);
}

template <typename Parse>
auto ask_with_reprompt(llm::Gateway& gateway, const std::string& model, std::string prompt, std::string_view reprompt,
                       Parse&& parse) {
    llm::ChatRequest request;
    request.model = model;
    request.messages.push_back({"user", std::move(prompt)});
    auto first = gateway.chat(request).text;
    try {
        return parse(first);
    } catch (const ParseError&) {
        request.messages.push_back({"assistant", std::move(first)});
        request.messages.push_back({"user", std::string(reprompt)});
    }
    const auto second = gateway.chat(request).text;
    try {
        return parse(second);
    } catch (const ParseError& e) {
        throw ParseError(std::string("unparseable judge response after re-prompt: ") + e.what());
    }
}

}  // namespace

std::string_view to_string(NliLabel label) {
    switch (label) {
        case NliLabel::entailment:
            return "entailment";
        case NliLabel::neutral:
            return "neutral";
        case NliLabel::contradiction:
            return "contradiction";
    }
    return "neutral";
}

std::string quality_prompt(std::string_view generated, std::string_view ground_truth) {
    return "Instructions: You are provided with two texts for each pair: one is generated by a machine "
           "(Machine-Generated Text), and the other is the original or ground truth text (Ground Truth). After "
           "reviewing each text, assign a score from 1 to 5 based on the criteria outlined below.\n\n"
           "Scoring Criteria:\n"
           "1. Coherence and Logic\n"
           "2. Relevance and Accuracy\n"
           "3. Readability and Style\n"
           "4. Grammatical Correctness\n"
           "5. Overall Impression\n"
           "For each criterion, 5 means the text is exceptional (for coherence: the ideas flow logically and "
           "are well connected), 3 means it is acceptable but has occasional lapses (for coherence: occasional "
           "lapses in logic or flow), and 1 means it is poor (for coherence: disjointed or frequently "
           "illogical).\n\n"
           "Task: For each text pair, rate the Machine-Generated Text on each criterion and provide a final "
           "overall score out of 5. Provide a brief justification for your scores, highlighting strengths and "
           "weaknesses observed in the machine-generated text relative to the ground truth.\n\n"
           "Present your response as a JSON object with the integer keys coherence, relevance, readability, "
           "grammar and overall (each from 1 to 5) and the string key justification.\n\n"
           "Machine-Generated Text:\n" +
           std::string(generated) + "\n\nGround Truth:\n" + std::string(ground_truth);
}

std::string novelty_prompt(std::string_view generated, std::string_view ground_truth) {
    return "You are an expert in evaluating research content for novelty and innovation. I have two sets of "
           "text provided below:\n\n"
           "Ground Truth Future Work:\n" +
           std::string(ground_truth) + "\n\nLLM-Generated Future Work:\n" + std::string(generated) +
           "\n\nYour task is to compare the LLM-generated future work to the Ground Truth future work and assess "
           "its novelty relative to the Ground Truth future work. Follow these steps:\n\n"
           "Evaluate Novelty: Identify unique ideas, approaches, or directions in the LLM-generated future work "
           "that are not present in the Ground Truth future work. Analyze how innovative or distinct these "
           "additions are in the context of the research field.\n\n"
           "Quantify Novelty: Provide a novelty score (0-10) for the LLM-generated future work, where 0 "
           "indicates complete overlap with the ground truth future work (no new ideas) and 10 indicates "
           "entirely new and distinct ideas. Justify the score with a clear reason explaining the extent of "
           "novel contributions or lack thereof.\n"
           "Present your response in a JSON object with the keys score (integer from 0-10) and reason (a "
           "concise explanation of the score).";
}

std::string hallucination_prompt(std::string_view premise, std::string_view hypothesis) {
    return "You are a natural language inference (NLI) classifier. Given a premise and hypothesis, respond "
           "with exactly one word: \"entailment\", \"neutral\", or \"contradiction\".\n\n"
           "Premise: " +
           std::string(premise) + "\n\nHypothesis: " + std::string(hypothesis);
}

std::string feasibility_prompt(std::string_view paper_text, std::string_view generated) {
    return "You are an expert reviewer. Below is the content of a research paper followed by a suggestion for "
           "future work. Evaluate whether the future work is executable in the context of the paper's "
           "methodology, dataset, or other components. Respond with exactly one word: 'feasible' or 'not "
           "feasible'.\n\n"
           "Paper Content: " +
           std::string(paper_text) + "\n\nFuture Work Suggestion: " + std::string(generated);
}

JudgeScores parse_quality(std::string_view response) {
    const auto j = extract_json_object(response);
    JudgeScores s;
    s.coherence = integer_field(j, "coherence");
    s.relevance = integer_field(j, "relevance");
    s.readability = integer_field(j, "readability");
    s.grammar = integer_field(j, "grammar");
    s.overall = integer_field(j, "overall");
    s.justification = text_field(j, "justification");
    check_range("coherence", s.coherence, 1, 5);
    check_range("relevance", s.relevance, 1, 5);
    check_range("readability", s.readability, 1, 5);
    check_range("grammar", s.grammar, 1, 5);
    check_range("overall", s.overall, 1, 5);
    return s;
}

NoveltyVerdict parse_novelty(std::string_view response) {
    const auto j = extract_json_object(response);
    NoveltyVerdict v;
    v.score = integer_field(j, "score");
    v.reason = text_field(j, "reason");
    check_range("score", v.score, 0, 10);
    return v;
}

NliLabel parse_nli(std::string_view response) {
    const auto word = normalize_verdict(response);
    if (word == "entailment") {
        return NliLabel::entailment;
    }
    if (word == "neutral") {
        return NliLabel::neutral;
    }
    if (word == "contradiction") {
        return NliLabel::contradiction;
    }
    throw ParseError("not an NLI label: '" + std::string(response.substr(0, 80)) + "'");
}

bool parse_feasibility(std::string_view response) {
    const auto word = normalize_verdict(response);
    if (word == "feasible") {
        return true;
    }
    if (word == "not feasible") {
        return false;
    }
    throw ParseError("not a feasibility verdict: '" + std::string(response.substr(0, 80)) + "'");
}

JudgeScores judge_quality(std::string_view generated, std::string_view ground_truth, llm::Gateway& gateway,
                          const std::string& model) {
    if (text::trim(generated).empty() || text::trim(ground_truth).empty()) {
        throw InvalidArgument("judge_quality: generated text and ground truth must be non-empty");
    }
    return ask_with_reprompt(gateway, model, quality_prompt(generated, ground_truth), kJsonReprompt,
                             [](std::string_view r) { return parse_quality(r); });
}

NoveltyVerdict judge_novelty(std::string_view generated, std::string_view ground_truth, llm::Gateway& gateway,
                             const std::string& model) {
    if (text::trim(generated).empty() || text::trim(ground_truth).empty()) {
        throw InvalidArgument("judge_novelty: generated text and ground truth must be non-empty");
    }
    return ask_with_reprompt(gateway, model, novelty_prompt(generated, ground_truth), kJsonReprompt,
                             [](std::string_view r) { return parse_novelty(r); });
}

HallucinationVerdict judge_hallucination(std::string_view paper_text, std::string_view ground_truth,
                                         std::string_view generated, llm::Gateway& gateway, const std::string& model) {
    if (text::trim(generated).empty()) {
        throw InvalidArgument("judge_hallucination: generated text must be non-empty");
    }
    std::string premise(paper_text);
    if (!ground_truth.empty()) {
        premise += "\n\n";
        premise += ground_truth;
    }
    const auto label = ask_with_reprompt(gateway, model, hallucination_prompt(premise, generated), kLabelReprompt,
                                         [](std::string_view r) { return parse_nli(r); });
    return {label, is_hallucination(label)};
}

FeasibilityVerdict judge_feasibility(std::string_view paper_text, std::string_view generated, llm::Gateway& gateway,
                                     const std::string& model) {
    if (text::trim(paper_text).empty() || text::trim(generated).empty()) {
        throw InvalidArgument("judge_feasibility: paper text and generated text must be non-empty");
    }
    const bool feasible = ask_with_reprompt(gateway, model, feasibility_prompt(paper_text, generated),
                                            kFeasibilityReprompt, [](std::string_view r) { return parse_feasibility(r); });
    return {feasible};
}

Rate rate_of(std::span<const bool> flags) {
    if (flags.empty()) {
        throw InvalidArgument("rate of an empty verdict list");
    }
    Rate r;
    r.total = flags.size();
    for (const bool f : flags) {
        r.positive += f ? 1 : 0;
    }
    r.percent = 100.0 * static_cast<double>(r.positive) / static_cast<double>(r.total);
    return r;
}

CorpusRates aggregate_rates(std::span<const VerdictRecord> verdicts) {
    if (verdicts.empty()) {
        throw InvalidArgument("aggregate_rates: no verdicts");
    }
    Rate hallucination;
    Rate feasibility;
    for (const auto& v : verdicts) {
        if (v.hallucinated) {
            ++hallucination.total;
            hallucination.positive += *v.hallucinated ? 1 : 0;
        }
        if (v.feasible) {
            ++feasibility.total;
            feasibility.positive += *v.feasible ? 1 : 0;
        }
    }
    auto finish = [](Rate r) -> std::optional<Rate> {
        if (r.total == 0) {
            return std::nullopt;
        }
        r.percent = 100.0 * static_cast<double>(r.positive) / static_cast<double>(r.total);
        return r;
    };
    return {finish(hallucination), finish(feasibility)};
}

std::string format_rate(const Rate& rate) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", rate.percent);
    return buf;
}

nlohmann::json to_json(const JudgeScores& s) {
    return {{"coherence", s.coherence}, {"relevance", s.relevance}, {"readability", s.readability},
            {"grammar", s.grammar},     {"overall", s.overall},     {"justification", s.justification}};
}

nlohmann::json to_json(const NoveltyVerdict& v) { return {{"score", v.score}, {"reason", v.reason}}; }

JudgeScores judge_scores_from_json(const nlohmann::json& j) { return parse_quality(j.dump()); }

NoveltyVerdict novelty_from_json(const nlohmann::json& j) { return parse_novelty(j.dump()); }

}  // namespace fwgen::judge
