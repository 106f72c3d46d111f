#include "fwgen/extraction.hpp"

#include <unordered_set>

#include <spdlog/spdlog.h>

#include "fwgen/errors.hpp"
#include "fwgen/text.hpp"

namespace fwgen {
namespace {

bool matches_any(std::string_view haystack, const std::vector<std::string>& needles) {
    const auto lower = text::to_lower(haystack);
    for (const auto& n : needles) {
        if (lower.find(text::to_lower(n)) != std::string::npos) {
            return true;
        }
    }
    return false;
}

std::unordered_set<std::string> normalized_set(std::string_view s) {
    std::unordered_set<std::string> out;
    for (const auto& sentence : text::split_sentences(s)) {
        out.insert(text::normalize_sentence(sentence));
    }
    return out;
}

SubsetVerdict check_subset(const std::unordered_set<std::string>& source, std::string_view extracted) {
    SubsetVerdict verdict;
    for (const auto& sentence : text::split_sentences(extracted)) {
        if (!source.contains(text::normalize_sentence(sentence))) {
            verdict.violations.push_back(sentence);
        }
    }
    verdict.ok = verdict.violations.empty();
    return verdict;
}

std::string ask(llm::Gateway& gateway, const std::string& model, std::string prompt) {
    llm::ChatRequest request;
    request.model = model;
    request.messages.push_back({"user", std::move(prompt)});
    return text::trim(gateway.chat(request).text);
}

// Drops sentences whose normalization already appeared earlier.
std::string dedupe_sentences(const std::string& s) {
    const auto sentences = text::split_sentences(s);
    std::unordered_set<std::string> seen;
    std::vector<std::string> kept;
    for (const auto& sentence : sentences) {
        if (seen.insert(text::normalize_sentence(sentence)).second) {
            kept.push_back(sentence);
        }
    }
    return kept.size() == sentences.size() ? s : text::join(kept, " ");
}

}  // namespace

std::string_view to_string(ExtractionMode mode) {
    switch (mode) {
        case ExtractionMode::explicit_section:
            return "explicit_section";
        case ExtractionMode::implicit_keyword:
            return "implicit_keyword";
        case ExtractionMode::none:
            return "none";
    }
    return "none";
}

ExtractionMode parse_extraction_mode(std::string_view name) {
    if (name == "explicit_section") {
        return ExtractionMode::explicit_section;
    }
    if (name == "implicit_keyword") {
        return ExtractionMode::implicit_keyword;
    }
    if (name == "none") {
        return ExtractionMode::none;
    }
    throw InvalidArgument("unknown extraction mode '" + std::string(name) + "'");
}

nlohmann::json to_json(const FutureWorkRecord& r) {
    return {
        {"paper_id", r.paper_id},
        {"F_t", r.tool_extracted},
        {"F_g", r.llm_extracted},
        {"O_Ft", r.review_raw},
        {"O_Ft_candidates", r.review_candidates},
        {"O_Fg", r.review_goals},
        {"merged", r.merged_ground_truth},
        {"extraction_mode", to_string(r.extraction_mode)},
        {"valid", r.valid},
        {"flags", r.flags},
    };
}

FutureWorkRecord lineage_from_json(const nlohmann::json& j) {
    FutureWorkRecord r;
    r.paper_id = j.at("paper_id").get<std::string>();
    r.tool_extracted = j.at("F_t").get<std::string>();
    r.llm_extracted = j.at("F_g").get<std::string>();
    r.review_raw = j.at("O_Ft").get<std::string>();
    r.review_candidates = j.value("O_Ft_candidates", std::string{});
    r.review_goals = j.at("O_Fg").get<std::string>();
    r.merged_ground_truth = j.at("merged").get<std::string>();
    r.extraction_mode = parse_extraction_mode(j.at("extraction_mode").get<std::string>());
    r.valid = j.at("valid").get<bool>();
    r.flags = j.value("flags", std::vector<std::string>{});
    return r;
}

RuleExtraction extract_future_work_rule_based(const PaperRecord& paper, const ExtractionRules& rules) {
    std::vector<std::string> explicit_parts;
    for (const auto& section : paper.sections) {
        if (matches_any(section.heading, rules.explicit_headings)) {
            auto body = text::trim(section.text);
            if (!body.empty()) {
                explicit_parts.push_back(std::move(body));
            }
        }
    }
    if (!explicit_parts.empty()) {
        return {text::join(explicit_parts, "\n\n"), ExtractionMode::explicit_section};
    }

    std::vector<std::string> spans;
    for (const auto& section : paper.sections) {
        if (matches_any(section.heading, rules.denied_headings)) {
            continue;
        }
        const auto sentences = text::split_sentences(section.text);
        std::size_t first = sentences.size();
        for (std::size_t i = 0; i < sentences.size(); ++i) {
            if (matches_any(sentences[i], rules.keywords)) {
                first = i;
                break;
            }
        }
        if (first == sentences.size()) {
            continue;
        }
        std::vector<std::string> span{sentences[first]};
        for (std::size_t i = first + 1; i < sentences.size(); ++i) {
            if (matches_any(sentences[i], rules.stop_keywords)) {
                break;
            }
            span.push_back(sentences[i]);
        }
        spans.push_back(text::join(span, " "));
    }
    if (spans.empty()) {
        return {"", ExtractionMode::none};
    }
    return {text::join(spans, " "), ExtractionMode::implicit_keyword};
}

SubsetVerdict verify_extractive_subset(std::string_view source, std::string_view extracted) {
    return check_subset(normalized_set(source), extracted);
}

std::string extractor_prompt(std::string_view tool_text) {
    return "You are an extractor. The text below was extracted from a scientific paper by a rule-based tool "
           "and may contain sentences unrelated to future work. Extract the sentences only related to future "
           "work, without generating any sentences. Copy each kept sentence verbatim and keep the original "
           "order. If no sentence is related to future work, respond with an empty message.\n\nText:\n" +
           std::string(tool_text);
}

std::string review_suggestion_prompt(std::string_view reviews) {
    return "The text below contains peer reviews of a scientific paper. Extract the potential future-work "
           "suggestions that the reviewers make for the authors. Write each suggestion as a complete "
           "sentence, one per line, with no commentary. If there are no suggestions, respond with an empty "
           "message.\n\nReviews:\n" +
           std::string(reviews);
}

std::string long_term_goal_prompt(std::string_view candidates) {
    return "The sentences below are future-work suggestions extracted from peer reviews. Keep only the "
           "sentences that describe true long-term research goals. Remove short-term extensions, "
           "implementation notes and minor improvements (for example fixing typos, adding citations or "
           "clarifying notation). Copy the kept sentences verbatim without generating any new sentences. If "
           "none remain, respond with an empty message.\n\nSuggestions:\n" +
           std::string(candidates);
}

std::string merge_prompt(std::string_view author_future_work, std::string_view review_goals) {
    return "You are a master agent. Concatenate the author-mentioned future work with the long-term goals "
           "from peer reviews below, without generating any new content. Identify overlapping or duplicate "
           "statements and keep only one copy of each. Copy every kept sentence verbatim.\n\n"
           "Author-mentioned future work:\n" +
           std::string(author_future_work) + "\n\nLong-term goals from peer reviews:\n" + std::string(review_goals);
}

CheckedText llm_refine_extraction(std::string_view tool_text, llm::Gateway& gateway, const std::string& model) {
    if (text::trim(tool_text).empty()) {
        return {};
    }
    CheckedText out;
    out.text = ask(gateway, model, extractor_prompt(tool_text));
    out.verdict = verify_extractive_subset(tool_text, out.text);
    return out;
}

ReviewGoals extract_review_goals(const ReviewSet& reviews, llm::Gateway& gateway, const std::string& model) {
    ReviewGoals out;
    out.raw = text::join(reviews.reviews, kReviewSeparator);
    if (text::trim(out.raw).empty()) {
        return out;
    }
    out.candidates = ask(gateway, model, review_suggestion_prompt(out.raw));
    return out;
}

CheckedText validate_long_term_goals(std::string_view candidates, llm::Gateway& gateway, const std::string& model) {
    if (text::trim(candidates).empty()) {
        return {};
    }
    CheckedText out;
    out.text = ask(gateway, model, long_term_goal_prompt(candidates));
    out.verdict = verify_extractive_subset(candidates, out.text);
    return out;
}

CheckedText merge_ground_truth(std::string_view author_future_work, std::string_view review_goals,
                               llm::Gateway& gateway, const std::string& model) {
    const bool has_author = !text::trim(author_future_work).empty();
    const bool has_review = !text::trim(review_goals).empty();
    if (!has_author && !has_review) {
        return {};
    }
    if (!has_review) {
        return {std::string(author_future_work), {}};
    }
    if (!has_author) {
        return {std::string(review_goals), {}};
    }
    CheckedText out;
    out.text = dedupe_sentences(ask(gateway, model, merge_prompt(author_future_work, review_goals)));
    auto source = normalized_set(author_future_work);
    source.merge(normalized_set(review_goals));
    out.verdict = check_subset(source, out.text);
    return out;
}

FutureWorkRecord build_lineage(const PaperRecord& paper, const ReviewSet* reviews, llm::Gateway& gateway,
                               const llm::RoleModels& models, const ExtractionRules& rules) {
    FutureWorkRecord record;
    record.paper_id = paper.paper_id;
    auto tool = extract_future_work_rule_based(paper, rules);
    record.tool_extracted = std::move(tool.text);
    record.extraction_mode = tool.mode;

    auto refined = llm_refine_extraction(record.tool_extracted, gateway, models.extractor);
    record.llm_extracted = std::move(refined.text);
    if (!refined.verdict.ok) {
        record.valid = false;
        record.flags.push_back("F_g_not_extractive");
        spdlog::warn("{}: extractor output adds {} sentence(s) not in F_t", paper.paper_id,
                     refined.verdict.violations.size());
    }

    if (reviews != nullptr) {
        if (reviews->paper_id != paper.paper_id) {
            throw InvalidArgument("build_lineage: reviews for '" + reviews->paper_id + "' passed for paper '" +
                                  paper.paper_id + "'");
        }
        auto goals = extract_review_goals(*reviews, gateway, models.extractor);
        record.review_raw = std::move(goals.raw);
        record.review_candidates = std::move(goals.candidates);
        // Reviewer suggestions may be reworded by the first pass; record it, do not reject.
        const auto reworded = verify_extractive_subset(record.review_raw, record.review_candidates);
        if (!reworded.ok) {
            record.flags.push_back("O_Ft_candidates_reworded");
            spdlog::debug("{}: {} review candidate sentence(s) are not verbatim", paper.paper_id,
                          reworded.violations.size());
        }
        auto validated = validate_long_term_goals(record.review_candidates, gateway, models.extractor);
        record.review_goals = std::move(validated.text);
        if (!validated.verdict.ok) {
            record.valid = false;
            record.flags.push_back("O_Fg_not_extractive");
        }
    }

    auto merged = merge_ground_truth(record.llm_extracted, record.review_goals, gateway, models.merger);
    record.merged_ground_truth = std::move(merged.text);
    if (!merged.verdict.ok) {
        record.valid = false;
        record.flags.push_back("merged_not_traceable");
    }
    if (text::trim(record.merged_ground_truth).empty()) {
        record.valid = false;
        record.flags.push_back("no_ground_truth");
    }
    return record;
}

}  // namespace fwgen
