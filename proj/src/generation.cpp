#include "fwgen/generation.hpp"

#include <algorithm>
#include <array>

#include <spdlog/spdlog.h>

#include "fwgen/errors.hpp"
#include "fwgen/extraction.hpp"
#include "fwgen/text.hpp"

namespace fwgen::generation {
namespace {

constexpr std::array<SectionClass, 8> kAllClasses = {
    SectionClass::abstract,    SectionClass::introduction, SectionClass::related_work, SectionClass::data,
    SectionClass::methodology, SectionClass::experiment,   SectionClass::conclusion,   SectionClass::limitations,
};

bool any_of_words(const std::string& lower, std::initializer_list<std::string_view> words) {
    return std::any_of(words.begin(), words.end(), [&](std::string_view w) { return lower.find(w) != std::string::npos; });
}

bool is_future_work_heading(std::string_view heading) {
    static const ExtractionRules rules;
    const auto lower = text::to_lower(heading);
    return std::any_of(rules.explicit_headings.begin(), rules.explicit_headings.end(),
                       [&](const std::string& h) { return lower.find(h) != std::string::npos; });
}

std::string render_block(const ContextBlock& b) { return "[" + b.label + "]\n" + b.text; }

std::size_t count_block(const PromptBundle& bundle, const ContextBlock& b) {
    std::size_t n = text::count_tokens(b.label) + text::count_tokens(b.text);
    if (b.kind == BlockKind::feedback) {
        n += text::count_tokens(bundle.feedback_lead);
    }
    return n;
}

// Drops blocks until the bundle fits its budget: retrieved excerpts from the
// lowest rank, then sections from the lowest priority, then cuts the abstract.
void fit_to_budget(PromptBundle& b) {
    std::vector<std::size_t> counts;
    counts.reserve(b.context_blocks.size());
    std::size_t total = instruction_tokens(b);
    std::size_t fixed = total;
    for (const auto& block : b.context_blocks) {
        counts.push_back(count_block(b, block));
        total += counts.back();
        if (block.kind == BlockKind::feedback) {
            fixed += counts.back();
        }
    }
    if (fixed > b.token_budget) {
        throw InvalidArgument("prompt instruction" + std::string(fixed == instruction_tokens(b) ? "" : " and feedback") +
                              " need " + std::to_string(fixed) + " tokens, over the budget of " +
                              std::to_string(b.token_budget));
    }
    auto drop_last = [&](BlockKind kind) {
        for (std::size_t i = b.context_blocks.size(); i-- > 0;) {
            if (b.context_blocks[i].kind == kind) {
                total -= counts[i];
                b.context_blocks.erase(b.context_blocks.begin() + static_cast<std::ptrdiff_t>(i));
                counts.erase(counts.begin() + static_cast<std::ptrdiff_t>(i));
                ++b.dropped_blocks;
                if (kind == BlockKind::retrieved) {
                    b.retrieved.pop_back();
                }
                return true;
            }
        }
        return false;
    };
    while (total > b.token_budget) {
        if (drop_last(BlockKind::retrieved) || drop_last(BlockKind::section)) {
            continue;
        }
        // Only the abstract is left to shorten.
        const auto it = std::find_if(b.context_blocks.begin(), b.context_blocks.end(),
                                     [](const ContextBlock& c) { return c.kind == BlockKind::abstract; });
        if (it == b.context_blocks.end()) {
            break;
        }
        const auto idx = static_cast<std::size_t>(it - b.context_blocks.begin());
        const std::size_t others = total - counts[idx];
        const std::size_t label = text::count_tokens(it->label);
        if (others + label >= b.token_budget) {
            total = others;
            b.context_blocks.erase(it);
            counts.erase(counts.begin() + static_cast<std::ptrdiff_t>(idx));
            ++b.dropped_blocks;
            break;
        }
        const std::size_t keep = b.token_budget - others - label;
        const auto spans = text::token_spans(it->text);
        it->text = text::trim(std::string_view(it->text).substr(0, spans[keep - 1].end));
        counts[idx] = label + keep;
        total = others + counts[idx];
        spdlog::debug("{}: abstract cut to {} tokens to fit the prompt budget", b.paper_id, keep);
    }
}

}  // namespace

std::string_view to_string(SectionClass cls) {
    switch (cls) {
        case SectionClass::abstract:
            return "Abstract";
        case SectionClass::introduction:
            return "Introduction";
        case SectionClass::related_work:
            return "Related Work";
        case SectionClass::data:
            return "Data";
        case SectionClass::methodology:
            return "Methodology";
        case SectionClass::experiment:
            return "Experiment";
        case SectionClass::conclusion:
            return "Conclusion";
        case SectionClass::limitations:
            return "Limitations";
    }
    return "Abstract";
}

std::optional<SectionClass> parse_section_class(std::string_view name) {
    for (const auto cls : kAllClasses) {
        if (to_string(cls) == name) {
            return cls;
        }
    }
    return std::nullopt;
}

std::optional<SectionClass> classify_heading(std::string_view heading) {
    const auto h = text::to_lower(heading);
    if (any_of_words(h, {"abstract"})) {
        return SectionClass::abstract;
    }
    if (any_of_words(h, {"introduction"})) {
        return SectionClass::introduction;
    }
    if (any_of_words(h, {"related work", "background", "prior work", "literature"})) {
        return SectionClass::related_work;
    }
    if (any_of_words(h, {"limitation"})) {
        return SectionClass::limitations;
    }
    if (any_of_words(h, {"conclusion", "concluding", "summary"})) {
        return SectionClass::conclusion;
    }
    if (any_of_words(h, {"experiment", "evaluation", "result"})) {
        return SectionClass::experiment;
    }
    if (any_of_words(h, {"discussion"})) {
        return SectionClass::conclusion;
    }
    if (any_of_words(h, {"method", "approach", "model", "framework"})) {
        return SectionClass::methodology;
    }
    if (any_of_words(h, {"data", "corpus", "corpora", "benchmark"})) {
        return SectionClass::data;
    }
    return std::nullopt;
}

int tie_priority(SectionClass cls) {
    switch (cls) {
        case SectionClass::abstract:
            return 0;
        case SectionClass::introduction:
            return 1;
        case SectionClass::conclusion:
            return 2;
        case SectionClass::experiment:
            return 3;
        case SectionClass::related_work:
            return 4;
        case SectionClass::limitations:
            return 5;
        case SectionClass::methodology:
            return 6;
        case SectionClass::data:
            return 7;
    }
    return 8;
}

std::vector<SectionRank> order_section_ranks(std::vector<SectionRank> ranks) {
    std::sort(ranks.begin(), ranks.end(), [](const SectionRank& a, const SectionRank& b) {
        if (a.mean_cosine != b.mean_cosine) {
            return a.mean_cosine > b.mean_cosine;
        }
        return tie_priority(a.cls) < tie_priority(b.cls);
    });
    return ranks;
}

std::vector<SectionRank> rank_sections(const std::vector<PaperRecord>& papers,
                                       const std::map<std::string, std::string>& future_work, llm::Gateway& gateway,
                                       const std::string& embedding_model) {
    std::map<SectionClass, std::pair<double, std::size_t>> sums;
    for (const auto& paper : papers) {
        const auto fw = future_work.find(paper.paper_id);
        if (fw == future_work.end() || text::trim(fw->second).empty()) {
            continue;
        }
        std::map<SectionClass, std::string> by_class;
        auto add = [&by_class](SectionClass cls, const std::string& body) {
            if (text::trim(body).empty()) {
                return;
            }
            auto& dst = by_class[cls];
            if (!dst.empty()) {
                dst += "\n\n";
            }
            dst += body;
        };
        add(SectionClass::abstract, paper.abstract);
        for (const auto& s : paper.sections) {
            if (const auto cls = classify_heading(s.heading)) {
                add(*cls, s.text);
            }
        }
        if (by_class.empty()) {
            continue;
        }
        std::vector<std::string> texts{fw->second};
        for (const auto& [_, body] : by_class) {
            texts.push_back(body);
        }
        const auto vectors = gateway.embed(texts, embedding_model);
        const auto target = retrieval::unit_normalize(vectors[0]);
        std::size_t i = 1;
        for (const auto& [cls, _] : by_class) {
            auto& [sum, n] = sums[cls];
            sum += retrieval::dot(target, retrieval::unit_normalize(vectors[i++]));
            ++n;
        }
    }
    if (sums.empty()) {
        throw InvalidArgument("rank_sections: no paper has both future-work text and a recognised section");
    }
    std::vector<SectionRank> ranks;
    for (const auto& [cls, acc] : sums) {
        ranks.push_back({cls, acc.first / static_cast<double>(acc.second), acc.second});
    }
    return order_section_ranks(std::move(ranks));
}

std::string_view to_string(InputMode mode) {
    return mode == InputMode::top3_sections ? "top3_sections" : "all_sections";
}

InputMode parse_input_mode(std::string_view name) {
    if (name == "top3" || name == "top3_sections") {
        return InputMode::top3_sections;
    }
    if (name == "all" || name == "all_sections") {
        return InputMode::all_sections;
    }
    throw InvalidArgument("unknown input mode '" + std::string(name) + "' (expected top3 or all)");
}

std::string_view to_string(BlockKind kind) {
    switch (kind) {
        case BlockKind::abstract:
            return "abstract";
        case BlockKind::section:
            return "section";
        case BlockKind::retrieved:
            return "retrieved";
        case BlockKind::feedback:
            return "feedback";
    }
    return "section";
}

std::size_t instruction_tokens(const PromptBundle& b) {
    return text::count_tokens(b.instruction) + text::count_tokens(b.input_heading) + text::count_tokens(b.closing);
}

std::size_t block_tokens(const PromptBundle& bundle, const ContextBlock& block) { return count_block(bundle, block); }

std::size_t total_tokens(const PromptBundle& b) {
    std::size_t n = instruction_tokens(b);
    for (const auto& block : b.context_blocks) {
        n += count_block(b, block);
    }
    return n;
}

std::string render(const PromptBundle& b) {
    std::string out = b.instruction;
    out += "\n\n";
    out += b.input_heading;
    out += "\n\n";
    for (const auto& block : b.context_blocks) {
        if (block.kind == BlockKind::feedback) {
            out += b.feedback_lead;
            out += "\n";
        }
        out += render_block(block);
        out += "\n\n";
    }
    out += b.closing;
    return out;
}

std::vector<Section> select_sections(const PaperRecord& paper, InputMode mode, const std::vector<SectionRank>& ranking) {
    std::vector<Section> out;
    auto usable = [&](const Section& s) {
        if (text::trim(s.text).empty() || is_future_work_heading(s.heading)) {
            return false;
        }
        // The abstract field already supplies the abstract.
        return !(classify_heading(s.heading) == SectionClass::abstract && !text::trim(paper.abstract).empty());
    };
    if (mode == InputMode::all_sections) {
        for (const auto& s : paper.sections) {
            if (usable(s)) {
                out.push_back(s);
            }
        }
        return out;
    }
    if (ranking.empty()) {
        throw InvalidArgument("top3 input mode requires a section ranking");
    }
    const std::size_t top = std::min<std::size_t>(3, ranking.size());
    for (std::size_t r = 0; r < top; ++r) {
        for (const auto& s : paper.sections) {
            if (usable(s) && classify_heading(s.heading) == ranking[r].cls) {
                out.push_back(s);
            }
        }
    }
    return out;
}

std::string retrieval_query(const PaperRecord& paper, InputMode mode, const std::vector<SectionRank>& ranking) {
    std::vector<std::string> parts;
    if (!text::trim(paper.abstract).empty()) {
        parts.push_back(paper.abstract);
    }
    for (const auto& s : select_sections(paper, mode, ranking)) {
        parts.push_back(s.text);
    }
    return text::join(parts, "\n\n");
}

PromptBundle assemble_prompt(const PaperRecord& paper, InputMode mode, const std::vector<SectionRank>& ranking,
                             const std::vector<retrieval::RetrievedChunk>& retrieved, std::size_t budget,
                             const PromptTemplates& templates) {
    PromptBundle b;
    b.paper_id = paper.paper_id;
    b.mode = mode;
    b.instruction = templates.initial_preface;
    b.input_heading = templates.input_heading;
    b.closing = templates.closing;
    b.feedback_lead = templates.feedback_lead;
    b.token_budget = budget;
    if (!text::trim(paper.abstract).empty()) {
        b.context_blocks.push_back({BlockKind::abstract, "Abstract", text::trim(paper.abstract)});
    }
    for (const auto& s : select_sections(paper, mode, ranking)) {
        b.context_blocks.push_back({BlockKind::section, "Section: " + text::trim(s.heading), text::trim(s.text)});
    }
    auto ranked = retrieved;
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.rank < y.rank; });
    for (const auto& r : ranked) {
        b.context_blocks.push_back(
            {BlockKind::retrieved, "Related work excerpt (source: " + r.chunk.paper_id + ")", text::trim(r.chunk.text)});
        b.retrieved.push_back(r);
    }
    fit_to_budget(b);
    return b;
}

PromptBundle assemble_refinement_prompt(const PromptBundle& bundle, std::string_view feedback,
                                        const PromptTemplates& templates) {
    const auto body = text::trim(feedback);
    if (body.empty()) {
        throw InvalidArgument("refinement feedback must be non-empty");
    }
    PromptBundle b = bundle;
    b.instruction = templates.refinement_preface;
    b.feedback_lead = templates.feedback_lead;
    b.dropped_blocks = 0;
    std::erase_if(b.context_blocks, [](const ContextBlock& c) { return c.kind == BlockKind::feedback; });
    b.context_blocks.push_back({BlockKind::feedback, "LLM Feedback", body});
    fit_to_budget(b);
    return b;
}

GenerationTrace generate_future_work(const PromptBundle& bundle, llm::Gateway& gateway, const GenerationConfig& config,
                                     std::size_t iteration, std::optional<std::string> feedback_used) {
    llm::ChatRequest request;
    request.model = config.model;
    request.messages.push_back({"user", render(bundle)});
    request.temperature = config.temperature;
    request.max_tokens = config.max_tokens;

    GenerationTrace trace;
    trace.paper_id = bundle.paper_id;
    trace.iteration = iteration;
    trace.prompt = bundle;
    trace.feedback_used = std::move(feedback_used);
    trace.output_text = gateway.chat(request).text;
    if (text::trim(trace.output_text).empty()) {
        throw Error("empty generation for paper " + bundle.paper_id);
    }
    const auto words = text::word_count(trace.output_text);
    if (words > config.warn_words) {
        trace.warnings.push_back("output has " + std::to_string(words) + " words, over the " +
                                 std::to_string(config.warn_words) + "-word limit");
        spdlog::warn("{} iteration {}: {}", trace.paper_id, iteration, trace.warnings.back());
    }
    return trace;
}

nlohmann::json token_report(const PromptBundle& b) {
    nlohmann::json j = {{"instruction", instruction_tokens(b)}, {"abstract", 0}, {"section", 0},
                        {"retrieved", 0},                       {"feedback", 0}};
    for (const auto& block : b.context_blocks) {
        auto& slot = j[std::string(to_string(block.kind))];
        slot = slot.get<std::size_t>() + count_block(b, block);
    }
    j["total"] = total_tokens(b);
    j["budget"] = b.token_budget;
    j["dropped_blocks"] = b.dropped_blocks;
    return j;
}

}  // namespace fwgen::generation
