#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fwgen/corpus.hpp"
#include "fwgen/gateway.hpp"
#include "fwgen/retrieval.hpp"

namespace fwgen::generation {

inline constexpr std::size_t kDefaultTokenBudget = 3900;

enum class SectionClass { abstract, introduction, related_work, data, methodology, experiment, conclusion, limitations };

std::string_view to_string(SectionClass cls);
std::optional<SectionClass> parse_section_class(std::string_view name);

/// Canonical class of a section heading, or nullopt when it fits none.
std::optional<SectionClass> classify_heading(std::string_view heading);

/// Tie-break order: Abstract, Introduction, Conclusion, Experiment,
/// Related Work, Limitations, Methodology, Data (0 is strongest).
int tie_priority(SectionClass cls);

struct SectionRank {
    SectionClass cls = SectionClass::abstract;
    double mean_cosine = 0.0;
    std::size_t papers = 0;

    bool operator==(const SectionRank&) const = default;
};

/// Sorts descending by mean cosine, ties by tie_priority().
std::vector<SectionRank> order_section_ranks(std::vector<SectionRank> ranks);

/// For every paper with future-work text in `future_work` (keyed by paper id),
/// embeds each heading class (sections of one class concatenated; the abstract
/// field counts as Abstract) and the future work, and averages the cosines per
/// class over papers. Throws InvalidArgument when nothing can be compared.
std::vector<SectionRank> rank_sections(const std::vector<PaperRecord>& papers,
                                       const std::map<std::string, std::string>& future_work, llm::Gateway& gateway,
                                       const std::string& embedding_model);

enum class InputMode { top3_sections, all_sections };

std::string_view to_string(InputMode mode);
InputMode parse_input_mode(std::string_view name);

enum class BlockKind { abstract, section, retrieved, feedback };

std::string_view to_string(BlockKind kind);

struct ContextBlock {
    BlockKind kind = BlockKind::section;
    std::string label;
    std::string text;

    bool operator==(const ContextBlock&) const = default;
};

/// Prompt wording. The refinement preface and closing follow the iterative
/// refinement prompt; the initial preface is the same minus "refined".
struct PromptTemplates {
    std::string initial_preface = "Your task is to generate a \"future work\" section for a scientific article.";
    std::string refinement_preface =
        "Your task is to generate a refined \"future work\" section for a scientific article.";
    std::string input_heading = "Input:";
    std::string feedback_lead =
        "Here I am providing the texts and have found these problems. At first, read the feedback and try to "
        "improve it when you generate future work.";
    std::string closing =
        "Based on these details, please generate comprehensive and plausible future work suggestions that could "
        "extend the research findings, address limitations, and propose new avenues for exploration. Future work "
        "should be within 100 words.";
};

struct PromptBundle {
    std::string paper_id;
    InputMode mode = InputMode::top3_sections;
    std::string instruction;
    std::string input_heading;
    std::string closing;
    std::string feedback_lead;
    /// Abstract first, then sections in priority order, then retrieved
    /// excerpts by rank, then the feedback block if any.
    std::vector<ContextBlock> context_blocks;
    /// The retrieved chunks that survived truncation, in rank order.
    std::vector<retrieval::RetrievedChunk> retrieved;
    std::size_t token_budget = kDefaultTokenBudget;
    std::size_t dropped_blocks = 0;

    bool operator==(const PromptBundle&) const = default;
};

/// Tokens of the instruction, input heading and closing.
std::size_t instruction_tokens(const PromptBundle& bundle);
/// Tokens a block contributes to the rendered prompt (label and body, plus
/// the feedback lead for a feedback block).
std::size_t block_tokens(const PromptBundle& bundle, const ContextBlock& block);
/// Equal to text::count_tokens(render(bundle)).
std::size_t total_tokens(const PromptBundle& bundle);

std::string render(const PromptBundle& bundle);

/// Sections fed to the generator: in top3 mode, sections whose class is among
/// the first three ranked classes (ordered by rank, then document order); in
/// all mode, every section in document order. Empty sections and sections
/// titled as future work are skipped.
std::vector<Section> select_sections(const PaperRecord& paper, InputMode mode, const std::vector<SectionRank>& ranking);

/// Retrieval query: the abstract and the selected sections.
std::string retrieval_query(const PaperRecord& paper, InputMode mode, const std::vector<SectionRank>& ranking);

/// Assembles the first-iteration prompt for an already stripped paper. Over
/// budget, retrieved excerpts are dropped lowest rank first, then sections
/// lowest priority first; the abstract body is cut only when nothing else is
/// left. Throws InvalidArgument when the instruction alone exceeds the budget.
PromptBundle assemble_prompt(const PaperRecord& paper, InputMode mode, const std::vector<SectionRank>& ranking,
                             const std::vector<retrieval::RetrievedChunk>& retrieved,
                             std::size_t budget = kDefaultTokenBudget, const PromptTemplates& templates = {});

/// Copies the prior bundle's context, switches to the refinement preface and
/// appends a feedback block that is never truncated. Throws InvalidArgument
/// for empty feedback or when instruction plus feedback exceed the budget.
PromptBundle assemble_refinement_prompt(const PromptBundle& bundle, std::string_view feedback,
                                        const PromptTemplates& templates = {});

struct GenerationConfig {
    std::string model = "gpt-4o-mini";
    std::optional<double> temperature = 1.0;
    std::optional<int> max_tokens;
    /// Outputs longer than this many words are accepted with a warning.
    std::size_t warn_words = 100;
};

struct GenerationTrace {
    std::string paper_id;
    std::size_t iteration = 1;
    PromptBundle prompt;
    std::string output_text;
    std::optional<std::string> feedback_used;
    std::vector<std::string> warnings;
};

/// Sends the rendered bundle. Throws Error("empty generation") on blank output.
GenerationTrace generate_future_work(const PromptBundle& bundle, llm::Gateway& gateway, const GenerationConfig& config,
                                     std::size_t iteration = 1, std::optional<std::string> feedback_used = std::nullopt);

/// Per-kind token counts of a bundle, as written to trace files.
nlohmann::json token_report(const PromptBundle& bundle);

}  // namespace fwgen::generation
