#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace fwgen {

struct FutureWorkRecord;

enum class Venue { acl, neurips, other };

Venue parse_venue(std::string_view name);
std::string_view to_string(Venue venue);

struct Section {
    std::string heading;
    std::string text;
    std::size_t index = 0;

    bool operator==(const Section&) const = default;
};

struct PaperRecord {
    std::string paper_id;
    std::string title;
    std::string abstract;
    std::vector<Section> sections;
    Venue venue = Venue::other;
    int year = 0;

    bool operator==(const PaperRecord&) const = default;
};

struct ReviewSet {
    std::string paper_id;
    std::vector<std::string> reviews;

    bool operator==(const ReviewSet&) const = default;
};

struct CorpusSplit {
    std::set<std::string> eval_ids;
    std::set<std::string> index_ids;
    std::uint64_t seed = 0;

    bool operator==(const CorpusSplit&) const = default;
};

/// One rejected input, reported instead of silently dropped.
struct LoadIssue {
    std::string file;
    std::string field;
    std::string message;
};

struct PaperLoadResult {
    std::vector<PaperRecord> papers;
    std::vector<LoadIssue> errors;
    std::vector<std::string> warnings;
};

struct ReviewLoadResult {
    std::vector<ReviewSet> review_sets;
    std::vector<std::string> warnings;
};

/// Loads one paper per `.json` file. `path` may be a directory (files are
/// read in lexicographic order, non-recursively) or a single file.
/// Throws InputError when `path` does not exist.
PaperLoadResult load_papers(const std::filesystem::path& path);

/// Parses one paper document. Throws InputError naming the offending field.
PaperRecord parse_paper(std::string_view json_text, std::string_view source_name);

/// Loads newline-delimited `{paper_id, review_text}` records from a file, or
/// every `.jsonl` file of a directory. Reviews for ids not in `known_ids` are
/// skipped with a warning. Groups appear in order of first occurrence.
ReviewLoadResult load_reviews(const std::filesystem::path& path, const std::set<std::string>& known_ids);

/// Deterministic partition into index (held-out retrieval corpus) and eval
/// ids. Throws InvalidArgument when index_size exceeds the corpus size.
CorpusSplit split_corpus(const std::vector<PaperRecord>& papers, std::size_t index_size, std::uint64_t seed);

/// Removes every sentence of `fw.tool_extracted` (compared after sentence
/// normalization) from the abstract and sections. Sections keep their heading
/// and index even when emptied; untouched text is returned byte-identical.
PaperRecord strip_future_work(const PaperRecord& paper, const FutureWorkRecord& fw);

/// Abstract followed by every non-empty section, as the generator sees it.
std::string paper_body_text(const PaperRecord& paper);

}  // namespace fwgen
