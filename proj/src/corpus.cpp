#include "fwgen/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <unordered_set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "fwgen/errors.hpp"
#include "fwgen/extraction.hpp"
#include "fwgen/text.hpp"

namespace fwgen {
namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Thrown internally so load_papers can report which field failed.
struct FieldError {
    std::string field;
    std::string message;
};

const nlohmann::json& require(const nlohmann::json& obj, const std::string& field, nlohmann::json::value_t type,
                              const char* type_name) {
    const auto it = obj.find(field);
    if (it == obj.end()) {
        throw FieldError{field, "missing required field '" + field + "'"};
    }
    if (it->type() != type) {
        throw FieldError{field, "field '" + field + "' must be " + type_name};
    }
    return *it;
}

PaperRecord parse_paper_fields(const nlohmann::json& j) {
    using vt = nlohmann::json::value_t;
    if (!j.is_object()) {
        throw FieldError{"", "document must be a JSON object"};
    }
    PaperRecord paper;
    paper.paper_id = require(j, "paper_id", vt::string, "a string").get<std::string>();
    if (paper.paper_id.empty()) {
        throw FieldError{"paper_id", "field 'paper_id' must be non-empty"};
    }
    paper.title = require(j, "title", vt::string, "a string").get<std::string>();
    paper.abstract = require(j, "abstract", vt::string, "a string").get<std::string>();
    const auto& sections = require(j, "sections", vt::array, "an array");
    if (sections.empty()) {
        throw FieldError{"sections", "field 'sections' must contain at least one section"};
    }
    for (std::size_t i = 0; i < sections.size(); ++i) {
        const auto& s = sections[i];
        const std::string where = "sections[" + std::to_string(i) + "]";
        if (!s.is_object()) {
            throw FieldError{where, where + " must be an object"};
        }
        const auto h = s.find("heading");
        if (h == s.end() || !h->is_string()) {
            throw FieldError{where + ".heading", where + ".heading must be a string"};
        }
        const auto t = s.find("text");
        if (t == s.end() || !t->is_string()) {
            throw FieldError{where + ".text", where + ".text must be a string"};
        }
        if (text::trim(h->get<std::string>()).empty() && text::trim(t->get<std::string>()).empty()) {
            throw FieldError{where, where + " has neither heading nor text"};
        }
        paper.sections.push_back({h->get<std::string>(), t->get<std::string>(), i});
    }
    if (const auto v = j.find("venue"); v != j.end() && !v->is_null()) {
        if (!v->is_string()) {
            throw FieldError{"venue", "field 'venue' must be a string"};
        }
        paper.venue = parse_venue(v->get<std::string>());
    }
    if (const auto y = j.find("year"); y != j.end() && !y->is_null()) {
        if (!y->is_number_integer()) {
            throw FieldError{"year", "field 'year' must be an integer"};
        }
        paper.year = y->get<int>();
    }
    return paper;
}

std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, std::string_view extension) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == extension) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

Venue parse_venue(std::string_view name) {
    const auto lower = text::to_lower(name);
    if (lower == "acl") {
        return Venue::acl;
    }
    if (lower == "neurips") {
        return Venue::neurips;
    }
    return Venue::other;
}

std::string_view to_string(Venue venue) {
    switch (venue) {
        case Venue::acl:
            return "ACL";
        case Venue::neurips:
            return "NeurIPS";
        case Venue::other:
            return "other";
    }
    return "other";
}

PaperRecord parse_paper(std::string_view json_text, std::string_view source_name) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(std::string(source_name) + ": invalid JSON: " + e.what());
    }
    try {
        return parse_paper_fields(j);
    } catch (const FieldError& e) {
        throw InputError(std::string(source_name) + ": " + e.message);
    }
}

PaperLoadResult load_papers(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw InputError("paper path does not exist: " + path.string());
    }
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(path)) {
        files = list_files(path, ".json");
    } else {
        files.push_back(path);
    }

    PaperLoadResult result;
    if (files.empty()) {
        result.warnings.push_back("no paper files found in " + path.string());
        spdlog::warn("no paper files found in {}", path.string());
        return result;
    }
    std::unordered_set<std::string> seen;
    for (const auto& file : files) {
        const auto name = file.string();
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(file));
        } catch (const nlohmann::json::parse_error& e) {
            result.errors.push_back({name, "", std::string("invalid JSON: ") + e.what()});
            continue;
        } catch (const InputError& e) {
            result.errors.push_back({name, "", e.what()});
            continue;
        }
        try {
            auto paper = parse_paper_fields(j);
            if (!seen.insert(paper.paper_id).second) {
                result.errors.push_back({name, "paper_id", "duplicate paper_id '" + paper.paper_id + "'"});
                continue;
            }
            result.papers.push_back(std::move(paper));
        } catch (const FieldError& e) {
            result.errors.push_back({name, e.field, e.message});
        }
    }
    for (const auto& e : result.errors) {
        spdlog::error("{}: {}", e.file, e.message);
    }
    return result;
}

ReviewLoadResult load_reviews(const std::filesystem::path& path, const std::set<std::string>& known_ids) {
    if (!std::filesystem::exists(path)) {
        throw InputError("review path does not exist: " + path.string());
    }
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(path)) {
        files = list_files(path, ".jsonl");
    } else {
        files.push_back(path);
    }

    ReviewLoadResult result;
    std::map<std::string, std::size_t> group_of;
    for (const auto& file : files) {
        std::istringstream in(read_file(file));
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (text::trim(line).empty()) {
                continue;
            }
            const std::string where = file.string() + ":" + std::to_string(line_no);
            std::string paper_id;
            std::string review;
            try {
                const auto j = nlohmann::json::parse(line);
                paper_id = j.at("paper_id").get<std::string>();
                review = j.at("review_text").get<std::string>();
            } catch (const nlohmann::json::exception& e) {
                throw InputError(where + ": malformed review record: " + e.what());
            }
            if (!known_ids.contains(paper_id)) {
                result.warnings.push_back(where + ": review for unknown paper_id '" + paper_id + "' skipped");
                spdlog::warn("{}", result.warnings.back());
                continue;
            }
            auto [it, inserted] = group_of.try_emplace(paper_id, result.review_sets.size());
            if (inserted) {
                result.review_sets.push_back({paper_id, {}});
            }
            result.review_sets[it->second].reviews.push_back(std::move(review));
        }
    }
    return result;
}

CorpusSplit split_corpus(const std::vector<PaperRecord>& papers, std::size_t index_size, std::uint64_t seed) {
    if (index_size > papers.size()) {
        throw InvalidArgument("index_size " + std::to_string(index_size) + " exceeds corpus size " +
                              std::to_string(papers.size()));
    }
    std::vector<std::string> ids;
    ids.reserve(papers.size());
    for (const auto& p : papers) {
        ids.push_back(p.paper_id);
    }
    std::sort(ids.begin(), ids.end());

    // Fisher-Yates with an explicit bounded draw: std::shuffle and
    // uniform_int_distribution differ between standard libraries.
    std::mt19937_64 rng(seed);
    for (std::size_t i = ids.size(); i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t draw = rng();
        while (draw >= limit) {
            draw = rng();
        }
        std::swap(ids[i - 1], ids[draw % bound]);
    }

    CorpusSplit split;
    split.seed = seed;
    split.index_ids.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(index_size));
    split.eval_ids.insert(ids.begin() + static_cast<std::ptrdiff_t>(index_size), ids.end());
    if (!papers.empty() && split.eval_ids.empty()) {
        spdlog::warn("split_corpus: index_size equals corpus size; evaluation set is empty");
    }
    return split;
}

PaperRecord strip_future_work(const PaperRecord& paper, const FutureWorkRecord& fw) {
    if (fw.paper_id != paper.paper_id) {
        throw InvalidArgument("strip_future_work: future-work record '" + fw.paper_id +
                              "' does not belong to paper '" + paper.paper_id + "'");
    }
    std::unordered_set<std::string> removed;
    for (const auto& s : text::split_sentences(fw.tool_extracted)) {
        removed.insert(text::normalize_sentence(s));
    }
    if (removed.empty()) {
        return paper;
    }
    auto strip = [&](const std::string& body) {
        const auto sentences = text::split_sentences(body);
        std::vector<std::string> kept;
        for (const auto& s : sentences) {
            if (!removed.contains(text::normalize_sentence(s))) {
                kept.push_back(s);
            }
        }
        return kept.size() == sentences.size() ? body : text::join(kept, " ");
    };
    PaperRecord out = paper;
    out.abstract = strip(paper.abstract);
    for (auto& section : out.sections) {
        section.text = strip(section.text);
    }
    return out;
}

std::string paper_body_text(const PaperRecord& paper) {
    std::string out = paper.abstract;
    for (const auto& s : paper.sections) {
        if (text::trim(s.text).empty()) {
            continue;
        }
        if (!out.empty()) {
            out += "\n\n";
        }
        out += s.heading;
        out += "\n";
        out += s.text;
    }
    return out;
}

}  // namespace fwgen
