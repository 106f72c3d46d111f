#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fwgen/gateway.hpp"
#include "fwgen/generation.hpp"
#include "fwgen/refine.hpp"
#include "fwgen/retrieval.hpp"

namespace fwgen::pipeline {

enum class GroundTruth { fw, review, merged };

/// Accepts fw, or, fw+or (case-insensitive).
GroundTruth parse_ground_truth(std::string_view name);
/// Table label: FW, OR, FW+OR.
std::string_view label(GroundTruth gt);
/// File-name slug: fw, or, fw_or.
std::string_view slug(GroundTruth gt);

struct RunConfig {
    std::filesystem::path papers;
    std::filesystem::path reviews;  // optional
    std::filesystem::path output_dir = "out";
    std::filesystem::path cassette;
    llm::CassetteMode cassette_mode = llm::CassetteMode::replay;

    std::uint64_t seed = 13;
    std::size_t index_size = 100;

    bool use_retrieval = true;
    std::size_t chunk_size = retrieval::kDefaultChunkSize;
    retrieval::HybridParams hybrid;
    std::size_t token_budget = generation::kDefaultTokenBudget;

    refine::RefinementPolicy policy;
    llm::RoleModels models;
    std::optional<double> temperature = 1.0;
    std::optional<int> max_tokens;
    generation::InputMode mode = generation::InputMode::top3_sections;
    GroundTruth ground_truth = GroundTruth::merged;

    std::size_t workers = 4;
    std::size_t max_in_flight = 4;
    std::string base_url = "https://api.openai.com";
    /// Name of the environment variable holding the API key.
    std::string api_key_env = "OPENAI_API_KEY";

    /// Checks every parameter against the preconditions of the stages.
    /// Throws InvalidArgument naming the first bad field.
    void validate() const;
};

/// Parses a config document. Relative paths resolve against `base_dir`.
/// Unknown keys are rejected and the result is validated.
RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& file);
nlohmann::json to_json(const RunConfig& config);

/// Providers used outside replay mode; null members fall back to the
/// OpenAI-compatible HTTP provider built from the config.
struct Providers {
    std::shared_ptr<llm::ChatProvider> chat;
    std::shared_ptr<llm::EmbeddingProvider> embedding;
};

std::unique_ptr<llm::Gateway> make_gateway(const RunConfig& config, const Providers& providers = {});

// Stage artifacts inside the output directory.
inline constexpr std::string_view kLineageFile = "lineage.jsonl";
inline constexpr std::string_view kSplitFile = "split.json";
inline constexpr std::string_view kSnapshotFile = "index.snapshot";
inline constexpr std::string_view kRankingFile = "section_ranking.json";
inline constexpr std::string_view kTracesFile = "traces.jsonl";
inline constexpr std::string_view kFailuresFile = "generation_failures.jsonl";
inline constexpr std::string_view kSummaryFile = "summary.json";

std::string evaluation_file_name(GroundTruth gt);

struct StageResult {
    std::size_t processed = 0;
    std::size_t failed = 0;
    std::vector<std::filesystem::path> outputs;
};

/// Runs `fn(i)` for i in [0, count) on up to `workers` threads. Every index
/// runs even if some throw; the first exception is rethrown afterwards.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Corpus loading and the extraction lineage of every paper.
StageResult cmd_extract(const RunConfig& config, const Providers& providers = {});
/// Split, chunking and both retrieval indices over the index papers.
StageResult cmd_index(const RunConfig& config, const Providers& providers = {});
/// Section ranking, prompt assembly, generation and refinement per eval paper.
StageResult cmd_generate(const RunConfig& config, const Providers& providers = {});
/// Metrics and judge verdicts against the chosen ground truth.
StageResult cmd_evaluate(const RunConfig& config, GroundTruth gt, const Providers& providers = {});
/// Delimiter-separated tables and the summary file. Makes no model calls.
StageResult cmd_report(const RunConfig& config);

}  // namespace fwgen::pipeline
