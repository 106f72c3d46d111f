#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "fwgen/errors.hpp"
#include "fwgen/pipeline.hpp"

namespace pl = fwgen::pipeline;

namespace {

// Exit codes: 0 success, 1 usage or config error, 2 stage error, 3 completed with per-paper failures.
int finish(const pl::StageResult& r) {
    for (const auto& out : r.outputs) {
        std::printf("%s\n", out.string().c_str());
    }
    if (r.failed > 0) {
        spdlog::warn("{} of {} papers failed; see the log above", r.failed, r.processed);
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Future-work generation pipeline: extract, index, generate, evaluate, report"};
    app.require_subcommand(1);

    std::string config_file;
    std::optional<std::string> cassette;
    std::optional<std::string> mode;
    std::optional<std::uint64_t> seed;
    std::optional<int> max_refinements;
    std::optional<std::string> ground_truth;
    std::string log_level = "info";

    app.add_option("--config", config_file, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("--cassette", cassette, "Cassette mode override")
        ->check(CLI::IsMember({"record", "replay", "passthrough"}));
    app.add_option("--mode", mode, "Generator input mode override")->check(CLI::IsMember({"top3", "all"}));
    app.add_option("--seed", seed, "Corpus split seed override");
    app.add_option("--max-refinements", max_refinements, "Refinement passes after the first generation")
        ->check(CLI::Range(0, 2));
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    auto* extract = app.add_subcommand("extract", "Load the corpus and build the future-work lineage");
    auto* index = app.add_subcommand("index", "Split the corpus and build the retrieval index");
    auto* generate = app.add_subcommand("generate", "Generate and refine future work for the eval papers");
    auto* evaluate = app.add_subcommand("evaluate", "Score generations against a ground truth");
    evaluate->add_option("--ground-truth", ground_truth, "fw, or or fw+or (default from config)")
        ->check(CLI::IsMember({"fw", "or", "fw+or"}, CLI::ignore_case));
    auto* report = app.add_subcommand("report", "Write summary tables from the evaluations");

    CLI11_PARSE(app, argc, argv);
    // Logs go to stderr; stdout carries only the written artifact paths.
    spdlog::set_default_logger(spdlog::stderr_color_mt("fwgen"));
    spdlog::set_level(spdlog::level::from_str(log_level));

    pl::RunConfig config;
    try {
        config = pl::load_config(config_file);
        if (cassette) {
            config.cassette_mode = fwgen::llm::parse_cassette_mode(*cassette);
        }
        if (mode) {
            config.mode = fwgen::generation::parse_input_mode(*mode);
        }
        if (seed) {
            config.seed = *seed;
        }
        if (max_refinements) {
            config.policy.max_refinements = *max_refinements;
        }
        if (ground_truth) {
            config.ground_truth = pl::parse_ground_truth(*ground_truth);
        }
        config.validate();
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }

    try {
        if (*extract) {
            return finish(pl::cmd_extract(config));
        }
        if (*index) {
            return finish(pl::cmd_index(config));
        }
        if (*generate) {
            return finish(pl::cmd_generate(config));
        }
        if (*evaluate) {
            return finish(pl::cmd_evaluate(config, config.ground_truth));
        }
        if (*report) {
            return finish(pl::cmd_report(config));
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
    return 1;
}
