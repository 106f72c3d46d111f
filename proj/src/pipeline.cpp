#include "fwgen/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "fwgen/corpus.hpp"
#include "fwgen/errors.hpp"
#include "fwgen/extraction.hpp"
#include "fwgen/judge.hpp"
#include "fwgen/metrics.hpp"
#include "fwgen/text.hpp"

namespace fwgen::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<GroundTruth, 3> kAllGroundTruths = {GroundTruth::fw, GroundTruth::review, GroundTruth::merged};

fs::path artifact(const RunConfig& c, std::string_view name) { return c.output_dir / fs::path(std::string(name)); }

void require_artifact(const fs::path& file, std::string_view producer) {
    if (!fs::exists(file)) {
        throw InputError("missing prerequisite artifact " + file.string() + " (run `fwgen " + std::string(producer) +
                         "` first)");
    }
}

std::string read_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw InputError("cannot read " + file.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Written to a sibling temp file first so a failed stage never leaves a torn artifact.
void write_file(const fs::path& file, const std::string& content) {
    fs::create_directories(file.parent_path());
    const auto tmp = fs::path(file.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw InputError("cannot write " + tmp.string());
        }
        out << content;
        if (!out) {
            throw InputError("write failed for " + tmp.string());
        }
    }
    fs::rename(tmp, file);
}

std::vector<json> read_jsonl(const fs::path& file) {
    std::vector<json> out;
    std::istringstream in(read_file(file));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) {
            continue;
        }
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw InputError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string to_jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

std::vector<PaperRecord> load_corpus(const RunConfig& config) {
    auto loaded = load_papers(config.papers);
    for (const auto& issue : loaded.errors) {
        spdlog::error("{}: field '{}': {}", issue.file, issue.field, issue.message);
    }
    for (const auto& w : loaded.warnings) {
        spdlog::warn("{}", w);
    }
    if (loaded.papers.empty()) {
        throw InputError("no valid papers under " + config.papers.string());
    }
    std::sort(loaded.papers.begin(), loaded.papers.end(),
              [](const PaperRecord& a, const PaperRecord& b) { return a.paper_id < b.paper_id; });
    return std::move(loaded.papers);
}

std::map<std::string, FutureWorkRecord> load_lineage(const RunConfig& config) {
    const auto file = artifact(config, kLineageFile);
    require_artifact(file, "extract");
    std::map<std::string, FutureWorkRecord> out;
    for (const auto& j : read_jsonl(file)) {
        auto rec = lineage_from_json(j);
        auto id = rec.paper_id;
        out.emplace(std::move(id), std::move(rec));
    }
    return out;
}

std::string ground_truth_text(const FutureWorkRecord& r, GroundTruth gt) {
    switch (gt) {
        case GroundTruth::fw:
            return r.llm_extracted;
        case GroundTruth::review:
            return r.review_goals;
        case GroundTruth::merged:
            return r.merged_ground_truth;
    }
    return {};
}

template <typename T>
T get_or(const json& j, std::string_view key, T fallback) {
    const auto it = j.find(key);
    return it == j.end() ? fallback : it->template get<T>();
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view where) {
    if (!j.is_object()) {
        throw InvalidArgument("config: '" + std::string(where) + "' must be an object");
    }
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw InvalidArgument("config: unknown key '" + std::string(where) + key + "'");
        }
    }
}

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) {
        return {};
    }
    const fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

// Mean of the present values, or nullopt when none is present.
struct Mean {
    double sum = 0.0;
    std::size_t n = 0;

    void add(double v) {
        sum += v;
        ++n;
    }
    std::optional<double> value() const {
        return n == 0 ? std::nullopt : std::optional<double>(sum / static_cast<double>(n));
    }
};

std::string cell(const Mean& m, double scale = 1.0) {
    const auto v = m.value();
    return v ? fmt2(*v * scale) : "NA";
}

struct MetricMeans {
    Mean rouge1, rouge2, rougeL, jaccard, cosine, bleu;

    void add(const metrics::MetricReport& r) {
        rouge1.add(r.rouge1);
        rouge2.add(r.rouge2);
        rougeL.add(r.rougeL);
        jaccard.add(r.jaccard);
        bleu.add(r.bleu);
        if (r.cosine) {
            cosine.add(*r.cosine);
        }
    }
};

struct JudgeMeans {
    Mean coherence, relevance, readability, grammar, overall, novelty;

    void add(const judge::JudgeScores& s, const judge::NoveltyVerdict& n) {
        coherence.add(s.coherence);
        relevance.add(s.relevance);
        readability.add(s.readability);
        grammar.add(s.grammar);
        overall.add(s.overall);
        novelty.add(n.score);
    }
};

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string tsv() const {
        std::string out = text::join(header, "\t") + "\n";
        for (const auto& r : rows) {
            out += text::join(r, "\t") + "\n";
        }
        return out;
    }
    json as_json() const {
        json arr = json::array();
        for (const auto& r : rows) {
            json obj = json::object();
            for (std::size_t i = 0; i < header.size(); ++i) {
                obj[header[i]] = r[i];
            }
            arr.push_back(obj);
        }
        return arr;
    }
};

struct EvaluationSet {
    GroundTruth gt;
    std::vector<json> rows;  // successful rows only
    std::size_t failures = 0;
};

}  // namespace

GroundTruth parse_ground_truth(std::string_view name) {
    const auto n = text::to_lower(name);
    if (n == "fw") {
        return GroundTruth::fw;
    }
    if (n == "or") {
        return GroundTruth::review;
    }
    if (n == "fw+or" || n == "fw_or") {
        return GroundTruth::merged;
    }
    throw InvalidArgument("unknown ground truth '" + std::string(name) + "' (expected fw, or or fw+or)");
}

std::string_view label(GroundTruth gt) {
    switch (gt) {
        case GroundTruth::fw:
            return "FW";
        case GroundTruth::review:
            return "OR";
        case GroundTruth::merged:
            return "FW+OR";
    }
    return "FW+OR";
}

std::string_view slug(GroundTruth gt) {
    switch (gt) {
        case GroundTruth::fw:
            return "fw";
        case GroundTruth::review:
            return "or";
        case GroundTruth::merged:
            return "fw_or";
    }
    return "fw_or";
}

std::string evaluation_file_name(GroundTruth gt) { return "evaluation_" + std::string(slug(gt)) + ".jsonl"; }

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw InvalidArgument("config: " + msg); };
    if (papers.empty()) {
        fail("papers path is required");
    }
    if (output_dir.empty()) {
        fail("output_dir is required");
    }
    if (cassette_mode != llm::CassetteMode::passthrough && cassette.empty()) {
        fail("a cassette path is required in " + std::string(llm::to_string(cassette_mode)) + " mode");
    }
    if (index_size == 0) {
        fail("split.index_size must be >= 1");
    }
    if (chunk_size == 0) {
        fail("retrieval.chunk_size must be >= 1");
    }
    if (hybrid.k == 0) {
        fail("retrieval.k must be >= 1");
    }
    if (hybrid.w_lex < 0.0 || hybrid.w_dense < 0.0 || std::abs(hybrid.w_lex + hybrid.w_dense - 1.0) > 1e-9) {
        fail("retrieval weights must be non-negative and sum to 1");
    }
    if (token_budget == 0) {
        fail("retrieval.token_budget must be >= 1");
    }
    policy.validate();
    for (const auto& [role, id] : {std::pair{"extractor", &models.extractor}, std::pair{"generator", &models.generator},
                                   std::pair{"judge", &models.judge}, std::pair{"merger", &models.merger},
                                   std::pair{"embedding", &models.embedding}}) {
        if (text::trim(*id).empty()) {
            fail(std::string("models.") + role + " must be non-empty");
        }
    }
    if (temperature && (*temperature < 0.0 || *temperature > 2.0)) {
        fail("generation.temperature must be in [0, 2]");
    }
    if (max_tokens && *max_tokens <= 0) {
        fail("generation.max_tokens must be positive");
    }
    if (workers == 0) {
        fail("workers must be >= 1");
    }
    if (max_in_flight == 0) {
        fail("max_in_flight must be >= 1");
    }
    if (api_key_env.empty()) {
        fail("provider.api_key_env must name an environment variable");
    }
}

RunConfig config_from_json(const json& j, const fs::path& base_dir) {
    reject_unknown(j,
                   {"papers", "reviews", "output_dir", "cassette", "cassette_mode", "split", "retrieval", "refinement",
                    "models", "generation", "evaluation", "workers", "max_in_flight", "provider"},
                   "");
    RunConfig c;
    try {
        c.papers = resolve(base_dir, get_or<std::string>(j, "papers", ""));
        c.reviews = resolve(base_dir, get_or<std::string>(j, "reviews", ""));
        c.output_dir = resolve(base_dir, get_or<std::string>(j, "output_dir", "out"));
        c.cassette = resolve(base_dir, get_or<std::string>(j, "cassette", ""));
        c.cassette_mode = llm::parse_cassette_mode(get_or<std::string>(j, "cassette_mode", "replay"));
        if (const auto it = j.find("split"); it != j.end()) {
            reject_unknown(*it, {"seed", "index_size"}, "split.");
            c.seed = get_or<std::uint64_t>(*it, "seed", c.seed);
            c.index_size = get_or<std::size_t>(*it, "index_size", c.index_size);
        }
        if (const auto it = j.find("retrieval"); it != j.end()) {
            reject_unknown(*it, {"enabled", "chunk_size", "k", "w_lex", "w_dense", "token_budget"}, "retrieval.");
            c.use_retrieval = get_or<bool>(*it, "enabled", c.use_retrieval);
            c.chunk_size = get_or<std::size_t>(*it, "chunk_size", c.chunk_size);
            c.hybrid.k = get_or<std::size_t>(*it, "k", c.hybrid.k);
            c.hybrid.w_lex = get_or<double>(*it, "w_lex", c.hybrid.w_lex);
            c.hybrid.w_dense = get_or<double>(*it, "w_dense", c.hybrid.w_dense);
            c.token_budget = get_or<std::size_t>(*it, "token_budget", c.token_budget);
        }
        if (const auto it = j.find("refinement"); it != j.end()) {
            reject_unknown(*it, {"quality_threshold", "novelty_threshold", "max_refinements"}, "refinement.");
            c.policy.quality_threshold = get_or<int>(*it, "quality_threshold", c.policy.quality_threshold);
            c.policy.novelty_threshold = get_or<int>(*it, "novelty_threshold", c.policy.novelty_threshold);
            c.policy.max_refinements = get_or<int>(*it, "max_refinements", c.policy.max_refinements);
        }
        if (const auto it = j.find("models"); it != j.end()) {
            reject_unknown(*it, {"extractor", "generator", "judge", "merger", "embedding"}, "models.");
            c.models.extractor = get_or<std::string>(*it, "extractor", c.models.extractor);
            c.models.generator = get_or<std::string>(*it, "generator", c.models.generator);
            c.models.judge = get_or<std::string>(*it, "judge", c.models.judge);
            c.models.merger = get_or<std::string>(*it, "merger", c.models.merger);
            c.models.embedding = get_or<std::string>(*it, "embedding", c.models.embedding);
        }
        if (const auto it = j.find("generation"); it != j.end()) {
            reject_unknown(*it, {"temperature", "max_tokens", "mode"}, "generation.");
            if (const auto t = it->find("temperature"); t != it->end()) {
                c.temperature = t->is_null() ? std::nullopt : std::optional<double>(t->get<double>());
            }
            if (const auto t = it->find("max_tokens"); t != it->end()) {
                c.max_tokens = t->is_null() ? std::nullopt : std::optional<int>(t->get<int>());
            }
            c.mode = generation::parse_input_mode(get_or<std::string>(*it, "mode", "top3"));
        }
        if (const auto it = j.find("evaluation"); it != j.end()) {
            reject_unknown(*it, {"ground_truth"}, "evaluation.");
            c.ground_truth = parse_ground_truth(get_or<std::string>(*it, "ground_truth", "fw+or"));
        }
        c.workers = get_or<std::size_t>(j, "workers", c.workers);
        c.max_in_flight = get_or<std::size_t>(j, "max_in_flight", c.max_in_flight);
        if (const auto it = j.find("provider"); it != j.end()) {
            reject_unknown(*it, {"base_url", "api_key_env"}, "provider.");
            c.base_url = get_or<std::string>(*it, "base_url", c.base_url);
            c.api_key_env = get_or<std::string>(*it, "api_key_env", c.api_key_env);
        }
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig load_config(const fs::path& file) {
    json j;
    try {
        j = json::parse(read_file(file));
    } catch (const json::exception& e) {
        throw InvalidArgument("config " + file.string() + ": " + e.what());
    }
    return config_from_json(j, file.parent_path());
}

json to_json(const RunConfig& c) {
    return {
        {"papers", c.papers.string()},
        {"reviews", c.reviews.string()},
        {"output_dir", c.output_dir.string()},
        {"cassette", c.cassette.string()},
        {"cassette_mode", llm::to_string(c.cassette_mode)},
        {"split", {{"seed", c.seed}, {"index_size", c.index_size}}},
        {"retrieval",
         {{"enabled", c.use_retrieval},
          {"chunk_size", c.chunk_size},
          {"k", c.hybrid.k},
          {"w_lex", c.hybrid.w_lex},
          {"w_dense", c.hybrid.w_dense},
          {"token_budget", c.token_budget}}},
        {"refinement",
         {{"quality_threshold", c.policy.quality_threshold},
          {"novelty_threshold", c.policy.novelty_threshold},
          {"max_refinements", c.policy.max_refinements}}},
        {"models",
         {{"extractor", c.models.extractor},
          {"generator", c.models.generator},
          {"judge", c.models.judge},
          {"merger", c.models.merger},
          {"embedding", c.models.embedding}}},
        {"generation",
         {{"temperature", c.temperature ? json(*c.temperature) : json(nullptr)},
          {"max_tokens", c.max_tokens ? json(*c.max_tokens) : json(nullptr)},
          {"mode", generation::to_string(c.mode)}}},
        {"evaluation", {{"ground_truth", label(c.ground_truth)}}},
        {"workers", c.workers},
        {"max_in_flight", c.max_in_flight},
        {"provider", {{"base_url", c.base_url}, {"api_key_env", c.api_key_env}}},
    };
}

std::unique_ptr<llm::Gateway> make_gateway(const RunConfig& config, const Providers& providers) {
    std::shared_ptr<llm::Cassette> cassette;
    switch (config.cassette_mode) {
        case llm::CassetteMode::replay:
            cassette = llm::Cassette::open(config.cassette, false);
            break;
        case llm::CassetteMode::record:
            cassette = llm::Cassette::open(config.cassette, true);
            break;
        case llm::CassetteMode::passthrough:
            break;
    }
    auto chat = providers.chat;
    auto embedding = providers.embedding;
    if (config.cassette_mode != llm::CassetteMode::replay && (!chat || !embedding)) {
        auto http = std::make_shared<llm::OpenAiProvider>(config.base_url, config.api_key_env);
        if (!chat) {
            chat = http;
        }
        if (!embedding) {
            embedding = http;
        }
    }
    llm::GatewayOptions options;
    options.mode = config.cassette_mode;
    options.max_in_flight = config.max_in_flight;
    return std::make_unique<llm::Gateway>(options, std::move(cassette), std::move(chat), std::move(embedding));
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                const std::lock_guard lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
            }
        }
    };
    const std::size_t n = std::min(std::max<std::size_t>(workers, 1), count);
    std::vector<std::thread> threads;
    threads.reserve(n > 0 ? n - 1 : 0);
    for (std::size_t t = 1; t < n; ++t) {
        threads.emplace_back(work);
    }
    if (n > 0) {
        work();
    }
    for (auto& t : threads) {
        t.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

StageResult cmd_extract(const RunConfig& config, const Providers& providers) {
    config.validate();
    const auto papers = load_corpus(config);
    std::map<std::string, ReviewSet> reviews;
    if (!config.reviews.empty()) {
        std::set<std::string> known;
        for (const auto& p : papers) {
            known.insert(p.paper_id);
        }
        auto loaded = load_reviews(config.reviews, known);
        for (const auto& w : loaded.warnings) {
            spdlog::warn("{}", w);
        }
        for (auto& rs : loaded.review_sets) {
            auto id = rs.paper_id;
            reviews.emplace(std::move(id), std::move(rs));
        }
    }
    auto gateway = make_gateway(config, providers);

    std::vector<FutureWorkRecord> records(papers.size());
    std::atomic<std::size_t> failed{0};
    parallel_for(papers.size(), config.workers, [&](std::size_t i) {
        const auto& paper = papers[i];
        const auto rs = reviews.find(paper.paper_id);
        try {
            records[i] = build_lineage(paper, rs == reviews.end() ? nullptr : &rs->second, *gateway, config.models);
        } catch (const std::exception& e) {
            spdlog::error("{}: extraction failed: {}", paper.paper_id, e.what());
            records[i] = {};
            records[i].paper_id = paper.paper_id;
            records[i].valid = false;
            records[i].flags = {std::string("extraction_error: ") + e.what()};
            ++failed;
        }
    });

    std::vector<json> rows;
    for (const auto& r : records) {
        rows.push_back(to_json(r));
    }
    const auto out = artifact(config, kLineageFile);
    write_file(out, to_jsonl(rows));
    spdlog::info("extract: {} papers, {} failed -> {}", papers.size(), failed.load(), out.string());
    return {papers.size(), failed.load(), {out}};
}

StageResult cmd_index(const RunConfig& config, const Providers& providers) {
    config.validate();
    const auto papers = load_corpus(config);
    const auto split = split_corpus(papers, config.index_size, config.seed);

    std::vector<PaperRecord> held_out;
    for (const auto& p : papers) {
        if (split.index_ids.count(p.paper_id) != 0) {
            held_out.push_back(p);
        }
    }
    auto gateway = make_gateway(config, providers);
    auto chunks = retrieval::chunk_papers(held_out, config.chunk_size);
    const auto snapshot = retrieval::build_snapshot(std::move(chunks), *gateway, config.models.embedding, config.chunk_size);

    const auto split_file = artifact(config, kSplitFile);
    const auto snapshot_file = artifact(config, kSnapshotFile);
    write_file(split_file, json{{"seed", split.seed},
                                {"index_size", config.index_size},
                                {"eval_ids", split.eval_ids},
                                {"index_ids", split.index_ids}}
                                   .dump(2) +
                               "\n");
    fs::create_directories(config.output_dir);
    retrieval::save_snapshot(snapshot, snapshot_file);
    spdlog::info("index: {} held-out papers, {} chunks -> {}", held_out.size(), snapshot.chunks.size(),
                 snapshot_file.string());
    return {held_out.size(), 0, {split_file, snapshot_file}};
}

StageResult cmd_generate(const RunConfig& config, const Providers& providers) {
    config.validate();
    const auto lineage = load_lineage(config);
    const auto snapshot_file = artifact(config, kSnapshotFile);
    std::optional<retrieval::IndexSnapshot> snapshot;
    if (config.use_retrieval) {
        require_artifact(snapshot_file, "index");
        snapshot = retrieval::load_snapshot(snapshot_file);
        if (snapshot->embedding_model != config.models.embedding) {
            throw InvalidArgument("index snapshot was built with embedding model '" + snapshot->embedding_model +
                                  "' but the config uses '" + config.models.embedding + "'");
        }
    }
    const auto split_file = artifact(config, kSplitFile);
    require_artifact(split_file, "index");
    const auto split = json::parse(read_file(split_file));
    const auto eval_ids = split.at("eval_ids").get<std::vector<std::string>>();
    const auto papers = load_corpus(config);
    auto gateway = make_gateway(config, providers);

    // Stripped copies feed both the section ranking and the generator.
    std::map<std::string, PaperRecord> stripped;
    std::map<std::string, std::string> future_work;
    std::vector<PaperRecord> ranking_papers;
    for (const auto& p : papers) {
        const auto rec = lineage.find(p.paper_id);
        if (rec == lineage.end()) {
            continue;
        }
        auto s = strip_future_work(p, rec->second);
        if (!text::trim(rec->second.tool_extracted).empty()) {
            future_work[p.paper_id] = rec->second.tool_extracted;
            ranking_papers.push_back(s);
        }
        stripped.emplace(p.paper_id, std::move(s));
    }

    std::vector<generation::SectionRank> ranking;
    try {
        ranking = generation::rank_sections(ranking_papers, future_work, *gateway, config.models.embedding);
    } catch (const InvalidArgument& e) {
        if (config.mode == generation::InputMode::top3_sections) {
            throw;
        }
        spdlog::warn("section ranking unavailable: {}", e.what());
    }
    json ranking_json = json::array();
    for (const auto& r : ranking) {
        ranking_json.push_back(
            {{"section", generation::to_string(r.cls)}, {"mean_cosine", r.mean_cosine}, {"papers", r.papers}});
    }
    const auto ranking_file = artifact(config, kRankingFile);
    write_file(ranking_file, json{{"sections", ranking_json}}.dump(2) + "\n");

    struct Job {
        const PaperRecord* paper;
        std::string ground_truth;
    };
    std::vector<Job> jobs;
    for (const auto& id : eval_ids) {
        const auto rec = lineage.find(id);
        const auto paper = stripped.find(id);
        if (rec == lineage.end() || paper == stripped.end()) {
            spdlog::warn("{}: eval paper has no lineage record; skipped", id);
            continue;
        }
        if (!rec->second.valid) {
            spdlog::warn("{}: lineage is invalid ({}); skipped", id, text::join(rec->second.flags, ", "));
            continue;
        }
        auto gt = ground_truth_text(rec->second, config.ground_truth);
        if (text::trim(gt).empty()) {
            spdlog::warn("{}: no {} ground truth; skipped", id, label(config.ground_truth));
            continue;
        }
        jobs.push_back({&paper->second, std::move(gt)});
    }

    refine::LoopModels models;
    models.generator.model = config.models.generator;
    models.generator.temperature = config.temperature;
    models.generator.max_tokens = config.max_tokens;
    models.judge_model = config.models.judge;

    std::vector<refine::LoopResult> results(jobs.size());
    parallel_for(jobs.size(), config.workers, [&](std::size_t i) {
        const auto& paper = *jobs[i].paper;
        try {
            std::vector<retrieval::RetrievedChunk> retrieved;
            if (snapshot) {
                const auto query = generation::retrieval_query(paper, config.mode, ranking);
                if (!text::trim(query).empty()) {
                    retrieved = retrieval::hybrid_retrieve(query, *snapshot, config.hybrid, *gateway);
                }
            }
            const auto bundle =
                generation::assemble_prompt(paper, config.mode, ranking, retrieved, config.token_budget);
            results[i] = refine::run_refinement_loop(bundle, jobs[i].ground_truth, config.policy, *gateway, models);
        } catch (const std::exception& e) {
            spdlog::error("{}: generation failed: {}", paper.paper_id, e.what());
            results[i].error = e.what();
        }
    });

    std::vector<json> traces;
    std::vector<json> failures;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        for (const auto& it : results[i].iterations) {
            auto row = refine::to_json(it);
            row["ground_truth"] = label(config.ground_truth);
            row["generator"] = config.models.generator;
            row["rag"] = config.use_retrieval;
            traces.push_back(std::move(row));
        }
        if (results[i].error) {
            failures.push_back({{"paper_id", jobs[i].paper->paper_id},
                                {"completed_iterations", results[i].iterations.size()},
                                {"error", *results[i].error}});
        }
    }
    const auto traces_file = artifact(config, kTracesFile);
    const auto failures_file = artifact(config, kFailuresFile);
    write_file(traces_file, to_jsonl(traces));
    write_file(failures_file, to_jsonl(failures));
    spdlog::info("generate: {} papers, {} traces, {} failed -> {}", jobs.size(), traces.size(), failures.size(),
                 traces_file.string());
    return {jobs.size(), failures.size(), {ranking_file, traces_file, failures_file}};
}

StageResult cmd_evaluate(const RunConfig& config, GroundTruth gt, const Providers& providers) {
    config.validate();
    const auto lineage = load_lineage(config);
    const auto traces_file = artifact(config, kTracesFile);
    require_artifact(traces_file, "generate");
    const auto papers = load_corpus(config);

    // Traces are grouped per paper in file order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<json>> by_paper;
    for (auto& row : read_jsonl(traces_file)) {
        const auto id = row.at("paper_id").get<std::string>();
        if (by_paper.find(id) == by_paper.end()) {
            order.push_back(id);
        }
        by_paper[id].push_back(std::move(row));
    }
    std::map<std::string, const PaperRecord*> paper_by_id;
    for (const auto& p : papers) {
        paper_by_id[p.paper_id] = &p;
    }
    auto gateway = make_gateway(config, providers);
    const auto& m = config.models;

    std::vector<json> rows(order.size());
    std::atomic<std::size_t> failed{0};
    std::atomic<std::size_t> skipped{0};
    parallel_for(order.size(), config.workers, [&](std::size_t i) {
        const auto& id = order[i];
        json row = {{"paper_id", id}, {"ground_truth", label(gt)}};
        try {
            const auto rec = lineage.find(id);
            const auto paper = paper_by_id.find(id);
            if (rec == lineage.end() || paper == paper_by_id.end()) {
                throw InputError("paper " + id + " is missing from the corpus or lineage");
            }
            const auto gt_text = ground_truth_text(rec->second, gt);
            if (text::trim(gt_text).empty()) {
                row["skipped"] = "no " + std::string(label(gt)) + " ground truth";
                rows[i] = std::move(row);
                ++skipped;
                return;
            }
            const auto& traces = by_paper.at(id);
            row["mode"] = traces.front().at("mode");
            row["generator"] = traces.front().value("generator", m.generator);
            row["rag"] = traces.front().value("rag", true);
            row["judge"] = m.judge;

            json iterations = json::array();
            for (const auto& t : traces) {
                const auto output = t.at("output").get<std::string>();
                const auto report = metrics::evaluate_all(output, gt_text, gateway.get(), m.embedding);
                const auto quality = judge::judge_quality(output, gt_text, *gateway, m.judge);
                const auto novelty = judge::judge_novelty(output, gt_text, *gateway, m.judge);
                iterations.push_back({{"iteration", t.at("iteration")},
                                      {"metrics", metrics::to_json(report)},
                                      {"quality", judge::to_json(quality)},
                                      {"novelty", judge::to_json(novelty)}});
            }
            row["iterations"] = iterations;

            const auto final_output = traces.back().at("output").get<std::string>();
            const auto paper_text = paper_body_text(strip_future_work(*paper->second, rec->second));
            const auto nli = judge::judge_hallucination(paper_text, gt_text, final_output, *gateway, m.judge);
            const auto feasible = judge::judge_feasibility(paper_text, final_output, *gateway, m.judge);
            row["hallucination"] = {{"label", judge::to_string(nli.label)}, {"hallucinated", nli.hallucinated}};
            row["feasible"] = feasible.feasible;

            // Extracted future work scored with the first generation as the reference.
            const auto first_output = traces.front().at("output").get<std::string>();
            json agreement = json::object();
            for (const auto& [key, source] : {std::pair{"F_t", rec->second.tool_extracted},
                                              std::pair{"F_g", rec->second.llm_extracted}}) {
                agreement[key] = text::trim(source).empty()
                                     ? json(nullptr)
                                     : metrics::to_json(metrics::evaluate_all(source, first_output, gateway.get(),
                                                                              m.embedding));
            }
            row["extraction_agreement"] = agreement;
        } catch (const std::exception& e) {
            spdlog::error("{}: evaluation failed: {}", id, e.what());
            row["error"] = e.what();
            ++failed;
        }
        rows[i] = std::move(row);
    });

    const auto out = artifact(config, evaluation_file_name(gt));
    write_file(out, to_jsonl(rows));
    spdlog::info("evaluate {}: {} papers, {} skipped, {} failed -> {}", label(gt), rows.size(), skipped.load(),
                 failed.load(), out.string());
    return {rows.size(), failed.load(), {out}};
}

StageResult cmd_report(const RunConfig& config) {
    config.validate();
    std::vector<EvaluationSet> sets;
    for (const auto gt : kAllGroundTruths) {
        const auto file = artifact(config, evaluation_file_name(gt));
        if (!fs::exists(file)) {
            continue;
        }
        EvaluationSet set{gt, {}, 0};
        for (auto& row : read_jsonl(file)) {
            if (row.contains("error")) {
                ++set.failures;
            } else if (!row.contains("skipped")) {
                set.rows.push_back(std::move(row));
            }
        }
        sets.push_back(std::move(set));
    }
    if (sets.empty()) {
        throw InputError("missing prerequisite artifact " + artifact(config, evaluation_file_name(config.ground_truth)).string() +
                         " (run `fwgen evaluate` first)");
    }
    // Single-set tables use the configured ground truth when it was evaluated.
    const EvaluationSet* primary = &sets.front();
    for (const auto& s : sets) {
        if (s.gt == config.ground_truth) {
            primary = &s;
        }
    }

    const std::vector<std::string> metric_cols{"rouge1", "rouge2", "rougeL", "jaccard", "cosine", "bleu"};
    auto metric_cells = [](const MetricMeans& mm) {
        return std::vector<std::string>{cell(mm.rouge1, 100), cell(mm.rouge2, 100), cell(mm.rougeL, 100),
                                        cell(mm.jaccard, 100), cell(mm.cosine, 100), cell(mm.bleu, 100)};
    };

    // Extraction agreement.
    Table t2{{"reference", "papers"}, {}};
    t2.header.insert(t2.header.end(), metric_cols.begin(), metric_cols.end());
    for (const std::string key : {"F_t", "F_g"}) {
        MetricMeans mm;
        std::size_t n = 0;
        for (const auto& row : primary->rows) {
            const auto& a = row.at("extraction_agreement").at(key);
            if (!a.is_null()) {
                mm.add(metrics::metric_report_from_json(a));
                ++n;
            }
        }
        auto cells = metric_cells(mm);
        cells.insert(cells.begin(), {key, std::to_string(n)});
        t2.rows.push_back(std::move(cells));
    }

    // Section ranking.
    Table t3{{"rank", "section", "mean_cosine", "papers"}, {}};
    if (const auto file = artifact(config, kRankingFile); fs::exists(file)) {
        std::size_t rank = 1;
        const auto ranking = json::parse(read_file(file));
        for (const auto& s : ranking.at("sections")) {
            t3.rows.push_back({std::to_string(rank++), s.at("section").get<std::string>(),
                               fmt2(s.at("mean_cosine").get<double>() * 100.0),
                               std::to_string(s.at("papers").get<std::size_t>())});
        }
    }

    // First iteration against final iteration.
    MetricMeans first_m, final_m;
    JudgeMeans first_j, final_j;
    for (const auto& row : primary->rows) {
        const auto& its = row.at("iterations");
        first_m.add(metrics::metric_report_from_json(its.front().at("metrics")));
        final_m.add(metrics::metric_report_from_json(its.back().at("metrics")));
        first_j.add(judge::judge_scores_from_json(its.front().at("quality")),
                    judge::novelty_from_json(its.front().at("novelty")));
        final_j.add(judge::judge_scores_from_json(its.back().at("quality")),
                    judge::novelty_from_json(its.back().at("novelty")));
    }
    Table t4{{"metric", "without_feedback", "with_feedback", "delta"}, {}};
    auto t4_row = [&t4](const std::string& name, const Mean& a, const Mean& b, double scale) {
        std::string delta = "NA";
        if (a.value() && b.value()) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%+.2f", (*b.value() - *a.value()) * scale);
            delta = buf;
        }
        t4.rows.push_back({name, cell(a, scale), cell(b, scale), delta});
    };
    t4_row("ROUGE-1", first_m.rouge1, final_m.rouge1, 100);
    t4_row("ROUGE-2", first_m.rouge2, final_m.rouge2, 100);
    t4_row("ROUGE-L", first_m.rougeL, final_m.rougeL, 100);
    t4_row("Jaccard", first_m.jaccard, final_m.jaccard, 100);
    t4_row("Cosine", first_m.cosine, final_m.cosine, 100);
    t4_row("BLEU", first_m.bleu, final_m.bleu, 100);
    t4_row("Coherence", first_j.coherence, final_j.coherence, 1);
    t4_row("Relevance", first_j.relevance, final_j.relevance, 1);
    t4_row("Readability", first_j.readability, final_j.readability, 1);
    t4_row("Grammar", first_j.grammar, final_j.grammar, 1);
    t4_row("Overall", first_j.overall, final_j.overall, 1);
    t4_row("Novelty", first_j.novelty, final_j.novelty, 1);

    // Ground truth by iteration.
    Table t5{{"gt", "iteration", "papers", "rougeL", "cosine", "jaccard", "bleu", "coherence", "relevance",
              "readability", "grammar", "novelty", "overall"},
             {}};
    for (const auto& set : sets) {
        std::map<std::int64_t, std::pair<MetricMeans, JudgeMeans>> by_iter;
        for (const auto& row : set.rows) {
            for (const auto& it : row.at("iterations")) {
                auto& [mm, jm] = by_iter[it.at("iteration").get<std::int64_t>()];
                mm.add(metrics::metric_report_from_json(it.at("metrics")));
                jm.add(judge::judge_scores_from_json(it.at("quality")), judge::novelty_from_json(it.at("novelty")));
            }
        }
        for (const auto& [iter, acc] : by_iter) {
            const auto& [mm, jm] = acc;
            t5.rows.push_back({std::string(label(set.gt)), std::to_string(iter), std::to_string(mm.rougeL.n),
                               cell(mm.rougeL, 100), cell(mm.cosine, 100), cell(mm.jaccard, 100), cell(mm.bleu, 100),
                               cell(jm.coherence), cell(jm.relevance), cell(jm.readability), cell(jm.grammar),
                               cell(jm.novelty), cell(jm.overall)});
        }
    }

    // Input mode, first iteration.
    Table t6{{"mode", "papers"}, {}};
    t6.header.insert(t6.header.end(), metric_cols.begin(), metric_cols.end());
    std::map<std::string, MetricMeans> by_mode;
    for (const auto& row : primary->rows) {
        by_mode[row.at("mode").get<std::string>()].add(
            metrics::metric_report_from_json(row.at("iterations").front().at("metrics")));
    }
    for (const auto& [mode, mm] : by_mode) {
        auto cells = metric_cells(mm);
        cells.insert(cells.begin(), {mode, std::to_string(mm.rouge1.n)});
        t6.rows.push_back(std::move(cells));
    }

    // Hallucination and feasibility.
    Table t7{{"gt", "generator", "rag", "judge", "hallucinated", "total", "hallucination_rate", "feasible",
              "feasibility_rate"},
             {}};
    json rates = json::object();
    for (const auto& set : sets) {
        std::map<std::tuple<std::string, bool, std::string>, std::vector<judge::VerdictRecord>> groups;
        for (const auto& row : set.rows) {
            groups[{row.at("generator").get<std::string>(), row.at("rag").get<bool>(),
                    row.at("judge").get<std::string>()}]
                .push_back({row.at("hallucination").at("hallucinated").get<bool>(), row.at("feasible").get<bool>()});
        }
        for (const auto& [key, verdicts] : groups) {
            const auto r = judge::aggregate_rates(verdicts);
            const auto& [gen, rag, judge_model] = key;
            t7.rows.push_back({std::string(label(set.gt)), gen, rag ? "yes" : "no", judge_model,
                               std::to_string(r.hallucination->positive), std::to_string(r.hallucination->total),
                               judge::format_rate(*r.hallucination), std::to_string(r.feasibility->positive),
                               judge::format_rate(*r.feasibility)});
        }
    }

    const auto dir = config.output_dir / "report";
    const std::vector<std::pair<std::string, const Table*>> tables{
        {"extraction_agreement", &t2}, {"section_ranking", &t3}, {"feedback", &t4},
        {"ground_truth", &t5},         {"input_mode", &t6},      {"hallucination", &t7}};
    StageResult result;
    json summary = {{"ground_truths", json::array()}, {"tables", json::object()}};
    for (const auto& set : sets) {
        summary["ground_truths"].push_back(
            {{"ground_truth", label(set.gt)}, {"papers", set.rows.size()}, {"failures", set.failures}});
        result.processed += set.rows.size();
        result.failed += set.failures;
    }
    summary["primary_ground_truth"] = label(primary->gt);
    for (const auto& [name, table] : tables) {
        const auto file = dir / (name + ".tsv");
        write_file(file, table->tsv());
        summary["tables"][name] = table->as_json();
        result.outputs.push_back(file);
    }
    const auto summary_file = dir / fs::path(std::string(kSummaryFile));
    write_file(summary_file, summary.dump(2) + "\n");
    result.outputs.push_back(summary_file);
    spdlog::info("report: {} tables -> {}", tables.size(), dir.string());
    return result;
}

}  // namespace fwgen::pipeline
