#include "fakes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "fwgen/errors.hpp"
#include "fwgen/text.hpp"

namespace fwgen::testing {
namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string between(const std::string& s, std::string_view start, std::string_view end = {}) {
    const auto b = s.find(start);
    if (b == std::string::npos) {
        return {};
    }
    const auto from = b + start.size();
    const auto e = end.empty() ? std::string::npos : s.find(end, from);
    return s.substr(from, e == std::string::npos ? std::string::npos : e - from);
}

std::vector<std::string> sentences_with(const std::string& body, std::initializer_list<std::string_view> words,
                                        bool keep_matching) {
    std::vector<std::string> out;
    for (const auto& s : text::split_sentences(body)) {
        const bool hit = std::any_of(words.begin(), words.end(), [&](std::string_view w) { return text::contains_icase(s, w); });
        if (hit == keep_matching) {
            out.push_back(text::trim(s));
        }
    }
    return out;
}

std::string first_words(const std::string& s, std::size_t n) {
    auto tokens = text::tokenize(s);
    tokens.resize(std::min(n, tokens.size()));
    return text::join(tokens, " ");
}

}  // namespace

ScriptedChat::ScriptedChat(std::vector<std::string> responses) : responses_(responses.begin(), responses.end()) {}

void ScriptedChat::push(std::string response) {
    const std::lock_guard lock(mutex_);
    responses_.push_back(std::move(response));
}

llm::ChatResponse ScriptedChat::complete(const llm::ChatRequest& request) {
    const std::lock_guard lock(mutex_);
    requests_.push_back(request);
    if (responses_.empty()) {
        throw GatewayError("scripted chat has no response left");
    }
    auto text = std::move(responses_.front());
    responses_.pop_front();
    return {std::move(text), {10, 5}};
}

std::vector<llm::ChatRequest> ScriptedChat::requests() const {
    const std::lock_guard lock(mutex_);
    return requests_;
}

std::size_t ScriptedChat::calls() const {
    const std::lock_guard lock(mutex_);
    return requests_.size();
}

FunctionChat::FunctionChat(std::function<std::string(const llm::ChatRequest&)> fn) : fn_(std::move(fn)) {}

llm::ChatResponse FunctionChat::complete(const llm::ChatRequest& request) {
    ++calls_;
    return {fn_(request), {static_cast<std::int64_t>(request.messages.size()), 1}};
}

FlakyChat::FlakyChat(int failures, std::string reply) : failures_(failures), reply_(std::move(reply)) {}

llm::ChatResponse FlakyChat::complete(const llm::ChatRequest&) {
    if (calls_++ < failures_) {
        throw TransientError("simulated 503");
    }
    return {reply_, {}};
}

SlowChat::SlowChat(std::chrono::milliseconds delay) : delay_(delay) {}

llm::ChatResponse SlowChat::complete(const llm::ChatRequest& request) {
    const int now = ++current_;
    int seen = max_.load();
    while (now > seen && !max_.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(delay_);
    --current_;
    return {request.messages.back().content, {}};
}

HashEmbedder::HashEmbedder(std::size_t dimension) : dimension_(std::max<std::size_t>(dimension, 2)) {}

llm::Vector HashEmbedder::vector_for(const std::string& s) const {
    if (const auto it = pinned_.find(s); it != pinned_.end()) {
        return it->second;
    }
    llm::Vector v(dimension_, 0.0);
    v[0] = 1.0;
    for (const auto& tok : text::tokenize(s)) {
        v[1 + fnv1a(tok) % (dimension_ - 1)] += 1.0;
    }
    return v;
}

std::vector<llm::Vector> HashEmbedder::embed(std::string_view, std::span<const std::string> texts) {
    {
        const std::lock_guard lock(mutex_);
        batches_.push_back(texts.size());
    }
    std::vector<llm::Vector> out;
    for (const auto& t : texts) {
        out.push_back(vector_for(t));
    }
    return out;
}

void HashEmbedder::pin(const std::string& s, llm::Vector v) { pinned_[s] = std::move(v); }

std::vector<std::size_t> HashEmbedder::batch_sizes() const {
    const std::lock_guard lock(mutex_);
    return batches_;
}

std::string simulated_reply(const llm::ChatRequest& request) {
    const auto& prompt = request.messages.back().content;
    const auto& first = request.messages.front().content;
    if (request.messages.size() > 1) {
        return "unexpected re-prompt";
    }
    if (first.rfind("You are an extractor.", 0) == 0) {
        return text::join(sentences_with(between(prompt, "Text:\n"), {"future", "plan", "will"}, true), " ");
    }
    if (first.find("contains peer reviews") != std::string::npos) {
        return text::join(sentences_with(between(prompt, "Reviews:\n"), {"should", "could"}, true), "\n");
    }
    if (first.find("true long-term research goals") != std::string::npos) {
        return text::join(sentences_with(between(prompt, "Suggestions:\n"), {"typo", "citation"}, false), "\n");
    }
    if (first.rfind("You are a master agent.", 0) == 0) {
        const auto author = text::trim(between(prompt, "Author-mentioned future work:\n", "\n\nLong-term goals"));
        const auto goals = text::trim(between(prompt, "Long-term goals from peer reviews:\n"));
        return author + "\n" + goals;
    }
    if (first.rfind("Your task is to generate a refined", 0) == 0) {
        const auto feedback = between(prompt, "[LLM Feedback]\n", "\n\n");
        return "Refined future work: extend " + first_words(between(prompt, "[Abstract]\n"), 4) +
               " to multilingual corpora, and address the concern that " + first_words(feedback, 6) + ".";
    }
    if (first.rfind("Your task is to generate", 0) == 0) {
        return "Future work could apply " + first_words(between(prompt, "[Abstract]\n"), 5) +
               " to larger datasets. Another direction is a user study of the outputs.";
    }
    if (first.find("Machine-Generated Text:") != std::string::npos) {
        const auto generated = between(prompt, "Machine-Generated Text:\n", "\n\nGround Truth:");
        if (generated.rfind("Refined", 0) == 0) {
            return R"({"coherence": 4, "relevance": 5, "readability": 4, "grammar": 5, "overall": 4, )"
                   R"("justification": "Clear and relevant suggestions."})";
        }
        return R"({"coherence": 4, "relevance": 3, "readability": 4, "grammar": 5, "overall": 4, )"
               R"("justification": "Relevance to the ground truth is limited."})";
    }
    if (first.find("novelty and innovation") != std::string::npos) {
        return R"({"score": 8, "reason": "Adds directions absent from the ground truth."})";
    }
    if (first.find("natural language inference") != std::string::npos) {
        return fnv1a(between(prompt, "Hypothesis: ")) % 3 == 0 ? "neutral" : "Entailment.";
    }
    if (first.find("'feasible' or 'not feasible'") != std::string::npos) {
        return "feasible";
    }
    return "unrecognised prompt";
}

std::shared_ptr<FunctionChat> simulated_model() { return std::make_shared<FunctionChat>(simulated_reply); }

std::unique_ptr<llm::Gateway> make_test_gateway(llm::CassetteMode mode, std::shared_ptr<llm::Cassette> cassette,
                                                std::shared_ptr<llm::ChatProvider> chat,
                                                std::shared_ptr<llm::EmbeddingProvider> embedding,
                                                std::size_t max_in_flight) {
    llm::GatewayOptions options;
    options.mode = mode;
    options.max_in_flight = max_in_flight;
    options.sleep = [](std::chrono::milliseconds) {};
    return std::make_unique<llm::Gateway>(options, std::move(cassette), std::move(chat), std::move(embedding));
}

std::unique_ptr<llm::Gateway> passthrough(std::shared_ptr<llm::ChatProvider> chat,
                                          std::shared_ptr<llm::EmbeddingProvider> embedding) {
    return make_test_gateway(llm::CassetteMode::passthrough, nullptr, std::move(chat), std::move(embedding));
}

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("fwgen-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

void write_text(const fs::path& file, const std::string& content) {
    if (file.has_parent_path()) {
        fs::create_directories(file.parent_path());
    }
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << content;
}

std::string read_text(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_fixture_corpus(const fs::path& dir) {
    using nlohmann::json;
    auto paper = [](std::string id, std::string title, std::string abstract,
                    std::vector<std::pair<std::string, std::string>> sections) {
        json s = json::array();
        for (auto& [h, t] : sections) {
            s.push_back({{"heading", h}, {"text", t}});
        }
        return json{{"paper_id", id}, {"title", title}, {"abstract", abstract}, {"sections", s}, {"venue", "NeurIPS"},
                    {"year", 2023}};
    };
    const std::vector<json> papers{
        paper("p01", "Sparse adapters for translation",
              "We study sparse adapters for neural machine translation. Adapters reduce the cost of fine-tuning.",
              {{"Introduction", "Translation models are large. Fine-tuning them is expensive."},
               {"Method", "We insert sparse adapters after each attention block. Only adapters are trained."},
               {"Experiments", "We evaluate on six language pairs. Sparse adapters match full fine-tuning."},
               {"Limitations and Future Work",
                "Our study covers only high-resource pairs. In future work we will test low-resource pairs. We "
                "also plan to combine adapters with distillation."}}),
        paper("p02", "Retrieval for question answering",
              "We present a retriever for open-domain question answering. It improves recall on two benchmarks.",
              {{"Introduction", "Open-domain QA needs good retrieval. Dense retrievers are popular."},
               {"Related Work", "Prior work uses BM25. Dense methods followed."},
               {"Results", "Recall improves by four points. Latency stays constant."},
               {"Conclusion",
                "We conclude that hybrid retrieval helps. In the future we will study multilingual retrieval. We "
                "plan to release the index. This work was supported by grant 42."}}),
        paper("p03", "A corpus of scientific claims",
              "We release a corpus of annotated scientific claims. Annotators labelled claim strength.",
              {{"Introduction", "Claims vary in strength. Readers misjudge them."},
               {"Data", "The corpus has 5000 claims. Each claim has three labels."},
               {"Conclusion", "The corpus enables claim-strength modelling."}}),
        paper("p04", "Efficient summarisation",
              "We propose an efficient summariser for long documents. It reduces memory by half.",
              {{"Introduction", "Long documents strain memory. Summarisers truncate inputs."},
               {"Approach", "We chunk documents and summarise hierarchically."},
               {"Evaluation", "Quality is on par with baselines. Memory halves."},
               {"Future Directions", "Future work will extend the method to dialogue. We will also study faithfulness."}}),
        paper("p05", "Bias in reviewer assignment",
              "We analyse bias in automatic reviewer assignment. Assignment favours senior reviewers.",
              {{"Introduction", "Conferences assign reviewers automatically. Bias may arise."},
               {"Analysis", "Senior reviewers receive more papers. Junior reviewers receive fewer."},
               {"Discussion",
                "The effect is consistent across years. Future studies will examine other venues. We will "
                "collaborate with organisers."}}),
    };
    for (const auto& p : papers) {
        write_text(dir / "papers" / (p.at("paper_id").get<std::string>() + ".json"), p.dump(2));
    }
    const std::vector<json> reviews{
        {{"paper_id", "p01"},
         {"review_text", "The paper is clear. The authors should evaluate on speech translation. The authors "
                         "should fix the typo in Table 2."}},
        {{"paper_id", "p01"}, {"review_text", "Nice work. It could be extended to multimodal inputs."}},
        {{"paper_id", "p02"}, {"review_text", "Solid results. The authors should study robustness to noisy queries."}},
        {{"paper_id", "p03"},
         {"review_text", "Useful resource. Future releases should cover more domains. The authors should add a "
                         "citation for the annotation scheme."}},
    };
    std::string lines;
    for (const auto& r : reviews) {
        lines += r.dump() + "\n";
    }
    write_text(dir / "reviews.jsonl", lines);
}

nlohmann::json fixture_config(const fs::path& dir, const std::string& cassette_mode) {
    return {{"papers", (dir / "papers").string()},
            {"reviews", (dir / "reviews.jsonl").string()},
            {"output_dir", (dir / "out").string()},
            {"cassette", (dir / "cassette.jsonl").string()},
            {"cassette_mode", cassette_mode},
            {"split", {{"seed", 7}, {"index_size", 2}}},
            {"retrieval", {{"chunk_size", 32}, {"k", 3}}},
            {"workers", 3}};
}

std::string random_word(std::mt19937_64& rng, std::size_t vocab) {
    static const std::vector<std::string> words{"model", "data",  "future", "work", "graph", "text",
                                                "study", "large", "new",    "the",  "of",    "a",
                                                "paper", "task",  "learn",  "rank", "query", "index"};
    std::uniform_int_distribution<std::size_t> pick(0, std::min(vocab, words.size()) - 1);
    return words[pick(rng)];
}

std::string random_text(std::mt19937_64& rng, std::size_t max_words, std::size_t vocab) {
    std::uniform_int_distribution<std::size_t> len(0, max_words);
    std::uniform_int_distribution<int> punct(0, 9);
    const std::size_t n = len(rng);
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        auto w = random_word(rng, vocab);
        if (punct(rng) == 0) {
            w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
        }
        out += w;
        if (i + 1 < n) {
            out += punct(rng) == 1 ? ", " : " ";
        }
    }
    return out;
}

RankingFixture ranking_fixture(const std::map<generation::SectionClass, double>& means) {
    using generation::SectionClass;
    RankingFixture f;
    f.embedder = std::make_shared<HashEmbedder>();
    const std::size_t dim = means.size() + 1;
    PaperRecord p;
    p.paper_id = "r01";
    p.title = "Ranking fixture";
    llm::Vector fw(dim, 0.0);
    fw[0] = 1.0;
    f.future_work[p.paper_id] = "future work text";
    f.embedder->pin("future work text", fw);
    std::size_t axis = 1;
    for (const auto& [cls, m] : means) {
        const std::string body = "body of " + std::string(generation::to_string(cls));
        llm::Vector v(dim, 0.0);
        v[0] = m;
        v[axis++] = std::sqrt(1.0 - m * m);
        f.embedder->pin(body, v);
        if (cls == SectionClass::abstract) {
            p.abstract = body;
        } else {
            p.sections.push_back({std::string(generation::to_string(cls)), body, p.sections.size()});
        }
    }
    f.papers.push_back(p);
    return f;
}

std::map<generation::SectionClass, double> reference_section_means() {
    using generation::SectionClass;
    return {{SectionClass::abstract, 0.25},    {SectionClass::introduction, 0.25}, {SectionClass::conclusion, 0.22},
            {SectionClass::experiment, 0.22},  {SectionClass::related_work, 0.21}, {SectionClass::limitations, 0.21},
            {SectionClass::methodology, 0.15}, {SectionClass::data, 0.08}};
}

PromptFixture random_prompt_fixture(std::mt19937_64& rng) {
    using generation::SectionClass;
    static const std::vector<std::string> headings{"Introduction", "Related Work", "Dataset",    "Method",
                                                   "Experiments",  "Conclusion",   "Limitations", "Appendix"};
    auto words = [&rng](std::size_t lo, std::size_t hi) {
        std::uniform_int_distribution<std::size_t> n(lo, hi);
        const std::size_t count = n(rng);
        std::string out;
        for (std::size_t i = 0; i < count; ++i) {
            out += random_word(rng, 18);
            out += (i % 17 == 16) ? ". " : " ";
        }
        return out;
    };
    std::uniform_int_distribution<int> coin(0, 3);
    PromptFixture f;
    f.paper.paper_id = "q" + std::to_string(rng() % 100000);
    f.paper.abstract = coin(rng) == 0 ? words(2000, 4500) : words(0, 300);
    std::uniform_int_distribution<std::size_t> nsec(0, 7);
    const std::size_t sections = nsec(rng);
    for (std::size_t i = 0; i < sections; ++i) {
        f.paper.sections.push_back({headings[rng() % headings.size()], words(0, 1500), i});
    }
    std::vector<SectionClass> classes{SectionClass::abstract,    SectionClass::introduction, SectionClass::conclusion,
                                      SectionClass::experiment,  SectionClass::related_work, SectionClass::limitations,
                                      SectionClass::methodology, SectionClass::data};
    std::shuffle(classes.begin(), classes.end(), rng);
    for (std::size_t i = 0; i < classes.size(); ++i) {
        f.ranking.push_back({classes[i], 1.0 - 0.1 * static_cast<double>(i), 1});
    }
    std::uniform_int_distribution<std::size_t> nret(0, 3);
    const std::size_t k = nret(rng);
    for (std::size_t i = 0; i < k; ++i) {
        retrieval::RetrievedChunk r;
        r.chunk.chunk_id = static_cast<retrieval::ChunkId>(i);
        r.chunk.paper_id = "idx" + std::to_string(i);
        r.chunk.text = words(1, 512);
        r.chunk.token_count = text::count_tokens(r.chunk.text);
        r.rank = i + 1;
        f.retrieved.push_back(r);
    }
    f.mode = coin(rng) == 0 ? generation::InputMode::all_sections : generation::InputMode::top3_sections;
    f.feedback = words(1, 300);
    return f;
}

void run_all_stages(const pipeline::RunConfig& config, const pipeline::Providers& providers) {
    pipeline::cmd_extract(config, providers);
    pipeline::cmd_index(config, providers);
    pipeline::cmd_generate(config, providers);
    for (const auto gt : {pipeline::GroundTruth::fw, pipeline::GroundTruth::review, pipeline::GroundTruth::merged}) {
        pipeline::cmd_evaluate(config, gt, providers);
    }
    pipeline::cmd_report(config);
}

std::vector<std::string> deterministic_artifacts() {
    return {"lineage.jsonl",
            "split.json",
            "index.snapshot",
            "section_ranking.json",
            "traces.jsonl",
            "evaluation_fw.jsonl",
            "evaluation_or.jsonl",
            "evaluation_fw_or.jsonl",
            "report/extraction_agreement.tsv",
            "report/section_ranking.tsv",
            "report/feedback.tsv",
            "report/ground_truth.tsv",
            "report/input_mode.tsv",
            "report/hallucination.tsv",
            "report/summary.json"};
}

}  // namespace fwgen::testing
