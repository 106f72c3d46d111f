// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
#include <chrono>
#include <cstdio>
#include <exception>
#include <functional>
#include <random>
#include <sstream>

#include "fakes.hpp"
#include "fwgen/errors.hpp"
#include "fwgen/extraction.hpp"
#include "fwgen/generation.hpp"
#include "fwgen/judge.hpp"
#include "fwgen/metrics.hpp"
#include "fwgen/pipeline.hpp"
#include "fwgen/refine.hpp"
#include "fwgen/retrieval.hpp"
#include "fwgen/text.hpp"
#include "oracles.hpp"

using namespace fwgen;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// AC1: metrics against brute-force oracles.
Outcome ac1() {
    Outcome o;
    std::mt19937_64 rng(2024);
    const auto start = Clock::now();
    for (int i = 0; i < 100; ++i) {
        const auto c = testing::random_text(rng, 30, 8);
        const auto r = testing::random_text(rng, 30, 8);
        const std::string pair = " on pair " + std::to_string(i);
        o.require(metrics::rouge_n(c, r, 1) == oracle::rouge_n(c, r, 1), "rouge1 differs" + pair);
        o.require(metrics::rouge_n(c, r, 2) == oracle::rouge_n(c, r, 2), "rouge2 differs" + pair);
        o.require(metrics::rouge_l(c, r) == oracle::rouge_l(c, r), "rougeL differs" + pair);
        o.require(metrics::jaccard(c, r) == oracle::jaccard(c, r), "jaccard differs" + pair);
        o.require(std::abs(metrics::bleu(c, r) - oracle::bleu(c, r)) <= 1e-9, "bleu differs" + pair);
    }
    const double secs = seconds_since(start);
    o.require(secs < 5.0, "took " + fmt("%.2f s", secs));
    if (o.pass) {
        o.detail = "100 pairs exact, " + fmt("%.3f s", secs);
    }
    return o;
}

// AC2: hybrid retrieval against a score-and-sort oracle.
Outcome ac2() {
    Outcome o;
    std::mt19937_64 rng(99);
    auto embedder = std::make_shared<testing::HashEmbedder>(16);
    auto gw = testing::passthrough(nullptr, embedder);
    std::size_t compared = 0;
    for (int t = 0; t < 25; ++t) {
        std::vector<retrieval::Chunk> chunks;
        for (std::size_t n = 1 + rng() % 50; n > 0; --n) {
            std::string body = testing::random_text(rng, 20, 18);
            if (body.empty()) {
                body = testing::random_word(rng, 18);
            }
            chunks.push_back({static_cast<retrieval::ChunkId>(chunks.size()), "p" + std::to_string(t), body,
                              text::count_tokens(body)});
        }
        const auto snap = retrieval::build_snapshot(chunks, *gw, "e", 64);
        std::string query = testing::random_text(rng, 6, 18);
        if (query.empty()) {
            query = "model";
        }
        const auto q = text::tokenize(query);
        const auto lex = oracle::bm25_all(chunks, q);
        std::vector<double> cos;
        for (const auto& c : chunks) {
            cos.push_back(oracle::cosine(embedder->vector_for(c.text), embedder->vector_for(query)));
        }
        const std::size_t k = 1 + rng() % 8;
        const auto nl = oracle::minmax(lex);
        const auto nd = oracle::minmax(cos);
        std::vector<double> fused;
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            fused.push_back(0.5 * nl[i] + 0.5 * nd[i]);
        }
        auto ids = [](const std::vector<retrieval::RetrievedChunk>& got) {
            std::vector<retrieval::ChunkId> out;
            for (const auto& g : got) {
                out.push_back(g.chunk.chunk_id);
            }
            return out;
        };
        const std::string where = " on corpus " + std::to_string(t);
        o.require(ids(retrieval::hybrid_retrieve(query, snap, {k, 0.5, 0.5}, *gw)) == oracle::rank(chunks, fused, k),
                  "equal-weight ranking differs" + where);
        o.require(ids(retrieval::hybrid_retrieve(query, snap, {k, 1.0, 0.0}, *gw)) == oracle::rank(chunks, lex, k),
                  "w=(1,0) is not pure BM25" + where);
        o.require(ids(retrieval::hybrid_retrieve(query, snap, {k, 0.0, 1.0}, *gw)) == oracle::rank(chunks, cos, k),
                  "w=(0,1) is not pure cosine" + where);
        ++compared;
    }
    if (o.pass) {
        o.detail = std::to_string(compared) + " corpora, 3 weightings each";
    }
    return o;
}

// AC3: BM25 single-chunk hand value.
Outcome ac3() {
    Outcome o;
    const std::vector<retrieval::Chunk> chunks{{0, "p", "a a b", 3}};
    const auto index = retrieval::build_bm25(chunks);
    const std::vector<std::string> q{"a"};
    const double got = retrieval::bm25_score(index, q, 0);
    // idf = ln(1 + 0.5/1.5), tf part = 2 * 2.2 / (2 + 1.2).
    const double hand = std::log(4.0 / 3.0) * 4.4 / 3.2;
    o.require(std::abs(got - 0.3956) <= 1e-4, "score " + fmt("%.6f", got));
    o.require(std::abs(got - hand) <= 1e-12, "differs from the hand formula");
    o.detail = "score " + fmt("%.6f", got);
    return o;
}

// AC4: rule-based extraction on a 20-paper synthetic corpus.
Outcome ac4() {
    struct Case {
        PaperRecord paper;
        std::string expected;
        ExtractionMode mode;
    };
    const std::vector<std::string> topics{"parsing", "retrieval", "translation", "summarization"};
    std::vector<Case> cases;
    for (const auto& topic : topics) {
        auto make = [&](std::vector<std::pair<std::string, std::string>> secs, std::string abstract = "") {
            PaperRecord p;
            p.paper_id = topic + std::to_string(cases.size());
            p.abstract = std::move(abstract);
            for (auto& [h, t] : secs) {
                p.sections.push_back({h, t, p.sections.size()});
            }
            return p;
        };
        // Explicit section, taken whole even without the keyword.
        cases.push_back({make({{"Introduction", "We study " + topic + "."},
                               {"Future Work", "Scaling " + topic + " is open. We will try larger data."}}),
                         "Scaling " + topic + " is open. We will try larger data.", ExtractionMode::explicit_section});
        // Explicit heading wins over implicit keyword sentences elsewhere.
        cases.push_back({make({{"Conclusion", "In future we test " + topic + "."},
                               {"Limitations and Future Directions", "Only English " + topic + " was tested."}}),
                         "Only English " + topic + " was tested.", ExtractionMode::explicit_section});
        // Implicit span from the keyword sentence to the section end.
        cases.push_back({make({{"Conclusion", "Our " + topic + " model works. In future work we add speech. "
                                                 "We also plan a demo."}}),
                         "In future work we add speech. We also plan a demo.", ExtractionMode::implicit_keyword});
        // Stop keyword truncates the span.
        cases.push_back({make({{"Conclusion", "In the future, " + topic + " will grow. Tuning helps. "
                                                "This work was funded by grant 7. Thanks."}}),
                         "In the future, " + topic + " will grow. Tuning helps.", ExtractionMode::implicit_keyword});
        // Keyword only in the abstract and deny-listed sections.
        cases.push_back({make({{"Introduction", "The future of " + topic + " is bright."},
                               {"Related Work", "Future systems exist."},
                               {"Method", "We use future states."},
                               {"Results", "Scores rise."}},
                              "In future work we study " + topic + "."),
                         "", ExtractionMode::none});
    }
    Outcome o;
    for (const auto& c : cases) {
        const auto got = extract_future_work_rule_based(c.paper);
        o.require(got.text == c.expected, c.paper.paper_id + ": got '" + got.text + "'");
        o.require(got.mode == c.mode, c.paper.paper_id + ": wrong mode " + std::string(to_string(got.mode)));
    }
    if (o.pass) {
        o.detail = std::to_string(cases.size()) + " papers, exact spans";
    }
    return o;
}

std::string joined(const std::string& a, const std::string& b) { return a + "\n" + b; }

// AC5: extractive subset invariants under replay, and detection of an injected sentence.
Outcome ac5() {
    Outcome o;
    testing::TempDir dir;
    testing::write_fixture_corpus(dir.path());
    auto rec = testing::fixture_config(dir.path(), "record");
    rec["output_dir"] = (dir.path() / "recorded").string();
    pipeline::cmd_extract(pipeline::config_from_json(rec, dir.path()),
                          {testing::simulated_model(), std::make_shared<testing::HashEmbedder>()});
    auto rep = testing::fixture_config(dir.path(), "replay");
    rep["output_dir"] = (dir.path() / "replayed").string();
    const auto result = pipeline::cmd_extract(pipeline::config_from_json(rep, dir.path()));
    o.require(result.failed == 0, "replay extraction failed for some papers");

    std::istringstream in(testing::read_text(dir.path() / "replayed" / "lineage.jsonl"));
    std::size_t checked = 0;
    for (std::string line; std::getline(in, line);) {
        const auto r = lineage_from_json(nlohmann::json::parse(line));
        o.require(verify_extractive_subset(r.tool_extracted, r.llm_extracted).ok, r.paper_id + ": F_g not in F_t");
        o.require(verify_extractive_subset(r.review_candidates, r.review_goals).ok,
                  r.paper_id + ": O_Fg not in candidates");
        o.require(verify_extractive_subset(joined(r.llm_extracted, r.review_goals), r.merged_ground_truth).ok,
                  r.paper_id + ": merged not in F_g and O_Fg");
        o.require(r.flags.empty() || r.merged_ground_truth.empty(), r.paper_id + ": unexpected flags");
        ++checked;
    }
    o.require(checked == 5, "expected 5 lineage records");

    // A model that adds a sentence of its own to the extractor output.
    auto injecting = std::make_shared<testing::FunctionChat>([](const llm::ChatRequest& req) {
        auto reply = testing::simulated_reply(req);
        if (req.messages.back().content.rfind("You are an extractor.", 0) == 0) {
            reply += " We will also solve protein folding.";
        }
        return reply;
    });
    const auto cassette_file = dir.path() / "injected.jsonl";
    PaperRecord paper;
    paper.paper_id = "inj";
    paper.sections = {{"Future Work", "We will add more languages.", 0}};
    {
        auto gw = testing::make_test_gateway(llm::CassetteMode::record, llm::Cassette::open(cassette_file, true),
                                             injecting, nullptr);
        build_lineage(paper, nullptr, *gw, {});
    }
    auto replay = testing::make_test_gateway(llm::CassetteMode::replay, llm::Cassette::open(cassette_file, false),
                                             nullptr, nullptr);
    const auto bad = build_lineage(paper, nullptr, *replay, {});
    o.require(!bad.valid, "injected sentence not flagged invalid");
    if (o.pass) {
        o.detail = std::to_string(checked) + " fixtures hold; injected sentence flagged";
    }
    return o;
}

std::vector<std::string> staged(const std::vector<int>& relevance, int novelty = 9) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < relevance.size(); ++i) {
        out.push_back("Future work draft " + std::to_string(i + 1));
        out.push_back(R"({"coherence": 4, "relevance": )" + std::to_string(relevance[i]) +
                      R"(, "readability": 5, "grammar": 5, "overall": 4, "justification": "off topic"})");
        out.push_back(R"({"score": )" + std::to_string(novelty) + R"(, "reason": "overlaps"})");
    }
    return out;
}

// AC6: refinement bounds and threshold boundaries.
Outcome ac6() {
    Outcome o;
    PaperRecord p;
    p.paper_id = "r";
    p.abstract = "We study adapters.";
    const auto bundle = generation::assemble_prompt(p, generation::InputMode::all_sections, {}, {});
    auto run = [&](std::vector<std::string> replies, int max_refinements) {
        auto gw = testing::passthrough(std::make_shared<testing::ScriptedChat>(std::move(replies)));
        return refine::run_refinement_loop(bundle, "truth", {3, 7, max_refinements}, *gw, {});
    };
    std::vector<std::size_t> counts;
    counts.push_back(run(staged({5}), 2).iterations.size());
    counts.push_back(run(staged({2, 5}), 2).iterations.size());
    counts.push_back(run(staged({1, 2, 3, 5}), 2).iterations.size());
    o.require(counts == std::vector<std::size_t>{1, 2, 3},
              "trace counts " + std::to_string(counts[0]) + "," + std::to_string(counts[1]) + "," +
                  std::to_string(counts[2]));

    const refine::RefinementPolicy policy;
    o.require(refine::needs_refinement({4, 3, 4, 4, 4, "x"}, {9, "y"}, policy).refine, "quality 3 did not trigger");
    o.require(refine::needs_refinement({4, 4, 4, 4, 4, "x"}, {7, "y"}, policy).refine, "novelty 7 did not trigger");
    o.require(!refine::needs_refinement({4, 4, 4, 4, 4, "x"}, {8, "y"}, policy).refine, "4/8 triggered");
    // Through the loop: relevance exactly 3, then novelty exactly 7.
    o.require(run(staged({3, 5}), 1).iterations.size() == 2, "loop ignored quality 3");
    o.require(run(staged({4, 4}, 7), 1).iterations.size() == 2, "loop ignored novelty 7");
    if (o.pass) {
        o.detail = "counts {1, 2, 3}; boundaries 3 and 7 refine";
    }
    return o;
}

// AC7: hallucination and feasibility bookkeeping.
Outcome ac7() {
    Outcome o;
    std::vector<std::string> labels(13, "Entailment");
    labels[2] = "neutral";
    labels[7] = "contradiction";
    labels[11] = "Neutral.";
    auto gw = testing::passthrough(std::make_shared<testing::ScriptedChat>(labels));
    std::vector<judge::VerdictRecord> records;
    for (int i = 0; i < 13; ++i) {
        records.push_back({judge::judge_hallucination("paper", "truth", "gen " + std::to_string(i), *gw, "m").hallucinated,
                           std::nullopt});
    }
    const auto rate = judge::aggregate_rates(records).hallucination;
    o.require(rate && judge::format_rate(*rate) == "23.08",
              "hallucination rate " + (rate ? judge::format_rate(*rate) : std::string("missing")));

    auto fgw = testing::passthrough(
        std::make_shared<testing::ScriptedChat>(std::vector<std::string>(13, "feasible")));
    std::vector<judge::VerdictRecord> feas;
    for (int i = 0; i < 13; ++i) {
        feas.push_back({std::nullopt, judge::judge_feasibility("paper", "gen", *fgw, "m").feasible});
    }
    const auto frate = judge::aggregate_rates(feas).feasibility;
    o.require(frate && judge::format_rate(*frate) == "100.00", "feasibility rate wrong");
    if (o.pass) {
        o.detail = "23.08% hallucinated, 100.00% feasible";
    }
    return o;
}

// AC8: section ranking from mocked embeddings.
Outcome ac8() {
    Outcome o;
    auto f = testing::ranking_fixture(testing::reference_section_means());
    auto gw = testing::passthrough(nullptr, f.embedder);
    const auto ranks = generation::rank_sections(f.papers, f.future_work, *gw, "e");
    o.require(ranks.size() >= 3, "fewer than 3 classes ranked");
    if (ranks.size() >= 3) {
        const std::string top = std::string(to_string(ranks[0].cls)) + ", " + std::string(to_string(ranks[1].cls)) +
                                ", " + std::string(to_string(ranks[2].cls));
        o.require(ranks[0].cls == generation::SectionClass::abstract &&
                      ranks[1].cls == generation::SectionClass::introduction &&
                      ranks[2].cls == generation::SectionClass::conclusion,
                  "top-3 is " + top);
        o.detail = "top-3 = {" + top + "}";
    }
    return o;
}

// AC9: full replay run, twice, byte-identical.
Outcome ac9() {
    Outcome o;
    testing::TempDir dir;
    testing::write_fixture_corpus(dir.path());
    auto rec = testing::fixture_config(dir.path(), "record");
    rec["output_dir"] = (dir.path() / "recorded").string();
    testing::run_all_stages(pipeline::config_from_json(rec, dir.path()),
                            {testing::simulated_model(), std::make_shared<testing::HashEmbedder>()});
    double slowest = 0.0;
    for (const auto* run : {"run1", "run2"}) {
        auto rep = testing::fixture_config(dir.path(), "replay");
        rep["output_dir"] = (dir.path() / run).string();
        const auto start = Clock::now();
        testing::run_all_stages(pipeline::config_from_json(rep, dir.path()));
        slowest = std::max(slowest, seconds_since(start));
    }
    for (const auto& f : testing::deterministic_artifacts()) {
        const auto a = testing::read_text(dir.path() / "run1" / f);
        o.require(!a.empty(), f + " is empty");
        o.require(a == testing::read_text(dir.path() / "run2" / f), f + " differs between replays");
        o.require(a == testing::read_text(dir.path() / "recorded" / f), f + " differs from the recording");
    }
    o.require(slowest < 60.0, "replay took " + fmt("%.1f s", slowest));
    if (o.pass) {
        o.detail = std::to_string(testing::deterministic_artifacts().size()) + " files identical, replay " +
                   fmt("%.2f s", slowest);
    }
    return o;
}

// AC10: token budget and feedback survival.
Outcome ac10() {
    Outcome o;
    std::mt19937_64 rng(10);
    std::size_t truncated = 0;
    for (int i = 0; i < 200; ++i) {
        const auto f = testing::random_prompt_fixture(rng);
        const auto b = generation::assemble_prompt(f.paper, f.mode, f.ranking, f.retrieved);
        const auto r = generation::assemble_refinement_prompt(b, f.feedback);
        const std::string where = " in fixture " + std::to_string(i);
        o.require(text::count_tokens(generation::render(b)) <= generation::kDefaultTokenBudget,
                  "initial prompt over budget" + where);
        o.require(text::count_tokens(generation::render(r)) <= generation::kDefaultTokenBudget,
                  "refinement prompt over budget" + where);
        o.require(!r.context_blocks.empty() && r.context_blocks.back().kind == generation::BlockKind::feedback &&
                      r.context_blocks.back().text == text::trim(f.feedback),
                  "feedback lost" + where);
        truncated += (b.dropped_blocks > 0 || r.dropped_blocks > 0) ? 1 : 0;
    }
    o.require(truncated >= 20, "too few fixtures exercised truncation");
    if (o.pass) {
        o.detail = "200 fixtures within 3900 tokens, " + std::to_string(truncated) + " truncated";
    }
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5},
        {"AC6", ac6}, {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10}};
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s %s %s\n", name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
