#include "fwgen/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "fwgen/errors.hpp"
#include "fwgen/text.hpp"

namespace fwgen::retrieval {
namespace {

double term_weight(const Bm25Index& index, std::size_t doc_frequency, std::uint32_t tf, std::size_t doc_length) {
    if (tf == 0 || index.avg_doc_length <= 0.0) {
        return 0.0;
    }
    const double k1 = index.params.k1;
    const double b = index.params.b;
    const double f = static_cast<double>(tf);
    const double norm = 1.0 - b + b * static_cast<double>(doc_length) / index.avg_doc_length;
    return bm25_idf(index.doc_count, doc_frequency) * (f * (k1 + 1.0)) / (f + k1 * norm);
}

std::uint32_t frequency_in(const std::vector<Posting>& postings, ChunkId id) {
    const auto it = std::lower_bound(postings.begin(), postings.end(), id,
                                     [](const Posting& p, ChunkId v) { return p.chunk_id < v; });
    return (it != postings.end() && it->chunk_id == id) ? it->term_frequency : 0;
}

void check_same_chunks(const IndexSnapshot& s) {
    if (s.bm25.doc_lengths.size() != s.chunks.size() || s.dense.vectors.size() != s.chunks.size()) {
        throw InvalidArgument("index mismatch: BM25, dense and chunk sets differ in size");
    }
    for (const auto& c : s.chunks) {
        if (!s.bm25.doc_lengths.contains(c.chunk_id) || !s.dense.vectors.contains(c.chunk_id)) {
            throw InvalidArgument("index mismatch: chunk " + std::to_string(c.chunk_id) +
                                  " is missing from one of the indices");
        }
    }
}

}  // namespace

std::vector<Chunk> chunk_text(std::string_view text_in, std::size_t chunk_size, std::string_view paper_id,
                              ChunkId first_id) {
    if (chunk_size == 0) {
        throw InvalidArgument("chunk_size must be >= 1");
    }
    const auto spans = text::token_spans(text_in);
    std::vector<Chunk> chunks;
    for (std::size_t first = 0; first < spans.size(); first += chunk_size) {
        const std::size_t last = std::min(first + chunk_size, spans.size());
        const std::size_t begin = first == 0 ? 0 : spans[first].begin;
        const std::size_t end = last == spans.size() ? text_in.size() : spans[last].begin;
        chunks.push_back({first_id + static_cast<ChunkId>(chunks.size()), std::string(paper_id),
                          std::string(text_in.substr(begin, end - begin)), last - first});
    }
    return chunks;
}

std::string indexed_text(const PaperRecord& paper) {
    std::string out = paper.title;
    auto append = [&out](std::string_view part) {
        if (part.empty()) {
            return;
        }
        if (!out.empty()) {
            out += "\n\n";
        }
        out += part;
    };
    append(paper.abstract);
    for (const auto& s : paper.sections) {
        append(s.heading);
        append(s.text);
    }
    return out;
}

std::vector<Chunk> chunk_papers(const std::vector<PaperRecord>& papers, std::size_t chunk_size) {
    std::vector<Chunk> all;
    for (const auto& paper : papers) {
        auto chunks = chunk_text(indexed_text(paper), chunk_size, paper.paper_id, static_cast<ChunkId>(all.size()));
        all.insert(all.end(), std::make_move_iterator(chunks.begin()), std::make_move_iterator(chunks.end()));
    }
    return all;
}

double bm25_idf(std::size_t doc_count, std::size_t doc_frequency) {
    const double n = static_cast<double>(doc_count);
    const double df = static_cast<double>(doc_frequency);
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

Bm25Index build_bm25(std::span<const Chunk> chunks, Bm25Params params) {
    if (chunks.empty()) {
        throw InvalidArgument("build_bm25: chunk list is empty");
    }
    if (params.k1 < 0.0 || params.b < 0.0 || params.b > 1.0) {
        throw InvalidArgument("build_bm25: require k1 >= 0 and 0 <= b <= 1");
    }
    Bm25Index index;
    index.params = params;
    std::size_t total = 0;
    for (const auto& chunk : chunks) {
        const auto tokens = text::tokenize(chunk.text);
        if (!index.doc_lengths.emplace(chunk.chunk_id, tokens.size()).second) {
            throw InvalidArgument("build_bm25: duplicate chunk id " + std::to_string(chunk.chunk_id));
        }
        total += tokens.size();
        std::map<std::string, std::uint32_t> tf;
        for (const auto& t : tokens) {
            ++tf[t];
        }
        for (auto& [term, count] : tf) {
            index.postings[term].push_back({chunk.chunk_id, count});
        }
    }
    for (auto& [_, list] : index.postings) {
        std::sort(list.begin(), list.end(), [](const Posting& a, const Posting& b) { return a.chunk_id < b.chunk_id; });
    }
    index.doc_count = chunks.size();
    index.avg_doc_length = static_cast<double>(total) / static_cast<double>(index.doc_count);
    return index;
}

double bm25_score(const Bm25Index& index, std::span<const std::string> query_tokens, ChunkId chunk_id) {
    const auto len = index.doc_lengths.find(chunk_id);
    if (len == index.doc_lengths.end()) {
        throw InvalidArgument("bm25_score: unknown chunk id " + std::to_string(chunk_id));
    }
    double score = 0.0;
    for (const auto& term : query_tokens) {
        const auto it = index.postings.find(term);
        if (it == index.postings.end()) {
            continue;
        }
        const auto tf = frequency_in(it->second, chunk_id);
        if (tf > 0) {
            score += term_weight(index, it->second.size(), tf, len->second);
        }
    }
    return score;
}

std::map<ChunkId, double> bm25_score_all(const Bm25Index& index, std::span<const std::string> query_tokens) {
    std::map<ChunkId, double> scores;
    for (const auto& [id, _] : index.doc_lengths) {
        scores.emplace(id, 0.0);
    }
    for (const auto& term : query_tokens) {
        const auto it = index.postings.find(term);
        if (it == index.postings.end()) {
            continue;
        }
        for (const auto& p : it->second) {
            scores[p.chunk_id] += term_weight(index, it->second.size(), p.term_frequency, index.doc_lengths.at(p.chunk_id));
        }
    }
    return scores;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidArgument("dot: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

llm::Vector unit_normalize(llm::Vector v) {
    const double norm = std::sqrt(dot(v, v));
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw InvalidArgument("cannot normalize a zero or non-finite vector");
    }
    for (auto& x : v) {
        x /= norm;
    }
    return v;
}

DenseIndex build_dense(std::span<const Chunk> chunks, std::vector<llm::Vector> embeddings) {
    if (chunks.empty()) {
        throw InvalidArgument("build_dense: chunk list is empty");
    }
    if (embeddings.size() != chunks.size()) {
        throw InvalidArgument("build_dense: " + std::to_string(embeddings.size()) + " embeddings for " +
                              std::to_string(chunks.size()) + " chunks");
    }
    DenseIndex index;
    index.dimension = embeddings.front().size();
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (embeddings[i].size() != index.dimension) {
            throw InvalidArgument("build_dense: embeddings do not share one dimension");
        }
        if (!index.vectors.emplace(chunks[i].chunk_id, unit_normalize(std::move(embeddings[i]))).second) {
            throw InvalidArgument("build_dense: duplicate chunk id " + std::to_string(chunks[i].chunk_id));
        }
    }
    return index;
}

DenseIndex build_dense(std::span<const Chunk> chunks, llm::Gateway& gateway, const std::string& model) {
    if (chunks.empty()) {
        throw InvalidArgument("build_dense: chunk list is empty");
    }
    std::vector<std::string> texts;
    texts.reserve(chunks.size());
    for (const auto& c : chunks) {
        texts.push_back(c.text);
    }
    return build_dense(chunks, gateway.embed(texts, model));
}

std::vector<double> min_max(std::span<const double> values) {
    if (values.empty()) {
        return {};
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double min = *lo;
    const double range = *hi - min;
    std::vector<double> out(values.size(), 0.0);
    if (range > 0.0) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            out[i] = (values[i] - min) / range;
        }
    }
    return out;
}

std::vector<RetrievedChunk> fuse_and_rank(std::span<const Chunk> chunks, std::span<const double> bm25_scores,
                                          std::span<const double> dense_scores, const HybridParams& params) {
    if (params.k < 1) {
        throw InvalidArgument("hybrid retrieval: k must be >= 1");
    }
    if (params.w_lex < 0.0 || params.w_dense < 0.0 || std::abs(params.w_lex + params.w_dense - 1.0) > 1e-9) {
        throw InvalidArgument("hybrid retrieval: weights must be non-negative and sum to 1");
    }
    if (bm25_scores.size() != chunks.size() || dense_scores.size() != chunks.size()) {
        throw InvalidArgument("hybrid retrieval: score lists do not match the chunk list");
    }
    const auto lex = min_max(bm25_scores);
    const auto dense = min_max(dense_scores);
    std::vector<RetrievedChunk> all;
    all.reserve(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        all.push_back({chunks[i], bm25_scores[i], dense_scores[i], params.w_lex * lex[i] + params.w_dense * dense[i], 0});
    }
    const std::size_t take = std::min(params.k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                      [](const RetrievedChunk& a, const RetrievedChunk& b) {
                          if (a.fused_score != b.fused_score) {
                              return a.fused_score > b.fused_score;
                          }
                          return a.chunk.chunk_id < b.chunk.chunk_id;
                      });
    all.resize(take);
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i].rank = i + 1;
    }
    return all;
}

std::vector<RetrievedChunk> hybrid_retrieve(std::span<const std::string> query_tokens,
                                            std::span<const double> query_embedding, const IndexSnapshot& snapshot,
                                            const HybridParams& params) {
    check_same_chunks(snapshot);
    if (snapshot.chunks.empty()) {
        return {};
    }
    const auto query = unit_normalize(llm::Vector(query_embedding.begin(), query_embedding.end()));
    const auto lexical = bm25_score_all(snapshot.bm25, query_tokens);
    std::vector<double> bm25_scores;
    std::vector<double> dense_scores;
    bm25_scores.reserve(snapshot.chunks.size());
    dense_scores.reserve(snapshot.chunks.size());
    for (const auto& c : snapshot.chunks) {
        bm25_scores.push_back(lexical.at(c.chunk_id));
        dense_scores.push_back(dot(query, snapshot.dense.vectors.at(c.chunk_id)));
    }
    return fuse_and_rank(snapshot.chunks, bm25_scores, dense_scores, params);
}

std::vector<RetrievedChunk> hybrid_retrieve(std::string_view query, const IndexSnapshot& snapshot,
                                            const HybridParams& params, llm::Gateway& gateway) {
    check_same_chunks(snapshot);
    const auto tokens = text::tokenize(query);
    const auto embedding = gateway.embed_one(std::string(query), snapshot.embedding_model);
    return hybrid_retrieve(tokens, embedding, snapshot, params);
}

IndexSnapshot build_snapshot(std::vector<Chunk> chunks, llm::Gateway& gateway, const std::string& embedding_model,
                             std::size_t chunk_size, Bm25Params params) {
    IndexSnapshot s;
    s.bm25 = build_bm25(chunks, params);
    s.dense = build_dense(chunks, gateway, embedding_model);
    s.chunks = std::move(chunks);
    s.chunk_size = chunk_size;
    s.embedding_model = embedding_model;
    return s;
}

void save_snapshot(const IndexSnapshot& s, const std::filesystem::path& file) {
    nlohmann::json chunks = nlohmann::json::array();
    for (const auto& c : s.chunks) {
        chunks.push_back({{"chunk_id", c.chunk_id}, {"paper_id", c.paper_id}, {"text", c.text}, {"token_count", c.token_count}});
    }
    nlohmann::json postings = nlohmann::json::object();
    for (const auto& [term, list] : s.bm25.postings) {
        auto& arr = postings[term] = nlohmann::json::array();
        for (const auto& p : list) {
            arr.push_back({p.chunk_id, p.term_frequency});
        }
    }
    nlohmann::json lengths = nlohmann::json::array();
    for (const auto& [id, len] : s.bm25.doc_lengths) {
        lengths.push_back({id, len});
    }
    nlohmann::json vectors = nlohmann::json::array();
    for (const auto& [id, v] : s.dense.vectors) {
        vectors.push_back({{"chunk_id", id}, {"vector", v}});
    }
    const nlohmann::json doc = {
        {"chunk_size", s.chunk_size},
        {"embedding_model", s.embedding_model},
        {"chunks", std::move(chunks)},
        {"bm25",
         {{"k1", s.bm25.params.k1},
          {"b", s.bm25.params.b},
          {"avg_doc_length", s.bm25.avg_doc_length},
          {"doc_count", s.bm25.doc_count},
          {"doc_lengths", std::move(lengths)},
          {"postings", std::move(postings)}}},
        {"dense", {{"dimension", s.dense.dimension}, {"vectors", std::move(vectors)}}},
    };
    if (file.has_parent_path()) {
        std::filesystem::create_directories(file.parent_path());
    }
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InputError("cannot write index snapshot " + file.string());
    }
    out << kSnapshotMagic << ' ' << kSnapshotVersion << '\n' << doc.dump() << '\n';
}

IndexSnapshot load_snapshot(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw InputError("index snapshot not found: " + file.string());
    }
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    std::string magic;
    int version = 0;
    hs >> magic >> version;
    if (magic != kSnapshotMagic) {
        throw InputError(file.string() + ": not an index snapshot");
    }
    if (version != kSnapshotVersion) {
        throw InputError(file.string() + ": unsupported snapshot version " + std::to_string(version));
    }
    try {
        const auto doc = nlohmann::json::parse(in);
        IndexSnapshot s;
        s.chunk_size = doc.at("chunk_size").get<std::size_t>();
        s.embedding_model = doc.at("embedding_model").get<std::string>();
        for (const auto& c : doc.at("chunks")) {
            s.chunks.push_back({c.at("chunk_id").get<ChunkId>(), c.at("paper_id").get<std::string>(),
                                c.at("text").get<std::string>(), c.at("token_count").get<std::size_t>()});
        }
        const auto& b = doc.at("bm25");
        s.bm25.params = {b.at("k1").get<double>(), b.at("b").get<double>()};
        s.bm25.avg_doc_length = b.at("avg_doc_length").get<double>();
        s.bm25.doc_count = b.at("doc_count").get<std::size_t>();
        for (const auto& pair : b.at("doc_lengths")) {
            s.bm25.doc_lengths.emplace(pair.at(0).get<ChunkId>(), pair.at(1).get<std::size_t>());
        }
        for (const auto& [term, list] : b.at("postings").items()) {
            auto& out = s.bm25.postings[term];
            for (const auto& p : list) {
                out.push_back({p.at(0).get<ChunkId>(), p.at(1).get<std::uint32_t>()});
            }
        }
        const auto& d = doc.at("dense");
        s.dense.dimension = d.at("dimension").get<std::size_t>();
        for (const auto& v : d.at("vectors")) {
            s.dense.vectors.emplace(v.at("chunk_id").get<ChunkId>(), v.at("vector").get<llm::Vector>());
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(file.string() + ": malformed snapshot: " + e.what());
    }
}

}  // namespace fwgen::retrieval
