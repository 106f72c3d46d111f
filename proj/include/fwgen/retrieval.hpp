#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fwgen/corpus.hpp"
#include "fwgen/gateway.hpp"

namespace fwgen::retrieval {

using ChunkId = std::int64_t;

inline constexpr std::size_t kDefaultChunkSize = 512;

struct Chunk {
    ChunkId chunk_id = 0;
    std::string paper_id;
    /// Verbatim slice of the source text. Slices of one text concatenate back
    /// to it, and tokenizing a slice yields exactly this chunk's tokens.
    std::string text;
    std::size_t token_count = 0;

    bool operator==(const Chunk&) const = default;
};

/// Contiguous, non-overlapping chunks of at most `chunk_size` tokens. Chunk ids
/// start at `first_id`. Throws InvalidArgument when chunk_size is 0.
std::vector<Chunk> chunk_text(std::string_view text, std::size_t chunk_size, std::string_view paper_id = {},
                              ChunkId first_id = 0);

/// Title, abstract and every section of a paper, as indexed for retrieval.
std::string indexed_text(const PaperRecord& paper);

/// Chunks every paper in order with globally unique, consecutive ids.
std::vector<Chunk> chunk_papers(const std::vector<PaperRecord>& papers, std::size_t chunk_size);

struct Posting {
    ChunkId chunk_id = 0;
    std::uint32_t term_frequency = 0;

    bool operator==(const Posting&) const = default;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;

    bool operator==(const Bm25Params&) const = default;
};

struct Bm25Index {
    /// term → postings sorted by chunk id.
    std::map<std::string, std::vector<Posting>> postings;
    std::map<ChunkId, std::size_t> doc_lengths;
    double avg_doc_length = 0.0;
    std::size_t doc_count = 0;
    Bm25Params params;

    bool operator==(const Bm25Index&) const = default;
};

Bm25Index build_bm25(std::span<const Chunk> chunks, Bm25Params params = {});

/// ln(1 + (N - df + 0.5) / (df + 0.5))
double bm25_idf(std::size_t doc_count, std::size_t doc_frequency);

/// Okapi BM25 of one chunk. Each query token occurrence contributes once.
/// Throws InvalidArgument for an unindexed chunk id.
double bm25_score(const Bm25Index& index, std::span<const std::string> query_tokens, ChunkId chunk_id);

/// Scores of every indexed chunk, keyed by chunk id; same arithmetic as bm25_score.
std::map<ChunkId, double> bm25_score_all(const Bm25Index& index, std::span<const std::string> query_tokens);

struct DenseIndex {
    std::map<ChunkId, llm::Vector> vectors;
    std::size_t dimension = 0;

    bool operator==(const DenseIndex&) const = default;
};

/// Throws InvalidArgument on a zero vector.
llm::Vector unit_normalize(llm::Vector v);
double dot(std::span<const double> a, std::span<const double> b);

/// Builds from precomputed embeddings (one per chunk, in chunk order).
DenseIndex build_dense(std::span<const Chunk> chunks, std::vector<llm::Vector> embeddings);
DenseIndex build_dense(std::span<const Chunk> chunks, llm::Gateway& gateway, const std::string& model);

struct RetrievedChunk {
    Chunk chunk;
    double bm25_score = 0.0;
    double dense_score = 0.0;
    double fused_score = 0.0;
    std::size_t rank = 0;

    bool operator==(const RetrievedChunk&) const = default;
};

struct HybridParams {
    std::size_t k = 3;
    double w_lex = 0.5;
    double w_dense = 0.5;
};

/// Maps values linearly onto [0,1]; a constant list maps to all zeros.
std::vector<double> min_max(std::span<const double> values);

/// Chunks plus both indices built over them: the unit that is persisted.
struct IndexSnapshot {
    std::vector<Chunk> chunks;
    Bm25Index bm25;
    DenseIndex dense;
    std::size_t chunk_size = kDefaultChunkSize;
    std::string embedding_model;

    bool operator==(const IndexSnapshot&) const = default;
};

/// Fuses already computed raw scores. `bm25_scores[i]` and `dense_scores[i]`
/// belong to `chunks[i]`.
std::vector<RetrievedChunk> fuse_and_rank(std::span<const Chunk> chunks, std::span<const double> bm25_scores,
                                          std::span<const double> dense_scores, const HybridParams& params);

/// fused = w_lex * minmax(bm25) + w_dense * minmax(cosine); top-k by fused
/// score, ties by ascending chunk id.
std::vector<RetrievedChunk> hybrid_retrieve(std::string_view query, const IndexSnapshot& snapshot,
                                            const HybridParams& params, llm::Gateway& gateway);

/// Same, with the query embedding supplied by the caller.
std::vector<RetrievedChunk> hybrid_retrieve(std::span<const std::string> query_tokens,
                                            std::span<const double> query_embedding, const IndexSnapshot& snapshot,
                                            const HybridParams& params);

IndexSnapshot build_snapshot(std::vector<Chunk> chunks, llm::Gateway& gateway, const std::string& embedding_model,
                             std::size_t chunk_size, Bm25Params params = {});

inline constexpr std::string_view kSnapshotMagic = "fwgen-index";
inline constexpr int kSnapshotVersion = 1;

/// Text snapshot: a `fwgen-index <version>` header line followed by one JSON
/// document. Doubles are written in shortest round-trip form, so
/// load_snapshot(save_snapshot(x)) == x.
void save_snapshot(const IndexSnapshot& snapshot, const std::filesystem::path& file);
IndexSnapshot load_snapshot(const std::filesystem::path& file);

}  // namespace fwgen::retrieval
