#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace fwgen::llm {

using Vector = std::vector<double>;

struct Message {
    std::string role;
    std::string content;

    bool operator==(const Message&) const = default;
};

struct ChatRequest {
    std::string model;
    std::vector<Message> messages;
    /// Absent means "provider default"; sent to the provider only when set.
    std::optional<double> temperature;
    std::optional<int> max_tokens;

    bool operator==(const ChatRequest&) const = default;
};

struct Usage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;

    bool operator==(const Usage&) const = default;
};

struct ChatResponse {
    std::string text;
    Usage usage;
};

/// Hex SHA-256 over a canonical serialization of every request field.
std::string request_hash(const ChatRequest& request);
std::string embedding_request_hash(std::string_view model, std::span<const std::string> texts);

class ChatProvider {
  public:
    virtual ~ChatProvider() = default;
    /// Throws TransientError for retryable failures, AuthError for bad
    /// credentials, GatewayError for anything else.
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

class EmbeddingProvider {
  public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<Vector> embed(std::string_view model, std::span<const std::string> texts) = 0;
};

enum class CassetteMode { record, replay, passthrough };

CassetteMode parse_cassette_mode(std::string_view name);
std::string_view to_string(CassetteMode mode);

struct CassetteEntry {
    std::string request_hash;
    nlohmann::json request_summary;
    std::string response_text;
    Usage usage;
};

/// Request-hash → recorded response log, persisted as newline-delimited JSON.
/// A read-only cassette is immutable after open and is read without locking;
/// a writable one serializes put() and appends each entry to its file.
class Cassette {
  public:
    /// In-memory, writable, not persisted.
    Cassette();

    /// Loads `file` if it exists. Later entries for a hash replace earlier ones.
    static std::shared_ptr<Cassette> open(const std::filesystem::path& file, bool writable);

    std::optional<CassetteEntry> find(const std::string& hash) const;
    void put(CassetteEntry entry);
    std::size_t size() const;
    bool writable() const noexcept { return writable_; }

  private:
    std::unordered_map<std::string, CassetteEntry> entries_;
    std::optional<std::filesystem::path> file_;
    bool writable_ = true;
    mutable std::mutex mutex_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_delay{8000};

    /// Delay before attempt `attempt + 1`, with `attempt` 1-based.
    std::chrono::milliseconds delay_after(int attempt) const;
};

struct GatewayOptions {
    CassetteMode mode = CassetteMode::replay;
    RetryPolicy retry;
    std::size_t max_in_flight = 4;
    std::size_t embed_batch_limit = 100;
    /// Replaceable so tests do not actually wait between retries.
    std::function<void(std::chrono::milliseconds)> sleep;
};

struct GatewayStats {
    std::size_t provider_calls = 0;
    std::size_t cassette_hits = 0;
    std::size_t retries = 0;
    std::size_t peak_in_flight = 0;
};

/// Model ids bound to each logical role of the pipeline.
struct RoleModels {
    std::string extractor = "gpt-4o-mini";
    std::string generator = "gpt-4o-mini";
    std::string judge = "gpt-4o-mini";
    std::string merger = "gpt-4o-mini";
    std::string embedding = "text-embedding-3-small";
};

/// Provider-agnostic access to chat completion and embeddings, with cassette
/// record/replay, bounded retries and a cap on concurrent provider requests.
/// Safe to share between threads.
class Gateway {
  public:
    Gateway(GatewayOptions options, std::shared_ptr<Cassette> cassette,
            std::shared_ptr<ChatProvider> chat_provider,
            std::shared_ptr<EmbeddingProvider> embedding_provider);

    ChatResponse chat(const ChatRequest& request);

    /// One vector per input, in input order. Inputs are sent in batches of at
    /// most `embed_batch_limit`; each batch is one cassette entry.
    std::vector<Vector> embed(std::span<const std::string> texts, std::string_view model);
    Vector embed_one(const std::string& text, std::string_view model);

    CassetteMode mode() const noexcept { return options_.mode; }
    GatewayStats stats() const;

  private:
    template <typename Call>
    auto call_with_retry(Call&& call) -> decltype(call());

    void acquire_slot();
    void release_slot();

    GatewayOptions options_;
    std::shared_ptr<Cassette> cassette_;
    std::shared_ptr<ChatProvider> chat_provider_;
    std::shared_ptr<EmbeddingProvider> embedding_provider_;

    std::mutex slot_mutex_;
    std::condition_variable slot_cv_;
    std::size_t in_flight_ = 0;

    std::atomic<std::size_t> provider_calls_{0};
    std::atomic<std::size_t> cassette_hits_{0};
    std::atomic<std::size_t> retries_{0};
    std::atomic<std::size_t> peak_in_flight_{0};
};

/// OpenAI-compatible HTTP provider (`/v1/chat/completions`, `/v1/embeddings`).
/// The API key is read from the named environment variable and never logged.
class OpenAiProvider final : public ChatProvider, public EmbeddingProvider {
  public:
    explicit OpenAiProvider(std::string base_url = "https://api.openai.com",
                            std::string api_key_env = "OPENAI_API_KEY",
                            std::chrono::seconds timeout = std::chrono::seconds{120});

    ChatResponse complete(const ChatRequest& request) override;
    std::vector<Vector> embed(std::string_view model, std::span<const std::string> texts) override;

  private:
    nlohmann::json post(const std::string& path, const nlohmann::json& body);

    std::string base_url_;
    std::string api_key_;
    std::chrono::seconds timeout_;
};

}  // namespace fwgen::llm
