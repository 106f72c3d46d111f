#include "fwgen/gateway.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <thread>

#include <openssl/evp.h>

#include "fwgen/errors.hpp"

namespace fwgen::llm {
namespace {

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(static_cast<std::size_t>(len) * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

nlohmann::json canonical(const ChatRequest& request) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
    }
    nlohmann::json j = {
        {"kind", "chat"},
        {"model", request.model},
        {"messages", std::move(messages)},
        {"temperature", nullptr},
        {"max_tokens", nullptr},
    };
    if (request.temperature) {
        j["temperature"] = *request.temperature;
    }
    if (request.max_tokens) {
        j["max_tokens"] = *request.max_tokens;
    }
    return j;
}

std::string preview(std::string_view s, std::size_t limit = 160) {
    if (s.size() <= limit) {
        return std::string(s);
    }
    // Do not cut through a UTF-8 sequence.
    std::size_t cut = limit;
    while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) {
        --cut;
    }
    return std::string(s.substr(0, cut)) + "...";
}

nlohmann::json entry_to_json(const CassetteEntry& e) {
    return {
        {"request_hash", e.request_hash},
        {"request_summary", e.request_summary},
        {"response_text", e.response_text},
        {"usage", {{"prompt_tokens", e.usage.prompt_tokens}, {"completion_tokens", e.usage.completion_tokens}}},
    };
}

CassetteEntry entry_from_json(const nlohmann::json& j) {
    CassetteEntry e;
    e.request_hash = j.at("request_hash").get<std::string>();
    e.request_summary = j.value("request_summary", nlohmann::json::object());
    e.response_text = j.at("response_text").get<std::string>();
    if (const auto it = j.find("usage"); it != j.end() && it->is_object()) {
        e.usage.prompt_tokens = it->value("prompt_tokens", std::int64_t{0});
        e.usage.completion_tokens = it->value("completion_tokens", std::int64_t{0});
    }
    return e;
}

}  // namespace

std::string request_hash(const ChatRequest& request) { return sha256_hex(canonical(request).dump()); }

std::string embedding_request_hash(std::string_view model, std::span<const std::string> texts) {
    const nlohmann::json j = {
        {"kind", "embed"},
        {"model", std::string(model)},
        {"input", std::vector<std::string>(texts.begin(), texts.end())},
    };
    return sha256_hex(j.dump());
}

CassetteMode parse_cassette_mode(std::string_view name) {
    if (name == "record") {
        return CassetteMode::record;
    }
    if (name == "replay") {
        return CassetteMode::replay;
    }
    if (name == "passthrough") {
        return CassetteMode::passthrough;
    }
    throw InvalidArgument("unknown cassette mode '" + std::string(name) +
                          "' (expected record, replay or passthrough)");
}

std::string_view to_string(CassetteMode mode) {
    switch (mode) {
        case CassetteMode::record:
            return "record";
        case CassetteMode::replay:
            return "replay";
        case CassetteMode::passthrough:
            return "passthrough";
    }
    return "unknown";
}

// -- Cassette -----------------------------------------------------------------

Cassette::Cassette() = default;

std::shared_ptr<Cassette> Cassette::open(const std::filesystem::path& file, bool writable) {
    auto cassette = std::make_shared<Cassette>();
    cassette->file_ = file;
    cassette->writable_ = writable;
    if (std::filesystem::exists(file)) {
        std::ifstream in(file);
        if (!in) {
            throw InputError("cannot read cassette " + file.string());
        }
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) {
                continue;
            }
            try {
                auto entry = entry_from_json(nlohmann::json::parse(line));
                auto hash = entry.request_hash;
                cassette->entries_.insert_or_assign(std::move(hash), std::move(entry));
            } catch (const nlohmann::json::exception& e) {
                throw InputError("malformed cassette record at " + file.string() + ":" +
                                 std::to_string(line_no) + ": " + e.what());
            }
        }
    } else if (!writable) {
        throw InputError("cassette file not found: " + file.string());
    }
    return cassette;
}

std::optional<CassetteEntry> Cassette::find(const std::string& hash) const {
    std::unique_lock lock(mutex_, std::defer_lock);
    if (writable_) {
        lock.lock();
    }
    if (const auto it = entries_.find(hash); it != entries_.end()) {
        return it->second;
    }
    return std::nullopt;
}

void Cassette::put(CassetteEntry entry) {
    if (!writable_) {
        throw GatewayError("cassette is read-only");
    }
    std::lock_guard lock(mutex_);
    if (file_) {
        if (file_->has_parent_path()) {
            std::filesystem::create_directories(file_->parent_path());
        }
        std::ofstream out(*file_, std::ios::app);
        if (!out) {
            throw GatewayError("cannot append to cassette " + file_->string());
        }
        out << entry_to_json(entry).dump() << '\n';
    }
    auto hash = entry.request_hash;
    entries_.insert_or_assign(std::move(hash), std::move(entry));
}

std::size_t Cassette::size() const {
    std::unique_lock lock(mutex_, std::defer_lock);
    if (writable_) {
        lock.lock();
    }
    return entries_.size();
}

// -- Gateway ------------------------------------------------------------------

std::chrono::milliseconds RetryPolicy::delay_after(int attempt) const {
    const double scaled = static_cast<double>(base_delay.count()) * std::pow(multiplier, attempt - 1);
    const auto capped = std::min(scaled, static_cast<double>(max_delay.count()));
    return std::chrono::milliseconds{static_cast<std::int64_t>(capped)};
}

Gateway::Gateway(GatewayOptions options, std::shared_ptr<Cassette> cassette,
                 std::shared_ptr<ChatProvider> chat_provider,
                 std::shared_ptr<EmbeddingProvider> embedding_provider)
    : options_(std::move(options)),
      cassette_(std::move(cassette)),
      chat_provider_(std::move(chat_provider)),
      embedding_provider_(std::move(embedding_provider)) {
    if (options_.retry.max_attempts < 1) {
        throw InvalidArgument("retry.max_attempts must be >= 1");
    }
    if (options_.max_in_flight < 1) {
        throw InvalidArgument("max_in_flight must be >= 1");
    }
    if (options_.embed_batch_limit < 1) {
        throw InvalidArgument("embed_batch_limit must be >= 1");
    }
    if (options_.mode != CassetteMode::passthrough && !cassette_) {
        throw InvalidArgument("cassette mode '" + std::string(to_string(options_.mode)) +
                              "' requires a cassette");
    }
    if (options_.mode == CassetteMode::record && !cassette_->writable()) {
        throw InvalidArgument("record mode requires a writable cassette");
    }
    if (!options_.sleep) {
        options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
}

void Gateway::acquire_slot() {
    std::unique_lock lock(slot_mutex_);
    slot_cv_.wait(lock, [this] { return in_flight_ < options_.max_in_flight; });
    ++in_flight_;
    std::size_t peak = peak_in_flight_.load();
    while (in_flight_ > peak && !peak_in_flight_.compare_exchange_weak(peak, in_flight_)) {
    }
}

void Gateway::release_slot() {
    {
        std::lock_guard lock(slot_mutex_);
        --in_flight_;
    }
    slot_cv_.notify_one();
}

template <typename Call>
auto Gateway::call_with_retry(Call&& call) -> decltype(call()) {
    for (int attempt = 1;; ++attempt) {
        acquire_slot();
        try {
            ++provider_calls_;
            auto result = call();
            release_slot();
            return result;
        } catch (const TransientError& e) {
            release_slot();
            if (attempt >= options_.retry.max_attempts) {
                throw RetriesExhausted("provider failed after " + std::to_string(attempt) +
                                       " attempts: " + e.what());
            }
            ++retries_;
            options_.sleep(options_.retry.delay_after(attempt));
        } catch (...) {
            release_slot();
            throw;
        }
    }
}

ChatResponse Gateway::chat(const ChatRequest& request) {
    const auto hash = request_hash(request);
    if (options_.mode == CassetteMode::replay) {
        auto entry = cassette_->find(hash);
        if (!entry) {
            throw CassetteMiss(hash);
        }
        ++cassette_hits_;
        return {std::move(entry->response_text), entry->usage};
    }
    if (!chat_provider_) {
        throw GatewayError("no chat provider configured");
    }
    auto response = call_with_retry([&] { return chat_provider_->complete(request); });
    if (options_.mode == CassetteMode::record) {
        const std::string_view last =
            request.messages.empty() ? std::string_view{} : std::string_view{request.messages.back().content};
        cassette_->put({hash,
                        {{"kind", "chat"},
                         {"model", request.model},
                         {"messages", request.messages.size()},
                         {"preview", preview(last)}},
                        response.text,
                        response.usage});
    }
    return response;
}

std::vector<Vector> Gateway::embed(std::span<const std::string> texts, std::string_view model) {
    if (texts.empty()) {
        throw InvalidArgument("embed: input list is empty");
    }
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (std::size_t start = 0; start < texts.size(); start += options_.embed_batch_limit) {
        const auto batch = texts.subspan(start, std::min(options_.embed_batch_limit, texts.size() - start));
        const auto hash = embedding_request_hash(model, batch);
        std::vector<Vector> vectors;
        if (options_.mode == CassetteMode::replay) {
            auto entry = cassette_->find(hash);
            if (!entry) {
                throw CassetteMiss(hash);
            }
            ++cassette_hits_;
            vectors = nlohmann::json::parse(entry->response_text).get<std::vector<Vector>>();
        } else {
            if (!embedding_provider_) {
                throw GatewayError("no embedding provider configured");
            }
            vectors = call_with_retry([&] { return embedding_provider_->embed(model, batch); });
            if (options_.mode == CassetteMode::record) {
                cassette_->put({hash,
                                {{"kind", "embed"},
                                 {"model", std::string(model)},
                                 {"inputs", batch.size()},
                                 {"preview", preview(batch.front())}},
                                nlohmann::json(vectors).dump(),
                                {}});
            }
        }
        if (vectors.size() != batch.size()) {
            throw GatewayError("embedding provider returned " + std::to_string(vectors.size()) +
                               " vectors for " + std::to_string(batch.size()) + " inputs");
        }
        for (auto& v : vectors) {
            out.push_back(std::move(v));
        }
    }
    return out;
}

Vector Gateway::embed_one(const std::string& text, std::string_view model) {
    return std::move(embed(std::span<const std::string>(&text, 1), model).front());
}

GatewayStats Gateway::stats() const {
    return {provider_calls_.load(), cassette_hits_.load(), retries_.load(), peak_in_flight_.load()};
}

}  // namespace fwgen::llm
