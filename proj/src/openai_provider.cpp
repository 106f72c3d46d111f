#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <algorithm>
#include <cstdlib>

#include "fwgen/errors.hpp"
#include "fwgen/gateway.hpp"

namespace fwgen::llm {

OpenAiProvider::OpenAiProvider(std::string base_url, std::string api_key_env, std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {
    const char* key = std::getenv(api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw AuthError("environment variable " + api_key_env + " is not set");
    }
    api_key_ = key;
    while (!base_url_.empty() && base_url_.back() == '/') {
        base_url_.pop_back();
    }
}

nlohmann::json OpenAiProvider::post(const std::string& path, const nlohmann::json& body) {
    httplib::Client client(base_url_);
    client.set_bearer_token_auth(api_key_);
    client.set_connection_timeout(std::chrono::seconds{30});
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);

    const auto res = client.Post(path, body.dump(), "application/json");
    if (!res) {
        throw TransientError("request to " + path + " failed: " + httplib::to_string(res.error()));
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
        throw AuthError("provider rejected credentials (HTTP " + std::to_string(status) + ")");
    }
    if (status == 408 || status == 409 || status == 429 || status >= 500) {
        throw TransientError("provider returned HTTP " + std::to_string(status));
    }
    if (status < 200 || status >= 300) {
        throw GatewayError("provider returned HTTP " + std::to_string(status) + ": " +
                           res->body.substr(0, 300));
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
        throw GatewayError("provider returned a non-JSON body for " + path);
    }
}

ChatResponse OpenAiProvider::complete(const ChatRequest& request) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
    }
    nlohmann::json body = {{"model", request.model}, {"messages", std::move(messages)}};
    if (request.temperature) {
        body["temperature"] = *request.temperature;
    }
    if (request.max_tokens) {
        body["max_tokens"] = *request.max_tokens;
    }
    const auto j = post("/v1/chat/completions", body);
    try {
        ChatResponse out;
        const auto& content = j.at("choices").at(0).at("message").at("content");
        out.text = content.is_null() ? std::string{} : content.get<std::string>();
        if (const auto it = j.find("usage"); it != j.end() && it->is_object()) {
            out.usage.prompt_tokens = it->value("prompt_tokens", std::int64_t{0});
            out.usage.completion_tokens = it->value("completion_tokens", std::int64_t{0});
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw GatewayError(std::string("unexpected chat completion shape: ") + e.what());
    }
}

std::vector<Vector> OpenAiProvider::embed(std::string_view model, std::span<const std::string> texts) {
    const nlohmann::json body = {
        {"model", std::string(model)},
        {"input", std::vector<std::string>(texts.begin(), texts.end())},
    };
    const auto j = post("/v1/embeddings", body);
    try {
        std::vector<std::pair<std::size_t, Vector>> indexed;
        for (const auto& item : j.at("data")) {
            indexed.emplace_back(item.at("index").get<std::size_t>(), item.at("embedding").get<Vector>());
        }
        std::sort(indexed.begin(), indexed.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<Vector> out;
        out.reserve(indexed.size());
        for (auto& [_, v] : indexed) {
            out.push_back(std::move(v));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw GatewayError(std::string("unexpected embeddings shape: ") + e.what());
    }
}

}  // namespace fwgen::llm
