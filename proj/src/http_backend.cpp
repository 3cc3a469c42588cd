#include "promptemb/http_backend.hpp"

#include "httplib.h"
#include "json.hpp"
#include "promptemb/reference_model.hpp"

namespace promptemb {

HttpLabelerBackend::HttpLabelerBackend(std::string base_url, int timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {
    desc_.name = "http-labeler(" + base_url_ + ")";
    desc_.hidden_dim = 1;  // produces no hidden states; generation only
    desc_.vocab_size = kByteVocabSize;
    desc_.max_sequence_length = 8192;
    desc_.pad_token_id = kPadToken;
    desc_.supports_generation = true;
    desc_.thread_safe_inference = false;
}

TokenSequence HttpLabelerBackend::tokenize(const std::string& text) const {
    return byte_tokenize(text, desc_.max_sequence_length);
}

HiddenStateBatch HttpLabelerBackend::forward_hidden_states(
    const std::vector<TokenSequence>&) const {
    throw BackendFailureError("http labeler backend does not expose hidden states");
}

std::string HttpLabelerBackend::generate_greedy(const std::string& prompt,
                                                int max_new_tokens) const {
    if (max_new_tokens <= 0) return "";
    httplib::Client client(base_url_);
    client.set_connection_timeout(timeout_seconds_);
    client.set_read_timeout(timeout_seconds_);
    const nlohmann::json req = {{"prompt", prompt}, {"max_new_tokens", max_new_tokens}};
    auto res = client.Post("/generate", req.dump(), "application/json");
    if (!res)
        throw BackendFailureError("labeler request to " + base_url_ + " failed: " +
                                  httplib::to_string(res.error()));
    if (res->status != 200)
        throw BackendFailureError("labeler returned HTTP " + std::to_string(res->status));
    try {
        const auto body = nlohmann::json::parse(res->body);
        return body.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw BackendFailureError(std::string("labeler response was not valid JSON: ") +
                                  e.what());
    }
}

}  // namespace promptemb
