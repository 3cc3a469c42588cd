#pragma once

#include <string>

#include "promptemb/backend.hpp"

namespace promptemb {

/// Generation-only adapter for a hosted labeling service. POSTs
/// {"prompt", "max_new_tokens"} to <base_url>/generate and expects
/// {"text": "..."}. Never required by any evaluation path; selected
/// via configuration when a real labeler is available.
class HttpLabelerBackend final : public ModelBackend {
public:
    explicit HttpLabelerBackend(std::string base_url, int timeout_seconds = 30);

    const BackendDescriptor& descriptor() const override { return desc_; }
    TokenSequence tokenize(const std::string& text) const override;
    HiddenStateBatch forward_hidden_states(const std::vector<TokenSequence>& batch) const override;
    std::string generate_greedy(const std::string& prompt, int max_new_tokens) const override;

private:
    std::string base_url_;
    int timeout_seconds_;
    BackendDescriptor desc_;
};

}  // namespace promptemb
