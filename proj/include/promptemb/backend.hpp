#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "promptemb/errors.hpp"

namespace promptemb {

struct TokenSequence {
    std::vector<int> token_ids;
    std::vector<std::uint8_t> attention_mask;  // 1 = real token, 0 = padding

    bool operator==(const TokenSequence&) const = default;
};

// Equal lengths, at least one real token, and (left padding) no real token
// before a pad. Throws on violation.
void check_token_sequence(const TokenSequence& seq);

// Index of the final real token, from the mask.
int last_real_index(const TokenSequence& seq);
int first_real_index(const TokenSequence& seq);

/// Final-layer hidden states for a padded batch. Values at mask=0 positions
/// are unspecified and must never be read.
struct HiddenStateBatch {
    int batch = 0;
    int seq_len = 0;
    int hidden_dim = 0;
    std::vector<float> states;  // batch * seq_len * hidden_dim, row-major
    std::vector<std::vector<std::uint8_t>> masks;

    std::span<const float> row(int b, int t) const {
        return {states.data() +
                    (static_cast<std::size_t>(b) * seq_len + static_cast<std::size_t>(t)) *
                        hidden_dim,
                static_cast<std::size_t>(hidden_dim)};
    }
    std::span<const float> last_real_row(int b) const;
};

struct BackendDescriptor {
    std::string name;
    int hidden_dim = 0;
    int vocab_size = 0;
    int max_sequence_length = 0;
    int pad_token_id = 0;
    bool supports_generation = false;
    // Safe for concurrent read-only inference; pipelines serialize calls otherwise.
    bool thread_safe_inference = false;
};

/// Abstract autoregressive model: tokenization plus final-layer hidden states.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;

    virtual const BackendDescriptor& descriptor() const = 0;

    // Deterministic; throws SequenceTooLongError past max_sequence_length.
    virtual TokenSequence tokenize(const std::string& text) const = 0;

    // Pre: sequences left-padded to equal length with consistent masks.
    virtual HiddenStateBatch forward_hidden_states(
        const std::vector<TokenSequence>& batch) const = 0;

    // Greedy decoding; stops at max_new_tokens or an end token.
    virtual std::string generate_greedy(const std::string& prompt, int max_new_tokens) const = 0;
};

// Left-pads all sequences to the longest one with `pad_id`, mask 0.
std::vector<TokenSequence> left_pad(std::vector<TokenSequence> seqs, int pad_id);

}  // namespace promptemb
