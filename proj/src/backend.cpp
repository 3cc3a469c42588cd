#include "promptemb/backend.hpp"

#include <algorithm>

namespace promptemb {

void check_token_sequence(const TokenSequence& seq) {
    if (seq.token_ids.size() != seq.attention_mask.size())
        throw Error(ErrorKind::data, "token ids and attention mask lengths differ");
    if (seq.token_ids.empty()) throw Error(ErrorKind::data, "empty token sequence");
    bool seen_real = false;
    bool any_real = false;
    for (std::uint8_t m : seq.attention_mask) {
        if (m) {
            seen_real = true;
            any_real = true;
        } else if (seen_real) {
            throw Error(ErrorKind::data, "padding after a real token (expected left padding)");
        }
    }
    if (!any_real) throw Error(ErrorKind::data, "token sequence has no real tokens");
}

int last_real_index(const TokenSequence& seq) {
    for (int i = static_cast<int>(seq.attention_mask.size()) - 1; i >= 0; --i)
        if (seq.attention_mask[static_cast<std::size_t>(i)]) return i;
    throw Error(ErrorKind::data, "token sequence has no real tokens");
}

int first_real_index(const TokenSequence& seq) {
    for (std::size_t i = 0; i < seq.attention_mask.size(); ++i)
        if (seq.attention_mask[i]) return static_cast<int>(i);
    throw Error(ErrorKind::data, "token sequence has no real tokens");
}

std::span<const float> HiddenStateBatch::last_real_row(int b) const {
    const auto& mask = masks[static_cast<std::size_t>(b)];
    for (int t = seq_len - 1; t >= 0; --t)
        if (mask[static_cast<std::size_t>(t)]) return row(b, t);
    throw Error(ErrorKind::data, "batch row has no real tokens");
}

std::vector<TokenSequence> left_pad(std::vector<TokenSequence> seqs, int pad_id) {
    std::size_t max_len = 0;
    for (const auto& s : seqs) max_len = std::max(max_len, s.token_ids.size());
    for (auto& s : seqs) {
        const std::size_t pad = max_len - s.token_ids.size();
        if (pad == 0) continue;
        std::vector<int> ids(pad, pad_id);
        std::vector<std::uint8_t> mask(pad, 0);
        ids.insert(ids.end(), s.token_ids.begin(), s.token_ids.end());
        mask.insert(mask.end(), s.attention_mask.begin(), s.attention_mask.end());
        s.token_ids = std::move(ids);
        s.attention_mask = std::move(mask);
    }
    return seqs;
}

}  // namespace promptemb
