#include "promptemb/reference_model.hpp"

#include <random>

namespace promptemb {

namespace {

constexpr tfm::Shape kRefShape{/*vocab=*/kByteVocabSize, /*max_len=*/512, /*dim=*/64,
                               /*heads=*/4, /*ffn=*/256, /*layers=*/2};

void fill_normal(std::vector<float>& v, std::size_t count, std::mt19937_64& rng, float stddev) {
    std::normal_distribution<float> dist(0.0f, stddev);
    v.resize(count);
    for (auto& x : v) x = dist(rng);
}

tfm::Weights<float> init_weights(std::uint64_t seed) {
    tfm::Weights<float> w;
    w.shape = kRefShape;
    std::mt19937_64 rng(seed);
    const auto d = static_cast<std::size_t>(kRefShape.dim);
    const auto f = static_cast<std::size_t>(kRefShape.ffn);
    const auto v = static_cast<std::size_t>(kRefShape.vocab);
    fill_normal(w.wte, v * d, rng, 0.05f);
    fill_normal(w.wpe, static_cast<std::size_t>(kRefShape.max_len) * d, rng, 0.05f);
    w.layers.resize(static_cast<std::size_t>(kRefShape.layers));
    for (auto& lw : w.layers) {
        lw.ln1_g.assign(d, 1.0f);
        lw.ln1_b.assign(d, 0.0f);
        fill_normal(lw.wq, d * d, rng, 0.05f);
        fill_normal(lw.wk, d * d, rng, 0.05f);
        fill_normal(lw.wv, d * d, rng, 0.05f);
        fill_normal(lw.wo, d * d, rng, 0.05f);
        lw.ln2_g.assign(d, 1.0f);
        lw.ln2_b.assign(d, 0.0f);
        fill_normal(lw.fc1, f * d, rng, 0.05f);
        fill_normal(lw.fc2, d * f, rng, 0.05f);
    }
    w.lnf_g.assign(d, 1.0f);
    w.lnf_b.assign(d, 0.0f);
    fill_normal(w.lm_head, v * d, rng, 0.05f);
    return w;
}

}  // namespace

TokenSequence byte_tokenize(const std::string& text, int max_len) {
    if (text.empty()) throw Error(ErrorKind::data, "cannot tokenize empty text");
    if (static_cast<int>(text.size()) > max_len)
        throw SequenceTooLongError(max_len, static_cast<int>(text.size()));
    TokenSequence seq;
    seq.token_ids.reserve(text.size());
    for (unsigned char c : text) seq.token_ids.push_back(static_cast<int>(c));
    seq.attention_mask.assign(text.size(), 1);
    return seq;
}

ReferenceModel::ReferenceModel(std::uint64_t seed)
    : ReferenceModel(init_weights(seed), "reference-s" + std::to_string(seed)) {}

ReferenceModel::ReferenceModel(tfm::Weights<float> weights, std::string name)
    : weights_(std::move(weights)) {
    desc_.name = std::move(name);
    desc_.hidden_dim = weights_.shape.dim;
    desc_.vocab_size = weights_.shape.vocab;
    desc_.max_sequence_length = weights_.shape.max_len;
    desc_.pad_token_id = kPadToken;
    desc_.supports_generation = true;
    desc_.thread_safe_inference = true;
}

TokenSequence ReferenceModel::tokenize(const std::string& text) const {
    return byte_tokenize(text, desc_.max_sequence_length);
}

HiddenStateBatch ReferenceModel::forward_hidden_states(
    const std::vector<TokenSequence>& batch) const {
    return run_forward_hidden(weights_, nullptr, batch);
}

std::string ReferenceModel::generate_greedy(const std::string& prompt,
                                            int max_new_tokens) const {
    return run_generate_greedy(weights_, nullptr, prompt, max_new_tokens);
}

std::shared_ptr<ReferenceModel> make_reference_model(std::uint64_t seed) {
    return std::make_shared<ReferenceModel>(seed);
}

HiddenStateBatch run_forward_hidden(const tfm::Weights<float>& w,
                                    const tfm::Adapters<float>* adapters,
                                    const std::vector<TokenSequence>& batch) {
    const tfm::PaddedBatch pb = tfm::make_padded_batch(batch);
    if (pb.len > w.shape.max_len) throw SequenceTooLongError(w.shape.max_len, pb.len);
    HiddenStateBatch out;
    out.batch = pb.rows;
    out.seq_len = pb.len;
    out.hidden_dim = w.shape.dim;
    tfm::forward(w, adapters, pb, nullptr, static_cast<tfm::Tape<float>*>(nullptr), out.states);
    out.masks.reserve(batch.size());
    for (const auto& s : batch) out.masks.push_back(s.attention_mask);
    return out;
}

std::string run_generate_greedy(const tfm::Weights<float>& w,
                                const tfm::Adapters<float>* adapters, const std::string& prompt,
                                int max_new_tokens) {
    if (max_new_tokens <= 0) return "";
    TokenSequence seq = byte_tokenize(prompt, w.shape.max_len);
    std::string out;
    std::vector<float> hidden;
    for (int step = 0; step < max_new_tokens; ++step) {
        if (static_cast<int>(seq.token_ids.size()) >= w.shape.max_len) break;
        const tfm::PaddedBatch pb = tfm::make_padded_batch({seq});
        tfm::forward(w, adapters, pb, nullptr, static_cast<tfm::Tape<float>*>(nullptr), hidden);
        const float* h =
            hidden.data() + static_cast<std::size_t>(pb.len - 1) * w.shape.dim;
        // argmax over lm_head logits; ties go to the lowest id
        int best = 0;
        double best_logit = -1e300;
        for (int tok = 0; tok < w.shape.vocab; ++tok) {
            double acc = 0.0;
            const float* row = w.lm_head.data() + static_cast<std::size_t>(tok) * w.shape.dim;
            for (int i = 0; i < w.shape.dim; ++i)
                acc += static_cast<double>(row[i]) * static_cast<double>(h[i]);
            if (acc > best_logit) {
                best_logit = acc;
                best = tok;
            }
        }
        if (best >= 256) break;  // end token or pad: stop
        out.push_back(static_cast<char>(static_cast<unsigned char>(best)));
        seq.token_ids.push_back(best);
        seq.attention_mask.push_back(1);
    }
    return out;
}

}  // namespace promptemb
