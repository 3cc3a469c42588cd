#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "promptemb/backend.hpp"
#include "promptemb/transformer.hpp"

namespace promptemb {

// Byte vocabulary: ids 0..255 are raw bytes, plus two specials.
inline constexpr int kPadToken = 256;
inline constexpr int kEndToken = 257;
inline constexpr int kByteVocabSize = 258;

// Every string is encodable; throws SequenceTooLongError past max_len.
TokenSequence byte_tokenize(const std::string& text, int max_len);

/// Desk-scale stand-in for a real autoregressive LM: 2 layers, 4 heads,
/// hidden 64, ffn 256, byte vocabulary, max length 512. All weights come from
/// one std::mt19937_64 stream of N(0, 0.05) draws in a fixed tensor order, so
/// equal seeds give bit-identical parameters within a build.
class ReferenceModel final : public ModelBackend {
public:
    explicit ReferenceModel(std::uint64_t seed);
    ReferenceModel(tfm::Weights<float> weights, std::string name);

    const BackendDescriptor& descriptor() const override { return desc_; }
    TokenSequence tokenize(const std::string& text) const override;
    HiddenStateBatch forward_hidden_states(const std::vector<TokenSequence>& batch) const override;
    std::string generate_greedy(const std::string& prompt, int max_new_tokens) const override;

    const tfm::Weights<float>& weights() const { return weights_; }

private:
    tfm::Weights<float> weights_;
    BackendDescriptor desc_;
};

std::shared_ptr<ReferenceModel> make_reference_model(std::uint64_t seed);

// Runs tfm::forward and packages the result; shared by the adapted model.
HiddenStateBatch run_forward_hidden(const tfm::Weights<float>& w,
                                    const tfm::Adapters<float>* adapters,
                                    const std::vector<TokenSequence>& batch);

std::string run_generate_greedy(const tfm::Weights<float>& w,
                                const tfm::Adapters<float>* adapters, const std::string& prompt,
                                int max_new_tokens);

}  // namespace promptemb
