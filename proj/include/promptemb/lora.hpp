#pragma once

#include <cstdint>
#include <memory>
#include <random>

#include "promptemb/backend.hpp"
#include "promptemb/reference_model.hpp"
#include "promptemb/transformer.hpp"

namespace promptemb {

struct LoraConfig {
    int rank = 64;
    float alpha = 16.0f;
    float dropout = 0.05f;
};

/// Frozen base weights (optionally reconstructed from 4-bit blocks) plus
/// trainable low-rank factors on every block linear (wq, wk, wv, wo, fc1,
/// fc2). B starts at zero so the adapted model is exactly the base model
/// until training moves it.
class AdaptedModel final : public ModelBackend {
public:
    AdaptedModel(std::shared_ptr<const ReferenceModel> base, LoraConfig cfg, std::uint64_t seed,
                 bool quantize_base);

    const BackendDescriptor& descriptor() const override { return desc_; }
    TokenSequence tokenize(const std::string& text) const override;
    HiddenStateBatch forward_hidden_states(const std::vector<TokenSequence>& batch) const override;
    std::string generate_greedy(const std::string& prompt, int max_new_tokens) const override;

    struct TrainStep {
        tfm::PaddedBatch batch;
        tfm::Tape<float> tape;
        std::vector<float> hidden;  // rows * len * dim
    };
    // Dropout on the adapter path is active here and only here.
    TrainStep train_forward(const std::vector<TokenSequence>& batch,
                            std::mt19937& dropout_rng) const;
    void backward(const TrainStep& step, const std::vector<float>& d_hidden,
                  tfm::AdapterGrads<float>& grads) const;

    std::size_t trainable_parameter_count() const;

    // Folds scale * B A into dense copies of the base weights.
    std::shared_ptr<ReferenceModel> merged() const;

    tfm::Adapters<float>& adapters() { return adapters_; }
    const tfm::Adapters<float>& adapters() const { return adapters_; }
    const LoraConfig& config() const { return cfg_; }
    bool quantized_base() const { return quantize_base_; }
    const tfm::Weights<float>& effective_base_weights() const { return weights_; }

private:
    std::shared_ptr<const ReferenceModel> base_;
    tfm::Weights<float> weights_;  // base copy; dequantized reconstruction when quantizing
    tfm::Adapters<float> adapters_;
    LoraConfig cfg_;
    bool quantize_base_;
    BackendDescriptor desc_;
};

/// Wraps a backend with adapters. Throws AdapterUnsupportedError for backends
/// that do not expose their linear weights (anything but the reference model).
std::shared_ptr<AdaptedModel> apply_adapters(std::shared_ptr<const ModelBackend> backend,
                                             const LoraConfig& cfg, std::uint64_t seed,
                                             bool quantize_base);

}  // namespace promptemb
