#include "promptemb/lora.hpp"

#include "promptemb/quantize.hpp"

namespace promptemb {

namespace {

// Adapted matrices and their shapes, in tape order.
struct LinShape {
    int m, n;
};

std::array<LinShape, tfm::kLinPerLayer> lin_shapes(const tfm::Shape& sh) {
    return {LinShape{sh.dim, sh.dim}, {sh.dim, sh.dim}, {sh.dim, sh.dim},
            {sh.dim, sh.dim},         {sh.ffn, sh.dim}, {sh.dim, sh.ffn}};
}

std::vector<float>& layer_mat(tfm::LayerWeights<float>& lw, int which) {
    switch (which) {
        case tfm::kWq: return lw.wq;
        case tfm::kWk: return lw.wk;
        case tfm::kWv: return lw.wv;
        case tfm::kWo: return lw.wo;
        case tfm::kFc1: return lw.fc1;
        default: return lw.fc2;
    }
}

}  // namespace

AdaptedModel::AdaptedModel(std::shared_ptr<const ReferenceModel> base, LoraConfig cfg,
                           std::uint64_t seed, bool quantize_base)
    : base_(std::move(base)), weights_(base_->weights()), cfg_(cfg),
      quantize_base_(quantize_base) {
    if (cfg_.rank < 1) throw Error(ErrorKind::usage, "adapter rank must be >= 1");
    if (cfg_.dropout < 0.0f || cfg_.dropout >= 1.0f)
        throw Error(ErrorKind::usage, "adapter dropout must be in [0, 1)");

    if (quantize_base_) {
        // The frozen base is what a 4-bit checkpoint would reconstruct.
        for (auto& lw : weights_.layers)
            for (int which = 0; which < tfm::kLinPerLayer; ++which) {
                auto& mat = layer_mat(lw, which);
                mat = dequantize_blockwise(quantize_blockwise(mat));
            }
    }

    adapters_.scale = cfg_.alpha / static_cast<float>(cfg_.rank);
    adapters_.dropout = cfg_.dropout;
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 0.02f);
    const auto shapes = lin_shapes(weights_.shape);
    for (int l = 0; l < weights_.shape.layers; ++l)
        for (int which = 0; which < tfm::kLinPerLayer; ++which) {
            tfm::AdapterMat<float> am;
            am.m = shapes[static_cast<std::size_t>(which)].m;
            am.n = shapes[static_cast<std::size_t>(which)].n;
            am.rank = cfg_.rank;
            am.a.resize(static_cast<std::size_t>(am.rank) * am.n);
            for (auto& x : am.a) x = dist(rng);
            am.b.assign(static_cast<std::size_t>(am.m) * am.rank, 0.0f);
            adapters_.mats.push_back(std::move(am));
        }

    desc_ = base_->descriptor();
    desc_.name += "+lora-r" + std::to_string(cfg_.rank) + (quantize_base_ ? "+q4" : "");
}

TokenSequence AdaptedModel::tokenize(const std::string& text) const {
    return base_->tokenize(text);
}

HiddenStateBatch AdaptedModel::forward_hidden_states(
    const std::vector<TokenSequence>& batch) const {
    return run_forward_hidden(weights_, &adapters_, batch);
}

std::string AdaptedModel::generate_greedy(const std::string& prompt, int max_new_tokens) const {
    return run_generate_greedy(weights_, &adapters_, prompt, max_new_tokens);
}

AdaptedModel::TrainStep AdaptedModel::train_forward(const std::vector<TokenSequence>& batch,
                                                    std::mt19937& dropout_rng) const {
    TrainStep step;
    step.batch = tfm::make_padded_batch(batch);
    tfm::forward(weights_, &adapters_, step.batch, &dropout_rng, &step.tape, step.hidden);
    return step;
}

void AdaptedModel::backward(const TrainStep& step, const std::vector<float>& d_hidden,
                            tfm::AdapterGrads<float>& grads) const {
    tfm::backward(weights_, adapters_, step.batch, step.tape, d_hidden, grads);
}

std::size_t AdaptedModel::trainable_parameter_count() const {
    std::size_t count = 0;
    for (const auto& m : adapters_.mats) count += m.a.size() + m.b.size();
    return count;
}

std::shared_ptr<ReferenceModel> AdaptedModel::merged() const {
    tfm::Weights<float> merged = weights_;
    for (int l = 0; l < merged.shape.layers; ++l)
        for (int which = 0; which < tfm::kLinPerLayer; ++which) {
            const auto& am = adapters_.at(l, which);
            auto& w = layer_mat(merged.layers[static_cast<std::size_t>(l)], which);
            for (int o = 0; o < am.m; ++o)
                for (int i = 0; i < am.n; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < am.rank; ++j)
                        acc += static_cast<double>(
                                   am.b[static_cast<std::size_t>(o) * am.rank + j]) *
                               static_cast<double>(am.a[static_cast<std::size_t>(j) * am.n + i]);
                    w[static_cast<std::size_t>(o) * am.n + i] +=
                        static_cast<float>(static_cast<double>(adapters_.scale) * acc);
                }
        }
    return std::make_shared<ReferenceModel>(std::move(merged), desc_.name + "+merged");
}

std::shared_ptr<AdaptedModel> apply_adapters(std::shared_ptr<const ModelBackend> backend,
                                             const LoraConfig& cfg, std::uint64_t seed,
                                             bool quantize_base) {
    auto ref = std::dynamic_pointer_cast<const ReferenceModel>(backend);
    if (!ref) throw AdapterUnsupportedError(backend->descriptor().name);
    return std::make_shared<AdaptedModel>(std::move(ref), cfg, seed, quantize_base);
}

}  // namespace promptemb
