#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptemb/core.hpp"
#include "promptemb/lora.hpp"

namespace promptemb {

/// Aligned anchor / positive / hard-negative embeddings (h_i, h_i+, h_i-).
/// Kept in double so the loss and its gradient can be checked against finite
/// differences at full precision.
struct ContrastiveBatch {
    std::vector<std::vector<double>> anchors, positives, hard_negatives;

    int size() const { return static_cast<int>(anchors.size()); }
    int dim() const { return anchors.empty() ? 0 : static_cast<int>(anchors.front().size()); }
};

void check_contrastive_batch(const ContrastiveBatch& batch);

struct ContrastiveLossResult {
    double loss = 0.0;                // mean over examples
    std::vector<double> per_example;  // l_i
};

/// InfoNCE-style objective over 2N in-batch similarity terms at temperature
/// tau, computed with log-sum-exp stabilization:
///   l_i = -log( exp(cos(h_i,h_i+)/tau) /
///               sum_j [ exp(cos(h_i,h_j+)/tau) + exp(cos(h_i,h_j-)/tau) ] )
ContrastiveLossResult contrastive_loss(const ContrastiveBatch& batch, double tau);

struct ContrastiveGrads {
    std::vector<std::vector<double>> d_anchors, d_positives, d_negatives;
};

ContrastiveLossResult contrastive_loss_with_grad(const ContrastiveBatch& batch, double tau,
                                                 ContrastiveGrads& grads);

/// Max relative error between the analytic gradient and central finite
/// differences (step 1e-6) over every embedding entry.
double loss_gradient_check(const ContrastiveBatch& batch, double tau);

struct TrainConfig {
    double temperature = 0.5;
    double learning_rate = 5e-4;
    int epochs = 1;
    int batch_size = 8;  // N triplets per step
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    LoraConfig adapter;
    bool quantize_base = false;
};

struct TrainLogEntry {
    int step = 0;
    double loss = 0.0;
};

struct TrainOutcome {
    std::shared_ptr<AdaptedModel> model;
    std::vector<TrainLogEntry> log;
};

/// Supervised contrastive fine-tuning on NLI triplets with the PromptEOL
/// representation (no demonstration). Updates adapter parameters only, with
/// the Adam rule; batches follow a seeded shuffle per epoch and a final
/// partial batch smaller than 2 is dropped.
TrainOutcome train_cse(const NliTripletSet& triplets, std::shared_ptr<const ModelBackend> backend,
                       const TrainConfig& config);

void save_adapter_checkpoint(const std::string& path, const AdaptedModel& model,
                             const nlohmann::json& config_snapshot);

/// Rebuilds the adapted model around `base`. Throws a data error naming the
/// first missing or malformed field.
std::shared_ptr<AdaptedModel> load_adapter_checkpoint(const std::string& path,
                                                      std::shared_ptr<const ModelBackend> base);

nlohmann::json train_config_to_json(const TrainConfig& c);

}  // namespace promptemb
