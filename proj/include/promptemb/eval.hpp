#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "promptemb/cache.hpp"
#include "promptemb/core.hpp"
#include "promptemb/represent.hpp"

namespace promptemb {

struct StsTaskResult {
    std::string task_name;
    double spearman = 0.0;
    int n_pairs = 0;
};

struct TransferTaskResult {
    std::string task_name;
    double accuracy = 0.0;
    int n_train = 0;
    int n_test = 0;
};

/// cos(a, b) = dot / (|a||b|), computed in double and clamped to [-1, 1].
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);
double cosine(std::span<const double> a, std::span<const double> b);

/// 1-based ranks; ties get the mean of their positional ranks.
std::vector<double> ranks_with_ties(const std::vector<double>& xs);

/// Pearson correlation of tie-averaged ranks. Throws DegenerateInputError
/// when either list is constant.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct StsEvalOutcome {
    std::vector<StsTaskResult> results;
    double average = 0.0;
};

StsEvalOutcome evaluate_sts(const std::map<std::string, StsDataset>& datasets,
                            const RepresentationMethod& method, const ModelBackend& backend,
                            int batch_size, EmbeddingCache* cache = nullptr);

struct LogisticModel {
    int num_classes = 0;
    int dim = 0;
    std::vector<double> weights;  // num_classes x dim
    std::vector<double> bias;     // num_classes

    int predict(std::span<const float> x) const;
};

/// Multinomial logistic regression, full-batch gradient descent on
/// cross-entropy + (l2/2)|W|^2 (bias unregularized). Features stay frozen.
LogisticModel train_logistic(const std::vector<EmbeddingVector>& features,
                             const std::vector<int>& labels, int num_classes, double l2,
                             int epochs, double lr, std::uint64_t seed);

// Loss and gradient at a flat parameter point [W row-major, then bias];
// exposed so finite-difference tests can probe the exact objective.
double logistic_loss_and_grad(const std::vector<std::vector<double>>& features,
                              const std::vector<int>& labels, int num_classes,
                              const std::vector<double>& params, double l2,
                              std::vector<double>* grad);

struct TransferHyperparams {
    std::vector<double> l2_grid{1e-4, 1e-2, 1.0};
    int epochs = 200;
    double lr = 0.5;
    double holdout_fraction = 0.1;
    std::uint64_t seed = 0;
};

TransferTaskResult evaluate_transfer(const std::string& task_name,
                                     const std::vector<LabeledExample>& train,
                                     const std::vector<LabeledExample>& test, int num_classes,
                                     const RepresentationMethod& method,
                                     const ModelBackend& backend,
                                     const TransferHyperparams& hyper, int batch_size,
                                     EmbeddingCache* cache = nullptr);

}  // namespace promptemb
