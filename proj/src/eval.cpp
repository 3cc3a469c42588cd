#include "promptemb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace promptemb {

namespace {

template <typename A, typename B>
double dot_norms(const A& a, const B& b, double& na, double& nb) {
    double d = 0.0;
    na = 0.0;
    nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]);
        const double y = static_cast<double>(b[i]);
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    return d;
}

double cosine_impl(double dot, double na, double nb) {
    if (na == 0.0 || nb == 0.0) throw ZeroVectorError();
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.values.size() != b.values.size())
        throw DimensionMismatchError(a.values.size(), b.values.size());
    double na, nb;
    const double d = dot_norms(a.values, b.values, na, nb);
    return cosine_impl(d, na, nb);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionMismatchError(a.size(), b.size());
    double na, nb;
    const double d = dot_norms(a, b, na, nb);
    return cosine_impl(d, na, nb);
}

std::vector<double> ranks_with_ties(const std::vector<double>& xs) {
    if (xs.empty()) throw Error(ErrorKind::data, "cannot rank an empty list");
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return xs[i] < xs[j]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        // positions i..j (0-based) share the mean of ranks i+1..j+1
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw DimensionMismatchError(xs.size(), ys.size());
    if (xs.size() < 2) throw Error(ErrorKind::data, "spearman needs at least 2 observations");
    const auto rx = ranks_with_ties(xs);
    const auto ry = ranks_with_ties(ys);
    const double n = static_cast<double>(xs.size());
    // Ranks are half-integers, so these sums are exact in double up to very
    // large n; the result is invariant under permuting the pairs.
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sx += rx[i];
        sy += ry[i];
        sxx += rx[i] * rx[i];
        syy += ry[i] * ry[i];
        sxy += rx[i] * ry[i];
    }
    const double var_x = n * sxx - sx * sx;
    const double var_y = n * syy - sy * sy;
    if (var_x == 0.0) throw DegenerateInputError("xs");
    if (var_y == 0.0) throw DegenerateInputError("ys");
    return std::clamp((n * sxy - sx * sy) / std::sqrt(var_x * var_y), -1.0, 1.0);
}

StsEvalOutcome evaluate_sts(const std::map<std::string, StsDataset>& datasets,
                            const RepresentationMethod& method, const ModelBackend& backend,
                            int batch_size, EmbeddingCache* cache) {
    if (datasets.empty()) throw Error(ErrorKind::data, "no STS datasets given");
    StsEvalOutcome outcome;
    for (const auto& [name, data] : datasets) {
        if (data.size() < 2)
            throw Error(ErrorKind::data, "dataset '" + name + "' needs at least 2 pairs");
        std::vector<std::string> a, b;
        a.reserve(data.size());
        b.reserve(data.size());
        for (const auto& pair : data) {
            a.push_back(pair.sentence_a);
            b.push_back(pair.sentence_b);
        }
        std::vector<double> sims(data.size()), gold(data.size());
        try {
            const auto ea = embed_batch_cached(cache, method, a, backend, batch_size);
            const auto eb = embed_batch_cached(cache, method, b, backend, batch_size);
            for (std::size_t i = 0; i < data.size(); ++i) {
                sims[i] = cosine(ea[i], eb[i]);
                gold[i] = data[i].gold_score;
            }
        } catch (const Error& e) {
            throw Error(e.kind(), "dataset '" + name + "': " + e.what());
        }
        StsTaskResult r;
        r.task_name = name;
        try {
            r.spearman = spearman(sims, gold);
        } catch (const Error& e) {
            throw Error(e.kind(), "dataset '" + name + "': " + e.what());
        }
        r.n_pairs = static_cast<int>(data.size());
        outcome.results.push_back(std::move(r));
    }
    double sum = 0.0;
    for (const auto& r : outcome.results) sum += r.spearman;
    outcome.average = sum / static_cast<double>(outcome.results.size());
    return outcome;
}

int LogisticModel::predict(std::span<const float> x) const {
    int best = 0;
    double best_score = -1e300;
    for (int c = 0; c < num_classes; ++c) {
        double s = bias[static_cast<std::size_t>(c)];
        const double* row = weights.data() + static_cast<std::size_t>(c) * dim;
        for (int i = 0; i < dim; ++i) s += row[i] * static_cast<double>(x[i]);
        if (s > best_score) {
            best_score = s;
            best = c;
        }
    }
    return best;
}

double logistic_loss_and_grad(const std::vector<std::vector<double>>& features,
                              const std::vector<int>& labels, int num_classes,
                              const std::vector<double>& params, double l2,
                              std::vector<double>* grad) {
    const std::size_t n = features.size();
    const int d = static_cast<int>(features.front().size());
    const std::size_t wsize = static_cast<std::size_t>(num_classes) * d;
    if (params.size() != wsize + static_cast<std::size_t>(num_classes))
        throw Error(ErrorKind::usage, "parameter vector has the wrong size");
    if (grad) grad->assign(params.size(), 0.0);

    double loss = 0.0;
    std::vector<double> logits(static_cast<std::size_t>(num_classes));
    for (std::size_t ex = 0; ex < n; ++ex) {
        const auto& x = features[ex];
        double maxlogit = -1e300;
        for (int c = 0; c < num_classes; ++c) {
            double s = params[wsize + static_cast<std::size_t>(c)];
            for (int i = 0; i < d; ++i)
                s += params[static_cast<std::size_t>(c) * d + i] * x[static_cast<std::size_t>(i)];
            logits[static_cast<std::size_t>(c)] = s;
            maxlogit = std::max(maxlogit, s);
        }
        double denom = 0.0;
        for (int c = 0; c < num_classes; ++c)
            denom += std::exp(logits[static_cast<std::size_t>(c)] - maxlogit);
        const double log_denom = std::log(denom) + maxlogit;
        loss += (log_denom - logits[static_cast<std::size_t>(labels[ex])]) /
                static_cast<double>(n);
        if (grad) {
            for (int c = 0; c < num_classes; ++c) {
                const double p =
                    std::exp(logits[static_cast<std::size_t>(c)] - log_denom) -
                    (labels[ex] == c ? 1.0 : 0.0);
                const double coef = p / static_cast<double>(n);
                for (int i = 0; i < d; ++i)
                    (*grad)[static_cast<std::size_t>(c) * d + i] +=
                        coef * x[static_cast<std::size_t>(i)];
                (*grad)[wsize + static_cast<std::size_t>(c)] += coef;
            }
        }
    }
    double reg = 0.0;
    for (std::size_t i = 0; i < wsize; ++i) {
        reg += params[i] * params[i];
        if (grad) (*grad)[i] += l2 * params[i];
    }
    loss += 0.5 * l2 * reg;
    return loss;
}

LogisticModel train_logistic(const std::vector<EmbeddingVector>& features,
                             const std::vector<int>& labels, int num_classes, double l2,
                             int epochs, double lr, std::uint64_t seed) {
    (void)seed;  // zero init + full-batch descent: already deterministic
    if (features.size() != labels.size())
        throw DimensionMismatchError(features.size(), labels.size());
    if (features.empty()) throw Error(ErrorKind::data, "no training features");
    if (num_classes < 2) throw Error(ErrorKind::data, "need at least 2 classes");
    if (l2 < 0.0) throw Error(ErrorKind::usage, "l2 must be >= 0");

    const int d = static_cast<int>(features.front().values.size());
    std::vector<std::vector<double>> x(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (static_cast<int>(features[i].values.size()) != d)
            throw DimensionMismatchError(features[i].values.size(), static_cast<std::size_t>(d));
        x[i].assign(features[i].values.begin(), features[i].values.end());
    }

    std::vector<double> params(static_cast<std::size_t>(num_classes) * d +
                                   static_cast<std::size_t>(num_classes),
                               0.0);
    std::vector<double> grad;
    for (int it = 0; it < epochs; ++it) {
        const double loss = logistic_loss_and_grad(x, labels, num_classes, params, l2, &grad);
        if (!std::isfinite(loss)) throw NonFiniteLossError(static_cast<std::size_t>(it));
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    }

    LogisticModel model;
    model.num_classes = num_classes;
    model.dim = d;
    model.weights.assign(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(
                                                              static_cast<std::size_t>(num_classes) * d));
    model.bias.assign(params.end() - num_classes, params.end());
    return model;
}

TransferTaskResult evaluate_transfer(const std::string& task_name,
                                     const std::vector<LabeledExample>& train,
                                     const std::vector<LabeledExample>& test, int num_classes,
                                     const RepresentationMethod& method,
                                     const ModelBackend& backend,
                                     const TransferHyperparams& hyper, int batch_size,
                                     EmbeddingCache* cache) {
    validate_labeled_split(train, num_classes, /*is_train_split=*/true);
    validate_labeled_split(test, num_classes, /*is_train_split=*/false);
    if (static_cast<int>(train.size()) < num_classes)
        throw Error(ErrorKind::data, "fewer training examples than classes");
    if (test.empty()) throw Error(ErrorKind::data, "empty test split");

    std::vector<std::string> train_texts, test_texts;
    std::vector<int> train_labels, test_labels;
    for (const auto& ex : train) {
        train_texts.push_back(ex.text);
        train_labels.push_back(ex.label);
    }
    for (const auto& ex : test) {
        test_texts.push_back(ex.text);
        test_labels.push_back(ex.label);
    }
    const auto train_emb = embed_batch_cached(cache, method, train_texts, backend, batch_size);
    const auto test_emb = embed_batch_cached(cache, method, test_texts, backend, batch_size);

    // l2 picked on a held-out slice of train, then refit on all of it.
    double best_l2 = hyper.l2_grid.front();
    if (hyper.l2_grid.size() > 1 && train.size() >= 10) {
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(hyper.seed);
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t held = std::max<std::size_t>(
            1, static_cast<std::size_t>(static_cast<double>(train.size()) *
                                        hyper.holdout_fraction));
        std::vector<EmbeddingVector> fit_emb, held_emb;
        std::vector<int> fit_labels, held_labels;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (i < held) {
                held_emb.push_back(train_emb[order[i]]);
                held_labels.push_back(train_labels[order[i]]);
            } else {
                fit_emb.push_back(train_emb[order[i]]);
                fit_labels.push_back(train_labels[order[i]]);
            }
        }
        double best_acc = -1.0;
        for (double l2 : hyper.l2_grid) {
            const auto model = train_logistic(fit_emb, fit_labels, num_classes, l2, hyper.epochs,
                                              hyper.lr, hyper.seed);
            int correct = 0;
            for (std::size_t i = 0; i < held_emb.size(); ++i)
                if (model.predict(held_emb[i].values) == held_labels[i]) ++correct;
            const double acc = static_cast<double>(correct) / static_cast<double>(held_emb.size());
            if (acc > best_acc) {
                best_acc = acc;
                best_l2 = l2;
            }
        }
    }

    const auto model = train_logistic(train_emb, train_labels, num_classes, best_l2, hyper.epochs,
                                      hyper.lr, hyper.seed);
    int correct = 0;
    for (std::size_t i = 0; i < test_emb.size(); ++i)
        if (model.predict(test_emb[i].values) == test_labels[i]) ++correct;

    TransferTaskResult r;
    r.task_name = task_name;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    r.n_train = static_cast<int>(train.size());
    r.n_test = static_cast<int>(test.size());
    return r;
}

}  // namespace promptemb
