// Acceptance suite: one numbered criterion per run block, one PASS/FAIL line
// each, nonzero exit if anything fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>

#include "promptemb/eval.hpp"
#include "promptemb/icl.hpp"
#include "promptemb/lora.hpp"
#include "promptemb/quantize.hpp"
#include "promptemb/represent.hpp"
#include "promptemb/train.hpp"
#include "testutil.hpp"

using namespace promptemb;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& msg) {
    if (!ok) throw Failure(msg);
}

struct Harness {
    int failed = 0;

    void run(int index, const std::string& name, const std::function<void()>& body) {
        const auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            body();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (error.empty()) {
            std::printf("PASS  criterion %2d: %s (%.2fs)\n", index, name.c_str(), seconds);
        } else {
            std::printf("FAIL  criterion %2d: %s (%.2fs) -- %s\n", index, name.c_str(), seconds,
                        error.c_str());
            ++failed;
        }
        std::fflush(stdout);
    }
};

std::vector<double> rank_oracle(const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        int less = 0, equal = 0;
        for (double y : xs) {
            if (y < xs[i]) ++less;
            if (y == xs[i]) ++equal;
        }
        out[i] = less + (equal + 1) / 2.0;
    }
    return out;
}

void criterion_metric_oracles() {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 49);
        std::vector<double> xs(static_cast<std::size_t>(n)), ys(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            xs[static_cast<std::size_t>(i)] = 1.5 * i + 0.25;  // distinct values
            ys[static_cast<std::size_t>(i)] = 0.5 * i - 9.0;
        }
        std::shuffle(xs.begin(), xs.end(), rng);
        std::shuffle(ys.begin(), ys.end(), rng);
        const auto rx = rank_oracle(xs);
        const auto ry = rank_oracle(ys);
        double sum_d2 = 0.0;
        for (int i = 0; i < n; ++i)
            sum_d2 += (rx[static_cast<std::size_t>(i)] - ry[static_cast<std::size_t>(i)]) *
                      (rx[static_cast<std::size_t>(i)] - ry[static_cast<std::size_t>(i)]);
        const double closed = 1.0 - 6.0 * sum_d2 / (n * (static_cast<double>(n) * n - 1.0));
        require(std::fabs(spearman(xs, ys) - closed) < 1e-12,
                "spearman deviates from the tie-free closed form");
    }
    for (int len = 1; len <= 8; ++len) {
        const int total = static_cast<int>(std::pow(3, len));
        for (int code = 0; code < total; ++code) {
            std::vector<double> xs(static_cast<std::size_t>(len));
            int rest = code;
            for (int i = 0; i < len; ++i) {
                xs[static_cast<std::size_t>(i)] = rest % 3;
                rest /= 3;
            }
            require(ranks_with_ties(xs) == rank_oracle(xs),
                    "ranks_with_ties disagrees with the brute-force oracle");
        }
    }
}

void criterion_template_golden() {
    require(render_plain("Hi") == "This sentence : \"Hi\" means", "plain template drifted");
    require(render_prompteol("A man is smoking.") ==
                "This sentence : \"A man is smoking.\" means in one word:\"",
            "PromptEOL template drifted");
    const Demonstration demo("A man is smoking.", "Smoking", DemoSource::labeled_pairs);
    require(render_prompteol_icl("It rains.", demo) ==
                "This sentence : \"A man is smoking.\" means in one word:\"Smoking\"\n"
                "This sentence : \"It rains.\" means in one word:\"",
            "PromptEOL+ICL template drifted");
    require(render_prompteol("x").find("means in one word:") != std::string::npos &&
                render_prompteol("x").back() == '"',
            "PromptEOL must keep the one-word phrase and trailing quote");
}

void criterion_contrastive_loss() {
    for (int n : {2, 5, 8}) {
        ContrastiveBatch b;
        const std::vector<double> same = {0.4, -0.2, 0.9};
        b.anchors.assign(static_cast<std::size_t>(n), same);
        b.positives.assign(static_cast<std::size_t>(n), same);
        b.hard_negatives.assign(static_cast<std::size_t>(n), same);
        const auto res = contrastive_loss(b, 0.5);
        for (double li : res.per_example)
            require(std::fabs(li - std::log(2.0 * n)) < 1e-12,
                    "uniform-cosine batch must give log(2N)");
    }
    {
        ContrastiveBatch b;
        b.anchors = {{1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}};
        b.positives = {{1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}};
        b.hard_negatives = {{0, 0, 1, 0, 0, 0}, {0, 0, 0, 1, 0, 0}};
        const double expected = std::log(std::exp(2.0) + 3.0) - 2.0;
        const auto res = contrastive_loss(b, 0.5);
        require(std::fabs(res.loss - expected) < 1e-9, "closed-form N=2 example deviates");
    }
    std::mt19937_64 rng(303);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 3);
        const int dim = 2 + static_cast<int>(rng() % 7);
        ContrastiveBatch b;
        auto fill = [&](std::vector<std::vector<double>>& group) {
            group.assign(static_cast<std::size_t>(n),
                         std::vector<double>(static_cast<std::size_t>(dim)));
            for (auto& v : group)
                for (auto& x : v) x = dist(rng);
        };
        fill(b.anchors);
        fill(b.positives);
        fill(b.hard_negatives);
        const double rel = loss_gradient_check(b, 0.5);
        require(rel < 1e-5, "gradient check exceeded 1e-5: " + std::to_string(rel));
    }
}

void criterion_representation_contract() {
    const auto model = make_reference_model(0);
    const RepresentationMethod method(RepresentationMethod::Kind::prompt_eol);
    const auto sentences = testutil::random_sentences(50, 404);

    const auto solo = embed_batch(method, sentences, *model, 1);
    const auto batched = embed_batch(method, sentences, *model, 8);
    for (std::size_t i = 0; i < sentences.size(); ++i)
        for (std::size_t k = 0; k < solo[i].values.size(); ++k)
            require(std::fabs(solo[i].values[k] - batched[i].values[k]) < 1e-5,
                    "batch-size invariance violated");

    for (const auto& text : sentences) {
        const auto seq = model->tokenize(render_prompteol(text));
        TokenSequence padded;
        padded.token_ids.assign(5, kPadToken);
        padded.attention_mask.assign(5, 0);
        padded.token_ids.insert(padded.token_ids.end(), seq.token_ids.begin(),
                                seq.token_ids.end());
        padded.attention_mask.insert(padded.attention_mask.end(), seq.attention_mask.begin(),
                                     seq.attention_mask.end());
        const auto h0 = model->forward_hidden_states({seq});
        const auto h5 = model->forward_hidden_states({padded});
        const auto a = h0.last_real_row(0);
        const auto b = h5.last_real_row(0);
        for (int i = 0; i < h0.hidden_dim; ++i)
            require(std::fabs(a[i] - b[i]) < 1e-5, "padding invariance violated");
    }

    for (int i = 0; i < 10; ++i) {
        const auto base = model->tokenize(sentences[static_cast<std::size_t>(i)]);
        auto extended = base;
        extended.token_ids.push_back('?');
        extended.attention_mask.push_back(1);
        const auto h1 = model->forward_hidden_states({base});
        const auto h2 = model->forward_hidden_states({extended});
        for (int t = 0; t < h1.seq_len; ++t) {
            const auto r1 = h1.row(0, t);
            const auto r2 = h2.row(0, t);
            for (int k = 0; k < h1.hidden_dim; ++k)
                require(std::fabs(r1[k] - r2[k]) < 1e-6, "causality prefix-invariance violated");
        }
    }
}

void criterion_demo_search() {
    const auto model = make_reference_model(0);
    DemonstrationSet set;
    for (auto& d : testutil::synthetic_demos(20, 505)) set.add(std::move(d));
    require(set.size() == 20, "expected 20 demos");
    const auto dev = testutil::synthetic_dev_set(30, 506);

    const auto a = search_demonstration(set, dev, *model, 8);
    const auto b = search_demonstration(set, dev, *model, 8);
    require(a.best_index == b.best_index && a.best_score == b.best_score &&
                a.baseline_score == b.baseline_score && a.all_scores == b.all_scores,
            "search is not deterministic across reruns");
    require(std::isfinite(a.baseline_score), "no-demo baseline must be reported");

    // constructed tie: a 2-pair dev set forces every score into {-1, +1}
    const auto tiny_dev = testutil::synthetic_dev_set(2, 507);
    const auto tied = search_demonstration(set, tiny_dev, *model, 8);
    bool has_tie = false;
    for (std::size_t i = 0; i + 1 < tied.all_scores.size() && !has_tie; ++i)
        for (std::size_t j = i + 1; j < tied.all_scores.size(); ++j)
            if (tied.all_scores[i].second == tied.all_scores[j].second) {
                has_tie = true;
                break;
            }
    require(has_tie, "tie construction failed to produce equal scores");
    for (const auto& [idx, score] : tied.all_scores) {
        if (score == tied.best_score) {
            require(idx == tied.best_index, "tie must break to the lowest index");
            break;
        }
    }
}

void criterion_adapter_identity_merge() {
    const auto base = make_reference_model(0);
    const LoraConfig cfg{64, 16.0f, 0.05f};
    const auto adapted = apply_adapters(base, cfg, 7, false);

    const RepresentationMethod method(RepresentationMethod::Kind::prompt_eol);
    for (const auto& text : testutil::random_sentences(10, 606)) {
        const auto vb = embed(method, text, *base);
        const auto va = embed(method, text, *adapted);
        for (std::size_t i = 0; i < vb.values.size(); ++i)
            require(std::fabs(static_cast<double>(vb.values[i]) - va.values[i]) <= 1e-12,
                    "post-init adapted embeddings must equal base embeddings");
    }

    std::size_t expected = 0;
    for (const auto& m : adapted->adapters().mats)
        expected += static_cast<std::size_t>(m.rank) * (static_cast<std::size_t>(m.m) + m.n);
    require(adapted->trainable_parameter_count() == expected,
            "trainable parameter count != sum r*(m+n)");

    std::mt19937_64 rng(607);
    std::normal_distribution<float> dist(0.0f, 0.02f);
    for (auto& m : adapted->adapters().mats) {
        for (auto& x : m.a) x = dist(rng);
        for (auto& x : m.b) x = dist(rng);
    }
    const auto merged = adapted->merged();
    for (const auto& text : testutil::random_sentences(10, 608)) {
        const auto va = embed(method, text, *adapted);
        const auto vm = embed(method, text, *merged);
        for (std::size_t i = 0; i < va.values.size(); ++i)
            require(std::fabs(va.values[i] - vm.values[i]) < 1e-5,
                    "merged forward deviates from adapted forward");
    }
}

void criterion_quantization() {
    std::mt19937_64 rng(707);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (int blk = 0; blk < 1000; ++blk) {
        std::vector<float> block(64);
        for (auto& v : block) v = dist(rng);
        const auto deq = dequantize_blockwise(quantize_blockwise(block));
        float absmax = 0.0f;
        for (float v : block) absmax = std::max(absmax, std::fabs(v));
        for (std::size_t i = 0; i < block.size(); ++i)
            require(std::fabs(block[i] - deq[i]) <= absmax / 14.0f + 1e-7f,
                    "quantization error bound violated");
    }
    for (float scale : {0.25f, 0.5f, 1.0f, 0.03125f}) {
        std::vector<float> grid;
        for (int rep = 0; rep < 16; ++rep)
            for (int k = -7; k <= 7; ++k) grid.push_back(static_cast<float>(k) * scale);
        const auto deq = dequantize_blockwise(quantize_blockwise(grid));
        require(deq == grid, "representable grid did not round-trip exactly");
    }
    const std::vector<float> zeros(256, 0.0f);
    require(dequantize_blockwise(quantize_blockwise(zeros)) == zeros,
            "all-zero tensor did not round-trip");
}

void criterion_end_to_end_training() {
    const auto base = make_reference_model(0);
    TrainConfig config;
    config.temperature = 0.5;
    config.learning_rate = 5e-4;
    config.epochs = 1;
    config.batch_size = 8;
    config.seed = 0;  // defaults: r=64, alpha=16, dropout=0.05

    const auto triplets = testutil::synthetic_triplets(200, 808);
    const auto fixture = testutil::synthetic_sts_fixture(40, 809);  // held out
    const RepresentationMethod method(RepresentationMethod::Kind::prompt_eol);

    const double pre =
        evaluate_sts({{"fixture", fixture}}, method, *base, 8).results.front().spearman;

    const auto outcome = train_cse(triplets, base, config);
    require(outcome.log.size() == 25, "expected 25 steps from 200 triplets at N=8");
    const std::size_t quarter = outcome.log.size() / 4;
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < quarter; ++i) {
        first += outcome.log[i].loss;
        last += outcome.log[outcome.log.size() - 1 - i].loss;
    }
    require(last / static_cast<double>(quarter) < first / static_cast<double>(quarter),
            "mean loss over the last quarter must fall below the first quarter");

    const double post = evaluate_sts({{"fixture", fixture}}, method, *outcome.model, 8)
                            .results.front()
                            .spearman;
    require(post >= pre, "post-training Spearman (" + std::to_string(post) +
                             ") fell below pre-training (" + std::to_string(pre) + ")");

    const auto rerun = train_cse(triplets, base, config);
    require(rerun.log.size() == outcome.log.size(), "rerun produced a different step count");
    for (std::size_t i = 0; i < rerun.log.size(); ++i)
        require(rerun.log[i].loss == outcome.log[i].loss,
                "two seeded runs must produce identical logs");
}

void criterion_transfer_harness() {
    std::map<std::string, std::vector<float>> table;
    std::vector<LabeledExample> examples;
    std::mt19937_64 rng(909);
    std::normal_distribution<float> noise(0.0f, 0.05f);
    for (int i = 0; i < 60; ++i) {
        const int cls = i % 2;
        const std::string name = "sep" + std::to_string(i);
        table[name] = {cls ? 1.0f + noise(rng) : -1.0f + noise(rng), noise(rng)};
        examples.push_back({name, cls});
    }
    testutil::PlantedBackend backend(table);
    const RepresentationMethod avg(RepresentationMethod::Kind::avg_tokens);
    const auto sep = evaluate_transfer("separable", examples, examples, 2, avg, backend, {}, 8);
    require(sep.accuracy >= 0.99, "separable fixture must reach 0.99 accuracy");

    std::map<std::string, std::vector<float>> rtable;
    std::vector<std::string> names;
    std::normal_distribution<float> coord(0.0f, 1.0f);
    for (int i = 0; i < 60; ++i) {
        const std::string name = "r" + std::to_string(i);
        rtable[name] = {coord(rng), coord(rng), coord(rng)};
        names.push_back(name);
    }
    testutil::PlantedBackend rbackend(rtable);
    double total = 0.0;
    for (unsigned seed = 0; seed < 5; ++seed) {
        std::vector<int> labels(60);
        for (int i = 0; i < 60; ++i) labels[static_cast<std::size_t>(i)] = i % 2;
        std::mt19937_64 label_rng(seed);
        std::shuffle(labels.begin(), labels.end(), label_rng);
        std::vector<LabeledExample> train, test;
        for (int i = 0; i < 60; ++i) {
            const LabeledExample ex{names[static_cast<std::size_t>(i)],
                                    labels[static_cast<std::size_t>(i)]};
            (i < 40 ? train : test).push_back(ex);
        }
        TransferHyperparams hyper;
        hyper.seed = seed;
        total += evaluate_transfer("chance", train, test, 2, avg, rbackend, hyper, 8).accuracy;
    }
    const double mean_acc = total / 5.0;
    require(mean_acc >= 0.4 && mean_acc <= 0.6,
            "shuffled-label accuracy not at chance: " + std::to_string(mean_acc));

    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<std::vector<double>> x(10, std::vector<double>(4));
    std::vector<int> y(10);
    for (int i = 0; i < 10; ++i) {
        for (auto& v : x[static_cast<std::size_t>(i)]) v = d(rng);
        y[static_cast<std::size_t>(i)] = i % 2;
    }
    std::vector<double> params(2 * 4 + 2);
    for (auto& p : params) p = 0.2 * d(rng);
    std::vector<double> grad;
    logistic_loss_and_grad(x, y, 2, params, 0.01, &grad);
    const double h = 1e-6;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto probe = params;
        probe[k] += h;
        const double up = logistic_loss_and_grad(x, y, 2, probe, 0.01, nullptr);
        probe[k] -= 2 * h;
        const double down = logistic_loss_and_grad(x, y, 2, probe, 0.01, nullptr);
        const double fd = (up - down) / (2 * h);
        require(std::fabs(fd - grad[k]) / std::max(std::fabs(fd) + std::fabs(grad[k]), 1e-3) <
                    1e-5,
                "logistic gradient deviates from finite differences");
    }
}

void criterion_scale_invariance() {
    // two planted backends: one scaled by 3.7 elementwise
    std::map<std::string, std::vector<float>> base_table, scaled_table;
    StsDataset data;
    for (int i = 0; i < 20; ++i) {
        const double theta = 0.1 + 2.8 * i / 20.0;
        const std::string a = "a" + std::to_string(i), b = "b" + std::to_string(i);
        base_table[a] = {1.0f, 0.0f};
        base_table[b] = {static_cast<float>(std::cos(theta)),
                         static_cast<float>(std::sin(theta))};
        for (const auto& key : {a, b}) {
            scaled_table[key] = base_table[key];
            for (auto& v : scaled_table[key]) v *= 3.7f;
        }
        data.push_back({a, b, 0.25 * i});
    }
    testutil::PlantedBackend b1(base_table), b2(scaled_table);
    const RepresentationMethod avg(RepresentationMethod::Kind::avg_tokens);
    const auto r1 = evaluate_sts({{"d", data}}, avg, b1, 4);
    const auto r2 = evaluate_sts({{"d", data}}, avg, b2, 4);
    require(r1.results[0].spearman == r2.results[0].spearman,
            "scaling embeddings by 3.7 changed the Spearman score bitwise");
    require(r1.average == r2.average, "averages diverged under scaling");
}

}  // namespace

int main() {
    Harness h;
    h.run(1, "metric oracles (closed-form spearman, brute-force ranks)",
          criterion_metric_oracles);
    h.run(2, "template golden strings", criterion_template_golden);
    h.run(3, "contrastive loss closed forms and gradient check", criterion_contrastive_loss);
    h.run(4, "representation contract on the reference model", criterion_representation_contract);
    h.run(5, "demonstration search determinism, ties, baseline", criterion_demo_search);
    h.run(6, "adapter identity, merge, parameter count", criterion_adapter_identity_merge);
    h.run(7, "blockwise 4-bit quantization bounds", criterion_quantization);
    h.run(8, "end-to-end desk-scale contrastive training", criterion_end_to_end_training);
    h.run(9, "transfer harness fixtures and logistic gradient", criterion_transfer_harness);
    h.run(10, "cosine scale invariance of STS scores", criterion_scale_invariance);

    if (h.failed == 0) {
        std::printf("all 10 acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criteria FAILED\n", h.failed);
    return 1;
}
