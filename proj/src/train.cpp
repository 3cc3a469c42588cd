#include "promptemb/train.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <random>

#include "promptemb/eval.hpp"
#include "promptemb/io.hpp"
#include "promptemb/represent.hpp"

namespace promptemb {

void check_contrastive_batch(const ContrastiveBatch& batch) {
    const int n = batch.size();
    if (n < 2) throw Error(ErrorKind::data, "contrastive batch needs N >= 2");
    if (static_cast<int>(batch.positives.size()) != n ||
        static_cast<int>(batch.hard_negatives.size()) != n)
        throw Error(ErrorKind::data, "contrastive batch groups are not aligned");
    const std::size_t d = batch.anchors.front().size();
    if (d == 0) throw Error(ErrorKind::data, "contrastive batch has dimension 0");
    for (int i = 0; i < n; ++i)
        if (batch.anchors[static_cast<std::size_t>(i)].size() != d ||
            batch.positives[static_cast<std::size_t>(i)].size() != d ||
            batch.hard_negatives[static_cast<std::size_t>(i)].size() != d)
            throw DimensionMismatchError(batch.anchors[static_cast<std::size_t>(i)].size(), d);
}

namespace {

struct CosineTable {
    // cos(h_i, h_j+) and cos(h_i, h_j-), N x N each
    std::vector<double> pos, neg;
    int n = 0;
};

CosineTable cosine_table(const ContrastiveBatch& batch) {
    CosineTable t;
    t.n = batch.size();
    t.pos.resize(static_cast<std::size_t>(t.n) * t.n);
    t.neg.resize(static_cast<std::size_t>(t.n) * t.n);
    for (int i = 0; i < t.n; ++i)
        for (int j = 0; j < t.n; ++j) {
            t.pos[static_cast<std::size_t>(i) * t.n + j] =
                cosine(std::span<const double>(batch.anchors[static_cast<std::size_t>(i)]),
                       std::span<const double>(batch.positives[static_cast<std::size_t>(j)]));
            t.neg[static_cast<std::size_t>(i) * t.n + j] =
                cosine(std::span<const double>(batch.anchors[static_cast<std::size_t>(i)]),
                       std::span<const double>(batch.hard_negatives[static_cast<std::size_t>(j)]));
        }
    return t;
}

// d cos(a,b) / da accumulated into out with weight c.
void add_cosine_grad(std::span<const double> a, std::span<const double> b, double c,
                     std::vector<double>& out) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double norm_a = std::sqrt(na), norm_b = std::sqrt(nb);
    const double inv = 1.0 / (norm_a * norm_b);
    const double cos_ab = dot * inv;
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] += c * (b[i] * inv - cos_ab * a[i] / na);
}

}  // namespace

ContrastiveLossResult contrastive_loss(const ContrastiveBatch& batch, double tau) {
    if (!(tau > 0.0)) throw Error(ErrorKind::usage, "temperature must be positive");
    check_contrastive_batch(batch);
    const CosineTable t = cosine_table(batch);
    const int n = t.n;

    ContrastiveLossResult res;
    res.per_example.resize(static_cast<std::size_t>(n));
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double maxs = -1e300;
        int terms = 0;
        for (int j = 0; j < n; ++j) {
            maxs = std::max(maxs, t.pos[static_cast<std::size_t>(i) * n + j] / tau);
            maxs = std::max(maxs, t.neg[static_cast<std::size_t>(i) * n + j] / tau);
        }
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            denom += std::exp(t.pos[static_cast<std::size_t>(i) * n + j] / tau - maxs);
            denom += std::exp(t.neg[static_cast<std::size_t>(i) * n + j] / tau - maxs);
            terms += 2;
        }
        assert(terms == 2 * n);  // Eq. denominator has exactly 2N terms
        (void)terms;
        const double lse = std::log(denom) + maxs;
        const double li = lse - t.pos[static_cast<std::size_t>(i) * n + i] / tau;
        if (!std::isfinite(li)) throw NonFiniteLossError(static_cast<std::size_t>(i));
        res.per_example[static_cast<std::size_t>(i)] = li;
        total += li;
    }
    res.loss = total / n;
    return res;
}

ContrastiveLossResult contrastive_loss_with_grad(const ContrastiveBatch& batch, double tau,
                                                 ContrastiveGrads& grads) {
    ContrastiveLossResult res = contrastive_loss(batch, tau);
    const CosineTable t = cosine_table(batch);
    const int n = t.n;
    const std::size_t d = batch.anchors.front().size();

    grads.d_anchors.assign(static_cast<std::size_t>(n), std::vector<double>(d, 0.0));
    grads.d_positives.assign(static_cast<std::size_t>(n), std::vector<double>(d, 0.0));
    grads.d_negatives.assign(static_cast<std::size_t>(n), std::vector<double>(d, 0.0));

    for (int i = 0; i < n; ++i) {
        double maxs = -1e300;
        for (int j = 0; j < n; ++j) {
            maxs = std::max(maxs, t.pos[static_cast<std::size_t>(i) * n + j] / tau);
            maxs = std::max(maxs, t.neg[static_cast<std::size_t>(i) * n + j] / tau);
        }
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            denom += std::exp(t.pos[static_cast<std::size_t>(i) * n + j] / tau - maxs);
            denom += std::exp(t.neg[static_cast<std::size_t>(i) * n + j] / tau - maxs);
        }
        for (int j = 0; j < n; ++j) {
            const double p_pos =
                std::exp(t.pos[static_cast<std::size_t>(i) * n + j] / tau - maxs) / denom;
            const double p_neg =
                std::exp(t.neg[static_cast<std::size_t>(i) * n + j] / tau - maxs) / denom;
            // dL/ds with L = mean_i l_i
            const double c_pos = (p_pos - (i == j ? 1.0 : 0.0)) / (tau * n);
            const double c_neg = p_neg / (tau * n);
            add_cosine_grad(batch.anchors[static_cast<std::size_t>(i)],
                            batch.positives[static_cast<std::size_t>(j)], c_pos,
                            grads.d_anchors[static_cast<std::size_t>(i)]);
            add_cosine_grad(batch.positives[static_cast<std::size_t>(j)],
                            batch.anchors[static_cast<std::size_t>(i)], c_pos,
                            grads.d_positives[static_cast<std::size_t>(j)]);
            add_cosine_grad(batch.anchors[static_cast<std::size_t>(i)],
                            batch.hard_negatives[static_cast<std::size_t>(j)], c_neg,
                            grads.d_anchors[static_cast<std::size_t>(i)]);
            add_cosine_grad(batch.hard_negatives[static_cast<std::size_t>(j)],
                            batch.anchors[static_cast<std::size_t>(i)], c_neg,
                            grads.d_negatives[static_cast<std::size_t>(j)]);
        }
    }
    return res;
}

double loss_gradient_check(const ContrastiveBatch& batch, double tau) {
    ContrastiveGrads grads;
    contrastive_loss_with_grad(batch, tau, grads);
    const double h = 1e-6;
    double max_rel = 0.0;

    ContrastiveBatch probe = batch;
    auto probe_group = [&](std::vector<std::vector<double>>& group,
                           const std::vector<std::vector<double>>& analytic) {
        for (std::size_t i = 0; i < group.size(); ++i)
            for (std::size_t k = 0; k < group[i].size(); ++k) {
                const double saved = group[i][k];
                group[i][k] = saved + h;
                const double up = contrastive_loss(probe, tau).loss;
                group[i][k] = saved - h;
                const double down = contrastive_loss(probe, tau).loss;
                group[i][k] = saved;
                const double fd = (up - down) / (2.0 * h);
                const double g = analytic[i][k];
                const double rel = std::fabs(g - fd) / std::max(std::fabs(g) + std::fabs(fd), 1e-3);
                max_rel = std::max(max_rel, rel);
            }
    };
    probe_group(probe.anchors, grads.d_anchors);
    probe_group(probe.positives, grads.d_positives);
    probe_group(probe.hard_negatives, grads.d_negatives);
    return max_rel;
}

namespace {

struct AdamState {
    std::vector<std::vector<float>> m_a, v_a, m_b, v_b;
    std::int64_t t = 0;

    void init_like(const tfm::Adapters<float>& ad) {
        for (const auto& mat : ad.mats) {
            m_a.emplace_back(mat.a.size(), 0.0f);
            v_a.emplace_back(mat.a.size(), 0.0f);
            m_b.emplace_back(mat.b.size(), 0.0f);
            v_b.emplace_back(mat.b.size(), 0.0f);
        }
    }
};

void adam_update(std::vector<float>& params, const std::vector<float>& grad,
                 std::vector<float>& m, std::vector<float>& v, const TrainConfig& cfg,
                 double bias1, double bias2) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m[i] = static_cast<float>(cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g);
        v[i] = static_cast<float>(cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g);
        const double mhat = m[i] / bias1;
        const double vhat = v[i] / bias2;
        params[i] -= static_cast<float>(cfg.learning_rate * mhat /
                                        (std::sqrt(vhat) + cfg.adam_eps));
    }
}

}  // namespace

TrainOutcome train_cse(const NliTripletSet& triplets, std::shared_ptr<const ModelBackend> backend,
                       const TrainConfig& config) {
    if (triplets.size() < 2) throw Error(ErrorKind::data, "need at least 2 triplets");
    if (config.batch_size < 2) throw Error(ErrorKind::usage, "batch size must be >= 2");
    if (!(config.temperature > 0.0)) throw Error(ErrorKind::usage, "temperature must be positive");
    if (config.epochs < 1) throw Error(ErrorKind::usage, "epochs must be >= 1");

    TrainOutcome out;
    out.model = apply_adapters(std::move(backend), config.adapter, config.seed,
                               config.quantize_base);
    AdaptedModel& model = *out.model;
    const int dim = model.descriptor().hidden_dim;

    AdamState adam;
    adam.init_like(model.adapters());
    tfm::AdapterGrads<float> grads;
    grads.init_like(model.adapters());

    std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    std::mt19937 dropout_rng(static_cast<std::uint32_t>(config.seed ^ 0x7f4a7c15u));
    const RepresentationMethod method(RepresentationMethod::Kind::prompt_eol);

    int step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order(triplets.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
            const int n = static_cast<int>(end - begin);
            if (n < 2) break;  // Eq. 2 is ill-posed for N=1

            // rows: [0,N) anchors, [N,2N) positives, [2N,3N) negatives
            std::vector<TokenSequence> seqs;
            seqs.reserve(static_cast<std::size_t>(3) * n);
            auto push_prompt = [&](const std::string& text) {
                seqs.push_back(model.tokenize(render_prompteol(text)));
            };
            for (std::size_t i = begin; i < end; ++i) push_prompt(triplets[order[i]].anchor);
            for (std::size_t i = begin; i < end; ++i) push_prompt(triplets[order[i]].positive);
            for (std::size_t i = begin; i < end; ++i) push_prompt(triplets[order[i]].hard_negative);

            auto padded = left_pad(std::move(seqs), model.descriptor().pad_token_id);
            const auto fwd = model.train_forward(padded, dropout_rng);

            auto last_index = [&](int row) {
                return last_real_index(padded[static_cast<std::size_t>(row)]);
            };
            auto hidden_at = [&](int row) {
                const float* p = fwd.hidden.data() +
                                 (static_cast<std::size_t>(row) * fwd.batch.len +
                                  static_cast<std::size_t>(last_index(row))) *
                                     dim;
                return std::vector<double>(p, p + dim);
            };

            ContrastiveBatch cbatch;
            for (int i = 0; i < n; ++i) cbatch.anchors.push_back(hidden_at(i));
            for (int i = 0; i < n; ++i) cbatch.positives.push_back(hidden_at(n + i));
            for (int i = 0; i < n; ++i) cbatch.hard_negatives.push_back(hidden_at(2 * n + i));

            ContrastiveGrads cgrads;
            ContrastiveLossResult loss;
            try {
                loss = contrastive_loss_with_grad(cbatch, config.temperature, cgrads);
            } catch (const NonFiniteLossError&) {
                throw NonFiniteLossError(static_cast<std::size_t>(step));
            }
            if (!std::isfinite(loss.loss)) throw NonFiniteLossError(static_cast<std::size_t>(step));

            std::vector<float> d_hidden(fwd.hidden.size(), 0.0f);
            auto scatter = [&](int row, const std::vector<double>& g) {
                float* p = d_hidden.data() + (static_cast<std::size_t>(row) * fwd.batch.len +
                                              static_cast<std::size_t>(last_index(row))) *
                                                 dim;
                for (int k = 0; k < dim; ++k) p[k] = static_cast<float>(g[static_cast<std::size_t>(k)]);
            };
            for (int i = 0; i < n; ++i) scatter(i, cgrads.d_anchors[static_cast<std::size_t>(i)]);
            for (int i = 0; i < n; ++i)
                scatter(n + i, cgrads.d_positives[static_cast<std::size_t>(i)]);
            for (int i = 0; i < n; ++i)
                scatter(2 * n + i, cgrads.d_negatives[static_cast<std::size_t>(i)]);

            grads.zero();
            model.backward(fwd, d_hidden, grads);

            adam.t += 1;
            const double bias1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(adam.t));
            const double bias2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(adam.t));
            auto& mats = model.adapters().mats;
            for (std::size_t i = 0; i < mats.size(); ++i) {
                adam_update(mats[i].a, grads.da[i], adam.m_a[i], adam.v_a[i], config, bias1, bias2);
                adam_update(mats[i].b, grads.db[i], adam.m_b[i], adam.v_b[i], config, bias1, bias2);
            }

            out.log.push_back({step, loss.loss});
            ++step;
        }
    }
    return out;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{{"temperature", c.temperature},
                          {"learning_rate", c.learning_rate},
                          {"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"seed", c.seed},
                          {"adam_beta1", c.adam_beta1},
                          {"adam_beta2", c.adam_beta2},
                          {"adam_eps", c.adam_eps},
                          {"lora_rank", c.adapter.rank},
                          {"lora_alpha", c.adapter.alpha},
                          {"lora_dropout", c.adapter.dropout},
                          {"quantize_base", c.quantize_base}};
}

namespace {

const char* lin_name(int which) {
    switch (which) {
        case tfm::kWq: return "wq";
        case tfm::kWk: return "wk";
        case tfm::kWv: return "wv";
        case tfm::kWo: return "wo";
        case tfm::kFc1: return "fc1";
        default: return "fc2";
    }
}

std::vector<float> decode_floats(const nlohmann::json& j, const std::string& field,
                                 std::size_t expected) {
    if (!j.contains(field)) throw Error(ErrorKind::data, "checkpoint missing field '" + field + "'");
    std::vector<float> out;
    try {
        out = base64_to_floats(j.at(field).get<std::string>());
    } catch (const std::exception& e) {
        throw Error(ErrorKind::data,
                    "checkpoint field '" + field + "' is not a float blob: " + e.what());
    }
    if (out.size() != expected)
        throw Error(ErrorKind::data, "checkpoint field '" + field + "' has " +
                                         std::to_string(out.size()) + " values, expected " +
                                         std::to_string(expected));
    return out;
}

}  // namespace

void save_adapter_checkpoint(const std::string& path, const AdaptedModel& model,
                             const nlohmann::json& config_snapshot) {
    nlohmann::json j;
    j["format"] = "promptemb-adapter-v1";
    j["backend"] = model.descriptor().name;
    j["rank"] = model.config().rank;
    j["alpha"] = model.config().alpha;
    j["dropout"] = model.config().dropout;
    j["quantized_base"] = model.quantized_base();
    j["config"] = config_snapshot;
    nlohmann::json layers = nlohmann::json::array();
    const auto& mats = model.adapters().mats;
    for (std::size_t i = 0; i < mats.size(); ++i) {
        const auto& m = mats[i];
        layers.push_back({{"name", "layer" + std::to_string(i / tfm::kLinPerLayer) + "." +
                                       lin_name(static_cast<int>(i % tfm::kLinPerLayer))},
                          {"m", m.m},
                          {"n", m.n},
                          {"rank", m.rank},
                          {"a_b64", floats_to_base64(m.a)},
                          {"b_b64", floats_to_base64(m.b)}});
    }
    j["layers"] = std::move(layers);
    write_text_file(path, j.dump(2) + "\n");
}

std::shared_ptr<AdaptedModel> load_adapter_checkpoint(const std::string& path,
                                                      std::shared_ptr<const ModelBackend> base) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::data, "checkpoint '" + path + "' is not valid JSON: " + e.what());
    }
    for (const char* field : {"format", "rank", "alpha", "dropout", "quantized_base", "layers"})
        if (!j.contains(field))
            throw Error(ErrorKind::data, "checkpoint missing field '" + std::string(field) + "'");
    if (j.at("format") != "promptemb-adapter-v1")
        throw Error(ErrorKind::data, "checkpoint field 'format' has unknown value");

    LoraConfig cfg;
    try {
        cfg.rank = j.at("rank").get<int>();
        cfg.alpha = j.at("alpha").get<float>();
        cfg.dropout = j.at("dropout").get<float>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::data, std::string("checkpoint hyperparameter field malformed: ") +
                                         e.what());
    }
    auto model = apply_adapters(std::move(base), cfg, /*seed=*/0,
                                j.at("quantized_base").get<bool>());
    auto& mats = model->adapters().mats;
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != mats.size())
        throw Error(ErrorKind::data, "checkpoint field 'layers' has wrong length");
    for (std::size_t i = 0; i < mats.size(); ++i) {
        const auto& entry = layers[i];
        mats[i].a = decode_floats(entry, "a_b64", mats[i].a.size());
        mats[i].b = decode_floats(entry, "b_b64", mats[i].b.size());
    }
    return model;
}

}  // namespace promptemb
