#include "promptemb/config.hpp"

#include <cmath>
#include <filesystem>

#include "promptemb/http_backend.hpp"
#include "promptemb/io.hpp"
#include "promptemb/lora.hpp"
#include "promptemb/reference_model.hpp"

namespace promptemb {

PipelineConfig PipelineConfig::defaults() {
    PipelineConfig c;
    c.data = nlohmann::json{
        {"seed", 0},
        {"batch_size", 8},
        {"method", "prompt_eol"},
        {"backend", {{"kind", "reference"}, {"seed", 0}}},
        {"histogram_bins", 10},
    };
    return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    PipelineConfig c = defaults();
    if (!std::filesystem::exists(path))
        throw Error(ErrorKind::usage, "config file '" + path + "' does not exist");
    nlohmann::json file;
    try {
        file = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::usage, "config '" + path + "' is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw Error(ErrorKind::usage, "config must be a JSON object");
    c.merge(file);
    return c;
}

void PipelineConfig::merge(const nlohmann::json& overrides) {
    data.merge_patch(overrides);
}

std::string PipelineConfig::require_str(const std::string& key) const {
    if (!data.contains(key) || data.at(key).is_null())
        throw Error(ErrorKind::usage, "config key '" + key + "' is required");
    if (!data.at(key).is_string())
        throw Error(ErrorKind::usage, "config key '" + key + "' must be a string");
    return data.at(key).get<std::string>();
}

std::string PipelineConfig::str_or(const std::string& key, const std::string& fallback) const {
    if (!data.contains(key) || data.at(key).is_null()) return fallback;
    return data.at(key).get<std::string>();
}

std::int64_t PipelineConfig::int_or(const std::string& key, std::int64_t fallback) const {
    if (!data.contains(key) || data.at(key).is_null()) return fallback;
    return data.at(key).get<std::int64_t>();
}

void PipelineConfig::require_file(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw Error(ErrorKind::data, "referenced path '" + path + "' does not exist");
}

namespace {

std::shared_ptr<ModelBackend> make_base_backend(const nlohmann::json& spec) {
    const std::string kind = spec.value("kind", "reference");
    if (kind == "reference")
        return make_reference_model(spec.value("seed", std::uint64_t{0}));
    if (kind == "http-labeler") {
        if (!spec.contains("url"))
            throw Error(ErrorKind::usage, "http-labeler backend needs a 'url'");
        return std::make_shared<HttpLabelerBackend>(spec.at("url").get<std::string>());
    }
    throw Error(ErrorKind::usage, "unknown backend kind '" + kind + "'");
}

}  // namespace

std::shared_ptr<ModelBackend> make_backend_from_config(const nlohmann::json& config) {
    const nlohmann::json spec =
        config.contains("backend") ? config.at("backend") : nlohmann::json{{"kind", "reference"}};
    auto base = make_base_backend(spec);
    if (config.contains("adapter_checkpoint") && !config.at("adapter_checkpoint").is_null()) {
        const std::string path = config.at("adapter_checkpoint").get<std::string>();
        PipelineConfig::require_file(path);
        return load_adapter_checkpoint(path, std::move(base));
    }
    return base;
}

RepresentationMethod method_from_config(const nlohmann::json& config) {
    const auto kind =
        RepresentationMethod::kind_from_string(config.value("method", "prompt_eol"));
    std::optional<Demonstration> demo;
    if (config.contains("demo") && !config.at("demo").is_null())
        demo = demo_from_json(config.at("demo"));
    return RepresentationMethod(kind, std::move(demo));
}

TrainConfig train_config_from_json(const nlohmann::json& config) {
    TrainConfig t;
    const nlohmann::json section =
        config.contains("train") ? config.at("train") : nlohmann::json::object();
    t.temperature = section.value("temperature", t.temperature);
    t.learning_rate = section.value("learning_rate", t.learning_rate);
    t.epochs = section.value("epochs", t.epochs);
    t.batch_size = section.value("batch_size", t.batch_size);
    t.seed = config.value("seed", std::uint64_t{0});
    t.adam_beta1 = section.value("adam_beta1", t.adam_beta1);
    t.adam_beta2 = section.value("adam_beta2", t.adam_beta2);
    t.adam_eps = section.value("adam_eps", t.adam_eps);
    t.adapter.rank = section.value("lora_rank", t.adapter.rank);
    t.adapter.alpha = section.value("lora_alpha", t.adapter.alpha);
    t.adapter.dropout = section.value("lora_dropout", t.adapter.dropout);
    t.quantize_base = section.value("quantize_base", t.quantize_base);
    return t;
}

namespace {
double round_x100(double raw) { return std::round(raw * 10000.0) / 100.0; }
}  // namespace

nlohmann::json run_report_to_json(const RunReport& report) {
    // recompute the average at write time; a mismatch means a stale report
    if (!report.per_task_scores.empty()) {
        double sum = 0.0;
        for (const auto& [name, score] : report.per_task_scores) sum += score;
        const double recomputed = sum / static_cast<double>(report.per_task_scores.size());
        if (recomputed != report.average)
            throw Error(ErrorKind::data, "report average does not match its per-task scores");
    }
    nlohmann::json j;
    j["method"] = report.method;
    j["demonstration"] =
        report.demonstration.has_value() ? demo_to_json(*report.demonstration) : nlohmann::json();
    j["per_task_scores"] = report.per_task_scores;
    nlohmann::json x100 = nlohmann::json::object();
    for (const auto& [name, score] : report.per_task_scores) x100[name] = round_x100(score);
    j["per_task_scores_x100"] = std::move(x100);
    j["average"] = report.average;
    j["average_x100"] = round_x100(report.average);
    j["config_snapshot"] = report.config_snapshot;
    j["seed"] = report.seed;
    j["protocol"] = {
        {"sts_aggregation", "concatenation per dataset (no sub-track weighting)"},
        {"transfer_protocol",
         "single train/test split, l2 grid {1e-4,1e-2,1} on a 10% held-out slice; "
         "not SentEval cross-validation"},
    };
    return j;
}

RunReport run_report_from_json(const nlohmann::json& j) {
    RunReport r;
    r.method = j.at("method").get<std::string>();
    if (j.contains("demonstration") && !j.at("demonstration").is_null())
        r.demonstration = demo_from_json(j.at("demonstration"));
    r.per_task_scores = j.at("per_task_scores").get<std::map<std::string, double>>();
    r.average = j.at("average").get<double>();
    r.config_snapshot = j.value("config_snapshot", nlohmann::json());
    r.seed = j.at("seed").get<std::int64_t>();
    return r;
}

}  // namespace promptemb
