#pragma once

#include <memory>
#include <string>

#include "json.hpp"
#include "promptemb/backend.hpp"
#include "promptemb/core.hpp"
#include "promptemb/represent.hpp"
#include "promptemb/train.hpp"

namespace promptemb {

/// Effective pipeline configuration: defaults, overlaid with a JSON config
/// file, overlaid with command-line flags (flags win). The resolved JSON is
/// embedded verbatim in every report so runs are reproducible from the
/// report alone.
struct PipelineConfig {
    nlohmann::json data;

    static PipelineConfig defaults();
    static PipelineConfig load(const std::string& path);

    // Deep-merges `overrides` on top of the current values.
    void merge(const nlohmann::json& overrides);

    std::string require_str(const std::string& key) const;
    std::string str_or(const std::string& key, const std::string& fallback) const;
    std::int64_t int_or(const std::string& key, std::int64_t fallback) const;

    // Throws a data error if `path` does not exist; used to pin the
    // "referenced paths exist at command start" contract.
    static void require_file(const std::string& path);
};

// backend: {"kind":"reference","seed":0} or {"kind":"http-labeler","url":...};
// an "adapter_checkpoint" key wraps the base model with trained adapters.
std::shared_ptr<ModelBackend> make_backend_from_config(const nlohmann::json& config);

RepresentationMethod method_from_config(const nlohmann::json& config);

TrainConfig train_config_from_json(const nlohmann::json& config);

// Raw scores plus the x100/2-decimal presentation, protocol notes, and the
// config snapshot; recomputes the average and refuses to write a stale one.
nlohmann::json run_report_to_json(const RunReport& report);
RunReport run_report_from_json(const nlohmann::json& j);

}  // namespace promptemb
