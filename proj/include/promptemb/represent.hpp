#pragma once

#include <optional>
#include <string>
#include <vector>

#include "promptemb/backend.hpp"
#include "promptemb/core.hpp"

namespace promptemb {

/// How a sentence becomes a vector. A demonstration is only meaningful for
/// prompt_eol (the in-context setting); the constructor enforces that.
class RepresentationMethod {
public:
    enum class Kind { avg_tokens, prompt_last, prompt_eol };

    explicit RepresentationMethod(Kind kind, std::optional<Demonstration> demo = std::nullopt);

    Kind kind() const noexcept { return kind_; }
    const std::optional<Demonstration>& demonstration() const noexcept { return demo_; }

    // "avg_tokens" | "prompt_last" | "prompt_eol" | "prompt_eol+icl:<demo id>"
    std::string id() const;

    static RepresentationMethod::Kind kind_from_string(const std::string& s);
    static std::string kind_to_string(Kind k);

private:
    Kind kind_;
    std::optional<Demonstration> demo_;
};

// Pure string substitution; the input is inserted verbatim, quotes included.
std::string render_plain(const std::string& text);
std::string render_prompteol(const std::string& text);
std::string render_prompteol_icl(const std::string& text, const Demonstration& demo);

// Masked-LM variant for the period-ablation experiment. Only meaningful with
// an encoder-style backend, which this toolkit does not ship; the renderer is
// here so such a backend can be driven without code changes.
std::string render_masked(const std::string& text, bool with_period);

// Stable id recorded on every vector: method (incl. demo) + sentence hash.
std::string embedding_source_id(const RepresentationMethod& method, const std::string& text);

EmbeddingVector embed(const RepresentationMethod& method, const std::string& text,
                      const ModelBackend& backend);

// Order-preserving; results do not depend on batch_size.
std::vector<EmbeddingVector> embed_batch(const RepresentationMethod& method,
                                         const std::vector<std::string>& texts,
                                         const ModelBackend& backend, int batch_size);

}  // namespace promptemb
