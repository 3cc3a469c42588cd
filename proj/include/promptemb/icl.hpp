#pragma once

#include <map>
#include <string>
#include <vector>

#include "promptemb/cache.hpp"
#include "promptemb/core.hpp"
#include "promptemb/eval.hpp"

namespace promptemb {

/// Ordered demonstration pool. Order is ingestion order and stays stable:
/// search tie-breaking depends on it.
class DemonstrationSet {
public:
    DemonstrationSet() = default;

    // Appends unless the exact (sentence, word) pair is already present;
    // returns whether the demo was added.
    bool add(Demonstration demo);

    const std::vector<Demonstration>& demos() const noexcept { return demos_; }
    std::size_t size() const noexcept { return demos_.size(); }
    bool empty() const noexcept { return demos_.empty(); }
    std::map<std::string, int> provenance_counts() const;

    nlohmann::json to_json() const;
    static DemonstrationSet from_json(const nlohmann::json& j);

private:
    std::vector<Demonstration> demos_;
};

/// Dictionary entries (word, definition) become demonstrations with the
/// definition as the sentence. Multiword headwords are rejected.
std::vector<Demonstration> build_from_dictionary(
    const std::vector<std::pair<std::string, std::string>>& entries);

struct LabelingOutcome {
    std::vector<Demonstration> demos;
    std::vector<std::pair<std::size_t, std::string>> skipped;  // (sentence index, reason)
};

/// Prompts the labeler with the PromptEOL template and keeps the generated
/// text up to the first closing quote or whitespace as the word. Sentences
/// yielding an empty word (or a failing generation call) are skipped and
/// reported in the outcome.
LabelingOutcome label_sentences(const std::vector<std::string>& sentences,
                                const ModelBackend& labeler);

struct SearchResult {
    Demonstration best_demo;
    int best_index = 0;
    double best_score = 0.0;
    std::vector<std::pair<int, double>> all_scores;  // (demo index, dev Spearman)
    double baseline_score = 0.0;                     // no-demonstration PromptEOL

    bool no_improving_demonstration() const { return best_score < baseline_score; }
};

/// Evaluates every demonstration (and the no-demo baseline, first) on the dev
/// set; returns the argmax with smallest-index tie-breaking. Embeddings are
/// recomputed per demonstration since each one changes every prompt.
SearchResult search_demonstration(const DemonstrationSet& demo_set, const StsDataset& dev_set,
                                  const ModelBackend& backend, int batch_size,
                                  EmbeddingCache* cache = nullptr);

struct HistogramTable {
    std::vector<double> edges;  // bins + 1 boundaries
    std::vector<int> counts;    // per bin; sums to the demo count
    double baseline_score = 0.0;
    double fraction_above_baseline = 0.0;
    bool no_improving_demonstration = false;
};

HistogramTable score_histogram(const SearchResult& result, int bins);

nlohmann::json histogram_to_json(const HistogramTable& h);

}  // namespace promptemb
