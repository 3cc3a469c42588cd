#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "promptemb/errors.hpp"

namespace promptemb {

// ASCII whitespace trim; the only text normalization applied anywhere.
std::string trim_copy(const std::string& s);
bool contains_whitespace(const std::string& s);

/// One sentence embedding. `source_id` identifies sentence + method + demonstration
/// so vectors from different settings never get mixed up downstream.
struct EmbeddingVector {
    std::vector<float> values;
    std::string source_id;

    bool operator==(const EmbeddingVector&) const = default;
};

// Throws unless dimension > 0 and all components are finite.
void check_embedding(const EmbeddingVector& v);

struct ScoredSentencePair {
    std::string sentence_a;
    std::string sentence_b;
    double gold_score = 0.0;  // [0, 5]

    bool operator==(const ScoredSentencePair&) const = default;
};

using StsDataset = std::vector<ScoredSentencePair>;

struct NliTriplet {
    std::string anchor;
    std::string positive;
    std::string hard_negative;

    bool operator==(const NliTriplet&) const = default;
};

using NliTripletSet = std::vector<NliTriplet>;

enum class DemoSource { labeled_pairs, dictionary };

std::string to_string(DemoSource s);
DemoSource demo_source_from_string(const std::string& s);

/// An in-context example: a sentence and the single word that summarizes it.
class Demonstration {
public:
    // Trims the word, then rejects empty sentences and words containing
    // whitespace (hyphenated words are fine).
    Demonstration(std::string sentence, std::string word, DemoSource source);

    const std::string& sentence() const noexcept { return sentence_; }
    const std::string& word() const noexcept { return word_; }
    DemoSource source() const noexcept { return source_; }

    // Content hash, stable across runs; used for cache keys.
    std::string id() const;

    bool operator==(const Demonstration&) const = default;

private:
    std::string sentence_;
    std::string word_;
    DemoSource source_;
};

struct LabeledExample {
    std::string text;
    int label = 0;  // class id in [0, C)

    bool operator==(const LabeledExample&) const = default;
};

// Checks C >= 2, labels in [0, C), and (for a training split) that every
// class id below C appears at least once.
void validate_labeled_split(const std::vector<LabeledExample>& examples, int num_classes,
                            bool is_train_split);

struct RunReport {
    std::string method;
    std::optional<Demonstration> demonstration;
    std::map<std::string, double> per_task_scores;
    double average = 0.0;
    nlohmann::json config_snapshot;
    std::int64_t seed = 0;
};

// Computes `average` from the scores; the one sanctioned way to build a report.
RunReport make_run_report(std::string method, std::optional<Demonstration> demo,
                          std::map<std::string, double> per_task_scores,
                          nlohmann::json config_snapshot, std::int64_t seed);

struct RawScoredPair {
    std::string sentence_a;
    std::string sentence_b;
    double gold_score = 0.0;
};

/// Validates parsed rows into an STS dataset. Throws EmptySentenceError or
/// ScoreOutOfRangeError carrying the offending row index; never drops rows.
StsDataset validate_dataset(const std::vector<RawScoredPair>& rows);

// Same policy for NLI rows: all three fields must be non-empty after trim.
NliTripletSet validate_triplets(const std::vector<NliTriplet>& rows);

nlohmann::json demo_to_json(const Demonstration& d);
Demonstration demo_from_json(const nlohmann::json& j);

// FNV-1a, the stable content hash used for cache keys and source ids.
std::uint64_t fnv1a64(std::string_view data);
std::string to_hex(std::uint64_t value);

}  // namespace promptemb
