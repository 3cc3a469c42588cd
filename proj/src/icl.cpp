#include "promptemb/icl.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace promptemb {

bool DemonstrationSet::add(Demonstration demo) {
    for (const auto& existing : demos_)
        if (existing.sentence() == demo.sentence() && existing.word() == demo.word())
            return false;
    demos_.push_back(std::move(demo));
    return true;
}

std::map<std::string, int> DemonstrationSet::provenance_counts() const {
    std::map<std::string, int> counts{{"labeled_pairs", 0}, {"dictionary", 0}};
    for (const auto& d : demos_) counts[to_string(d.source())] += 1;
    return counts;
}

nlohmann::json DemonstrationSet::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : demos_) arr.push_back(demo_to_json(d));
    return arr;
}

DemonstrationSet DemonstrationSet::from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw Error(ErrorKind::data, "demonstration set JSON must be an array");
    DemonstrationSet set;
    for (std::size_t i = 0; i < j.size(); ++i) {
        try {
            set.add(demo_from_json(j[i]));
        } catch (const Error& e) {
            throw Error(e.kind(), "demo " + std::to_string(i) + ": " + e.what());
        }
    }
    return set;
}

std::vector<Demonstration> build_from_dictionary(
    const std::vector<std::pair<std::string, std::string>>& entries) {
    std::vector<Demonstration> out;
    out.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& [word, definition] = entries[i];
        const std::string trimmed = trim_copy(word);
        if (trimmed.empty()) throw MalformedEntryError(i, "empty headword");
        if (contains_whitespace(trimmed))
            throw MalformedEntryError(i, "multiword headword '" + trimmed + "'");
        if (trim_copy(definition).empty()) throw MalformedEntryError(i, "empty definition");
        out.emplace_back(definition, trimmed, DemoSource::dictionary);
    }
    return out;
}

namespace {

// Generated text up to the first closing quote or whitespace.
std::string parse_label_word(const std::string& generated) {
    std::string word;
    for (unsigned char c : generated) {
        if (c == '"' || std::isspace(c)) break;
        word.push_back(static_cast<char>(c));
    }
    return word;
}

// Byte-level labelers can emit arbitrary bytes; demo sets are UTF-8 JSON.
bool json_serializable(const std::string& s) {
    try {
        nlohmann::json(s).dump();
        return true;
    } catch (const nlohmann::json::exception&) {
        return false;
    }
}

}  // namespace

LabelingOutcome label_sentences(const std::vector<std::string>& sentences,
                                const ModelBackend& labeler) {
    if (!labeler.descriptor().supports_generation)
        throw GenerationUnsupportedError(labeler.descriptor().name);
    LabelingOutcome out;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        std::string generated;
        try {
            generated = labeler.generate_greedy(render_prompteol(sentences[i]), 8);
        } catch (const Error& e) {
            out.skipped.emplace_back(i, std::string("generation failed: ") + e.what());
            continue;
        }
        const std::string word = parse_label_word(generated);
        if (word.empty()) {
            out.skipped.emplace_back(i, "labeler produced no word");
            continue;
        }
        if (!json_serializable(word)) {
            out.skipped.emplace_back(i, "labeler produced undecodable bytes");
            continue;
        }
        out.demos.emplace_back(sentences[i], word, DemoSource::labeled_pairs);
    }
    return out;
}

namespace {

double dev_spearman(const RepresentationMethod& method, const StsDataset& dev,
                    const ModelBackend& backend, int batch_size, EmbeddingCache* cache) {
    std::vector<std::string> a, b;
    std::vector<double> gold;
    a.reserve(dev.size());
    b.reserve(dev.size());
    for (const auto& pair : dev) {
        a.push_back(pair.sentence_a);
        b.push_back(pair.sentence_b);
        gold.push_back(pair.gold_score);
    }
    const auto ea = embed_batch_cached(cache, method, a, backend, batch_size);
    const auto eb = embed_batch_cached(cache, method, b, backend, batch_size);
    std::vector<double> sims(dev.size());
    for (std::size_t i = 0; i < dev.size(); ++i) sims[i] = cosine(ea[i], eb[i]);
    return spearman(sims, gold);
}

}  // namespace

SearchResult search_demonstration(const DemonstrationSet& demo_set, const StsDataset& dev_set,
                                  const ModelBackend& backend, int batch_size,
                                  EmbeddingCache* cache) {
    if (demo_set.empty()) throw Error(ErrorKind::data, "demonstration set is empty");
    if (dev_set.size() < 2) throw Error(ErrorKind::data, "dev set needs at least 2 pairs");

    // baseline first: it anchors the histogram and the improvement flag
    const RepresentationMethod baseline_method(RepresentationMethod::Kind::prompt_eol);
    const double baseline = dev_spearman(baseline_method, dev_set, backend, batch_size, cache);

    std::vector<std::pair<int, double>> all_scores;
    all_scores.reserve(demo_set.size());
    int best_index = 0;
    double best_score = -2.0;
    for (std::size_t i = 0; i < demo_set.size(); ++i) {
        const RepresentationMethod method(RepresentationMethod::Kind::prompt_eol,
                                          demo_set.demos()[i]);
        double score;
        try {
            score = dev_spearman(method, dev_set, backend, batch_size, cache);
        } catch (const Error& e) {
            throw Error(e.kind(), "demo " + std::to_string(i) + ": " + e.what());
        }
        all_scores.emplace_back(static_cast<int>(i), score);
        if (score > best_score) {  // strict: first index attaining the max wins
            best_score = score;
            best_index = static_cast<int>(i);
        }
    }

    SearchResult result{demo_set.demos()[static_cast<std::size_t>(best_index)], best_index,
                        best_score, std::move(all_scores), baseline};
    return result;
}

HistogramTable score_histogram(const SearchResult& result, int bins) {
    if (bins < 1) throw Error(ErrorKind::usage, "histogram needs at least 1 bin");
    HistogramTable h;
    h.baseline_score = result.baseline_score;
    h.no_improving_demonstration = result.no_improving_demonstration();

    double lo = result.all_scores.front().second, hi = lo;
    for (const auto& [idx, s] : result.all_scores) {
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    const double width = (hi - lo) / bins;
    for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + width * i;
    h.counts.assign(static_cast<std::size_t>(bins), 0);

    int above = 0;
    for (const auto& [idx, s] : result.all_scores) {
        int bin = width > 0.0 ? static_cast<int>((s - lo) / width) : 0;
        bin = std::clamp(bin, 0, bins - 1);
        h.counts[static_cast<std::size_t>(bin)] += 1;
        if (s > result.baseline_score) ++above;
    }
    h.fraction_above_baseline =
        static_cast<double>(above) / static_cast<double>(result.all_scores.size());
    return h;
}

nlohmann::json histogram_to_json(const HistogramTable& h) {
    return nlohmann::json{{"edges", h.edges},
                          {"counts", h.counts},
                          {"baseline_score", h.baseline_score},
                          {"fraction_above_baseline", h.fraction_above_baseline},
                          {"no_improving_demonstration", h.no_improving_demonstration}};
}

}  // namespace promptemb
