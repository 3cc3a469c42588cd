#include "promptemb/core.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>

namespace promptemb {

namespace {
bool is_space(unsigned char c) { return std::isspace(c) != 0; }
}  // namespace

std::string trim_copy(const std::string& s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && is_space(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && is_space(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
}

bool contains_whitespace(const std::string& s) {
    for (unsigned char c : s)
        if (is_space(c)) return true;
    return false;
}

void check_embedding(const EmbeddingVector& v) {
    if (v.values.empty()) throw Error(ErrorKind::data, "embedding has dimension 0");
    for (float x : v.values)
        if (!std::isfinite(x))
            throw Error(ErrorKind::data, "embedding contains a non-finite component (" +
                                             v.source_id + ")");
}

std::string to_string(DemoSource s) {
    return s == DemoSource::labeled_pairs ? "labeled_pairs" : "dictionary";
}

DemoSource demo_source_from_string(const std::string& s) {
    if (s == "labeled_pairs") return DemoSource::labeled_pairs;
    if (s == "dictionary") return DemoSource::dictionary;
    throw Error(ErrorKind::data, "unknown demonstration source '" + s + "'");
}

Demonstration::Demonstration(std::string sentence, std::string word, DemoSource source)
    : sentence_(std::move(sentence)), word_(trim_copy(word)), source_(source) {
    if (trim_copy(sentence_).empty())
        throw Error(ErrorKind::data, "demonstration sentence is empty");
    if (word_.empty()) throw Error(ErrorKind::data, "demonstration word is empty");
    if (contains_whitespace(word_))
        throw Error(ErrorKind::data, "demonstration word '" + word_ + "' contains whitespace");
}

std::string Demonstration::id() const {
    return to_hex(fnv1a64(sentence_ + '\x1f' + word_ + '\x1f' + to_string(source_)));
}

void validate_labeled_split(const std::vector<LabeledExample>& examples, int num_classes,
                            bool is_train_split) {
    if (num_classes < 2) throw Error(ErrorKind::data, "need at least 2 classes");
    std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        if (trim_copy(ex.text).empty()) throw EmptySentenceError(i);
        if (ex.label < 0 || ex.label >= num_classes)
            throw Error(ErrorKind::data, "label " + std::to_string(ex.label) +
                                             " out of [0," + std::to_string(num_classes) +
                                             ") at row " + std::to_string(i));
        seen[static_cast<std::size_t>(ex.label)] = true;
    }
    if (is_train_split)
        for (int c = 0; c < num_classes; ++c)
            if (!seen[static_cast<std::size_t>(c)])
                throw Error(ErrorKind::data,
                            "class " + std::to_string(c) + " has no training example");
}

RunReport make_run_report(std::string method, std::optional<Demonstration> demo,
                          std::map<std::string, double> per_task_scores,
                          nlohmann::json config_snapshot, std::int64_t seed) {
    RunReport r;
    r.method = std::move(method);
    r.demonstration = std::move(demo);
    r.per_task_scores = std::move(per_task_scores);
    r.config_snapshot = std::move(config_snapshot);
    r.seed = seed;
    if (!r.per_task_scores.empty()) {
        double sum = 0.0;
        for (const auto& [name, score] : r.per_task_scores) sum += score;
        r.average = sum / static_cast<double>(r.per_task_scores.size());
    }
    return r;
}

StsDataset validate_dataset(const std::vector<RawScoredPair>& rows) {
    StsDataset out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (trim_copy(row.sentence_a).empty() || trim_copy(row.sentence_b).empty())
            throw EmptySentenceError(i);
        if (!std::isfinite(row.gold_score) || row.gold_score < 0.0 || row.gold_score > 5.0)
            throw ScoreOutOfRangeError(i, row.gold_score);
        out.push_back({row.sentence_a, row.sentence_b, row.gold_score});
    }
    return out;
}

NliTripletSet validate_triplets(const std::vector<NliTriplet>& rows) {
    NliTripletSet out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& t = rows[i];
        if (trim_copy(t.anchor).empty() || trim_copy(t.positive).empty() ||
            trim_copy(t.hard_negative).empty())
            throw EmptySentenceError(i);
        out.push_back(t);
    }
    return out;
}

nlohmann::json demo_to_json(const Demonstration& d) {
    return nlohmann::json{
        {"sentence", d.sentence()}, {"word", d.word()}, {"source", to_string(d.source())}};
}

Demonstration demo_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("sentence") || !j.contains("word") || !j.contains("source"))
        throw Error(ErrorKind::data, "demonstration JSON needs sentence/word/source fields");
    return Demonstration(j.at("sentence").get<std::string>(), j.at("word").get<std::string>(),
                         demo_source_from_string(j.at("source").get<std::string>()));
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string to_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return std::string(buf);
}

}  // namespace promptemb
