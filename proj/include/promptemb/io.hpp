#pragma once

#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "promptemb/core.hpp"

namespace promptemb {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// One sentence per line; blank lines are skipped.
std::vector<std::string> read_sentence_lines(const std::string& path);

// --- STS: `score<TAB>sentence_a<TAB>sentence_b`, UTF-8, one pair per line ---
std::vector<RawScoredPair> parse_sts_tsv(std::istream& in);
StsDataset read_sts_file(const std::string& path);
std::string sts_to_tsv(const StsDataset& data);

// --- transfer: `label<TAB>text` ---
std::vector<LabeledExample> parse_labeled_tsv(std::istream& in);
std::string labeled_to_tsv(const std::vector<LabeledExample>& examples);
// Reads and validates; num_classes = max label + 1.
std::pair<std::vector<LabeledExample>, int> read_labeled_file(const std::string& path,
                                                              bool is_train_split);

// --- dictionary: `word<TAB>definition` ---
std::vector<std::pair<std::string, std::string>> parse_dictionary_tsv(std::istream& in);
std::vector<std::pair<std::string, std::string>> read_dictionary_file(const std::string& path);

// --- NLI: CSV with header `sent0,sent1,hard_neg` (RFC-4180 quoting) ---
NliTripletSet parse_nli_csv(std::istream& in);
NliTripletSet read_nli_file(const std::string& path);
std::string nli_to_csv(const NliTripletSet& triplets);

// --- binary embedding file: magic "PEB1", u32 dim, u32 count, f32 LE ---
void write_embedding_file(const std::string& path, const std::vector<EmbeddingVector>& vectors);
std::vector<EmbeddingVector> read_embedding_file(const std::string& path);

std::string floats_to_base64(const std::vector<float>& values);
std::vector<float> base64_to_floats(const std::string& encoded);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace promptemb
