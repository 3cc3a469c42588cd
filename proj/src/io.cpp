#include "promptemb/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace promptemb {

namespace {

std::ifstream open_for_read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::data, "cannot open file '" + path + "'");
    return in;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t begin = 0;
    while (true) {
        const std::size_t tab = line.find('\t', begin);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(begin));
            break;
        }
        fields.push_back(line.substr(begin, tab - begin));
        begin = tab + 1;
    }
    return fields;
}

double parse_double_field(const std::string& s, std::size_t row, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorKind::data, "row " + std::to_string(row) + ": " + what + " '" + s +
                                         "' is not a number");
    }
}

std::string chomp(std::string line) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    return line;
}

}  // namespace

std::string read_text_file(const std::string& path) {
    auto in = open_for_read(path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::data, "cannot write file '" + path + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorKind::data, "short write to '" + path + "'");
}

std::vector<std::string> read_sentence_lines(const std::string& path) {
    auto in = open_for_read(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        line = chomp(line);
        if (!trim_copy(line).empty()) lines.push_back(line);
    }
    return lines;
}

std::vector<RawScoredPair> parse_sts_tsv(std::istream& in) {
    std::vector<RawScoredPair> rows;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        line = chomp(line);
        if (line.empty()) continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 3)
            throw Error(ErrorKind::data, "row " + std::to_string(row) + ": expected 3 tab fields, got " +
                                             std::to_string(fields.size()));
        rows.push_back({fields[1], fields[2], parse_double_field(fields[0], row, "score")});
        ++row;
    }
    return rows;
}

StsDataset read_sts_file(const std::string& path) {
    auto in = open_for_read(path);
    try {
        return validate_dataset(parse_sts_tsv(in));
    } catch (const Error& e) {
        throw Error(e.kind(), path + ": " + e.what());
    }
}

std::string sts_to_tsv(const StsDataset& data) {
    std::string out;
    for (const auto& p : data)
        out += format_double(p.gold_score) + "\t" + p.sentence_a + "\t" + p.sentence_b + "\n";
    return out;
}

std::vector<LabeledExample> parse_labeled_tsv(std::istream& in) {
    std::vector<LabeledExample> rows;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        line = chomp(line);
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error(ErrorKind::data, "row " + std::to_string(row) + ": expected `label<TAB>text`");
        const std::string label_str = line.substr(0, tab);
        int label = 0;
        const auto res =
            std::from_chars(label_str.data(), label_str.data() + label_str.size(), label);
        if (res.ec != std::errc{} || res.ptr != label_str.data() + label_str.size())
            throw Error(ErrorKind::data, "row " + std::to_string(row) + ": label '" + label_str +
                                             "' is not an integer");
        rows.push_back({line.substr(tab + 1), label});
        ++row;
    }
    return rows;
}

std::string labeled_to_tsv(const std::vector<LabeledExample>& examples) {
    std::string out;
    for (const auto& ex : examples) out += std::to_string(ex.label) + "\t" + ex.text + "\n";
    return out;
}

std::pair<std::vector<LabeledExample>, int> read_labeled_file(const std::string& path,
                                                              bool is_train_split) {
    auto in = open_for_read(path);
    try {
        auto rows = parse_labeled_tsv(in);
        if (rows.empty()) throw Error(ErrorKind::data, "no examples");
        int num_classes = 0;
        for (const auto& ex : rows) num_classes = std::max(num_classes, ex.label + 1);
        validate_labeled_split(rows, num_classes, is_train_split);
        return {std::move(rows), num_classes};
    } catch (const Error& e) {
        throw Error(e.kind(), path + ": " + e.what());
    }
}

std::vector<std::pair<std::string, std::string>> parse_dictionary_tsv(std::istream& in) {
    std::vector<std::pair<std::string, std::string>> rows;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        line = chomp(line);
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error(ErrorKind::data,
                        "row " + std::to_string(row) + ": expected `word<TAB>definition`");
        rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
        ++row;
    }
    return rows;
}

std::vector<std::pair<std::string, std::string>> read_dictionary_file(const std::string& path) {
    auto in = open_for_read(path);
    try {
        return parse_dictionary_tsv(in);
    } catch (const Error& e) {
        throw Error(e.kind(), path + ": " + e.what());
    }
}

namespace {

// RFC-4180 row reader; handles quoted fields, doubled quotes, and embedded
// newlines. Returns false at end of input.
bool read_csv_row(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    int c;
    while ((c = in.get()) != EOF) {
        any = true;
        const char ch = static_cast<char>(c);
        if (in_quotes) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"') {
            in_quotes = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (ch == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            fields.push_back(std::move(field));
            return true;
        } else {
            field.push_back(ch);
        }
    }
    if (!any) return false;
    if (!field.empty() && field.back() == '\r') field.pop_back();
    fields.push_back(std::move(field));
    return true;
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

}  // namespace

NliTripletSet parse_nli_csv(std::istream& in) {
    std::vector<std::string> fields;
    if (!read_csv_row(in, fields))
        throw Error(ErrorKind::data, "empty NLI file (expected header sent0,sent1,hard_neg)");
    if (fields != std::vector<std::string>{"sent0", "sent1", "hard_neg"})
        throw Error(ErrorKind::data, "NLI header must be exactly `sent0,sent1,hard_neg`");
    std::vector<NliTriplet> rows;
    std::size_t row = 1;
    while (read_csv_row(in, fields)) {
        if (fields.size() == 1 && fields[0].empty()) continue;  // trailing blank line
        if (fields.size() != 3)
            throw Error(ErrorKind::data, "row " + std::to_string(row) + ": expected 3 CSV fields, got " +
                                             std::to_string(fields.size()));
        rows.push_back({fields[0], fields[1], fields[2]});
        ++row;
    }
    return validate_triplets(rows);
}

NliTripletSet read_nli_file(const std::string& path) {
    auto in = open_for_read(path);
    try {
        return parse_nli_csv(in);
    } catch (const Error& e) {
        throw Error(e.kind(), path + ": " + e.what());
    }
}

std::string nli_to_csv(const NliTripletSet& triplets) {
    std::string out = "sent0,sent1,hard_neg\n";
    for (const auto& t : triplets)
        out += csv_quote(t.anchor) + "," + csv_quote(t.positive) + "," +
               csv_quote(t.hard_negative) + "\n";
    return out;
}

namespace {

constexpr char kEmbMagic[4] = {'P', 'E', 'B', '1'};

void append_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32_le(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

}  // namespace

void write_embedding_file(const std::string& path, const std::vector<EmbeddingVector>& vectors) {
    if (vectors.empty()) throw Error(ErrorKind::data, "no embeddings to write");
    const std::size_t dim = vectors.front().values.size();
    std::string blob;
    blob.reserve(12 + 4 * dim * vectors.size());
    blob.append(kEmbMagic, 4);
    append_u32_le(blob, static_cast<std::uint32_t>(dim));
    append_u32_le(blob, static_cast<std::uint32_t>(vectors.size()));
    for (const auto& v : vectors) {
        if (v.values.size() != dim)
            throw DimensionMismatchError(v.values.size(), dim);
        for (float f : v.values) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            append_u32_le(blob, bits);
        }
    }
    write_text_file(path, blob);
}

std::vector<EmbeddingVector> read_embedding_file(const std::string& path) {
    const std::string blob = read_text_file(path);
    if (blob.size() < 12 || std::memcmp(blob.data(), kEmbMagic, 4) != 0)
        throw Error(ErrorKind::data, "'" + path + "' is not an embedding file");
    const std::uint32_t dim = read_u32_le(blob.data() + 4);
    const std::uint32_t count = read_u32_le(blob.data() + 8);
    if (blob.size() != 12ull + 4ull * dim * count)
        throw Error(ErrorKind::data, "'" + path + "' has a truncated payload");
    std::vector<EmbeddingVector> out(count);
    for (std::uint32_t r = 0; r < count; ++r) {
        out[r].values.resize(dim);
        for (std::uint32_t i = 0; i < dim; ++i) {
            const std::uint32_t bits = read_u32_le(blob.data() + 12 + 4ull * (r * dim + i));
            float f;
            std::memcpy(&f, &bits, 4);
            out[r].values[i] = f;
        }
    }
    return out;
}

namespace {
constexpr char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}
}  // namespace

std::string floats_to_base64(const std::vector<float>& values) {
    std::string bytes;
    bytes.reserve(values.size() * 4);
    for (float f : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t chunk = 0;
        int have = 0;
        for (int k = 0; k < 3; ++k)
            if (i + k < bytes.size()) {
                chunk |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + k]))
                         << (16 - 8 * k);
                ++have;
            }
        out.push_back(kB64Alphabet[(chunk >> 18) & 0x3f]);
        out.push_back(kB64Alphabet[(chunk >> 12) & 0x3f]);
        out.push_back(have >= 2 ? kB64Alphabet[(chunk >> 6) & 0x3f] : '=');
        out.push_back(have >= 3 ? kB64Alphabet[chunk & 0x3f] : '=');
    }
    return out;
}

std::vector<float> base64_to_floats(const std::string& encoded) {
    if (encoded.size() % 4 != 0) throw Error(ErrorKind::data, "base64 length not a multiple of 4");
    std::string bytes;
    bytes.reserve(encoded.size() / 4 * 3);
    for (std::size_t i = 0; i < encoded.size(); i += 4) {
        std::uint32_t chunk = 0;
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = encoded[i + k];
            if (c == '=') {
                ++pad;
                chunk <<= 6;
                continue;
            }
            const int v = b64_value(c);
            if (v < 0 || pad > 0) throw Error(ErrorKind::data, "invalid base64 character");
            chunk = (chunk << 6) | static_cast<std::uint32_t>(v);
        }
        bytes.push_back(static_cast<char>((chunk >> 16) & 0xff));
        if (pad < 2) bytes.push_back(static_cast<char>((chunk >> 8) & 0xff));
        if (pad < 1) bytes.push_back(static_cast<char>(chunk & 0xff));
    }
    if (bytes.size() % 4 != 0)
        throw Error(ErrorKind::data, "decoded byte count is not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + k]))
                    << (8 * k);
        std::memcpy(&out[i], &bits, 4);
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    // shortest representation that round-trips
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::stod(buf) == v) return buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace promptemb
