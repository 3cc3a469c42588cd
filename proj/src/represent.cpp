#include "promptemb/represent.hpp"

#include <algorithm>

namespace promptemb {

RepresentationMethod::RepresentationMethod(Kind kind, std::optional<Demonstration> demo)
    : kind_(kind), demo_(std::move(demo)) {
    if (demo_.has_value() && kind_ != Kind::prompt_eol)
        throw Error(ErrorKind::usage, "a demonstration is only valid with prompt_eol");
}

std::string RepresentationMethod::id() const {
    if (demo_.has_value()) return "prompt_eol+icl:" + demo_->id();
    return kind_to_string(kind_);
}

RepresentationMethod::Kind RepresentationMethod::kind_from_string(const std::string& s) {
    if (s == "avg_tokens") return Kind::avg_tokens;
    if (s == "prompt_last") return Kind::prompt_last;
    if (s == "prompt_eol") return Kind::prompt_eol;
    throw Error(ErrorKind::usage, "unknown representation method '" + s + "'");
}

std::string RepresentationMethod::kind_to_string(Kind k) {
    switch (k) {
        case Kind::avg_tokens: return "avg_tokens";
        case Kind::prompt_last: return "prompt_last";
        case Kind::prompt_eol: return "prompt_eol";
    }
    return "?";
}

namespace {
void require_nonempty(const std::string& text) {
    if (text.empty()) throw Error(ErrorKind::data, "cannot render a prompt for empty text");
}
}  // namespace

std::string render_plain(const std::string& text) {
    require_nonempty(text);
    return "This sentence : \"" + text + "\" means";
}

std::string render_prompteol(const std::string& text) {
    require_nonempty(text);
    return "This sentence : \"" + text + "\" means in one word:\"";
}

std::string render_prompteol_icl(const std::string& text, const Demonstration& demo) {
    require_nonempty(text);
    return render_prompteol(demo.sentence()) + demo.word() + "\"\n" + render_prompteol(text);
}

std::string render_masked(const std::string& text, bool with_period) {
    require_nonempty(text);
    std::string s = "This sentence : \"" + text + "\" means [MASK]";
    if (with_period) s += '.';
    return s;
}

namespace {

std::string render_for(const RepresentationMethod& method, const std::string& text) {
    switch (method.kind()) {
        case RepresentationMethod::Kind::avg_tokens:
            return text;  // no template
        case RepresentationMethod::Kind::prompt_last:
            return render_plain(text);
        case RepresentationMethod::Kind::prompt_eol:
            return method.demonstration().has_value()
                       ? render_prompteol_icl(text, *method.demonstration())
                       : render_prompteol(text);
    }
    throw Error(ErrorKind::usage, "invalid representation method");
}

}  // namespace

std::string embedding_source_id(const RepresentationMethod& method, const std::string& text) {
    return method.id() + "|" + to_hex(fnv1a64(text));
}

EmbeddingVector embed(const RepresentationMethod& method, const std::string& text,
                      const ModelBackend& backend) {
    return embed_batch(method, {text}, backend, 1).front();
}

std::vector<EmbeddingVector> embed_batch(const RepresentationMethod& method,
                                         const std::vector<std::string>& texts,
                                         const ModelBackend& backend, int batch_size) {
    if (batch_size < 1) throw Error(ErrorKind::usage, "batch_size must be >= 1");
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    if (texts.empty()) return out;

    std::vector<TokenSequence> tokenized;
    tokenized.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        try {
            tokenized.push_back(backend.tokenize(render_for(method, texts[i])));
        } catch (const SequenceTooLongError& e) {
            throw Error(ErrorKind::data,
                        "text " + std::to_string(i) + ": rendered prompt of length " +
                            std::to_string(e.actual) + " exceeds backend limit " +
                            std::to_string(e.limit));
        } catch (const Error& e) {
            throw Error(e.kind(), "text " + std::to_string(i) + ": " + e.what());
        }
    }

    const int pad_id = backend.descriptor().pad_token_id;
    const bool average = method.kind() == RepresentationMethod::Kind::avg_tokens;
    for (std::size_t begin = 0; begin < tokenized.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(tokenized.size(), begin + static_cast<std::size_t>(batch_size));
        std::vector<TokenSequence> chunk(tokenized.begin() + static_cast<std::ptrdiff_t>(begin),
                                         tokenized.begin() + static_cast<std::ptrdiff_t>(end));
        HiddenStateBatch hs;
        try {
            hs = backend.forward_hidden_states(left_pad(std::move(chunk), pad_id));
        } catch (const Error& e) {
            throw Error(e.kind(),
                        "batch starting at text " + std::to_string(begin) + ": " + e.what());
        }
        for (std::size_t b = 0; b < end - begin; ++b) {
            EmbeddingVector v;
            v.source_id = embedding_source_id(method, texts[begin + b]);
            if (average) {
                std::vector<double> acc(static_cast<std::size_t>(hs.hidden_dim), 0.0);
                int count = 0;
                const auto& mask = hs.masks[b];
                for (int t = 0; t < hs.seq_len; ++t) {
                    if (!mask[static_cast<std::size_t>(t)]) continue;
                    const auto row = hs.row(static_cast<int>(b), t);
                    for (int i = 0; i < hs.hidden_dim; ++i) acc[static_cast<std::size_t>(i)] += row[i];
                    ++count;
                }
                v.values.resize(static_cast<std::size_t>(hs.hidden_dim));
                for (int i = 0; i < hs.hidden_dim; ++i)
                    v.values[static_cast<std::size_t>(i)] =
                        static_cast<float>(acc[static_cast<std::size_t>(i)] / count);
            } else {
                const auto row = hs.last_real_row(static_cast<int>(b));
                v.values.assign(row.begin(), row.end());
            }
            check_embedding(v);
            out.push_back(std::move(v));
        }
    }
    return out;
}

}  // namespace promptemb
