#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "promptemb/backend.hpp"
#include "promptemb/core.hpp"
#include "promptemb/represent.hpp"

namespace promptemb {

/// Persistent embedding cache: one file per entry under a directory, keyed by
/// hash(backend id, method id, demo id or "none", sentence). Entries store the
/// full key and are verified on read, so a hash collision can never hand back
/// the wrong vector. Writes go through a temp file + rename under a directory
/// lock, so concurrent commands sharing a cache directory stay consistent.
class EmbeddingCache {
public:
    explicit EmbeddingCache(std::filesystem::path directory);

    static std::string make_key(const std::string& backend_id,
                                const RepresentationMethod& method, const std::string& sentence);

    std::optional<std::vector<float>> get(const std::string& key) const;
    void put(const std::string& key, const std::vector<float>& values);

    const std::filesystem::path& directory() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::filesystem::path entry_path(const std::string& key) const;
};

/// embed_batch with cache lookups in front; pass a null cache for a plain
/// pass-through. Cache hits return bitwise-identical vectors.
std::vector<EmbeddingVector> embed_batch_cached(EmbeddingCache* cache,
                                                const RepresentationMethod& method,
                                                const std::vector<std::string>& texts,
                                                const ModelBackend& backend, int batch_size);

}  // namespace promptemb
