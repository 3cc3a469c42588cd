#include "promptemb/cache.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstring>
#include <fstream>

namespace promptemb {

namespace {

constexpr char kMagic[4] = {'P', 'E', 'C', '1'};

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

// Exclusive advisory lock on <dir>/.lock for the lifetime of the object.
class DirLock {
public:
    explicit DirLock(const std::filesystem::path& dir) {
        fd_ = ::open((dir / ".lock").c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ >= 0) ::flock(fd_, LOCK_EX);
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }

private:
    int fd_ = -1;
};

}  // namespace

EmbeddingCache::EmbeddingCache(std::filesystem::path directory) : dir_(std::move(directory)) {
    std::filesystem::create_directories(dir_);
}

std::string EmbeddingCache::make_key(const std::string& backend_id,
                                     const RepresentationMethod& method,
                                     const std::string& sentence) {
    const std::string demo_id =
        method.demonstration().has_value() ? method.demonstration()->id() : "none";
    return backend_id + '\x1e' + RepresentationMethod::kind_to_string(method.kind()) + '\x1e' +
           demo_id + '\x1e' + sentence;
}

std::filesystem::path EmbeddingCache::entry_path(const std::string& key) const {
    return dir_ / (to_hex(fnv1a64(key)) + ".emb");
}

std::optional<std::vector<float>> EmbeddingCache::get(const std::string& key) const {
    std::ifstream in(entry_path(key), std::ios::binary);
    if (!in) return std::nullopt;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (content.size() < 12 || std::memcmp(content.data(), kMagic, 4) != 0) return std::nullopt;
    const std::uint32_t dim = read_u32(content.data() + 4);
    const std::uint32_t key_len = read_u32(content.data() + 8);
    const std::size_t expected = 12ull + key_len + 4ull * dim;
    if (content.size() != expected) return std::nullopt;
    if (std::string_view(content.data() + 12, key_len) != key) return std::nullopt;
    std::vector<float> values(dim);
    const char* payload = content.data() + 12 + key_len;
    for (std::uint32_t i = 0; i < dim; ++i) {
        const std::uint32_t bits = read_u32(payload + 4ull * i);
        float f;
        std::memcpy(&f, &bits, 4);
        values[i] = f;
    }
    return values;
}

void EmbeddingCache::put(const std::string& key, const std::vector<float>& values) {
    std::string blob;
    blob.reserve(12 + key.size() + 4 * values.size());
    blob.append(kMagic, 4);
    append_u32(blob, static_cast<std::uint32_t>(values.size()));
    append_u32(blob, static_cast<std::uint32_t>(key.size()));
    blob += key;
    for (float f : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        append_u32(blob, bits);
    }

    DirLock lock(dir_);
    const auto final_path = entry_path(key);
    const auto tmp_path = final_path.string() + ".tmp" + std::to_string(::getpid());
    {
        std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::data, "cannot write cache entry " + tmp_path);
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    std::filesystem::rename(tmp_path, final_path);
}

std::vector<EmbeddingVector> embed_batch_cached(EmbeddingCache* cache,
                                                const RepresentationMethod& method,
                                                const std::vector<std::string>& texts,
                                                const ModelBackend& backend, int batch_size) {
    if (!cache) return embed_batch(method, texts, backend, batch_size);

    const std::string backend_id = backend.descriptor().name;
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::string> misses;
    std::vector<std::size_t> miss_index;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const std::string key = EmbeddingCache::make_key(backend_id, method, texts[i]);
        if (auto hit = cache->get(key)) {
            out[i].values = std::move(*hit);
            out[i].source_id = embedding_source_id(method, texts[i]);
        } else {
            misses.push_back(texts[i]);
            miss_index.push_back(i);
        }
    }
    if (!misses.empty()) {
        auto fresh = embed_batch(method, misses, backend, batch_size);
        for (std::size_t m = 0; m < fresh.size(); ++m) {
            cache->put(EmbeddingCache::make_key(backend_id, method, misses[m]), fresh[m].values);
            out[miss_index[m]] = std::move(fresh[m]);
        }
    }
    return out;
}

}  // namespace promptemb
