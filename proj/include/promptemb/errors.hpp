#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace promptemb {

// Broad failure category, mapped to CLI exit codes (usage=1, data=2, backend=3).
enum class ErrorKind { usage = 1, data = 2, backend = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct EmptySentenceError : Error {
    explicit EmptySentenceError(std::size_t row_index)
        : Error(ErrorKind::data, "empty sentence at row " + std::to_string(row_index)),
          row(row_index) {}
    std::size_t row;
};

struct ScoreOutOfRangeError : Error {
    ScoreOutOfRangeError(std::size_t row_index, double score)
        : Error(ErrorKind::data, "gold score " + std::to_string(score) + " out of [0,5] at row " +
                                     std::to_string(row_index)),
          row(row_index), value(score) {}
    std::size_t row;
    double value;
};

struct SequenceTooLongError : Error {
    SequenceTooLongError(int limit_, int actual_)
        : Error(ErrorKind::data, "tokenized sequence of length " + std::to_string(actual_) +
                                     " exceeds backend limit " + std::to_string(limit_)),
          limit(limit_), actual(actual_) {}
    int limit;
    int actual;
};

struct GenerationUnsupportedError : Error {
    explicit GenerationUnsupportedError(const std::string& backend_name)
        : Error(ErrorKind::backend, "backend '" + backend_name + "' does not support generation") {}
};

struct BackendFailureError : Error {
    explicit BackendFailureError(const std::string& msg) : Error(ErrorKind::backend, msg) {}
};

struct AdapterUnsupportedError : Error {
    explicit AdapterUnsupportedError(const std::string& backend_name)
        : Error(ErrorKind::backend,
                "backend '" + backend_name + "' does not expose linear weights for adapters") {}
};

struct ZeroVectorError : Error {
    ZeroVectorError() : Error(ErrorKind::data, "cosine of an all-zero vector is undefined") {}
};

struct DimensionMismatchError : Error {
    DimensionMismatchError(std::size_t a, std::size_t b)
        : Error(ErrorKind::data, "vector dimensions differ: " + std::to_string(a) + " vs " +
                                     std::to_string(b)) {}
};

struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& what_list)
        : Error(ErrorKind::data, "degenerate input: " + what_list + " is constant") {}
};

struct NonFiniteLossError : Error {
    explicit NonFiniteLossError(std::size_t step_index)
        : Error(ErrorKind::data, "non-finite loss at step " + std::to_string(step_index)),
          step(step_index) {}
    std::size_t step;
};

struct MalformedEntryError : Error {
    MalformedEntryError(std::size_t index_, const std::string& reason_)
        : Error(ErrorKind::data,
                "malformed entry at index " + std::to_string(index_) + ": " + reason_),
          index(index_), reason(reason_) {}
    std::size_t index;
    std::string reason;
};

struct LabelingFailedError : Error {
    explicit LabelingFailedError(std::vector<std::pair<std::size_t, std::string>> reasons_)
        : Error(ErrorKind::backend,
                "labeling failed for " + std::to_string(reasons_.size()) + " sentence(s)"),
          reasons(std::move(reasons_)) {}
    std::vector<std::pair<std::size_t, std::string>> reasons;
};

}  // namespace promptemb
