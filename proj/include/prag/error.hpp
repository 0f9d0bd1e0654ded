#pragma once

#include <stdexcept>
#include <string>

namespace prag {

// Error taxonomy shared by the library and the CLI exit-code mapping.
//   validation       -> bad inputs, violated invariants (CLI exit 3)
//   missing_artifact -> a required file/dir does not exist (CLI exit 2)
//   runtime          -> everything else that went wrong at run time (CLI exit 1)
//   backend          -> a pluggable backend (encoder/reader/NLI) failed; retryable
//   constraint       -> constrained decoding could not satisfy any keyword;
//                       callers fall back to the extractive reader
enum class ErrorKind { validation, missing_artifact, runtime, backend, constraint };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    static Error validation(const std::string& m) { return {ErrorKind::validation, m}; }
    static Error missing(const std::string& m) { return {ErrorKind::missing_artifact, m}; }
    static Error runtime(const std::string& m) { return {ErrorKind::runtime, m}; }
    static Error backend(const std::string& m) { return {ErrorKind::backend, m}; }
    static Error constraint(const std::string& m) { return {ErrorKind::constraint, m}; }

private:
    ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::validation: return "validation";
        case ErrorKind::missing_artifact: return "missing_artifact";
        case ErrorKind::runtime: return "runtime";
        case ErrorKind::backend: return "backend";
        case ErrorKind::constraint: return "constraint";
    }
    return "unknown";
}

}  // namespace prag
