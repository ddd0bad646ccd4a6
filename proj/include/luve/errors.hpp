#pragma once

#include <stdexcept>
#include <string>

namespace luve {

// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated precondition or shape contract.
struct ContractError : Error {
    using Error::Error;
};

// Bad configuration value or malformed config document.
struct ConfigError : Error {
    using Error::Error;
};

// Missing or unreadable file, bad magic, truncated stream.
struct IoError : Error {
    using Error::Error;
};

// Rejected external input (e.g. an MLLM response); carries a category tag.
struct ValidationError : Error {
    ValidationError(std::string category_tag, const std::string& msg)
        : Error(category_tag + ": " + msg), category(std::move(category_tag)) {}
    std::string category;
};

// Training loss became non-finite.
struct TrainingDiverged : Error {
    using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

}  // namespace luve
