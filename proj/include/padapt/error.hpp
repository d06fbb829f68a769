#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace padapt {

// Invalid or inconsistent user-supplied configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes incompatible with the requested operation.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed, truncated or unreadable files.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A required input file (dataset, checkpoint) does not exist.
struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where the pipeline requires finite ones.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void concat_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void concat_into(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    concat_into(os, rest...);
}

}  // namespace detail

template <typename... Args>
std::string concat(const Args&... args) {
    std::ostringstream os;
    detail::concat_into(os, args...);
    return os.str();
}

template <typename Error = std::runtime_error, typename... Args>
void check(bool condition, const Args&... message_parts) {
    if (!condition) {
        throw Error(concat(message_parts...));
    }
}

}  // namespace padapt
