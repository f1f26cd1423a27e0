#ifndef IUF_COMMON_HPP
#define IUF_COMMON_HPP

#include <stdexcept>
#include <string>

namespace iuf {

inline constexpr const char* kArtifactVersion = "0.1.0";

// Bad configuration, bad file layout, bad protocol string. Maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss, undefined metric, SVD of non-finite input. Maps to exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// A caller broke an operation contract (shape mismatch, label out of range).
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace iuf

#endif
