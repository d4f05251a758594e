#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nct {

// Error taxonomy maps onto CLI exit codes: usage errors are handled by the
// parser, ContractError -> 2, IoError -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

inline void check_shape(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

}  // namespace nct
