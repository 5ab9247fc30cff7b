#ifndef MMFP_TYPES_HPP
#define MMFP_TYPES_HPP

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmfp {

using Index = std::int64_t;
using Vector = std::vector<double>;

/// Ordered list of distinct indices into [0, n).
using IndexSet = std::vector<Index>;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require_dim(std::size_t got, std::size_t want, const char* what)
{
    if (got != want) {
        throw DimensionError(std::string(what) + ": dimension mismatch (got " + std::to_string(got)
                             + ", expected " + std::to_string(want) + ")");
    }
}

} // namespace mmfp

#endif
