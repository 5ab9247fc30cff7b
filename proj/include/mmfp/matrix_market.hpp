#ifndef MMFP_MATRIX_MARKET_HPP
#define MMFP_MATRIX_MARKET_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <system_error>

#include "mmfp/sparse.hpp"

namespace mmfp {

struct LoadedMatrix {
    SparseSymMatrix matrix;
    /// Set when the file declared "general" symmetry and was replaced by (A + A^T)/2.
    bool symmetrized = false;
};

namespace detail {

inline std::string lowercase(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double x)
{
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    return std::string(buf.data(), res.ptr);
}

} // namespace detail

inline LoadedMatrix read_matrix_market(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError("matrix market: empty input");
    }
    std::istringstream header(line);
    std::string banner;
    std::string object;
    std::string format;
    std::string field;
    std::string symmetry;
    header >> banner >> object >> format >> field >> symmetry;
    if (banner != "%%MatrixMarket" || detail::lowercase(object) != "matrix") {
        throw FormatError("matrix market: malformed header");
    }
    if (detail::lowercase(format) != "coordinate") {
        throw FormatError("matrix market: only coordinate format is supported");
    }
    field = detail::lowercase(field);
    if (field != "real" && field != "integer" && field != "double") {
        throw FormatError("matrix market: non-real field '" + field + "'");
    }
    symmetry = detail::lowercase(symmetry);
    if (symmetry != "symmetric" && symmetry != "general") {
        throw FormatError("matrix market: unsupported symmetry '" + symmetry + "'");
    }

    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '%' && line.find_first_not_of(" \t\r") != std::string::npos) {
            break;
        }
    }
    Index rows = 0;
    Index cols = 0;
    Index entries = 0;
    {
        std::istringstream size_line(line);
        if (!(size_line >> rows >> cols >> entries) || rows < 1 || rows != cols || entries < 0) {
            throw FormatError("matrix market: malformed size line (square matrix expected)");
        }
    }

    std::vector<Triplet> t;
    t.reserve(symmetry == "symmetric" ? 2 * entries : entries);
    Index read = 0;
    while (read < entries && std::getline(in, line)) {
        if (line.empty() || line[0] == '%' || line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::istringstream es(line);
        Index i = 0;
        Index j = 0;
        std::string vtext;
        if (!(es >> i >> j >> vtext)) {
            throw FormatError("matrix market: malformed entry line " + std::to_string(read + 1));
        }
        double v = 0.0;
        auto res = std::from_chars(vtext.data(), vtext.data() + vtext.size(), v);
        if (res.ec != std::errc() || res.ptr != vtext.data() + vtext.size()) {
            throw FormatError("matrix market: bad value '" + vtext + "'");
        }
        if (i < 1 || i > rows || j < 1 || j > cols) {
            throw FormatError("matrix market: index out of bounds at entry " + std::to_string(read + 1));
        }
        --i;
        --j;
        if (symmetry == "symmetric") {
            if (j > i) {
                throw FormatError("matrix market: symmetric file stores an upper-triangle entry");
            }
            t.push_back({i, j, v});
            if (i != j) {
                t.push_back({j, i, v});
            }
        } else {
            t.push_back({i, j, v});
        }
        ++read;
    }
    if (read != entries) {
        throw FormatError("matrix market: expected " + std::to_string(entries) + " entries, found "
                          + std::to_string(read));
    }

    if (symmetry == "symmetric") {
        return {SparseSymMatrix::from_triplets(rows, std::move(t)), false};
    }
    return {SparseSymMatrix::symmetrize(CsrMatrix::from_triplets(rows, cols, std::move(t))), true};
}

inline LoadedMatrix read_matrix_market(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw FormatError("matrix market: cannot open '" + path + "'");
    }
    return read_matrix_market(in);
}

/// Writes the lower triangle with a "symmetric" header.
inline void write_matrix_market(std::ostream& out, const SparseSymMatrix& a)
{
    Index lower = 0;
    for (Index i = 0; i < a.n(); ++i) {
        for (Index j : a.col_indices(i)) {
            lower += (j <= i) ? 1 : 0;
        }
    }
    out << "%%MatrixMarket matrix coordinate real symmetric\n";
    out << a.n() << ' ' << a.n() << ' ' << lower << '\n';
    for (Index i = 0; i < a.n(); ++i) {
        auto ci = a.col_indices(i);
        auto cv = a.col_values(i);
        for (std::size_t p = 0; p < ci.size() && ci[p] <= i; ++p) {
            out << (i + 1) << ' ' << (ci[p] + 1) << ' ' << detail::format_double(cv[p]) << '\n';
        }
    }
}

inline void write_matrix_market(const std::string& path, const SparseSymMatrix& a)
{
    std::ofstream out(path);
    if (!out) {
        throw FormatError("matrix market: cannot write '" + path + "'");
    }
    write_matrix_market(out, a);
}

/// Target size p * 2^s with s = floor(log2 n), p = floor(n / 2^s).
inline Index pow2_trim_size(Index n)
{
    if (n < 1) {
        throw DimensionError("pow2_trim_size: n must be positive");
    }
    const int s = std::bit_width(static_cast<std::uint64_t>(n)) - 1;
    const Index base = Index{1} << s;
    const Index p = n / base;
    return p * base;
}

struct TrimResult {
    SparseSymMatrix matrix;
    IndexSet kept;
};

/// Drops a seeded uniformly random set of rows/columns so the size becomes p * 2^s.
inline TrimResult trim_to_pow2(const SparseSymMatrix& a, std::uint64_t seed)
{
    const Index n = a.n();
    if (n < 2) {
        throw DimensionError("trim_to_pow2: n must be at least 2");
    }
    const Index target = pow2_trim_size(n);
    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    IndexSet kept(order.begin() + (n - target), order.end());
    std::sort(kept.begin(), kept.end());
    auto sub = principal_submatrix(a, kept);
    return {std::move(sub), std::move(kept)};
}

} // namespace mmfp

#endif
