#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "csiloc/tensor.hpp"

namespace csiloc {

// CSIT tensor container:
//   bytes 0-3   magic "CSIT"
//   byte  4     format version (1)
//   byte  5     dtype: 0 = float32, 1 = float64
//   byte  6     ndim
//   then        ndim x u64 little-endian extents
//   then        row-major little-endian payload
namespace csit {

inline constexpr std::array<char, 4> magic{'C', 'S', 'I', 'T'};
inline constexpr std::uint8_t version = 1;
inline constexpr std::uint8_t max_ndim = 8;

template <typename T>
constexpr std::uint8_t dtype_byte() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? 0 : 1;
}

} // namespace csit

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
    std::array<char, 8> b;
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b.data(), 8);
}

template <typename T>
void write_scalars_le(std::ostream& os, const T* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::array<char, sizeof(T)> b;
            std::memcpy(b.data(), &data[i], sizeof(T));
            for (std::size_t j = 0; j < sizeof(T) / 2; ++j) std::swap(b[j], b[sizeof(T) - 1 - j]);
            os.write(b.data(), sizeof(T));
        }
    }
}

template <typename T>
void read_scalars_le(const char* bytes, T* out, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out, bytes, count * sizeof(T));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::array<char, sizeof(T)> b;
            std::memcpy(b.data(), bytes + i * sizeof(T), sizeof(T));
            for (std::size_t j = 0; j < sizeof(T) / 2; ++j) std::swap(b[j], b[sizeof(T) - 1 - j]);
            std::memcpy(&out[i], b.data(), sizeof(T));
        }
    }
}

[[noreturn]] inline void format_fail(const std::filesystem::path& path, std::size_t byte_offset,
                                     const std::string& what) {
    throw FormatError(path.string() + ": " + what + " (byte " + std::to_string(byte_offset) + ")");
}

} // namespace detail

template <typename T>
void save_csit(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os.write(csit::magic.data(), 4);
    os.put(static_cast<char>(csit::version));
    os.put(static_cast<char>(csit::dtype_byte<T>()));
    os.put(static_cast<char>(t.ndim()));
    for (std::size_t d = 0; d < t.ndim(); ++d) detail::write_u64_le(os, t.extent(d));
    detail::write_scalars_le(os, t.data(), t.size());
    os.flush();
    if (!os) throw FormatError("short write to '" + path.string() + "'");
}

// Loads a CSIT file as Tensor<T>, converting between float32 and float64
// payloads when needed. Every rejection names the offending byte offset.
template <typename T>
Tensor<T> load_csit(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path.string() + "' for reading");
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();

    std::size_t off = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (bytes.size() - off < n)
            detail::format_fail(path, bytes.size(), std::string("truncated file: missing ") + what);
    };

    need(4, "magic");
    if (std::memcmp(bytes.data(), csit::magic.data(), 4) != 0)
        detail::format_fail(path, 0, "bad magic, not a CSIT file");
    off = 4;

    need(1, "version");
    const auto version = static_cast<std::uint8_t>(bytes[off]);
    if (version != csit::version)
        detail::format_fail(path, off, "unsupported version " + std::to_string(version));
    ++off;

    need(1, "dtype");
    const auto dtype = static_cast<std::uint8_t>(bytes[off]);
    if (dtype != 0 && dtype != 1)
        detail::format_fail(path, off, "unknown dtype " + std::to_string(dtype));
    ++off;

    need(1, "rank");
    const auto ndim = static_cast<std::uint8_t>(bytes[off]);
    if (ndim == 0 || ndim > csit::max_ndim)
        detail::format_fail(path, off, "rank " + std::to_string(ndim) + " out of range [1, " +
                                           std::to_string(csit::max_ndim) + "]");
    ++off;

    std::vector<std::size_t> shape(ndim);
    std::size_t count = 1;
    for (std::size_t d = 0; d < ndim; ++d) {
        need(8, "extent");
        std::uint64_t e = 0;
        for (int i = 0; i < 8; ++i)
            e |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[off + static_cast<std::size_t>(i)])) << (8 * i);
        if (e == 0) detail::format_fail(path, off, "zero extent in dimension " + std::to_string(d));
        if (e > (std::uint64_t{1} << 40) || count > (std::size_t{1} << 40) / e)
            detail::format_fail(path, off, "extent product overflows");
        shape[d] = static_cast<std::size_t>(e);
        count *= shape[d];
        off += 8;
    }

    const std::size_t scalar_size = dtype == 0 ? 4 : 8;
    const std::size_t payload = count * scalar_size;
    if (bytes.size() - off < payload)
        detail::format_fail(path, bytes.size(),
                            "truncated payload: expected " + std::to_string(payload) +
                                " bytes starting");
    if (bytes.size() - off > payload)
        detail::format_fail(path, off + payload, "trailing bytes after payload");

    std::vector<T> data(count);
    if (dtype == csit::dtype_byte<T>()) {
        detail::read_scalars_le(bytes.data() + off, data.data(), count);
    } else if (dtype == 0) {
        std::vector<float> tmp(count);
        detail::read_scalars_le(bytes.data() + off, tmp.data(), count);
        for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<T>(tmp[i]);
    } else {
        std::vector<double> tmp(count);
        detail::read_scalars_le(bytes.data() + off, tmp.data(), count);
        for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<T>(tmp[i]);
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

// Positions CSV: header "x,y,z" then one row per sample, full round-trip
// precision.
template <typename T>
void save_positions_csv(const std::filesystem::path& path, const Tensor<T>& positions) {
    if (positions.ndim() != 2 || positions.extent(1) != 3)
        throw DimensionError("positions must be [n, 3], got " + shape_string(positions.shape()));
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os << "x,y,z\n";
    char buf[128];
    for (std::size_t i = 0; i < positions.extent(0); ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(positions.at(i, j)));
            os << buf << (j == 2 ? '\n' : ',');
        }
    }
    os.flush();
    if (!os) throw FormatError("short write to '" + path.string() + "'");
}

namespace detail {

inline double parse_csv_number(const std::string& field, const std::filesystem::path& path,
                               std::size_t line_no) {
    double v = 0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": cannot parse '" +
                          field + "' as a number");
    if (!std::isfinite(v))
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": non-finite value '" +
                          field + "'");
    return v;
}

} // namespace detail

template <typename T>
Tensor<T> load_positions_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open '" + path.string() + "' for reading");
    std::string line;
    auto chomp = [](std::string& s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
    };

    if (!std::getline(is, line)) throw FormatError(path.string() + ": empty file");
    chomp(line);
    if (line != "x,y,z")
        throw FormatError(path.string() + ":1: expected header 'x,y,z', got '" + line + "'");

    std::vector<T> data;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        chomp(line);
        if (line.empty()) {
            // Only tolerate blank lines at EOF.
            if (is.peek() != std::char_traits<char>::eof())
                throw FormatError(path.string() + ":" + std::to_string(line_no) + ": blank line");
            break;
        }
        std::array<std::string, 3> fields;
        std::size_t n_fields = 0, start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (n_fields == 3)
                    throw FormatError(path.string() + ":" + std::to_string(line_no) +
                                      ": expected 3 columns");
                fields[n_fields++] = line.substr(start, i - start);
                start = i + 1;
            }
        }
        if (n_fields != 3)
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": expected 3 columns, got " + std::to_string(n_fields));
        for (const auto& f : fields)
            data.push_back(static_cast<T>(detail::parse_csv_number(f, path, line_no)));
    }
    if (data.empty()) throw FormatError(path.string() + ": no data rows");
    const std::size_t rows = data.size() / 3;
    return Tensor<T>({rows, 3}, std::move(data));
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    os.flush();
    if (!os) throw FormatError("short write to '" + path.string() + "'");
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path.string() + "' for reading");
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

} // namespace csiloc
