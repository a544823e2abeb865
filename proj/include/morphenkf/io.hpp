#pragma once

// File formats.
//
//   MKF1  ASCII header "MKF1 <nx> <ny> <x0> <y0> <Lx> <Ly> <boundary_value>\n"
//         followed by nx*ny little-endian IEEE-754 doubles, row-major.
//   MKW1  ASCII header "MKW1 <level>\n" followed by 2*(2^level+1)^2 doubles,
//         the tx block then the ty block. The domain is not stored.
//   CSV   one "x,y,value" row per node.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "morphenkf/error.hpp"
#include "morphenkf/field.hpp"

namespace morphenkf::io {

namespace detail {

inline void write_doubles_le(std::ostream& os, const std::vector<double>& v) {
    std::vector<unsigned char> buf(v.size() * 8);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(v[i]);
        for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline std::vector<double> read_doubles_le(std::istream& is, std::size_t n, const std::string& what) {
    std::vector<unsigned char> buf(n * 8);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw ConfigError(what + ": truncated payload");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
        v[i] = std::bit_cast<double>(bits);
    }
    return v;
}

inline std::string exact(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open " + path.string() + " for writing");
    return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open " + path.string());
    return is;
}

}  // namespace detail

inline void write_field(std::ostream& os, const ScalarField& f) {
    const auto& g = f.geometry();
    os << "MKF1 " << g.nx << ' ' << g.ny << ' ' << detail::exact(g.domain.x0) << ' ' << detail::exact(g.domain.y0)
       << ' ' << detail::exact(g.domain.lx) << ' ' << detail::exact(g.domain.ly) << ' '
       << detail::exact(f.boundary_value()) << '\n';
    detail::write_doubles_le(os, f.values());
}

inline ScalarField read_field(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw ConfigError("MKF1: missing header");
    std::istringstream hs(header);
    std::string magic;
    std::size_t nx = 0, ny = 0;
    Domain d;
    double boundary = 0.0;
    if (!(hs >> magic >> nx >> ny >> d.x0 >> d.y0 >> d.lx >> d.ly >> boundary) || magic != "MKF1")
        throw ConfigError("MKF1: malformed header '" + header + "'");
    GridGeometry g(nx, ny, d);
    return ScalarField(g, detail::read_doubles_le(is, g.size(), "MKF1"), boundary);
}

inline void write_warp(std::ostream& os, const Warp& t) {
    os << "MKW1 " << t.level() << '\n';
    detail::write_doubles_le(os, t.tx());
    detail::write_doubles_le(os, t.ty());
}

inline Warp read_warp(std::istream& is, const Domain& domain) {
    std::string header;
    if (!std::getline(is, header)) throw ConfigError("MKW1: missing header");
    std::istringstream hs(header);
    std::string magic;
    int level = 0;
    if (!(hs >> magic >> level) || magic != "MKW1") throw ConfigError("MKW1: malformed header '" + header + "'");
    if (level < 1 || level > 20) throw ConfigError("MKW1: invalid level");
    const auto m = morph_nodes_per_side(level);
    auto tx = detail::read_doubles_le(is, m * m, "MKW1");
    auto ty = detail::read_doubles_le(is, m * m, "MKW1");
    return Warp(level, domain, std::move(tx), std::move(ty));
}

inline void save_field(const std::filesystem::path& path, const ScalarField& f) {
    auto os = detail::open_out(path);
    write_field(os, f);
}

inline ScalarField load_field(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    return read_field(is);
}

inline void save_warp(const std::filesystem::path& path, const Warp& t) {
    auto os = detail::open_out(path);
    write_warp(os, t);
}

/// Loads a warp and rejects it unless every mapped quadrant is convex.
inline Warp load_warp(const std::filesystem::path& path, const Domain& domain) {
    auto is = detail::open_in(path);
    Warp t = read_warp(is, domain);
    if (auto q = first_nonconvex_quadrant(t))
        throw NumericalError(path.string() + ": warp is not invertible at quadrant (" + std::to_string(q->first) +
                             "," + std::to_string(q->second) + ")");
    return t;
}

inline void write_csv(std::ostream& os, const ScalarField& f) {
    const auto& g = f.geometry();
    os << std::setprecision(17);
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j < g.nx; ++j) os << g.x(j) << ',' << g.y(k) << ',' << f(j, k) << '\n';
}

inline void save_csv(const std::filesystem::path& path, const ScalarField& f) {
    auto os = detail::open_out(path);
    write_csv(os, f);
}

}  // namespace morphenkf::io
