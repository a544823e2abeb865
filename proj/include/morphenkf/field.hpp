#pragma once

// Gridded fields and warps on a rectangular domain.
//
// A ScalarField lives on the uniform pixel grid and is extended outside the
// domain by its constant boundary value. A Warp holds the displacement T of
// a registration mapping I+T on a (2^level+1)^2 morphing grid that shares the
// domain. Both are evaluated off-grid by bilinear interpolation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "morphenkf/error.hpp"

namespace morphenkf {

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
    friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
    friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Point a, Point b) = default;
};

inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }
inline double norm_inf(Point a) { return std::max(std::abs(a.x), std::abs(a.y)); }

/// Axis-aligned rectangle [x0, x0+lx] x [y0, y0+ly] in meters.
struct Domain {
    double x0 = 0.0;
    double y0 = 0.0;
    double lx = 1.0;
    double ly = 1.0;

    [[nodiscard]] bool contains(Point p) const {
        return p.x >= x0 && p.x <= x0 + lx && p.y >= y0 && p.y <= y0 + ly;
    }
    [[nodiscard]] double diameter() const { return std::hypot(lx, ly); }
    [[nodiscard]] Point clamp(Point p) const {
        return {std::clamp(p.x, x0, x0 + lx), std::clamp(p.y, y0, y0 + ly)};
    }
    friend bool operator==(const Domain&, const Domain&) = default;
};

namespace detail {

// Splits a coordinate into a cell index in [0, n-2] and a local fraction.
// Positions within 1e-10 cells of a node snap onto it so that nodal values
// are reproduced exactly.
inline std::pair<std::size_t, double> locate(double s, std::size_t n) {
    constexpr double snap = 1e-10;
    const double last = static_cast<double>(n - 2);
    double cell = s <= 0.0 ? 0.0 : (s >= last ? last : static_cast<double>(static_cast<long long>(s)));
    double frac = s - cell;
    if (std::abs(frac) < snap) {
        frac = 0.0;
    } else if (std::abs(frac - 1.0) < snap) {
        if (cell < last)
            cell += 1.0, frac = 0.0;
        else
            frac = 1.0;
    }
    return {static_cast<std::size_t>(cell), frac};
}

inline double bilinear(double v00, double v10, double v01, double v11, double fx, double fy) {
    return (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy;
}

}  // namespace detail

struct GridGeometry {
    std::size_t nx = 2;
    std::size_t ny = 2;
    Domain domain;

    GridGeometry() = default;
    GridGeometry(std::size_t nx_, std::size_t ny_, Domain d) : nx(nx_), ny(ny_), domain(d) {
        if (nx < 2 || ny < 2) throw ConfigError("grid needs at least 2x2 nodes");
        if (!(domain.lx > 0.0) || !(domain.ly > 0.0)) throw ConfigError("domain extents must be positive");
    }

    [[nodiscard]] double hx() const { return domain.lx / static_cast<double>(nx - 1); }
    [[nodiscard]] double hy() const { return domain.ly / static_cast<double>(ny - 1); }
    // Written as a fraction of the extent so the last node is exactly x0 + lx.
    [[nodiscard]] double x(std::size_t j) const {
        return domain.x0 + domain.lx * (static_cast<double>(j) / static_cast<double>(nx - 1));
    }
    [[nodiscard]] double y(std::size_t k) const {
        return domain.y0 + domain.ly * (static_cast<double>(k) / static_cast<double>(ny - 1));
    }
    [[nodiscard]] Point node(std::size_t j, std::size_t k) const { return {x(j), y(k)}; }
    [[nodiscard]] std::size_t size() const { return nx * ny; }
    [[nodiscard]] std::size_t index(std::size_t j, std::size_t k) const { return k * nx + j; }

    friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Real function on the pixel grid, row-major (y outer, x inner), extended
/// outside the domain by `boundary_value`.
class ScalarField {
public:
    ScalarField() = default;
    explicit ScalarField(GridGeometry g, double boundary_value = 0.0)
        : geometry_(g), values_(g.size(), 0.0), boundary_(boundary_value) {}
    ScalarField(GridGeometry g, std::vector<double> values, double boundary_value)
        : geometry_(g), values_(std::move(values)), boundary_(boundary_value) {
        if (values_.size() != geometry_.size()) throw ConfigError("field values do not match grid size");
    }

    /// Field with value fn(x, y) at every node.
    template <class Fn>
    static ScalarField from_function(GridGeometry g, double boundary_value, Fn&& fn) {
        ScalarField f(g, boundary_value);
        for (std::size_t k = 0; k < g.ny; ++k)
            for (std::size_t j = 0; j < g.nx; ++j) f(j, k) = fn(g.x(j), g.y(k));
        return f;
    }

    [[nodiscard]] const GridGeometry& geometry() const { return geometry_; }
    [[nodiscard]] double boundary_value() const { return boundary_; }
    void set_boundary_value(double b) { boundary_ = b; }

    [[nodiscard]] std::vector<double>& values() { return values_; }
    [[nodiscard]] const std::vector<double>& values() const { return values_; }

    double& operator()(std::size_t j, std::size_t k) { return values_[geometry_.index(j, k)]; }
    double operator()(std::size_t j, std::size_t k) const { return values_[geometry_.index(j, k)]; }

    [[nodiscard]] bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const ScalarField&, const ScalarField&) = default;

private:
    GridGeometry geometry_;
    std::vector<double> values_;
    double boundary_ = 0.0;
};

/// Bilinear interpolation inside the domain, boundary value outside.
inline double eval_field(const ScalarField& f, Point p) {
    const auto& g = f.geometry();
    if (!g.domain.contains(p)) return f.boundary_value();
    const auto [j, fx] = detail::locate((p.x - g.domain.x0) / g.hx(), g.nx);
    const auto [k, fy] = detail::locate((p.y - g.domain.y0) / g.hy(), g.ny);
    const double* v = f.values().data() + k * g.nx + j;
    return detail::bilinear(v[0], v[1], v[g.nx], v[g.nx + 1], fx, fy);
}

inline double max_abs_difference(const ScalarField& a, const ScalarField& b) {
    if (a.geometry() != b.geometry()) throw ConfigError("fields have different geometry");
    double m = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i)
        m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

/// a + s*b node-wise, including the boundary value.
inline ScalarField add_scaled(const ScalarField& a, double s, const ScalarField& b) {
    if (a.geometry() != b.geometry()) throw ConfigError("fields have different geometry");
    ScalarField out = a;
    for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] += s * b.values()[i];
    out.set_boundary_value(a.boundary_value() + s * b.boundary_value());
    return out;
}

inline std::size_t morph_nodes_per_side(int level) { return (std::size_t{1} << level) + 1; }

/// Displacement field T = (tx, ty) on the (2^level+1)^2 morphing grid over
/// `domain`, nodes including the boundary, row-major.
class Warp {
public:
    Warp() = default;
    Warp(int level, Domain domain) : level_(level), domain_(domain) {
        if (level < 1 || level > 20) throw ConfigError("warp level must be in [1, 20]");
        const auto m = morph_nodes_per_side(level);
        tx_.assign(m * m, 0.0);
        ty_.assign(m * m, 0.0);
    }
    Warp(int level, Domain domain, std::vector<double> tx, std::vector<double> ty) : Warp(level, domain) {
        if (tx.size() != tx_.size() || ty.size() != ty_.size())
            throw ConfigError("warp arrays do not match level " + std::to_string(level));
        tx_ = std::move(tx);
        ty_ = std::move(ty);
    }

    [[nodiscard]] int level() const { return level_; }
    [[nodiscard]] const Domain& domain() const { return domain_; }
    [[nodiscard]] std::size_t side() const { return morph_nodes_per_side(level_); }
    [[nodiscard]] std::size_t cells() const { return side() - 1; }
    [[nodiscard]] std::size_t size() const { return tx_.size(); }
    [[nodiscard]] std::size_t index(std::size_t j, std::size_t k) const { return k * side() + j; }

    [[nodiscard]] double spacing_x() const { return domain_.lx / static_cast<double>(cells()); }
    [[nodiscard]] double spacing_y() const { return domain_.ly / static_cast<double>(cells()); }
    [[nodiscard]] Point node(std::size_t j, std::size_t k) const {
        const double c = static_cast<double>(cells());
        return {domain_.x0 + domain_.lx * (static_cast<double>(j) / c), domain_.y0 + domain_.ly * (static_cast<double>(k) / c)};
    }
    /// Image (I+T) of node (j, k).
    [[nodiscard]] Point mapped(std::size_t j, std::size_t k) const {
        const auto i = index(j, k);
        const Point n = node(j, k);
        return {n.x + tx_[i], n.y + ty_[i]};
    }
    [[nodiscard]] Point displacement(std::size_t j, std::size_t k) const {
        const auto i = index(j, k);
        return {tx_[i], ty_[i]};
    }
    void set_displacement(std::size_t j, std::size_t k, Point d) {
        const auto i = index(j, k);
        tx_[i] = d.x;
        ty_[i] = d.y;
    }

    [[nodiscard]] std::vector<double>& tx() { return tx_; }
    [[nodiscard]] std::vector<double>& ty() { return ty_; }
    [[nodiscard]] const std::vector<double>& tx() const { return tx_; }
    [[nodiscard]] const std::vector<double>& ty() const { return ty_; }

    [[nodiscard]] double max_abs() const {
        double m = 0.0;
        for (double v : tx_) m = std::max(m, std::abs(v));
        for (double v : ty_) m = std::max(m, std::abs(v));
        return m;
    }
    [[nodiscard]] bool all_finite() const {
        auto fin = [](double v) { return std::isfinite(v); };
        return std::all_of(tx_.begin(), tx_.end(), fin) && std::all_of(ty_.begin(), ty_.end(), fin);
    }

    friend bool operator==(const Warp&, const Warp&) = default;

private:
    int level_ = 1;
    Domain domain_;
    std::vector<double> tx_;
    std::vector<double> ty_;
};

/// a + s*b node-wise.
inline Warp add_scaled(const Warp& a, double s, const Warp& b) {
    if (a.level() != b.level() || a.domain() != b.domain()) throw ConfigError("warps differ in level or domain");
    Warp out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.tx()[i] += s * b.tx()[i];
        out.ty()[i] += s * b.ty()[i];
    }
    return out;
}

inline Warp scaled(const Warp& a, double s) {
    Warp out = a;
    for (auto& v : out.tx()) v *= s;
    for (auto& v : out.ty()) v *= s;
    return out;
}

/// Bilinearly interpolated displacement T(p).
inline Point warp_displacement(const Warp& t, Point p) {
    const auto& d = t.domain();
    const auto [j, fx] = detail::locate((p.x - d.x0) / t.spacing_x(), t.side());
    const auto [k, fy] = detail::locate((p.y - d.y0) / t.spacing_y(), t.side());
    const auto i00 = t.index(j, k), i10 = t.index(j + 1, k), i01 = t.index(j, k + 1), i11 = t.index(j + 1, k + 1);
    return {detail::bilinear(t.tx()[i00], t.tx()[i10], t.tx()[i01], t.tx()[i11], fx, fy),
            detail::bilinear(t.ty()[i00], t.ty()[i10], t.ty()[i01], t.ty()[i11], fx, fy)};
}

/// (I+T)(p). Warps are defined on their domain only.
inline Point eval_warp(const Warp& t, Point p) {
    if (!t.domain().contains(p)) throw ConfigError("eval_warp: point outside the warp domain");
    return p + warp_displacement(t, p);
}

/// g = f o (I+T) sampled at the pixel nodes of f.
inline ScalarField compose(const ScalarField& f, const Warp& t) {
    const auto& g = f.geometry();
    if (g.domain != t.domain()) throw ConfigError("compose: field and warp domains differ");
    ScalarField out(g, f.boundary_value());
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j < g.nx; ++j) {
            const Point p = g.node(j, k);
            out(j, k) = eval_field(f, p + warp_displacement(t, p));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Invertibility

/// Corners of mapped quadrant (j, k) in counter-clockwise order.
inline std::array<Point, 4> mapped_quadrant(const Warp& t, std::size_t j, std::size_t k) {
    return {t.mapped(j, k), t.mapped(j + 1, k), t.mapped(j + 1, k + 1), t.mapped(j, k + 1)};
}

/// Smallest corner turn (cross product of consecutive edges) of a
/// counter-clockwise quadrilateral. Positive iff strictly convex and
/// orientation-preserving.
inline double min_corner_turn(const std::array<Point, 4>& q) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < 4; ++c) {
        const Point prev = q[(c + 3) % 4], cur = q[c], next = q[(c + 1) % 4];
        m = std::min(m, cross(cur - prev, next - cur));
    }
    return m;
}

/// First quadrant (j, k) whose image is not strictly convex, if any.
inline std::optional<std::pair<std::size_t, std::size_t>> first_nonconvex_quadrant(const Warp& t) {
    for (std::size_t k = 0; k < t.cells(); ++k)
        for (std::size_t j = 0; j < t.cells(); ++j)
            if (!(min_corner_turn(mapped_quadrant(t, j, k)) > 0.0)) return std::pair{j, k};
    return std::nullopt;
}

/// True iff every mapped quadrant is strictly convex, so I+T is one-to-one.
inline bool is_invertible(const Warp& t) { return !first_nonconvex_quadrant(t).has_value() && t.all_finite(); }

/// Invertible and every boundary node is mapped into the closed domain.
inline bool is_admissible(const Warp& t) {
    if (!is_invertible(t)) return false;
    const double tol = 1e-9 * t.domain().diameter();
    Domain grown{t.domain().x0 - tol, t.domain().y0 - tol, t.domain().lx + 2 * tol, t.domain().ly + 2 * tol};
    const std::size_t last = t.cells();
    for (std::size_t a = 0; a <= last; ++a)
        for (auto [j, k] : {std::pair{a, std::size_t{0}}, std::pair{a, last}, std::pair{std::size_t{0}, a},
                            std::pair{last, a}})
            if (!grown.contains(t.mapped(j, k))) return false;
    return true;
}

/// Evaluates (I+T)^{-1} by locating the mapped quadrant that contains a
/// point and inverting the bilinear map there analytically. Points with no
/// preimage are sent to the preimage of the nearest point on the image of
/// the domain boundary.
class InverseWarp {
public:
    explicit InverseWarp(const Warp& t) : warp_(t) {
        if (!t.all_finite()) throw NumericalError("invert_warp: warp has non-finite displacements");
        if (auto q = first_nonconvex_quadrant(t))
            throw NumericalError("invert_warp: mapped quadrant (" + std::to_string(q->first) + "," +
                                 std::to_string(q->second) + ") is not convex");
        build_bins();
    }

    [[nodiscard]] const Warp& warp() const { return warp_; }

    Point operator()(Point p) const {
        if (p.x >= lo_.x && p.x <= hi_.x && p.y >= lo_.y && p.y <= hi_.y) {
            const auto bx = bin_of(p.x, lo_.x, bin_w_.x), by = bin_of(p.y, lo_.y, bin_w_.y);
            for (const auto q : bins_[by * nbins_ + bx])
                if (auto r = invert_in(q % warp_.cells(), q / warp_.cells(), p)) return *r;
        }
        return nearest_boundary_preimage(p);
    }

private:
    static constexpr double kParamTol = 1e-10;

    std::size_t bin_of(double v, double lo, double w) const {
        const auto b = static_cast<long>(std::floor((v - lo) / w));
        return static_cast<std::size_t>(std::clamp(b, 0L, static_cast<long>(nbins_) - 1));
    }

    void build_bins() {
        const auto m = warp_.side();
        lo_ = hi_ = warp_.mapped(0, 0);
        for (std::size_t k = 0; k < m; ++k)
            for (std::size_t j = 0; j < m; ++j) {
                const Point p = warp_.mapped(j, k);
                lo_ = {std::min(lo_.x, p.x), std::min(lo_.y, p.y)};
                hi_ = {std::max(hi_.x, p.x), std::max(hi_.y, p.y)};
            }
        const double pad = 1e-12 * warp_.domain().diameter();
        lo_ = lo_ - Point{pad, pad};
        hi_ = hi_ + Point{pad, pad};
        nbins_ = warp_.cells();
        bin_w_ = {(hi_.x - lo_.x) / static_cast<double>(nbins_), (hi_.y - lo_.y) / static_cast<double>(nbins_)};
        bins_.assign(nbins_ * nbins_, {});
        for (std::size_t k = 0; k < warp_.cells(); ++k)
            for (std::size_t j = 0; j < warp_.cells(); ++j) {
                const auto q = mapped_quadrant(warp_, j, k);
                Point qlo = q[0], qhi = q[0];
                for (const auto& c : q) {
                    qlo = {std::min(qlo.x, c.x), std::min(qlo.y, c.y)};
                    qhi = {std::max(qhi.x, c.x), std::max(qhi.y, c.y)};
                }
                const auto bx0 = bin_of(qlo.x - pad, lo_.x, bin_w_.x), bx1 = bin_of(qhi.x + pad, lo_.x, bin_w_.x);
                const auto by0 = bin_of(qlo.y - pad, lo_.y, bin_w_.y), by1 = bin_of(qhi.y + pad, lo_.y, bin_w_.y);
                for (auto by = by0; by <= by1; ++by)
                    for (auto bx = bx0; bx <= bx1; ++bx) bins_[by * nbins_ + bx].push_back(k * warp_.cells() + j);
            }
    }

    // Solves P(s,t) = p on quadrant (j, k) with
    // P = P00 + e s + f t + g s t; returns the preimage if (s,t) is in the cell.
    std::optional<Point> invert_in(std::size_t j, std::size_t k, Point p) const {
        const Point p00 = warp_.mapped(j, k), p10 = warp_.mapped(j + 1, k);
        const Point p01 = warp_.mapped(j, k + 1), p11 = warp_.mapped(j + 1, k + 1);
        const Point e = p10 - p00, f = p01 - p00, g = (p00 - p10) + (p11 - p01), h = p - p00;

        // cross(h - e s - g s t, f + g s) = 0 eliminates t:
        //   cross(e,g) s^2 + (cross(e,f) - cross(h,g)) s - cross(h,f) = 0
        const double qa = cross(e, g), qb = cross(e, f) - cross(h, g), qc = -cross(h, f);
        std::array<double, 2> roots{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
        const double scale = std::abs(cross(e, f));
        if (std::abs(qa) <= 1e-14 * scale) {
            if (qb != 0.0) roots[0] = -qc / qb;
        } else {
            const double disc = qb * qb - 4.0 * qa * qc;
            if (disc < 0.0) return std::nullopt;
            const double sq = std::sqrt(disc);
            const double qq = -0.5 * (qb + std::copysign(sq, qb));
            roots[0] = qq / qa;
            roots[1] = qq != 0.0 ? qc / qq : roots[0];
        }
        for (double s : roots) {
            if (!std::isfinite(s) || s < -kParamTol || s > 1.0 + kParamTol) continue;
            const Point dir = f + s * g;
            const double dd = dot(dir, dir);
            if (dd == 0.0) continue;
            double t = dot(h - s * e, dir) / dd;
            if (t < -kParamTol || t > 1.0 + kParamTol) continue;
            polish(e, f, g, h, s, t);
            s = std::clamp(s, 0.0, 1.0);
            t = std::clamp(t, 0.0, 1.0);
            const Point n = warp_.node(j, k);
            return Point{n.x + s * warp_.spacing_x(), n.y + t * warp_.spacing_y()};
        }
        return std::nullopt;
    }

    // Two Newton steps on the bilinear map to remove rounding from the
    // closed-form root.
    static void polish(Point e, Point f, Point g, Point h, double& s, double& t) {
        for (int it = 0; it < 2; ++it) {
            const Point r = (s * e + t * f + (s * t) * g) - h;
            const Point js = e + t * g, jt = f + s * g;
            const double det = cross(js, jt);
            if (det == 0.0) return;
            s -= cross(r, jt) / det;
            t -= cross(js, r) / det;
        }
    }

    Point nearest_boundary_preimage(Point p) const {
        const std::size_t last = warp_.cells();
        double best = std::numeric_limits<double>::infinity();
        Point result = warp_.node(0, 0);
        auto visit = [&](std::size_t ja, std::size_t ka, std::size_t jb, std::size_t kb) {
            const Point a = warp_.mapped(ja, ka), b = warp_.mapped(jb, kb);
            const Point ab = b - a;
            const double len2 = dot(ab, ab);
            const double s = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
            const double d = norm(p - (a + s * ab));
            if (d < best) {
                best = d;
                const Point oa = warp_.node(ja, ka), ob = warp_.node(jb, kb);
                result = oa + s * (ob - oa);
            }
        };
        for (std::size_t a = 0; a < last; ++a) {
            visit(a, 0, a + 1, 0);
            visit(a, last, a + 1, last);
            visit(0, a, 0, a + 1);
            visit(last, a, last, a + 1);
        }
        return result;
    }

    Warp warp_;
    Point lo_, hi_, bin_w_;
    std::size_t nbins_ = 1;
    std::vector<std::vector<std::size_t>> bins_;
};

inline InverseWarp invert_warp(const Warp& t) { return InverseWarp(t); }

// ---------------------------------------------------------------------------
// Grid hierarchy

/// Samples T at the nodes of the coarser grid D_level (a subset of T's nodes).
inline Warp restrict_warp(const Warp& t, int level) {
    if (level < 1 || level > t.level()) throw ConfigError("restrict_warp: invalid target level " + std::to_string(level));
    const std::size_t step = std::size_t{1} << (t.level() - level);
    Warp out(level, t.domain());
    for (std::size_t k = 0; k < out.side(); ++k)
        for (std::size_t j = 0; j < out.side(); ++j) out.set_displacement(j, k, t.displacement(j * step, k * step));
    return out;
}

/// Bilinear interpolation of T onto the finer grid D_level.
inline Warp interp_warp(const Warp& t, int level) {
    if (level < t.level() || level > 20) throw ConfigError("interp_warp: invalid target level " + std::to_string(level));
    Warp out(level, t.domain());
    const double ratio = static_cast<double>(t.cells()) / static_cast<double>(out.cells());
    for (std::size_t k = 0; k < out.side(); ++k)
        for (std::size_t j = 0; j < out.side(); ++j) {
            const auto [cj, fx] = detail::locate(static_cast<double>(j) * ratio, t.side());
            const auto [ck, fy] = detail::locate(static_cast<double>(k) * ratio, t.side());
            const Point a = t.displacement(cj, ck), b = t.displacement(cj + 1, ck);
            const Point c = t.displacement(cj, ck + 1), d = t.displacement(cj + 1, ck + 1);
            out.set_displacement(j, k, {detail::bilinear(a.x, b.x, c.x, d.x, fx, fy),
                                        detail::bilinear(a.y, b.y, c.y, d.y, fx, fy)});
        }
    return out;
}

}  // namespace morphenkf
