#pragma once

// Automatic registration: find a warp T with v ~ u o (I+T) by minimizing
//
//   J(T) = |v - u o (I+T)|_1 + C1 |T|_1 + C2 |grad T|_1
//
// coarse to fine over the morphing grids D_1 ... D_M, one node at a time.
//
// All integrals are taken in coordinates normalized to the unit square: a
// point (x, y) of the domain maps to ((x-x0)/Lx, (y-y0)/Ly) and displacements
// are divided by the same extents. This makes the weights C1, C2 independent
// of the physical size of the domain.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "morphenkf/error.hpp"
#include "morphenkf/field.hpp"

namespace morphenkf {

struct RegistrationConfig {
    int levels = 4;  // M, finest morphing grid is (2^M+1)^2
    // Penalty weights in normalized coordinates ([0,1]^2 domain).
    double c1 = 1000.0;
    double c2 = 100.0;
    int max_sweeps = 5;
    double rel_improvement_tol = 1e-3;
    double residual_inf_tol = 1.0;  // field units, measured on the raw fields
    int search_points_per_segment = 2;
    int coord_descent_iters = 3;

    void validate() const {
        if (levels < 1 || levels > 12) throw ConfigError("reg.levels must be in [1, 12]");
        if (c1 < 0.0 || c2 < 0.0) throw ConfigError("reg.C1 and reg.C2 must be non-negative");
        if (max_sweeps < 1) throw ConfigError("reg.max_sweeps must be >= 1");
        if (!(rel_improvement_tol > 0.0) || !(residual_inf_tol > 0.0))
            throw ConfigError("registration tolerances must be positive");
        if (search_points_per_segment < 0) throw ConfigError("reg.search_points must be >= 0");
        if (coord_descent_iters < 0) throw ConfigError("reg.coord_descent_iters must be >= 0");
    }
};

/// Raw terms of J; C1 and C2 enter only through `total`.
struct ObjectiveBreakdown {
    double residual_norm = 0.0;
    double warp_norm = 0.0;
    double grad_norm = 0.0;
    double total = 0.0;
};

namespace detail {

// Neumaier compensated summation.
class Accumulator {
public:
    void add(double v) {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    [[nodiscard]] double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double trapezoid_weight(std::size_t i, std::size_t n) { return (i == 0 || i + 1 == n) ? 0.5 : 1.0; }

// Gaussian weights of one output node against the extended index range
// [-(n-1), 2n], normalized so that their squares sum to one. Returns the
// weights on [0, n) and the total weight of the nodes outside the domain.
struct Kernel1D {
    std::vector<double> inside;   // n x n, row = output node
    std::vector<double> outside;  // n
    std::size_t n = 0;
};

inline Kernel1D gaussian_kernel(std::size_t n, double alpha) {
    Kernel1D k;
    k.n = n;
    k.inside.assign(n * n, 0.0);
    k.outside.assign(n, 0.0);
    const double h = 1.0 / static_cast<double>(n - 1);
    const long lo = -static_cast<long>(n) + 1, hi = 2 * static_cast<long>(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double xj = static_cast<double>(j) * h;
        double sq = 0.0;
        for (long jp = lo; jp <= hi; ++jp) {
            const double d = xj - static_cast<double>(jp) * h;
            const double w = std::exp(-d * d / alpha);
            sq += w * w;
        }
        const double c = 1.0 / std::sqrt(sq);
        double out = 0.0;
        for (long jp = lo; jp <= hi; ++jp) {
            const double d = xj - static_cast<double>(jp) * h;
            const double w = c * std::exp(-d * d / alpha);
            if (jp >= 0 && jp < static_cast<long>(n))
                k.inside[j * n + static_cast<std::size_t>(jp)] = w;
            else
                out += w;
        }
        k.outside[j] = out;
    }
    return k;
}

}  // namespace detail

/// Smoothing width used on grid D_level, in normalized coordinates.
inline double smoothing_alpha(int level) { return 0.25 / (std::ldexp(1.0, level) + 1.0); }

/// Separable Gaussian smoothing of u for use on grid D_level. Values outside
/// the domain are the boundary value; kernels are normalized so the squared
/// weights sum to one over the extended index range
/// (a constant image is therefore scaled, not preserved).
inline ScalarField smooth(const ScalarField& u, int level) {
    if (level < 1) throw ConfigError("smooth: level must be >= 1");
    const auto& g = u.geometry();
    const double alpha = smoothing_alpha(level);
    const auto kx = detail::gaussian_kernel(g.nx, alpha);
    const auto ky = detail::gaussian_kernel(g.ny, alpha);
    const double b = u.boundary_value();

    // Pass along x for every row inside the domain.
    std::vector<double> rows(g.size());
    for (std::size_t k = 0; k < g.ny; ++k) {
        const double* src = &u.values()[k * g.nx];
        for (std::size_t j = 0; j < g.nx; ++j) {
            const double* w = &kx.inside[j * g.nx];
            double s = b * kx.outside[j];
            for (std::size_t jp = 0; jp < g.nx; ++jp) s += w[jp] * src[jp];
            rows[k * g.nx + j] = s;
        }
    }
    // Rows outside the domain are constant: b times the full x-weight.
    ScalarField out(g, b);
    std::vector<double> col(g.ny);
    for (std::size_t j = 0; j < g.nx; ++j) {
        double full_x = kx.outside[j];
        for (std::size_t jp = 0; jp < g.nx; ++jp) full_x += kx.inside[j * g.nx + jp];
        for (std::size_t kp = 0; kp < g.ny; ++kp) col[kp] = rows[kp * g.nx + j];
        for (std::size_t k = 0; k < g.ny; ++k) {
            const double* w = &ky.inside[k * g.ny];
            double s = b * full_x * ky.outside[k];
            for (std::size_t kp = 0; kp < g.ny; ++kp) s += w[kp] * col[kp];
            out(j, k) = s;
        }
    }
    return out;
}

namespace detail {

// Normalized-gradient integrand at morphing node (a, b): forward differences,
// backward at the last row/column.
inline double grad_integrand(const Warp& t, std::size_t a, std::size_t b) {
    const std::size_t last = t.cells();
    const double hn = 1.0 / static_cast<double>(t.cells());
    const double lx = t.domain().lx, ly = t.domain().ly;
    const std::size_t a0 = a == last ? a - 1 : a, b0 = b == last ? b - 1 : b;
    const Point dx = t.displacement(a0 + 1, b) - t.displacement(a0, b);
    const Point dy = t.displacement(a, b0 + 1) - t.displacement(a, b0);
    return (std::abs(dx.x) / lx + std::abs(dy.x) / lx + std::abs(dx.y) / ly + std::abs(dy.y) / ly) / hn;
}

inline double warp_integrand(const Warp& t, std::size_t a, std::size_t b) {
    const Point d = t.displacement(a, b);
    return std::abs(d.x) / t.domain().lx + std::abs(d.y) / t.domain().ly;
}

inline double node_area(const Warp& t, std::size_t a, std::size_t b) {
    const double hn = 1.0 / static_cast<double>(t.cells());
    return hn * hn * trapezoid_weight(a, t.side()) * trapezoid_weight(b, t.side());
}

inline double pixel_area(const GridGeometry& g, std::size_t j, std::size_t k) {
    return trapezoid_weight(j, g.nx) * trapezoid_weight(k, g.ny) / static_cast<double>((g.nx - 1) * (g.ny - 1));
}

}  // namespace detail

/// J_i(T, u, v) for a warp on grid D_i and fields on the pixel grid.
inline ObjectiveBreakdown objective(const Warp& t, const ScalarField& u, const ScalarField& v,
                                    const RegistrationConfig& cfg) {
    const auto& g = u.geometry();
    if (g != v.geometry()) throw ConfigError("objective: fields have different geometry");
    if (g.domain != t.domain()) throw ConfigError("objective: warp and field domains differ");
    detail::Accumulator res, wn, gn;
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j < g.nx; ++j) {
            const Point p = g.node(j, k);
            res.add(detail::pixel_area(g, j, k) * std::abs(v(j, k) - eval_field(u, p + warp_displacement(t, p))));
        }
    for (std::size_t b = 0; b < t.side(); ++b)
        for (std::size_t a = 0; a < t.side(); ++a) {
            const double w = detail::node_area(t, a, b);
            wn.add(w * detail::warp_integrand(t, a, b));
            gn.add(w * detail::grad_integrand(t, a, b));
        }
    ObjectiveBreakdown o{res.value(), wn.value(), gn.value(), 0.0};
    o.total = o.residual_norm + cfg.c1 * o.warp_norm + cfg.c2 * o.grad_norm;
    return o;
}

/// max over pixel nodes of |v - u o (I+T)|.
inline double residual_inf_norm(const Warp& t, const ScalarField& u, const ScalarField& v) {
    const auto& g = u.geometry();
    double m = 0.0;
    for (std::size_t k = 0; k < g.ny; ++k)
        for (std::size_t j = 0; j < g.nx; ++j) {
            const Point p = g.node(j, k);
            m = std::max(m, std::abs(v(j, k) - eval_field(u, p + warp_displacement(t, p))));
        }
    return m;
}

namespace detail {

// Half-plane {p : dot(normal, p) + offset >= 0} with a unit normal.
struct HalfPlane {
    Point normal;
    double offset = 0.0;
    [[nodiscard]] double distance(Point p) const { return dot(normal, p) + offset; }
};

// Local optimization of one morphing node. Holds the pixels whose warped
// position depends on the node and the feasible region that keeps every
// adjacent mapped quadrant strictly convex.
class NodeProblem {
public:
    NodeProblem(const Warp& t, std::size_t a, std::size_t b, const ScalarField& us, const ScalarField& vs,
                const RegistrationConfig& cfg)
        : t_(t), a_(a), b_(b), us_(us), cfg_(cfg) {
        gather_pixels(vs);
        build_constraints();
    }

    [[nodiscard]] Point position() const { return t_.mapped(a_, b_); }

    // Local part of J with the node mapped to `q`.
    [[nodiscard]] double local(Point q) {
        ++evaluations;
        const Point d = q - t_.node(a_, b_);
        double res = 0.0;
        for (const auto& px : pixels_) {
            const Point pos = px.rest + px.hat * d;
            res += px.area * std::abs(px.target - eval_field(us_, pos));
        }
        const Point saved = t_.displacement(a_, b_);
        t_.set_displacement(a_, b_, d);
        double wsum = node_area(t_, a_, b_) * warp_integrand(t_, a_, b_);
        double gsum = 0.0;
        for (std::size_t bb = lo(b_); bb <= hi(b_); ++bb)
            for (std::size_t aa = lo(a_); aa <= hi(a_); ++aa) gsum += node_area(t_, aa, bb) * grad_integrand(t_, aa, bb);
        t_.set_displacement(a_, b_, saved);
        return res + cfg_.c1 * wsum + cfg_.c2 * gsum;
    }

    [[nodiscard]] bool feasible(Point q) const {
        if (!t_.domain().contains(q)) return false;
        for (const auto& h : planes_)
            if (h.distance(q) < margin_) return false;
        return true;
    }

    // Parameter interval {s : q + s*dir feasible}; empty if lo > hi.
    [[nodiscard]] std::pair<double, double> line_interval(Point q, Point dir) const {
        double lo_s = -std::numeric_limits<double>::infinity(), hi_s = std::numeric_limits<double>::infinity();
        auto clip = [&](double slope, double value) {  // value + slope*s >= 0
            if (slope > 0.0)
                lo_s = std::max(lo_s, -value / slope);
            else if (slope < 0.0)
                hi_s = std::min(hi_s, -value / slope);
            else if (value < 0.0)
                hi_s = -std::numeric_limits<double>::infinity();
        };
        for (const auto& h : planes_) clip(dot(h.normal, dir), h.distance(q) - margin_);
        const Domain& d = t_.domain();
        clip(dir.x, q.x - d.x0);
        clip(-dir.x, d.x0 + d.lx - q.x);
        clip(dir.y, q.y - d.y0);
        clip(-dir.y, d.y0 + d.ly - q.y);
        return {lo_s, hi_s};
    }

    // Neighbour pairs (prev, next) of the node in each adjacent quadrant.
    [[nodiscard]] const std::vector<std::pair<Point, Point>>& sectors() const { return sectors_; }

    long evaluations = 0;

private:
    struct Pixel {
        Point rest;  // warped position with the node's own contribution removed
        double hat = 0.0;
        double area = 0.0;
        double target = 0.0;
    };

    std::size_t lo(std::size_t i) const { return i == 0 ? 0 : i - 1; }
    std::size_t hi(std::size_t i) const { return std::min(i + 1, t_.cells()); }

    void gather_pixels(const ScalarField& vs) {
        const auto& g = us_.geometry();
        const Domain& d = g.domain;
        const double sx = t_.spacing_x(), sy = t_.spacing_y();
        const double xa = t_.node(a_, b_).x, yb = t_.node(a_, b_).y;
        auto range = [](double lo_v, double hi_v, double origin, double h, std::size_t n) {
            const double eps = 1e-9;
            long first = static_cast<long>(std::ceil((lo_v - origin) / h - eps));
            long last = static_cast<long>(std::floor((hi_v - origin) / h + eps));
            first = std::max(first, 0L);
            last = std::min(last, static_cast<long>(n) - 1);
            return std::pair{first, last};
        };
        const auto [j0, j1] = range(xa - sx, xa + sx, d.x0, g.hx(), g.nx);
        const auto [k0, k1] = range(yb - sy, yb + sy, d.y0, g.hy(), g.ny);
        const Point dnode = t_.displacement(a_, b_);
        for (long k = k0; k <= k1; ++k)
            for (long j = j0; j <= j1; ++j) {
                const auto uj = static_cast<std::size_t>(j), uk = static_cast<std::size_t>(k);
                const Point p = g.node(uj, uk);
                const double hat = std::max(0.0, 1.0 - std::abs(p.x - xa) / sx) *
                                   std::max(0.0, 1.0 - std::abs(p.y - yb) / sy);
                if (hat <= 0.0) continue;
                const Point rest = p + warp_displacement(t_, p) - hat * dnode;
                pixels_.push_back({rest, hat, pixel_area(g, uj, uk), vs(uj, uk)});
            }
    }

    // Every corner turn of every adjacent quadrant that involves the node is
    // affine in the node position.
    void build_constraints() {
        const Point me = t_.mapped(a_, b_);
        Point lo_p = me, hi_p = me;
        for (std::size_t kk = (b_ == 0 ? 0 : b_ - 1); kk < std::min(b_ + 1, t_.cells()); ++kk)
            for (std::size_t jj = (a_ == 0 ? 0 : a_ - 1); jj < std::min(a_ + 1, t_.cells()); ++jj) {
                const std::array<std::pair<std::size_t, std::size_t>, 4> idx{
                    {{jj, kk}, {jj + 1, kk}, {jj + 1, kk + 1}, {jj, kk + 1}}};
                std::array<Point, 4> q{};
                int mine = -1;
                for (int c = 0; c < 4; ++c) {
                    q[c] = t_.mapped(idx[c].first, idx[c].second);
                    if (idx[c].first == a_ && idx[c].second == b_) mine = c;
                    lo_p = {std::min(lo_p.x, q[c].x), std::min(lo_p.y, q[c].y)};
                    hi_p = {std::max(hi_p.x, q[c].x), std::max(hi_p.y, q[c].y)};
                }
                sectors_.emplace_back(q[(mine + 3) % 4], q[(mine + 1) % 4]);
                for (int c = 0; c < 4; ++c) {
                    const Point prev = q[(c + 3) % 4], cur = q[c], next = q[(c + 1) % 4];
                    Point grad;
                    double off = 0.0;
                    if (c == mine) {  // cross(A-P, N-A)
                        const Point v = next - prev;
                        grad = {v.y, -v.x};
                        off = -cross(prev, next);
                    } else if ((c + 3) % 4 == mine) {  // node is prev: cross(C-A, N-C)
                        const Point w = next - cur;
                        grad = {-w.y, w.x};
                        off = cross(cur, w);
                    } else if ((c + 1) % 4 == mine) {  // node is next: cross(C-P, A-C)
                        const Point u = cur - prev;
                        grad = {-u.y, u.x};
                        off = -cross(u, cur);
                    } else {
                        continue;
                    }
                    const double len = norm(grad);
                    if (len == 0.0) continue;
                    planes_.push_back({(1.0 / len) * grad, off / len});
                }
            }
        margin_ = 1e-3 * norm(hi_p - lo_p);
    }

    Warp t_;
    std::size_t a_, b_;
    const ScalarField& us_;
    const RegistrationConfig& cfg_;
    std::vector<Pixel> pixels_;
    std::vector<HalfPlane> planes_;
    std::vector<std::pair<Point, Point>> sectors_;
    double margin_ = 0.0;
};

// Golden-section search for the minimum of f on [lo, hi]; returns the best
// parameter evaluated and its value.
template <class F>
std::pair<double, double> golden_section(F&& f, double lo, double hi, double tol, int max_iter) {
    constexpr double inv_phi = 0.6180339887498949;
    double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    double best_x = f1 <= f2 ? x1 : x2, best_f = std::min(f1, f2);
    for (int it = 0; it < max_iter && (hi - lo) > tol; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
            if (f1 < best_f) best_f = f1, best_x = x1;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
            if (f2 < best_f) best_f = f2, best_x = x2;
        }
    }
    return {best_x, best_f};
}

struct NodeResult {
    Point position;
    bool moved = false;
    long evaluations = 0;
};

// Pattern search over a triangular grid in each adjacent sector followed by
// coordinate descent. The node moves only if the local objective drops by
// more than `min_gain`.
inline NodeResult optimize_node_position(const Warp& t, std::size_t a, std::size_t b, const ScalarField& us,
                                         const ScalarField& vs, const RegistrationConfig& cfg, double min_gain) {
    NodeProblem prob(t, a, b, us, vs, cfg);
    const Point start = prob.position();
    const double f_start = prob.local(start);
    Point best = start;
    double f_best = f_start;
    auto consider = [&](Point q) {
        if (!prob.feasible(q)) return;
        const double fq = prob.local(q);
        if (fq < f_best) f_best = fq, best = q;
    };

    const int p = cfg.search_points_per_segment;
    for (const auto& [m1, m2] : prob.sectors())
        for (int row = 1; row <= p; ++row) {
            const double frac = static_cast<double>(row) / static_cast<double>(p + 1);
            const Point e1 = start + frac * (m1 - start), e2 = start + frac * (m2 - start);
            for (int c = 0; c <= row; ++c) consider(e1 + (static_cast<double>(c) / row) * (e2 - e1));
        }

    const double tol = us.geometry().hx() / 100.0;
    for (int it = 0; it < cfg.coord_descent_iters; ++it)
        for (const Point dir : {Point{1.0, 0.0}, Point{0.0, 1.0}}) {
            const auto [lo, hi] = prob.line_interval(best, dir);
            if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) continue;
            const Point origin = best;
            auto f = [&](double s) { return prob.local(origin + s * dir); };
            const auto [s, fs] = golden_section(f, lo, hi, tol, 20);
            const Point q = origin + s * dir;
            if (fs < f_best && prob.feasible(q)) f_best = fs, best = q;
        }

    NodeResult r{start, false, prob.evaluations};
    if (f_best < f_start - min_gain) r.position = best, r.moved = true;
    return r;
}

}  // namespace detail

/// Adjusts one node of T to decrease J_i; the node stays put when no
/// improvement is found. Adjacent mapped quadrants stay strictly convex.
inline Warp optimize_node(const Warp& t, std::size_t j, std::size_t k, const ScalarField& us, const ScalarField& vs,
                          const RegistrationConfig& cfg) {
    if (j >= t.side() || k >= t.side()) throw ConfigError("optimize_node: node index outside the grid");
    const double min_gain = 1e-10 * objective(t, us, vs, cfg).total;
    const auto r = detail::optimize_node_position(t, j, k, us, vs, cfg, min_gain);
    Warp out = t;
    if (r.moved) out.set_displacement(j, k, r.position - t.node(j, k));
    return out;
}

struct SweepRecord {
    int level = 0;
    int sweep = 0;
    double objective = 0.0;
    double residual_inf = 0.0;
    std::string stop;  // "none", "residual", "rel_improvement", "max_sweeps"
};

struct RegistrationReport {
    std::vector<SweepRecord> sweeps;
    long node_visits = 0;
    long node_moves = 0;
    long objective_evaluations = 0;
    std::vector<std::string> notes;

    [[nodiscard]] std::string to_text() const {
        std::ostringstream os;
        os.precision(10);
        for (const auto& s : sweeps)
            os << "level=" << s.level << " sweep=" << s.sweep << " J=" << s.objective << " r_norm=" << s.residual_inf
               << " stop=" << s.stop << '\n';
        for (const auto& n : notes) os << "note: " << n << '\n';
        return os.str();
    }
};

struct RegistrationResult {
    Warp warp;
    RegistrationReport report;
};

/// Called after every node visit with the warp before and after the update.
struct NodeUpdate {
    int level;
    int sweep;
    std::size_t j;
    std::size_t k;
    const Warp& before;
    const Warp& after;
    const ScalarField& u_smooth;
    const ScalarField& v_smooth;
};
using NodeObserver = std::function<void(const NodeUpdate&)>;

/// Smoothed copies of a field for levels 1..M (index 0 is level 1).
using Pyramid = std::vector<ScalarField>;

inline Pyramid smooth_pyramid(const ScalarField& u, int levels) {
    Pyramid p;
    p.reserve(static_cast<std::size_t>(levels));
    for (int i = 1; i <= levels; ++i) p.push_back(smooth(u, i));
    return p;
}

namespace detail {

inline Warp start_level(int level, const Warp& guess_fine, const std::optional<Warp>& coarse, RegistrationReport& rep) {
    Warp t = restrict_warp(guess_fine, level);
    if (coarse) t = add_scaled(t, 1.0, interp_warp(add_scaled(*coarse, -1.0, restrict_warp(guess_fine, level - 1)), level));
    if (is_admissible(t)) return t;
    if (coarse) {
        rep.notes.push_back("level " + std::to_string(level) + ": corrected guess not invertible, using coarse warp");
        t = interp_warp(*coarse, level);
        if (is_admissible(t)) return t;
    }
    rep.notes.push_back("level " + std::to_string(level) + ": starting from zero warp");
    return Warp(level, guess_fine.domain());
}

}  // namespace detail

/// Registration with a precomputed smoothing pyramid of u.
inline RegistrationResult register_fields(const ScalarField& u, const Pyramid& u_smooth, const ScalarField& v,
                                          const std::optional<Warp>& initial, const RegistrationConfig& cfg,
                                          const NodeObserver& observer = {}) {
    cfg.validate();
    if (u.geometry() != v.geometry()) throw ConfigError("register: u and v have different geometry");
    if (u_smooth.size() != static_cast<std::size_t>(cfg.levels)) throw ConfigError("register: pyramid depth mismatch");
    const Domain& dom = u.geometry().domain;
    Warp guess(cfg.levels, dom);
    if (initial) {
        if (initial->domain() != dom) throw ConfigError("register: initial warp domain differs");
        guess = initial->level() >= cfg.levels ? restrict_warp(*initial, cfg.levels) : interp_warp(*initial, cfg.levels);
    }

    RegistrationResult result{Warp(cfg.levels, dom), {}};
    auto& rep = result.report;
    std::optional<Warp> coarse;
    for (int level = 1; level <= cfg.levels; ++level) {
        const ScalarField& us = u_smooth[static_cast<std::size_t>(level - 1)];
        const ScalarField vs = smooth(v, level);
        Warp t = detail::start_level(level, guess, coarse, rep);
        double j_prev = objective(t, us, vs, cfg).total;
        for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
            const double min_gain = 1e-10 * j_prev;
            for (std::size_t j = 0; j < t.side(); ++j)
                for (std::size_t k = 0; k < t.side(); ++k) {
                    const auto r = detail::optimize_node_position(t, j, k, us, vs, cfg, min_gain);
                    ++rep.node_visits;
                    rep.objective_evaluations += r.evaluations;
                    if (observer) {
                        const Warp before = t;
                        if (r.moved) t.set_displacement(j, k, r.position - t.node(j, k));
                        observer(NodeUpdate{level, sweep, j, k, before, t, us, vs});
                    } else if (r.moved) {
                        t.set_displacement(j, k, r.position - t.node(j, k));
                    }
                    if (r.moved) ++rep.node_moves;
                }
            const double j_now = objective(t, us, vs, cfg).total;
            const double r_inf = residual_inf_norm(t, u, v);
            SweepRecord rec{level, sweep, j_now, r_inf, "none"};
            if (r_inf < cfg.residual_inf_tol)
                rec.stop = "residual";
            else if (j_prev <= 0.0 || (j_prev - j_now) / j_prev < cfg.rel_improvement_tol)
                rec.stop = "rel_improvement";
            else if (sweep == cfg.max_sweeps)
                rec.stop = "max_sweeps";
            rep.sweeps.push_back(rec);
            j_prev = j_now;
            if (rec.stop != "none") break;
        }
        coarse = t;
    }
    result.warp = *coarse;
    if (auto q = first_nonconvex_quadrant(result.warp))
        throw NumericalError("register: result not invertible at quadrant (" + std::to_string(q->first) + "," +
                             std::to_string(q->second) + ")");
    return result;
}

/// Finds T with v ~ u o (I+T), starting from `initial` (zero if absent).
inline RegistrationResult register_fields(const ScalarField& u, const ScalarField& v,
                                          const std::optional<Warp>& initial, const RegistrationConfig& cfg,
                                          const NodeObserver& observer = {}) {
    cfg.validate();
    return register_fields(u, smooth_pyramid(u, cfg.levels), v, initial, cfg, observer);
}

}  // namespace morphenkf
