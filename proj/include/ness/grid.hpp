#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ness {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct SolverError : Error {
    using Error::Error;
};
struct AdmissibilityError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};

/// Uniform mesh of the torus [0,1)^dim with m_q points per dimension.
struct PeriodicGrid {
    int dim = 1;
    int m_q = 0;
    double h_q = 0.0;

    PeriodicGrid() = default;
    PeriodicGrid(int dim_, int m_q_) : dim(dim_), m_q(m_q_), h_q(1.0 / m_q_) {
        if (dim_ != 1 && dim_ != 2) throw DimensionError("PeriodicGrid: dim must be 1 or 2");
        if (m_q_ < 3) throw DimensionError("PeriodicGrid: m_q must be >= 3");
    }

    std::size_t size() const {
        return dim == 1 ? std::size_t(m_q) : std::size_t(m_q) * std::size_t(m_q);
    }
    double node(int i) const { return i * h_q; }
    int wrap(int i) const { return ((i % m_q) + m_q) % m_q; }
};

/// Truncated momentum axis [-p_max, p_max], m_p nodes including the two
/// Dirichlet endpoints. Fields carried on this axis vanish at j = 0 and
/// j = m_p - 1; only interior nodes are degrees of freedom.
struct MomentumGrid {
    double p_max = 0.0;
    int m_p = 0;
    double h_p = 0.0;

    MomentumGrid() = default;
    MomentumGrid(double p_max_, int m_p_)
        : p_max(p_max_), m_p(m_p_), h_p(2.0 * p_max_ / (m_p_ - 1)) {
        if (m_p_ < 5) throw DimensionError("MomentumGrid: m_p must be >= 5");
        if (p_max_ <= 0) throw DimensionError("MomentumGrid: p_max must be > 0");
    }

    double node(int j) const { return -p_max + j * h_p; }
    int interior() const { return m_p - 2; }
};

/// Tensor grid for one position coordinate times the truncated momentum
/// axis. The full row-major flattening (i,j) -> i*m_p + j includes the
/// Dirichlet boundary nodes; solvers act on the interior flattening only.
struct PhaseGrid {
    PeriodicGrid position;
    MomentumGrid momentum;

    std::size_t flat_size() const {
        return std::size_t(position.m_q) * std::size_t(momentum.m_p);
    }
    std::size_t flat_index(int i, int j) const { return std::size_t(i) * momentum.m_p + j; }
};

/// Runtime handle over the three grid layouts. Degrees of freedom exclude
/// Dirichlet momentum boundary nodes; all grids are immutable once built.
class Grid {
public:
    enum class Kind { periodic1d, periodic2d, phase };

    static Grid periodic1d(int m_q) {
        Grid g;
        g.kind_ = Kind::periodic1d;
        g.pos_ = PeriodicGrid(1, m_q);
        return g;
    }
    static Grid periodic2d(int m_q) {
        Grid g;
        g.kind_ = Kind::periodic2d;
        g.pos_ = PeriodicGrid(2, m_q);
        return g;
    }
    static Grid phase(int m_q, int m_p, double p_max) {
        Grid g;
        g.kind_ = Kind::phase;
        g.pos_ = PeriodicGrid(1, m_q);
        g.mom_ = MomentumGrid(p_max, m_p);
        return g;
    }

    Kind kind() const { return kind_; }
    const PeriodicGrid& position() const { return pos_; }
    const MomentumGrid& momentum() const { return mom_; }
    bool is_phase() const { return kind_ == Kind::phase; }
    int dim() const { return kind_ == Kind::periodic2d ? 2 : 1; }

    /// Number of degrees of freedom (interior nodes only in momentum).
    std::size_t dof() const {
        switch (kind_) {
            case Kind::periodic1d: return pos_.size();
            case Kind::periodic2d: return pos_.size();
            case Kind::phase: return std::size_t(pos_.m_q) * mom_.interior();
        }
        return 0;
    }

    double cell_volume() const {
        switch (kind_) {
            case Kind::periodic1d: return pos_.h_q;
            case Kind::periodic2d: return pos_.h_q * pos_.h_q;
            case Kind::phase: return pos_.h_q * mom_.h_p;
        }
        return 0.0;
    }

    // Coordinates of dof k. For periodic2d the flattening is row-major
    // (i,j) -> i*m_q + j; for phase grids (i,j) -> i*(m_p-2) + j over
    // interior momentum nodes j=1..m_p-2 of the full axis.
    double q1(std::size_t k) const {
        switch (kind_) {
            case Kind::periodic1d: return pos_.node(int(k));
            case Kind::periodic2d: return pos_.node(int(k) / pos_.m_q);
            case Kind::phase: return pos_.node(int(k) / mom_.interior());
        }
        return 0.0;
    }
    double q2(std::size_t k) const {
        if (kind_ != Kind::periodic2d) throw DimensionError("q2: grid is not 2d");
        return pos_.node(int(k) % pos_.m_q);
    }
    double p(std::size_t k) const {
        if (kind_ != Kind::phase) throw DimensionError("p: grid has no momentum axis");
        return mom_.node(1 + int(k) % mom_.interior());
    }

    std::size_t dof_index(int i, int j) const {
        switch (kind_) {
            case Kind::periodic2d: return std::size_t(i) * pos_.m_q + j;
            case Kind::phase: return std::size_t(i) * mom_.interior() + (j - 1);
            default: throw DimensionError("dof_index: grid is one-dimensional");
        }
    }

    bool operator==(const Grid& o) const {
        return kind_ == o.kind_ && pos_.m_q == o.pos_.m_q && pos_.dim == o.pos_.dim &&
               mom_.m_p == o.mom_.m_p && mom_.p_max == o.mom_.p_max;
    }

private:
    Kind kind_ = Kind::periodic1d;
    PeriodicGrid pos_;
    MomentumGrid mom_;
};

enum class FieldTag { none, density, mean_zero };

/// Values of a scalar field at the grid's degrees of freedom.
struct GridFunction {
    const Grid* grid = nullptr;
    Eigen::VectorXd values;
    FieldTag tag = FieldTag::none;

    GridFunction() = default;
    GridFunction(const Grid& g, Eigen::VectorXd v, FieldTag t = FieldTag::none)
        : grid(&g), values(std::move(v)), tag(t) {
        if (std::size_t(values.size()) != g.dof())
            throw DimensionError("GridFunction: value vector does not match grid size");
    }
};

/// Midpoint-rule quadrature: sum of values times the cell volume. Dirichlet
/// boundary nodes carry no cells and are excluded by construction.
inline double quadrature(const Grid& grid, const Eigen::VectorXd& values) {
    if (std::size_t(values.size()) != grid.dof())
        throw DimensionError("quadrature: vector length does not match grid");
    return values.sum() * grid.cell_volume();
}

inline double quadrature(const GridFunction& f) {
    if (!f.grid) throw DimensionError("quadrature: unbound grid function");
    return quadrature(*f.grid, f.values);
}

/// Sample an analytic field at every dof.
template <typename F>
Eigen::VectorXd sample(const Grid& grid, F&& f) {
    Eigen::VectorXd v(grid.dof());
    switch (grid.kind()) {
        case Grid::Kind::periodic1d:
            for (std::size_t k = 0; k < grid.dof(); ++k) v[long(k)] = f(grid.q1(k), 0.0);
            break;
        case Grid::Kind::periodic2d:
            for (std::size_t k = 0; k < grid.dof(); ++k) v[long(k)] = f(grid.q1(k), grid.q2(k));
            break;
        case Grid::Kind::phase:
            for (std::size_t k = 0; k < grid.dof(); ++k) v[long(k)] = f(grid.q1(k), grid.p(k));
            break;
    }
    return v;
}

/// Sentinel for a Dirichlet neighbor outside the interior unknowns.
inline constexpr std::ptrdiff_t dirichlet_sentinel = -1;

/// +/- neighbors of flat index k per axis, periodic wrap in position and
/// the Dirichlet sentinel past the last interior momentum node.
inline std::vector<std::ptrdiff_t> index_neighbors(const Grid& grid, std::size_t k) {
    if (k >= grid.dof()) throw DimensionError("index_neighbors: index out of range");
    std::vector<std::ptrdiff_t> out;
    switch (grid.kind()) {
        case Grid::Kind::periodic1d: {
            int m = grid.position().m_q;
            int i = int(k);
            out = {std::ptrdiff_t(grid.position().wrap(i - 1)),
                   std::ptrdiff_t(grid.position().wrap(i + 1))};
            // keep (-,+) per-axis ordering: report as {i-1, i+1}
            (void)m;
            break;
        }
        case Grid::Kind::periodic2d: {
            int m = grid.position().m_q;
            int i = int(k) / m, j = int(k) % m;
            auto id = [&](int a, int b) {
                return std::ptrdiff_t(grid.dof_index(grid.position().wrap(a), grid.position().wrap(b)));
            };
            out = {id(i - 1, j), id(i + 1, j), id(i, j - 1), id(i, j + 1)};
            break;
        }
        case Grid::Kind::phase: {
            int ni = grid.momentum().interior();
            int i = int(k) / ni, j = int(k) % ni;  // j over interior, 0-based
            auto qid = [&](int a) { return std::ptrdiff_t(std::size_t(grid.position().wrap(a)) * ni + j); };
            std::ptrdiff_t pm = j - 1 >= 0 ? std::ptrdiff_t(k) - 1 : dirichlet_sentinel;
            std::ptrdiff_t pp = j + 1 < ni ? std::ptrdiff_t(k) + 1 : dirichlet_sentinel;
            out = {qid(i - 1), qid(i + 1), pm, pp};
            break;
        }
    }
    return out;
}

}  // namespace ness
