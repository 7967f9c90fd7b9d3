#pragma once

// Conic program container in the standard form
//
//   min c'x   s.t.  A x + s = b,  s in K,
//
// where K is a product of zero, nonnegative, second-order, PSD (svec) and
// 3-d power cones. Constraints are entered as affine expressions; rows can
// be tagged with a group name so dual multipliers can be pulled out later.

#include "evdro/common.hpp"

#include <Eigen/Sparse>

#include <map>
#include <utility>
#include <vector>

namespace evdro {

enum class Cone { Zero, Nonnegative, SecondOrder, PSD, Power3D };

struct ConeBlock {
    Cone cone;
    int row = 0;       // first row of the block
    int dim = 0;       // rows in the block (svec length for PSD)
    int mat_dim = 0;   // side length for PSD blocks
    double alpha = 0;  // Power3D exponent parameter
};

// Sparse affine expression: sum coef_i * x_i + constant.
struct LinExpr {
    std::vector<std::pair<int, double>> terms;
    double constant = 0.0;

    LinExpr() = default;
    /*implicit*/ LinExpr(double c) : constant(c) {}

    static LinExpr variable(int idx, double coef = 1.0) {
        LinExpr e;
        e.terms.emplace_back(idx, coef);
        return e;
    }

    LinExpr& operator+=(const LinExpr& o) {
        terms.insert(terms.end(), o.terms.begin(), o.terms.end());
        constant += o.constant;
        return *this;
    }
    LinExpr& operator-=(const LinExpr& o) {
        for (const auto& [i, v] : o.terms) terms.emplace_back(i, -v);
        constant -= o.constant;
        return *this;
    }
    LinExpr& operator*=(double f) {
        for (auto& [i, v] : terms) v *= f;
        constant *= f;
        return *this;
    }
    friend LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
    friend LinExpr operator-(LinExpr a, const LinExpr& b) { return a -= b; }
    friend LinExpr operator*(double f, LinExpr e) { return e *= f; }
    friend LinExpr operator-(LinExpr e) { return e *= -1.0; }
};

struct VarBlock {
    int offset = 0;
    int rows = 0;
    int cols = 1;
};

inline int svec_len(int p) { return p * (p + 1) / 2; }
inline constexpr double kSqrt2 = 1.4142135623730951;

class ConicProgram {
public:
    int add_variables(const std::string& name, int rows, int cols = 1) {
        if (vars_.count(name)) throw Error("ConicProgram: duplicate variable block " + name);
        VarBlock b{n_, rows, cols};
        vars_[name] = b;
        n_ += rows * cols;
        return b.offset;
    }

    bool has_block(const std::string& name) const { return vars_.count(name) != 0; }

    const VarBlock& block(const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw Error("ConicProgram: unknown variable block " + name);
        return it->second;
    }

    // column-major within a block
    int var(const std::string& name, int i, int j = 0) const {
        const VarBlock& b = block(name);
        if (i < 0 || i >= b.rows || j < 0 || j >= b.cols)
            throw DimensionError("ConicProgram: variable index out of range in " + name);
        return b.offset + j * b.rows + i;
    }

    LinExpr x(const std::string& name, int i, int j = 0) const {
        return LinExpr::variable(var(name, i, j));
    }

    void set_objective(const LinExpr& e) {
        obj_ = e;
    }

    // expr == 0
    void add_zero(const LinExpr& e, const std::string& group = "") {
        begin_block(Cone::Zero, 1, group);
        push_row(e);
    }

    // expr >= 0
    void add_nonneg(const LinExpr& e, const std::string& group = "") {
        begin_block(Cone::Nonnegative, 1, group);
        push_row(e);
    }

    // e[0] >= || (e[1], ..., e[d-1]) ||_2
    void add_soc(const std::vector<LinExpr>& e, const std::string& group = "") {
        if (e.size() < 2) throw DimensionError("ConicProgram: SOC needs dimension >= 2");
        begin_block(Cone::SecondOrder, static_cast<int>(e.size()), group);
        for (const auto& row : e) push_row(row);
    }

    // symmetric matrix of expressions, PSD; stored as scaled lower triangle
    void add_psd(const std::vector<std::vector<LinExpr>>& M, const std::string& group = "") {
        const int p = static_cast<int>(M.size());
        for (const auto& row : M)
            if (static_cast<int>(row.size()) != p)
                throw DimensionError("ConicProgram: PSD block must be square");
        begin_block(Cone::PSD, svec_len(p), group);
        blocks_.back().mat_dim = p;
        for (int j = 0; j < p; ++j)
            for (int i = j; i < p; ++i) {
                LinExpr e = M[static_cast<size_t>(i)][static_cast<size_t>(j)];
                if (i != j) e *= kSqrt2;
                push_row(e);
            }
    }

    // x^alpha * y^(1-alpha) >= |z|, x,y >= 0
    void add_power(const LinExpr& px, const LinExpr& py, const LinExpr& pz, double alpha,
                   const std::string& group = "") {
        if (!(alpha > 0.0 && alpha < 1.0))
            throw DomainError("ConicProgram: power cone exponent must be in (0,1)");
        begin_block(Cone::Power3D, 3, group);
        blocks_.back().alpha = alpha;
        push_row(px);
        push_row(py);
        push_row(pz);
    }

    int num_vars() const { return n_; }
    int num_rows() const { return m_; }
    const std::vector<ConeBlock>& cone_blocks() const { return blocks_; }
    const LinExpr& objective() const { return obj_; }

    Eigen::SparseMatrix<double> matrix() const {
        Eigen::SparseMatrix<double> A(m_, n_);
        A.setFromTriplets(trips_.begin(), trips_.end());
        return A;
    }

    Vec rhs() const {
        Vec b(m_);
        for (int i = 0; i < m_; ++i) b(i) = b_[static_cast<size_t>(i)];
        return b;
    }

    Vec cost() const {
        Vec c = Vec::Zero(n_);
        for (const auto& [i, v] : obj_.terms) c(i) += v;
        return c;
    }

    double cost_constant() const { return obj_.constant; }

    const std::map<std::string, std::vector<int>>& groups() const { return groups_; }

    std::vector<int> group_rows(const std::string& name) const {
        auto it = groups_.find(name);
        if (it == groups_.end()) throw Error("ConicProgram: unknown constraint group " + name);
        return it->second;
    }

    const std::map<std::string, VarBlock>& var_blocks() const { return vars_; }

private:
    void begin_block(Cone cone, int dim, const std::string& group) {
        blocks_.push_back(ConeBlock{cone, m_, dim, 0, 0.0});
        if (!group.empty())
            for (int r = 0; r < dim; ++r) groups_[group].push_back(m_ + r);
    }

    // row:  s_row = b_row - A_row x  must equal the expression
    void push_row(const LinExpr& e) {
        for (const auto& [i, v] : e.terms) {
            if (i < 0 || i >= n_) throw DimensionError("ConicProgram: expression references unregistered variable");
            if (v != 0.0) trips_.emplace_back(m_, i, -v);
        }
        b_.push_back(e.constant);
        ++m_;
    }

    int n_ = 0;
    int m_ = 0;
    LinExpr obj_;
    std::vector<Eigen::Triplet<double>> trips_;
    std::vector<double> b_;
    std::vector<ConeBlock> blocks_;
    std::map<std::string, VarBlock> vars_;
    std::map<std::string, std::vector<int>> groups_;
};

// svec <-> symmetric matrix (off-diagonals scaled by sqrt(2) so the packed
// inner product matches the Frobenius one)
inline Mat svec_to_mat(const Eigen::Ref<const Vec>& s, int p) {
    Mat M(p, p);
    int idx = 0;
    for (int j = 0; j < p; ++j)
        for (int i = j; i < p; ++i) {
            const double v = (i == j) ? s(idx) : s(idx) / kSqrt2;
            M(i, j) = v;
            M(j, i) = v;
            ++idx;
        }
    return M;
}

inline Vec mat_to_svec(const Mat& M) {
    const int p = static_cast<int>(M.rows());
    Vec s(svec_len(p));
    int idx = 0;
    for (int j = 0; j < p; ++j)
        for (int i = j; i < p; ++i) {
            s(idx) = (i == j) ? M(i, j) : kSqrt2 * 0.5 * (M(i, j) + M(j, i));
            ++idx;
        }
    return s;
}

}  // namespace evdro
