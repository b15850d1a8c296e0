#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace contopt {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using Index = Eigen::Index;

/// Kind of a variable block in a conic program.
///
/// A rotated second-order cone of dimension d >= 3 is laid out as
/// (x_1, ..., x_{d-2}, y, z) and contains the points with x'x <= y z,
/// y >= 0, z >= 0.
enum class BlockKind : std::uint8_t { Free, Orthant, RotatedSoc };

struct ConeBlock {
  BlockKind kind = BlockKind::Orthant;
  Index dim = 0;

  static ConeBlock free(Index dim) { return {BlockKind::Free, dim}; }
  static ConeBlock orthant(Index dim) { return {BlockKind::Orthant, dim}; }
  static ConeBlock rotated_soc(Index dim) {
    if (dim < 3) throw std::invalid_argument("rotated-soc block needs dimension >= 3");
    return {BlockKind::RotatedSoc, dim};
  }
};

/// True iff `point` lies in the block's cone up to slack `tol`.
/// Free blocks accept everything.
inline bool cone_membership(const Eigen::Ref<const Vector>& point, const ConeBlock& block,
                            double tol = 0.0) {
  if (point.size() != block.dim) throw std::invalid_argument("cone_membership: dimension mismatch");
  switch (block.kind) {
    case BlockKind::Free:
      return true;
    case BlockKind::Orthant:
      return (point.array() >= -tol).all();
    case BlockKind::RotatedSoc: {
      const Index d = block.dim;
      const double y = point[d - 2];
      const double z = point[d - 1];
      const double xx = point.head(d - 2).squaredNorm();
      return y >= -tol && z >= -tol && xx <= y * z + tol;
    }
  }
  return false;
}

/// Membership in the dual cone. The orthant is self-dual; the dual of
/// the rotated cone {x'x <= yz} is {x'x <= 4yz} in the same layout.
inline bool dual_cone_membership(const Eigen::Ref<const Vector>& point, const ConeBlock& block,
                                 double tol = 0.0) {
  if (point.size() != block.dim) throw std::invalid_argument("dual_cone_membership: dimension mismatch");
  switch (block.kind) {
    case BlockKind::Free:
      return point.lpNorm<Eigen::Infinity>() <= tol;
    case BlockKind::Orthant:
      return (point.array() >= -tol).all();
    case BlockKind::RotatedSoc: {
      const Index d = block.dim;
      const double y = point[d - 2];
      const double z = point[d - 1];
      const double xx = point.head(d - 2).squaredNorm();
      return y >= -tol && z >= -tol && xx <= 4.0 * y * z + tol;
    }
  }
  return false;
}

/// Embeds a rotated-cone point into plain second-order-cone coordinates:
/// (x, y, z) -> (y+z, y-z, 2x). Membership x'x <= yz, y,z >= 0 holds iff
/// the image satisfies first >= norm(rest).
inline Vector rotated_to_soc(const Eigen::Ref<const Vector>& x, double y, double z) {
  Vector out(x.size() + 2);
  out[0] = y + z;
  out[1] = y - z;
  out.tail(x.size()) = 2.0 * x;
  return out;
}

/// A conic program in standard primal form:
///
///     minimize    objective' v
///     subject to  equality_matrix v = equality_rhs
///                 v in B_1 x B_2 x ... (per `blocks`)
///
/// Blocks partition the variable vector in order; every variable index
/// belongs to exactly one block.
struct ConicProgram {
  Vector objective;
  SparseMatrix equality_matrix;  // rows x cols, cols == objective.size()
  Vector equality_rhs;
  std::vector<ConeBlock> blocks;

  // Optional diagnostic labels.
  std::vector<std::string> row_names;
  std::vector<std::string> col_names;

  Index num_vars() const { return objective.size(); }
  Index num_rows() const { return equality_rhs.size(); }

  /// Throws std::invalid_argument when the block layout or matrix shapes
  /// are inconsistent.
  void validate() const {
    Index total = 0;
    for (const auto& b : blocks) {
      if (b.dim < 1) throw std::invalid_argument("ConicProgram: block with dimension < 1");
      if (b.kind == BlockKind::RotatedSoc && b.dim < 3)
        throw std::invalid_argument("ConicProgram: rotated-soc block with dimension < 3");
      total += b.dim;
    }
    if (total != num_vars())
      throw std::invalid_argument("ConicProgram: blocks do not cover the variable vector");
    if (equality_matrix.cols() != num_vars())
      throw std::invalid_argument("ConicProgram: equality matrix column count mismatch");
    if (equality_matrix.rows() != num_rows())
      throw std::invalid_argument("ConicProgram: equality rhs length mismatch");
  }

  /// True iff `v` lies in the cone product up to `tol`.
  bool is_cone_feasible(const Eigen::Ref<const Vector>& v, double tol) const {
    Index at = 0;
    for (const auto& b : blocks) {
      if (!cone_membership(v.segment(at, b.dim), b, tol)) return false;
      at += b.dim;
    }
    return true;
  }

  /// Worst cone violation of `v` over all blocks (0 when feasible).
  double cone_violation(const Eigen::Ref<const Vector>& v, bool dual = false) const {
    double worst = 0.0;
    Index at = 0;
    for (const auto& b : blocks) {
      const auto seg = v.segment(at, b.dim);
      switch (b.kind) {
        case BlockKind::Free:
          if (dual) worst = std::max(worst, seg.lpNorm<Eigen::Infinity>());
          break;
        case BlockKind::Orthant:
          worst = std::max(worst, std::max(0.0, -seg.minCoeff()));
          break;
        case BlockKind::RotatedSoc: {
          const double y = seg[b.dim - 2];
          const double z = seg[b.dim - 1];
          const double xx = seg.head(b.dim - 2).squaredNorm();
          const double scale = dual ? 4.0 : 1.0;
          worst = std::max(worst, std::max(0.0, -y));
          worst = std::max(worst, std::max(0.0, -z));
          worst = std::max(worst, std::max(0.0, xx - scale * std::max(y, 0.0) * std::max(z, 0.0)));
          break;
        }
      }
      at += b.dim;
    }
    return worst;
  }
};

/// Row-wise view of a (column-major) sparse matrix.
inline std::vector<std::vector<std::pair<Index, double>>> rows_of(const SparseMatrix& m) {
  std::vector<std::vector<std::pair<Index, double>>> rows(static_cast<size_t>(m.rows()));
  for (Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      rows[static_cast<size_t>(it.row())].emplace_back(it.col(), it.value());
  return rows;
}

/// Writes a plain-text dump of the program: objective, triplet-form
/// equality matrix, rhs and block layout. Meant for diffing against an
/// external solver's input.
inline void dump_program(const ConicProgram& p, std::ostream& os) {
  os << "vars " << p.num_vars() << " rows " << p.num_rows() << "\n";
  os << "blocks";
  for (const auto& b : p.blocks) {
    const char* k = b.kind == BlockKind::Free ? "free" : b.kind == BlockKind::Orthant ? "orthant" : "rsoc";
    os << " " << k << ":" << b.dim;
  }
  os << "\nobjective";
  for (Index i = 0; i < p.objective.size(); ++i)
    if (p.objective[i] != 0.0) os << " " << i << ":" << p.objective[i];
  os << "\nmatrix\n";
  for (int k = 0; k < p.equality_matrix.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(p.equality_matrix, k); it; ++it)
      os << it.row() << " " << it.col() << " " << it.value() << "\n";
  os << "rhs";
  for (Index i = 0; i < p.equality_rhs.size(); ++i) os << " " << p.equality_rhs[i];
  os << "\n";
}

/// Incremental builder for ConicProgram: append blocks, then rows as
/// (column, coefficient) lists.
class ProgramBuilder {
 public:
  /// Appends a block; returns the index of its first variable.
  Index add_block(ConeBlock b) {
    Index at = num_vars_;
    blocks_.push_back(b);
    num_vars_ += b.dim;
    objective_.resize(num_vars_, 0.0);
    return at;
  }
  Index add_free(Index dim) { return add_block(ConeBlock::free(dim)); }
  Index add_orthant(Index dim) { return add_block(ConeBlock::orthant(dim)); }
  Index add_rotated_soc(Index dim) { return add_block(ConeBlock::rotated_soc(dim)); }

  void set_objective(Index col, double coeff) { objective_.at(static_cast<size_t>(col)) = coeff; }
  void add_objective(Index col, double coeff) { objective_.at(static_cast<size_t>(col)) += coeff; }

  /// Appends an equality row sum(coeff_i * v_{col_i}) = rhs; returns row index.
  Index add_row(std::initializer_list<std::pair<Index, double>> entries, double rhs) {
    Index r = num_rows_++;
    for (const auto& [col, coeff] : entries) triplets_.emplace_back(static_cast<int>(r), static_cast<int>(col), coeff);
    rhs_.push_back(rhs);
    return r;
  }
  Index begin_row(double rhs) {
    rhs_.push_back(rhs);
    return num_rows_++;
  }
  void row_entry(Index row, Index col, double coeff) {
    triplets_.emplace_back(static_cast<int>(row), static_cast<int>(col), coeff);
  }

  Index num_vars() const { return num_vars_; }
  Index num_rows() const { return num_rows_; }

  ConicProgram build() const {
    ConicProgram p;
    p.objective = Eigen::Map<const Vector>(objective_.data(), static_cast<Index>(objective_.size()));
    p.equality_rhs = Eigen::Map<const Vector>(rhs_.data(), static_cast<Index>(rhs_.size()));
    p.equality_matrix.resize(num_rows_, num_vars_);
    p.equality_matrix.setFromTriplets(triplets_.begin(), triplets_.end());
    p.blocks = blocks_;
    p.validate();
    return p;
  }

 private:
  Index num_vars_ = 0;
  Index num_rows_ = 0;
  std::vector<ConeBlock> blocks_;
  std::vector<double> objective_;
  std::vector<double> rhs_;
  std::vector<Triplet> triplets_;
};

/// Extends an existing program with new blocks and rows. Existing
/// variable and row indices are preserved (blocks and rows append).
class ProgramExtender {
 public:
  explicit ProgramExtender(const ConicProgram& p) : blocks_(p.blocks) {
    num_vars_ = p.num_vars();
    num_rows_ = p.num_rows();
    objective_.assign(p.objective.data(), p.objective.data() + p.num_vars());
    rhs_.assign(p.equality_rhs.data(), p.equality_rhs.data() + p.num_rows());
    triplets_.reserve(static_cast<size_t>(p.equality_matrix.nonZeros()));
    for (Index k = 0; k < p.equality_matrix.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(p.equality_matrix, k); it; ++it)
        triplets_.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  }

  Index add_block(ConeBlock b) {
    Index at = num_vars_;
    blocks_.push_back(b);
    num_vars_ += b.dim;
    objective_.resize(static_cast<size_t>(num_vars_), 0.0);
    return at;
  }
  Index add_orthant(Index dim) { return add_block(ConeBlock::orthant(dim)); }
  Index add_free(Index dim) { return add_block(ConeBlock::free(dim)); }

  void set_objective(Index col, double coeff) { objective_.at(static_cast<size_t>(col)) = coeff; }

  Index add_row(std::initializer_list<std::pair<Index, double>> entries, double rhs) {
    Index r = num_rows_++;
    for (const auto& [col, coeff] : entries)
      triplets_.emplace_back(static_cast<int>(r), static_cast<int>(col), coeff);
    rhs_.push_back(rhs);
    return r;
  }
  Index begin_row(double rhs) {
    rhs_.push_back(rhs);
    return num_rows_++;
  }
  void row_entry(Index row, Index col, double coeff) {
    triplets_.emplace_back(static_cast<int>(row), static_cast<int>(col), coeff);
  }

  Index num_vars() const { return num_vars_; }

  ConicProgram build() const {
    ConicProgram p;
    p.objective = Eigen::Map<const Vector>(objective_.data(), static_cast<Index>(objective_.size()));
    p.equality_rhs = Eigen::Map<const Vector>(rhs_.data(), static_cast<Index>(rhs_.size()));
    p.equality_matrix.resize(num_rows_, num_vars_);
    p.equality_matrix.setFromTriplets(triplets_.begin(), triplets_.end());
    p.blocks = blocks_;
    p.validate();
    return p;
  }

 private:
  Index num_vars_ = 0;
  Index num_rows_ = 0;
  std::vector<ConeBlock> blocks_;
  std::vector<double> objective_;
  std::vector<double> rhs_;
  std::vector<Triplet> triplets_;
};

}  // namespace contopt
