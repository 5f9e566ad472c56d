#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfco/errors.hpp"
#include "mfco/fft.hpp"
#include "mfco/shape.hpp"

namespace mfco {

using Vec = std::vector<double>;
using CSpan = std::span<const double>;
using MSpan = std::span<double>;
using SpMat = Eigen::SparseMatrix<double>;

/* Counts explicit matrix materializations (coefficient extraction).
 * Matrix-free code paths must leave this untouched. */
std::uint64_t materialization_count();
void reset_materialization_count();

class LinOp;
using LinOpPtr = std::shared_ptr<const LinOp>;

/* A linear operator packaged with algorithms for applying it and its
 * adjoint, plus the parameter data both algorithms need.
 *
 * Operators are immutable after construction and safe to share across
 * threads; concurrent apply calls are safe as long as each call brings
 * its own scratch workspace. forward/adjoint never allocate: any
 * workspace beyond inputs and outputs comes from `scratch`, whose
 * required size is declared up front by scratch_size().
 */
class LinOp {
public:
  virtual ~LinOp() = default;

  const std::string& kind() const { return kind_; }
  const std::vector<Shape>& in_shapes() const { return in_shapes_; }
  const std::vector<Shape>& out_shapes() const { return out_shapes_; }
  std::size_t in_total() const { return total_size(in_shapes_); }
  std::size_t out_total() const { return total_size(out_shapes_); }

  /* Workspace requirement in doubles (scratch_bytes() for raw size). */
  std::size_t scratch_size() const { return scratch_; }
  std::size_t scratch_bytes() const { return scratch_ * sizeof(double); }

  /* True when an input edge and an output edge of this node may share
   * one buffer (the operator reads each cell before overwriting it). */
  bool inplace_safe() const { return inplace_; }

  virtual bool is_identity() const { return false; }

  /* inputs conform to in_shapes, outputs to out_shapes. */
  virtual void forward(std::span<const CSpan> in, std::span<const MSpan> out,
                       MSpan scratch) const = 0;
  /* inputs conform to out_shapes, outputs to in_shapes. */
  virtual void adjoint(std::span<const CSpan> in, std::span<const MSpan> out,
                       MSpan scratch) const = 0;

  /* The adjoint map as an operator of the same catalog: forward and
   * adjoint algorithms swapped, shapes reversed. */
  virtual LinOpPtr adjoint_op() const = 0;

  /* Sparse matrix D with D vec(x_i) = vec(out_j) when all other inputs
   * are zero. This is an explicit materialization and counts as one. */
  SpMat coeff(std::size_t in_idx, std::size_t out_idx) const;

  /* Same operator family with identical parameter data. */
  virtual bool same_op(const LinOp& other) const {
    return kind_ == other.kind_ && in_shapes_ == other.in_shapes_ &&
           out_shapes_ == other.out_shapes_;
  }

protected:
  LinOp(std::string kind, std::vector<Shape> in_shapes,
        std::vector<Shape> out_shapes, std::size_t scratch = 0,
        bool inplace = false)
      : kind_(std::move(kind)),
        in_shapes_(std::move(in_shapes)),
        out_shapes_(std::move(out_shapes)),
        scratch_(scratch),
        inplace_(inplace) {}

  virtual SpMat coeff_impl(std::size_t in_idx, std::size_t out_idx) const = 0;

  /* Column-by-column materialization through forward(); for operators
   * whose matrix has no simpler closed form. */
  SpMat coeff_by_columns(std::size_t in_idx, std::size_t out_idx) const;

private:
  std::string kind_;
  std::vector<Shape> in_shapes_;
  std::vector<Shape> out_shapes_;
  std::size_t scratch_;
  bool inplace_;
};

/* Shape-checked convenience wrappers; allocate outputs and scratch. */
std::vector<Vec> apply_forward(const LinOp& op, const std::vector<Vec>& inputs);
std::vector<Vec> apply_adjoint(const LinOp& op, const std::vector<Vec>& inputs);

enum class ConvVariant { Column, Row, Circular };

LinOpPtr make_scalar_mult(double alpha, const Shape& shape);
LinOpPtr make_identity(const Shape& shape);
LinOpPtr make_dense_mult(Eigen::MatrixXd a);
LinOpPtr make_sparse_mult(SpMat a);
LinOpPtr make_sparse_mult(const std::vector<Eigen::Triplet<double>>& entries,
                          std::size_t rows, std::size_t cols);
LinOpPtr make_low_rank_mult(Eigen::MatrixXd b, Eigen::MatrixXd c);

/* Real-embedded unitary DFT: vectors of length 2p, or 2p-by-q matrices
 * (real part in the top p rows, imaginary part in the bottom p rows).
 * Extents must be powers of two. */
LinOpPtr make_dft(const Shape& shape);

LinOpPtr make_conv(ConvVariant variant, Vec kernel, std::size_t n);
LinOpPtr make_conv2(ConvVariant variant, Eigen::MatrixXd kernel, std::size_t s,
                    std::size_t t);

/* Orthonormal cascade transform on length-2^p vectors; default filters
 * are the Haar pair. Circular boundary handling. */
LinOpPtr make_dwt(std::size_t n, std::size_t levels);
LinOpPtr make_dwt(std::size_t n, std::size_t levels, Vec g, Vec h);
/* Separable Haar transform on 2^p-by-2^p matrices. */
LinOpPtr make_dwt2(std::size_t n, std::size_t levels);

LinOpPtr make_vec(std::size_t rows, std::size_t cols);
LinOpPtr make_mat(std::size_t rows, std::size_t cols);

/* X (p-by-q) -> A X B (s-by-t); multiplication order picked by flop
 * count. */
LinOpPtr make_matrix_product(Eigen::MatrixXd a, Eigen::MatrixXd b);

LinOpPtr make_sum(std::size_t k, const Shape& shape);
LinOpPtr make_copy(std::size_t k, const Shape& shape);
LinOpPtr make_vstack(std::vector<Shape> parts);
LinOpPtr make_split(std::vector<Shape> parts);

/* x -> L^{-1} x by forward substitution; adjoint by backward
 * substitution. L must be lower triangular with nonzero diagonal. */
LinOpPtr make_tri_solve(SpMat lower);

/* Multiplication by an implicit m-by-n matrix whose entries stream
 * from a counter-based generator in column-major order, uniform on
 * (-1, 1). Nothing is stored beyond the seed. */
LinOpPtr make_prng_matrix(std::uint64_t seed, std::size_t m, std::size_t n);

LinOpPtr make_zero(const Shape& in, const Shape& out);

}  // namespace mfco
