#include "mfco/linop.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <unsupported/Eigen/KroneckerProduct>

#include "mfco/rng.hpp"

namespace mfco {

namespace {

std::atomic<std::uint64_t> g_materializations{0};

using EMap = Eigen::Map<Eigen::VectorXd>;
using CEMap = Eigen::Map<const Eigen::VectorXd>;
using MMap = Eigen::Map<Eigen::MatrixXd>;
using CMMap = Eigen::Map<const Eigen::MatrixXd>;

SpMat identity_sparse(std::size_t n, double scale = 1.0) {
  SpMat m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  m.reserve(Eigen::VectorXi::Constant(static_cast<int>(n), 1));
  for (std::size_t i = 0; i < n; ++i)
    m.insert(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = scale;
  m.makeCompressed();
  return m;
}

void copy_span(CSpan src, MSpan dst) {
  assert(src.size() == dst.size());
  if (src.data() == dst.data()) return;
  std::memcpy(dst.data(), src.data(), src.size() * sizeof(double));
}

}  // namespace

std::uint64_t materialization_count() { return g_materializations.load(); }
void reset_materialization_count() { g_materializations.store(0); }

SpMat LinOp::coeff(std::size_t in_idx, std::size_t out_idx) const {
  if (in_idx >= in_shapes().size() || out_idx >= out_shapes().size())
    throw DimensionError("coeff index out of range for " + kind());
  ++g_materializations;
  return coeff_impl(in_idx, out_idx);
}

SpMat LinOp::coeff_by_columns(std::size_t in_idx, std::size_t out_idx) const {
  std::vector<Vec> in;
  for (const Shape& s : in_shapes()) in.emplace_back(s.total(), 0.0);
  std::vector<Vec> out;
  for (const Shape& s : out_shapes()) out.emplace_back(s.total(), 0.0);
  Vec scratch(scratch_size());
  std::vector<CSpan> in_spans(in.begin(), in.end());
  std::vector<MSpan> out_spans(out.begin(), out.end());
  const std::size_t n = in_shapes()[in_idx].total();
  const std::size_t m = out_shapes()[out_idx].total();
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t j = 0; j < n; ++j) {
    in[in_idx][j] = 1.0;
    for (Vec& o : out) std::fill(o.begin(), o.end(), 0.0);
    forward(in_spans, out_spans, MSpan(scratch));
    in[in_idx][j] = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      if (out[out_idx][i] != 0.0)
        trips.emplace_back(static_cast<int>(i), static_cast<int>(j),
                           out[out_idx][i]);
  }
  SpMat a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  a.setFromTriplets(trips.begin(), trips.end());
  a.makeCompressed();
  return a;
}

std::vector<Vec> apply_forward(const LinOp& op, const std::vector<Vec>& inputs) {
  if (inputs.size() != op.in_shapes().size())
    throw DimensionError(op.kind() + ": expected " +
                         std::to_string(op.in_shapes().size()) + " inputs, got " +
                         std::to_string(inputs.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (inputs[i].size() != op.in_shapes()[i].total())
      throw DimensionError(op.kind() + ": input " + std::to_string(i) +
                           " has length " + std::to_string(inputs[i].size()) +
                           ", expected " + op.in_shapes()[i].str());
  std::vector<Vec> outputs;
  for (const Shape& s : op.out_shapes()) outputs.emplace_back(s.total(), 0.0);
  Vec scratch(op.scratch_size());
  std::vector<CSpan> in_spans(inputs.begin(), inputs.end());
  std::vector<MSpan> out_spans(outputs.begin(), outputs.end());
  op.forward(in_spans, out_spans, MSpan(scratch));
  return outputs;
}

std::vector<Vec> apply_adjoint(const LinOp& op, const std::vector<Vec>& inputs) {
  if (inputs.size() != op.out_shapes().size())
    throw DimensionError(op.kind() + ": adjoint expected " +
                         std::to_string(op.out_shapes().size()) +
                         " inputs, got " + std::to_string(inputs.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (inputs[i].size() != op.out_shapes()[i].total())
      throw DimensionError(op.kind() + ": adjoint input " + std::to_string(i) +
                           " has length " + std::to_string(inputs[i].size()) +
                           ", expected " + op.out_shapes()[i].str());
  std::vector<Vec> outputs;
  for (const Shape& s : op.in_shapes()) outputs.emplace_back(s.total(), 0.0);
  Vec scratch(op.scratch_size());
  std::vector<CSpan> in_spans(inputs.begin(), inputs.end());
  std::vector<MSpan> out_spans(outputs.begin(), outputs.end());
  op.adjoint(in_spans, out_spans, MSpan(scratch));
  return outputs;
}

// ---------------------------------------------------------------------------
// Scalar multiplication (in-place safe; identity when alpha == 1).

namespace {

class ScalarMult final : public LinOp {
public:
  ScalarMult(double alpha, const Shape& shape)
      : LinOp("scalar_mult", {shape}, {shape}, 0, true), alpha_(alpha) {}

  bool is_identity() const override { return alpha_ == 1.0; }

  void forward(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan) const override {
    const CSpan x = in[0];
    const MSpan y = out[0];
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = alpha_ * x[i];
  }

  void adjoint(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan scratch) const override {
    forward(in, out, scratch);
  }

  LinOpPtr adjoint_op() const override {
    return std::make_shared<ScalarMult>(alpha_, in_shapes()[0]);
  }

  bool same_op(const LinOp& other) const override {
    auto* o = dynamic_cast<const ScalarMult*>(&other);
    return o && o->alpha_ == alpha_ && o->in_shapes() == in_shapes();
  }

protected:
  SpMat coeff_impl(std::size_t, std::size_t) const override {
    return identity_sparse(in_total(), alpha_);
  }

private:
  double alpha_;
};

// ---------------------------------------------------------------------------
// Dense, sparse, and factored matrix multiplication.

class DenseMult final : public LinOp {
public:
  explicit DenseMult(Eigen::MatrixXd a)
      : LinOp("dense", {Shape::vector(static_cast<std::size_t>(a.cols()))},
              {Shape::vector(static_cast<std::size_t>(a.rows()))}),
        a_(std::move(a)) {}

  void forward(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan) const override {
    EMap(out[0].data(), a_.rows()).noalias() =
        a_ * CEMap(in[0].data(), a_.cols());
  }

  void adjoint(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan) const override {
    EMap(out[0].data(), a_.cols()).noalias() =
        a_.transpose() * CEMap(in[0].data(), a_.rows());
  }

  LinOpPtr adjoint_op() const override {
    return std::make_shared<DenseMult>(a_.transpose());
  }

  bool same_op(const LinOp& other) const override {
    auto* o = dynamic_cast<const DenseMult*>(&other);
    return o && o->a_.rows() == a_.rows() && o->a_.cols() == a_.cols() &&
           o->a_ == a_;
  }

  const Eigen::MatrixXd& matrix() const { return a_; }

protected:
  SpMat coeff_impl(std::size_t, std::size_t) const override {
    SpMat s = a_.sparseView();
    s.makeCompressed();
    return s;
  }

private:
  Eigen::MatrixXd a_;
};

class SparseMult final : public LinOp {
public:
  explicit SparseMult(SpMat a)
      : LinOp("sparse", {Shape::vector(static_cast<std::size_t>(a.cols()))},
              {Shape::vector(static_cast<std::size_t>(a.rows()))}),
        a_(std::move(a)) {
    a_.makeCompressed();
    at_ = a_.transpose();
    at_.makeCompressed();
  }

  void forward(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan) const override {
    EMap(out[0].data(), a_.rows()).noalias() =
        a_ * CEMap(in[0].data(), a_.cols());
  }

  void adjoint(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan) const override {
    EMap(out[0].data(), at_.rows()).noalias() =
        at_ * CEMap(in[0].data(), at_.cols());
  }

  LinOpPtr adjoint_op() const override {
    return std::make_shared<SparseMult>(at_);
  }

  bool same_op(const LinOp& other) const override {
    auto* o = dynamic_cast<const SparseMult*>(&other);
    if (!o || o->a_.rows() != a_.rows() || o->a_.cols() != a_.cols() ||
        o->a_.nonZeros() != a_.nonZeros())
      return false;
    return std::equal(a_.valuePtr(), a_.valuePtr() + a_.nonZeros(),
                      o->a_.valuePtr()) &&
           std::equal(a_.innerIndexPtr(), a_.innerIndexPtr() + a_.nonZeros(),
                      o->a_.innerIndexPtr()) &&
           std::equal(a_.outerIndexPtr(),
                      a_.outerIndexPtr() + a_.outerSize() + 1,
                      o->a_.outerIndexPtr());
  }

protected:
  SpMat coeff_impl(std::size_t, std::size_t) const override { return a_; }

private:
  SpMat a_, at_;
};

class LowRankMult final : public LinOp {
public:
  LowRankMult(Eigen::MatrixXd b, Eigen::MatrixXd c)
      : LinOp("low_rank", {Shape::vector(static_cast<std::size_t>(c.cols()))},
              {Shape::vector(static_cast<std::size_t>(b.rows()))},
              static_cast<std::size_t>(b.cols())),
        b_(std::move(b)),
        c_(std::move(c)) {
    if (b_.cols() != c_.rows())
      throw DimensionError("low_rank: inconsistent factor dimensions " +
                           std::to_string(b_.cols()) + " vs " +
                           std::to_string(c_.rows()));
  }

  void forward(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan scratch) const override {
    EMap z(scratch.data(), b_.cols());
    z.noalias() = c_ * CEMap(in[0].data(), c_.cols());
    EMap(out[0].data(), b_.rows()).noalias() = b_ * z;
  }

  void adjoint(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan scratch) const override {
    EMap z(scratch.data(), b_.cols());
    z.noalias() = b_.transpose() * CEMap(in[0].data(), b_.rows());
    EMap(out[0].data(), c_.cols()).noalias() = c_.transpose() * z;
  }

  LinOpPtr adjoint_op() const override {
    return std::make_shared<LowRankMult>(c_.transpose(), b_.transpose());
  }

  bool same_op(const LinOp& other) const override {
    auto* o = dynamic_cast<const LowRankMult*>(&other);
    return o && o->b_.rows() == b_.rows() && o->b_.cols() == b_.cols() &&
           o->c_.cols() == c_.cols() && o->b_ == b_ && o->c_ == c_;
  }

protected:
  SpMat coeff_impl(std::size_t, std::size_t) const override {
    SpMat s = (b_ * c_).sparseView();
    s.makeCompressed();
    return s;
  }

private:
  Eigen::MatrixXd b_, c_;
};

// ---------------------------------------------------------------------------
// Real-embedded unitary DFT, 1-D and 2-D.

class Dft final : public LinOp {
public:
  Dft(std::size_t p, bool inverse)
      : LinOp("dft", {Shape::vector(2 * p)}, {Shape::vector(2 * p)}),
        p_(p),
        inverse_(inverse),
        plan_(fft::plan_for(p)) {}

  void forward(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan) const override {
    run(in[0], out[0], inverse_);
  }

  void adjoint(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan) const override {
    run(in[0], out[0], !inverse_);
  }

  LinOpPtr adjoint_op() const override {
    return std::make_shared<Dft>(p_, !inverse_);
  }

  bool same_op(const LinOp& other) const override {
    auto* o = dynamic_cast<const Dft*>(&other);
    return o && o->p_ == p_ && o->inverse_ == inverse_;
  }

protected:
  SpMat coeff_impl(std::size_t, std::size_t) const override {
    const double scale = 1.0 / std::sqrt(static_cast<double>(p_));
    const double sgn = inverse_ ? -1.0 : 1.0;
    Eigen::MatrixXd d(2 * p_, 2 * p_);
    for (std::size_t k = 0; k < p_; ++k)
      for (std::size_t j = 0; j < p_; ++j) {
        const double ang = sgn * -6.283185307179586476925286766559 *
                           static_cast<double>(j * k) / static_cast<double>(p_);
        const double re = std::cos(ang) * scale;
        const double im = std::sin(ang) * scale;
        d(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = re;
        d(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j + p_)) = -im;
        d(static_cast<Eigen::Index>(k + p_), static_cast<Eigen::Index>(j)) = im;
        d(static_cast<Eigen::Index>(k + p_), static_cast<Eigen::Index>(j + p_)) =
            re;
      }
    SpMat s = d.sparseView();
    s.makeCompressed();
    return s;
  }

private:
  void run(CSpan x, MSpan y, bool inv) const {
    copy_span(x, y);
    plan_->transform(y.subspan(0, p_), y.subspan(p_, p_), inv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(p_));
    for (double& v : y) v *= scale;
  }

  std::size_t p_;
  bool inverse_;
  fft::PlanPtr plan_;
};

class Dft2 final : public LinOp {
public:
  Dft2(std::size_t p, std::size_t q, bool inverse)
      : LinOp("dft2", {Shape::matrix(2 * p, q)}, {Shape::matrix(2 * p, q)},
              2 * q),
        p_(p),
        q_(q),
        inverse_(inverse),
        col_plan_(fft::plan_for(p)),
        row_plan_(fft::plan_for(q)) {}

  void forward(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan scratch) const override {
    run(in[0], out[0], scratch, inverse_);
  }

  void adjoint(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan scratch) const override {
    run(in[0], out[0], scratch, !inverse_);
  }

  LinOpPtr adjoint_op() const override {
    return std::make_shared<Dft2>(p_, q_, !inverse_);
  }

  bool same_op(const LinOp& other) const override {
    auto* o = dynamic_cast<const Dft2*>(&other);
    return o && o->p_ == p_ && o->q_ == q_ && o->inverse_ == inverse_;
  }

protected:
  SpMat coeff_impl(std::size_t i, std::size_t j) const override {
    return coeff_by_columns(i, j);
  }

private:
  void run(CSpan x, MSpan y, MSpan scratch, bool inv) const {
    copy_span(x, y);
    const std::size_t ld = 2 * p_;
    // Columns first: real and imaginary halves of a column are contiguous.
    for (std::size_t t = 0; t < q_; ++t)
      col_plan_->transform(y.subspan(t * ld, p_), y.subspan(t * ld + p_, p_),
                           inv);
    // Rows are strided; gather through scratch.
    MSpan rre = scratch.subspan(0, q_);
    MSpan rim = scratch.subspan(q_, q_);
    for (std::size_t s = 0; s < p_; ++s) {
      for (std::size_t t = 0; t < q_; ++t) {
        rre[t] = y[s + t * ld];
        rim[t] = y[s + p_ + t * ld];
      }
      row_plan_->transform(rre, rim, inv);
      for (std::size_t t = 0; t < q_; ++t) {
        y[s + t * ld] = rre[t];
        y[s + p_ + t * ld] = rim[t];
      }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(p_ * q_));
    for (double& v : y) v *= scale;
  }

  std::size_t p_, q_;
  bool inverse_;
  fft::PlanPtr col_plan_, row_plan_;
};

// ---------------------------------------------------------------------------
// Convolution, 1-D. Every variant reduces to the full linear
// convolution: the row form is a contiguous slice of it and the
// circular form folds it, so one padded transform length serves all
// three and any input length works with a radix-2 transform.

struct ConvPlan {
  std::size_t padded = 0;
  fft::PlanPtr plan;
  Vec khat_re, khat_im;  // transform of the zero-padded kernel

  ConvPlan() = default;
  ConvPlan(const Vec& kernel, std::size_t full_len) {
    padded = fft::next_pow2(full_len);
    plan = fft::plan_for(padded);
    khat_re.assign(padded, 0.0);
    khat_im.assign(padded, 0.0);
    std::copy(kernel.begin(), kernel.end(), khat_re.begin());
    plan->transform(khat_re, khat_im, false);
  }

  /* Full linear convolution kernel * x into scratch[0..2*padded);
   * the real half holds the result. */
  void run(CSpan x, MSpan scratch) const {
    MSpan re = scratch.subspan(0, padded);
    MSpan im = scratch.subspan(padded, padded);
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    std::copy(x.begin(), x.end(), re.begin());
    plan->transform(re, im, false);
    const double inv = 1.0 / static_cast<double>(padded);
    for (std::size_t i = 0; i < padded; ++i) {
      const double tr = (re[i] * khat_re[i] - im[i] * khat_im[i]) * inv;
      im[i] = (re[i] * khat_im[i] + im[i] * khat_re[i]) * inv;
      re[i] = tr;
    }
    plan->transform(re, im, true);
  }
};

Vec reversed(const Vec& c) { return Vec(c.rbegin(), c.rend()); }

/* Kernel for the adjoint of circular convolution:
 * (c_1, c_n, c_{n-1}, ..., c_2). */
Vec rotated(const Vec& c) {
  Vec r(c.size());
  r[0] = c[0];
  for (std::size_t k = 1; k < c.size(); ++k) r[k] = c[c.size() - k];
  return r;
}

bool small_kernel(std::size_t kernel_total, std::size_t input_total) {
  return kernel_total <= 32 ||
         kernel_total <= fft::log2_of(fft::next_pow2(input_total));
}

Shape conv1_out_shape(ConvVariant v, std::size_t p, std::size_t n) {
  if (p == 0) throw ValueError("convolution kernel is empty");
  switch (v) {
    case ConvVariant::Column:
      return Shape::vector(n + p - 1);
    case ConvVariant::Row:
      if (p > n)
        throw ValueError("row convolution: kernel longer than input (" +
                         std::to_string(p) + " > " + std::to_string(n) + ")");
      return Shape::vector(n - p + 1);
    case ConvVariant::Circular:
      if (p != n)
        throw DimensionError(
            "circular convolution: kernel and input lengths differ");
      return Shape::vector(n);
  }
  throw ValueError("bad convolution variant");
}

std::size_t conv1_full_len(ConvVariant v, std::size_t p, std::size_t n) {
  return v == ConvVariant::Circular ? 2 * n - 1 : n + p - 1;
}

std::size_t conv1_scratch(ConvVariant v, std::size_t p, std::size_t n) {
  return small_kernel(p, n) ? 0 : 2 * fft::next_pow2(conv1_full_len(v, p, n));
}

class Conv1 final : public LinOp {
public:
  Conv1(ConvVariant v, Vec kernel, std::size_t n)
      : LinOp(v == ConvVariant::Column   ? "conv_col"
              : v == ConvVariant::Row    ? "conv_row"
                                         : "conv_circ",
              {Shape::vector(n)}, {conv1_out_shape(v, kernel.size(), n)},
              conv1_scratch(v, kernel.size(), n)),
        variant_(v),
        kernel_(std::move(kernel)),
        adj_kernel_(variant_ == ConvVariant::Circular ? rotated(kernel_)
                                                      : reversed(kernel_)),
        n_(n),
        p_(kernel_.size()),
        full_(conv1_full_len(v, p_, n)),
        direct_(small_kernel(p_, n_)) {
    if (!direct_) {
      fwd_ = ConvPlan(kernel_, full_);
      adj_ = ConvPlan(adj_kernel_, full_);
    }
  }

  void forward(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan scratch) const override {
    const CSpan x = in[0];
    const MSpan y = out[0];
    switch (variant_) {
      case ConvVariant::Column:
        if (direct_) {
          direct_col(kernel_, x, y);
        } else {
          fwd_.run(x, scratch);
          std::copy_n(scratch.begin(), y.size(), y.begin());
        }
        break;
      case ConvVariant::Row:
        // contiguous slice [p-1, n) of the full convolution with the
        // reversed kernel
        if (direct_) {
          direct_row(kernel_, x, y);
        } else {
          adj_.run(x, scratch);
          std::copy_n(scratch.begin() + static_cast<long>(p_ - 1), y.size(),
                      y.begin());
        }
        break;
      case ConvVariant::Circular:
        if (direct_) {
          direct_circ(kernel_, x, y);
        } else {
          fwd_.run(x, scratch);
          fold(scratch, y);
        }
        break;
    }
  }

  void adjoint(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan scratch) const override {
    const CSpan u = in[0];
    const MSpan v = out[0];
    switch (variant_) {
      case ConvVariant::Column:
        // row convolution with the reversed kernel
        if (direct_) {
          direct_row(adj_kernel_, u, v);
        } else {
          adj_.run(u, scratch);
          std::copy_n(scratch.begin() + static_cast<long>(p_ - 1), v.size(),
                      v.begin());
        }
        break;
      case ConvVariant::Row:
        // column convolution with the reversed kernel
        if (direct_) {
          direct_col(adj_kernel_, u, v);
        } else {
          adj_.run(u, scratch);
          std::copy_n(scratch.begin(), v.size(), v.begin());
        }
        break;
      case ConvVariant::Circular:
        // circular convolution with the rotated kernel
        if (direct_) {
          direct_circ(adj_kernel_, u, v);
        } else {
          adj_.run(u, scratch);
          fold(scratch, v);
        }
        break;
    }
  }

  LinOpPtr adjoint_op() const override {
    switch (variant_) {
      case ConvVariant::Column:
        return std::make_shared<Conv1>(ConvVariant::Row, adj_kernel_,
                                       n_ + p_ - 1);
      case ConvVariant::Row:
        return std::make_shared<Conv1>(ConvVariant::Column, adj_kernel_,
                                       n_ - p_ + 1);
      case ConvVariant::Circular:
        return std::make_shared<Conv1>(ConvVariant::Circular, adj_kernel_, n_);
    }
    throw ValueError("bad convolution variant");
  }

  bool same_op(const LinOp& other) const override {
    auto* o = dynamic_cast<const Conv1*>(&other);
    return o && o->variant_ == variant_ && o->n_ == n_ && o->kernel_ == kernel_;
  }

protected:
  SpMat coeff_impl(std::size_t, std::size_t) const override {
    std::vector<Eigen::Triplet<double>> trips;
    switch (variant_) {
      case ConvVariant::Column:
        for (std::size_t j = 0; j < n_; ++j)
          for (std::size_t i = 0; i < p_; ++i)
            trips.emplace_back(static_cast<int>(i + j), static_cast<int>(j),
                               kernel_[i]);
        break;
      case ConvVariant::Row:
        for (std::size_t k = 0; k + p_ <= n_ + 1 && k < n_ - p_ + 1; ++k)
          for (std::size_t i = 0; i < p_; ++i)
            trips.emplace_back(static_cast<int>(k),
                               static_cast<int>(k + p_ - 1 - i), kernel_[i]);
        break;
      case ConvVariant::Circular:
        for (std::size_t j = 0; j < n_; ++j)
          for (std::size_t i = 0; i < p_; ++i)
            trips.emplace_back(static_cast<int>((i + j) % n_),
                               static_cast<int>(j), kernel_[i]);
        break;
    }
    SpMat a(static_cast<Eigen::Index>(out_total()),
            static_cast<Eigen::Index>(n_));
    a.setFromTriplets(trips.begin(), trips.end());
    a.makeCompressed();
    return a;
  }

private:
  static void direct_col(const Vec& c, CSpan x, MSpan y) {
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double xj = x[j];
      for (std::size_t i = 0; i < c.size(); ++i) y[i + j] += c[i] * xj;
    }
  }

  static void direct_row(const Vec& c, CSpan u, MSpan v) {
    const std::size_t p = c.size();
    for (std::size_t k = 0; k < v.size(); ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < p; ++i) acc += c[i] * u[k + p - 1 - i];
      v[k] = acc;
    }
  }

  static void direct_circ(const Vec& c, CSpan x, MSpan y) {
    const std::size_t n = x.size();
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double xj = x[j];
      for (std::size_t i = 0; i < n; ++i) y[(i + j) % n] += c[i] * xj;
    }
  }

  void fold(CSpan full, MSpan y) const {
    for (std::size_t k = 0; k < n_; ++k) {
      double acc = full[k];
      if (k + n_ < full_) acc += full[k + n_];
      y[k] = acc;
    }
  }

  ConvVariant variant_;
  Vec kernel_, adj_kernel_;
  std::size_t n_, p_, full_;
  bool direct_;
  ConvPlan fwd_, adj_;
};

// ---------------------------------------------------------------------------
// Convolution, 2-D. Same reduction to the full linear convolution,
// one padded grid per operator.

struct Conv2Plan {
  std::size_t p1 = 0, p2 = 0;  // padded grid extents
  fft::PlanPtr plan1, plan2;
  Vec khat_re, khat_im;

  Conv2Plan() = default;
  Conv2Plan(const Eigen::MatrixXd& kernel, std::size_t full_r,
            std::size_t full_c) {
    p1 = fft::next_pow2(full_r);
    p2 = fft::next_pow2(full_c);
    plan1 = fft::plan_for(p1);
    plan2 = fft::plan_for(p2);
    khat_re.assign(p1 * p2, 0.0);
    khat_im.assign(p1 * p2, 0.0);
    for (Eigen::Index j = 0; j < kernel.cols(); ++j)
      for (Eigen::Index i = 0; i < kernel.rows(); ++i)
        khat_re[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * p1] =
            kernel(i, j);
    Vec row_re(p2), row_im(p2);
    fft2(khat_re, khat_im, MSpan(row_re), MSpan(row_im), false);
  }

  void fft2(MSpan re, MSpan im, MSpan row_re, MSpan row_im, bool inv) const {
    for (std::size_t j = 0; j < p2; ++j)
      plan1->transform(re.subspan(j * p1, p1), im.subspan(j * p1, p1), inv);
    for (std::size_t i = 0; i < p1; ++i) {
      for (std::size_t j = 0; j < p2; ++j) {
        row_re[j] = re[i + j * p1];
        row_im[j] = im[i + j * p1];
      }
      plan2->transform(row_re, row_im, inv);
      for (std::size_t j = 0; j < p2; ++j) {
        re[i + j * p1] = row_re[j];
        im[i + j * p1] = row_im[j];
      }
    }
  }

  /* Full 2-D linear convolution of kernel with x (r-by-c, column
   * major) into scratch; the real half of the padded grid holds the
   * result. scratch layout: [re grid | im grid | row_re | row_im]. */
  void run(CSpan x, std::size_t r, std::size_t c, MSpan scratch) const {
    const std::size_t g = p1 * p2;
    MSpan re = scratch.subspan(0, g);
    MSpan im = scratch.subspan(g, g);
    MSpan row_re = scratch.subspan(2 * g, p2);
    MSpan row_im = scratch.subspan(2 * g + p2, p2);
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    for (std::size_t j = 0; j < c; ++j)
      std::copy_n(x.begin() + static_cast<long>(j * r), r,
                  re.begin() + static_cast<long>(j * p1));
    fft2(re, im, row_re, row_im, false);
    const double inv = 1.0 / static_cast<double>(g);
    for (std::size_t i = 0; i < g; ++i) {
      const double tr = (re[i] * khat_re[i] - im[i] * khat_im[i]) * inv;
      im[i] = (re[i] * khat_im[i] + im[i] * khat_re[i]) * inv;
      re[i] = tr;
    }
    fft2(re, im, row_re, row_im, true);
  }

  std::size_t scratch_size() const { return 2 * p1 * p2 + 2 * p2; }
};

Eigen::MatrixXd reversed2(const Eigen::MatrixXd& c) {
  return c.reverse();  // both dimensions
}

Eigen::MatrixXd rotated2(const Eigen::MatrixXd& c) {
  const Eigen::Index s = c.rows(), t = c.cols();
  Eigen::MatrixXd r(s, t);
  for (Eigen::Index i = 0; i < s; ++i)
    for (Eigen::Index j = 0; j < t; ++j)
      r(i, j) = c((s - i) % s, (t - j) % t);
  return r;
}

Shape conv2_out_shape(ConvVariant v, std::size_t kp, std::size_t kq,
                      std::size_t s, std::size_t t) {
  switch (v) {
    case ConvVariant::Column:
      return Shape::matrix(s + kp - 1, t + kq - 1);
    case ConvVariant::Row:
      if (kp > s || kq > t)
        throw ValueError("2-d row convolution: kernel larger than input");
      return Shape::matrix(s - kp + 1, t - kq + 1);
    case ConvVariant::Circular:
      if (kp != s || kq != t)
        throw DimensionError(
            "2-d circular convolution: kernel and input extents differ");
      return Shape::matrix(s, t);
  }
  throw ValueError("bad convolution variant");
}

class Conv2 final : public LinOp {
public:
  Conv2(ConvVariant v, Eigen::MatrixXd kernel, std::size_t s, std::size_t t)
      : LinOp(v == ConvVariant::Column   ? "conv2_col"
              : v == ConvVariant::Row    ? "conv2_row"
                                         : "conv2_circ",
              {Shape::matrix(s, t)},
              {conv2_out_shape(v, static_cast<std::size_t>(kernel.rows()),
                               static_cast<std::size_t>(kernel.cols()), s, t)},
              scratch_for(v, kernel, s, t)),
        variant_(v),
        kernel_(std::move(kernel)),
        s_(s),
        t_(t),
        kp_(static_cast<std::size_t>(kernel_.rows())),
        kq_(static_cast<std::size_t>(kernel_.cols())),
        full_r_(variant_ == ConvVariant::Circular ? 2 * s - 1 : s + kp_ - 1),
        full_c_(variant_ == ConvVariant::Circular ? 2 * t - 1 : t + kq_ - 1),
        direct_(small_kernel(kp_ * kq_, s * t)),
        adj_kernel_(variant_ == ConvVariant::Circular ? rotated2(kernel_)
                                                      : reversed2(kernel_)) {
    if (!direct_) {
      fwd_ = Conv2Plan(kernel_, full_r_, full_c_);
      adj_ = Conv2Plan(adj_kernel_, full_r_, full_c_);
    }
  }

  void forward(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan scratch) const override {
    const CSpan x = in[0];
    const MSpan y = out[0];
    const std::size_t or_ = out_shapes()[0].rows(), oc = out_shapes()[0].cols();
    switch (variant_) {
      case ConvVariant::Column:
        if (direct_) {
          direct_col(kernel_, x, s_, t_, y, or_);
        } else {
          fwd_.run(x, s_, t_, scratch);
          take(scratch, 0, 0, or_, oc, y);
        }
        break;
      case ConvVariant::Row:
        if (direct_) {
          direct_row(kernel_, x, s_, t_, y, or_, oc);
        } else {
          adj_.run(x, s_, t_, scratch);
          take(scratch, kp_ - 1, kq_ - 1, or_, oc, y);
        }
        break;
      case ConvVariant::Circular:
        if (direct_) {
          direct_circ(kernel_, x, s_, t_, y);
        } else {
          fwd_.run(x, s_, t_, scratch);
          fold(scratch, y);
        }
        break;
    }
  }

  void adjoint(std::span<const CSpan> in, std::span<const MSpan> out,
               MSpan scratch) const override {
    const CSpan u = in[0];
    const MSpan v = out[0];
    const std::size_t ur = out_shapes()[0].rows(), uc = out_shapes()[0].cols();
    switch (variant_) {
      case ConvVariant::Column:
        // 2-d row convolution with the reversed kernel
        if (direct_) {
          direct_row(adj_kernel_, u, ur, uc, v, s_, t_);
        } else {
          adj_.run(u, ur, uc, scratch);
          take(scratch, kp_ - 1, kq_ - 1, s_, t_, v);
        }
        break;
      case ConvVariant::Row:
        // 2-d column convolution with the reversed kernel
        if (direct_) {
          direct_col(adj_kernel_, u, ur, uc, v, s_);
        } else {
          adj_.run(u, ur, uc, scratch);
          take(scratch, 0, 0, s_, t_, v);
        }
        break;
      case ConvVariant::Circular:
        if (direct_) {
          direct_circ(adj_kernel_, u, s_, t_, v);
        } else {
          adj_.run(u, s_, t_, scratch);
          fold(scratch, v);
        }
        break;
    }
  }

  LinOpPtr adjoint_op() const override {
    const std::size_t ur = out_shapes()[0].rows(), uc = out_shapes()[0].cols();
    switch (variant_) {
      case ConvVariant::Column:
        return std::make_shared<Conv2>(ConvVariant::Row, adj_kernel_, ur, uc);
      case ConvVariant::Row:
        return std::make_shared<Conv2>(ConvVariant::Column, adj_kernel_, ur,
                                       uc);
      case ConvVariant::Circular:
        return std::make_shared<Conv2>(ConvVariant::Circular, adj_kernel_, s_,
                                       t_);
    }
    throw ValueError("bad convolution variant");
  }

  bool same_op(const LinOp& other) const override {
    auto* o = dynamic_cast<const Conv2*>(&other);
    return o && o->variant_ == variant_ && o->s_ == s_ && o->t_ == t_ &&
           o->kernel_.rows() == kernel_.rows() &&
           o->kernel_.cols() == kernel_.cols() && o->kernel_ == kernel_;
  }

protected:
  SpMat coeff_impl(std::size_t, std::size_t) const override {
    std::vector<Eigen::Triplet<double>> trips;
    const std::size_t or_ = out_shapes()[0].rows(), oc = out_shapes()[0].cols();
    for (std::size_t j2 = 0; j2 < t_; ++j2)
      for (std::size_t i2 = 0; i2 < s_; ++i2) {
        const std::size_t col = j2 * s_ + i2;
        for (std::size_t j1 = 0; j1 < kq_; ++j1)
          for (std::size_t i1 = 0; i1 < kp_; ++i1) {
            const double val = kernel_(static_cast<Eigen::Index>(i1),
                                       static_cast<Eigen::Index>(j1));
            std::size_t rr, cc;
            switch (variant_) {
              case ConvVariant::Column:
                rr = i1 + i2;
                cc = j1 + j2;
                break;
              case ConvVariant::Row:
                if (i1 + i2 + 1 < kp_ || i1 + i2 + 1 > s_ ||
                    j1 + j2 + 1 < kq_ || j1 + j2 + 1 > t_)
                  continue;
                rr = i1 + i2 + 1 - kp_;
                cc = j1 + j2 + 1 - kq_;
                break;
              case ConvVariant::Circular:
                rr = (i1 + i2) % s_;
                cc = (j1 + j2) % t_;
                break;
              default:
                continue;
            }
            if (rr < or_ && cc < oc)
              trips.emplace_back(static_cast<int>(cc * or_ + rr),
                                 static_cast<int>(col), val);
          }
      }
    SpMat a(static_cast<Eigen::Index>(out_total()),
            static_cast<Eigen::Index>(in_total()));
    a.setFromTriplets(trips.begin(), trips.end());
    a.makeCompressed();
    return a;
  }

private:
  static std::size_t scratch_for(ConvVariant v, const Eigen::MatrixXd& kernel,
                                 std::size_t s, std::size_t t) {
    const auto kp = static_cast<std::size_t>(kernel.rows());
    const auto kq = static_cast<std::size_t>(kernel.cols());
    conv2_out_shape(v, kp, kq, s, t);  // validates extents
    if (small_kernel(kp * kq, s * t)) return 0;
    const std::size_t fr = v == ConvVariant::Circular ? 2 * s - 1 : s + kp - 1;
    const std::size_t fc = v == ConvVariant::Circular ? 2 * t - 1 : t + kq - 1;
    const std::size_t p1 = fft::next_pow2(fr), p2 = fft::next_pow2(fc);
    return 2 * p1 * p2 + 2 * p2;
  }

  // y[k,l] = sum C[i1,j1] X[i2,j2] over i1+i2=k, j1+j2=l (0-based)
  static void direct_col(const Eigen::MatrixXd& c, CSpan x, std::size_t xr,
                         std::size_t xc, MSpan y, std::size_t yr) {
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t j2 = 0; j2 < xc; ++j2)
      for (std::size_t i2 = 0; i2 < xr; ++i2) {
        const double xv = x[j2 * xr + i2];
        for (Eigen::Index j1 = 0; j1 < c.cols(); ++j1)
          for (Eigen::Index i1 = 0; i1 < c.rows(); ++i1)
            y[(j2 + static_cast<std::size_t>(j1)) * yr + i2 +
              static_cast<std::size_t>(i1)] += c(i1, j1) * xv;
      }
  }

  static void direct_row(const Eigen::MatrixXd& c, CSpan u, std::size_t ur,
                         std::size_t uc, MSpan v, std::size_t vr,
                         std::size_t vc) {
    const auto kp = static_cast<std::size_t>(c.rows());
    const auto kq = static_cast<std::size_t>(c.cols());
    (void)uc;
    for (std::size_t l = 0; l < vc; ++l)
      for (std::size_t k = 0; k < vr; ++k) {
        double acc = 0.0;
        for (std::size_t j1 = 0; j1 < kq; ++j1)
          for (std::size_t i1 = 0; i1 < kp; ++i1)
            acc += c(static_cast<Eigen::Index>(i1),
                     static_cast<Eigen::Index>(j1)) *
                   u[(l + kq - 1 - j1) * ur + (k + kp - 1 - i1)];
        v[l * vr + k] = acc;
      }
  }

  static void direct_circ(const Eigen::MatrixXd& c, CSpan x, std::size_t s,
                          std::size_t t, MSpan y) {
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t j2 = 0; j2 < t; ++j2)
      for (std::size_t i2 = 0; i2 < s; ++i2) {
        const double xv = x[j2 * s + i2];
        for (std::size_t j1 = 0; j1 < t; ++j1)
          for (std::size_t i1 = 0; i1 < s; ++i1)
            y[((j1 + j2) % t) * s + (i1 + i2) % s] +=
                c(static_cast<Eigen::Index>(i1), static_cast<Eigen::Index>(j1)) *
                xv;
      }
  }

  /* Copy the (r0, c0)-offset rr-by-cc window of the padded grid's real
   * half into y. */
  void take(CSpan scratch, std::size_t r0, std::size_t c0, std::size_t rr,
            std::size_t cc, MSpan y) const {
    const std::size_t p1 = fft::next_pow2(full_r_);
    for (std::size_t j = 0; j < cc; ++j)
      for (std::size_t i = 0; i < rr; ++i)
        y[j * rr + i] = scratch[(c0 + j) * p1 + (r0 + i)];
  }

  void fold(CSpan scratch, MSpan y) const {
    const std::size_t p1 = fft::next_pow2(full_r_);
    for (std::size_t l = 0; l < t_; ++l)
      for (std::size_t k = 0; k < s_; ++k) {
        double acc = 0.0;
        for (std::size_t b = 0; b < 2; ++b)
          for (std::size_t a = 0; a < 2; ++a) {
            const std::size_t rr = k + a * s_;
            const std::size_t cc = l + b * t_;
            if (rr < full_r_ && cc < full_c_) acc += scratch[cc * p1 + rr];
          }
        y[l * s_ + k] = acc;
      }
  }

  ConvVariant variant_;
  Eigen::MatrixXd kernel_;
  std::size_t s_, t_, kp_, kq_, full_r_, full_c_;
  bool direct_;
  Eigen::MatrixXd adj_kernel_;
  Conv2Plan fwd_, adj_;
};

}  // namespace

}  // namespace mfco
