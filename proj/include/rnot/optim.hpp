#pragma once

#include <cmath>

#include "rnot/geometry.hpp"

namespace rnot {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Plain Adam on a flat Euclidean parameter vector.
class FlatAdam {
 public:
  FlatAdam(Eigen::Index size, double lr, AdamParams params = {})
      : lr_(lr), p_(params), m_(Vec::Zero(size)), v_(Vec::Zero(size)) {}

  /// theta <- theta - lr * mhat / (sqrt(vhat) + eps)
  void step(Vec& theta, const Vec& grad) {
    ++t_;
    m_ = p_.beta1 * m_ + (1.0 - p_.beta1) * grad;
    v_ = p_.beta2 * v_ + (1.0 - p_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(p_.beta1, t_);
    const double c2 = 1.0 - std::pow(p_.beta2, t_);
    theta.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + p_.eps);
  }

  long steps() const { return t_; }

 private:
  double lr_;
  AdamParams p_;
  Vec m_;
  Vec v_;
  long t_ = 0;
};

enum class TangentOptimizer { GD, Momentum, Adam };

/// First-order optimizer for a single point on the manifold. Moments are kept
/// in the coordinates of tangent_basis(y); after each retraction they are
/// re-expressed in the new basis by the projection R = E_new^T E_old
/// (m <- R m, v <- (R o R) v).
class TangentStepper {
 public:
  TangentStepper(const Manifold& m, TangentOptimizer kind, double step_size, double momentum,
                 AdamParams adam)
      : manifold_(m),
        kind_(kind),
        lr_(step_size),
        momentum_(momentum),
        adam_(adam),
        m_(Vec::Zero(m.dim())),
        v_(Vec::Zero(m.dim())) {}

  /// Moves y along -grad (ambient tangent vector at y) and retracts with exp.
  void step(Vec& y, const Vec& grad) {
    if (manifold_.is_sphere()) geo::tangent_basis(manifold_, y, basis_);
    const bool flat = manifold_.is_torus();
    const Vec g = flat ? grad : Vec(basis_.transpose() * grad);
    ++t_;
    Vec s;
    switch (kind_) {
      case TangentOptimizer::GD:
        s = -lr_ * g;
        break;
      case TangentOptimizer::Momentum:
        m_ = momentum_ * m_ + g;
        s = -lr_ * m_;
        break;
      case TangentOptimizer::Adam: {
        m_ = adam_.beta1 * m_ + (1.0 - adam_.beta1) * g;
        v_ = adam_.beta2 * v_ + (1.0 - adam_.beta2) * g.cwiseAbs2();
        const double c1 = 1.0 - std::pow(adam_.beta1, t_);
        const double c2 = 1.0 - std::pow(adam_.beta2, t_);
        s = (-lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + adam_.eps)).matrix();
        break;
      }
    }
    const Vec amb = flat ? s : Vec(basis_ * s);
    Vec next;
    geo::exp_map(manifold_, y, amb, next);
    if (!flat && kind_ != TangentOptimizer::GD) {
      geo::tangent_basis(manifold_, next, next_basis_);
      const Mat R = next_basis_.transpose() * basis_;
      m_ = R * m_;
      v_ = R.cwiseAbs2() * v_;
    }
    y = std::move(next);
  }

 private:
  Manifold manifold_;
  TangentOptimizer kind_;
  double lr_;
  double momentum_;
  AdamParams adam_;
  Vec m_;
  Vec v_;
  long t_ = 0;
  Mat basis_;
  Mat next_basis_;
};

}  // namespace rnot
