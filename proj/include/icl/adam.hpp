#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace icl {

/// Adam over a flat parameter vector. Weight decay is added to the gradient
/// (L2 form), matching torch.optim.Adam.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam(Eigen::Index n_params, Options options)
      : opt_(options), m_(Eigen::VectorXd::Zero(n_params)), v_(Eigen::VectorXd::Zero(n_params)) {}

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad) {
    ++t_;
    Eigen::VectorXd g = grad;
    if (opt_.weight_decay != 0.0) g += opt_.weight_decay * params;
    m_ = opt_.beta1 * m_ + (1.0 - opt_.beta1) * g;
    v_ = opt_.beta2 * v_ + (1.0 - opt_.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      const double m_hat = m_[i] / bc1;
      const double v_hat = v_[i] / bc2;
      params[i] -= opt_.lr * m_hat / (std::sqrt(v_hat) + opt_.eps);
    }
  }

  long steps() const noexcept { return t_; }

 private:
  Options opt_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

}  // namespace icl
