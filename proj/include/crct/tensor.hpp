#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crct/common.hpp"

namespace crct {

namespace detail {
struct Node;
struct Access;
}  // namespace detail

// flips reverse-mode taping off for the current thread while alive
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool saved_;
};

bool grad_enabled();

// value-semantic handle; copies share storage and the tape node
class Tensor {
  public:
    Tensor();

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
    static Tensor from_vector(std::vector<int> shape, const std::vector<double>& data,
                              bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const;
    int ndim() const;
    int dim(int axis) const;
    std::int64_t numel() const;

    double item() const;
    double at(const std::vector<int>& idx) const;
    const Eigen::ArrayXd& value() const;
    Eigen::ArrayXd& raw();  // in-place mutation; for init, optimizers and probes

    bool requires_grad() const;
    bool has_grad() const;
    const Eigen::ArrayXd& grad() const;
    void zero_grad();
    void ensure_grad();  // allocates an all-zero gradient buffer if none exists

    void backward();

  private:
    std::shared_ptr<detail::Node> node_;
    friend struct detail::Access;
};

std::string shape_str(const std::vector<int>& shape);

Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D only
Tensor add(const Tensor& a, const Tensor& b);     // same shape, trailing vector, or scalar b
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // same shape or scalar operand
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor transpose(const Tensor& a);  // 2-D only
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
Tensor softmax(const Tensor& a);  // last axis, max-subtracted
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor mean(const Tensor& a);  // full reduction to a {1} tensor
Tensor sum(const Tensor& a);
// mask covers the whole tensor or broadcasts over the last axis; nonzero fills
Tensor masked_fill(const Tensor& a, const std::vector<unsigned char>& mask, double fill);
// stable max(z,0) - z*t + log1p(exp(-|z|)) per element
Tensor bce_with_logits(const Tensor& logits, double target);

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

class Adam {
  public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    void step();
    void zero_grad();

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double epsilon() const { return eps_; }
    std::int64_t step_count() const { return step_; }
    const std::vector<Tensor>& params() const { return params_; }
    const std::vector<Eigen::ArrayXd>& moment1() const { return m_; }
    const std::vector<Eigen::ArrayXd>& moment2() const { return v_; }
    void load_state(std::int64_t step, std::vector<Eigen::ArrayXd> m,
                    std::vector<Eigen::ArrayXd> v);

  private:
    std::vector<Tensor> params_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t step_ = 0;
    std::vector<Eigen::ArrayXd> m_, v_;
};

}  // namespace crct
