#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace binnlab {

/// Dense row-major tensor of 64-bit floats. The product of the shape always
/// equals the data length; element-wise operations require identical shapes
/// (no implicit broadcasting). All computation in this library is double
/// precision: oracle comparisons at 1e-6 tolerances are not feasible in 32-bit.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::initializer_list<std::size_t> shape, double fill = 0.0);

  static Tensor scalar(double value);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& operator()(std::size_t i);
  double operator()(std::size_t i) const;
  double& operator()(std::size_t i, std::size_t j);
  double operator()(std::size_t i, std::size_t j) const;
  double& operator()(std::size_t i, std::size_t j, std::size_t k);
  double operator()(std::size_t i, std::size_t j, std::size_t k) const;
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l);
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const;

  std::size_t dim(std::size_t axis) const;

  void fill(double value);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor& add_(const Tensor& other);
  Tensor& sub_(const Tensor& other);
  Tensor& mul_(const Tensor& other);
  Tensor& scale_(double factor);

  friend Tensor add(const Tensor& a, const Tensor& b);
  friend Tensor sub(const Tensor& a, const Tensor& b);
  friend Tensor mul(const Tensor& a, const Tensor& b);

  /// [m,n] x [n] -> [m]
  friend Tensor matvec(const Tensor& m, const Tensor& v);
  /// [m,n] x [n,p] -> [m,p]
  friend Tensor matmul(const Tensor& a, const Tensor& b);

  double l2_norm() const;
  double sum() const;
  bool all_finite() const;
  /// Every element exactly 0.0 or 1.0.
  bool is_binary() const;

  std::string shape_string() const;

 private:
  void check_rank(std::size_t expected) const;

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace binnlab
