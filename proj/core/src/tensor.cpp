#include "binnlab/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace binnlab {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::initializer_list<std::size_t> shape, double fill)
    : Tensor(std::vector<std::size_t>(shape), fill) {}

Tensor Tensor::scalar(double value) {
  Tensor t({std::size_t{1}});
  t.data_[0] = value;
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data) {
  if (shape_product(shape) != data.size()) {
    throw std::invalid_argument("Tensor::from: data length does not match shape");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

void Tensor::check_rank(std::size_t expected) const {
  if (shape_.size() != expected) {
    throw std::invalid_argument("Tensor: rank " + std::to_string(shape_.size()) +
                                " indexed as rank " + std::to_string(expected));
  }
}

double& Tensor::operator()(std::size_t i) {
  check_rank(1);
  return data_[i];
}
double Tensor::operator()(std::size_t i) const {
  check_rank(1);
  return data_[i];
}
double& Tensor::operator()(std::size_t i, std::size_t j) {
  check_rank(2);
  return data_[i * shape_[1] + j];
}
double Tensor::operator()(std::size_t i, std::size_t j) const {
  check_rank(2);
  return data_[i * shape_[1] + j];
}
double& Tensor::operator()(std::size_t i, std::size_t j, std::size_t k) {
  check_rank(3);
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double Tensor::operator()(std::size_t i, std::size_t j, std::size_t k) const {
  check_rank(3);
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double& Tensor::operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
  check_rank(4);
  return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
}
double Tensor::operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
  check_rank(4);
  return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::invalid_argument("Tensor::dim: axis out of range");
  }
  return shape_[axis];
}

void Tensor::fill(double value) {
  for (double& x : data_) x = value;
}

Tensor& Tensor::add_(const Tensor& other) {
  check_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::sub_(const Tensor& other) {
  check_same_shape(*this, other, "sub");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::mul_(const Tensor& other) {
  check_same_shape(*this, other, "mul");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] *= other.data_[i];
  return *this;
}

Tensor& Tensor::scale_(double factor) {
  for (double& x : data_) x *= factor;
  return *this;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out.add_(b);
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out.sub_(b);
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out.mul_(b);
  return out;
}

Tensor matvec(const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.rank() != 1 || m.shape_[1] != v.shape_[0]) {
    throw std::invalid_argument("matvec: incompatible shapes " + m.shape_string() +
                                " x " + v.shape_string());
  }
  Tensor out({m.shape_[0]});
  for (std::size_t i = 0; i < m.shape_[0]; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.shape_[1]; ++j) acc += m.data_[i * m.shape_[1] + j] * v.data_[j];
    out.data_[i] = acc;
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape_[1] != b.shape_[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + a.shape_string() +
                                " x " + b.shape_string());
  }
  const std::size_t m = a.shape_[0], n = a.shape_[1], p = b.shape_[1];
  Tensor out({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a.data_[i * n + k];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) out.data_[i * p + j] += aik * b.data_[k * p + j];
    }
  }
  return out;
}

double Tensor::l2_norm() const {
  double acc = 0.0;
  for (double x : data_) acc += x * x;
  return std::sqrt(acc);
}

double Tensor::sum() const {
  double acc = 0.0;
  for (double x : data_) acc += x;
  return acc;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool Tensor::is_binary() const {
  for (double x : data_) {
    if (x != 0.0 && x != 1.0) return false;
  }
  return true;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

}  // namespace binnlab
