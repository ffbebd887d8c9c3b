#pragma once

#include <Eigen/Dense>

#include <array>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace liedecomp {

/// Contract violations are surfaced as exceptions, never as UB.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major shape with rank <= 3. Rank 0 denotes a scalar.
class Shape {
 public:
  Shape() = default;

  Shape(std::initializer_list<int> dims) {
    if (dims.size() > kMaxRank) throw ShapeError("Shape: rank > 3 unsupported");
    rank_ = static_cast<int>(dims.size());
    int i = 0;
    for (int d : dims) {
      if (d <= 0) throw ShapeError("Shape: nonpositive dimension");
      dims_[i++] = d;
    }
  }

  static Shape scalar() { return Shape{}; }

  int rank() const { return rank_; }

  int dim(int i) const {
    if (i < 0 || i >= rank_) throw ShapeError("Shape: dim index out of range");
    return dims_[i];
  }

  Eigen::Index numel() const {
    Eigen::Index n = 1;
    for (int i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (dims_[i] != o.dims_[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "{";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "}";
  }

 private:
  static constexpr std::size_t kMaxRank = 3;
  std::array<int, kMaxRank> dims_{1, 1, 1};
  int rank_ = 0;
};

/// Row-major dense tensor of doubles. The carrier for images, weights,
/// flow parameters and every autodiff value.
struct Tensor {
  Shape shape;
  Eigen::ArrayXd data;

  Tensor() : data(1) { data[0] = 0.0; }

  Tensor(Shape s, Eigen::ArrayXd d) : shape(s), data(std::move(d)) {
    if (data.size() != shape.numel())
      throw ShapeError("Tensor: element count " + std::to_string(data.size()) +
                       " does not match shape " + shape.str());
  }

  static Tensor zeros(Shape s) {
    return Tensor(s, Eigen::ArrayXd::Zero(s.numel()));
  }

  static Tensor full(Shape s, double v) {
    return Tensor(s, Eigen::ArrayXd::Constant(s.numel(), v));
  }

  static Tensor scalar(double v) { return full(Shape::scalar(), v); }

  static Tensor from_vector(Shape s, const std::vector<double>& v) {
    if (static_cast<Eigen::Index>(v.size()) != s.numel())
      throw ShapeError("Tensor: vector of " + std::to_string(v.size()) +
                       " elements does not fill shape " + s.str());
    Eigen::ArrayXd d(s.numel());
    for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = v[static_cast<std::size_t>(i)];
    return Tensor(s, std::move(d));
  }

  Eigen::Index numel() const { return shape.numel(); }

  double value() const {
    if (numel() != 1) throw ShapeError("Tensor: value() on non-scalar " + shape.str());
    return data[0];
  }

  double& at(int i) {
    check_rank(1);
    return data[index1(i)];
  }
  double at(int i) const {
    check_rank(1);
    return data[index1(i)];
  }
  double& at(int i, int j) {
    check_rank(2);
    return data[index2(i, j)];
  }
  double at(int i, int j) const {
    check_rank(2);
    return data[index2(i, j)];
  }
  double& at(int i, int j, int k) {
    check_rank(3);
    return data[index3(i, j, k)];
  }
  double at(int i, int j, int k) const {
    check_rank(3);
    return data[index3(i, j, k)];
  }

  bool all_finite() const { return data.allFinite(); }

 private:
  void check_rank(int r) const {
    if (shape.rank() != r)
      throw ShapeError("Tensor: rank-" + std::to_string(r) + " access on " + shape.str());
  }
  Eigen::Index index1(int i) const { return i; }
  Eigen::Index index2(int i, int j) const {
    return static_cast<Eigen::Index>(i) * shape.dim(1) + j;
  }
  Eigen::Index index3(int i, int j, int k) const {
    return (static_cast<Eigen::Index>(i) * shape.dim(1) + j) * shape.dim(2) + k;
  }
};

}  // namespace liedecomp
