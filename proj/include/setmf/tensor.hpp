#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace setmf {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense rank-1/rank-2 carrier with row-major storage. Rejects non-finite
// entries at construction; all downstream math assumes finite values.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<Eigen::Index> shape, Eigen::VectorXd data);

  static Tensor from_vector(Eigen::VectorXd v);
  static Tensor from_matrix(const Eigen::MatrixXd& m);
  static Tensor zeros(std::vector<Eigen::Index> shape);

  const std::vector<Eigen::Index>& shape() const { return shape_; }
  Eigen::Index rank() const { return static_cast<Eigen::Index>(shape_.size()); }
  Eigen::Index size() const { return data_.size(); }

  Eigen::Index rows() const;
  Eigen::Index cols() const;

  const Eigen::VectorXd& flat() const { return data_; }
  Eigen::VectorXd& flat() { return data_; }

  double scalar_value() const;

  Eigen::Map<const RowMatrixXd> as_matrix() const;
  Eigen::Map<RowMatrixXd> as_matrix();

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

 private:
  std::vector<Eigen::Index> shape_;
  Eigen::VectorXd data_;
};

// Named parameter segments in a fixed order; flatten/unflatten is a
// bijection preserving the total count.
class ParamVector {
 public:
  struct Segment {
    std::string name;
    Tensor value;
  };

  void add(const std::string& name, Tensor value);
  bool has(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t segment_count() const { return segments_.size(); }
  Eigen::Index total_count() const;

  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);

  // Same segment names/shapes, all-zero values.
  static ParamVector zeros_like(const ParamVector& ref);

  // this += alpha * other (same structure required).
  void axpy(double alpha, const ParamVector& other);
  void scale(double alpha);

 private:
  std::vector<Segment> segments_;
};

}  // namespace setmf
