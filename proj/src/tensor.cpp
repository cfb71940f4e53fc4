#include "setmf/tensor.hpp"

#include <sstream>

namespace setmf {

namespace {
Eigen::Index shape_product(const std::vector<Eigen::Index>& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) n *= d;
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<Eigen::Index> shape, Eigen::VectorXd data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check(shape_product(shape_) == data_.size(),
        "tensor shape/data mismatch: shape " + shape_str() + " vs " +
            std::to_string(data_.size()) + " values");
  check(data_.allFinite(), "tensor rejects non-finite entries");
}

Tensor Tensor::from_vector(Eigen::VectorXd v) {
  const Eigen::Index n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
  RowMatrixXd rm = m;
  Eigen::VectorXd flat = Eigen::Map<Eigen::VectorXd>(rm.data(), rm.size());
  return Tensor({m.rows(), m.cols()}, std::move(flat));
}

Tensor Tensor::zeros(std::vector<Eigen::Index> shape) {
  Eigen::VectorXd data = Eigen::VectorXd::Zero(shape_product(shape));
  return Tensor(std::move(shape), std::move(data));
}

Eigen::Index Tensor::rows() const {
  check(rank() >= 1, "rows() on rank-0 tensor");
  return shape_[0];
}

Eigen::Index Tensor::cols() const {
  if (rank() == 1) return 1;
  check(rank() == 2, "cols() on rank-" + std::to_string(rank()) + " tensor");
  return shape_[1];
}

double Tensor::scalar_value() const {
  check(size() == 1, "scalar_value() on tensor of size " +
                         std::to_string(size()));
  return data_[0];
}

Eigen::Map<const RowMatrixXd> Tensor::as_matrix() const {
  const Eigen::Index r = rank() == 1 ? shape_[0] : rows();
  const Eigen::Index c = rank() == 1 ? 1 : shape_[1];
  check(rank() == 1 || rank() == 2, "as_matrix() needs rank 1 or 2");
  return Eigen::Map<const RowMatrixXd>(data_.data(), r, c);
}

Eigen::Map<RowMatrixXd> Tensor::as_matrix() {
  const Eigen::Index r = rank() == 1 ? shape_[0] : rows();
  const Eigen::Index c = rank() == 1 ? 1 : shape_[1];
  check(rank() == 1 || rank() == 2, "as_matrix() needs rank 1 or 2");
  return Eigen::Map<RowMatrixXd>(data_.data(), r, c);
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

void ParamVector::add(const std::string& name, Tensor value) {
  check(!has(name), "duplicate parameter segment '" + name + "'");
  segments_.push_back({name, std::move(value)});
}

bool ParamVector::has(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return true;
  return false;
}

const Tensor& ParamVector::at(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s.value;
  throw Error("unknown parameter segment '" + name + "'");
}

Tensor& ParamVector::at(const std::string& name) {
  for (auto& s : segments_)
    if (s.name == name) return s.value;
  throw Error("unknown parameter segment '" + name + "'");
}

Eigen::Index ParamVector::total_count() const {
  Eigen::Index n = 0;
  for (const auto& s : segments_) n += s.value.size();
  return n;
}

Eigen::VectorXd ParamVector::flatten() const {
  Eigen::VectorXd out(total_count());
  Eigen::Index at = 0;
  for (const auto& s : segments_) {
    out.segment(at, s.value.size()) = s.value.flat();
    at += s.value.size();
  }
  return out;
}

void ParamVector::unflatten(const Eigen::VectorXd& flat) {
  check(flat.size() == total_count(), "unflatten size mismatch");
  Eigen::Index at = 0;
  for (auto& s : segments_) {
    s.value.flat() = flat.segment(at, s.value.size());
    at += s.value.size();
  }
}

ParamVector ParamVector::zeros_like(const ParamVector& ref) {
  ParamVector out;
  for (const auto& s : ref.segments_)
    out.add(s.name, Tensor::zeros(s.value.shape()));
  return out;
}

void ParamVector::axpy(double alpha, const ParamVector& other) {
  check(segment_count() == other.segment_count(), "axpy structure mismatch");
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    check(segments_[i].name == other.segments_[i].name &&
              segments_[i].value.same_shape(other.segments_[i].value),
          "axpy segment mismatch at '" + segments_[i].name + "'");
    segments_[i].value.flat() += alpha * other.segments_[i].value.flat();
  }
}

void ParamVector::scale(double alpha) {
  for (auto& s : segments_) s.value.flat() *= alpha;
}

}  // namespace setmf
