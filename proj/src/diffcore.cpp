#include "setmf/diffcore.hpp"

#include <Eigen/Dense>

namespace setmf {

int ComputationRecord::input_slot(int i) const {
  check(i >= 0 && i < n_inputs_, "input index out of range");
  return i;
}

int ComputationRecord::require_written(int slot) const {
  check(slot >= 0 && slot < next_slot_, "op reads unwritten slot");
  return slot;
}

int ComputationRecord::push(Op op) {
  op.out = next_slot_++;
  ops_.push_back(std::move(op));
  return ops_.back().out;
}

int ComputationRecord::affine(int x, const std::string& weight,
                              const std::string& bias) {
  Op op;
  op.kind = OpKind::kAffine;
  op.in0 = require_written(x);
  op.weight = weight;
  op.bias = bias;
  return push(std::move(op));
}

int ComputationRecord::relu(int x) {
  Op op;
  op.kind = OpKind::kRelu;
  op.in0 = require_written(x);
  return push(std::move(op));
}

int ComputationRecord::sum_pool(int mask, int items) {
  Op op;
  op.kind = OpKind::kSumPool;
  op.in0 = require_written(mask);
  op.in1 = require_written(items);
  return push(std::move(op));
}

int ComputationRecord::add(int a, int b) {
  Op op;
  op.kind = OpKind::kAdd;
  op.in0 = require_written(a);
  op.in1 = require_written(b);
  return push(std::move(op));
}

int ComputationRecord::mul(int a, int b) {
  Op op;
  op.kind = OpKind::kMul;
  op.in0 = require_written(a);
  op.in1 = require_written(b);
  return push(std::move(op));
}

int ComputationRecord::reduce_sum(int x) {
  Op op;
  op.kind = OpKind::kReduceSum;
  op.in0 = require_written(x);
  return push(std::move(op));
}

int ComputationRecord::param_ref(const std::string& name) {
  Op op;
  op.kind = OpKind::kParamRef;
  op.param = name;
  return push(std::move(op));
}

int ComputationRecord::constant(Tensor value) {
  Op op;
  op.kind = OpKind::kConstant;
  op.constant = std::move(value);
  return push(std::move(op));
}

int ComputationRecord::output_slot() const {
  check(!ops_.empty(), "empty record has no output");
  return ops_.back().out;
}

namespace {

using MatMap = Eigen::Map<const RowMatrixXd>;

MatMap mat2(const Tensor& t, const char* what) {
  check(t.rank() == 2, std::string(what) + " requires a rank-2 tensor, got " +
                           t.shape_str());
  return t.as_matrix();
}

// Runs the forward pass, filling one tensor per slot.
std::vector<Tensor> run_forward(const ComputationRecord& record,
                                const ParamVector& params,
                                std::span<const Tensor> inputs) {
  check(static_cast<int>(inputs.size()) == record.n_inputs(),
        "record expects " + std::to_string(record.n_inputs()) + " inputs");
  std::vector<Tensor> slots(record.slot_count());
  for (int i = 0; i < record.n_inputs(); ++i) slots[i] = inputs[i];

  for (const Op& op : record.ops()) {
    switch (op.kind) {
      case OpKind::kAffine: {
        const Tensor& x = slots[op.in0];
        const auto X = mat2(x, "affine input");
        const auto W = mat2(params.at(op.weight), "affine weight");
        const Eigen::VectorXd& b = params.at(op.bias).flat();
        check(X.cols() == W.cols(), "affine shape mismatch: input " +
                                        x.shape_str() + " vs weight " +
                                        params.at(op.weight).shape_str());
        check(W.rows() == b.size(), "affine weight/bias mismatch");
        Eigen::MatrixXd y = X * W.transpose();
        y.rowwise() += b.transpose();
        slots[op.out] = Tensor::from_matrix(y);
        break;
      }
      case OpKind::kRelu: {
        Tensor y = slots[op.in0];
        y.flat() = y.flat().cwiseMax(0.0);
        slots[op.out] = std::move(y);
        break;
      }
      case OpKind::kSumPool: {
        const auto M = mat2(slots[op.in0], "sum_pool mask");
        const auto H = mat2(slots[op.in1], "sum_pool items");
        check(M.cols() == H.rows(), "sum_pool shape mismatch");
        slots[op.out] = Tensor::from_matrix(M * H);
        break;
      }
      case OpKind::kAdd: {
        check(slots[op.in0].same_shape(slots[op.in1]), "add shape mismatch");
        Tensor y = slots[op.in0];
        y.flat() += slots[op.in1].flat();
        slots[op.out] = std::move(y);
        break;
      }
      case OpKind::kMul: {
        check(slots[op.in0].same_shape(slots[op.in1]), "mul shape mismatch");
        Tensor y = slots[op.in0];
        y.flat().array() *= slots[op.in1].flat().array();
        slots[op.out] = std::move(y);
        break;
      }
      case OpKind::kReduceSum: {
        Eigen::VectorXd y(1);
        y[0] = slots[op.in0].flat().sum();
        slots[op.out] = Tensor({1}, std::move(y));
        break;
      }
      case OpKind::kParamRef: {
        slots[op.out] = params.at(op.param);
        break;
      }
      case OpKind::kConstant: {
        slots[op.out] = op.constant;
        break;
      }
    }
    check(slots[op.out].flat().allFinite(),
          "non-finite intermediate at op " +
              std::to_string(&op - record.ops().data()));
  }
  return slots;
}

}  // namespace

Tensor forward_eval(const ComputationRecord& record, const ParamVector& params,
                    std::span<const Tensor> inputs) {
  auto slots = run_forward(record, params, inputs);
  return slots[record.output_slot()];
}

Tensor forward_eval(const ComputationRecord& record, const ParamVector& params,
                    const Tensor& input) {
  return forward_eval(record, params, std::span<const Tensor>(&input, 1));
}

ParamVector param_vjp(const ComputationRecord& record,
                      const ParamVector& params, std::span<const Tensor> inputs,
                      const Tensor& cotangent) {
  auto slots = run_forward(record, params, inputs);
  const int out_slot = record.output_slot();
  check(cotangent.same_shape(slots[out_slot]),
        "cotangent shape " + cotangent.shape_str() + " does not match output " +
            slots[out_slot].shape_str());

  ParamVector grads = ParamVector::zeros_like(params);
  std::vector<Eigen::VectorXd> adj(record.slot_count());
  auto adj_of = [&](int slot) -> Eigen::VectorXd& {
    if (adj[slot].size() == 0)
      adj[slot] = Eigen::VectorXd::Zero(slots[slot].size());
    return adj[slot];
  };
  adj_of(out_slot) = cotangent.flat();

  for (auto it = record.ops().rbegin(); it != record.ops().rend(); ++it) {
    const Op& op = *it;
    if (adj[op.out].size() == 0) continue;  // no downstream use
    const Eigen::VectorXd& dy = adj[op.out];
    switch (op.kind) {
      case OpKind::kAffine: {
        const Tensor& x = slots[op.in0];
        const auto X = x.as_matrix();
        const auto W = params.at(op.weight).as_matrix();
        Eigen::Map<const RowMatrixXd> dY(dy.data(), X.rows(), W.rows());
        RowMatrixXd dX = dY * W;
        adj_of(op.in0) += Eigen::Map<Eigen::VectorXd>(dX.data(), dX.size());
        RowMatrixXd dW = dY.transpose() * X;
        grads.at(op.weight).flat() +=
            Eigen::Map<Eigen::VectorXd>(dW.data(), dW.size());
        grads.at(op.bias).flat() += dY.colwise().sum().transpose();
        break;
      }
      case OpKind::kRelu: {
        // Subgradient 0 at the kink.
        adj_of(op.in0).array() +=
            dy.array() * (slots[op.in0].flat().array() > 0.0).cast<double>();
        break;
      }
      case OpKind::kSumPool: {
        const auto M = slots[op.in0].as_matrix();
        const auto H = slots[op.in1].as_matrix();
        Eigen::Map<const RowMatrixXd> dY(dy.data(), M.rows(), H.cols());
        RowMatrixXd dH = M.transpose() * dY;
        adj_of(op.in1) += Eigen::Map<Eigen::VectorXd>(dH.data(), dH.size());
        RowMatrixXd dM = dY * H.transpose();
        adj_of(op.in0) += Eigen::Map<Eigen::VectorXd>(dM.data(), dM.size());
        break;
      }
      case OpKind::kAdd: {
        adj_of(op.in0) += dy;
        adj_of(op.in1) += dy;
        break;
      }
      case OpKind::kMul: {
        adj_of(op.in0).array() += dy.array() * slots[op.in1].flat().array();
        adj_of(op.in1).array() += dy.array() * slots[op.in0].flat().array();
        break;
      }
      case OpKind::kReduceSum: {
        adj_of(op.in0).array() += dy[0];
        break;
      }
      case OpKind::kParamRef: {
        grads.at(op.param).flat() += dy;
        break;
      }
      case OpKind::kConstant:
        break;
    }
  }
  return grads;
}

ParamVector param_vjp(const ComputationRecord& record,
                      const ParamVector& params, const Tensor& input,
                      const Tensor& cotangent) {
  return param_vjp(record, params, std::span<const Tensor>(&input, 1),
                   cotangent);
}

Eigen::VectorXd finite_diff_grad(
    const std::function<double(const Eigen::VectorXd&)>& scalar_fn,
    const Eigen::VectorXd& point, double step) {
  check(step > 0.0, "finite_diff_grad requires step > 0");
  Eigen::VectorXd grad(point.size());
  Eigen::VectorXd x = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    x[i] = point[i] + step;
    const double fp = scalar_fn(x);
    x[i] = point[i] - step;
    const double fm = scalar_fn(x);
    x[i] = point[i];
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

}  // namespace setmf
