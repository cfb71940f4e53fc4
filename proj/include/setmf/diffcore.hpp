#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "setmf/tensor.hpp"

// Minimal reverse-mode engine over a fixed primitive set: affine map, ReLU,
// sum-pool (mask times item matrix), elementwise add/mul, and sum reduction.
// Records are straight-line programs in SSA form: slots [0, n_inputs) are
// the inputs, each op writes exactly one fresh slot.
namespace setmf {

enum class OpKind : std::uint8_t {
  kAffine,     // Y = X * W^T + 1 b^T        (reads segments weight/bias)
  kRelu,       // Y = max(X, 0)
  kSumPool,    // Y = M * H                  (mask rows pool item rows)
  kAdd,        // Y = A + B
  kMul,        // Y = A .* B
  kReduceSum,  // y = sum of all entries, 1x1
  kParamRef,   // Y = params[name]
  kConstant,   // Y = embedded tensor
};

struct Op {
  OpKind kind;
  int in0 = -1;
  int in1 = -1;
  int out = -1;
  std::string weight;  // kAffine
  std::string bias;    // kAffine
  std::string param;   // kParamRef
  Tensor constant;     // kConstant
};

class ComputationRecord {
 public:
  explicit ComputationRecord(int n_inputs = 1) : n_inputs_(n_inputs) {
    next_slot_ = n_inputs;
  }

  int n_inputs() const { return n_inputs_; }
  int input_slot(int i) const;

  int affine(int x, const std::string& weight, const std::string& bias);
  int relu(int x);
  int sum_pool(int mask, int items);
  int add(int a, int b);
  int mul(int a, int b);
  int reduce_sum(int x);
  int param_ref(const std::string& name);
  int constant(Tensor value);

  int output_slot() const;
  int slot_count() const { return next_slot_; }
  const std::vector<Op>& ops() const { return ops_; }

 private:
  int push(Op op);
  int require_written(int slot) const;

  int n_inputs_;
  int next_slot_;
  std::vector<Op> ops_;
};

// Runs the record. Throws on shape mismatch and on non-finite intermediates
// (numerical blow-up surfaces here rather than as silent NaNs downstream).
Tensor forward_eval(const ComputationRecord& record, const ParamVector& params,
                    std::span<const Tensor> inputs);
Tensor forward_eval(const ComputationRecord& record, const ParamVector& params,
                    const Tensor& input);

// Gradient of <cotangent, output> with respect to every parameter segment.
ParamVector param_vjp(const ComputationRecord& record,
                      const ParamVector& params, std::span<const Tensor> inputs,
                      const Tensor& cotangent);
ParamVector param_vjp(const ComputationRecord& record,
                      const ParamVector& params, const Tensor& input,
                      const Tensor& cotangent);

// Central-difference gradient, the test oracle for every VJP in the library.
Eigen::VectorXd finite_diff_grad(
    const std::function<double(const Eigen::VectorXd&)>& scalar_fn,
    const Eigen::VectorXd& point, double step);

}  // namespace setmf
