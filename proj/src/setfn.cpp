#include "setmf/setfn.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "setmf/rng.hpp"

namespace setmf {

namespace {

constexpr Eigen::Index kEvalChunk = 8192;

struct LayerDims {
  std::string w_name, b_name;
  Eigen::Index in, out;
};

// Head layout: depth-1 hidden ReLU layers of hidden_width, then the scalar
// output layer.
std::vector<LayerDims> layer_plan(const Arch& arch) {
  check(arch.depth == 2 || arch.depth == 3,
        "unsupported head depth " + std::to_string(arch.depth));
  check(arch.feature_dim >= 1, "feature_dim must be >= 1");
  std::vector<LayerDims> plan;
  plan.push_back({"init_w", "init_b", arch.feature_dim, arch.init_width});
  Eigen::Index in = arch.init_width;
  for (int l = 1; l < arch.depth; ++l) {
    plan.push_back({"fc" + std::to_string(l) + "_w",
                    "fc" + std::to_string(l) + "_b", in, arch.hidden_width});
    in = arch.hidden_width;
  }
  plan.push_back({"out_w", "out_b", in, 1});
  return plan;
}

void build_records(SetFunctionModel& model) {
  const Arch& arch = model.arch;
  auto plan = layer_plan(arch);

  // Full record: slot 0 features, slot 1 masks.
  {
    ComputationRecord r(2);
    int h = r.affine(r.input_slot(0), plan[0].w_name, plan[0].b_name);
    int a = r.sum_pool(r.input_slot(1), h);
    for (std::size_t l = 1; l + 1 < plan.size(); ++l)
      a = r.relu(r.affine(a, plan[l].w_name, plan[l].b_name));
    r.affine(a, plan.back().w_name, plan.back().b_name);
    model.record = std::move(r);
  }
  {
    ComputationRecord r(1);
    r.affine(r.input_slot(0), plan[0].w_name, plan[0].b_name);
    model.phi_record = std::move(r);
  }
  {
    ComputationRecord r(1);
    int a = r.input_slot(0);
    for (std::size_t l = 1; l + 1 < plan.size(); ++l)
      a = r.relu(r.affine(a, plan[l].w_name, plan[l].b_name));
    r.affine(a, plan.back().w_name, plan.back().b_name);
    model.head_record = std::move(r);
  }
}

}  // namespace

SubsetBatch::SubsetBatch(Tensor features_in, Tensor masks_in)
    : features(std::move(features_in)), masks(std::move(masks_in)) {
  check(features.rank() == 2, "features must be |V| x d_f");
  check(masks.rank() == 2, "masks must be n_subsets x |V|");
  check(masks.cols() == features.rows(),
        "mask width " + std::to_string(masks.cols()) +
            " does not match ground set size " +
            std::to_string(features.rows()));
  for (Eigen::Index i = 0; i < masks.flat().size(); ++i) {
    const double v = masks.flat()[i];
    check(v == 0.0 || v == 1.0, "mask entries must be 0 or 1");
  }
}

SetFunctionModel model_init(const Arch& arch, std::uint64_t seed) {
  SetFunctionModel model;
  model.arch = arch;
  auto plan = layer_plan(arch);
  for (std::size_t l = 0; l < plan.size(); ++l) {
    rng::Stream gen(rng::derive(seed, 0x5e7f, l));
    const double bound = 1.0 / std::sqrt(static_cast<double>(plan[l].in));
    Eigen::VectorXd w(plan[l].out * plan[l].in);
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w[i] = bound * (2.0 * gen.uniform() - 1.0);
    Eigen::VectorXd b(plan[l].out);
    for (Eigen::Index i = 0; i < b.size(); ++i)
      b[i] = bound * (2.0 * gen.uniform() - 1.0);
    model.params.add(plan[l].w_name,
                     Tensor({plan[l].out, plan[l].in}, std::move(w)));
    model.params.add(plan[l].b_name, Tensor({plan[l].out}, std::move(b)));
  }
  build_records(model);
  return model;
}

Eigen::VectorXd eval_sets(const SetFunctionModel& model,
                          const SubsetBatch& batch) {
  const Tensor inputs[2] = {batch.features, batch.masks};
  Tensor out = forward_eval(model.record, model.params, inputs);
  return out.flat();
}

ParamVector param_grad_weighted(const SetFunctionModel& model,
                                const SubsetBatch& batch,
                                const Eigen::VectorXd& weights) {
  const Eigen::Index n = batch.n_subsets();
  check(weights.size() == n, "weights length must equal n_subsets");
  ParamVector grads = ParamVector::zeros_like(model.params);
  const auto masks = batch.masks.as_matrix();
  for (Eigen::Index at = 0; at < n; at += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, n - at);
    const Tensor inputs[2] = {
        batch.features, Tensor::from_matrix(masks.middleRows(at, len))};
    Tensor cot({len, 1}, weights.segment(at, len));
    grads.axpy(1.0, param_vjp(model.record, model.params, inputs, cot));
  }
  return grads;
}

Eigen::MatrixXd item_embeddings(const SetFunctionModel& model,
                                const Tensor& features) {
  return forward_eval(model.phi_record, model.params, features).as_matrix();
}

Eigen::VectorXd eval_pooled(const SetFunctionModel& model,
                            const Eigen::MatrixXd& pooled) {
  const Eigen::Index n = pooled.rows();
  Eigen::VectorXd out(n);
  for (Eigen::Index at = 0; at < n; at += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, n - at);
    Tensor chunk = Tensor::from_matrix(pooled.middleRows(at, len));
    out.segment(at, len) =
        forward_eval(model.head_record, model.params, chunk).flat();
  }
  return out;
}

Eigen::VectorXd eval_masks_cached(const SetFunctionModel& model,
                                  const Eigen::MatrixXd& embeddings,
                                  const RowMatrixXd& masks) {
  const Eigen::Index n = masks.rows();
  Eigen::VectorXd out(n);
  for (Eigen::Index at = 0; at < n; at += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, n - at);
    const Eigen::MatrixXd pooled = masks.middleRows(at, len) * embeddings;
    out.segment(at, len) = eval_pooled(model, pooled);
  }
  return out;
}

void save_model(const SetFunctionModel& model, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["arch"] = {{"feature_dim", model.arch.feature_dim},
               {"init_width", model.arch.init_width},
               {"hidden_width", model.arch.hidden_width},
               {"depth", model.arch.depth}};
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : model.params.segments()) {
    nlohmann::json seg;
    seg["name"] = s.name;
    seg["shape"] = s.value.shape();
    seg["data"] = std::vector<double>(s.value.flat().data(),
                                      s.value.flat().data() + s.value.size());
    segs.push_back(std::move(seg));
  }
  j["segments"] = std::move(segs);
  std::ofstream out(path);
  check(out.good(), "cannot write model file " + path);
  out << j.dump() << "\n";
}

SetFunctionModel load_model(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot read model file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed model file " + path + ": " + e.what());
  }
  check(j.value("version", 0) == 1, "unsupported model format version");

  Arch arch;
  arch.feature_dim = j.at("arch").at("feature_dim").get<Eigen::Index>();
  arch.init_width = j.at("arch").at("init_width").get<Eigen::Index>();
  arch.hidden_width = j.at("arch").at("hidden_width").get<Eigen::Index>();
  arch.depth = j.at("arch").at("depth").get<int>();

  SetFunctionModel model = model_init(arch, 0);
  auto expected = model.params;  // shapes to validate against
  model.params = ParamVector();
  for (const auto& seg : j.at("segments")) {
    const std::string name = seg.value("name", "<unnamed>");
    try {
      auto shape = seg.at("shape").get<std::vector<Eigen::Index>>();
      auto data = seg.at("data").get<std::vector<double>>();
      Eigen::VectorXd flat =
          Eigen::Map<Eigen::VectorXd>(data.data(), data.size());
      Tensor t(shape, std::move(flat));
      check(expected.has(name) && expected.at(name).same_shape(t),
            "unexpected shape");
      model.params.add(name, std::move(t));
    } catch (const std::exception& e) {
      throw Error("bad model segment '" + name + "' in " + path + ": " +
                  e.what());
    }
  }
  check(model.params.segment_count() == expected.segment_count(),
        "model file " + path + " is missing parameter segments");
  return model;
}

}  // namespace setmf
