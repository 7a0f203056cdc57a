#pragma once

// Graph teacher: relation-aware message passing over a sampled subgraph,
// a user-conditioned gate over the sequence rows, and an additive-attention
// readout scored against every takeaway embedding.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stkd/binary_io.hpp"
#include "stkd/checkpoint.hpp"
#include "stkd/errors.hpp"
#include "stkd/instrumentation.hpp"
#include "stkd/numerics.hpp"
#include "stkd/stkg/graph.hpp"
#include "stkd/stkg/sampling.hpp"

namespace stkd::teacher {

using num::Tensor;
using num::Var;

struct TeacherDims {
  std::size_t num_entities = 0;   // including PAD
  std::size_t num_relations = 0;
  std::size_t num_takeaways = 0;  // |V|; entity rows 1..|V| are the takeaways
  std::size_t d = 32;
  std::size_t n = 20;
  std::size_t layers = 2;
  double embedding_std = 0.1;
};

template <class T>
class Teacher {
 public:
  Teacher(const TeacherDims& dims, std::uint64_t seed) : dims_(dims) {
    if (dims.d == 0 || dims.n == 0 || dims.layers == 0 || dims.num_takeaways == 0 ||
        dims.num_entities <= dims.num_takeaways || dims.num_relations == 0)
      throw ConfigError("teacher: invalid dimensions");
    Rng rng = make_rng(seed, {0x7eac4e7ULL});
    const auto d = dims.d;
    entity_emb = params.add("entity_emb", num::truncated_normal_tensor<T>({dims.num_entities, d}, dims.embedding_std, rng),
                            {0});
    relation_emb =
        params.add("relation_emb", num::truncated_normal_tensor<T>({dims.num_relations, d}, dims.embedding_std, rng));
    for (std::size_t l = 0; l < dims.layers; ++l) {
      combine_W.push_back(params.add("combine_W" + std::to_string(l), num::xavier_tensor<T>(2 * d, d, rng)));
      combine_b.push_back(params.add("combine_b" + std::to_string(l), Tensor<T>::matrix(1, d)));
    }
    gate_W1 = params.add("gate_W1", num::xavier_tensor<T>(d, 1, rng));
    gate_W2 = params.add("gate_W2", num::xavier_tensor<T>(dims.n, d, rng));
    attnet_W = params.add("attnet_W", num::xavier_tensor<T>(d, d, rng));
    attnet_w = params.add("attnet_w", num::xavier_tensor<T>(d, 1, rng));
  }

  static TeacherDims dims_for(const stkg::Stkg& g, std::size_t d, std::size_t n, std::size_t layers) {
    TeacherDims dims;
    dims.num_entities = g.num_entities();
    dims.num_relations = g.num_relations();
    dims.num_takeaways = g.num_takeaways;
    dims.d = d;
    dims.n = n;
    dims.layers = layers;
    return dims;
  }

  const TeacherDims& dims() const { return dims_; }

  num::ParamSet<T> params;
  Var<T> entity_emb, relation_emb;
  std::vector<Var<T>> combine_W, combine_b;
  Var<T> gate_W1, gate_W2, attnet_W, attnet_w;

 private:
  TeacherDims dims_;
};

template <class T>
struct TeacherOutput {
  Var<T> H_x;          // n x d, PAD rows zero
  Var<T> H_u;          // 1 x d
  Var<T> H_gated;      // n x d
  Var<T> readout;      // 1 x d
  Var<T> logits;       // 1 x (|V|+1); column 0 is PAD
  Var<T> soft_labels;  // 1 x (|V|+1); column 0 is exactly 0
};

inline std::vector<std::uint8_t> pad_mask_of(const std::vector<std::uint32_t>& items) {
  std::vector<std::uint8_t> m(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) m[i] = items[i] != 0;
  return m;
}

/// Runs the configured number of message-passing layers. Layer l only
/// updates instances whose depth is at most layers - l, which are exactly the
/// rows later layers read.
template <class T>
std::pair<Var<T>, Var<T>> gnn_forward(const Teacher<T>& t, const stkg::Subgraph& sg) {
  const auto& dims = t.dims();
  if (sg.centers.size() != dims.n)
    throw ConfigError("gnn_forward: subgraph has " + std::to_string(sg.centers.size()) + " positions, teacher expects " +
                      std::to_string(dims.n));
  counters().gnn_forwards.fetch_add(1, std::memory_order_relaxed);
  const std::size_t L = dims.layers, d = dims.d;
  const std::size_t live = sg.prefix_upto(L);
  Var<T> h = num::gather_rows(t.entity_emb, std::vector<std::uint32_t>(sg.node_entity.begin(),
                                                                         sg.node_entity.begin() + live));
  for (std::size_t l = 1; l <= L; ++l) {
    const std::size_t parents = sg.prefix_upto(L - l);
    const std::uint32_t edges = sg.child_offsets[parents];
    Var<T> m;
    if (edges > 0) {
      std::vector<std::uint32_t> child(edges), rel(sg.edge_relation.begin(), sg.edge_relation.begin() + edges);
      for (std::uint32_t k = 0; k < edges; ++k) child[k] = sg.edge_child(k);
      auto msg = num::add(num::gather_rows(h, std::move(child)), num::gather_rows(t.relation_emb, std::move(rel)));
      m = num::segment_mean(msg, std::vector<std::uint32_t>(sg.child_offsets.begin(),
                                                             sg.child_offsets.begin() + parents + 1));
    } else {
      m = Var<T>::constant(Tensor<T>::matrix(parents, d));
    }
    auto self = num::slice_rows(h, 0, parents);
    h = num::relu(num::add_row(num::matmul(num::concat_cols<T>({m, self}), t.combine_W[l - 1]), t.combine_b[l - 1]));
  }

  std::vector<std::uint32_t> positions, instances;
  for (std::size_t i = 0; i < sg.center_node.size(); ++i)
    if (sg.center_node[i] != stkg::kNoNode) {
      positions.push_back(static_cast<std::uint32_t>(i));
      instances.push_back(sg.center_node[i]);
    }
  Var<T> H_x = positions.empty()
                   ? Var<T>::constant(Tensor<T>::matrix(dims.n, d))
                   : num::scatter_rows(num::gather_rows(h, std::move(instances)), std::move(positions), dims.n);
  Var<T> H_u = num::slice_rows(h, sg.user_instance, sg.user_instance + 1);
  return {H_x, H_u};
}

/// H' = H (.) sigmoid(H W1 + W2 H_u^T), the n x 1 gate broadcast over columns.
template <class T>
Var<T> user_gate(const Var<T>& H_x, const Var<T>& H_u, const Teacher<T>& t) {
  if (H_x.rows() != t.dims().n || H_x.cols() != t.dims().d || H_u.rows() != 1 || H_u.cols() != t.dims().d)
    throw ConfigError("user_gate: expected " + std::to_string(t.dims().n) + "x" + std::to_string(t.dims().d) +
                      " and 1x" + std::to_string(t.dims().d) + " inputs");
  auto gate = num::sigmoid(num::add(num::matmul(H_x, t.gate_W1), num::matmul_nt(t.gate_W2, H_u)));
  return num::mul_col(H_x, gate);
}

/// Additive attention over the real positions: alpha = softmax(w^T tanh(W h'_i)),
/// r = sum_i alpha_i h'_i.
template <class T>
Var<T> attnet_readout(const Var<T>& H_gated, const Teacher<T>& t, const std::vector<std::uint8_t>& pad_mask) {
  bool any = false;
  for (auto m : pad_mask) any = any || m;
  if (!any) throw InvalidSampleError("soft_labels: sequence has no real positions");
  auto scores = num::transpose(num::matmul(num::tanh(num::matmul(H_gated, t.attnet_W)), t.attnet_w));
  auto alpha = num::softmax_rows(scores, T(1), std::span<const std::uint8_t>(pad_mask));
  return num::matmul(alpha, H_gated);
}

template <class T>
std::vector<std::uint8_t> takeaway_mask(const Teacher<T>& t) {
  std::vector<std::uint8_t> m(t.dims().num_takeaways + 1, 1);
  m[0] = 0;
  return m;
}

/// Soft labels over takeaway ids 0..|V|: softmax(r E_V^T) with PAD masked.
template <class T>
std::pair<Var<T>, Var<T>> soft_labels(const Var<T>& H_gated, const Teacher<T>& t,
                                      const std::vector<std::uint8_t>& pad_mask, Var<T>* readout = nullptr) {
  auto r = attnet_readout(H_gated, t, pad_mask);
  if (readout) *readout = r;
  auto E_V = num::slice_rows(t.entity_emb, 0, t.dims().num_takeaways + 1);
  auto logits = num::matmul_nt(r, E_V);
  const auto mask = takeaway_mask(t);
  return {logits, num::softmax_rows(logits, T(1), std::span<const std::uint8_t>(mask))};
}

template <class T>
TeacherOutput<T> teacher_forward(const Teacher<T>& t, const stkg::Subgraph& sg) {
  TeacherOutput<T> out;
  std::tie(out.H_x, out.H_u) = gnn_forward(t, sg);
  out.H_gated = user_gate(out.H_x, out.H_u, t);
  std::tie(out.logits, out.soft_labels) = soft_labels(out.H_gated, t, pad_mask_of(sg.centers), &out.readout);
  return out;
}

struct TeacherSample {
  const stkg::Subgraph* subgraph = nullptr;
  std::uint32_t target = 0;
};

/// Cross-entropy of the teacher's soft labels against the one-hot target.
template <class T>
Var<T> pretrain_loss(const Teacher<T>& t, const stkg::Subgraph& sg, std::uint32_t target) {
  if (target == 0 || target > t.dims().num_takeaways)
    throw std::out_of_range("pretrain_loss: target " + std::to_string(target) + " is not a takeaway id");
  return num::cross_entropy(teacher_forward(t, sg).soft_labels, target);
}

/// One optimizer update on the mean batch loss. Gradients of each sample are
/// accumulated with weight 1/B, which equals backpropagating the mean.
template <class T>
double pretrain_step(Teacher<T>& t, num::Adam<T>& opt, const std::vector<TeacherSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
  double total = 0.0;
  const T w = T(1) / T(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    try {
      auto loss = pretrain_loss(t, *batch[i].subgraph, batch[i].target);
      total += static_cast<double>(loss.value().item());
      num::backward(loss, w);
    } catch (const NumericalError& e) {
      throw NumericalError(e.op(), std::string(e.what()) + " [batch sample " + std::to_string(i) + "]");
    }
  }
  opt.step();
  return total / double(batch.size());
}

inline constexpr std::uint32_t kTeacherCheckpointVersion = 1;

template <class T>
void save_teacher(const Teacher<T>& t, std::uint64_t vocab_hash, const std::string& config_json,
                  const std::string& path) {
  BinaryWriter w(path);
  w.header("STKDTEAC", kTeacherCheckpointVersion);
  w.u64(vocab_hash);
  const auto& d = t.dims();
  for (auto v : {d.num_entities, d.num_relations, d.num_takeaways, d.d, d.n, d.layers}) w.u64(v);
  w.pod(d.embedding_std);
  w.str(config_json);
  write_params(w, t.params);
  w.close();
}

template <class T>
struct LoadedTeacher {
  Teacher<T> teacher;
  std::string config_json;
};

/// Loads a checkpoint; refuses when it was trained against another vocabulary.
template <class T>
LoadedTeacher<T> load_teacher(const std::string& path, std::uint64_t expected_vocab_hash) {
  BinaryReader r(path);
  r.header("STKDTEAC", kTeacherCheckpointVersion);
  if (r.u64() != expected_vocab_hash)
    throw ConsistencyError("teacher checkpoint '" + path + "' was built for a different vocabulary");
  TeacherDims d;
  d.num_entities = r.u64();
  d.num_relations = r.u64();
  d.num_takeaways = r.u64();
  d.d = r.u64();
  d.n = r.u64();
  d.layers = r.u64();
  d.embedding_std = r.pod<double>();
  auto cfg = r.str();
  LoadedTeacher<T> out{Teacher<T>(d, 0), std::move(cfg)};
  read_params(r, out.teacher.params, path);
  return out;
}

}  // namespace stkd::teacher
