#pragma once

// Spatially enhanced causal Transformer over purchase sequences.
//
// Inputs are the left-padded arrays of a Sequence: item ids, shop-region ids
// and distance ids (bucket + 1), all 0 at PAD positions. Only the window of
// real positions is pushed through the blocks; with a causal mask and PAD
// keys masked out, the PAD rows of a full-length pass can never reach a real
// row, so the result is identical.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stkd/binary_io.hpp"
#include "stkd/checkpoint.hpp"
#include "stkd/errors.hpp"
#include "stkd/numerics.hpp"

namespace stkd::student {

using num::Tensor;
using num::Var;

/// How a live teacher readout is merged into the prediction anchor. `none`
/// is the distilled student, which never needs the teacher at inference.
enum class Fusion : std::uint8_t { none = 0, add = 1, cat = 2, multi = 3 };

inline const char* fusion_name(Fusion f) {
  switch (f) {
    case Fusion::none: return "stkd";
    case Fusion::add: return "add";
    case Fusion::cat: return "cat";
    case Fusion::multi: return "multi";
  }
  return "?";
}

struct StudentDims {
  std::size_t num_takeaways = 0;  // |V|
  std::size_t num_regions = 0;    // |C|
  std::size_t num_distances = 16;
  std::size_t d = 32;
  std::size_t n = 20;
  std::size_t heads = 2;
  std::size_t layers = 2;
  double dropout = 0.1;
  double init_std = 0.02;
  bool spatial = true;  // false: E_SP is not added at all (plain Transformer)
  Fusion fusion = Fusion::none;
};

template <class T>
struct Block {
  std::vector<Var<T>> Wq, Wk, Wv;  // per head, d x d'
  Var<T> Wo, bo;
  Var<T> ln1_g, ln1_b, ln2_g, ln2_b;
  Var<T> ff_W1, ff_b1, ff_W2, ff_b2;
};

template <class T>
class Student {
 public:
  Student(const StudentDims& dims, std::uint64_t seed) : dims_(dims) {
    if (dims.d == 0 || dims.n == 0 || dims.heads == 0 || dims.layers == 0 || dims.num_takeaways == 0)
      throw ConfigError("student: dimensions must be positive");
    if (dims.d % dims.heads != 0)
      throw ConfigError("student: d=" + std::to_string(dims.d) + " is not divisible by K=" + std::to_string(dims.heads));
    if (!(dims.dropout >= 0.0 && dims.dropout < 1.0)) throw ConfigError("student: dropout must be in [0,1)");
    Rng rng = make_rng(seed, {0x57d3ULL});
    const auto d = dims.d, dh = dims.d / dims.heads;
    auto tn = [&](std::size_t r, std::size_t c) { return num::truncated_normal_tensor<T>({r, c}, dims.init_std, rng); };
    auto ones = [&](std::size_t c) { return Tensor<T>::matrix(1, c, T(1)); };
    auto zeros = [&](std::size_t c) { return Tensor<T>::matrix(1, c); };
    item_emb = params.add("item_emb", tn(dims.num_takeaways + 1, d), {0});
    region_emb = params.add("region_emb", tn(dims.num_regions + 1, d), {0});
    dist_emb = params.add("dist_emb", tn(dims.num_distances + 1, d), {0});
    W_SP = params.add("W_SP", tn(d, d));
    pos_emb = params.add("pos_emb", tn(dims.n, d));
    for (std::size_t l = 0; l < dims.layers; ++l) {
      Block<T> b;
      const auto p = "block" + std::to_string(l) + ".";
      for (std::size_t h = 0; h < dims.heads; ++h) {
        const auto hs = std::to_string(h);
        b.Wq.push_back(params.add(p + "Wq" + hs, tn(d, dh)));
        b.Wk.push_back(params.add(p + "Wk" + hs, tn(d, dh)));
        b.Wv.push_back(params.add(p + "Wv" + hs, tn(d, dh)));
      }
      b.Wo = params.add(p + "Wo", tn(d, d));
      b.bo = params.add(p + "bo", zeros(d));
      b.ln1_g = params.add(p + "ln1_g", ones(d));
      b.ln1_b = params.add(p + "ln1_b", zeros(d));
      b.ln2_g = params.add(p + "ln2_g", ones(d));
      b.ln2_b = params.add(p + "ln2_b", zeros(d));
      b.ff_W1 = params.add(p + "ff_W1", tn(d, 4 * d));
      b.ff_b1 = params.add(p + "ff_b1", zeros(4 * d));
      b.ff_W2 = params.add(p + "ff_W2", tn(4 * d, d));
      b.ff_b2 = params.add(p + "ff_b2", zeros(d));
      blocks.push_back(std::move(b));
    }
    lnf_g = params.add("lnf_g", ones(d));
    lnf_b = params.add("lnf_b", zeros(d));
    if (dims.fusion == Fusion::cat) fusion_W = params.add("fusion_W", tn(2 * d, d));
  }

  const StudentDims& dims() const { return dims_; }

  /// Ablation switches: zero a spatial table (and W_SP) and keep it frozen.
  void disable_region() { params.zero_and_freeze("region_emb"); }
  void disable_distance() { params.zero_and_freeze("dist_emb"); }
  void disable_spatial() {
    disable_region();
    disable_distance();
    params.zero_and_freeze("W_SP");
  }

  num::ParamSet<T> params;
  Var<T> item_emb, region_emb, dist_emb, W_SP, pos_emb;
  std::vector<Block<T>> blocks;
  Var<T> lnf_g, lnf_b, fusion_W;

 private:
  StudentDims dims_;
};

/// The contiguous run of real positions [first, first + size) of a padded
/// sequence. Padding is normally on the left; trailing PADs are tolerated and
/// simply move the prediction anchor to the last real position.
struct Window {
  std::size_t length = 0;  // full padded length
  std::size_t first = 0;
  std::vector<std::uint32_t> items, regions, distances;
  std::size_t size() const { return items.size(); }
};

inline Window real_window(const std::vector<std::uint32_t>& x, const std::vector<std::uint32_t>& x_c,
                          const std::vector<std::uint32_t>& x_f) {
  if (x.size() != x_c.size() || x.size() != x_f.size())
    throw ConfigError("student: item, region and distance arrays must have equal length");
  std::size_t first = 0;
  while (first < x.size() && x[first] == 0) ++first;
  if (first == x.size()) throw InvalidSampleError("student: sequence has no real positions");
  std::size_t last = x.size();
  while (x[last - 1] == 0) --last;
  for (std::size_t i = first; i < last; ++i)
    if (x[i] == 0) throw InvalidSampleError("student: PAD inside the real part of a sequence");
  Window w;
  w.length = x.size();
  w.first = first;
  w.items.assign(x.begin() + first, x.begin() + last);
  w.regions.assign(x_c.begin() + first, x_c.begin() + last);
  w.distances.assign(x_f.begin() + first, x_f.begin() + last);
  return w;
}

/// E_SP = (E_xc + E_xf) W_SP for the given rows.
template <class T>
Var<T> spatial_position_embedding(const Student<T>& s, const std::vector<std::uint32_t>& x_c,
                                  const std::vector<std::uint32_t>& x_f) {
  return num::matmul(num::add(num::gather_rows(s.region_emb, x_c), num::gather_rows(s.dist_emb, x_f)), s.W_SP);
}

/// E_x + E_SP + E_P over the window, then dropout when `rng` is given.
template <class T>
Var<T> embed_sequence(const Student<T>& s, const Window& w, Rng* rng = nullptr) {
  if (w.length != s.dims().n)
    throw ConfigError("student: sequence length " + std::to_string(w.length) + " != n=" + std::to_string(s.dims().n));
  auto e = num::add(num::gather_rows(s.item_emb, w.items), num::slice_rows(s.pos_emb, w.first, w.first + w.size()));
  if (s.dims().spatial) e = num::add(e, spatial_position_embedding(s, w.regions, w.distances));
  if (rng) e = num::dropout(e, s.dims().dropout, *rng);
  return e;
}

inline std::vector<std::uint8_t> causal_mask(std::size_t m) {
  std::vector<std::uint8_t> mask(m * m, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j) mask[i * m + j] = 1;
  return mask;
}

/// One pre-norm block: X + MHA(LN(X)), then X + FFN(LN(X)).
template <class T>
Var<T> attention_block(const Student<T>& s, std::size_t layer, const Var<T>& X, Rng* rng = nullptr) {
  const auto& b = s.blocks.at(layer);
  const auto m = X.rows();
  if (X.cols() != s.dims().d) throw ConfigError("attention_block: input width mismatch");
  const auto mask = causal_mask(m);
  const T inv_sqrt = T(1) / std::sqrt(T(s.dims().d / s.dims().heads));
  auto a = num::layer_norm(X, b.ln1_g, b.ln1_b);
  std::vector<Var<T>> heads;
  for (std::size_t h = 0; h < b.Wq.size(); ++h) {
    auto Q = num::matmul(a, b.Wq[h]), K = num::matmul(a, b.Wk[h]), V = num::matmul(a, b.Wv[h]);
    auto P = num::softmax_rows(num::scale(num::matmul_nt(Q, K), inv_sqrt), T(1), std::span<const std::uint8_t>(mask));
    heads.push_back(num::matmul(P, V));
  }
  auto att = num::add_row(num::matmul(num::concat_cols(heads), b.Wo), b.bo);
  if (rng) att = num::dropout(att, s.dims().dropout, *rng);
  auto H = num::add(X, att);
  auto c = num::layer_norm(H, b.ln2_g, b.ln2_b);
  auto f = num::add_row(num::matmul(num::relu(num::add_row(num::matmul(c, b.ff_W1), b.ff_b1)), b.ff_W2), b.ff_b2);
  if (rng) f = num::dropout(f, s.dims().dropout, *rng);
  return num::add(H, f);
}

/// Final-layer representation of every real position (window rows).
template <class T>
Var<T> encode(const Student<T>& s, const Window& w, Rng* rng = nullptr) {
  auto X = embed_sequence(s, w, rng);
  for (std::size_t l = 0; l < s.blocks.size(); ++l) X = attention_block(s, l, X, rng);
  return num::layer_norm(X, s.lnf_g, s.lnf_b);
}

inline std::vector<std::uint8_t> item_mask(std::size_t num_takeaways) {
  std::vector<std::uint8_t> m(num_takeaways + 1, 1);
  m[0] = 0;
  return m;
}

/// Merges a teacher readout into the anchor for the fusion baselines.
template <class T>
Var<T> fuse(const Student<T>& s, const Var<T>& h_star, const Var<T>* teacher_readout) {
  const auto f = s.dims().fusion;
  if (f == Fusion::none) return h_star;
  if (!teacher_readout) throw ConfigError("student: fusion strategy requires a teacher readout");
  switch (f) {
    case Fusion::add: return num::add(h_star, *teacher_readout);
    case Fusion::multi: return num::mul(h_star, *teacher_readout);
    case Fusion::cat: return num::matmul(num::concat_cols<T>({h_star, *teacher_readout}), s.fusion_W);
    default: return h_star;
  }
}

template <class T>
struct Prediction {
  Var<T> anchor;  // h*, 1 x d (after fusion)
  Var<T> logits;  // 1 x (|V|+1)
  Var<T> probs;   // softmax with the PAD column at exactly 0
};

/// Scores every takeaway from the last real position: softmax(h* E_V^T).
template <class T>
Prediction<T> predict(const Student<T>& s, const std::vector<std::uint32_t>& x, const std::vector<std::uint32_t>& x_c,
                      const std::vector<std::uint32_t>& x_f, Rng* rng = nullptr,
                      const Var<T>* teacher_readout = nullptr) {
  const auto w = real_window(x, x_c, x_f);
  auto H = encode(s, w, rng);
  Prediction<T> p;
  p.anchor = fuse(s, num::slice_rows(H, H.rows() - 1, H.rows()), teacher_readout);
  p.logits = num::matmul_nt(p.anchor, s.item_emb);
  const auto mask = item_mask(s.dims().num_takeaways);
  p.probs = num::softmax_rows(p.logits, T(1), std::span<const std::uint8_t>(mask));
  return p;
}

/// Softened teacher distribution over takeaway ids, PAD at 0.
template <class T>
Tensor<T> teacher_distribution(const Tensor<T>& teacher_logits, T tau) {
  num::NoGradGuard ng;
  const auto mask = item_mask(teacher_logits.size() - 1);
  return num::softmax(Var<T>::constant(teacher_logits), tau, std::span<const std::uint8_t>(mask)).value();
}

/// Teacher logits recovered from cached probabilities: log(max(p, 1e-12)).
template <class T>
Tensor<T> logits_from_soft_labels(const Tensor<T>& probs) {
  Tensor<T> out = probs;
  for (auto& v : out.values()) v = std::log(std::max(v, T(num::kClamp)));
  return out;
}

/// tau^2 * KL(softmax(t / tau) || softmax(s / tau)); the teacher side is a constant.
template <class T>
Var<T> kd_loss(const Tensor<T>& teacher_logits, const Var<T>& student_logits, T tau) {
  if (!(tau > T(0))) throw std::invalid_argument("kd_loss: temperature must be positive");
  if (teacher_logits.size() != student_logits.value().size())
    throw std::invalid_argument("kd_loss: teacher and student logits cover different vocabularies");
  const auto mask = item_mask(teacher_logits.size() - 1);
  auto q = num::softmax(student_logits, tau, std::span<const std::uint8_t>(mask));
  return num::scale(num::kl_divergence(teacher_distribution(teacher_logits, tau), q), tau * tau);
}

template <class T>
Var<T> rec_loss(const Var<T>& probs, std::uint32_t target) {
  if (target == 0) throw std::out_of_range("rec_loss: target must be a takeaway id, not PAD");
  return num::cross_entropy(probs, target);
}

template <class T>
Var<T> joint_loss(const Var<T>& kd, const Var<T>& rec, T alpha) {
  if (!(alpha >= T(0) && alpha <= T(1))) throw std::invalid_argument("joint_loss: alpha must be in [0,1]");
  return num::add(num::scale(kd, alpha), num::scale(rec, T(1) - alpha));
}

/// Top-k (takeaway id, probability) pairs, ties broken by smaller id.
template <class T>
std::vector<std::pair<std::uint32_t, T>> recommend(const Student<T>& s, const std::vector<std::uint32_t>& x,
                                                   const std::vector<std::uint32_t>& x_c,
                                                   const std::vector<std::uint32_t>& x_f, std::size_t k) {
  num::NoGradGuard ng;
  const auto probs = predict(s, x, x_c, x_f).probs.value();
  std::vector<std::pair<std::uint32_t, T>> all;
  for (std::uint32_t i = 1; i < probs.size(); ++i) all.push_back({i, probs[i]});
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](auto& a, auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
  all.resize(k);
  return all;
}

inline constexpr std::uint32_t kStudentCheckpointVersion = 1;

template <class T>
void save_student(const Student<T>& s, std::uint64_t vocab_hash, const std::string& config_json,
                  const std::string& path) {
  BinaryWriter w(path);
  w.header("STKDSTUD", kStudentCheckpointVersion);
  w.u64(vocab_hash);
  const auto& d = s.dims();
  for (auto v : {d.num_takeaways, d.num_regions, d.num_distances, d.d, d.n, d.heads, d.layers}) w.u64(v);
  w.pod(d.dropout);
  w.pod(d.init_std);
  w.pod(static_cast<std::uint8_t>(d.spatial));
  w.pod(static_cast<std::uint8_t>(d.fusion));
  w.str(config_json);
  write_params(w, s.params);
  w.close();
}

template <class T>
struct LoadedStudent {
  Student<T> student;
  std::string config_json;
};

template <class T>
LoadedStudent<T> load_student(const std::string& path, std::uint64_t expected_vocab_hash) {
  BinaryReader r(path);
  r.header("STKDSTUD", kStudentCheckpointVersion);
  if (r.u64() != expected_vocab_hash)
    throw ConsistencyError("student checkpoint '" + path + "' was built for a different vocabulary");
  StudentDims d;
  d.num_takeaways = r.u64();
  d.num_regions = r.u64();
  d.num_distances = r.u64();
  d.d = r.u64();
  d.n = r.u64();
  d.heads = r.u64();
  d.layers = r.u64();
  d.dropout = r.pod<double>();
  d.init_std = r.pod<double>();
  d.spatial = r.pod<std::uint8_t>() != 0;
  d.fusion = static_cast<Fusion>(r.pod<std::uint8_t>());
  auto cfg = r.str();
  LoadedStudent<T> out{Student<T>(d, 0), std::move(cfg)};
  read_params(r, out.student.params, path);
  return out;
}

}  // namespace stkd::student
