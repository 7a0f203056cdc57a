#pragma once

// Two-stage training (teacher pre-training, then distillation into the
// student), ranked evaluation, and the ablation / fusion / sweep studies.
// Everything here works on in-memory objects; commands.hpp adds files.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "stkd/binary_io.hpp"
#include "stkd/data/sequences.hpp"
#include "stkd/errors.hpp"
#include "stkd/harness/config.hpp"
#include "stkd/harness/metrics.hpp"
#include "stkd/instrumentation.hpp"
#include "stkd/numerics.hpp"
#include "stkd/stkg/graph.hpp"
#include "stkd/stkg/sampling.hpp"
#include "stkd/student/student.hpp"
#include "stkd/teacher/teacher.hpp"

namespace stkd::harness {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Dataset plus its graph and the lookups every stage shares.
struct Workspace {
  data::Dataset dataset;
  stkg::Stkg graph;
  std::uint64_t vocab_hash = 0;

  std::vector<const data::Sequence*> split(data::Split s) const { return dataset.split(s); }
  std::size_t num_takeaways() const { return dataset.num_takeaways(); }
};

inline Workspace make_workspace(data::Dataset ds) {
  Workspace ws;
  ws.graph = stkg::build_stkg(ds);
  ws.vocab_hash = ds.vocab.hash();
  ws.dataset = std::move(ds);
  return ws;
}

inline Workspace make_workspace(data::Dataset ds, stkg::Stkg g) {
  if (g.vocab_hash != ds.vocab.hash()) throw ConsistencyError("graph and dataset were built from different vocabularies");
  Workspace ws;
  ws.graph = std::move(g);
  ws.vocab_hash = ds.vocab.hash();
  ws.dataset = std::move(ds);
  return ws;
}

inline void check_compatible(const Workspace& ws, const TrainConfig& cfg) {
  if (ws.dataset.config.n != cfg.n)
    throw ConfigError("dataset was built with n=" + std::to_string(ws.dataset.config.n) + " but config has n=" +
                      std::to_string(cfg.n));
  if (ws.num_takeaways() == 0) throw ConfigError("dataset has no takeaways");
}

inline std::vector<std::size_t> with_k10(std::vector<std::size_t> ks) {
  if (std::find(ks.begin(), ks.end(), 10) == ks.end()) ks.push_back(10);
  std::sort(ks.begin(), ks.end());
  return ks;
}

/// Scores all takeaway ids (index = id, index 0 ignored) for one sequence.
template <class T>
using Scorer = std::function<std::vector<T>(const data::Sequence&)>;

/// Ranks every sequence of a split against its user's sampled negatives.
/// Scoring is spread over `cfg.threads` workers; ranks are reduced in split
/// order, so the result does not depend on the thread count.
template <class T>
MetricsReport rank_split(const Workspace& ws, const TrainConfig& cfg, data::Split split, const Scorer<T>& score,
                         std::vector<std::size_t> k_list) {
  const auto seqs = ws.split(split);
  NegativeSampler sampler(ws.num_takeaways(), ws.dataset.purchased_by_user(), cfg.n_negatives, cfg.seed);
  MetricsReport r;
  std::vector<std::vector<std::uint32_t>> negatives(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto [neg, short_pool] = sampler.sample(seqs[i]->user);
    negatives[i] = std::move(neg);
    r.short_candidate_users += short_pool;
  }

  std::vector<std::size_t> ranks(seqs.size(), 0);
  auto work = [&](std::size_t worker, std::size_t workers) {
    num::NoGradGuard ng;
    for (std::size_t i = worker; i < seqs.size(); i += workers) {
      const auto scores = score(*seqs[i]);
      std::vector<T> neg(negatives[i].size());
      for (std::size_t j = 0; j < neg.size(); ++j) neg[j] = scores[negatives[i][j]];
      ranks[i] = rank_of<T>(scores[seqs[i]->target], neg);
    }
  };

  const auto before = CounterSnapshot::now();
  const auto t0 = Clock::now();
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.threads, seqs.size()));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          work(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  r.predict_seconds = seconds_since(t0);
  const auto used = CounterSnapshot::now() - before;
  r.subgraph_samples = used.subgraph_samples;
  r.gnn_forwards = used.gnn_forwards;
  r.predict_batches = (seqs.size() + cfg.batch_size - 1) / cfg.batch_size;
  fill_metrics(r, ranks, k_list);
  r.split = data::split_name(split);
  r.seed = cfg.seed;
  r.config = to_json(cfg);
  r.config_hash = hex64(config_hash(cfg));
  r.vocab_hash = hex64(ws.vocab_hash);
  return r;
}

template <class T>
std::vector<T> logits_vector(const num::Tensor<T>& t) {
  return std::vector<T>(t.values().begin(), t.values().end());
}

// ---------------------------------------------------------------------------
// Teacher

template <class T>
teacher::TeacherDims teacher_dims(const Workspace& ws, const TrainConfig& cfg) {
  auto d = teacher::Teacher<T>::dims_for(ws.graph, cfg.d, cfg.n, cfg.fanouts.size());
  d.embedding_std = cfg.teacher_embedding_std;
  return d;
}

/// The subgraph used for a sequence everywhere: training, soft labels and
/// fused inference all draw it with the run seed.
inline stkg::Subgraph subgraph_for(const Workspace& ws, const TrainConfig& cfg, const data::Sequence& seq) {
  return stkg::sample_subgraph(seq, ws.graph, cfg.fanouts, cfg.seed);
}

template <class T>
Scorer<T> teacher_scorer(const Workspace& ws, const TrainConfig& cfg, const teacher::Teacher<T>& t) {
  return [&ws, &cfg, &t](const data::Sequence& seq) {
    const auto sg = subgraph_for(ws, cfg, seq);
    return logits_vector(teacher::teacher_forward(t, sg).logits.value());
  };
}

/// Shared early-stopping bookkeeping on validation NDCG@10.
struct EarlyStopper {
  std::size_t patience;
  double best = -1.0;
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;

  /// Returns true when `value` is a new best.
  bool observe(double value, std::size_t epoch) {
    if (value > best) {
      best = value;
      best_epoch = epoch;
      since_best = 0;
      return true;
    }
    ++since_best;
    return false;
  }
  bool should_stop() const { return since_best >= patience; }
};

template <class T>
struct TeacherRun {
  explicit TeacherRun(teacher::Teacher<T> t) : teacher(std::move(t)) {}

  teacher::Teacher<T> teacher;
  std::vector<double> loss_trace;    // mean loss per optimizer step
  std::vector<double> valid_ndcg10;  // per evaluation, epoch 0 = initial parameters
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double train_seconds = 0.0;
  bool diverged = false;
  std::string error;
};

/// Pre-trains the teacher on the training split with early stopping on the
/// validation NDCG@10. On a non-finite loss the best parameters so far are
/// restored and the run is marked as diverged.
template <class T>
TeacherRun<T> pretrain_teacher(const Workspace& ws, const TrainConfig& cfg) {
  validate(cfg);
  check_compatible(ws, cfg);
  TeacherRun<T> run(teacher::Teacher<T>(teacher_dims<T>(ws, cfg), cfg.seed));
  auto& t = run.teacher;
  const auto train = ws.split(data::Split::train);
  const bool has_valid = !ws.split(data::Split::valid).empty();
  std::vector<stkg::Subgraph> subgraphs;
  subgraphs.reserve(train.size());
  for (auto* s : train) subgraphs.push_back(subgraph_for(ws, cfg, *s));

  num::Adam<T> opt(t.params, {cfg.teacher_lr, 0.9, 0.98, 1e-8});
  EarlyStopper stop{cfg.patience};
  auto snapshot = t.params.snapshot();
  auto validate_now = [&](std::size_t epoch) {
    if (!has_valid) {
      snapshot = t.params.snapshot();
      run.best_epoch = epoch;
      return;
    }
    const auto r = rank_split<T>(ws, cfg, data::Split::valid, teacher_scorer(ws, cfg, t), {10});
    run.valid_ndcg10.push_back(r.ndcg.at(10));
    if (stop.observe(r.ndcg.at(10), epoch)) {
      snapshot = t.params.snapshot();
      run.best_epoch = epoch;
    }
  };
  validate_now(0);

  num::FiniteCheckGuard finite(true);
  for (std::size_t epoch = 1; epoch <= cfg.teacher_epochs && !train.empty(); ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = make_rng(cfg.seed, {0x7eac, epoch});
    shuffle(order, rng);
    const auto t0 = Clock::now();
    try {
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        std::vector<teacher::TeacherSample> batch;
        for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i)
          batch.push_back({&subgraphs[order[i]], train[order[i]]->target});
        const double loss = teacher::pretrain_step(t, opt, batch);
        if (!std::isfinite(loss)) throw NumericalError("pretrain_step", "non-finite batch loss");
        run.loss_trace.push_back(loss);
      }
    } catch (const NumericalError& e) {
      run.train_seconds += seconds_since(t0);
      run.diverged = true;
      run.error = e.what();
      break;
    }
    run.train_seconds += seconds_since(t0);
    run.epochs_run = epoch;
    validate_now(epoch);
    if (has_valid && stop.should_stop()) break;
  }
  t.params.restore(snapshot);
  return run;
}

/// Teacher logits for every training sequence, keyed by sequence id. Logits
/// rather than probabilities are kept so the cached and live paths feed the
/// distillation loss the same numbers.
struct SoftLabelCache {
  std::uint64_t vocab_hash = 0;
  std::size_t width = 0;  // |V| + 1
  std::vector<std::uint32_t> ids;
  std::vector<double> logits;  // ids.size() x width
  std::unordered_map<std::uint32_t, std::size_t> index;

  void rebuild_index() {
    index.clear();
    for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
  }

  std::span<const double> row(std::uint32_t seq_id) const {
    const auto it = index.find(seq_id);
    if (it == index.end())
      throw ConsistencyError("soft-label cache has no entry for sequence " + std::to_string(seq_id));
    return {logits.data() + it->second * width, width};
  }
};

template <class T>
SoftLabelCache build_soft_label_cache(const Workspace& ws, const TrainConfig& cfg, const teacher::Teacher<T>& t) {
  num::NoGradGuard ng;
  SoftLabelCache c;
  c.vocab_hash = ws.vocab_hash;
  c.width = ws.num_takeaways() + 1;
  for (auto* s : ws.split(data::Split::train)) {
    const auto sg = subgraph_for(ws, cfg, *s);
    const auto out = teacher::teacher_forward(t, sg).logits.value();
    c.ids.push_back(s->id);
    for (auto v : out.values()) c.logits.push_back(static_cast<double>(v));
  }
  c.rebuild_index();
  return c;
}

inline constexpr std::uint32_t kSoftLabelVersion = 1;

inline void save_soft_labels(const SoftLabelCache& c, const std::string& path) {
  BinaryWriter w(path);
  w.header("STKDSOFT", kSoftLabelVersion);
  w.u64(c.vocab_hash);
  w.u64(c.width);
  w.vec(c.ids);
  w.vec(c.logits);
  w.close();
}

inline SoftLabelCache load_soft_labels(const std::string& path, std::uint64_t expected_vocab_hash) {
  BinaryReader r(path);
  r.header("STKDSOFT", kSoftLabelVersion);
  SoftLabelCache c;
  c.vocab_hash = r.u64();
  if (c.vocab_hash != expected_vocab_hash)
    throw ConsistencyError("soft-label cache '" + path + "' was built for a different vocabulary");
  c.width = r.u64();
  c.ids = r.vec<std::uint32_t>();
  c.logits = r.vec<double>();
  if (c.logits.size() != c.ids.size() * c.width) throw IoError("soft-label cache '" + path + "' is truncated");
  c.rebuild_index();
  return c;
}

/// Teacher logits (1 x (|V|+1)) for a training sequence.
template <class T>
using TeacherLogits = std::function<num::Tensor<T>(const data::Sequence&)>;

template <class T>
TeacherLogits<T> live_teacher_logits(const Workspace& ws, const TrainConfig& cfg, const teacher::Teacher<T>& t) {
  return [&ws, &cfg, &t](const data::Sequence& seq) {
    num::NoGradGuard ng;
    const auto sg = subgraph_for(ws, cfg, seq);
    return teacher::teacher_forward(t, sg).logits.value();
  };
}

template <class T>
TeacherLogits<T> cached_teacher_logits(const SoftLabelCache& c) {
  return [&c](const data::Sequence& seq) {
    const auto row = c.row(seq.id);
    std::vector<T> v(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) v[i] = static_cast<T>(row[i]);
    const auto width = v.size();
    return num::Tensor<T>::matrix(1, width, std::move(v));
  };
}

/// Teacher readout r (1 x d) for the fusion baselines.
template <class T>
using TeacherReadout = std::function<num::Tensor<T>(const data::Sequence&)>;

template <class T>
TeacherReadout<T> live_teacher_readout(const Workspace& ws, const TrainConfig& cfg, const teacher::Teacher<T>& t) {
  return [&ws, &cfg, &t](const data::Sequence& seq) {
    num::NoGradGuard ng;
    const auto sg = subgraph_for(ws, cfg, seq);
    return teacher::teacher_forward(t, sg).readout.value();
  };
}

// ---------------------------------------------------------------------------
// Student

struct VariantSpec {
  std::string name;
  bool kd = true;
  bool region = true;
  bool distance = true;
};

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> v = {"full", "no_kd", "no_sp", "no_sp_kd", "no_c", "no_f"};
  return v;
}

inline VariantSpec variant_spec(const std::string& name) {
  if (name == "full") return {name, true, true, true};
  if (name == "no_kd") return {name, false, true, true};
  if (name == "no_sp") return {name, true, false, false};
  if (name == "no_sp_kd") return {name, false, false, false};
  if (name == "no_c") return {name, true, false, true};
  if (name == "no_f") return {name, true, true, false};
  throw UsageError("unknown variant '" + name + "' (expected full, no_kd, no_sp, no_sp_kd, no_c or no_f)");
}

inline student::Fusion parse_strategy(const std::string& s) {
  if (s == "stkd") return student::Fusion::none;
  if (s == "add") return student::Fusion::add;
  if (s == "cat") return student::Fusion::cat;
  if (s == "multi") return student::Fusion::multi;
  throw UsageError("unknown fusion strategy '" + s + "' (expected stkd, add, cat or multi)");
}

/// The model-relevant settings a variant resolves to. Two runs with equal
/// effective configs train the same model.
inline nlohmann::json effective_model_config(const TrainConfig& cfg, const VariantSpec& v,
                                             student::Fusion f = student::Fusion::none) {
  nlohmann::json j;
  j["alpha"] = v.kd ? cfg.alpha : 0.0;
  j["tau"] = v.kd ? cfg.tau : 0.0;
  j["kd"] = v.kd;
  j["region"] = v.region;
  j["distance"] = v.distance;
  j["fusion"] = student::fusion_name(f);
  for (auto k : {"n", "d", "heads", "layers", "lr", "dropout", "init_std", "epochs", "batch_size", "seed", "patience"})
    j[k] = get_key(cfg, k);
  return j;
}

inline std::string effective_config_hash(const nlohmann::json& j) {
  Fnv1a h;
  h.str(j.dump());
  return hex64(h.value());
}

template <class T>
student::StudentDims student_dims(const Workspace& ws, const TrainConfig& cfg, student::Fusion f) {
  student::StudentDims d;
  d.num_takeaways = ws.num_takeaways();
  d.num_regions = ws.dataset.num_regions();
  d.d = cfg.d;
  d.n = cfg.n;
  d.heads = cfg.heads;
  d.layers = cfg.layers;
  d.dropout = cfg.dropout;
  d.init_std = cfg.init_std;
  d.fusion = f;
  return d;
}

template <class T>
student::Student<T> make_student(const Workspace& ws, const TrainConfig& cfg, const VariantSpec& v,
                                 student::Fusion f = student::Fusion::none) {
  student::Student<T> s(student_dims<T>(ws, cfg, f), cfg.seed);
  if (!v.region) s.disable_region();
  if (!v.distance) s.disable_distance();
  if (!v.region && !v.distance) s.params.zero_and_freeze("W_SP");
  return s;
}

template <class T>
Scorer<T> student_scorer(const student::Student<T>& s, const TeacherReadout<T>* readout = nullptr) {
  return [&s, readout](const data::Sequence& seq) {
    if (readout) {
      const auto r = num::Var<T>::constant((*readout)(seq));
      return logits_vector(student::predict(s, seq.items, seq.regions, seq.distances, nullptr, &r).logits.value());
    }
    return logits_vector(student::predict(s, seq.items, seq.regions, seq.distances).logits.value());
  };
}

template <class T>
struct StudentRun {
  StudentRun(student::Student<T> s, VariantSpec v) : student(std::move(s)), variant(std::move(v)) {}

  student::Student<T> student;
  VariantSpec variant;
  std::vector<double> loss_trace;
  std::vector<double> valid_ndcg10;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double train_seconds = 0.0;
  bool diverged = false;
  std::string error;
};

/// Trains the student for one variant. With `teacher` set, every sample
/// adds the distillation term with weight alpha (also when alpha is 0, in
/// which case the term contributes exact zeros). Without a teacher the loss
/// is the recommendation loss alone. Fusion strategies take the teacher
/// readout through `readout` and train on the recommendation loss.
template <class T>
StudentRun<T> train_student(const Workspace& ws, const TrainConfig& cfg, const VariantSpec& v,
                            const TeacherLogits<T>* teacher, student::Fusion fusion = student::Fusion::none,
                            const TeacherReadout<T>* readout = nullptr) {
  validate(cfg);
  check_compatible(ws, cfg);
  if (fusion != student::Fusion::none && !readout) throw ConfigError("fusion strategy needs a teacher readout");
  const bool use_kd = v.kd && fusion == student::Fusion::none && teacher != nullptr;
  if (v.kd && fusion == student::Fusion::none && cfg.alpha > 0.0 && !teacher)
    throw ConfigError("variant '" + v.name + "' needs a teacher or a soft-label cache");
  const T alpha = static_cast<T>(use_kd ? cfg.alpha : 0.0);
  const T tau = static_cast<T>(cfg.tau);

  StudentRun<T> run(make_student<T>(ws, cfg, v, fusion), v);
  auto& s = run.student;
  const auto train = ws.split(data::Split::train);
  const bool has_valid = !ws.split(data::Split::valid).empty();
  num::Adam<T> opt(s.params, {cfg.lr, 0.9, 0.98, 1e-8});
  EarlyStopper stop{cfg.patience};
  auto snapshot = s.params.snapshot();
  auto validate_now = [&](std::size_t epoch) {
    if (!has_valid) {
      snapshot = s.params.snapshot();
      run.best_epoch = epoch;
      return;
    }
    const auto r = rank_split<T>(ws, cfg, data::Split::valid, student_scorer(s, readout), {10});
    run.valid_ndcg10.push_back(r.ndcg.at(10));
    if (stop.observe(r.ndcg.at(10), epoch)) {
      snapshot = s.params.snapshot();
      run.best_epoch = epoch;
    }
  };
  validate_now(0);

  num::FiniteCheckGuard finite(true);
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !train.empty(); ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = make_rng(cfg.seed, {0x57d5, epoch});
    shuffle(order, shuffle_rng);
    Rng dropout_rng = make_rng(cfg.seed, {0xd70b, epoch});
    const auto t0 = Clock::now();
    try {
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        const std::size_t e = std::min(order.size(), b + cfg.batch_size);
        const T w = T(1) / T(e - b);
        double total = 0.0;
        for (std::size_t i = b; i < e; ++i) {
          const auto& seq = *train[order[i]];
          std::optional<num::Var<T>> r;
          if (readout) r = num::Var<T>::constant((*readout)(seq));
          const auto p =
              student::predict(s, seq.items, seq.regions, seq.distances, &dropout_rng, r ? &*r : nullptr);
          auto loss = student::rec_loss(p.probs, seq.target);
          if (use_kd) loss = student::joint_loss(student::kd_loss((*teacher)(seq), p.logits, tau), loss, alpha);
          total += static_cast<double>(loss.item());
          num::backward(loss, w);
        }
        const double mean = total / double(e - b);
        if (!std::isfinite(mean)) throw NumericalError("train_student", "non-finite batch loss");
        opt.step();
        run.loss_trace.push_back(mean);
      }
    } catch (const NumericalError& err) {
      run.train_seconds += seconds_since(t0);
      run.diverged = true;
      run.error = err.what();
      break;
    }
    run.train_seconds += seconds_since(t0);
    run.epochs_run = epoch;
    validate_now(epoch);
    if (has_valid && stop.should_stop()) break;
  }
  s.params.restore(snapshot);
  return run;
}

/// Ranked evaluation of a student on one split. With `fusion_teacher` the
/// teacher is run live for every sequence, as a fused model must be.
template <class T>
MetricsReport evaluate_student(const Workspace& ws, const TrainConfig& cfg, const student::Student<T>& s,
                               data::Split split, const teacher::Teacher<T>* fusion_teacher = nullptr) {
  if (split == data::Split::train) throw UsageError("evaluation split must be valid or test");
  if (s.dims().fusion != student::Fusion::none && !fusion_teacher)
    throw ConfigError("a fused student needs its teacher at inference");
  std::optional<TeacherReadout<T>> readout;
  if (s.dims().fusion != student::Fusion::none) readout = live_teacher_readout(ws, cfg, *fusion_teacher);
  auto r = rank_split<T>(ws, cfg, split, student_scorer(s, readout ? &*readout : nullptr), cfg.k_list);
  r.strategy = student::fusion_name(s.dims().fusion);
  return r;
}

template <class T>
MetricsReport evaluate_teacher(const Workspace& ws, const TrainConfig& cfg, const teacher::Teacher<T>& t,
                               data::Split split) {
  auto r = rank_split<T>(ws, cfg, split, teacher_scorer(ws, cfg, t), cfg.k_list);
  r.variant = "teacher";
  return r;
}

/// Trains and tests each named variant with the same seed and data.
template <class T>
std::vector<MetricsReport> ablate(const Workspace& ws, const TrainConfig& cfg, const std::vector<std::string>& variants,
                                  const TeacherLogits<T>* teacher) {
  std::vector<MetricsReport> out;
  for (auto& name : variants) {
    const auto v = variant_spec(name);
    auto run = train_student<T>(ws, cfg, v, v.kd ? teacher : nullptr);
    auto r = evaluate_student(ws, cfg, run.student, data::Split::test);
    r.variant = name;
    r.train_seconds = run.train_seconds;
    r.config["effective"] = effective_model_config(cfg, v);
    r.config["effective_hash"] = effective_config_hash(r.config["effective"]);
    if (run.diverged) r.config["diverged"] = run.error;
    out.push_back(std::move(r));
  }
  return out;
}

/// The distilled student against students that fuse a live teacher readout
/// at the prediction anchor.
template <class T>
std::vector<MetricsReport> ablate_fusion(const Workspace& ws, const TrainConfig& cfg,
                                         const std::vector<std::string>& strategies, const teacher::Teacher<T>& t,
                                         const TeacherLogits<T>& logits) {
  std::vector<MetricsReport> out;
  // Training-time readouts are fixed (the teacher is frozen), so compute them once.
  std::unordered_map<std::uint32_t, num::Tensor<T>> cached;
  auto live = live_teacher_readout(ws, cfg, t);
  TeacherReadout<T> memo = [&](const data::Sequence& seq) {
    auto it = cached.find(seq.id);
    if (it == cached.end()) it = cached.emplace(seq.id, live(seq)).first;
    return it->second;
  };
  for (auto& name : strategies) {
    const auto f = parse_strategy(name);
    const auto v = variant_spec("full");
    auto run = f == student::Fusion::none ? train_student<T>(ws, cfg, v, &logits)
                                          : train_student<T>(ws, cfg, v, nullptr, f, &memo);
    auto r = evaluate_student(ws, cfg, run.student, data::Split::test, f == student::Fusion::none ? nullptr : &t);
    r.variant = "full";
    r.strategy = name;
    r.train_seconds = run.train_seconds;
    r.config["effective"] = effective_model_config(cfg, v, f);
    out.push_back(std::move(r));
  }
  return out;
}

/// Grid over temperatures and fanouts; each fanout setting pre-trains its
/// own teacher.
template <class T>
nlohmann::json sweep(const Workspace& ws, const TrainConfig& base, const std::vector<double>& taus,
                     const std::vector<std::vector<std::size_t>>& fanouts) {
  nlohmann::json out = nlohmann::json::array();
  for (auto& f : fanouts) {
    TrainConfig cfg = base;
    cfg.fanouts = f;
    const auto trun = pretrain_teacher<T>(ws, cfg);
    const auto logits = live_teacher_logits(ws, cfg, trun.teacher);
    for (auto tau : taus) {
      cfg.tau = tau;
      auto run = train_student<T>(ws, cfg, variant_spec("full"), &logits);
      auto r = evaluate_student(ws, cfg, run.student, data::Split::test);
      r.variant = "full";
      r.train_seconds = run.train_seconds;
      nlohmann::json point;
      point["fanouts"] = f;
      point["tau"] = tau;
      point["teacher_train_seconds"] = trun.train_seconds;
      point["report"] = r.to_json();
      out.push_back(std::move(point));
    }
  }
  return out;
}

/// Calls `f.template operator()<T>()` with T picked by cfg.precision.
template <class F>
decltype(auto) with_precision(const TrainConfig& cfg, F&& f) {
  if (cfg.precision == "f32") return f.template operator()<float>();
  return f.template operator()<double>();
}

}  // namespace stkd::harness
