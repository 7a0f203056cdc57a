// Acceptance run: one PASS/FAIL line per criterion, plus a JSON report with
// the measured numbers. Criteria can be selected by number on the command line.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stkd/data/synthetic.hpp"
#include "stkd/harness/commands.hpp"
#include "stkd/harness/pipeline.hpp"
#include "stkd/numerics.hpp"
#include "stkd/student/student.hpp"
#include "stkd/teacher/teacher.hpp"

using namespace stkd;
using namespace stkd::harness;
using nlohmann::json;
using V = num::Var<double>;
using Tn = num::Tensor<double>;
using Ids = std::vector<std::uint32_t>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  json report = json::object();
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

Tn random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tn t = Tn::matrix(r, c);
  for (auto& v : t.values()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

data::Dataset synthetic_dataset(const data::SyntheticConfig& c, std::size_t n) {
  std::stringstream ss;
  data::write_events(ss, data::generate_synthetic(c));
  return data::prepare_dataset(data::ingest_events(ss), {n, 0});
}

std::vector<num::NamedVar> named_params(num::ParamSet<double>& ps) {
  std::vector<num::NamedVar> out;
  for (auto& p : ps.items()) out.push_back({p.name, p.var});
  return out;
}

// ---------------------------------------------------------------------------
// 1. Finite-difference gradient suite

struct GradCase {
  std::string name;
  std::function<V(std::vector<V>&)> f;
  std::vector<Tn> in;
};

num::GradCheckReport check_case(GradCase& c) {
  std::vector<V> vars;
  std::vector<num::NamedVar> named;
  for (auto& t : c.in) vars.push_back(V::parameter(t));
  for (std::size_t i = 0; i < vars.size(); ++i) named.push_back({"in" + std::to_string(i), vars[i]});
  return num::finite_diff_check([&] { return c.f(vars); }, named, 1e-4);
}

std::vector<GradCase> primitive_cases(std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const std::size_t m = 2 + uniform_index(rng, 12), k = 2 + uniform_index(rng, 12), n = 1 + uniform_index(rng, 12);
  Tn proj_mk = random_tensor(m, k, rng), proj_km = random_tensor(k, m, rng), proj_mn = random_tensor(m, n, rng);
  auto P = [](const V& y, const Tn& w) { return num::sum(num::mul(y, V::constant(w))); };
  Ids idx, targets;
  for (std::size_t i = 0; i < n; ++i) idx.push_back(static_cast<std::uint32_t>(uniform_index(rng, m)));
  for (std::size_t i = 0; i < m; ++i) targets.push_back(static_cast<std::uint32_t>(m - 1 - i));
  std::vector<std::uint8_t> mask(m * k, 1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 1; j < k; ++j) mask[i * k + j] = uniform01(rng) < 0.7;
  std::vector<std::uint32_t> offsets{0};
  while (offsets.back() < m) offsets.push_back(std::min<std::uint32_t>(m, offsets.back() + uniform_index(rng, 4)));
  const Tn teacher = num::softmax_rows(V::constant(random_tensor(1, k, rng, -2, 2))).value();
  const Tn proj_nk = random_tensor(n, k, rng), proj_1k = random_tensor(1, k, rng), proj_mm = random_tensor(m, m, rng);
  const Tn proj_cat = random_tensor(m, k + n, rng), proj_ln = random_tensor(m, k + 1, rng);
  const Tn proj_seg = random_tensor(offsets.size() - 1, k, rng), proj_half = random_tensor(std::max<std::size_t>(1, m / 2), k, rng);
  const Tn proj_halfc = random_tensor(m, std::max<std::size_t>(1, k / 2), rng);

  using VV = std::vector<V>;
  return {
      {"matmul", [=](VV& v) { return P(num::matmul(v[0], v[1]), proj_mn); }, {random_tensor(m, k, rng), random_tensor(k, n, rng)}},
      {"matmul_nt", [=](VV& v) { return P(num::matmul_nt(v[0], v[1]), proj_mn); },
       {random_tensor(m, k, rng), random_tensor(n, k, rng)}},
      {"transpose", [=](VV& v) { return P(num::transpose(v[0]), proj_km); }, {random_tensor(m, k, rng)}},
      {"add", [=](VV& v) { return P(num::add(v[0], v[1]), proj_mk); }, {random_tensor(m, k, rng), random_tensor(m, k, rng)}},
      {"sub", [=](VV& v) { return P(num::sub(v[0], v[1]), proj_mk); }, {random_tensor(m, k, rng), random_tensor(m, k, rng)}},
      {"mul", [=](VV& v) { return P(num::mul(v[0], v[1]), proj_mk); }, {random_tensor(m, k, rng), random_tensor(m, k, rng)}},
      {"add_row", [=](VV& v) { return P(num::add_row(v[0], v[1]), proj_mk); }, {random_tensor(m, k, rng), random_tensor(1, k, rng)}},
      {"mul_col", [=](VV& v) { return P(num::mul_col(v[0], v[1]), proj_mk); }, {random_tensor(m, k, rng), random_tensor(m, 1, rng)}},
      {"scale", [=](VV& v) { return P(num::scale(v[0], 2.5), proj_mk); }, {random_tensor(m, k, rng)}},
      {"add_scalar", [=](VV& v) { return P(num::add_scalar(v[0], -0.75), proj_mk); }, {random_tensor(m, k, rng)}},
      {"neg", [=](VV& v) { return P(num::neg(v[0]), proj_mk); }, {random_tensor(m, k, rng)}},
      {"sigmoid", [=](VV& v) { return P(num::sigmoid(v[0]), proj_mk); }, {random_tensor(m, k, rng, -4, 4)}},
      {"tanh", [=](VV& v) { return P(num::tanh(v[0]), proj_mk); }, {random_tensor(m, k, rng, -3, 3)}},
      {"relu", [=](VV& v) { return P(num::relu(v[0]), proj_mk); }, {random_tensor(m, k, rng)}},
      {"exp", [=](VV& v) { return P(num::exp(v[0]), proj_mk); }, {random_tensor(m, k, rng)}},
      {"log", [=](VV& v) { return P(num::log(v[0]), proj_mk); }, {random_tensor(m, k, rng, 0.2, 3.0)}},
      {"softmax_rows", [=](VV& v) { return P(num::softmax_rows(v[0], 1.0), proj_mk); }, {random_tensor(m, k, rng, -3, 3)}},
      {"softmax_rows_tau3", [=](VV& v) { return P(num::softmax_rows(v[0], 3.0), proj_mk); }, {random_tensor(m, k, rng, -3, 3)}},
      {"softmax_rows_masked", [=](VV& v) { return P(num::softmax_rows(v[0], 1.0, mask), proj_mk); },
       {random_tensor(m, k, rng, -3, 3)}},
      {"softmax", [=](VV& v) { return P(num::softmax(v[0], 2.0), proj_1k); }, {random_tensor(1, k, rng, -3, 3)}},
      {"gather_rows", [=](VV& v) { return P(num::gather_rows(v[0], idx), proj_nk); }, {random_tensor(m, k, rng)}},
      {"scatter_rows", [=](VV& v) { return P(num::scatter_rows(v[0], targets, m), proj_mk); }, {random_tensor(m, k, rng)}},
      {"slice_rows", [=](VV& v) { return P(num::slice_rows(v[0], 0, std::max<std::size_t>(1, m / 2)), proj_half); },
       {random_tensor(m, k, rng)}},
      {"slice_cols", [=](VV& v) { return P(num::slice_cols(v[0], 0, std::max<std::size_t>(1, k / 2)), proj_halfc); },
       {random_tensor(m, k, rng)}},
      {"concat_cols", [=](VV& v) { return P(num::concat_cols<double>({v[0], v[1]}), proj_cat); },
       {random_tensor(m, k, rng), random_tensor(m, n, rng)}},
      {"segment_mean", [=](VV& v) { return P(num::segment_mean(v[0], offsets), proj_seg); }, {random_tensor(m, k, rng)}},
      {"sum", [=](VV& v) { return num::sum(num::mul(v[0], v[0])); }, {random_tensor(m, k, rng)}},
      {"mean", [=](VV& v) { return num::mean(num::mul(v[0], v[0])); }, {random_tensor(m, k, rng)}},
      {"pick", [=](VV& v) { return num::log(num::pick(v[0], m - 1, k - 1)); }, {random_tensor(m, k, rng, 0.5, 2)}},
      {"layer_norm", [=](VV& v) { return P(num::layer_norm(v[0], v[1], v[2]), proj_ln); },
       {random_tensor(m, k + 1, rng), random_tensor(1, k + 1, rng), random_tensor(1, k + 1, rng)}},
      {"dropout",
       [=](VV& v) {
         Rng r = make_rng(seed, {0xd0});
         return P(num::dropout(v[0], 0.3, r), proj_mk);
       },
       {random_tensor(m, k, rng)}},
      {"matmul_square", [=](VV& v) { return P(num::matmul(v[0], num::transpose(v[0])), proj_mm); }, {random_tensor(m, k, rng)}},
      {"cross_entropy", [=](VV& v) { return num::cross_entropy(num::softmax(num::slice_rows(v[0], 0, 1)), k - 1); },
       {random_tensor(m, k, rng, -2, 2)}},
      {"kl_divergence",
       [=](VV& v) { return num::kl_divergence(teacher, num::softmax(num::slice_rows(v[0], 0, 1), 2.0)); },
       {random_tensor(m, k, rng, -2, 2)}},
  };
}

// Center entity 1 at the last position, one neighbor 2 over relation 1, user 6.
stkg::Subgraph three_node_subgraph(std::size_t n) {
  stkg::Subgraph sg;
  sg.centers.assign(n, 0);
  sg.center_node.assign(n, stkg::kNoNode);
  sg.centers[n - 1] = 1;
  sg.center_node[n - 1] = 0;
  sg.user_node = 6;
  sg.user_instance = 1;
  sg.node_entity = {1, 6, 2};
  sg.node_depth = {0, 0, 1};
  sg.first_child = 2;
  sg.edge_relation = {1};
  sg.child_offsets = {0, 1, 1, 1};
  return sg;
}

student::StudentDims micro_student() {
  student::StudentDims s;
  s.num_takeaways = 6;
  s.num_regions = 3;
  s.num_distances = 16;
  s.d = 8;
  s.n = 4;
  s.heads = 2;
  s.layers = 2;
  s.dropout = 0.0;
  s.init_std = 0.3;
  return s;
}

Outcome criterion_gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t cases = 0, failed = 0;
  auto record = [&](const std::string& name, const num::GradCheckReport& r) {
    ++cases;
    if (!r.passed) {
      ++failed;
      o.report["failures"].push_back(name + " rel=" + fmt(r.max_rel_error));
    }
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = name;
    }
  };

  for (std::uint64_t shape = 0; shape < 4; ++shape)
    for (auto& c : primitive_cases(500 + shape)) record(c.name, check_case(c));

  {
    teacher::TeacherDims dims;
    dims.num_entities = 10;
    dims.num_relations = 3;
    dims.num_takeaways = 5;
    dims.d = 4;
    dims.n = 2;
    dims.layers = 2;
    teacher::Teacher<double> t(dims, 13);
    const auto sg = three_node_subgraph(2);
    auto named = named_params(t.params);
    record("teacher_pretrain_loss",
           num::finite_diff_check([&] { return teacher::pretrain_loss(t, sg, 3); }, named, 1e-4));
  }
  {
    student::Student<double> s(micro_student(), 14);
    const Tn teacher_logits = Tn::row({0.0, 0.4, -0.3, 1.2, 0.1, -0.8, 0.6});
    const Ids x = {0, 2, 5, 1}, c = {0, 1, 3, 2}, f = {0, 4, 9, 2};
    auto named = named_params(s.params);
    record("student_joint_loss", num::finite_diff_check(
                                     [&] {
                                       auto p = student::predict(s, x, c, f);
                                       return student::joint_loss(student::kd_loss(teacher_logits, p.logits, 3.0),
                                                                  student::rec_loss(p.probs, 4), 0.2);
                                     },
                                     named, 1e-4));
  }
  const double secs = seconds_since(t0);
  o.pass = failed == 0 && secs < 120.0;
  o.detail = std::to_string(cases) + " checks, " + std::to_string(failed) + " failed, worst rel " + fmt(worst) + " (" +
             worst_name + "), " + fmt(secs, 3) + " s";
  o.report["checks"] = cases;
  o.report["failed"] = failed;
  o.report["worst_rel_error"] = worst;
  o.report["seconds"] = secs;
  return o;
}

// ---------------------------------------------------------------------------
// 2. Ranking metrics against a sort-and-scan oracle

Outcome criterion_metrics() {
  Outcome o;
  Rng rng = make_rng(2024);
  const std::vector<std::size_t> ks{5, 10, 20};
  std::size_t mismatches = 0;
  std::vector<std::size_t> ranks;
  std::map<std::size_t, double> hit_sum, gain_sum;
  for (int trial = 0; trial < 1000; ++trial) {
    // Coarse integer scores so ties are frequent.
    const int levels = 2 + static_cast<int>(uniform_index(rng, 30));
    const std::size_t negs = 1 + uniform_index(rng, 120);
    const double target = double(uniform_index(rng, levels));
    std::vector<double> neg(negs);
    for (auto& v : neg) v = double(uniform_index(rng, levels));

    // Oracle: sort candidates by descending score, ties placing the target last.
    std::vector<std::pair<double, int>> cand;
    for (auto v : neg) cand.push_back({v, 0});
    cand.push_back({target, 1});
    std::stable_sort(cand.begin(), cand.end(), [](auto& a, auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::size_t pos = 0;
    while (cand[pos].second != 1) ++pos;
    const std::size_t oracle_rank = pos + 1;

    const std::size_t rank = rank_of<double>(target, neg);
    ranks.push_back(rank);
    mismatches += rank != oracle_rank;
    MetricsReport single;
    fill_metrics(single, std::vector<std::size_t>{rank}, ks);
    for (auto k : ks) {
      const double hit = oracle_rank <= k ? 1.0 : 0.0;
      const double gain = oracle_rank <= k ? 1.0 / std::log2(double(oracle_rank) + 1.0) : 0.0;
      mismatches += single.hr[k] != hit;
      mismatches += single.ndcg[k] != gain;
      hit_sum[k] += hit;
      gain_sum[k] += gain;
    }
  }
  MetricsReport all;
  fill_metrics(all, ranks, ks);
  for (auto k : ks) {
    mismatches += all.hr[k] != hit_sum[k] / 1000.0;
    mismatches += all.ndcg[k] != gain_sum[k] / 1000.0;
  }
  const double rank2 = ndcg_gain(2, 10);
  const double expect = std::log(2.0) / std::log(3.0);
  const double err = std::abs(rank2 - expect);
  o.pass = mismatches == 0 && err <= 1e-12;
  o.detail = "1000 vectors, " + std::to_string(mismatches) + " mismatches; rank-2 NDCG " + fmt(rank2, 17) +
             " vs 1/log2(3), |diff| " + fmt(err, 3);
  o.report["mismatches"] = mismatches;
  o.report["rank2_abs_error"] = err;
  return o;
}

// ---------------------------------------------------------------------------
// 3. Loss endpoints

TrainConfig small_config() {
  TrainConfig c;
  c.n = 8;
  c.d = 8;
  c.heads = 2;
  c.layers = 1;
  c.fanouts = {3, 3};
  c.epochs = 2;
  c.teacher_epochs = 1;
  c.batch_size = 16;
  c.n_negatives = 20;
  c.lr = 5e-3;
  c.seed = 11;
  return c;
}

data::Dataset small_dataset(std::uint64_t seed = 5) {
  data::SyntheticConfig sc;
  sc.n_users = 30;
  sc.n_takeaways = 40;
  sc.n_regions = 6;
  sc.events_per_user = 8;
  sc.seed = seed;
  return synthetic_dataset(sc, 8);
}

Outcome criterion_loss_endpoints() {
  Outcome o;
  std::vector<std::string> problems;

  // alpha = 0 against the run without distillation.
  const auto ws = make_workspace(small_dataset());
  auto cfg = small_config();
  const auto tr = pretrain_teacher<double>(ws, cfg);
  const auto cache = build_soft_label_cache(ws, cfg, tr.teacher);
  const auto logits = cached_teacher_logits<double>(cache);
  cfg.alpha = 0.0;
  const auto with_kd = train_student<double>(ws, cfg, variant_spec("full"), &logits);
  const auto without = train_student<double>(ws, cfg, variant_spec("no_kd"), nullptr);
  double trace_diff = with_kd.loss_trace.size() == without.loss_trace.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(with_kd.loss_trace.size(), without.loss_trace.size()); ++i)
    trace_diff = std::max(trace_diff, std::abs(with_kd.loss_trace[i] - without.loss_trace[i]));
  if (!(trace_diff <= 1e-9) || with_kd.loss_trace.empty()) problems.push_back("alpha=0 trace differs by " + fmt(trace_diff));

  // alpha = 1: the rec path receives no gradient, and parameter gradients
  // equal those of the distillation term alone.
  double rec_grad = 0.0, param_diff = 0.0;
  {
    student::Student<double> s(micro_student(), 21);
    const Tn teacher_logits = Tn::row({0.0, 0.9, -0.2, 0.3, 1.1, -0.6, 0.2});
    const Ids x = {0, 3, 1, 5}, c = {0, 2, 1, 2}, f = {0, 3, 7, 1};
    auto p = student::predict(s, x, c, f);
    auto kd = student::kd_loss(teacher_logits, p.logits, 3.0);
    auto rec = student::rec_loss(p.probs, 2);
    auto rec_leaf = V::parameter(rec.value());
    num::backward(student::joint_loss(kd, rec_leaf, 1.0));
    rec_grad = std::abs(rec_leaf.grad()[0]);
    s.params.zero_grad();
    {
      auto p1 = student::predict(s, x, c, f);
      num::backward(student::joint_loss(student::kd_loss(teacher_logits, p1.logits, 3.0),
                                        student::rec_loss(p1.probs, 2), 1.0));
    }
    const auto joint_grads = [&] {
      std::vector<Tn> g;
      for (auto& it : s.params.items()) g.push_back(it.var.has_grad() ? it.var.grad() : Tn(it.var.shape()));
      return g;
    }();
    s.params.zero_grad();
    {
      auto p2 = student::predict(s, x, c, f);
      num::backward(student::kd_loss(teacher_logits, p2.logits, 3.0));
    }
    std::size_t i = 0;
    for (auto& it : s.params.items()) {
      const Tn g = it.var.has_grad() ? it.var.grad() : Tn(it.var.shape());
      for (std::size_t j = 0; j < g.size(); ++j) param_diff = std::max(param_diff, std::abs(g[j] - joint_grads[i][j]));
      ++i;
    }
  }
  if (rec_grad != 0.0) problems.push_back("rec gradient " + fmt(rec_grad));
  if (param_diff != 0.0) problems.push_back("alpha=1 gradients differ from kd-only by " + fmt(param_diff));

  // kd_loss(p, p, tau) vanishes.
  double kd_self = 0.0;
  Rng rng = make_rng(77);
  for (double tau : {1.0, 3.0, 5.0, 7.0, 9.0})
    for (int trial = 0; trial < 20; ++trial) {
      Tn l = random_tensor(1, 50, rng, -6, 6);
      l[0] = 0.0;
      kd_self = std::max(kd_self, std::abs(student::kd_loss(l, V::constant(l), tau).value().item()));
    }
  if (!(kd_self <= 1e-12)) problems.push_back("kd(p,p) = " + fmt(kd_self));

  o.pass = problems.empty();
  o.detail = "alpha=0 max trace diff " + fmt(trace_diff, 3) + " over " + std::to_string(with_kd.loss_trace.size()) +
             " batches; alpha=1 rec grad " + fmt(rec_grad, 3) + ", param grad diff " + fmt(param_diff, 3) +
             "; max |kd(p,p)| " + fmt(kd_self, 3);
  for (auto& p : problems) o.detail += "; " + p;
  o.report["alpha0_trace_max_diff"] = trace_diff;
  o.report["alpha1_rec_grad"] = rec_grad;
  o.report["kd_self_max"] = kd_self;
  return o;
}

// ---------------------------------------------------------------------------
// 4. Subgraph sampling invariants

Outcome criterion_sampling() {
  Outcome o;
  data::SyntheticConfig sc;
  sc.n_users = 5000;
  sc.n_takeaways = 5100;
  sc.events_per_user = 6;
  sc.seed = 404;
  const auto ds = synthetic_dataset(sc, 16);
  const auto g = stkg::build_stkg(ds);
  const std::size_t entities = g.num_entities() - 1;

  const auto t0 = Clock::now();
  const std::vector<std::vector<std::size_t>> fanouts{{5, 5}, {10, 10}, {15, 15}, {20, 20}};
  const std::size_t total = 10000;
  std::size_t missing_edges = 0, over_bound = 0, nondeterministic = 0, edges = 0;
  for (std::size_t i = 0; i < total; ++i) {
    const auto& seq = ds.sequences[i * ds.sequences.size() / total];
    const auto& fan = fanouts[i % fanouts.size()];
    const std::uint64_t seed = 1000 + i;
    const auto a = stkg::sample_subgraph(seq, g, fan, seed);
    const auto b = stkg::sample_subgraph(seq, g, fan, seed);
    nondeterministic += a.node_entity != b.node_entity || a.node_depth != b.node_depth ||
                        a.child_offsets != b.child_offsets || a.edge_relation != b.edge_relation ||
                        a.center_node != b.center_node || a.centers != b.centers;
    const std::size_t n = seq.items.size();
    over_bound += a.num_nodes() > n * (1 + fan[0] + fan[0] * fan[1]) + 1;
    for (std::size_t p = 0; p < a.num_nodes(); ++p)
      for (auto k = a.child_offsets[p]; k < a.child_offsets[p + 1]; ++k) {
        ++edges;
        missing_edges += !g.has_edge(a.node_entity[p], a.edge_relation[k], a.node_entity[a.edge_child(k)]);
      }
  }
  const double secs = seconds_since(t0);
  o.pass = entities >= 10000 && missing_edges == 0 && over_bound == 0 && nondeterministic == 0 && secs < 60.0;
  o.detail = std::to_string(entities) + " entities, " + std::to_string(total) + " subgraphs, " + std::to_string(edges) +
             " edges; missing " + std::to_string(missing_edges) + ", over bound " + std::to_string(over_bound) +
             ", nondeterministic " + std::to_string(nondeterministic) + ", " + fmt(secs, 3) + " s";
  o.report["entities"] = entities;
  o.report["edges_checked"] = edges;
  o.report["seconds"] = secs;
  return o;
}

// ---------------------------------------------------------------------------
// 5. Planted-pattern ablation study

TrainConfig study_config(std::uint64_t seed) {
  TrainConfig c;
  c.n = 20;
  c.d = 32;
  c.fanouts = {5, 5};
  c.epochs = 20;
  c.teacher_epochs = 12;
  c.patience = 3;
  c.batch_size = 64;
  c.teacher_lr = 0.005;
  c.seed = seed;
  return c;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Outcome criterion_planted_study() {
  Outcome o;
  const auto t0 = Clock::now();
  const std::vector<std::string> variants{"full", "no_kd", "no_sp", "no_sp_kd"};
  std::map<std::string, std::vector<double>> hr10;
  for (std::uint64_t seed : {1, 2, 3}) {
    data::SyntheticConfig sc;  // 200 users, 500 takeaways, 12 regions
    sc.noise = 0.3;
    sc.seed = seed;
    const auto cfg = study_config(seed);
    const auto ws = make_workspace(synthetic_dataset(sc, cfg.n));
    const auto tr = pretrain_teacher<double>(ws, cfg);
    const auto cache = build_soft_label_cache(ws, cfg, tr.teacher);
    const auto logits = cached_teacher_logits<double>(cache);
    json seed_report;
    seed_report["teacher_test_hr10"] = evaluate_teacher(ws, cfg, tr.teacher, data::Split::test).hr.at(10);
    for (auto& r : ablate<double>(ws, cfg, variants, &logits)) {
      hr10[r.variant].push_back(r.hr.at(10));
      seed_report[r.variant] = {{"hr10", r.hr.at(10)}, {"ndcg10", r.ndcg.at(10)}};
    }
    o.report["seeds"][std::to_string(seed)] = seed_report;
  }
  std::map<std::string, double> med;
  for (auto& v : variants) med[v] = median3(hr10[v]);
  const double secs = seconds_since(t0);
  const double gap = med["full"] - med["no_sp_kd"];
  o.pass = med["full"] >= med["no_kd"] && med["full"] >= med["no_sp"] && gap >= 0.03 - 1e-12 && secs < 900.0;
  o.detail = "median HR@10 full " + fmt(med["full"]) + ", no_kd " + fmt(med["no_kd"]) + ", no_sp " +
             fmt(med["no_sp"]) + ", no_sp_kd " + fmt(med["no_sp_kd"]) + " (gap " + fmt(gap) + "), " + fmt(secs, 4) +
             " s";
  for (auto& [k, v] : med) o.report["median_hr10"][k] = v;
  o.report["config"] = to_json(study_config(0));
  o.report["seconds"] = secs;
  return o;
}

// ---------------------------------------------------------------------------
// 6. Memorization

struct MemoFixture {
  data::Dataset ds;
  stkg::Stkg graph;
  std::vector<const data::Sequence*> samples;
};

// One training sample per user: the last training prefix.
MemoFixture memo_fixture(std::size_t users, std::uint64_t seed) {
  data::SyntheticConfig c;
  c.n_users = users;
  c.n_takeaways = 40;
  c.events_per_user = 6;
  c.seed = seed;
  MemoFixture f;
  f.ds = synthetic_dataset(c, 5);
  f.graph = stkg::build_stkg(f.ds);
  for (auto* s : f.ds.split(data::Split::train))
    if (f.samples.empty() || f.samples.back()->user != s->user)
      f.samples.push_back(s);
    else
      f.samples.back() = s;
  return f;
}

Outcome criterion_memorization() {
  Outcome o;
  const auto sf = memo_fixture(32, 21);
  student::StudentDims dims;
  dims.num_takeaways = sf.ds.num_takeaways();
  dims.num_regions = sf.ds.num_regions();
  dims.d = 32;
  dims.n = 5;
  dims.heads = 2;
  dims.layers = 2;
  dims.dropout = 0.0;
  student::Student<double> s(dims, 3);
  num::Adam<double> opt(s.params, {.lr = 0.01});
  auto hr1 = [&] {
    num::NoGradGuard ng;
    std::size_t hits = 0;
    for (auto* seq : sf.samples) {
      const auto p = student::predict(s, seq->items, seq->regions, seq->distances);
      const auto& pr = p.probs.value();
      bool top = true;
      for (std::size_t j = 1; j < pr.size(); ++j) top = top && (j == seq->target || pr[j] < pr[seq->target]);
      hits += top;
    }
    return double(hits) / double(sf.samples.size());
  };
  std::size_t epochs = 0;
  double student_hr1 = hr1();
  while (student_hr1 < 0.95 && epochs < 500) {
    for (auto* seq : sf.samples) {
      const auto p = student::predict(s, seq->items, seq->regions, seq->distances);
      num::backward(student::rec_loss(p.probs, seq->target), 1.0 / double(sf.samples.size()));
    }
    opt.step();
    ++epochs;
    student_hr1 = hr1();
  }

  const auto tf = memo_fixture(16, 22);
  teacher::Teacher<double> t(teacher::Teacher<double>::dims_for(tf.graph, 16, 5, 2), 1);
  num::Adam<double> topt(t.params, {.lr = 0.01});
  std::vector<stkg::Subgraph> subgraphs;
  for (auto* seq : tf.samples) subgraphs.push_back(stkg::sample_subgraph(*seq, tf.graph, {5, 5}, 1));
  std::vector<teacher::TeacherSample> batch;
  for (std::size_t i = 0; i < tf.samples.size(); ++i) batch.push_back({&subgraphs[i], tf.samples[i]->target});
  std::size_t steps = 0;
  double teacher_loss = INFINITY;
  while (steps < 500) {
    teacher_loss = teacher::pretrain_step(t, topt, batch);
    if (teacher_loss < 0.1) break;
    ++steps;
  }

  o.pass = sf.samples.size() == 32 && tf.samples.size() == 16 && student_hr1 >= 0.95 && teacher_loss < 0.1;
  o.detail = "student HR@1 " + fmt(student_hr1) + " after " + std::to_string(epochs) + " epochs on " +
             std::to_string(sf.samples.size()) + " sequences; teacher loss " + fmt(teacher_loss) + " after " +
             std::to_string(steps) + " steps on " + std::to_string(tf.samples.size()) + " samples";
  o.report["student_hr1"] = student_hr1;
  o.report["student_epochs"] = epochs;
  o.report["teacher_loss"] = teacher_loss;
  o.report["teacher_steps"] = steps;
  return o;
}

// ---------------------------------------------------------------------------
// 7. Inference cost of distillation against fusion

Outcome criterion_efficiency() {
  Outcome o;
  data::SyntheticConfig sc;
  sc.n_users = 100;
  sc.n_takeaways = 200;
  sc.seed = 7;
  auto cfg = study_config(7);
  cfg.epochs = 2;
  cfg.teacher_epochs = 2;
  const auto ws = make_workspace(synthetic_dataset(sc, cfg.n));
  const auto tr = pretrain_teacher<double>(ws, cfg);
  const auto cache = build_soft_label_cache(ws, cfg, tr.teacher);
  const auto logits = cached_teacher_logits<double>(cache);
  const auto reports = ablate_fusion<double>(ws, cfg, {"stkd", "add", "cat", "multi"}, tr.teacher, logits);

  const auto& base = reports.at(0);
  bool faster = true;
  o.detail = "per-batch predict seconds:";
  for (auto& r : reports) {
    o.detail += " " + r.strategy + " " + fmt(r.predict_seconds_per_batch(), 3) + " (gnn " +
                std::to_string(r.gnn_forwards) + ", subgraphs " + std::to_string(r.subgraph_samples) + ")";
    if (&r != &base) faster = faster && base.predict_seconds_per_batch() <= r.predict_seconds_per_batch();
    o.report["strategies"][r.strategy] = {{"predict_seconds_per_batch", r.predict_seconds_per_batch()},
                                          {"predict_seconds", r.predict_seconds},
                                          {"predict_batches", r.predict_batches},
                                          {"gnn_forwards", r.gnn_forwards},
                                          {"subgraph_samples", r.subgraph_samples},
                                          {"hr10", r.hr.at(10)}};
  }
  o.pass = base.strategy == "stkd" && base.gnn_forwards == 0 && base.subgraph_samples == 0 && faster;
  return o;
}

// ---------------------------------------------------------------------------
// 8. Determinism of distill + evaluate through the file-based commands

Outcome criterion_determinism() {
  Outcome o;
  std::string tmpl = (std::filesystem::temp_directory_path() / "stkd_accept_XXXXXX").string();
  if (!mkdtemp(tmpl.data())) throw IoError("cannot create a temporary directory");
  TrainConfig cfg = small_config();
  cfg.out_dir = tmpl;
  cfg.precision = "f64";
  cfg.threads = 1;
  cfg.synthetic.n_users = 40;
  cfg.synthetic.n_takeaways = 60;
  cfg.synthetic.events_per_user = 10;
  cfg.synthetic.seed = 8;
  gen_synth(cfg);
  prepare(cfg);
  build_graph(cfg);
  run_pretrain<double>(cfg);
  std::vector<json> distilled, evaluated;
  for (int run = 0; run < 2; ++run) {
    distilled.push_back(run_distill<double>(cfg));
    evaluated.push_back(run_evaluate<double>(cfg, data::Split::test));
  }
  std::filesystem::remove_all(tmpl);
  const bool metrics_equal = evaluated[0]["hr"] == evaluated[1]["hr"] && evaluated[0]["ndcg"] == evaluated[1]["ndcg"];
  const bool trace_equal = distilled[0]["loss_trace"] == distilled[1]["loss_trace"];
  o.pass = metrics_equal && trace_equal;
  o.detail = std::string("metrics ") + (metrics_equal ? "identical" : "differ") + ", loss trace " +
             (trace_equal ? "identical" : "differs") + "; HR@10 " + evaluated[0]["hr"]["10"].dump() + " / " +
             evaluated[1]["hr"]["10"].dump();
  o.report["runs"] = evaluated;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> selected;
  std::string report_path = "acceptance_report.json";
  app.add_option("criteria", selected, "criterion numbers to run (default: all)")->check(CLI::Range(1, 8));
  app.add_option("--report", report_path, "where to write the JSON report");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", criterion_gradients},
      {"metric oracle", criterion_metrics},
      {"loss endpoints", criterion_loss_endpoints},
      {"sampling invariants", criterion_sampling},
      {"planted-pattern study", criterion_planted_study},
      {"memorization", criterion_memorization},
      {"inference efficiency", criterion_efficiency},
      {"determinism", criterion_determinism},
  };
  const std::set<int> wanted(selected.begin(), selected.end());
  json report;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
    o.report["pass"] = o.pass;
    o.report["detail"] = o.detail;
    report[std::to_string(id)] = o.report;
  }
  std::ofstream(report_path) << report.dump(2) << '\n';
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
