// Command-line front end: one subcommand per pipeline step. Every command
// prints its JSON summary to stdout and also writes <out-dir>/<command>.json.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stkd/errors.hpp"
#include "stkd/harness/commands.hpp"

using namespace stkd;
using namespace stkd::harness;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file");
  sub->add_option("--seed", c.seed, "random seed");
  sub->add_option("--out-dir", c.out_dir, "directory for artifacts and reports");
  sub->add_option("--set", c.overrides, "override a config key: key=value (repeatable)");
}

TrainConfig resolve(const Common& c, bool synthetic_seed = false) {
  TrainConfig cfg = c.config_path.empty() ? TrainConfig{} : load_config(c.config_path);
  for (auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed) (synthetic_seed ? cfg.synthetic.seed : cfg.seed) = *c.seed;
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  validate(cfg);
  return cfg;
}

template <class V>
std::vector<V> parse_list(const std::string& s) {
  std::vector<V> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::istringstream is(item);
    V v;
    if (!(is >> v) || !is.eof()) throw UsageError("cannot parse list item '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("empty list '" + s + "'");
  return out;
}

void emit(const TrainConfig& cfg, const std::string& name, const nlohmann::json& j) {
  ensure_out_dir(cfg);
  write_json(j, artifact(cfg, name + ".json"));
  std::cout << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-temporal knowledge-distilled sequential recommender"};
  app.require_subcommand(1);

  Common common;
  std::string variant, strategy, split = "test", ks, taus = "1,3,5,7,9", fanouts = "5,10,15,20";

  auto* gen = app.add_subcommand("gen-synth", "write a synthetic purchase log");
  auto* prep = app.add_subcommand("prepare", "ingest events and build sequences");
  auto* graph = app.add_subcommand("build-graph", "build the spatial-temporal knowledge graph");
  auto* pre = app.add_subcommand("pretrain", "pre-train the graph teacher");
  auto* dist = app.add_subcommand("distill", "train the student from the teacher");
  auto* eval = app.add_subcommand("evaluate", "rank held-out targets against sampled negatives");
  auto* abl = app.add_subcommand("ablate", "train and test ablation variants");
  auto* fus = app.add_subcommand("ablate-fusion", "compare distillation with inference-time fusion");
  auto* swp = app.add_subcommand("sweep", "grid over temperature and fanout");
  for (auto* s : {gen, prep, graph, pre, dist, eval, abl, fus, swp}) add_common(s, common);
  for (auto* s : {dist, eval, abl}) s->add_option("--variant", variant, "full, no_kd, no_sp, no_sp_kd, no_c, no_f");
  for (auto* s : {dist, fus}) s->add_option("--strategy", strategy, "stkd, add, cat, multi");
  eval->add_option("--split", split, "valid or test");
  for (auto* s : {eval, abl, fus, swp}) s->add_option("--k", ks, "comma-separated cut-offs, e.g. 5,10,20");
  swp->add_option("--taus", taus, "comma-separated temperatures");
  swp->add_option("--fanouts", fanouts, "comma-separated per-hop fanouts s, each used as [s,s]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    TrainConfig cfg = resolve(common, gen->parsed());
    if (!ks.empty()) cfg.k_list = parse_list<std::size_t>(ks);
    if (!variant.empty() && !abl->parsed()) cfg.variant = variant;
    if (!strategy.empty() && !fus->parsed()) cfg.strategy = strategy;
    validate(cfg);

    if (gen->parsed()) emit(cfg, "gen-synth", gen_synth(cfg));
    if (prep->parsed()) emit(cfg, "prepare", prepare(cfg));
    if (graph->parsed()) emit(cfg, "build-graph", build_graph(cfg));
    if (pre->parsed())
      emit(cfg, "pretrain", with_precision(cfg, [&]<class T>() { return run_pretrain<T>(cfg); }));
    if (dist->parsed())
      emit(cfg, "distill", with_precision(cfg, [&]<class T>() { return run_distill<T>(cfg); }));
    if (eval->parsed()) {
      const auto s = data::parse_split(split);
      if (s == data::Split::train) throw UsageError("--split must be valid or test");
      emit(cfg, "evaluate", with_precision(cfg, [&]<class T>() { return run_evaluate<T>(cfg, s); }));
    }
    if (abl->parsed())
      emit(cfg, "ablate", with_precision(cfg, [&]<class T>() { return run_ablate<T>(cfg, variant); }));
    if (fus->parsed())
      emit(cfg, "ablate-fusion", with_precision(cfg, [&]<class T>() { return run_ablate_fusion<T>(cfg, strategy); }));
    if (swp->parsed()) {
      const auto tau_list = parse_list<double>(taus);
      std::vector<std::vector<std::size_t>> fan_list;
      for (auto s : parse_list<std::size_t>(fanouts)) fan_list.push_back(std::vector<std::size_t>(cfg.fanouts.size(), s));
      emit(cfg, "sweep", with_precision(cfg, [&]<class T>() { return run_sweep<T>(cfg, tau_list, fan_list); }));
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ConsistencyError& e) {
    std::cerr << "consistency error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const DataQualityError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
