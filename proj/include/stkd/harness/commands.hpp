#pragma once

// File-based pipeline steps behind the command-line tool. Each step reads its
// inputs from the artifact paths in the config, writes its outputs next to
// them and returns a JSON summary.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stkd/data/events.hpp"
#include "stkd/data/sequences.hpp"
#include "stkd/data/synthetic.hpp"
#include "stkd/harness/config.hpp"
#include "stkd/harness/pipeline.hpp"
#include "stkd/stkg/graph.hpp"

namespace stkd::harness {

namespace fs = std::filesystem;

/// Artifact paths are relative to out_dir unless absolute.
inline std::string artifact(const TrainConfig& cfg, const std::string& path) {
  const fs::path p(path);
  if (p.is_absolute()) return p.string();
  return (fs::path(cfg.out_dir) / p).string();
}

inline std::string events_file(const TrainConfig& cfg) {
  return cfg.events_path.empty() ? artifact(cfg, "events.tsv") : cfg.events_path;
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

inline void ensure_out_dir(const TrainConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + cfg.out_dir + "': " + ec.message());
}

inline nlohmann::json gen_synth(const TrainConfig& cfg) {
  ensure_out_dir(cfg);
  const auto events = data::generate_synthetic(cfg.synthetic);
  const auto path = events_file(cfg);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  data::write_events(out, events);
  out.close();
  return {{"events", events.size()}, {"path", path}};
}

inline nlohmann::json prepare(const TrainConfig& cfg) {
  ensure_out_dir(cfg);
  const auto ds = data::prepare_dataset(data::ingest_events_file(events_file(cfg)), {cfg.n, cfg.train_cap_per_user});
  const auto path = artifact(cfg, cfg.dataset_path);
  data::save_dataset(ds, path);
  return {{"path", path},
          {"users", ds.vocab.users.size()},
          {"takeaways", ds.num_takeaways()},
          {"regions", ds.num_regions()},
          {"events", ds.events.size()},
          {"train", ds.build.train},
          {"valid", ds.build.valid},
          {"test", ds.build.test},
          {"users_skipped", ds.build.users_skipped},
          {"vocab_hash", hex64(ds.vocab.hash())}};
}

inline nlohmann::json build_graph(const TrainConfig& cfg) {
  const auto ds = data::load_dataset(artifact(cfg, cfg.dataset_path));
  const auto g = stkg::build_stkg(ds);
  const auto path = artifact(cfg, cfg.graph_path);
  stkg::save_stkg(g, path);
  auto j = stkg::graph_stats(g);
  j["path"] = path;
  return j;
}

/// Loads dataset and graph; the graph is rebuilt when its file is missing.
inline Workspace load_workspace(const TrainConfig& cfg) {
  auto ds = data::load_dataset(artifact(cfg, cfg.dataset_path));
  const auto gpath = artifact(cfg, cfg.graph_path);
  Workspace ws = fs::exists(gpath) ? make_workspace(std::move(ds), stkg::load_stkg(gpath)) : make_workspace(std::move(ds));
  check_compatible(ws, cfg);
  return ws;
}

template <class T>
nlohmann::json run_pretrain(const TrainConfig& cfg) {
  const auto ws = load_workspace(cfg);
  const auto run = pretrain_teacher<T>(ws, cfg);
  const auto path = artifact(cfg, cfg.teacher_path);
  // The best parameters are saved even when training diverged.
  teacher::save_teacher(run.teacher, ws.vocab_hash, to_json(cfg).dump(), path);
  nlohmann::json j;
  j["path"] = path;
  j["epochs_run"] = run.epochs_run;
  j["best_epoch"] = run.best_epoch;
  j["train_seconds"] = run.train_seconds;
  j["valid_ndcg10"] = run.valid_ndcg10;
  j["final_loss"] = run.loss_trace.empty() ? 0.0 : run.loss_trace.back();
  if (cfg.cache_soft_labels) {
    const auto cpath = artifact(cfg, cfg.soft_labels_path);
    save_soft_labels(build_soft_label_cache(ws, cfg, run.teacher), cpath);
    j["soft_labels"] = cpath;
  }
  j["valid"] = evaluate_teacher(ws, cfg, run.teacher, data::Split::valid).to_json();
  if (run.diverged) throw NumericalError("pretrain", run.error + " (best checkpoint kept at " + path + ")");
  return j;
}

template <class T>
nlohmann::json run_distill(const TrainConfig& cfg) {
  const auto ws = load_workspace(cfg);
  const auto v = variant_spec(cfg.variant);
  const auto fusion = parse_strategy(cfg.strategy);
  std::optional<teacher::LoadedTeacher<T>> loaded;
  std::optional<SoftLabelCache> cache;
  const bool need_teacher = fusion != student::Fusion::none || (v.kd && !cfg.use_soft_label_cache);
  if (need_teacher) loaded.emplace(teacher::load_teacher<T>(artifact(cfg, cfg.teacher_path), ws.vocab_hash));
  if (v.kd && cfg.use_soft_label_cache && fusion == student::Fusion::none)
    cache.emplace(load_soft_labels(artifact(cfg, cfg.soft_labels_path), ws.vocab_hash));

  std::optional<TeacherLogits<T>> logits;
  std::optional<TeacherReadout<T>> readout;
  if (cache) logits = cached_teacher_logits<T>(*cache);
  else if (loaded && v.kd) logits = live_teacher_logits(ws, cfg, loaded->teacher);
  if (fusion != student::Fusion::none) readout = live_teacher_readout(ws, cfg, loaded->teacher);

  const auto run = fusion == student::Fusion::none
                       ? train_student<T>(ws, cfg, v, logits ? &*logits : nullptr)
                       : train_student<T>(ws, cfg, v, nullptr, fusion, &*readout);
  const auto path = artifact(cfg, cfg.student_path);
  student::save_student(run.student, ws.vocab_hash, to_json(cfg).dump(), path);
  nlohmann::json j;
  j["path"] = path;
  j["variant"] = v.name;
  j["strategy"] = cfg.strategy;
  j["epochs_run"] = run.epochs_run;
  j["best_epoch"] = run.best_epoch;
  j["train_seconds"] = run.train_seconds;
  j["valid_ndcg10"] = run.valid_ndcg10;
  j["loss_trace"] = run.loss_trace;
  if (run.diverged) throw NumericalError("distill", run.error + " (best checkpoint kept at " + path + ")");
  return j;
}

template <class T>
nlohmann::json run_evaluate(const TrainConfig& cfg, data::Split split) {
  const auto ws = load_workspace(cfg);
  const auto loaded = student::load_student<T>(artifact(cfg, cfg.student_path), ws.vocab_hash);
  std::optional<teacher::LoadedTeacher<T>> t;
  if (loaded.student.dims().fusion != student::Fusion::none)
    t.emplace(teacher::load_teacher<T>(artifact(cfg, cfg.teacher_path), ws.vocab_hash));
  auto r = evaluate_student(ws, cfg, loaded.student, split, t ? &t->teacher : nullptr);
  r.variant = cfg.variant;
  r.config["checkpoint_config"] = nlohmann::json::parse(loaded.config_json, nullptr, false);
  return r.to_json();
}

/// Variants or strategies from a comma-separated list, "all" meaning every one.
inline std::vector<std::string> name_list(const std::string& s, const std::vector<std::string>& all) {
  if (s.empty() || s == "all") return all;
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

template <class T>
nlohmann::json run_ablate(const TrainConfig& cfg, const std::string& variants) {
  const auto names = name_list(variants, variant_names());
  for (auto& n : names) variant_spec(n);
  const auto ws = load_workspace(cfg);
  std::optional<SoftLabelCache> cache;
  bool any_kd = false;
  for (auto& n : names) any_kd = any_kd || variant_spec(n).kd;
  if (any_kd) {
    const auto cpath = artifact(cfg, cfg.soft_labels_path);
    if (cfg.use_soft_label_cache) {
      cache.emplace(load_soft_labels(cpath, ws.vocab_hash));
    } else {
      const auto t = teacher::load_teacher<T>(artifact(cfg, cfg.teacher_path), ws.vocab_hash);
      cache.emplace(build_soft_label_cache(ws, cfg, t.teacher));
    }
  }
  std::optional<TeacherLogits<T>> logits;
  if (cache) logits = cached_teacher_logits<T>(*cache);
  nlohmann::json out = nlohmann::json::array();
  for (auto& r : ablate<T>(ws, cfg, names, logits ? &*logits : nullptr)) out.push_back(r.to_json());
  return out;
}

template <class T>
nlohmann::json run_ablate_fusion(const TrainConfig& cfg, const std::string& strategies) {
  const auto names = name_list(strategies, {"stkd", "add", "cat", "multi"});
  for (auto& n : names) parse_strategy(n);
  const auto ws = load_workspace(cfg);
  const auto t = teacher::load_teacher<T>(artifact(cfg, cfg.teacher_path), ws.vocab_hash);
  const auto cache = build_soft_label_cache(ws, cfg, t.teacher);
  const auto logits = cached_teacher_logits<T>(cache);
  nlohmann::json out = nlohmann::json::array();
  for (auto& r : ablate_fusion<T>(ws, cfg, names, t.teacher, logits)) out.push_back(r.to_json());
  return out;
}

template <class T>
nlohmann::json run_sweep(const TrainConfig& cfg, const std::vector<double>& taus,
                         const std::vector<std::vector<std::size_t>>& fanouts) {
  const auto ws = load_workspace(cfg);
  return sweep<T>(ws, cfg, taus, fanouts);
}

}  // namespace stkd::harness
