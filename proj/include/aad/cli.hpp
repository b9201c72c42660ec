/* Copyright 2026 The AAD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// The `aad` command line: gen-data, train {teacher-r,teacher-a,student},
// eval, heatmaps and ablation. Parameters come from a JSON run config;
// flags override file values.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#ifndef AAD_CLI_HPP_
#define AAD_CLI_HPP_

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "aad/datagen.hpp"
#include "aad/evalproto.hpp"
#include "aad/io.hpp"
#include "aad/pipeline.hpp"
#include "aad/trainer.hpp"

namespace aad::cli {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

inline RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw ConfigError("config file not found: " + o.config);
    c = load_run_config(o.config);
  }
  if (o.seed) c.set_seed(*o.seed);
  return c;
}

inline void require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what);
  if (!fs::is_directory(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

inline void require_out(const CommonOptions& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
}

inline std::ostream* progress(const CommonOptions& o) { return o.quiet ? nullptr : &std::cerr; }

// Commands -------------------------------------------------------------------

/// Writes the recognition_train, age_train and eval archives under `out`.
inline void cmd_gen_data(const CommonOptions& o) {
  require_out(o);
  const RunConfig c = resolve_config(o);
  const Splits s = build_splits(c.data);
  save_archive(s.recognition, fs::path(o.out) / "recognition_train");
  save_archive(s.age, fs::path(o.out) / "age_train");
  save_archive(s.eval, fs::path(o.out) / "eval");
  if (auto* p = progress(o))
    *p << "wrote " << s.recognition.size() << " + " << s.age.size() << " + " << s.eval.size()
       << " samples to " << o.out << "\n";
}

struct TrainOptions {
  std::string data;
  std::string teacher_r;
  std::string teacher_a;
  std::optional<std::string> mode;
};

inline void cmd_train(const std::string& which, const CommonOptions& o, const TrainOptions& t) {
  require_out(o);
  require_dir(t.data, "--data");
  const RunConfig c = resolve_config(o);
  const fs::path out(o.out);
  TrainingLog log(out / "log.jsonl");
  TrainHooks hooks{&log, progress(o)};
  if (which == "teacher-r") {
    const Dataset ds = load_archive(fs::path(t.data) / "recognition_train");
    RecognitionModel<float> m(c.teacher_spec, detail::class_count(ds), c.teacher_r.seed);
    const auto sum = train_recognition_teacher(m, ds, c.teacher_r, hooks);
    save_recognition(out, m, {{"seed", c.teacher_r.seed}, {"config", c.teacher_r},
                              {"train_top1", sum.metric}});
  } else if (which == "teacher-a") {
    const Dataset ds = load_archive(fs::path(t.data) / "age_train");
    AgeModel<float> m(c.age_spec, c.teacher_a.seed);
    const auto sum = train_age_teacher(m, ds, c.teacher_a, hooks);
    save_age(out, m, {{"seed", c.teacher_a.seed}, {"config", c.teacher_a},
                      {"train_mae", sum.metric}});
  } else {
    TrainConfig sc = c.student;
    if (t.mode) sc.mode = parse_mode(*t.mode);
    require_dir(t.teacher_r, "--teacher-r");
    if (sc.mode == DistillMode::aad) require_dir(t.teacher_a, "--teacher-a (required for AAD)");
    const Dataset ds = load_archive(fs::path(t.data) / "recognition_train");
    const RecognitionModel<float> tr = load_recognition<float>(t.teacher_r);
    std::optional<AgeModel<float>> ta;
    if (!t.teacher_a.empty()) ta = load_age<float>(t.teacher_a);
    StudentModel<float> s(c.student_spec, tr.net.spec(), detail::class_count(ds), sc.seed);
    const auto sum = train_student(s, ds, tr.net, ta ? &ta->net : nullptr, sc, hooks);
    nlohmann::json meta = {{"seed", sc.seed}, {"config", sc}, {"train_top1", sum.metric},
                           {"teacher_r_checksum", tr.net.params().checksum()}};
    if (ta) meta["teacher_a_checksum"] = ta->net.params().checksum();
    save_student(out, s, tr.net.spec(), meta);
  }
}

struct EvalOptions {
  std::string data;
  std::string checkpoint;
  bool raw_pixels = false;
};

/// Embeds the eval split and writes embeddings plus one report per protocol.
inline void cmd_eval(const CommonOptions& o, const EvalOptions& e) {
  require_out(o);
  require_dir(e.data, "--data");
  if (e.raw_pixels == !e.checkpoint.empty())
    throw ConfigError("give exactly one of --checkpoint and --raw-pixels");
  const RunConfig c = resolve_config(o);
  const Dataset ds = load_archive(fs::path(e.data) / "eval");
  EmbeddingFile ef;
  if (e.raw_pixels) {
    ef.embeddings = raw_pixel_embeddings(ds);
    ef.source = "raw-pixels";
  } else {
    require_dir(e.checkpoint, "--checkpoint");
    ef.embeddings = embed_dataset(load_backbone<float>(e.checkpoint), ds);
    ef.source = fs::path(e.checkpoint).lexically_normal().string();
  }
  ef.labels = ds.labels;
  ef.identities = ds.identities;
  ef.ages = ds.ages;
  const fs::path out(o.out);
  save_embeddings(out / "embeddings", ef);
  const EvalSummary sum = evaluate_embeddings(ef.embeddings, ds, c.eval);
  const nlohmann::json j = sum.to_json();
  for (const auto& [name, report] : j.items())
    detail::write_text(out / (name + ".json"), report.dump(2) + "\n");
  if (auto* p = progress(o))
    *p << "verification " << sum.verification.accuracy << ", large gap "
       << metric_large_gap(sum) << ", LOO rank-1 " << sum.loo.accuracy
       << ", rank-1 with distractors " << sum.distractors.accuracy << "\n";
}

struct HeatmapOptions {
  std::string data;
  std::string checkpoint;
  std::vector<int> samples{0};
  std::vector<int> stages{1, 2, 3, 4};
  bool inverted = false;
};

/**
 * Exports per-stage attention maps of a checkpoint for chosen eval samples.
 * Networks without reinjection get maps computed from their stage outputs.
 * With `inverted`, stages after the first are written as D(A_1) * (1 - A_i).
 */
inline void cmd_heatmaps(const CommonOptions& o, const HeatmapOptions& h) {
  require_out(o);
  require_dir(h.data, "--data");
  require_dir(h.checkpoint, "--checkpoint");
  const Dataset ds = load_archive(fs::path(h.data) / "eval");
  for (int s : h.samples)
    if (s < 0 || s >= ds.size())
      throw ConfigError("sample " + std::to_string(s) + " outside the eval split");
  const Network<float> net = load_backbone<float>(h.checkpoint);
  for (int st : h.stages)
    if (st < 1 || st > net.n()) throw ConfigError("stage " + std::to_string(st) + " out of range");
  const std::string kind = read_checkpoint_manifest(h.checkpoint).value("kind", "");
  const NetworkOutput<float> out = net.infer(ds.batch<float>(h.samples));
  std::vector<AttentionMap<float>> maps = out.attention;
  if (maps.empty())
    for (const auto& t : out.taps) maps.push_back(age_attention_map(t));
  const AttentionFlavor flavor =
      kind == "student" ? AttentionFlavor::student : AttentionFlavor::age_sensitive;
  for (auto& m : maps) m.flavor = flavor;
  const std::string source = fs::path(h.checkpoint).lexically_normal().string();
  for (int st : h.stages) {
    AttentionMap<float> m = maps[st - 1];
    if (h.inverted && st > 1) m = invert_attention(m, maps[0]);
    for (std::size_t q = 0; q < h.samples.size(); ++q)
      export_heatmap(fs::path(o.out) / ("sample" + std::to_string(h.samples[q]) + "_stage" +
                                        std::to_string(st) + "_" + to_string(m.flavor)),
                     m, static_cast<int>(q), source, h.samples[q]);
  }
}

inline void cmd_ablation(const CommonOptions& o, const std::optional<std::string>& mode) {
  require_out(o);
  RunConfig c = resolve_config(o);
  if (mode) c.modes = {parse_mode(*mode)};
  const AblationResult r = run_ablation(c, o.out, progress(o));
  std::cout << ablation_table(r, c.modes);
}

// Entry point ----------------------------------------------------------------

inline void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config, "JSON run config");
  app->add_option("--seed", o.seed, "Overrides every seed in the config");
  app->add_option("--out", o.out, "Output directory")->required();
  app->add_flag("--quiet", o.quiet, "No progress output");
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Attentive angular distillation toolkit"};
  app.require_subcommand(1);
  CommonOptions common;
  TrainOptions train;
  EvalOptions eval;
  HeatmapOptions heat;
  std::optional<std::string> ablation_mode;
  std::string train_which;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset splits");
  add_common(gen, common);

  auto* tr = app.add_subcommand("train", "Train a teacher or a student");
  tr->require_subcommand(1);
  for (const char* which : {"teacher-r", "teacher-a", "student"}) {
    auto* sub = tr->add_subcommand(which);
    add_common(sub, common);
    sub->add_option("--data", train.data, "Dataset root from gen-data")->required();
    if (std::string(which) == "student") {
      sub->add_option("--teacher-r", train.teacher_r, "Recognition teacher checkpoint")
          ->required();
      sub->add_option("--teacher-a", train.teacher_a, "Age teacher checkpoint");
      sub->add_option("--mode", train.mode, "self, l2, AD or AAD");
    }
    sub->callback([&train_which, which] { train_which = which; });
  }

  auto* ev = app.add_subcommand("eval", "Run the evaluation protocols");
  add_common(ev, common);
  ev->add_option("--data", eval.data, "Dataset root from gen-data")->required();
  ev->add_option("--checkpoint", eval.checkpoint, "Checkpoint to embed with");
  ev->add_flag("--raw-pixels", eval.raw_pixels, "Use raw pixels as embeddings");

  auto* hm = app.add_subcommand("heatmaps", "Export attention maps as PGM images");
  add_common(hm, common);
  hm->add_option("--data", heat.data, "Dataset root from gen-data")->required();
  hm->add_option("--checkpoint", heat.checkpoint, "Checkpoint")->required();
  hm->add_option("--samples", heat.samples, "Eval sample indices")->delimiter(',');
  hm->add_option("--stages", heat.stages, "Stages (1-based)")->delimiter(',');
  hm->add_flag("--inverted", heat.inverted, "Export age-invariant maps for stages > 1");

  auto* ab = app.add_subcommand("ablation", "Train and compare self, l2, AD and AAD students");
  add_common(ab, common);
  ab->add_option("--mode", ablation_mode, "Restrict to one mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) cmd_gen_data(common);
    else if (*tr) cmd_train(train_which, common, train);
    else if (*ev) cmd_eval(common, eval);
    else if (*hm) cmd_heatmaps(common, heat);
    else if (*ab) cmd_ablation(common, ablation_mode);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed config: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace aad::cli

#endif  // AAD_CLI_HPP_
