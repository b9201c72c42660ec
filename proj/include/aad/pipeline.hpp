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

// End-to-end pieces: run configuration, dataset splits, the evaluation
// bundle (all protocols, age-gap stratified) and the four-way ablation.

#ifndef AAD_PIPELINE_HPP_
#define AAD_PIPELINE_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aad/datagen.hpp"
#include "aad/evalproto.hpp"
#include "aad/io.hpp"
#include "aad/trainer.hpp"

namespace aad {

struct DataConfig {
  std::uint64_t seed = 0;
  DatasetManifest recognition{Split::recognition_train, 100, 20, 0.0, 0.6, 0, 0, 0};
  DatasetManifest age{Split::age_train, 60, 20, 0.0, 1.0, 0, 100, 0};
  DatasetManifest eval{Split::eval, 20, 30, 0.0, 1.0, 0, 160, 200};

  /// The three manifests with the shared seed applied.
  std::array<DatasetManifest, 3> manifests() const {
    std::array<DatasetManifest, 3> m{recognition, age, eval};
    for (auto& x : m) x.seed = seed;
    return m;
  }
};

struct EvalConfig {
  int pairs_per_bucket = 300;
  std::uint64_t seed = 0;
};

struct RunConfig {
  DataConfig data;
  NetworkSpec teacher_spec = NetworkSpec::teacher();
  NetworkSpec age_spec = AgeModel<float>::default_spec();
  NetworkSpec student_spec = NetworkSpec::student();
  TrainConfig teacher_r;
  TrainConfig teacher_a;
  TrainConfig student;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<DistillMode> modes{DistillMode::self, DistillMode::l2, DistillMode::ad,
                                 DistillMode::aad};

  /// Applies one seed to data, training and evaluation.
  void set_seed(std::uint64_t s) {
    data.seed = s;
    teacher_r.seed = teacher_a.seed = student.seed = s;
    eval.seed = s;
    seeds = {s};
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  std::vector<std::string> modes;
  for (auto m : c.modes) modes.push_back(to_string(m));
  j = {{"data",
        {{"seed", c.data.seed},
         {"recognition_train", c.data.recognition},
         {"age_train", c.data.age},
         {"eval", c.data.eval}}},
       {"teacher_spec", c.teacher_spec},
       {"age_spec", c.age_spec},
       {"student_spec", c.student_spec},
       {"teacher_r", c.teacher_r},
       {"teacher_a", c.teacher_a},
       {"student", c.student},
       {"eval", {{"pairs_per_bucket", c.eval.pairs_per_bucket}, {"seed", c.eval.seed}}},
       {"seeds", c.seeds},
       {"modes", modes}};
}

namespace detail {

inline void merge_manifest(const nlohmann::json& j, DatasetManifest& m) {
  nlohmann::json base = m;
  base.merge_patch(j);
  m = base.get<DatasetManifest>();
}

}  // namespace detail

/// Keys present in `j` override the current values of `c`.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  if (j.contains("data")) {
    const auto& d = j["data"];
    c.data.seed = d.value("seed", c.data.seed);
    if (d.contains("recognition_train")) detail::merge_manifest(d["recognition_train"], c.data.recognition);
    if (d.contains("age_train")) detail::merge_manifest(d["age_train"], c.data.age);
    if (d.contains("eval")) detail::merge_manifest(d["eval"], c.data.eval);
  }
  if (j.contains("teacher_spec")) c.teacher_spec = j["teacher_spec"].get<NetworkSpec>();
  if (j.contains("age_spec")) c.age_spec = j["age_spec"].get<NetworkSpec>();
  if (j.contains("student_spec")) c.student_spec = j["student_spec"].get<NetworkSpec>();
  if (j.contains("teacher_r")) from_json(j["teacher_r"], c.teacher_r);
  if (j.contains("teacher_a")) from_json(j["teacher_a"], c.teacher_a);
  if (j.contains("student")) from_json(j["student"], c.student);
  if (j.contains("eval")) {
    c.eval.pairs_per_bucket = j["eval"].value("pairs_per_bucket", c.eval.pairs_per_bucket);
    c.eval.seed = j["eval"].value("seed", c.eval.seed);
  }
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("modes")) {
    c.modes.clear();
    for (const auto& m : j["modes"]) c.modes.push_back(parse_mode(m.get<std::string>()));
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c;
  from_json(detail::read_json(path), c);
  return c;
}

struct Splits {
  Dataset recognition;
  Dataset age;
  Dataset eval;
};

inline Splits build_splits(const DataConfig& cfg) {
  const auto m = cfg.manifests();
  check_disjoint({m[0], m[1], m[2]});
  return {build_dataset(m[0]), build_dataset(m[1]), build_dataset(m[2])};
}

// Evaluation -----------------------------------------------------------------

struct EvalSummary {
  EvalReport verification;
  std::array<EvalReport, kAgeGapBuckets> by_gap;
  EvalReport loo;
  EvalReport distractors;

  nlohmann::json to_json() const {
    nlohmann::json gaps = nlohmann::json::object();
    for (int b = 0; b < kAgeGapBuckets; ++b) gaps[age_gap_bucket_name(b)] = by_gap[b];
    return {{"verification", verification},
            {"verification_by_age_gap", gaps},
            {"rank1_loo", loo},
            {"rank1_distractors", distractors}};
  }
};

/**
 * Runs every protocol on embeddings of the eval split (one row per sample).
 * Distractor protocol: each identity's youngest sample is the probe and its
 * oldest sample the gallery mate; label -1 rows are the distractors.
 */
template <typename T>
EvalSummary evaluate_embeddings(const Matrix<T>& emb, const Dataset& ds, const EvalConfig& cfg) {
  if (emb.rows() != ds.size()) throw InvalidInput("evaluate_embeddings: row count mismatch");
  EvalSummary out;
  const auto pairs = make_verification_pairs(ds.labels, ds.ages, cfg.pairs_per_bucket, cfg.seed);
  out.verification = verify_10fold(pairs, emb);
  out.verification.protocol = "verification";
  for (int b = 0; b < kAgeGapBuckets; ++b) {
    std::vector<VerificationPair> sub;
    for (const auto& p : pairs)
      if (age_gap_bucket(p.age_gap) == b) sub.push_back(p);
    out.by_gap[b] = verify_10fold(sub, emb);
    out.by_gap[b].protocol = std::string("verification_") + age_gap_bucket_name(b);
  }

  std::vector<int> labelled;
  for (int i = 0; i < ds.size(); ++i)
    if (ds.labels[i] >= 0) labelled.push_back(i);
  Matrix<T> lab(static_cast<Eigen::Index>(labelled.size()), emb.cols());
  std::vector<int> lab_labels;
  for (std::size_t q = 0; q < labelled.size(); ++q) {
    lab.row(static_cast<Eigen::Index>(q)) = emb.row(labelled[q]);
    lab_labels.push_back(ds.labels[labelled[q]]);
  }
  out.loo = rank1_loo(lab, lab_labels);

  std::map<int, std::pair<int, int>> young_old;
  for (int i : labelled) {
    auto it = young_old.find(ds.labels[i]);
    if (it == young_old.end()) {
      young_old[ds.labels[i]] = {i, i};
      continue;
    }
    if (ds.ages[i] < ds.ages[it->second.first]) it->second.first = i;
    if (ds.ages[i] > ds.ages[it->second.second]) it->second.second = i;
  }
  std::vector<int> probe_rows, gallery_rows, probe_labels, gallery_labels, distractor_rows;
  for (const auto& [label, yo] : young_old) {
    if (yo.first == yo.second) continue;
    probe_rows.push_back(yo.first);
    gallery_rows.push_back(yo.second);
    probe_labels.push_back(label);
    gallery_labels.push_back(label);
  }
  for (int i = 0; i < ds.size(); ++i)
    if (ds.labels[i] < 0) distractor_rows.push_back(i);
  auto rows = [&](const std::vector<int>& r) {
    Matrix<T> m(static_cast<Eigen::Index>(r.size()), emb.cols());
    for (std::size_t q = 0; q < r.size(); ++q) m.row(static_cast<Eigen::Index>(q)) = emb.row(r[q]);
    return m;
  };
  out.distractors = rank1_distractors(rows(probe_rows), probe_labels, rows(gallery_rows),
                                      gallery_labels, rows(distractor_rows));
  return out;
}

/// Flattened pixels as embeddings; a reference point that involves no model.
inline Matrix<float> raw_pixel_embeddings(const Dataset& ds) {
  Matrix<float> out(ds.size(), kImagePixels);
  std::copy(ds.images.data.begin(), ds.images.data.end(), out.data());
  return out;
}

// Ablation -------------------------------------------------------------------

struct AblationRow {
  std::uint64_t seed = 0;
  DistillMode mode = DistillMode::self;
  EvalSummary eval;
  double train_top1 = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<nlohmann::json> teachers;

  /// Mean of `metric` over seeds for one mode.
  double mean(DistillMode mode, double (*metric)(const EvalSummary&)) const {
    double s = 0.0;
    int k = 0;
    for (const auto& r : rows)
      if (r.mode == mode) {
        s += metric(r.eval);
        ++k;
      }
    return k ? s / k : 0.0;
  }

  nlohmann::json to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json e = r.eval.to_json();
      rs.push_back({{"seed", r.seed},
                    {"mode", to_string(r.mode)},
                    {"train_top1", r.train_top1},
                    {"eval", e}});
    }
    return {{"rows", rs}, {"teachers", teachers}};
  }
};

inline double metric_verification(const EvalSummary& e) { return e.verification.accuracy; }
inline double metric_large_gap(const EvalSummary& e) { return e.by_gap[kAgeGapBuckets - 1].accuracy; }
inline double metric_loo(const EvalSummary& e) { return e.loo.accuracy; }
inline double metric_distractors(const EvalSummary& e) { return e.distractors.accuracy; }

/// Markdown table, one row per mode with means over seeds.
inline std::string ablation_table(const AblationResult& r, const std::vector<DistillMode>& modes) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "| model | verification | small gap | medium gap | large gap | LOO rank-1 | "
        "rank-1 w/ distractors |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (auto m : modes) {
    os << "| " << to_string(m) << " | " << r.mean(m, metric_verification);
    for (int b = 0; b < kAgeGapBuckets; ++b) {
      double s = 0.0;
      int k = 0;
      for (const auto& row : r.rows)
        if (row.mode == m) {
          s += row.eval.by_gap[b].accuracy;
          ++k;
        }
      os << " | " << (k ? s / k : 0.0);
    }
    os << " | " << r.mean(m, metric_loo) << " | " << r.mean(m, metric_distractors) << " |\n";
  }
  return os.str();
}

/**
 * Trains both teachers and one student per mode for each seed, then
 * evaluates every student. With a non-empty `out` the checkpoints, logs and
 * reports are written under out/seed_<s>/.
 */
inline AblationResult run_ablation(const RunConfig& base, const std::filesystem::path& out = {},
                                   std::ostream* progress = nullptr) {
  AblationResult result;
  for (std::uint64_t seed : base.seeds) {
    RunConfig cfg = base;
    cfg.set_seed(seed);
    const std::filesystem::path dir =
        out.empty() ? std::filesystem::path{} : out / ("seed_" + std::to_string(seed));
    auto hooks_for = [&](const std::string& name, TrainingLog& log) {
      TrainHooks h;
      h.progress = progress;
      if (!dir.empty()) {
        log = TrainingLog(dir / name / "log.jsonl");
        h.log = &log;
      }
      return h;
    };
    if (progress) *progress << "[seed " << seed << "] generating data\n" << std::flush;
    const Splits data = build_splits(cfg.data);

    TrainingLog log_r, log_a;
    RecognitionModel<float> teacher_r(cfg.teacher_spec, detail::class_count(data.recognition),
                                      cfg.teacher_r.seed);
    const auto sum_r = train_recognition_teacher(teacher_r, data.recognition, cfg.teacher_r,
                                                 hooks_for("teacher-r", log_r));
    AgeModel<float> teacher_a(cfg.age_spec, cfg.teacher_a.seed);
    const auto sum_a = train_age_teacher(teacher_a, data.age, cfg.teacher_a,
                                         hooks_for("teacher-a", log_a));
    result.teachers.push_back({{"seed", seed},
                               {"teacher_r_train_top1", sum_r.metric},
                               {"teacher_a_train_mae", sum_a.metric}});
    if (!dir.empty()) {
      save_recognition(dir / "teacher-r", teacher_r,
                       {{"seed", seed}, {"config", cfg.teacher_r}, {"train_top1", sum_r.metric}});
      save_age(dir / "teacher-a", teacher_a,
               {{"seed", seed}, {"config", cfg.teacher_a}, {"train_mae", sum_a.metric}});
    }

    for (DistillMode mode : cfg.modes) {
      TrainConfig sc = cfg.student;
      sc.mode = mode;
      StudentModel<float> student(cfg.student_spec, cfg.teacher_spec,
                                  detail::class_count(data.recognition), sc.seed);
      TrainingLog log_s;
      const std::string name = std::string("student-") + to_string(mode);
      const auto sum_s = train_student(student, data.recognition, teacher_r.net, &teacher_a.net,
                                       sc, hooks_for(name, log_s));
      AblationRow row;
      row.seed = seed;
      row.mode = mode;
      row.train_top1 = sum_s.metric;
      row.eval = evaluate_embeddings(embed_dataset(student.net, data.eval), data.eval, cfg.eval);
      if (progress)
        *progress << "[seed " << seed << "] " << to_string(mode) << " verification "
                  << row.eval.verification.accuracy << " large-gap "
                  << metric_large_gap(row.eval) << "\n"
                  << std::flush;
      if (!dir.empty()) {
        save_student(dir / name, student, cfg.teacher_spec,
                     {{"seed", seed},
                      {"config", sc},
                      {"train_top1", sum_s.metric},
                      {"teacher_r_checksum", teacher_r.net.params().checksum()},
                      {"teacher_a_checksum", teacher_a.net.params().checksum()}});
        detail::write_text(dir / name / "report.json", row.eval.to_json().dump(2) + "\n");
      }
      result.rows.push_back(std::move(row));
    }
  }
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    nlohmann::json report = result.to_json();
    report["config"] = base;
    detail::write_text(out / "ablation.json", report.dump(2) + "\n");
    detail::write_text(out / "ablation.md", ablation_table(result, base.modes));
  }
  return result;
}

}  // namespace aad

#endif  // AAD_PIPELINE_HPP_
