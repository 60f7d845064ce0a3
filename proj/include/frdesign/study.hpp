#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frdesign/config.hpp"
#include "frdesign/designer.hpp"
#include "frdesign/static_design.hpp"

namespace frdesign {

enum class Strategy { RG, PE, MD, TE, StaticPE, StaticMD, StaticTE };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
bool is_static(Strategy s);

struct StaticSettings {
  int B = 200;
  ExchangeOptions exchange;
  bool reuse_across_replications = false;
};

struct StudyManifest {
  std::vector<Truth> truths;
  std::vector<Strategy> strategies;
  int replications = 10;
  int experiments = 15;
  int particles = 1000;
  std::vector<int> design_grid = SessionConfig::default_design_grid();
  double tau = 24.0;
  std::uint64_t seed = 0;
  std::vector<ModelSpec> models = default_models();
  MoveConfig move;
  SurfaceOptions surface;
  StaticSettings static_design;
  int workers = 1;
};

/// The illustration truth (model 1: a = 0.5, T_h = 0.7, lambda = 0.5) when `include_illustration`,
/// followed by `per_model` prior draws for each model, drawn from a stream seeded by `seed`.
std::vector<Truth> default_truths(std::span<const ModelSpec> models, int per_model, bool include_illustration,
                                  std::uint64_t seed);

/// Throws ValidationError naming the offending field.
void validate_manifest(const StudyManifest& m);
StudyManifest manifest_from_json(const Json& j);

struct StudyIteration {
  int i = 0;
  int d = 0;
  int n = 0;
  double log_precision = 0.0;  // of the true model
  std::vector<double> model_probs;
};

struct StudyRecord {
  int truth_index = 0;
  Truth truth;
  int true_model_index = 0;  // position of the truth's model in the manifest model list
  Strategy strategy = Strategy::RG;
  int replication = 0;
  std::uint64_t seed = 0;
  std::vector<StudyIteration> iterations;
  std::optional<StaticDesign> static_design;
  std::optional<std::string> error;
  double wall_clock = 0.0;  // seconds; kept out of the record files so reruns compare equal

  std::string key() const;
  double true_model_prob(const StudyIteration& it) const;
};

Json static_design_to_json(const StaticDesign& d);
StaticDesign static_design_from_json(const Json& j);

Json study_record_to_json(const StudyRecord& r);
StudyRecord study_record_from_json(const Json& j);
std::vector<StudyRecord> records_from_jsonl(const std::string& text);
std::string records_to_jsonl(std::span<const StudyRecord> records);

struct StudyOptions {
  /// JSONL checkpoint. Completed cells found there are not rerun; new ones are appended as they finish.
  std::string checkpoint;
  /// Stop after this many newly completed cells (negative: run everything). Used to exercise resume.
  int stop_after = -1;
  std::function<void(const StudyRecord&)> on_record;
};

/// Runs every truth x strategy x replication cell; each cell has its own seed so results do not
/// depend on the order or the number of workers. Records come back in cell order.
std::vector<StudyRecord> run_study(const StudyManifest& manifest, const StudyOptions& options = {});

struct QuantileRow {
  int truth_index = 0;
  int true_model = 0;
  Strategy strategy = Strategy::RG;
  std::string metric;
  std::array<double, 7> q{};  // 0, 10, 25, 50, 75, 90, 100th percentiles
  int count = 0;
};

struct IterationMedian {
  int truth_index = 0;
  Strategy strategy = Strategy::RG;
  int i = 0;
  double log_precision = 0.0;
  double true_model_prob = 0.0;
};

struct DesignHistogram {
  int truth_index = 0;
  int true_model = 0;
  Strategy strategy = Strategy::RG;
  std::map<int, int> counts;
  int total = 0;
};

struct StudySummary {
  std::vector<QuantileRow> quantiles;
  std::vector<IterationMedian> medians;
  std::vector<DesignHistogram> histograms;

  const QuantileRow* find(int truth_index, Strategy s, const std::string& metric) const;
};

/// Linear-interpolation quantile of unsorted data.
double quantile(std::vector<double> values, double q);

/// Pure function of the records; failed cells are skipped. Throws InvalidParameter when empty.
StudySummary summarize(std::span<const StudyRecord> records);

std::string iterations_csv(std::span<const StudyRecord> records);
std::string summary_csv(const StudySummary& summary);

/// Writes records.jsonl, iterations.csv, summary.csv and the plot-ready tables into `dir`.
void write_study_outputs(const std::string& dir, std::span<const StudyRecord> records);

}  // namespace frdesign
