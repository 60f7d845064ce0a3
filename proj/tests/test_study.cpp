#include <algorithm>
#include <filesystem>

#include "doctest.h"
#include "frdesign/errors.hpp"
#include "frdesign/session_io.hpp"
#include "frdesign/study.hpp"

using namespace frdesign;

namespace {

StudyManifest tiny_manifest() {
  StudyManifest m;
  m.truths = {{make_model(1), Params::from_natural(0.5, 0.7, 0.5)}};
  m.strategies = {Strategy::RG};
  m.replications = 1;
  m.experiments = 2;
  m.particles = 100;
  m.design_grid = {5, 20, 60, 150, 300};
  m.seed = 11;
  return m;
}

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "frdesign_test_study";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::filesystem::remove_all(p);
  return p.string();
}

}  // namespace

TEST_CASE("a one-cell study yields one record of I iterations") {
  const auto records = run_study(tiny_manifest());
  REQUIRE(records.size() == 1);
  CHECK_FALSE(records[0].error);
  REQUIRE(records[0].iterations.size() == 2);
  for (const auto& it : records[0].iterations) {
    CHECK(it.n >= 0);
    CHECK(it.n <= it.d);
    CHECK(it.model_probs.size() == 4);
  }
  CHECK(records[0].key() == "t0/RG/r0");
}

TEST_CASE("reruns reproduce the record file byte for byte") {
  auto m = tiny_manifest();
  m.strategies = {Strategy::RG, Strategy::MD};
  m.replications = 2;
  const auto a = records_to_jsonl(run_study(m));
  const auto b = records_to_jsonl(run_study(m));
  CHECK(a == b);

  m.workers = 2;
  CHECK(records_to_jsonl(run_study(m)) == a);
}

TEST_CASE("a resumed study equals an uninterrupted one") {
  auto m = tiny_manifest();
  m.strategies = {Strategy::RG, Strategy::PE};
  m.replications = 2;
  const auto full = records_to_jsonl(run_study(m));

  const auto path = temp_path("resume.jsonl");
  StudyOptions first;
  first.checkpoint = path;
  first.stop_after = 2;
  CHECK(run_study(m, first).size() == 2);
  CHECK(records_from_jsonl(read_text_file(path)).size() == 2);

  int fresh = 0;
  StudyOptions second;
  second.checkpoint = path;
  second.on_record = [&](const StudyRecord&) { ++fresh; };
  const auto resumed = run_study(m, second);
  CHECK(fresh == 2);
  CHECK(records_to_jsonl(resumed) == full);
  CHECK(read_text_file(path) == full);
}

TEST_CASE("a checkpoint from another manifest is rejected") {
  auto m = tiny_manifest();
  const auto path = temp_path("other.jsonl");
  StudyOptions opt;
  opt.checkpoint = path;
  run_study(m, opt);
  m.seed = 12;
  CHECK_THROWS_AS(run_study(m, opt), ValidationError);
}

TEST_CASE("interrupted checkpoint lines are skipped") {
  const auto records = run_study(tiny_manifest());
  auto text = records_to_jsonl(records);
  text += text.substr(0, text.size() / 2);
  CHECK(records_from_jsonl(text).size() == 1);
}

TEST_CASE("records round-trip through JSON") {
  auto m = tiny_manifest();
  m.strategies = {Strategy::StaticPE};
  m.static_design.B = 2;
  m.static_design.exchange.passes = 0;
  const auto records = run_study(m);
  REQUIRE(records.size() == 1);
  REQUIRE(records[0].static_design);
  CHECK(records[0].static_design->points.size() == 2);
  CHECK(records[0].iterations[0].d == records[0].static_design->points[0]);
  CHECK(records[0].iterations[1].d == records[0].static_design->points[1]);
  const auto text = records_to_jsonl(records);
  CHECK(records_to_jsonl(records_from_jsonl(text)) == text);
}

TEST_CASE("static designs can be shared across replications") {
  auto m = tiny_manifest();
  m.strategies = {Strategy::StaticMD};
  m.replications = 2;
  m.static_design.B = 2;
  m.static_design.exchange.passes = 0;
  m.static_design.reuse_across_replications = true;
  const auto records = run_study(m);
  REQUIRE(records.size() == 2);
  CHECK(records[0].static_design->points == records[1].static_design->points);
}

TEST_CASE("quantiles") {
  CHECK(quantile({3.0}, 0.1) == 3.0);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({4.0, 1.0, 3.0, 2.0}, 0.25) == doctest::Approx(1.75));
  CHECK(quantile({1.0, 2.0}, 0.0) == 1.0);
  CHECK(quantile({1.0, 2.0}, 1.0) == 2.0);
  CHECK_THROWS_AS(quantile({}, 0.5), InvalidParameter);
}

TEST_CASE("summaries of a single record collapse to its values") {
  const auto records = run_study(tiny_manifest());
  const auto s = summarize(records);
  const auto* q = s.find(0, Strategy::RG, "final_log_precision");
  REQUIRE(q);
  for (double v : q->q) CHECK(v == records[0].iterations.back().log_precision);
  CHECK(q->count == 1);
  REQUIRE(s.medians.size() == 2);
  CHECK(s.medians[1].true_model_prob == records[0].true_model_prob(records[0].iterations[1]));
  REQUIRE(s.histograms.size() == 1);
  CHECK(s.histograms[0].total == 2);
}

TEST_CASE("design histograms count every experiment") {
  auto m = tiny_manifest();
  m.replications = 3;
  m.experiments = 4;
  const auto records = run_study(m);
  const auto s = summarize(records);
  int mass = 0;
  for (const auto& [d, c] : s.histograms[0].counts) mass += c;
  CHECK(mass == 12);
  CHECK(s.histograms[0].total == 12);
}

TEST_CASE("failed cells are recorded and skipped in summaries") {
  StudyRecord failed;
  failed.error = "boom";
  std::vector<StudyRecord> records{failed};
  CHECK_THROWS_AS(summarize(records), InvalidParameter);
  const auto ok = run_study(tiny_manifest());
  records.push_back(ok[0]);
  CHECK(summarize(records).quantiles.size() == 2);
}

TEST_CASE("study outputs") {
  const auto dir = temp_path("out");
  const auto records = run_study(tiny_manifest());
  write_study_outputs(dir, records);
  for (const char* f : {"records.jsonl", "iterations.csv", "summary.csv", "iteration_medians.csv",
                        "final_log_precision.csv", "final_model_probs.csv", "design_points.csv"})
    CHECK(std::filesystem::exists(std::filesystem::path(dir) / f));
  const auto csv = iterations_csv(records);
  CHECK(csv.rfind("truth,true_model,strategy,replication,i,d,n,log_precision_true,prob_true,prob_1", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("manifests from configuration") {
  auto doc = parse_config(
      "seed: 5\n"
      "experiments: 3\n"
      "replications: 2\n"
      "particles: 50\n"
      "strategies: [RG, TE, STATIC-PE]\n"
      "default_truths: {include_illustration: true, prior_draws_per_model: 2}\n"
      "static: {B: 10, passes: 1}\n");
  const auto m = manifest_from_json(doc.value);
  CHECK(m.seed == 5);
  CHECK(m.experiments == 3);
  CHECK(m.strategies.size() == 3);
  CHECK(m.truths.size() == 9);
  CHECK(m.truths[0].model.id == 1);
  CHECK(m.static_design.B == 10);
  CHECK(m.static_design.exchange.passes == 1);
  // Truth draws depend only on the seed.
  const auto again = manifest_from_json(doc.value);
  CHECK(truth_to_json(again.truths[5]) == truth_to_json(m.truths[5]));

  auto bad = parse_config("strategies: [RG, XX]\n");
  try {
    manifest_from_json(bad.value);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.path() == "/strategies/1");
  }
  CHECK_THROWS_AS(manifest_from_json(parse_config("strategies: [RG]\nexperiments: 0\n").value), ValidationError);
  CHECK_THROWS_AS(manifest_from_json(parse_config("strategies: [RG]\nbogus: 1\n").value), ValidationError);
  CHECK_THROWS_AS(
      manifest_from_json(parse_config("strategies: [RG]\nmodels: [3]\ntruths: [{model: 1, a: 0.5, th: 0.7, lambda: 0.5}]\n").value),
      ValidationError);
}
