#include <cmath>

#include "doctest.h"
#include "frdesign/config.hpp"
#include "frdesign/errors.hpp"
#include "frdesign/session_io.hpp"

using namespace frdesign;

namespace {

std::string describe_failure(const std::string& text) {
  const auto doc = parse_config(text, "cfg.yaml");
  try {
    session_config_from_json(doc.value);
  } catch (const ValidationError& e) {
    return doc.describe(e);
  }
  return "";
}

}  // namespace

TEST_CASE("YAML scalars map to JSON types") {
  const auto doc = parse_config("a: 3\nb: -2\nc: 0.25\nd: text\ne: \"7\"\nf: true\ng: ~\nh: [1, 2]\n");
  CHECK(doc.value["a"].is_number_unsigned());
  CHECK(doc.value["b"] == -2);
  CHECK(doc.value["c"] == 0.25);
  CHECK(doc.value["d"] == "text");
  CHECK(doc.value["e"] == "7");
  CHECK(doc.value["f"] == true);
  CHECK(doc.value["g"].is_null());
  CHECK(doc.value["h"].size() == 2);
  CHECK(doc.line_of("/c") == 3);
  CHECK(doc.line_of("/h/1") == 8);
  CHECK(doc.line_of("/missing/deeper") == 1);  // falls back to the document root
}

TEST_CASE("JSON documents are accepted") {
  const auto doc = parse_config(R"({"particles": 50, "utility": "MD"})");
  const auto cfg = session_config_from_json(doc.value);
  CHECK(cfg.particles == 50);
  CHECK(cfg.utility == UtilityKind::ModelDiscrimination);
}

TEST_CASE("errors name the offending line") {
  CHECK(describe_failure("particles: 100\nexperiments: 3\ntau: -1\n").rfind("cfg.yaml:3: ", 0) == 0);
  CHECK(describe_failure("particles: 100\nparticels: 3\n").rfind("cfg.yaml:2: unknown key 'particels'", 0) == 0);
  CHECK(describe_failure("move:\n  c: 0.01\n  max_repeats: 1.5\n").rfind("cfg.yaml:3: ", 0) == 0);
  CHECK(describe_failure("models:\n  - 1\n  - 7\n").rfind("cfg.yaml:3: ", 0) == 0);
  CHECK(describe_failure("design_grid: {min: 10, max: 5}\n").rfind("cfg.yaml:1: ", 0) == 0);
  CHECK(describe_failure("utility: XX\n").find("unknown utility kind") != std::string::npos);
  try {
    parse_config("a: [1, 2\nb: 3\n", "bad.yaml");
    FAIL("expected a syntax error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).rfind("bad.yaml:", 0) == 0);
  }
}

TEST_CASE("design grids and models") {
  const auto doc = parse_config(
      "design_grid: {min: 10, max: 50, step: 20}\n"
      "models:\n"
      "  - {id: 3, prior_prob: 0.4}\n"
      "  - id: 4\n"
      "    prior_prob: 0.6\n"
      "    prior: {log_a: {mean: -1, sd: 2}}\n");
  const auto cfg = session_config_from_json(doc.value);
  CHECK(cfg.design_grid == std::vector<int>{10, 30, 50});
  REQUIRE(cfg.models.size() == 2);
  CHECK(cfg.models[1].prior.log_a.sd == 2.0);
  CHECK(cfg.models[1].prior.log_th.sd == 1.35);
  CHECK(cfg.models[0].prior_model_prob == 0.4);

  const auto equal = session_config_from_json(parse_config("models: [1, 3]\n").value);
  CHECK(equal.models[0].prior_model_prob == 0.5);
  CHECK_THROWS_AS(session_config_from_json(parse_config("models: [{id: 1, prior_prob: 0.5}, 3]\n").value),
                  ValidationError);
}

TEST_CASE("session config round trip") {
  SessionConfig cfg;
  cfg.particles = 77;
  cfg.seed = 18446744073709551615ULL;
  cfg.selection = SelectionMode::Random;
  cfg.early_stop.max_model_prob = 0.9;
  cfg.models[2].prior.log_th.mean = 0.5;
  const auto j = session_config_to_json(cfg);
  const auto back = session_config_from_json(j);
  CHECK(session_config_to_json(back) == j);
  CHECK(back.seed == cfg.seed);
}

TEST_CASE("truths") {
  const auto t = read_truth(parse_config("{model: 1, a: 0.5, th: 0.7, lambda: 0.5}").value, "/truth");
  CHECK(t.model.id == 1);
  CHECK(t.params.lambda() == doctest::Approx(0.5));
  CHECK_THROWS_AS(read_truth(parse_config("{model: 3, a: 0.5, th: 0.7, lambda: 0.5}").value, ""), ValidationError);
  CHECK_THROWS_AS(read_truth(parse_config("{model: 3, a: -1}").value, ""), ValidationError);
  CHECK(truth_to_json(t)["model"] == 1);
}

TEST_CASE("non-finite numbers survive JSON") {
  for (double x : {double(INFINITY), -double(INFINITY), 1.5})
    CHECK(number_from_json(Json::parse(number_to_json(x).dump())) == x);
  CHECK(std::isnan(number_from_json(number_to_json(NAN))));
}

TEST_CASE("session files") {
  SessionConfig cfg;
  cfg.particles = 100;
  cfg.experiments = 4;
  cfg.seed = 3;
  cfg.design_grid = {5, 10, 50, 100};
  SUBCASE("random mode with a pending proposal") {
    cfg.selection = SelectionMode::Random;
    Session s(cfg);
    for (int n : {2, 4}) s.record_observation(s.propose_next_design().d, std::min(n, s.pending()->d));
    const int next = s.propose_next_design().d;
    const auto j = session_to_json(s);
    CHECK(j["schema_version"] == kSessionSchemaVersion);
    CHECK(j["status"] == "awaiting-observation");
    auto loaded = session_from_json(Json::parse(j.dump()));
    CHECK(loaded.model_probs() == s.model_probs());
    CHECK(loaded.status() == SessionStatus::AwaitingObservation);
    CHECK(loaded.pending()->d == next);
    CHECK(session_to_json(loaded).dump() == j.dump());
  }
  SUBCASE("optimal mode keeps the cached surface") {
    Session s(cfg);
    s.propose_next_design();
    const auto j = session_to_json(s);
    const auto loaded = session_from_json(j);
    REQUIRE(loaded.pending()->surface);
    CHECK(loaded.pending()->surface->values == s.pending()->surface->values);
  }
  SUBCASE("tampering and unknown versions are detected") {
    Session s(cfg);
    s.record_observation(10, 3);
    auto j = session_to_json(s, true);
    CHECK(j["particles"].size() == 4);
    auto bad = j;
    bad["records"][0]["model_probs"][0] = 0.1;
    CHECK_THROWS_AS(session_from_json(bad), ValidationError);
    bad = j;
    bad["schema_version"] = 99;
    CHECK_THROWS_AS(session_from_json(bad), ValidationError);
  }
  SUBCASE("records round trip") {
    Session s(cfg);
    s.propose_next_design();
    const auto& rec = s.record_observation(s.pending()->d, 1);
    const auto j = record_to_json(rec);
    CHECK(record_to_json(record_from_json(Json::parse(j.dump()))) == j);
  }
}
