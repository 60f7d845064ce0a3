#include <filesystem>
#include <thread>

#include "doctest.h"
#include "frdesign/service.hpp"
#include "httplib.h"

using namespace frdesign;

namespace {

std::string fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / "frdesign_test_service" / name;
  std::filesystem::remove_all(p);
  return p.string();
}

ServiceOptions options(const std::string& name) {
  ServiceOptions o;
  o.data_dir = fresh_dir(name);
  o.clock = [] { return std::string("2024-01-01T00:00:00Z"); };
  return o;
}

const char* kSmall = R"({"seed": 3, "particles": 150, "experiments": 4, "design_grid": {"min": 5, "max": 300, "step": 5}})";

}  // namespace

TEST_CASE("create, design, observe, history") {
  SessionService svc(options("basic"));
  auto r = svc.handle("POST", "/sessions", kSmall);
  REQUIRE(r.status == 201);
  const std::string id = r.body["id"];
  CHECK(id == "s000001");
  CHECK(r.body["status"] == "awaiting-design");
  CHECK(r.body["schema_version"] == 1);

  r = svc.handle("GET", "/sessions/" + id + "/design", "");
  REQUIRE(r.status == 200);
  const int d = r.body["d"];
  CHECK(r.body["surface"]["best_design"] == d);
  CHECK(r.body["surface"]["designs"].size() == 60);
  CHECK(r.body["status"] == "awaiting-observation");
  // The surface is cached until the next observation.
  CHECK(svc.handle("GET", "/sessions/" + id + "/design", "").body == r.body);

  r = svc.handle("POST", "/sessions/" + id + "/observations", Json{{"d", d}, {"n", 0}}.dump());
  REQUIRE(r.status == 200);
  CHECK(r.body["model_probs"].size() == 4);
  CHECK(r.body["record"]["models"][0]["marginals"].size() == 3);
  CHECK(r.body["record"]["models"][0]["marginals"][0]["density"].size() == 40);
  CHECK(r.body["status"] == "awaiting-design");

  r = svc.handle("GET", "/sessions/" + id + "/history", "");
  REQUIRE(r.status == 200);
  CHECK(r.body["records"].size() == 1);
  CHECK(r.body["records"][0]["n"] == 0);
}

TEST_CASE("an out-of-range count is rejected without changing the session") {
  SessionService svc(options("range"));
  const std::string id = svc.handle("POST", "/sessions", kSmall).body["id"];
  const int d = svc.handle("GET", "/sessions/" + id + "/design", "").body["d"];
  const auto before = svc.handle("GET", "/sessions/" + id, "").body;
  auto r = svc.handle("POST", "/sessions/" + id + "/observations", Json{{"d", d}, {"n", d + 1}}.dump());
  CHECK(r.status == 400);
  CHECK(r.body["error"]["code"] == "observation_out_of_range");
  CHECK(r.body["error"]["path"] == "/n");
  CHECK(svc.handle("GET", "/sessions/" + id, "").body == before);
  r = svc.handle("POST", "/sessions/" + id + "/observations", Json{{"d", d}, {"n", -1}}.dump());
  CHECK(r.status == 400);
  r = svc.handle("POST", "/sessions/" + id + "/observations", Json{{"d", d + 1}, {"n", 0}}.dump());
  CHECK(r.body["error"]["code"] == "design_mismatch");
  r = svc.handle("POST", "/sessions/" + id + "/observations", "{\"d\": ");
  CHECK(r.body["error"]["code"] == "invalid_json");
}

TEST_CASE("error codes") {
  SessionService svc(options("errors"));
  auto r = svc.handle("GET", "/sessions/s999999", "");
  CHECK(r.status == 404);
  CHECK(r.body["error"]["code"] == "unknown_session");
  CHECK(svc.handle("GET", "/sessions/../../etc", "").status == 404);
  CHECK(svc.handle("GET", "/nowhere", "").body["error"]["code"] == "not_found");

  r = svc.handle("POST", "/sessions", R"({"tau": -1})");
  CHECK(r.status == 400);
  CHECK(r.body["error"]["code"] == "validation_error");
  CHECK(r.body["error"]["path"] == "/tau");

  const std::string id = svc.handle("POST", "/sessions", kSmall).body["id"];
  r = svc.handle("POST", "/sessions/" + id + "/observations", R"({"d": 5, "n": 0})");
  CHECK(r.status == 409);
  CHECK(r.body["error"]["code"] == "conflict");

  CHECK(svc.handle("DELETE", "/sessions/" + id, "").status == 200);
  CHECK(svc.handle("GET", "/sessions/" + id, "").status == 404);
}

TEST_CASE("a completed session refuses further work") {
  SessionService svc(options("complete"));
  const std::string id =
      svc.handle("POST", "/sessions", R"({"seed": 1, "particles": 50, "experiments": 1, "selection": "random"})")
          .body["id"];
  const int d = svc.handle("GET", "/sessions/" + id + "/design", "").body["d"];
  CHECK_FALSE(svc.handle("GET", "/sessions/" + id + "/design", "").body.contains("surface"));
  auto r = svc.handle("POST", "/sessions/" + id + "/observations", Json{{"d", d}, {"n", 1}}.dump());
  CHECK(r.body["status"] == "complete");
  CHECK(svc.handle("GET", "/sessions/" + id + "/design", "").status == 409);
  CHECK(svc.handle("POST", "/sessions/" + id + "/observations", Json{{"d", d}, {"n", 1}}.dump()).status == 409);
}

TEST_CASE("degenerate updates are reported as warnings") {
  SessionService svc(options("degenerate"));
  // With few particles an extreme count leaves about one particle carrying the weight.
  const std::string id =
      svc.handle("POST", "/sessions", R"({"seed": 2, "particles": 20, "experiments": 3, "design_grid": [300]})")
          .body["id"];
  svc.handle("GET", "/sessions/" + id + "/design", "");
  const auto r = svc.handle("POST", "/sessions/" + id + "/observations", R"({"d": 300, "n": 300})");
  REQUIRE(r.status == 200);
  REQUIRE(!r.body["warnings"].empty());
  CHECK(r.body["warnings"][0]["code"] == "degenerate_update");
}

TEST_CASE("four-step walkthrough with replay through a fresh service") {
  const int counts[] = {150, 20, 10, 15};
  auto run = [&](const std::string& name) {
    SessionService svc(options(name));
    std::vector<Json> responses;
    responses.push_back(svc.handle("POST", "/sessions", kSmall).body);
    const std::string id = responses.back()["id"];
    for (int step = 0; step < 4; ++step) {
      responses.push_back(svc.handle("GET", "/sessions/" + id + "/design", "").body);
      const int d = responses.back()["d"];
      const auto r = svc.handle("POST", "/sessions/" + id + "/observations",
                                Json{{"d", d}, {"n", std::min(d, counts[step])}}.dump());
      REQUIRE(r.status == 200);
      responses.push_back(r.body);
    }
    responses.push_back(svc.handle("GET", "/sessions/" + id + "/history", "").body);
    return responses;
  };
  const auto a = run("walk_a");
  CHECK(a.back()["records"].size() == 4);
  CHECK(a.back()["status"] == "complete");
  for (const auto& r : a.back()["records"]) CHECK(r["models"].size() == 4);
  const auto b = run("walk_b");
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("sessions survive a service restart") {
  auto opt = options("restart");
  std::string id;
  Json before;
  {
    SessionService svc(opt);
    id = svc.handle("POST", "/sessions", kSmall).body["id"];
    const int d = svc.handle("GET", "/sessions/" + id + "/design", "").body["d"];
    svc.handle("POST", "/sessions/" + id + "/observations", Json{{"d", d}, {"n", 3}}.dump());
    before = svc.handle("GET", "/sessions/" + id + "/design", "").body;
  }
  SessionService svc(opt);
  CHECK(svc.handle("GET", "/sessions/" + id + "/design", "").body == before);
  CHECK(svc.handle("POST", "/sessions", kSmall).body["id"] == "s000002");
  CHECK(svc.handle("GET", "/sessions", "").body["sessions"].size() == 2);
}

TEST_CASE("the HTTP transport") {
  SessionService svc(options("http"));
  HttpServer server(svc, 2);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread t([&] { server.listen(); });
  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Get("/health");
  for (int tries = 0; !res && tries < 50; ++tries) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    res = cli.Get("/health");
  }
  REQUIRE(res);
  CHECK(res->status == 200);
  res = cli.Post("/sessions", kSmall, "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  CHECK(Json::parse(res->body)["id"] == "s000001");
  res = cli.Get("/sessions/nope");
  CHECK(res->status == 404);
  server.stop();
  t.join();
}
