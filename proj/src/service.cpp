#include "frdesign/service.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <regex>

#include "frdesign/errors.hpp"
#include "frdesign/session_io.hpp"
#include "httplib.h"

namespace frdesign {

namespace fs = std::filesystem;

std::string utc_timestamp() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct SessionService::Entry {
  std::mutex mutex;
  std::string id;
  std::string created_at;
  std::string updated_at;
  std::optional<Session> session;
};

namespace {

struct HttpError {
  int status;
  std::string code;
  std::string message;
  std::string path;
};

ServiceResponse error_response(int status, const std::string& code, const std::string& message,
                               const std::string& path = {}) {
  Json e{{"code", code}, {"message", message}};
  if (!path.empty()) e["path"] = path;
  return {status, Json{{"error", e}}};
}

Json parse_body(const std::string& body) {
  if (body.empty()) return Json::object();
  try {
    return Json::parse(body);
  } catch (const Json::parse_error& e) {
    throw HttpError{400, "invalid_json", e.what(), ""};
  }
}

const std::regex kIdPattern("^s[0-9]{6}$");

}  // namespace

SessionService::SessionService(ServiceOptions options) : options_(std::move(options)) {
  if (!options_.clock) options_.clock = utc_timestamp;
  const auto dir = fs::path(options_.data_dir) / "sessions";
  fs::create_directories(dir);
  for (const auto& f : fs::directory_iterator(dir)) {
    const auto stem = f.path().stem().string();
    if (f.path().extension() == ".json" && std::regex_match(stem, kIdPattern))
      next_id_ = std::max(next_id_, std::stol(stem.substr(1)) + 1);
  }
}

SessionService::~SessionService() = default;

std::string SessionService::now() const { return options_.clock(); }

std::string SessionService::session_path(const std::string& id) const {
  return (fs::path(options_.data_dir) / "sessions" / (id + ".json")).string();
}

void SessionService::persist(const Entry& e) const {
  Json j = session_to_json(*e.session);
  j["id"] = e.id;
  j["created_at"] = e.created_at;
  j["updated_at"] = e.updated_at;
  write_text_file(session_path(e.id), j.dump(2) + "\n");
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) {
  std::lock_guard lock(mutex_);
  if (auto it = entries_.find(id); it != entries_.end()) return it->second;
  if (!std::regex_match(id, kIdPattern) || !fs::exists(session_path(id)))
    throw HttpError{404, "unknown_session", "no session '" + id + "'", ""};
  const auto j = Json::parse(read_text_file(session_path(id)));
  auto e = std::make_shared<Entry>();
  e->id = id;
  e->created_at = j.value("created_at", "");
  e->updated_at = j.value("updated_at", "");
  e->session.emplace(session_from_json(j));
  entries_[id] = e;
  return e;
}

namespace {

Json handle_json(const std::string& id, const std::string& created, const std::string& updated, const Session& s) {
  Json h{{"id", id},
         {"status", to_string(s.status())},
         {"created_at", created},
         {"updated_at", updated},
         {"experiments_done", s.history().size()},
         {"experiments_total", s.config().experiments},
         {"schema_version", kSessionSchemaVersion}};
  if (s.stop_reason()) h["stop_reason"] = *s.stop_reason();
  return h;
}

Json probabilities_json(const Session& s) {
  Json out = Json::array();
  const auto probs = s.model_probs();
  for (std::size_t m = 0; m < probs.size(); ++m)
    out.push_back({{"model_id", s.config().models[m].id}, {"probability", number_to_json(probs[m])}});
  return out;
}

}  // namespace

ServiceResponse SessionService::create(const std::string& body) {
  auto j = parse_body(body);
  if (options_.default_seed && j.is_object() && !j.contains("seed")) j["seed"] = *options_.default_seed;
  const auto cfg = session_config_from_json(j);
  auto e = std::make_shared<Entry>();
  e->session.emplace(cfg);
  e->created_at = e->updated_at = now();
  {
    std::lock_guard lock(mutex_);
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%06ld", next_id_++);
    e->id = buf;
    entries_[e->id] = e;
  }
  std::lock_guard lock(e->mutex);
  persist(*e);
  Json out = handle_json(e->id, e->created_at, e->updated_at, *e->session);
  out["config"] = session_config_to_json(cfg);
  return {201, out};
}

ServiceResponse SessionService::list() {
  std::vector<std::string> ids;
  for (const auto& f : fs::directory_iterator(fs::path(options_.data_dir) / "sessions"))
    if (f.path().extension() == ".json" && std::regex_match(f.path().stem().string(), kIdPattern))
      ids.push_back(f.path().stem().string());
  std::sort(ids.begin(), ids.end());
  Json out = Json::array();
  for (const auto& id : ids) {
    auto e = find(id);
    std::lock_guard lock(e->mutex);
    if (e->session) out.push_back(handle_json(e->id, e->created_at, e->updated_at, *e->session));
  }
  return {200, Json{{"sessions", out}}};
}

ServiceResponse SessionService::get(const std::string& id) {
  auto e = find(id);
  std::lock_guard lock(e->mutex);
  if (!e->session) throw HttpError{404, "unknown_session", "no session '" + id + "'", ""};
  Json out = handle_json(e->id, e->created_at, e->updated_at, *e->session);
  out["config"] = session_config_to_json(e->session->config());
  out["model_probs"] = probabilities_json(*e->session);
  Json obs = Json::array();
  for (const auto& o : e->session->observations()) obs.push_back({{"d", o.n0}, {"n", o.n}});
  out["observations"] = obs;
  return {200, out};
}

ServiceResponse SessionService::design(const std::string& id) {
  auto e = find(id);
  std::lock_guard lock(e->mutex);
  if (!e->session) throw HttpError{404, "unknown_session", "no session '" + id + "'", ""};
  const bool fresh = !e->session->pending();
  const auto& p = e->session->propose_next_design();
  if (fresh) {
    e->updated_at = now();
    persist(*e);
  }
  Json out = handle_json(e->id, e->created_at, e->updated_at, *e->session);
  out["iteration"] = e->session->history().size() + 1;
  out["d"] = p.d;
  if (p.surface) out["surface"] = surface_to_json(*p.surface);
  return {200, out};
}

ServiceResponse SessionService::observe(const std::string& id, const std::string& body) {
  const auto j = parse_body(body);
  if (!j.is_object() || !j.contains("d") || !j["d"].is_number_integer())
    throw HttpError{400, "validation_error", "d must be an integer", "/d"};
  if (!j.contains("n") || !j["n"].is_number_integer())
    throw HttpError{400, "validation_error", "n must be an integer", "/n"};
  const int d = j["d"].get<int>();
  const int n = j["n"].get<int>();

  auto e = find(id);
  std::lock_guard lock(e->mutex);
  if (!e->session) throw HttpError{404, "unknown_session", "no session '" + id + "'", ""};
  auto& s = *e->session;
  if (s.status() != SessionStatus::AwaitingObservation)
    throw HttpError{409, "conflict",
                    "session is " + to_string(s.status()) + "; an observation needs a proposed design first", ""};
  if (d != s.pending()->d)
    throw HttpError{400, "design_mismatch",
                    "observation is for d = " + std::to_string(d) + " but the proposed design is " +
                        std::to_string(s.pending()->d),
                    "/d"};
  if (n < 0 || n > d)
    throw HttpError{400, "observation_out_of_range",
                    "observed count " + std::to_string(n) + " must lie in [0, " + std::to_string(d) + "]", "/n"};
  const auto& rec = s.record_observation(d, n);
  e->updated_at = now();
  persist(*e);

  Json out = handle_json(e->id, e->created_at, e->updated_at, s);
  out["record"] = record_to_json(rec);
  out["model_probs"] = probabilities_json(s);
  Json warnings = Json::array();
  for (const auto& w : rec.warnings) warnings.push_back({{"code", "degenerate_update"}, {"message", w}});
  out["warnings"] = warnings;
  return {200, out};
}

ServiceResponse SessionService::history(const std::string& id) {
  auto e = find(id);
  std::lock_guard lock(e->mutex);
  if (!e->session) throw HttpError{404, "unknown_session", "no session '" + id + "'", ""};
  Json records = Json::array();
  for (const auto& r : e->session->history()) records.push_back(record_to_json(r));
  Json out = handle_json(e->id, e->created_at, e->updated_at, *e->session);
  out["records"] = records;
  return {200, out};
}

ServiceResponse SessionService::remove(const std::string& id) {
  auto e = find(id);
  std::lock_guard lock(e->mutex);
  {
    std::lock_guard map_lock(mutex_);
    entries_.erase(id);
  }
  e->session.reset();
  fs::remove(session_path(id));
  return {200, Json{{"id", id}, {"deleted", true}}};
}

ServiceResponse SessionService::handle(const std::string& method, const std::string& path, const std::string& body) {
  static const std::regex session_route("^/sessions/([^/]+)(/design|/observations|/history)?/?$");
  try {
    if (path == "/health" && method == "GET")
      return {200, Json{{"status", "ok"}, {"schema_version", kSessionSchemaVersion}}};
    if (path == "/sessions" || path == "/sessions/") {
      if (method == "POST") return create(body);
      if (method == "GET") return list();
      return error_response(405, "method_not_allowed", method + " " + path);
    }
    std::smatch m;
    if (std::regex_match(path, m, session_route)) {
      const std::string id = m[1];
      const std::string sub = m[2];
      if (sub.empty() && method == "GET") return get(id);
      if (sub.empty() && method == "DELETE") return remove(id);
      if (sub == "/design" && method == "GET") return design(id);
      if (sub == "/observations" && method == "POST") return observe(id, body);
      if (sub == "/history" && method == "GET") return history(id);
      return error_response(405, "method_not_allowed", method + " " + path);
    }
    return error_response(404, "not_found", "no route " + method + " " + path);
  } catch (const HttpError& e) {
    return error_response(e.status, e.code, e.message, e.path);
  } catch (const ValidationError& e) {
    return error_response(400, "validation_error", e.what(), e.path());
  } catch (const ConflictError& e) {
    return error_response(409, "conflict", e.what());
  } catch (const Json::exception& e) {
    return error_response(400, "validation_error", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

struct HttpServer::Impl {
  SessionService& service;
  httplib::Server server;
  explicit Impl(SessionService& s) : service(s) {}
};

HttpServer::HttpServer(SessionService& service, int threads) : impl_(std::make_unique<Impl>(service)) {
  impl_->server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = impl_->service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  impl_->server.Get(".*", route);
  impl_->server.Post(".*", route);
  impl_->server.Delete(".*", route);
  impl_->server.Put(".*", route);
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace frdesign
