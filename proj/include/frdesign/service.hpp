#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "frdesign/config.hpp"
#include "frdesign/designer.hpp"

namespace frdesign {

struct ServiceOptions {
  /// Session files live in `<data_dir>/sessions/<id>.json`.
  std::string data_dir = "data";
  /// Timestamp source; injectable so that replayed request sequences give identical responses.
  std::function<std::string()> clock;
  /// Seed given to sessions whose settings do not name one.
  std::optional<std::uint64_t> default_seed;
};

/// UTC time as "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp();

struct ServiceResponse {
  int status = 200;
  Json body;
};

/// The session API independent of any transport. Routes:
///   GET    /health
///   POST   /sessions                       body: session settings      -> 201 handle
///   GET    /sessions                                                   -> handles
///   GET    /sessions/{id}                                              -> handle, config, probabilities
///   GET    /sessions/{id}/design                                       -> d and utility surface
///   POST   /sessions/{id}/observations     body: {d, n}                -> updated probabilities and marginals
///   GET    /sessions/{id}/history                                      -> experiment records
///   DELETE /sessions/{id}
/// Errors carry {"error": {"code", "message", "path"}}.
class SessionService {
 public:
  explicit SessionService(ServiceOptions options);
  ~SessionService();

  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body);

 private:
  struct Entry;
  std::shared_ptr<Entry> find(const std::string& id);
  std::string session_path(const std::string& id) const;
  void persist(const Entry& e) const;
  std::string now() const;

  ServiceResponse create(const std::string& body);
  ServiceResponse list();
  ServiceResponse get(const std::string& id);
  ServiceResponse design(const std::string& id);
  ServiceResponse observe(const std::string& id, const std::string& body);
  ServiceResponse history(const std::string& id);
  ServiceResponse remove(const std::string& id);

  ServiceOptions options_;
  std::mutex mutex_;  // guards entries_ and next_id_ only; each session has its own lock
  std::map<std::string, std::shared_ptr<Entry>> entries_;
  long next_id_ = 1;
};

/// Serves a SessionService over HTTP on `host:port` until stop() is called from another thread.
class HttpServer {
 public:
  HttpServer(SessionService& service, int threads = 8);
  ~HttpServer();
  /// Binds (port 0 picks a free port) and returns the bound port, or -1 on failure.
  int bind(const std::string& host, int port);
  /// Blocks serving requests.
  bool listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace frdesign
