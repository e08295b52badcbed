#include <shared_mutex>
#include <thread>

#include "dipper/errors.hpp"
#include "dipper/harness.hpp"

// after Eigen: resolv.h defines a macro that collides with Eigen parameter names
#include "httplib.h"

namespace dipper::harness {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"ok", false}, {"error", message}});
}

// Parses {"y": [a, b]}; nullopt for anything else or an invalid label.
std::optional<pref::Label> parse_label(const std::string& body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.size() != 1 || !j.contains("y")) return std::nullopt;
  const auto& y = j.at("y");
  if (!y.is_array() || y.size() != 2 || !y[0].is_number() || !y[1].is_number()) return std::nullopt;
  const pref::Label label{y[0].get<double>(), y[1].get<double>()};
  if (!pref::valid_label(label)) return std::nullopt;
  return label;
}

}  // namespace

json pair_view(const pref::PreferencePair& p, const pref::PreferenceStore& store) {
  const auto layout = store.layout(p.tau1.layout_hash);
  return {{"pair_id", p.pair_id},
          {"layout", layout ? env::layout_to_json(*layout) : json(nullptr)},
          {"rollout1", pref::to_json(p.tau1)},
          {"rollout2", pref::to_json(p.tau2)},
          {"end_goal", {p.tau1.end_goal.x, p.tau1.end_goal.y}}};
}

struct LabelServer::Impl {
  explicit Impl(pref::PreferenceStore* s) : store(s) {}
  mutable std::shared_mutex mutex;
  pref::PreferenceStore* store;
  httplib::Server server;
  std::thread thread;

  void next(httplib::Response& res) const {
    std::shared_lock lock(mutex);
    const auto p = store ? store->next_pending() : std::nullopt;
    if (!p) {
      send_json(res, 200, {{"empty", true}});
      return;
    }
    send_json(res, 200, pair_view(*p, *store));
  }

  void label(const httplib::Request& req, httplib::Response& res) {
    std::int64_t id = 0;
    try {
      id = std::stoll(req.matches[1].str());
    } catch (const std::exception&) {
      send_error(res, 404, "unknown pair");
      return;
    }
    const auto y = parse_label(req.body);
    if (!y) {
      send_error(res, 422, "body must be {\"y\": [1,0] | [0,1] | [0.5,0.5]}");
      return;
    }
    std::shared_lock lock(mutex);
    const auto result = store ? store->label(id, *y, pref::LabelSource::Human) : pref::LabelResult::NotFound;
    switch (result) {
      case pref::LabelResult::Ok:
        send_json(res, 200, {{"ok", true}});
        return;
      case pref::LabelResult::NotFound:
        send_error(res, 404, "unknown pair");
        return;
      case pref::LabelResult::AlreadyLabeled:
        send_error(res, 409, "pair already labeled");
        return;
      case pref::LabelResult::Invalid:
        send_error(res, 422, "invalid label");
        return;
    }
  }

  void status(httplib::Response& res) const {
    std::shared_lock lock(mutex);
    send_json(res, 200,
              {{"pending", store ? store->pending_count() : 0},
               {"labeled", store ? store->labeled_count() : 0},
               {"training_step", store ? store->training_step() : 0}});
  }
};

LabelServer::LabelServer(pref::PreferenceStore* store) : impl_(std::make_unique<Impl>(store)) {
  Impl* impl = impl_.get();
  auto& svr = impl_->server;
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  svr.Get("/api/pairs/next", [impl](const httplib::Request&, httplib::Response& res) { impl->next(res); });
  svr.Post(R"(/api/pairs/(-?\d+)/label)",
           [impl](const httplib::Request& req, httplib::Response& res) { impl->label(req, res); });
  svr.Get("/api/status", [impl](const httplib::Request&, httplib::Response& res) { impl->status(res); });
}

void LabelServer::set_store(pref::PreferenceStore* store) {
  std::unique_lock lock(impl_->mutex);
  impl_->store = store;
}

LabelServer::~LabelServer() { stop(); }

int LabelServer::start(const std::string& host, int port) {
  if (impl_->thread.joinable()) throw ConfigError("label service already running");
  auto& svr = impl_->server;
  // no SO_REUSEPORT
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  if (port == 0) {
    port_ = svr.bind_to_any_port(host);
    if (port_ <= 0) throw ConfigError("cannot bind label service on " + host);
  } else {
    if (!svr.bind_to_port(host, port)) throw ConfigError("cannot bind label service on " + host + ":" + std::to_string(port));
    port_ = port;
  }
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  return port_;
}

void LabelServer::stop() {
  if (!impl_ || !impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

}  // namespace dipper::harness
