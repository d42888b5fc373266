#pragma once

// HTTP rating service used by the rater UI.
//
//   GET  /rate/session/{id}/next?rater_id=R  -> next unjudged item for R, or 204
//   POST /rate/session/{id}/judgment         {item_id, correct, rater_id}
//   GET  /rate/session/{id}/export           -> judgments JSONL
//
// A session is a directory <store>/<id>/ holding items.jsonl and an
// append-only judgments.jsonl.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "harness.hpp"
#include "rating.hpp"

namespace edit_eval {

inline bool valid_session_id(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  return id != "." && id != "..";
}

inline void create_rating_session(const std::string& store_dir, const std::string& session_id,
                                  const std::vector<RatingItem>& items) {
  if (!valid_session_id(session_id)) throw ConfigError("invalid session id '" + session_id + "'");
  if (items.empty()) throw ConfigError("rating session needs at least one item");
  std::set<std::string> ids;
  for (const auto& it : items)
    if (!ids.insert(it.item_id).second) throw ConfigError("duplicate item id " + it.item_id);
  const auto dir = std::filesystem::path(store_dir) / session_id;
  if (std::filesystem::exists(dir / "items.jsonl")) throw ConfigError("session " + session_id + " already exists");
  std::filesystem::create_directories(dir);
  write_file((dir / "items.jsonl").string(), write_rating_items(items));
  create_exclusive((dir / "judgments.jsonl").string());
}

class RatingSession {
 public:
  explicit RatingSession(std::filesystem::path dir) : dir_(std::move(dir)) {
    items_ = read_rating_items(read_file((dir_ / "items.jsonl").string()));
    for (std::size_t i = 0; i < items_.size(); ++i) index_[items_[i].item_id] = i;
    const auto jpath = dir_ / "judgments.jsonl";
    if (std::filesystem::exists(jpath))
      for (auto& j : read_judgments(read_file(jpath.string()))) record(std::move(j));
  }

  enum class Outcome { recorded, duplicate, conflict, unknown_item };

  // Next item this rater has not judged, in session order.
  std::optional<RatingItem> next_for(const std::string& rater_id, std::size_t* done) const {
    std::lock_guard lock(mutex_);
    const auto it = by_rater_.find(rater_id);
    *done = it == by_rater_.end() ? 0 : it->second.size();
    for (const auto& item : items_)
      if (it == by_rater_.end() || !it->second.count(item.item_id)) return item;
    return std::nullopt;
  }

  Outcome submit(HumanJudgment j, std::size_t* done) {
    std::lock_guard lock(mutex_);
    if (!index_.count(j.item_id)) return Outcome::unknown_item;
    const std::string rater = j.rater_id;
    auto& judged = by_rater_[rater];
    auto existing = judged.find(j.item_id);
    Outcome outcome;
    if (existing != judged.end()) {
      outcome = judgments_[existing->second].correct == j.correct ? Outcome::duplicate : Outcome::conflict;
    } else {
      if (j.timestamp.empty()) j.timestamp = utc_now();
      append_text((dir_ / "judgments.jsonl").string(), to_json(j).dump() + "\n");
      record(std::move(j));
      outcome = Outcome::recorded;
    }
    *done = by_rater_[rater].size();
    return outcome;
  }

  std::string export_jsonl() const {
    std::lock_guard lock(mutex_);
    std::string out;
    for (const auto& j : judgments_) out += to_json(j).dump() + "\n";
    return out;
  }

  std::size_t total() const { return items_.size(); }

  std::size_t judgment_count() const {
    std::lock_guard lock(mutex_);
    return judgments_.size();
  }

 private:
  void record(HumanJudgment j) {
    auto& judged = by_rater_[j.rater_id];
    if (judged.count(j.item_id)) return;
    judged[j.item_id] = judgments_.size();
    judgments_.push_back(std::move(j));
  }

  std::filesystem::path dir_;
  std::vector<RatingItem> items_;
  std::map<std::string, std::size_t> index_;
  std::vector<HumanJudgment> judgments_;
  std::map<std::string, std::map<std::string, std::size_t>> by_rater_;
  mutable std::mutex mutex_;
};

class RatingServer {
 public:
  explicit RatingServer(std::string store_dir) : store_dir_(std::move(store_dir)) { install_routes(); }

  RatingServer(const RatingServer&) = delete;
  RatingServer& operator=(const RatingServer&) = delete;
  ~RatingServer() { stop(); }

  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void serve_forever(const std::string& host, int port) {
    host_ = host;
    port_ = port;
    if (!server_.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string url() const { return "http://" + host_ + ":" + std::to_string(port_); }

  std::shared_ptr<RatingSession> session(const std::string& id) {
    if (!valid_session_id(id)) return nullptr;
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it != sessions_.end()) return it->second;
    const auto dir = std::filesystem::path(store_dir_) / id;
    if (!std::filesystem::exists(dir / "items.jsonl")) return nullptr;
    auto s = std::make_shared<RatingSession>(dir);
    sessions_[id] = s;
    return s;
  }

 private:
  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
    send_json(res, status, {{"code", code}, {"message", msg}});
  }

  void install_routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Headers", "Content-Type"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server_.Options(R"(/rate/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Get(R"(/rate/session/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = session(req.matches[1]);
      if (!s) return send_error(res, 404, "unknown_session", "no such session");
      const std::string rater = req.get_param_value("rater_id");
      if (rater.empty()) return send_error(res, 400, "bad_request", "rater_id query parameter is required");
      std::size_t done = 0;
      const auto item = s->next_for(rater, &done);
      if (!item) {
        res.status = 204;
        return;
      }
      send_json(res, 200,
                {{"item_id", item->item_id},
                 {"prompt", item->prompt},
                 {"generated_text", item->generated_text},
                 {"expected_answers", item->expected},
                 {"few_shots", few_shots_json()},
                 {"progress", {{"done", done}, {"total", s->total()}}}});
    });

    server_.Post(R"(/rate/session/([^/]+)/judgment)", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = session(req.matches[1]);
      if (!s) return send_error(res, 404, "unknown_session", "no such session");
      HumanJudgment j;
      try {
        const auto body = json::parse(req.body);
        if (!body.contains("correct") || !body["correct"].is_boolean())
          return send_error(res, 400, "bad_request", "correct must be a boolean");
        j = judgment_from_json(body);
      } catch (const std::exception& e) {
        return send_error(res, 400, "bad_request", e.what());
      }
      std::size_t done = 0;
      const auto outcome = s->submit(j, &done);
      const json progress{{"done", done}, {"total", s->total()}};
      switch (outcome) {
        case RatingSession::Outcome::recorded:
          return send_json(res, 200, {{"status", "recorded"}, {"progress", progress}});
        case RatingSession::Outcome::duplicate:
          return send_json(res, 200, {{"status", "duplicate"}, {"progress", progress}});
        case RatingSession::Outcome::conflict:
          return send_error(res, 409, "conflict", "a different verdict is already stored for this item and rater");
        case RatingSession::Outcome::unknown_item:
          return send_error(res, 404, "unknown_item", "no item " + j.item_id + " in this session");
      }
    });

    server_.Get(R"(/rate/session/([^/]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = session(req.matches[1]);
      if (!s) return send_error(res, 404, "unknown_session", "no such session");
      res.status = 200;
      res.set_content(s->export_jsonl(), "application/x-ndjson");
    });
  }

  std::string store_dir_;
  httplib::Server server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
  std::map<std::string, std::shared_ptr<RatingSession>> sessions_;
  std::mutex mutex_;
};

}  // namespace edit_eval
