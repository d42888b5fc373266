#pragma once

// HTTP backend for the model-access contract, plus a small server exposing
// any LanguageModel over the same wire protocol.
//
//   POST /v1/tokenize  {model_variant?, text}                        -> {token_ids[], pieces[], text}
//   POST /v1/score     {model_variant?, prompt, continuation}        -> {tokens[{id, logprob, is_argmax}]}
//   POST /v1/generate  {model_variant?, prompt, max_tokens, greedy}  -> {token_ids[], text, pieces[]}
//   POST /v1/embed     {model_variant?, text}                        -> {vector[]}
//
// Errors: HTTP status plus {code, message}. `pieces` on /v1/generate is
// optional; when present each entry is the text the token appends, so the
// running concatenation gives the per-length prefixes.

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "lm.hpp"

namespace edit_eval {

struct RemoteOptions {
  std::string base_url;
  std::string model_variant;
  std::size_t context_window = 2048;
  bool embedder = false;
  std::ptrdiff_t max_in_flight = 8;
  int timeout_seconds = 120;
};

class RemoteError : public Error {
 public:
  RemoteError(int status, std::string code, const std::string& message)
      : Error("HTTP " + std::to_string(status) + " " + code + ": " + message),
        status_(status),
        code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

class RemoteLanguageModel final : public LanguageModel {
 public:
  explicit RemoteLanguageModel(RemoteOptions options)
      : RemoteLanguageModel(std::move(options), nullptr) {}

  TokenSequence tokenize(std::string_view text) const override {
    json req{{"text", text}};
    const json res = post("/v1/tokenize", std::move(req));
    TokenSequence seq;
    seq.token_ids = res.at("token_ids").get<std::vector<TokenId>>();
    seq.pieces = res.at("pieces").get<std::vector<std::string>>();
    if (seq.pieces.size() != seq.token_ids.size()) throw Error("tokenize: pieces/ids length mismatch");
    if (res.contains("text")) {
      seq.text = res["text"].get<std::string>();
    } else {
      for (const auto& p : seq.pieces) seq.text += p;
    }
    return seq;
  }

  ScoreResult score(std::string_view prompt, std::string_view continuation) const override {
    if (continuation.empty()) throw Error("score: empty continuation");
    const json res = post("/v1/score", {{"prompt", prompt}, {"continuation", continuation}});
    ScoreResult out;
    for (const auto& t : res.at("tokens")) {
      ScoredToken st{t.at("id").get<TokenId>(), t.at("logprob").get<double>(), t.at("is_argmax").get<bool>()};
      if (!std::isfinite(st.logprob) || st.logprob > 0.0) throw Error("score: invalid logprob from backend");
      out.tokens.push_back(st);
    }
    if (out.tokens.empty()) throw Error("score: backend returned no continuation tokens");
    return out;
  }

  GenerationResult generate(std::string_view prompt, std::size_t length) const override {
    if (length == 0) throw Error("generate: length must be >= 1");
    const json res =
        post("/v1/generate", {{"prompt", prompt}, {"max_tokens", length}, {"greedy", true}});
    GenerationResult out;
    out.generated.token_ids = res.at("token_ids").get<std::vector<TokenId>>();
    out.generated.text = res.at("text").get<std::string>();
    if (out.generated.token_ids.size() != length)
      throw Error("generate: backend returned " + std::to_string(out.generated.token_ids.size()) +
                  " tokens, expected " + std::to_string(length));
    if (res.contains("pieces")) {
      out.generated.pieces = res["pieces"].get<std::vector<std::string>>();
    } else {
      auto seq = tokenize(out.generated.text);
      if (seq.token_ids != out.generated.token_ids)
        throw Error("generate: cannot recover token pieces for per-length prefixes");
      out.generated.pieces = std::move(seq.pieces);
    }
    if (out.generated.pieces.size() != length) throw Error("generate: pieces/ids length mismatch");
    std::string acc;
    for (const auto& p : out.generated.pieces) {
      acc += p;
      out.prefixes.push_back(acc);
    }
    if (res.contains("prompt_token_count")) out.prompt_token_count = res["prompt_token_count"].get<std::size_t>();
    return out;
  }

  std::vector<double> embed(std::string_view text) const override {
    if (!options_.embedder) throw UnsupportedError("remote handle has no embedder capability");
    const json res = post("/v1/embed", {{"text", text}});
    auto v = res.at("vector").get<std::vector<double>>();
    normalize_in_place(v);
    return v;
  }

  std::size_t context_window() const override { return options_.context_window; }
  bool has_embedder() const override { return options_.embedder; }
  BackendKind backend() const override { return BackendKind::remote; }
  std::string model_variant() const override { return options_.model_variant; }

  LmHandle with_variant(const std::string& variant) const override {
    if (variant.empty()) throw Error("model variant must not be empty");
    RemoteOptions opts = options_;
    opts.model_variant = variant;
    return std::shared_ptr<const LanguageModel>(new RemoteLanguageModel(std::move(opts), slots_));
  }

  const RemoteOptions& options() const { return options_; }

 private:
  RemoteLanguageModel(RemoteOptions options, std::shared_ptr<std::counting_semaphore<>> slots)
      : options_(std::move(options)), slots_(std::move(slots)) {
    if (options_.base_url.empty()) throw ConfigError("remote model needs a base URL");
    if (options_.context_window < 1) throw ConfigError("context_window must be >= 1");
    if (!slots_)
      slots_ = std::make_shared<std::counting_semaphore<>>(std::max<std::ptrdiff_t>(1, options_.max_in_flight));
  }

  json post(const std::string& path, json body) const {
    if (!options_.model_variant.empty()) body["model_variant"] = options_.model_variant;
    slots_->acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{*slots_};

    httplib::Client client(options_.base_url);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(std::chrono::seconds(options_.timeout_seconds));
    client.set_write_timeout(std::chrono::seconds(options_.timeout_seconds));
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res)
      throw TransportError(path + ": " + httplib::to_string(res.error()) + " (" + options_.base_url + ")",
                           /*retryable=*/true);
    if (res->status != 200) {
      std::string code = "http_error", message = res->body;
      try {
        const auto err = json::parse(res->body);
        code = err.value("code", code);
        message = err.value("message", message);
      } catch (const json::exception&) {
      }
      if (res->status >= 500) throw TransportError(path + ": " + code + ": " + message, true, res->status);
      if (code == "context_overflow") throw ContextOverflowError(message);
      if (code == "unsupported") throw UnsupportedError(message);
      throw RemoteError(res->status, code, message);
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw TransportError(path + ": malformed response body", true, res->status);
    }
  }

  RemoteOptions options_;
  std::shared_ptr<std::counting_semaphore<>> slots_;
};

inline LmHandle connect_remote_lm(RemoteOptions options) {
  return std::make_shared<RemoteLanguageModel>(std::move(options));
}

// Serves LanguageModel handles over the wire protocol. Requests without a
// model_variant go to the base model; named variants must be registered.
// Every request body is kept for inspection.
class LmServer {
 public:
  explicit LmServer(LmHandle base, std::map<std::string, LmHandle> variants = {})
      : base_(std::move(base)), variants_(std::move(variants)) {
    install_routes();
  }

  LmServer(const LmServer&) = delete;
  LmServer& operator=(const LmServer&) = delete;

  ~LmServer() { stop(); }

  // Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Blocks serving requests on the calling thread.
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
  int port() const { return port_; }

  std::vector<std::pair<std::string, json>> requests() const {
    std::lock_guard lock(mutex_);
    return log_;
  }

 private:
  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
    res.status = status;
    res.set_content(json{{"code", code}, {"message", msg}}.dump(), "application/json");
  }

  const LanguageModel& model_for(const json& body) const {
    if (!body.contains("model_variant") || body["model_variant"].is_null()) return *base_;
    const auto variant = body["model_variant"].get<std::string>();
    auto it = variants_.find(variant);
    if (it == variants_.end()) throw RemoteError(404, "unknown_variant", "unknown model_variant '" + variant + "'");
    return *it->second;
  }

  template <typename Handler>
  void route(const std::string& path, Handler handler) {
    server_.Post(path, [this, path, handler](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error&) {
        return send_error(res, 400, "bad_request", "body is not JSON");
      }
      {
        std::lock_guard lock(mutex_);
        log_.emplace_back(path, body);
      }
      try {
        res.set_content(handler(model_for(body), body).dump(), "application/json");
      } catch (const RemoteError& e) {
        send_error(res, e.status(), e.code(), e.what());
      } catch (const ContextOverflowError& e) {
        send_error(res, 413, "context_overflow", e.what());
      } catch (const UnsupportedError& e) {
        send_error(res, 501, "unsupported", e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "bad_request", e.what());
      } catch (const std::exception& e) {
        send_error(res, 422, "invalid_request", e.what());
      }
    });
  }

  void install_routes() {
    route("/v1/tokenize", [](const LanguageModel& m, const json& body) {
      const auto seq = m.tokenize(body.at("text").get<std::string>());
      return json{{"token_ids", seq.token_ids}, {"pieces", seq.pieces}, {"text", seq.text}};
    });
    route("/v1/score", [](const LanguageModel& m, const json& body) {
      const auto r = m.score(body.at("prompt").get<std::string>(), body.at("continuation").get<std::string>());
      json tokens = json::array();
      for (const auto& t : r.tokens) tokens.push_back({{"id", t.token_id}, {"logprob", t.logprob}, {"is_argmax", t.is_argmax}});
      return json{{"tokens", std::move(tokens)}};
    });
    route("/v1/generate", [](const LanguageModel& m, const json& body) {
      if (!body.value("greedy", false)) throw UnsupportedError("only greedy decoding is supported");
      const auto r = m.generate(body.at("prompt").get<std::string>(), body.at("max_tokens").get<std::size_t>());
      std::vector<std::string> increments;
      std::size_t prev = 0;
      for (const auto& p : r.prefixes) {
        increments.push_back(p.substr(prev));
        prev = p.size();
      }
      return json{{"token_ids", r.generated.token_ids},
                  {"text", r.generated.text},
                  {"pieces", increments},
                  {"prompt_token_count", r.prompt_token_count}};
    });
    route("/v1/embed", [](const LanguageModel& m, const json& body) {
      return json{{"vector", m.embed(body.at("text").get<std::string>())}};
    });
  }

  LmHandle base_;
  std::map<std::string, LmHandle> variants_;
  httplib::Server server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
  mutable std::mutex mutex_;
  std::vector<std::pair<std::string, json>> log_;
};

}  // namespace edit_eval
