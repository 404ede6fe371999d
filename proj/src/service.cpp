#include "veridispatch/service.hpp"

#include <fmt/format.h>

#include <cstdlib>
#include <future>
#include <map>
#include <random>
#include <thread>

#include "httplib.h"
#include "veridispatch/embedding.hpp"

namespace veridispatch {

void ServiceConfig::validate() const {
  if (request_timeout.count() <= 0) throw Error("request timeout must be positive");
  if (max_retries < 0) throw Error("max retries must be non-negative");
  if (retry_backoff.count() < 0) throw Error("retry backoff must be non-negative");
  if (default_k < 1) throw Error("default k must be at least 1");
  if (port < 0 || port > 65535) throw Error("port out of range");
}

HttpOptions ServiceConfig::http_options(std::string auth_env) const {
  return {request_timeout, max_retries, retry_backoff, std::move(auth_env)};
}

ServiceConfig service_config_from_json(const json& j, const std::filesystem::path& base) {
  ServiceConfig c;
  auto resolve = [&base](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  if (j.contains("listen")) {
    auto listen = require<std::string>(j, "listen");
    auto colon = listen.rfind(':');
    if (colon == std::string::npos) throw Error("listen must be host:port");
    c.host = listen.substr(0, colon);
    c.port = std::stoi(listen.substr(colon + 1));
  }
  c.registry_path = resolve(require<std::string>(j, "registry"));
  c.default_k = j.value("default_k", c.default_k);
  c.default_include_commercial = j.value("default_include_commercial", c.default_include_commercial);
  c.combine_mode = combine_mode_from_string(j.value("combine_mode", "single"));
  c.embedding_endpoint = j.value("embedding_endpoint", "");
  c.embedding_auth_env = j.value("embedding_auth_env", "");
  c.matrices_path = resolve(j.value("matrices", ""));
  c.request_timeout = std::chrono::milliseconds(j.value("request_timeout_ms", 30000));
  c.max_retries = j.value("max_retries", c.max_retries);
  c.retry_backoff = std::chrono::milliseconds(j.value("retry_backoff_ms", 100));
  c.validate();
  return c;
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  return service_config_from_json(read_document(path), path.parent_path());
}

BackendClient::BackendClient(std::string endpoint, std::string provider_model, HttpOptions options)
    : endpoint_(std::move(endpoint)), provider_model_(std::move(provider_model)), options_(std::move(options)) {
  Endpoint::parse(endpoint_);
  if (!options_.auth_env.empty()) {
    const char* token = std::getenv(options_.auth_env.c_str());
    token_resolved_ = token && *token;
  }
}

std::string BackendClient::complete(const std::string& prompt) { return chat_complete(*this, prompt); }

std::string chat_complete(BackendClient& client, const std::string& prompt) {
  if (!client.token_resolved_) {
    throw Error(fmt::format("backend '{}' is degraded: ${} is not set", client.provider_model_,
                            client.options_.auth_env));
  }
  json body{{"model", client.provider_model_},
            {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  json res = post_json_expect_ok(client.endpoint_, "/v1/chat/completions", body, client.options_,
                                 &client.attempts_);
  if (!res.is_object() || !res.contains("choices") || !res["choices"].is_array() || res["choices"].empty()) {
    throw MalformedResponse("chat completion response has no choices");
  }
  const auto& choice = res["choices"][0];
  if (!choice.contains("message") || !choice["message"].contains("content") ||
      !choice["message"]["content"].is_string()) {
    throw MalformedResponse("chat completion choice has no message content");
  }
  return choice["message"]["content"].get<std::string>();
}

struct Service::Impl {
  std::map<std::string, std::unique_ptr<EmbeddingClient>> embedders;  // by source key
  std::map<std::pair<std::string, std::string>, TokenMatrix> matrices;  // (task_id, source model)
  std::map<std::string, std::unique_ptr<BackendClient>> backends;
  std::map<std::string, std::unique_ptr<std::atomic<std::uint64_t>>> selections;
  std::atomic<std::uint64_t> requests{0};
  std::atomic<std::uint64_t> dispatches{0};
  std::atomic<std::uint64_t> commercial_selections{0};
  std::atomic<std::uint64_t> total_selections{0};
  httplib::Server server;
  std::thread thread;
};

Service::Service(ServiceConfig config) : Service(config, load_registry(config.registry_path)) {}

Service::Service(ServiceConfig config, Registry registry)
    : config_(std::move(config)), registry_(std::move(registry)), impl_(std::make_unique<Impl>()) {
  config_.validate();
  for (const auto& src : registry_.sources()) {
    if (src.kind != PoolingKind::external) continue;
    EmbeddingSource s = src;
    if (!config_.embedding_endpoint.empty()) s.endpoint = config_.embedding_endpoint;
    impl_->embedders.emplace(src.key(), std::make_unique<EmbeddingClient>(
                                            s, config_.http_options(config_.embedding_auth_env)));
  }
  if (!config_.matrices_path.empty()) {
    for (auto& m : import_token_matrices(config_.matrices_path)) {
      auto key = std::make_pair(m.variant_id, m.source_model_id);
      impl_->matrices.emplace(std::move(key), std::move(m));
    }
  }
  for (const auto& m : registry_.models()) {
    impl_->selections.emplace(m.model_id, std::make_unique<std::atomic<std::uint64_t>>(0));
    if (!m.backend_endpoint.empty()) {
      impl_->backends.emplace(m.model_id, std::make_unique<BackendClient>(
                                              m.backend_endpoint, m.provider_model,
                                              config_.http_options(m.auth_env)));
    }
  }

  auto as_reply = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  impl_->server.Get("/healthz", [this, as_reply](const httplib::Request&, httplib::Response& res) {
    as_reply(res, health());
  });
  impl_->server.Get("/metrics", [this, as_reply](const httplib::Request&, httplib::Response& res) {
    as_reply(res, metrics());
  });
  impl_->server.Post("/v1/dispatch", [this, as_reply](const httplib::Request& req, httplib::Response& res) {
    json request;
    try {
      request = json::parse(req.body);
    } catch (const json::parse_error&) {
      ++impl_->requests;
      as_reply(res, {400, {{"error", "request body is not valid JSON"}}});
      return;
    }
    as_reply(res, handle_dispatch(request));
  });
}

Service::~Service() { stop(); }

EmbeddingVector Service::embed(const std::string& task_text, const std::string& task_id,
                               const EmbeddingSource& source, const std::string& model_id) {
  if (source.kind == PoolingKind::external) {
    auto it = impl_->embedders.find(source.key());
    if (it == impl_->embedders.end()) throw Error(fmt::format("no client for source '{}'", source.key()));
    return it->second->fetch({task_text}).front();
  }
  auto it = impl_->matrices.find({task_id, model_id});
  if (task_id.empty() || it == impl_->matrices.end()) {
    throw MatrixUnavailable(fmt::format("no token matrix for task '{}' and model '{}' (source '{}')",
                                        task_id, model_id, source.key()));
  }
  return pool(it->second, source);
}

HttpReply Service::handle_dispatch(const json& request) {
  ++impl_->requests;
  if (!request.is_object()) return {400, {{"error", "request must be a JSON object"}}};
  if (!request.contains("task") || !request["task"].is_string() || request["task"].get<std::string>().empty()) {
    return {400, {{"error", "'task' must be a non-empty string"}}};
  }
  DispatchPolicy policy{config_.default_k, config_.default_include_commercial, config_.combine_mode};
  bool generate = false;
  std::string task_id;
  if (request.contains("k")) {
    if (!request["k"].is_number_integer() || request["k"].get<int>() < 1) {
      return {400, {{"error", "'k' must be a positive integer"}}};
    }
    policy.k = request["k"].get<int>();
  }
  if (request.contains("include_commercial")) {
    if (!request["include_commercial"].is_boolean()) {
      return {400, {{"error", "'include_commercial' must be a boolean"}}};
    }
    policy.include_commercial = request["include_commercial"].get<bool>();
  }
  if (request.contains("generate")) {
    if (!request["generate"].is_boolean()) return {400, {{"error", "'generate' must be a boolean"}}};
    generate = request["generate"].get<bool>();
  }
  if (request.contains("task_id")) {
    if (!request["task_id"].is_string()) return {400, {{"error", "'task_id' must be a string"}}};
    task_id = request["task_id"].get<std::string>();
  }
  const std::string task = request["task"].get<std::string>();

  DispatchDecision decision;
  try {
    decision = dispatch(task, registry_, policy,
                        [&](const std::string& text, const EmbeddingSource& src, const std::string& model) {
                          return embed(text, task_id, src, model);
                        });
  } catch (const EmptyPoolError& e) {
    return {503, {{"error", e.what()}}};
  } catch (const MatrixUnavailable& e) {
    return {422, {{"error", e.what()}, {"kind", "matrix_unavailable"}}};
  } catch (const TransportError& e) {
    return {502, {{"error", e.what()}}};
  } catch (const MalformedResponse& e) {
    return {502, {{"error", e.what()}}};
  } catch (const Error& e) {
    return {500, {{"error", e.what()}}};
  }
  decision.task_id = task_id;

  ++impl_->dispatches;
  for (const auto& id : decision.selected) {
    ++*impl_->selections.at(id);
    ++impl_->total_selections;
    if (registry_.find(id)->kind == ModelKind::commercial) ++impl_->commercial_selections;
  }

  HttpReply reply{200, {{"decision", to_json(decision)}}};
  if (!generate) return reply;

  struct Generation {
    std::string model_id;
    std::future<std::pair<std::string, std::string>> result;  // (text, error)
    std::chrono::steady_clock::time_point started;
  };
  std::vector<Generation> pending;
  for (const auto& m : registry_.models()) {
    if (std::find(decision.selected.begin(), decision.selected.end(), m.model_id) == decision.selected.end()) {
      continue;
    }
    auto* backend = impl_->backends.count(m.model_id) ? impl_->backends.at(m.model_id).get() : nullptr;
    auto started = std::chrono::steady_clock::now();
    pending.push_back({m.model_id,
                       std::async(std::launch::async,
                                  [backend, task]() -> std::pair<std::string, std::string> {
                                    if (!backend) return {"", "model has no backend endpoint"};
                                    try {
                                      return {chat_complete(*backend, task), ""};
                                    } catch (const std::exception& e) {
                                      return {"", e.what()};
                                    }
                                  }),
                       started});
  }
  json generations = json::array();
  for (auto& g : pending) {
    auto [text, error] = g.result.get();
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - g.started).count();
    json entry{{"model_id", g.model_id}, {"latency_ms", latency}};
    if (error.empty()) {
      entry["text"] = text;
    } else {
      entry["error"] = error;
    }
    generations.push_back(std::move(entry));
  }
  reply.body["generations"] = std::move(generations);
  return reply;
}

HttpReply Service::health() const {
  json models = json::array();
  std::size_t enabled = 0;
  for (const auto& m : registry_.models()) {
    enabled += m.enabled ? 1 : 0;
    json entry{{"model_id", m.model_id}, {"kind", to_string(m.kind)}, {"enabled", m.enabled},
               {"predictors", m.predictors.size()}};
    if (auto it = impl_->backends.find(m.model_id); it != impl_->backends.end()) {
      entry["backend"] = it->second->token_resolved() ? "ok" : "degraded";
    } else {
      entry["backend"] = "none";
    }
    models.push_back(std::move(entry));
  }
  return {200, {{"status", "ok"}, {"models", models}, {"enabled_models", enabled}}};
}

HttpReply Service::metrics() const {
  json per_model = json::object();
  for (const auto& [id, count] : impl_->selections) per_model[id] = count->load();
  std::uint64_t hits = 0, lookups = 0;
  for (const auto& [_, client] : impl_->embedders) {
    hits += client->cache_hits();
    lookups += client->cache_lookups();
  }
  const auto total = impl_->total_selections.load();
  return {200,
          {{"requests", impl_->requests.load()},
           {"dispatches", impl_->dispatches.load()},
           {"dispatches_per_model", per_model},
           {"commercial_usage_fraction",
            total ? static_cast<double>(impl_->commercial_selections.load()) / static_cast<double>(total) : 0.0},
           {"cache_hit_rate", lookups ? static_cast<double>(hits) / static_cast<double>(lookups) : 0.0}}};
}

int Service::start() {
  int port = config_.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(config_.host);
  } else if (!impl_->server.bind_to_port(config_.host, port)) {
    port = -1;
  }
  if (port < 0) throw Error(fmt::format("cannot bind {}:{}", config_.host, config_.port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::run() {
  if (!impl_->server.listen(config_.host, config_.port)) {
    throw Error(fmt::format("cannot bind {}:{}", config_.host, config_.port));
  }
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

struct MockBackend::Impl {
  json script;
  mutable std::mutex mutex;
  std::vector<Call> calls;
  std::map<std::size_t, int> rule_hits;
  httplib::Server server;
  std::thread thread;
  std::string host = "127.0.0.1";
  int port = 0;
};

namespace {

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

std::vector<double> hashed_vector(const std::string& text, int dim) {
  std::mt19937_64 rng(std::stoull(fnv1a_hex(text), nullptr, 16));
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = n(rng);
  return v;
}

}  // namespace

MockBackend::MockBackend(json script) : impl_(std::make_unique<Impl>()) {
  impl_->script = std::move(script);
  auto* impl = impl_.get();

  impl->server.Post("/v1/chat/completions", [impl](const httplib::Request& req, httplib::Response& res) {
    json body = json::parse(req.body, nullptr, false);
    std::string model, prompt;
    if (body.is_object()) {
      model = body.value("model", "");
      if (body.contains("messages") && body["messages"].is_array()) {
        for (const auto& m : body["messages"]) {
          if (m.value("role", "") == "user") prompt = m.value("content", "");
        }
      }
    }
    json rule;
    std::size_t rule_index = 0;
    int hits = 0;
    {
      std::lock_guard lock(impl->mutex);
      impl->calls.push_back({"/v1/chat/completions", model, prompt});
      const auto& rules = impl->script.value("chat", json::array());
      for (std::size_t i = 0; i < rules.size(); ++i) {
        const auto& r = rules[i];
        if (r.contains("model") && r["model"].get<std::string>() != model) continue;
        if (r.contains("contains") && prompt.find(r["contains"].get<std::string>()) == std::string::npos) continue;
        rule = r;
        rule_index = i;
        hits = ++impl->rule_hits[i];
        break;
      }
    }
    (void)rule_index;
    if (rule.is_null()) {
      res.status = 404;
      res.set_content(json{{"error", "no scripted rule matches"}}.dump(), "application/json");
      return;
    }
    if (int delay = rule.value("delay_ms", 0); delay > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
    if (hits <= rule.value("fail_times", 0)) {
      res.status = 500;
      res.set_content(json{{"error", "scripted failure"}}.dump(), "application/json");
      return;
    }
    if (int status = rule.value("status", 200); status != 200) {
      res.status = status;
      res.set_content(json{{"error", "scripted status"}}.dump(), "application/json");
      return;
    }
    if (rule.value("malformed", false)) {
      res.set_content(json{{"id", "mock"}, {"object", "chat.completion"}}.dump(), "application/json");
      return;
    }
    std::string text = rule.contains("reply_template")
                           ? replace_all(replace_all(rule["reply_template"].get<std::string>(), "{model}", model),
                                         "{prompt}", prompt)
                           : rule.value("reply", "");
    json out{{"id", "mock"},
             {"object", "chat.completion"},
             {"model", model},
             {"choices", json::array({{{"index", 0},
                                       {"message", {{"role", "assistant"}, {"content", text}}},
                                       {"finish_reason", "stop"}}})}};
    res.set_content(out.dump(), "application/json");
  });

  impl->server.Post("/v1/embeddings", [impl](const httplib::Request& req, httplib::Response& res) {
    json body = json::parse(req.body, nullptr, false);
    if (!body.is_object() || !body.contains("input")) {
      res.status = 400;
      res.set_content(json{{"error", "missing input"}}.dump(), "application/json");
      return;
    }
    std::vector<std::string> inputs;
    if (body["input"].is_string()) {
      inputs.push_back(body["input"].get<std::string>());
    } else {
      inputs = body["input"].get<std::vector<std::string>>();
    }
    const std::string model = body.value("model", "");
    json cfg;
    {
      std::lock_guard lock(impl->mutex);
      std::string joined;
      for (const auto& s : inputs) joined += (joined.empty() ? "" : "\n") + s;
      impl->calls.push_back({"/v1/embeddings", model, joined});
      cfg = impl->script.value("embeddings", json::object());
    }
    if (int status = cfg.value("status", 200); status != 200) {
      res.status = status;
      res.set_content(json{{"error", "scripted status"}}.dump(), "application/json");
      return;
    }
    const int dim = cfg.value("dim", 4);
    const std::string mode = cfg.value("mode", "hash");
    std::vector<std::vector<double>> vectors;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (mode == "basis") {
        std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
        v[i % static_cast<std::size_t>(dim)] = 1.0;
        vectors.push_back(std::move(v));
      } else if (mode == "table" && cfg.contains("table") && cfg["table"].contains(inputs[i])) {
        vectors.push_back(cfg["table"][inputs[i]].get<std::vector<double>>());
      } else {
        vectors.push_back(hashed_vector(inputs[i], dim));
      }
    }
    int delta = cfg.value("count_delta", 0);
    while (delta < 0 && !vectors.empty()) {
      vectors.pop_back();
      ++delta;
    }
    for (; delta > 0; --delta) vectors.push_back(std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    json data = json::array();
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", vectors[i]}});
    }
    res.set_content(json{{"object", "list"}, {"model", model}, {"data", data}}.dump(), "application/json");
  });

  impl->server.Get("/mock/log", [impl](const httplib::Request&, httplib::Response& res) {
    json log = json::array();
    std::lock_guard lock(impl->mutex);
    for (const auto& c : impl->calls) log.push_back({{"path", c.path}, {"model", c.model}, {"prompt", c.prompt}});
    res.set_content(log.dump(), "application/json");
  });
}

MockBackend MockBackend::from_file(const std::filesystem::path& path) {
  return MockBackend(read_document(path));
}

MockBackend::~MockBackend() { stop(); }

int MockBackend::start(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port == 0 ? impl_->server.bind_to_any_port(host)
                          : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (impl_->port < 0) throw Error(fmt::format("cannot bind {}:{}", host, port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void MockBackend::run(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port;
  if (!impl_->server.listen(host, port)) throw Error(fmt::format("cannot bind {}:{}", host, port));
}

void MockBackend::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockBackend::url() const { return fmt::format("http://{}:{}", impl_->host, impl_->port); }

std::vector<MockBackend::Call> MockBackend::calls() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->calls;
}

std::size_t MockBackend::call_count(std::string_view path, std::string_view model) const {
  std::lock_guard lock(impl_->mutex);
  std::size_t n = 0;
  for (const auto& c : impl_->calls) {
    if (c.path == path && (model.empty() || c.model == model)) ++n;
  }
  return n;
}

}  // namespace veridispatch
