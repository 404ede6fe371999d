#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "veridispatch/corpus.hpp"
#include "veridispatch/dispatch.hpp"
#include "veridispatch/http.hpp"

namespace veridispatch {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path registry_path;
  int default_k = 1;
  bool default_include_commercial = true;
  CombineMode combine_mode = CombineMode::single;
  /// Replaces the endpoint recorded in external embedding sources when set.
  std::string embedding_endpoint;
  std::string embedding_auth_env;
  /// Optional token-matrix file; matrices are looked up by the request's task_id.
  std::filesystem::path matrices_path;
  std::chrono::milliseconds request_timeout{30000};
  int max_retries = 2;
  std::chrono::milliseconds retry_backoff{100};

  void validate() const;
  HttpOptions http_options(std::string auth_env = {}) const;
};

/// Paths inside the document are resolved relative to the file.
ServiceConfig load_service_config(const std::filesystem::path& path);
ServiceConfig service_config_from_json(const json& j, const std::filesystem::path& base = {});

/// An OpenAI-compatible chat-completions backend.
class BackendClient : public TextGenerator {
 public:
  BackendClient(std::string endpoint, std::string provider_model, HttpOptions options = {});

  std::string complete(const std::string& prompt) override;

  const std::string& endpoint() const { return endpoint_; }
  const std::string& provider_model() const { return provider_model_; }
  /// False when the configured token environment variable is unset.
  bool token_resolved() const { return token_resolved_; }
  std::uint64_t attempts() const { return attempts_.load(); }

 private:
  friend std::string chat_complete(BackendClient& client, const std::string& prompt);

  std::string endpoint_;
  std::string provider_model_;
  HttpOptions options_;
  bool token_resolved_ = true;
  std::atomic<std::uint64_t> attempts_{0};
};

/// Sends `prompt` as a single user message and returns
/// choices[0].message.content.
std::string chat_complete(BackendClient& client, const std::string& prompt);

/// A selected model failed to embed the task for lack of a precomputed matrix.
class MatrixUnavailable : public Error {
 public:
  using Error::Error;
};

struct HttpReply {
  int status = 200;
  json body;
};

/// Dispatch pipeline behind the HTTP routes. Thread-safe.
class Service {
 public:
  Service(ServiceConfig config, Registry registry);
  explicit Service(ServiceConfig config);  // loads config.registry_path
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  HttpReply handle_dispatch(const json& request);
  HttpReply health() const;
  HttpReply metrics() const;

  /// Binds and serves in a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

  const Registry& registry() const { return registry_; }

 private:
  struct Impl;
  EmbeddingVector embed(const std::string& task_text, const std::string& task_id,
                        const EmbeddingSource& source, const std::string& model_id);

  ServiceConfig config_;
  Registry registry_;
  std::unique_ptr<Impl> impl_;
};

/// Scripted stand-in for chat-completion and embedding backends.
///
/// Script document:
///   {"chat": [rule...], "embeddings": {...}}
/// A chat rule matches on optional "model" and "contains" (prompt substring)
/// and answers with "reply" or "reply_template" ({model} and {prompt} are
/// substituted). Optional fault fields: "status" (HTTP error code),
/// "fail_times" (first N matches answer 500), "delay_ms", "malformed" (body
/// without choices). The embeddings entry has "mode" (basis | hash | table),
/// "dim", optional "table" {text: vector} and "count_delta" (vectors added to
/// or removed from each answer).
class MockBackend {
 public:
  struct Call {
    std::string path;
    std::string model;
    std::string prompt;  // chat prompt, or inputs joined by '\n'
  };

  explicit MockBackend(json script);
  static MockBackend from_file(const std::filesystem::path& path);
  ~MockBackend();

  MockBackend(const MockBackend&) = delete;
  MockBackend& operator=(const MockBackend&) = delete;

  int start(const std::string& host = "127.0.0.1", int port = 0);
  void run(const std::string& host, int port);
  void stop();

  std::string url() const;
  std::vector<Call> calls() const;
  std::size_t call_count(std::string_view path, std::string_view model = {}) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace veridispatch
