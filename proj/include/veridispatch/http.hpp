#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <string>

#include "veridispatch/common.hpp"

namespace veridispatch {

struct HttpOptions {
  std::chrono::milliseconds timeout{30000};
  int max_retries = 2;
  std::chrono::milliseconds backoff_base{100};
  /// Name of the environment variable holding a bearer token. Empty for none.
  std::string auth_env;
};

/// "http://host:port/prefix" split into the origin and the path prefix.
struct Endpoint {
  std::string origin;
  std::string base_path;

  static Endpoint parse(const std::string& url);
};

struct HttpResult {
  int status = 0;
  std::string body;
};

/// POSTs a JSON body to `url` + `path`. Connection failures and 5xx/429
/// answers are retried with exponential backoff; anything else is returned.
/// `attempts`, when given, is incremented once per attempt.
HttpResult post_json(const std::string& url, const std::string& path, const json& body,
                     const HttpOptions& options, std::atomic<std::uint64_t>* attempts = nullptr);

/// Like post_json, but a non-2xx final answer or a non-JSON body throws.
json post_json_expect_ok(const std::string& url, const std::string& path, const json& body,
                         const HttpOptions& options,
                         std::atomic<std::uint64_t>* attempts = nullptr);

HttpResult get(const std::string& url, const std::string& path, const HttpOptions& options);

}  // namespace veridispatch
