#include "veridispatch/http.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cstdlib>
#include <thread>

#include "httplib.h"

namespace veridispatch {

Endpoint Endpoint::parse(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(fmt::format("malformed endpoint '{}'", url));
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(fmt::format("unsupported scheme in endpoint '{}'", url));
  }
  auto host_begin = scheme_end + 3;
  auto path_begin = url.find('/', host_begin);
  Endpoint ep;
  ep.origin = url.substr(0, path_begin);
  if (ep.origin.size() <= host_begin) throw Error(fmt::format("endpoint '{}' has no host", url));
  if (path_begin != std::string::npos) {
    ep.base_path = url.substr(path_begin);
    while (!ep.base_path.empty() && ep.base_path.back() == '/') ep.base_path.pop_back();
  }
  return ep;
}

namespace {

httplib::Headers auth_headers(const HttpOptions& options) {
  httplib::Headers headers;
  if (!options.auth_env.empty()) {
    if (const char* token = std::getenv(options.auth_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  return headers;
}

bool retryable(int status) { return status == 429 || status >= 500; }

void configure(httplib::Client& client, const HttpOptions& options) {
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(options.timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
}

}  // namespace

HttpResult post_json(const std::string& url, const std::string& path, const json& body,
                     const HttpOptions& options, std::atomic<std::uint64_t>* attempts) {
  const auto ep = Endpoint::parse(url);
  const std::string target = ep.base_path + path;
  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options.backoff_base * (1 << (attempt - 1)));
    if (attempts) ++*attempts;
    httplib::Client client(ep.origin);
    configure(client, options);
    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(target, auth_headers(options), payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      if (std::chrono::steady_clock::now() - started >= options.timeout) {
        last_error = fmt::format("timeout after {} ms", options.timeout.count());
      }
      continue;
    }
    if (retryable(res->status) && attempt < options.max_retries) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    return {res->status, res->body};
  }
  throw TransportError(fmt::format("POST {}{} failed after {} attempts: {}", ep.origin, target,
                                   options.max_retries + 1, last_error));
}

json post_json_expect_ok(const std::string& url, const std::string& path, const json& body,
                         const HttpOptions& options, std::atomic<std::uint64_t>* attempts) {
  auto res = post_json(url, path, body, options, attempts);
  if (res.status < 200 || res.status >= 300) {
    throw TransportError(fmt::format("POST {}{} returned HTTP {}", url, path, res.status));
  }
  try {
    return json::parse(res.body);
  } catch (const json::parse_error&) {
    throw MalformedResponse(fmt::format("POST {}{} returned a non-JSON body", url, path));
  }
}

HttpResult get(const std::string& url, const std::string& path, const HttpOptions& options) {
  const auto ep = Endpoint::parse(url);
  httplib::Client client(ep.origin);
  configure(client, options);
  auto res = client.Get(ep.base_path + path, auth_headers(options));
  if (!res) {
    throw TransportError(fmt::format("GET {}{}: {}", url, path, httplib::to_string(res.error())));
  }
  return {res->status, res->body};
}

}  // namespace veridispatch
