#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace veridispatch {

using json = nlohmann::json;

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A record file could not be parsed or failed validation. Carries the
/// 1-based line number when the failure is tied to one line.
class RecordError : public Error {
 public:
  RecordError(const std::string& file, std::size_t line, const std::string& what);
  explicit RecordError(const std::string& what) : Error(what) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

/// Network failure talking to an HTTP backend (after retries are exhausted).
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Backend answered, but the body does not follow the wire contract.
class MalformedResponse : public Error {
 public:
  using Error::Error;
};

/// Calls `fn(line_number, record)` for each non-blank line of a
/// line-delimited JSON file. Parse failures become RecordError.
void for_each_record(const std::filesystem::path& path,
                     const std::function<void(std::size_t, const json&)>& fn);

/// Writes one compact JSON document per line. Object keys are emitted sorted,
/// so the output is canonical.
void write_records(const std::filesystem::path& path, const std::vector<json>& records);

json read_document(const std::filesystem::path& path);
void write_document(const std::filesystem::path& path, const json& doc);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view text);

/// Typed field access with a readable error naming the missing/ill-typed key.
template <class T>
T require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    throw Error(std::string("missing field '") + key + "'");
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace veridispatch
