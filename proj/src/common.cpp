#include "veridispatch/common.hpp"

#include <fmt/format.h>

#include <fstream>

namespace veridispatch {

RecordError::RecordError(const std::string& file, std::size_t line, const std::string& what)
    : Error(fmt::format("{}:{}: {}", file, line, what)), line_(line) {}

void for_each_record(const std::filesystem::path& path,
                     const std::function<void(std::size_t, const json&)>& fn) {
  std::ifstream in(path);
  if (!in) {
    throw RecordError(fmt::format("cannot open '{}'", path.string()));
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw RecordError(path.string(), line_no, fmt::format("malformed record ({})", e.what()));
    }
    if (!record.is_object()) {
      throw RecordError(path.string(), line_no, "record is not an object");
    }
    try {
      fn(line_no, record);
    } catch (const RecordError&) {
      throw;
    } catch (const Error& e) {
      throw RecordError(path.string(), line_no, e.what());
    }
  }
}

void write_records(const std::filesystem::path& path, const std::vector<json>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  for (const auto& r : records) out << r.dump() << '\n';
}

json read_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(fmt::format("{}: malformed document ({})", path.string(), e.what()));
  }
}

void write_document(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << doc.dump(2) << '\n';
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace veridispatch
