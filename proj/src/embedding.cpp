#include "veridispatch/embedding.hpp"

#include <fmt/format.h>

#include <set>

namespace veridispatch {

std::string_view to_string(PoolingKind k) {
  switch (k) {
    case PoolingKind::last_token: return "last_token";
    case PoolingKind::average: return "average";
    case PoolingKind::decay: return "decay";
    case PoolingKind::external: return "external";
  }
  return "average";
}

PoolingKind pooling_kind_from_string(std::string_view s) {
  if (s == "last_token") return PoolingKind::last_token;
  if (s == "average") return PoolingKind::average;
  if (s == "decay") return PoolingKind::decay;
  if (s == "external") return PoolingKind::external;
  throw Error(fmt::format("unknown embedding source kind '{}'", s));
}

void EmbeddingSource::validate() const {
  if (dimension < 0) throw Error("negative embedding dimension");
  if (kind == PoolingKind::decay) {
    if (!decay_weight) throw Error("decay source needs a decay_weight");
    if (!(*decay_weight > 0.0 && *decay_weight <= 1.0)) {
      throw Error("decay_weight must lie in (0, 1]");
    }
  } else if (decay_weight) {
    throw Error("decay_weight is only valid for decay pooling");
  }
  const bool external = kind == PoolingKind::external;
  if (external && (provider_model.empty() || endpoint.empty())) {
    throw Error("external source needs provider_model and endpoint");
  }
  if (!external && (!provider_model.empty() || !endpoint.empty())) {
    throw Error("provider fields are only valid for external sources");
  }
}

std::string EmbeddingSource::key() const {
  switch (kind) {
    case PoolingKind::decay: return fmt::format("decay:{}", decay_weight.value_or(0.9));
    case PoolingKind::external: return "external:" + provider_model;
    default: return std::string(to_string(kind));
  }
}

json to_json(const EmbeddingSource& s) {
  json j{{"kind", to_string(s.kind)}};
  if (s.decay_weight) j["decay_weight"] = *s.decay_weight;
  if (!s.provider_model.empty()) j["provider_model"] = s.provider_model;
  if (!s.endpoint.empty()) j["endpoint"] = s.endpoint;
  if (s.dimension > 0) j["dimension"] = s.dimension;
  return j;
}

EmbeddingSource source_from_json(const json& j) {
  EmbeddingSource s;
  s.kind = pooling_kind_from_string(require<std::string>(j, "kind"));
  if (j.contains("decay_weight")) s.decay_weight = require<double>(j, "decay_weight");
  s.provider_model = j.value("provider_model", "");
  s.endpoint = j.value("endpoint", "");
  s.dimension = j.value("dimension", 0);
  s.validate();
  return s;
}

void TokenMatrix::validate() const {
  if (hidden.rows() < 1 || hidden.cols() < 1) throw Error("token matrix must be at least 1x1");
  detail::check_mask(hidden.rows(), attention_mask);
  for (Eigen::Index r = 0; r < hidden.rows(); ++r) {
    for (Eigen::Index c = 0; c < hidden.cols(); ++c) {
      if (!std::isfinite(hidden(r, c))) {
        throw Error(fmt::format("non-finite hidden value at row {}, column {}", r, c));
      }
    }
  }
}

void EmbeddingVector::validate() const {
  if (values.size() == 0) throw Error("empty embedding");
  if (source.dimension > 0 && values.size() != source.dimension) {
    throw Error(fmt::format("embedding for '{}' has dimension {}, source declares {}", variant_id,
                            values.size(), source.dimension));
  }
  if (!values.allFinite()) throw Error(fmt::format("embedding for '{}' is not finite", variant_id));
}

json to_json(const EmbeddingVector& e) {
  return {{"variant_id", e.variant_id},
          {"source", to_json(e.source)},
          {"values", std::vector<double>(e.values.data(), e.values.data() + e.values.size())}};
}

EmbeddingVector embedding_from_json(const json& j) {
  EmbeddingVector e;
  e.variant_id = require<std::string>(j, "variant_id");
  e.source = source_from_json(require<json>(j, "source"));
  auto values = require<std::vector<double>>(j, "values");
  e.values = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  e.validate();
  return e;
}

std::vector<EmbeddingVector> load_embeddings(const std::filesystem::path& path) {
  std::vector<EmbeddingVector> out;
  for_each_record(path, [&](std::size_t, const json& j) { out.push_back(embedding_from_json(j)); });
  return out;
}

void save_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingVector>& es) {
  std::vector<json> records;
  records.reserve(es.size());
  for (const auto& e : es) records.push_back(to_json(e));
  write_records(path, records);
}

EmbeddingVector pool(const TokenMatrix& m, const EmbeddingSource& source) {
  m.validate();
  EmbeddingVector out{m.variant_id, source, {}};
  switch (source.kind) {
    case PoolingKind::last_token: out.values = pool_last_token(m.hidden, m.attention_mask); break;
    case PoolingKind::average: out.values = pool_average(m.hidden, m.attention_mask); break;
    case PoolingKind::decay:
      out.values = pool_decay(m.hidden, m.attention_mask, source.decay_weight.value_or(0.9));
      break;
    case PoolingKind::external: throw Error("external sources cannot pool token matrices");
  }
  out.validate();
  return out;
}

TokenMatrix token_matrix_from_json(const json& j) {
  TokenMatrix m;
  m.variant_id = require<std::string>(j, "variant_id");
  m.source_model_id = require<std::string>(j, "source_model_id");
  const auto& rows = require<json>(j, "hidden");
  if (!rows.is_array() || rows.empty()) throw Error("'hidden' must be a non-empty array of rows");
  const auto t = rows.size();
  std::size_t d = 0;
  for (std::size_t r = 0; r < t; ++r) {
    if (!rows[r].is_array()) throw Error(fmt::format("hidden row {} is not an array", r));
    if (r == 0) {
      d = rows[r].size();
      if (d == 0) throw Error("hidden rows must not be empty");
      m.hidden.resize(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));
    } else if (rows[r].size() != d) {
      throw Error(fmt::format("ragged hidden matrix: row {} has {} columns, expected {}", r,
                              rows[r].size(), d));
    }
    for (std::size_t c = 0; c < d; ++c) {
      const auto& v = rows[r][c];
      // JSON cannot carry NaN/Inf; they arrive as null (or as strings from some exporters).
      if (!v.is_number()) {
        throw Error(fmt::format("non-finite hidden value at row {}, column {}", r, c));
      }
      m.hidden(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v.get<double>();
    }
  }
  for (const auto& v : require<json>(j, "attention_mask")) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
      throw Error("attention_mask entries must be 0 or 1");
    }
    m.attention_mask.push_back(static_cast<std::uint8_t>(v.get<int>()));
  }
  if (m.attention_mask.size() != t) {
    throw Error(fmt::format("attention_mask has length {} but there are {} tokens",
                            m.attention_mask.size(), t));
  }
  m.validate();
  return m;
}

std::vector<TokenMatrix> import_token_matrices(const std::filesystem::path& path) {
  std::vector<TokenMatrix> out;
  for_each_record(path, [&](std::size_t, const json& j) { out.push_back(token_matrix_from_json(j)); });
  return out;
}

EmbeddingClient::EmbeddingClient(EmbeddingSource source, HttpOptions options)
    : source_(std::move(source)), options_(std::move(options)) {
  if (source_.kind != PoolingKind::external) throw Error("EmbeddingClient needs an external source");
  source_.validate();
}

std::vector<Eigen::VectorXd> EmbeddingClient::request(const std::vector<std::string>& texts) {
  json body{{"model", source_.provider_model}, {"input", texts}};
  json res = post_json_expect_ok(source_.endpoint, "/v1/embeddings", body, options_, &requests_);
  if (!res.is_object() || !res.contains("data") || !res["data"].is_array()) {
    throw MalformedResponse("embeddings response has no 'data' array");
  }
  const auto& data = res["data"];
  if (data.size() != texts.size()) {
    throw MalformedResponse(fmt::format("embeddings response carries {} vectors for {} inputs",
                                        data.size(), texts.size()));
  }
  std::vector<Eigen::VectorXd> out(texts.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& item = data[i];
    std::size_t slot = i;
    if (item.contains("index") && item["index"].is_number_integer()) {
      slot = item["index"].get<std::size_t>();
      if (slot >= texts.size()) throw MalformedResponse("embedding index out of range");
    }
    if (!item.contains("embedding") || !item["embedding"].is_array()) {
      throw MalformedResponse("embeddings response item has no 'embedding' array");
    }
    std::vector<double> values;
    try {
      values = item["embedding"].get<std::vector<double>>();
    } catch (const json::exception&) {
      throw MalformedResponse("embedding contains a non-numeric value");
    }
    if (source_.dimension > 0 && static_cast<int>(values.size()) != source_.dimension) {
      throw MalformedResponse(fmt::format("embedding dimension {} does not match declared {}",
                                          values.size(), source_.dimension));
    }
    out[slot] = Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                  static_cast<Eigen::Index>(values.size()));
  }
  return out;
}

std::vector<EmbeddingVector> EmbeddingClient::fetch(const std::vector<std::string>& texts) {
  std::vector<std::shared_future<Vec>> futures(texts.size());
  std::vector<std::string> missing;
  std::vector<std::promise<Vec>> promises;
  {
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      ++lookups_;
      if (auto it = cache_.find(texts[i]); it != cache_.end()) {
        ++hits_;
        futures[i] = it->second;
        continue;
      }
      promises.emplace_back();
      missing.push_back(texts[i]);
      auto fut = promises.back().get_future().share();
      cache_.emplace(texts[i], fut);
      futures[i] = fut;
    }
  }

  if (!missing.empty()) {
    try {
      auto vectors = request(missing);
      for (std::size_t i = 0; i < missing.size(); ++i) {
        promises[i].set_value(std::make_shared<const Eigen::VectorXd>(std::move(vectors[i])));
      }
    } catch (...) {
      std::lock_guard lock(mutex_);
      for (std::size_t i = 0; i < missing.size(); ++i) {
        cache_.erase(missing[i]);
        promises[i].set_exception(std::current_exception());
      }
      throw;
    }
  }

  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.push_back({fnv1a_hex(texts[i]), source_, *futures[i].get()});
  }
  return out;
}

std::vector<EmbeddingVector> fetch_external(const std::vector<std::string>& texts,
                                            const EmbeddingSource& source,
                                            const HttpOptions& options) {
  EmbeddingClient client(source, options);
  return client.fetch(texts);
}

}  // namespace veridispatch
