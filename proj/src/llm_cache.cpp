#include <spdlog/spdlog.h>

#include "tqaprm/error.hpp"
#include "tqaprm/llm.hpp"

namespace tqaprm::llm {

namespace fs = std::filesystem;

namespace {

json key_material(const GenerationRequest& request, std::string_view ns) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back(to_json(m));
  return json{{"namespace", std::string(ns)},
              {"messages", std::move(messages)},
              {"temperature", request.temperature},
              {"sample_count", request.sample_count},
              {"max_tokens", request.max_tokens},
              {"seed", request.seed ? json(*request.seed) : json(nullptr)},
              {"want_token_probs", request.want_token_probs}};
}

class CachedBackend final : public Backend {
 public:
  CachedBackend(BackendPtr inner, std::shared_ptr<ResponseCache> store, std::string ns)
      : inner_(std::move(inner)), store_(std::move(store)), ns_(std::move(ns)) {}

  GenerationResult generate(const GenerationRequest& request) override {
    const auto key = ResponseCache::key(request, ns_);
    if (auto hit = store_->load(key)) {
      if (static_cast<int>(hit->completions.size()) == request.sample_count) return std::move(*hit);
      spdlog::warn("cache entry {} has wrong completion count; refetching", key);
    }
    auto result = inner_->generate(request);
    try {
      store_->store(key, request, result);
    } catch (const Error& e) {
      spdlog::warn("cache write failed for {}: {}", key, e.what());
    }
    return result;
  }

 private:
  BackendPtr inner_;
  std::shared_ptr<ResponseCache> store_;
  std::string ns_;
};

}  // namespace

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create cache directory " + dir_.string() + ": " + ec.message());
}

std::string ResponseCache::key(const GenerationRequest& request, std::string_view ns) {
  return sha256_hex(key_material(request, ns).dump());
}

fs::path ResponseCache::entry_path(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<GenerationResult> ResponseCache::load(const std::string& key) {
  const auto path = entry_path(key);
  std::error_code ec;
  if (!fs::exists(path, ec)) {
    std::lock_guard lock(stats_mutex_);
    ++stats_.misses;
    return std::nullopt;
  }
  try {
    const auto doc = json::parse(read_file(path));
    if (doc.at("key").get<std::string>() != key) throw ProtocolError("key mismatch");
    auto result = result_from_json(doc.at("result"));
    result.from_cache = true;
    std::lock_guard lock(stats_mutex_);
    ++stats_.hits;
    return result;
  } catch (const std::exception& e) {
    spdlog::warn("corrupt cache entry {} ({}); bypassing cache", path.string(), e.what());
    std::lock_guard lock(stats_mutex_);
    ++stats_.corrupt;
    ++stats_.misses;
    return std::nullopt;
  }
}

void ResponseCache::store(const std::string& key, const GenerationRequest& request,
                          const GenerationResult& result) {
  json doc{{"key", key}, {"request", key_material(request, {})}, {"result", to_json(result)}};
  std::lock_guard lock(write_mutex_);
  write_file_atomic(entry_path(key), doc.dump());
}

CacheStats ResponseCache::stats() const {
  std::lock_guard lock(stats_mutex_);
  return stats_;
}

BackendPtr cached(BackendPtr inner, std::shared_ptr<ResponseCache> store, std::string ns) {
  return std::make_shared<CachedBackend>(std::move(inner), std::move(store), std::move(ns));
}

}  // namespace tqaprm::llm
