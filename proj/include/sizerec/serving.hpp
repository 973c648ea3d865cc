#pragma once

#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <unordered_map>

#include "sizerec/models.hpp"

namespace sizerec {

struct RecommendationRequest {
  std::vector<Event> events;       // raw field values, as in catalog events
  std::string history_token;      // alternative to events (SSP bundles)
  Product product;                // gender optional, defaults to Women
  int k = 3;
  std::optional<int> reference_day;  // defaults to the newest event timestamp
  std::string user_id;            // optional; personalizes SFNet / PMCV

  json to_json() const;
  static RecommendationRequest from_json(const json& j);  // throws BadRequest
};

struct RankedSize {
  std::string size;
  int position = 0;
  double probability = 0.0;
};

struct RecommendationResponse {
  std::vector<RankedSize> sizes;  // probability non-increasing
  std::string model_version;
  bool cache_hit = false;
  double served_ms = 0.0;
  std::string history_token;

  json to_json() const;
  static RecommendationResponse from_json(const json& j);
};

// Bounded LRU keyed by the content hash of the truncated encoded history.
class HistoryCache {
 public:
  explicit HistoryCache(size_t capacity) : capacity_(capacity) {}
  std::shared_ptr<const HistoryRep> get(const std::string& key);
  void put(const std::string& key, std::shared_ptr<const HistoryRep> rep);
  size_t size() const;
  size_t capacity() const { return capacity_; }

 private:
  mutable std::mutex mu_;
  size_t capacity_;
  std::list<std::pair<std::string, std::shared_ptr<const HistoryRep>>> lru_;
  std::unordered_map<std::string, decltype(lru_)::iterator> index_;
};

// Cache key for a query's encoded history under a given model version.
std::string history_cache_key(const Recommender& model, const Query& q);

// Encodes the request history (or reuses the cached representation), runs the
// model, and maps the top-k positions back to the product scale's size codes.
RecommendationResponse recommend(const RecommendationRequest& req, Recommender& model,
                                 HistoryCache* cache);

// POST /recommendations + GET /health on top of the same recommend() path.
class RecommendServer {
 public:
  RecommendServer(Recommender& model, size_t cache_capacity);
  ~RecommendServer();
  // Blocks; throws BindError when the address cannot be bound.
  void listen(const std::string& host, int port);
  // Starts in a background thread (tests); throws BindError on failure.
  void start_async(const std::string& host, int port);
  void stop();
  HistoryCache& cache();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sizerec
