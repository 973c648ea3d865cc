#include "sizerec/serving.hpp"

#include <atomic>
#include <thread>

#include <httplib.h>

namespace sizerec {

// ---------------------------------------------------------------------------
// Wire formats
// ---------------------------------------------------------------------------

json RecommendationRequest::to_json() const {
  json evs = json::array();
  for (const Event& e : events) {
    evs.push_back(json{{"type", event_type_name(e.type)},
                       {"ts", e.timestamp},
                       {"brand", e.brand},
                       {"category", e.category},
                       {"scale", e.scale},
                       {"size_position", e.size_position},
                       {"return_reason", return_reason_name(e.reason)}});
  }
  json j{{"events", std::move(evs)},
         {"product",
          json{{"product_id", product.id},
               {"brand", product.brand},
               {"category", product.category},
               {"scale", product.scale},
               {"gender", gender_name(product.gender)}}},
         {"k", k}};
  if (!history_token.empty()) j["history_token"] = history_token;
  if (reference_day) j["reference_day"] = *reference_day;
  if (!user_id.empty()) j["user_id"] = user_id;
  return j;
}

RecommendationRequest RecommendationRequest::from_json(const json& j) {
  RecommendationRequest req;
  try {
    if (j.contains("events")) {
      for (const auto& je : j.at("events")) {
        Event e;
        e.type = event_type_from_name(je.at("type").get<std::string>());
        e.timestamp = je.at("ts").get<int>();
        e.brand = je.value("brand", "");
        e.category = je.value("category", "");
        e.scale = je.value("scale", "");
        e.size_position = je.value("size_position", 0);
        e.reason = return_reason_from_name(je.value("return_reason", "NotReturned"));
        req.events.push_back(std::move(e));
      }
    }
    req.history_token = j.value("history_token", "");
    const json& jp = j.at("product");
    req.product.id = jp.value("product_id", "");
    req.product.brand = jp.value("brand", "");
    req.product.category = jp.value("category", "");
    req.product.scale = jp.at("scale").get<std::string>();
    req.product.gender = gender_from_name(jp.value("gender", "Women"));
    req.k = j.value("k", 3);
    if (j.contains("reference_day")) req.reference_day = j.at("reference_day").get<int>();
    req.user_id = j.value("user_id", "");
  } catch (const json::exception& e) {
    fail(Err::BadRequest, std::string("malformed request: ") + e.what());
  }
  return req;
}

json RecommendationResponse::to_json() const {
  json sizes_j = json::array();
  for (const RankedSize& s : sizes)
    sizes_j.push_back(json{{"size", s.size}, {"position", s.position},
                           {"probability", s.probability}});
  return json{{"sizes", std::move(sizes_j)},
              {"model_version", model_version},
              {"cache_hit", cache_hit},
              {"served_ms", served_ms},
              {"history_token", history_token}};
}

RecommendationResponse RecommendationResponse::from_json(const json& j) {
  RecommendationResponse r;
  for (const auto& js : j.at("sizes"))
    r.sizes.push_back(RankedSize{js.at("size").get<std::string>(),
                                 js.at("position").get<int>(),
                                 js.at("probability").get<double>()});
  r.model_version = j.value("model_version", "");
  r.cache_hit = j.value("cache_hit", false);
  r.served_ms = j.value("served_ms", 0.0);
  r.history_token = j.value("history_token", "");
  return r;
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

std::shared_ptr<const HistoryRep> HistoryCache::get(const std::string& key) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = index_.find(key);
  if (it == index_.end()) return nullptr;
  lru_.splice(lru_.begin(), lru_, it->second);  // move to front
  return it->second->second;
}

void HistoryCache::put(const std::string& key, std::shared_ptr<const HistoryRep> rep) {
  if (capacity_ == 0) return;
  std::lock_guard<std::mutex> lock(mu_);
  auto it = index_.find(key);
  if (it != index_.end()) {
    it->second->second = std::move(rep);
    lru_.splice(lru_.begin(), lru_, it->second);
    return;
  }
  lru_.emplace_front(key, std::move(rep));
  index_[key] = lru_.begin();
  if (lru_.size() > capacity_) {
    index_.erase(lru_.back().first);
    lru_.pop_back();
  }
}

size_t HistoryCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return lru_.size();
}

std::string history_cache_key(const Recommender& model, const Query& q) {
  std::string version = model.version();
  uint64_t h = fnv1a(version.data(), version.size());
  h = fnv1a(q.event_ids.data(), q.event_ids.size() * sizeof(int32_t), h);
  h = fnv1a(q.day_offsets.data(), q.day_offsets.size() * sizeof(double), h);
  return hex64(h);
}

// ---------------------------------------------------------------------------
// recommend
// ---------------------------------------------------------------------------

RecommendationResponse recommend(const RecommendationRequest& req, Recommender& model,
                                 HistoryCache* cache) {
  double t0 = now_ms();
  if (req.k < 1) fail(Err::BadRequest, "k must be >= 1");
  const Scale* scale = model.find_scale(req.product.scale);
  if (!scale) fail(Err::UnknownScale, "scale '" + req.product.scale + "' not in bundle");
  int scale_len = static_cast<int>(scale->sizes.size());

  QueryEncoder encoder(&model.vocabulary(), model.hyper().t_max, /*include_add2bag=*/true,
                       model.hyper().use_return_reason);
  int reference_day = 0;
  if (req.reference_day) {
    reference_day = *req.reference_day;
  } else {
    for (const Event& e : req.events) reference_day = std::max(reference_day, e.timestamp);
  }
  Query q = encoder.from_events(req.events, req.product, scale_len, reference_day, req.user_id);

  RecommendationResponse resp;
  resp.model_version = model.version();
  std::vector<double> probs;
  if (model.supports_history_cache()) {
    std::shared_ptr<const HistoryRep> rep;
    std::string token;
    if (q.len == 0) {
      if (req.history_token.empty())
        fail(Err::EmptyHistory, model.type() + " needs at least one history event");
      token = req.history_token;
      if (cache) rep = cache->get(token);
      if (!rep) fail(Err::BadRequest, "unknown history token: " + token);
      resp.cache_hit = true;
    } else {
      token = history_cache_key(model, q);
      if (cache) rep = cache->get(token);
      if (rep) {
        resp.cache_hit = true;
      } else {
        rep = std::make_shared<HistoryRep>(model.encode_history(q));
        if (cache) cache->put(token, rep);
      }
    }
    resp.history_token = token;
    probs = model.predict_with_history(*rep, q);
  } else {
    probs = model.predict_single(q);
  }

  std::vector<int> ranking;
  if (auto* pmcv = dynamic_cast<PmcvModel*>(&model)) {
    ranking = pmcv->rank({q})[0];
  } else {
    ranking = rank_from_probs(probs, scale_len);
  }
  int take = std::min<int>(req.k, scale_len);
  for (int i = 0; i < take; ++i) {
    int pos = ranking[i];
    resp.sizes.push_back(RankedSize{position_to_size(*scale, pos), pos, probs[pos]});
  }
  resp.served_ms = now_ms() - t0;
  return resp;
}

// ---------------------------------------------------------------------------
// HTTP server
// ---------------------------------------------------------------------------

namespace {

int status_for(Err code) {
  switch (code) {
    case Err::BadRequest:
    case Err::EmptyHistory:
    case Err::UnknownScale:
    case Err::UnknownSize:
    case Err::InvalidLabel:
      return 400;
    default:
      return 500;
  }
}

}  // namespace

struct RecommendServer::Impl {
  Impl(Recommender& m, size_t cache_capacity) : model(m), cache(cache_capacity) {}

  Recommender& model;
  HistoryCache cache;
  httplib::Server server;
  std::thread thread;

  void setup() {
    server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      json body{{"status", "ok"}, {"model_version", model.version()}};
      res.set_content(body.dump(), "application/json");
    });
    server.Post("/recommendations",
                [this](const httplib::Request& req, httplib::Response& res) {
                  try {
                    json parsed;
                    try {
                      parsed = json::parse(req.body);
                    } catch (const json::exception& e) {
                      fail(Err::BadRequest, std::string("invalid JSON body: ") + e.what());
                    }
                    RecommendationRequest r = RecommendationRequest::from_json(parsed);
                    RecommendationResponse out = recommend(r, model, &cache);
                    res.set_content(out.to_json().dump(), "application/json");
                  } catch (const Error& e) {
                    res.status = status_for(e.code());
                    res.set_content(json{{"error", err_name(e.code())},
                                         {"message", e.what()}}
                                        .dump(),
                                    "application/json");
                  } catch (const std::exception& e) {
                    res.status = 500;
                    res.set_content(json{{"error", "Internal"}, {"message", e.what()}}.dump(),
                                    "application/json");
                  }
                });
  }
};

RecommendServer::RecommendServer(Recommender& model, size_t cache_capacity)
    : impl_(std::make_unique<Impl>(model, cache_capacity)) {
  impl_->setup();
}

RecommendServer::~RecommendServer() { stop(); }

void RecommendServer::listen(const std::string& host, int port) {
  if (!impl_->server.bind_to_port(host, port))
    fail(Err::BindError, "cannot bind " + host + ":" + std::to_string(port));
  logging::info("serving on %s:%d", host.c_str(), port);
  impl_->server.listen_after_bind();
}

void RecommendServer::start_async(const std::string& host, int port) {
  if (!impl_->server.bind_to_port(host, port))
    fail(Err::BindError, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void RecommendServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
  if (impl_ && impl_->thread.joinable()) impl_->thread.join();
}

HistoryCache& RecommendServer::cache() { return impl_->cache; }

}  // namespace sizerec
