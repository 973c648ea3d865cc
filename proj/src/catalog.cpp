#include "sizerec/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace sizerec {

const char* gender_name(Gender g) {
  switch (g) {
    case Gender::Women: return "Women";
    case Gender::Men: return "Men";
    case Gender::Unisex: return "Unisex";
    case Gender::Kids: return "Kids";
  }
  return "Women";
}

Gender gender_from_name(const std::string& s) {
  if (s == "Women") return Gender::Women;
  if (s == "Men") return Gender::Men;
  if (s == "Unisex") return Gender::Unisex;
  if (s == "Kids") return Gender::Kids;
  fail(Err::IOError, "unknown gender: " + s);
}

const char* event_type_name(EventType t) {
  return t == EventType::Order ? "Order" : "Add2Bag";
}

EventType event_type_from_name(const std::string& s) {
  if (s == "Order") return EventType::Order;
  if (s == "Add2Bag") return EventType::Add2Bag;
  fail(Err::BadRequest, "unknown event type: " + s);
}

const char* return_reason_name(ReturnReason r) {
  switch (r) {
    case ReturnReason::NotReturned: return "NotReturned";
    case ReturnReason::TooLarge: return "TooLarge";
    case ReturnReason::TooSmall: return "TooSmall";
    case ReturnReason::OtherReason: return "OtherReason";
    case ReturnReason::NotApplicable: return "NotApplicable";
  }
  return "NotReturned";
}

ReturnReason return_reason_from_name(const std::string& s) {
  if (s == "NotReturned") return ReturnReason::NotReturned;
  if (s == "TooLarge") return ReturnReason::TooLarge;
  if (s == "TooSmall") return ReturnReason::TooSmall;
  if (s == "OtherReason") return ReturnReason::OtherReason;
  if (s == "NotApplicable") return ReturnReason::NotApplicable;
  fail(Err::BadRequest, "unknown return reason: " + s);
}

void Dataset::rebuild_indexes() {
  scale_index.clear();
  product_index.clear();
  user_index.clear();
  for (size_t i = 0; i < scales.size(); ++i) scale_index[scales[i].id] = static_cast<int>(i);
  for (size_t i = 0; i < products.size(); ++i) product_index[products[i].id] = static_cast<int>(i);
  for (size_t i = 0; i < streams.size(); ++i) user_index[streams[i].user] = static_cast<int>(i);
}

const Scale& Dataset::scale_of(const Product& p) const {
  auto it = scale_index.find(p.scale);
  if (it == scale_index.end()) fail(Err::UnknownScale, "product references unknown scale " + p.scale);
  return scales[it->second];
}

const Scale& Dataset::scale_of_product(int product_idx) const {
  return scale_of(products.at(product_idx));
}

int Dataset::scale_length(int product_idx) const {
  return static_cast<int>(scale_of_product(product_idx).sizes.size());
}

std::vector<Event> Dataset::history_before(const Instance& ins, int t_max,
                                           bool include_add2bag) const {
  const UserStream& stream = streams.at(ins.user);
  std::vector<const StreamEvent*> picked;
  for (const StreamEvent& ev : stream.events) {
    if (ev.timestamp >= ins.ts) continue;
    if (!include_add2bag && ev.type == EventType::Add2Bag) continue;
    picked.push_back(&ev);
  }
  size_t start = picked.size() > static_cast<size_t>(t_max) ? picked.size() - t_max : 0;
  std::vector<Event> out;
  out.reserve(picked.size() - start);
  for (size_t i = start; i < picked.size(); ++i) {
    const StreamEvent& se = *picked[i];
    const Product& p = products.at(se.product);
    out.push_back(Event{se.type, se.timestamp, p.brand, p.category, p.scale,
                        se.size_position, se.reason});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Size positions
// ---------------------------------------------------------------------------

int map_size_to_position(const std::string& size_code, const Scale& scale) {
  for (size_t i = 0; i < scale.sizes.size(); ++i)
    if (scale.sizes[i] == size_code) return static_cast<int>(i);
  fail(Err::UnknownSize, "size '" + size_code + "' not in scale " + scale.id);
}

const std::string& position_to_size(const Scale& scale, int position) {
  if (position < 0 || static_cast<size_t>(position) >= scale.sizes.size())
    fail(Err::IndexOutOfRange, "position out of scale " + scale.id);
  return scale.sizes[position];
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

int32_t Vocabulary::add(Field f, const std::string& value) {
  auto& m = map_[static_cast<size_t>(f)];
  auto it = m.find(value);
  if (it != m.end()) return it->second;
  auto& vals = values_[static_cast<size_t>(f)];
  int32_t id = static_cast<int32_t>(vals.size()) + 2;
  vals.push_back(value);
  m.emplace(value, id);
  return id;
}

int32_t Vocabulary::lookup(Field f, const std::string& value) const {
  const auto& m = map_[static_cast<size_t>(f)];
  auto it = m.find(value);
  return it == m.end() ? kUnkId : it->second;
}

std::optional<std::string> Vocabulary::value_of(Field f, int32_t id) const {
  const auto& vals = values_[static_cast<size_t>(f)];
  if (id < 2 || static_cast<size_t>(id - 2) >= vals.size()) return std::nullopt;
  return vals[id - 2];
}

int Vocabulary::cardinality(Field f) const {
  return 2 + static_cast<int>(values_[static_cast<size_t>(f)].size());
}

const std::vector<std::string>& Vocabulary::values(Field f) const {
  return values_[static_cast<size_t>(f)];
}

namespace {
const char* kFieldNames[] = {"brand", "category", "scale", "user", "product"};
}

json Vocabulary::to_json() const {
  json j = json::object();
  for (size_t f = 0; f < kNumFields; ++f) j[kFieldNames[f]] = values_[f];
  return j;
}

Vocabulary Vocabulary::from_json(const json& j) {
  Vocabulary v;
  for (size_t f = 0; f < kNumFields; ++f) {
    for (const auto& s : j.at(kFieldNames[f]))
      v.add(static_cast<Field>(f), s.get<std::string>());
  }
  return v;
}

Vocabulary build_vocabulary(const Dataset& ds, const std::vector<Instance>& instances) {
  if (instances.empty()) fail(Err::EmptyDataset, "build_vocabulary: no instances");
  Vocabulary v;
  using F = Vocabulary::Field;
  for (const Instance& ins : instances) {
    v.add(F::User, ds.streams.at(ins.user).user);
    const Product& p = ds.products.at(ins.product);
    v.add(F::Product, p.id);
    v.add(F::Brand, p.brand);
    v.add(F::Category, p.category);
    v.add(F::Scale, p.scale);
    for (const Event& ev : ds.history_before(ins, kHistoryMax, /*include_add2bag=*/true)) {
      v.add(F::Brand, ev.brand);
      v.add(F::Category, ev.category);
      v.add(F::Scale, ev.scale);
    }
  }
  return v;
}

EncodedEvent encode_event(const Event& ev, const Vocabulary& vocab, int reference_day) {
  EncodedEvent out;
  using F = Vocabulary::Field;
  out.ids[0] = event_type_id(ev.type);
  out.ids[1] = vocab.lookup(F::Brand, ev.brand);
  out.ids[2] = vocab.lookup(F::Category, ev.category);
  out.ids[3] = vocab.lookup(F::Scale, ev.scale);
  out.ids[4] = size_position_id(ev.size_position);
  out.ids[5] = return_reason_id(ev.reason);
  int delta = reference_day - ev.timestamp;
  out.day_offset = std::max(0, std::min(kDayOffsetClip, delta));
  return out;
}

// ---------------------------------------------------------------------------
// Splitting and scenarios
// ---------------------------------------------------------------------------

SplitResult split_backtesting(std::vector<Instance> instances, std::array<double, 3> ratios) {
  if (instances.size() < 10)
    fail(Err::TooFewInstances, "split_backtesting: need at least 10 instances");
  double total = ratios[0] + ratios[1] + ratios[2];
  if (total <= 0) fail(Err::InvalidConfig, "split_backtesting: ratios must be positive");
  std::stable_sort(instances.begin(), instances.end(),
                   [](const Instance& a, const Instance& b) { return a.ts < b.ts; });
  size_t n = instances.size();
  size_t cut1 = static_cast<size_t>(std::llround(n * ratios[0] / total));
  size_t cut2 = static_cast<size_t>(std::llround(n * (ratios[0] + ratios[1]) / total));
  cut1 = std::min(cut1, n);
  cut2 = std::min(std::max(cut2, cut1), n);
  SplitResult out;
  out.train.assign(instances.begin(), instances.begin() + cut1);
  out.val.assign(instances.begin() + cut1, instances.begin() + cut2);
  out.test.assign(instances.begin() + cut2, instances.end());
  return out;
}

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::General: return "General";
    case Scenario::MultipleGender: return "MultipleGender";
    case Scenario::VIP: return "VIP";
    case Scenario::TrainingUsers: return "TrainingUsers";
  }
  return "General";
}

std::vector<Instance> filter_scenario(const std::vector<Instance>& test,
                                      const Dataset& full, Scenario scenario,
                                      const std::vector<Instance>& train) {
  switch (scenario) {
    case Scenario::General:
      return test;
    case Scenario::MultipleGender: {
      std::vector<Instance> out;
      for (const Instance& ins : test) {
        const UserStream& st = full.streams.at(ins.user);
        std::set<Gender> genders;
        for (const StreamEvent& ev : st.events)
          if (ev.type == EventType::Order)
            genders.insert(full.products.at(ev.product).gender);
        if (genders.size() >= 2) out.push_back(ins);
      }
      return out;
    }
    case Scenario::VIP: {
      int max_train_ts = INT32_MIN;
      for (const Instance& ins : train) max_train_ts = std::max(max_train_ts, ins.ts);
      std::unordered_map<int, int64_t> purchases;  // user -> orders in train period
      int64_t total = 0;
      for (size_t u = 0; u < full.streams.size(); ++u) {
        int64_t c = 0;
        for (const StreamEvent& ev : full.streams[u].events)
          if (ev.type == EventType::Order && ev.timestamp <= max_train_ts) ++c;
        if (c > 0) {
          purchases[static_cast<int>(u)] = c;
          total += c;
        }
      }
      if (purchases.empty()) return {};
      double mean = static_cast<double>(total) / purchases.size();
      std::vector<Instance> out;
      for (const Instance& ins : test) {
        auto it = purchases.find(ins.user);
        if (it != purchases.end() && static_cast<double>(it->second) > mean)
          out.push_back(ins);
      }
      return out;
    }
    case Scenario::TrainingUsers: {
      std::set<int> train_users;
      for (const Instance& ins : train) train_users.insert(ins.user);
      std::vector<Instance> out;
      for (const Instance& ins : test)
        if (train_users.count(ins.user)) out.push_back(ins);
      return out;
    }
  }
  return test;
}

double compute_coverage(const Dataset& ds, EventSources sources,
                        const std::vector<int>& population) {
  if (population.empty()) fail(Err::EmptyPopulation, "compute_coverage: empty population");
  int64_t covered = 0;
  for (int u : population) {
    const UserStream& st = ds.streams.at(u);
    bool ok = false;
    for (const StreamEvent& ev : st.events) {
      if (ev.type == EventType::Order && sources.orders) { ok = true; break; }
      if (ev.type == EventType::Add2Bag && sources.add2bag) { ok = true; break; }
    }
    covered += ok;
  }
  return static_cast<double>(covered) / population.size();
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

void GeneratorConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) fail(Err::InvalidConfig, std::string(what) + " must be >= 1");
  };
  positive(n_users, "n_users");
  positive(n_products, "n_products");
  positive(n_brands, "n_brands");
  positive(n_categories, "n_categories");
  positive(n_scales, "n_scales");
  positive(horizon_days, "horizon_days");
  auto fraction = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) fail(Err::InvalidConfig, std::string(what) + " must be in [0,1]");
  };
  fraction(add2bag_fraction, "add2bag_fraction");
  fraction(return_rate, "return_rate");
  fraction(multi_gender_fraction, "multi_gender_fraction");
  fraction(noise_rate, "noise_rate");
  if (events_per_user_range[0] < 1 || events_per_user_range[1] < events_per_user_range[0])
    fail(Err::InvalidConfig, "events_per_user_range invalid");
  if (scale_length_range[0] < 1 || scale_length_range[1] < scale_length_range[0] ||
      scale_length_range[1] > kMaxPositions)
    fail(Err::InvalidConfig, "scale_length_range invalid");
  if (activity_span_range[0] < 1 || activity_span_range[1] < activity_span_range[0])
    fail(Err::InvalidConfig, "activity_span_range invalid");
}

json GeneratorConfig::to_json() const {
  return json{{"n_users", n_users},
              {"n_products", n_products},
              {"n_brands", n_brands},
              {"n_categories", n_categories},
              {"n_scales", n_scales},
              {"events_per_user_range", events_per_user_range},
              {"add2bag_fraction", add2bag_fraction},
              {"return_rate", return_rate},
              {"multi_gender_fraction", multi_gender_fraction},
              {"noise_rate", noise_rate},
              {"seed", seed},
              {"scale_length_range", scale_length_range},
              {"activity_span_range", activity_span_range},
              {"horizon_days", horizon_days}};
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
  GeneratorConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_users", c.n_users);
  get("n_products", c.n_products);
  get("n_brands", c.n_brands);
  get("n_categories", c.n_categories);
  get("n_scales", c.n_scales);
  get("events_per_user_range", c.events_per_user_range);
  get("add2bag_fraction", c.add2bag_fraction);
  get("return_rate", c.return_rate);
  get("multi_gender_fraction", c.multi_gender_fraction);
  get("noise_rate", c.noise_rate);
  get("seed", c.seed);
  get("scale_length_range", c.scale_length_range);
  get("activity_span_range", c.activity_span_range);
  get("horizon_days", c.horizon_days);
  return c;
}

namespace {

std::string padded_id(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
  return buf;
}

const char* kLetterSizes[] = {"XXS", "XS", "S", "M", "L", "XL", "XXL", "3XL", "4XL", "5XL"};

Gender pick_gender(Rng& rng) {
  double u = rng.uniform();
  if (u < 0.45) return Gender::Women;
  if (u < 0.90) return Gender::Men;
  if (u < 0.95) return Gender::Unisex;
  return Gender::Kids;
}

}  // namespace

Dataset generate_synthetic_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Dataset ds;
  ds.generator_config = cfg.to_json();

  // scales
  for (int i = 0; i < cfg.n_scales; ++i) {
    Scale s;
    s.id = padded_id("SC", i, 2);
    int len = static_cast<int>(rng.uniform_int(cfg.scale_length_range[0], cfg.scale_length_range[1]));
    bool lettered = (i % 2 == 0) && len <= 10;
    for (int k = 0; k < len; ++k)
      s.sizes.push_back(lettered ? kLetterSizes[k] : std::to_string(34 + 2 * (i % 3) + 2 * k));
    ds.scales.push_back(std::move(s));
    ds.num_positions = std::max(ds.num_positions, len);
  }

  // brands with a fixed gender each (gender blocks: 40/40/10/10)
  struct BrandInfo { std::string id; Gender gender; };
  std::vector<BrandInfo> brands;
  for (int i = 0; i < cfg.n_brands; ++i) {
    Gender g;
    double frac = cfg.n_brands == 1 ? 0.0 : static_cast<double>(i) / cfg.n_brands;
    if (frac < 0.4 || cfg.n_brands < 4) g = Gender::Women;
    else if (frac < 0.8) g = Gender::Men;
    else if (frac < 0.9) g = Gender::Unisex;
    else g = Gender::Kids;
    brands.push_back({padded_id("B", i, 2), g});
  }
  if (cfg.n_brands >= 4) {
    // guarantee every gender has at least one brand
    brands[cfg.n_brands - 1].gender = Gender::Kids;
    brands[cfg.n_brands - 2].gender = Gender::Unisex;
  }

  // products
  std::array<std::vector<int>, 4> products_by_gender;
  for (int i = 0; i < cfg.n_products; ++i) {
    Product p;
    p.id = padded_id("P", i, 5);
    const BrandInfo& b = brands[rng.uniform_int(0, cfg.n_brands - 1)];
    p.brand = b.id;
    p.gender = b.gender;
    p.category = padded_id("C", static_cast<int>(rng.uniform_int(0, cfg.n_categories - 1)), 2);
    p.scale = ds.scales[rng.uniform_int(0, cfg.n_scales - 1)].id;
    products_by_gender[static_cast<size_t>(p.gender)].push_back(i);
    ds.products.push_back(std::move(p));
  }

  auto pool_for = [&](Gender g) -> const std::vector<int>& {
    const auto& pool = products_by_gender[static_cast<size_t>(g)];
    if (!pool.empty()) return pool;
    for (const auto& alt : products_by_gender)
      if (!alt.empty()) return alt;
    fail(Err::InvalidConfig, "no products generated");
  };

  std::unordered_map<std::string, int> scale_len_by_id;
  for (const Scale& s : ds.scales) scale_len_by_id[s.id] = static_cast<int>(s.sizes.size());
  std::vector<int> product_scale_len(ds.products.size());
  for (size_t i = 0; i < ds.products.size(); ++i)
    product_scale_len[i] = scale_len_by_id.at(ds.products[i].scale);

  // users and their event streams
  for (int u = 0; u < cfg.n_users; ++u) {
    UserStream stream;
    stream.user = padded_id("U", u, 6);
    std::array<int, 4> latent{};
    for (auto& l : latent) l = static_cast<int>(rng.uniform_int(0, 9));
    Gender primary = pick_gender(rng);
    bool multi = rng.bernoulli(cfg.multi_gender_fraction);
    Gender secondary = primary;
    if (multi) {
      do { secondary = pick_gender(rng); } while (secondary == primary);
    }
    int span = std::min(static_cast<int>(rng.uniform_int(cfg.activity_span_range[0],
                                                         cfg.activity_span_range[1])),
                        cfg.horizon_days - 1);
    int start = static_cast<int>(rng.uniform_int(0, cfg.horizon_days - 1 - span));
    int n_events = static_cast<int>(rng.uniform_int(cfg.events_per_user_range[0],
                                                    cfg.events_per_user_range[1]));
    for (int e = 0; e < n_events; ++e) {
      StreamEvent ev;
      ev.timestamp = start + static_cast<int>(rng.uniform_int(0, span));
      Gender g = (multi && rng.bernoulli(0.5)) ? secondary : primary;
      const auto& pool = pool_for(g);
      ev.product = pool[rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1)];
      const Product& prod = ds.products[ev.product];
      g = prod.gender;  // pools can fall back to another gender
      int scale_len = product_scale_len[ev.product];
      int latent_pos = latent[static_cast<size_t>(g)] * scale_len / 10;
      if (latent_pos >= scale_len) latent_pos = scale_len - 1;
      int pos = latent_pos;
      if (rng.bernoulli(cfg.noise_rate)) {
        pos += rng.bernoulli(0.5) ? 1 : -1;
        pos = std::max(0, std::min(scale_len - 1, pos));
      }
      ev.size_position = pos;
      if (rng.bernoulli(cfg.add2bag_fraction)) {
        ev.type = EventType::Add2Bag;
        ev.reason = ReturnReason::NotApplicable;
      } else {
        ev.type = EventType::Order;
        if (rng.bernoulli(cfg.return_rate)) {
          if (pos > latent_pos) ev.reason = ReturnReason::TooLarge;
          else if (pos < latent_pos) ev.reason = ReturnReason::TooSmall;
          else ev.reason = ReturnReason::OtherReason;  // exact fit, never size-returned
        } else {
          ev.reason = ReturnReason::NotReturned;
        }
      }
      stream.events.push_back(ev);
    }
    std::stable_sort(stream.events.begin(), stream.events.end(),
                     [](const StreamEvent& a, const StreamEvent& b) {
                       return a.timestamp < b.timestamp;
                     });
    ds.streams.push_back(std::move(stream));
  }

  // labeled instances: every order with at least one strictly earlier event
  for (size_t u = 0; u < ds.streams.size(); ++u) {
    const UserStream& st = ds.streams[u];
    for (const StreamEvent& ev : st.events) {
      if (ev.type != EventType::Order) continue;
      ++ds.census.orders_total;
      if (ev.reason != ReturnReason::NotReturned) ++ds.census.orders_returned;
      bool has_history = !st.events.empty() && st.events.front().timestamp < ev.timestamp;
      if (!has_history) {
        ++ds.census.orders_dropped_no_history;
        continue;
      }
      Instance ins;
      ins.user = static_cast<int>(u);
      ins.ts = ev.timestamp;
      ins.product = ev.product;
      ins.label = ev.size_position;
      ins.label_reason = ev.reason;
      ds.instances.push_back(ins);
      ++ds.census.instances_kept;
    }
  }

  // census over users
  ds.census.users_total = cfg.n_users;
  for (const UserStream& st : ds.streams) {
    bool has_order = false, has_a2b = false;
    std::set<Gender> ordered_genders;
    for (const StreamEvent& ev : st.events) {
      if (ev.type == EventType::Order) {
        has_order = true;
        ordered_genders.insert(ds.products[ev.product].gender);
      } else {
        has_a2b = true;
        ++ds.census.add2bag_total;
      }
    }
    ds.census.users_with_order += has_order;
    ds.census.users_with_add2bag += has_a2b;
    ds.census.users_add2bag_only += (has_a2b && !has_order);
    ds.census.users_multi_gender += (ordered_genders.size() >= 2);
  }

  ds.rebuild_indexes();
  return ds;
}

}  // namespace sizerec
