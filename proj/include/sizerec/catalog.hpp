#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sizerec/common.hpp"

namespace sizerec {

using json = nlohmann::json;

enum class Gender { Women = 0, Men, Unisex, Kids };
enum class EventType { Order = 0, Add2Bag };
enum class ReturnReason { NotReturned = 0, TooLarge, TooSmall, OtherReason, NotApplicable };

const char* gender_name(Gender g);
Gender gender_from_name(const std::string& s);
const char* event_type_name(EventType t);
EventType event_type_from_name(const std::string& s);
const char* return_reason_name(ReturnReason r);
ReturnReason return_reason_from_name(const std::string& s);

constexpr int kMaxPositions = 30;
constexpr int kDayOffsetClip = 365;
constexpr int kHistoryMax = 20;

// Ordered size scale; position 0 is the smallest size.
struct Scale {
  std::string id;
  std::vector<std::string> sizes;
};

struct Product {
  std::string id;
  std::string brand;
  std::string category;
  std::string scale;
  Gender gender = Gender::Women;
};

// Model-visible event: the d=6 categorical fields plus its day timestamp.
struct Event {
  EventType type = EventType::Order;
  int timestamp = 0;  // days since epoch
  std::string brand, category, scale;
  int size_position = 0;
  ReturnReason reason = ReturnReason::NotReturned;
};

// Storage form of an event inside a user stream; product fields are derived
// through the product index so streams stay compact.
struct StreamEvent {
  EventType type = EventType::Order;
  int timestamp = 0;
  int product = -1;  // index into Dataset::products
  int size_position = 0;
  ReturnReason reason = ReturnReason::NotReturned;
};

struct UserStream {
  std::string user;
  std::vector<StreamEvent> events;  // sorted by timestamp (stable)
};

// One labeled order: predict `label` for (history strictly before ts, product).
struct Instance {
  int user = -1;     // index into Dataset::streams
  int ts = 0;
  int product = -1;  // index into Dataset::products
  int label = 0;
  ReturnReason label_reason = ReturnReason::NotReturned;  // of the labeled order
};

struct Census {
  int64_t users_total = 0;
  int64_t users_with_order = 0;
  int64_t users_with_add2bag = 0;
  int64_t users_add2bag_only = 0;
  int64_t users_multi_gender = 0;  // >= 2 distinct ordered genders
  int64_t orders_total = 0;
  int64_t orders_returned = 0;
  int64_t add2bag_total = 0;
  int64_t instances_kept = 0;
  int64_t orders_dropped_no_history = 0;
  json to_json() const;
  static Census from_json(const json& j);
};

struct Dataset {
  std::vector<Scale> scales;
  std::vector<Product> products;
  std::vector<UserStream> streams;
  std::vector<Instance> instances;
  int num_positions = 0;  // global class count = max scale length
  Census census;
  json generator_config;  // echo of the generating config, null when unknown

  std::unordered_map<std::string, int> scale_index, product_index, user_index;
  void rebuild_indexes();

  const Scale& scale_of(const Product& p) const;
  const Scale& scale_of_product(int product_idx) const;
  int scale_length(int product_idx) const;
  // Events of the user strictly before `ts`, optionally dropping Add2Bag,
  // truncated to the `t_max` most recent.
  std::vector<Event> history_before(const Instance& ins, int t_max,
                                    bool include_add2bag) const;
};

// ---------------------------------------------------------------------------
// Size positions
// ---------------------------------------------------------------------------

// 0-based position of a size code within its scale; positions are the model's
// class space, shared across scales.
int map_size_to_position(const std::string& size_code, const Scale& scale);
const std::string& position_to_size(const Scale& scale, int position);

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

constexpr int32_t kPadId = 0;
constexpr int32_t kUnkId = 1;

// Integer ids for the enum-valued fields are fixed, not learned.
inline int32_t event_type_id(EventType t) { return t == EventType::Order ? 2 : 3; }
constexpr int kEventTypeCardinality = 4;
inline int32_t return_reason_id(ReturnReason r) { return 2 + static_cast<int32_t>(r); }
constexpr int kReturnReasonCardinality = 7;
inline int32_t size_position_id(int pos) { return 2 + pos; }

// String-valued categorical fields get insertion-ordered ids starting at 2;
// 0 is PAD and 1 is UNK for every field.
class Vocabulary {
 public:
  enum class Field { Brand = 0, Category, Scale, User, Product };
  static constexpr size_t kNumFields = 5;

  int32_t add(Field f, const std::string& value);
  int32_t lookup(Field f, const std::string& value) const;  // kUnkId when unseen
  std::optional<std::string> value_of(Field f, int32_t id) const;
  int cardinality(Field f) const;
  const std::vector<std::string>& values(Field f) const;

  json to_json() const;
  static Vocabulary from_json(const json& j);

 private:
  std::array<std::unordered_map<std::string, int32_t>, kNumFields> map_;
  std::array<std::vector<std::string>, kNumFields> values_;
};

// Vocabulary over the categorical values reachable from `instances`
// (product fields, user ids, and every field of their full histories).
// Training uses the train split only, so unseen test values map to UNK.
Vocabulary build_vocabulary(const Dataset& ds, const std::vector<Instance>& instances);

// ---------------------------------------------------------------------------
// Event encoding
// ---------------------------------------------------------------------------

struct EncodedEvent {
  std::array<int32_t, 6> ids;  // [type, brand, category, scale, size, reason]
  int day_offset = 0;          // clipped to [0, kDayOffsetClip]
};

EncodedEvent encode_event(const Event& ev, const Vocabulary& vocab, int reference_day);

// ---------------------------------------------------------------------------
// Splitting and scenarios
// ---------------------------------------------------------------------------

struct SplitResult {
  std::vector<Instance> train, val, test;
};

// Chronological split preserving causality: sort by timestamp, cut at the
// cumulative ratios.
SplitResult split_backtesting(std::vector<Instance> instances,
                              std::array<double, 3> ratios = {0.8, 0.1, 0.1});

enum class Scenario { General, MultipleGender, VIP, TrainingUsers };
const char* scenario_name(Scenario s);

std::vector<Instance> filter_scenario(const std::vector<Instance>& test,
                                      const Dataset& full, Scenario scenario,
                                      const std::vector<Instance>& train);

struct EventSources {
  bool orders = true;
  bool add2bag = true;
};

// Fraction of `population` (user indices) with at least one admissible event.
double compute_coverage(const Dataset& ds, EventSources sources,
                        const std::vector<int>& population);

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

struct GeneratorConfig {
  int n_users = 1000;
  int n_products = 200;
  int n_brands = 20;
  int n_categories = 12;
  int n_scales = 6;
  std::array<int, 2> events_per_user_range{2, 10};
  double add2bag_fraction = 0.2;
  double return_rate = 0.2;
  double multi_gender_fraction = 0.2;
  double noise_rate = 0.1;
  uint64_t seed = 1;
  std::array<int, 2> scale_length_range{4, 10};
  std::array<int, 2> activity_span_range{30, 180};
  int horizon_days = 365;

  void validate() const;
  json to_json() const;
  static GeneratorConfig from_json(const json& j);
};

// Users carry a latent size level (0..9) per gender; order positions equal the
// latent position with probability 1-noise_rate, otherwise +-1. Returns are
// Bernoulli(return_rate) with the reason planted consistently: ordered above
// the latent -> TooLarge, below -> TooSmall, exact fit -> OtherReason.
Dataset generate_synthetic_dataset(const GeneratorConfig& cfg);

// ---------------------------------------------------------------------------
// Dataset file I/O (line-delimited; header object + one instance per line)
// ---------------------------------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& path);
std::string dataset_to_string(const Dataset& ds);
Dataset load_dataset(const std::string& path);
Dataset dataset_from_string(const std::string& text);

}  // namespace sizerec
