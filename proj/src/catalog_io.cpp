#include <fstream>
#include <sstream>

#include "sizerec/catalog.hpp"

// Dataset file format (version 1), line-delimited:
//   line 1: header object {format, version, num_positions, scales, products,
//           streams, census, generator_config}
//   lines 2..: one instance per line as [user_idx, ts, product_idx, label,
//           label_reason]
// Products are stored as [id, brand, category, scale, gender]; stream events
// as [type, ts, product_idx, size_position, reason] with enums as integers.
// See docs/formats.md.

namespace sizerec {

json Census::to_json() const {
  return json{{"users_total", users_total},
              {"users_with_order", users_with_order},
              {"users_with_add2bag", users_with_add2bag},
              {"users_add2bag_only", users_add2bag_only},
              {"users_multi_gender", users_multi_gender},
              {"orders_total", orders_total},
              {"orders_returned", orders_returned},
              {"add2bag_total", add2bag_total},
              {"instances_kept", instances_kept},
              {"orders_dropped_no_history", orders_dropped_no_history}};
}

Census Census::from_json(const json& j) {
  Census c;
  c.users_total = j.value("users_total", 0);
  c.users_with_order = j.value("users_with_order", 0);
  c.users_with_add2bag = j.value("users_with_add2bag", 0);
  c.users_add2bag_only = j.value("users_add2bag_only", 0);
  c.users_multi_gender = j.value("users_multi_gender", 0);
  c.orders_total = j.value("orders_total", 0);
  c.orders_returned = j.value("orders_returned", 0);
  c.add2bag_total = j.value("add2bag_total", 0);
  c.instances_kept = j.value("instances_kept", 0);
  c.orders_dropped_no_history = j.value("orders_dropped_no_history", 0);
  return c;
}

std::string dataset_to_string(const Dataset& ds) {
  json scales = json::array();
  for (const Scale& s : ds.scales) scales.push_back(json{{"id", s.id}, {"sizes", s.sizes}});
  json products = json::array();
  for (const Product& p : ds.products)
    products.push_back(json::array({p.id, p.brand, p.category, p.scale, gender_name(p.gender)}));
  json streams = json::array();
  for (const UserStream& st : ds.streams) {
    json evs = json::array();
    for (const StreamEvent& e : st.events)
      evs.push_back(json::array({static_cast<int>(e.type), e.timestamp, e.product,
                                 e.size_position, static_cast<int>(e.reason)}));
    streams.push_back(json::array({st.user, std::move(evs)}));
  }
  json header{{"format", "sizerec-dataset"},
              {"version", 1},
              {"num_positions", ds.num_positions},
              {"scales", std::move(scales)},
              {"products", std::move(products)},
              {"streams", std::move(streams)},
              {"census", ds.census.to_json()},
              {"generator_config", ds.generator_config}};
  std::string out = header.dump();
  out.push_back('\n');
  for (const Instance& ins : ds.instances) {
    json line = json::array(
        {ins.user, ins.ts, ins.product, ins.label, static_cast<int>(ins.label_reason)});
    out += line.dump();
    out.push_back('\n');
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Err::IOError, "cannot open for write: " + path);
  std::string text = dataset_to_string(ds);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) fail(Err::IOError, "write failed: " + path);
}

Dataset dataset_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(Err::IOError, "dataset: empty file");
  Dataset ds;
  try {
    json header = json::parse(line);
    if (header.value("format", "") != "sizerec-dataset")
      fail(Err::IOError, "dataset: unexpected format tag");
    if (header.value("version", 0) != 1) fail(Err::IOError, "dataset: unsupported version");
    ds.num_positions = header.at("num_positions").get<int>();
    for (const auto& js : header.at("scales")) {
      Scale s;
      s.id = js.at("id").get<std::string>();
      s.sizes = js.at("sizes").get<std::vector<std::string>>();
      if (s.sizes.empty() || s.sizes.size() > kMaxPositions)
        fail(Err::IOError, "dataset: invalid scale " + s.id);
      ds.scales.push_back(std::move(s));
    }
    for (const auto& jp : header.at("products")) {
      Product p;
      p.id = jp.at(0).get<std::string>();
      p.brand = jp.at(1).get<std::string>();
      p.category = jp.at(2).get<std::string>();
      p.scale = jp.at(3).get<std::string>();
      p.gender = gender_from_name(jp.at(4).get<std::string>());
      ds.products.push_back(std::move(p));
    }
    for (const auto& jst : header.at("streams")) {
      UserStream st;
      st.user = jst.at(0).get<std::string>();
      int prev_ts = INT32_MIN;
      for (const auto& je : jst.at(1)) {
        StreamEvent e;
        e.type = static_cast<EventType>(je.at(0).get<int>());
        e.timestamp = je.at(1).get<int>();
        e.product = je.at(2).get<int>();
        e.size_position = je.at(3).get<int>();
        e.reason = static_cast<ReturnReason>(je.at(4).get<int>());
        if (e.timestamp < prev_ts) fail(Err::IOError, "dataset: stream not sorted");
        prev_ts = e.timestamp;
        if (e.product < 0 || static_cast<size_t>(e.product) >= ds.products.size())
          fail(Err::IOError, "dataset: event references unknown product");
        st.events.push_back(e);
      }
      ds.streams.push_back(std::move(st));
    }
    ds.census = Census::from_json(header.at("census"));
    ds.generator_config = header.value("generator_config", json());
  } catch (const json::exception& e) {
    fail(Err::IOError, std::string("dataset: malformed header: ") + e.what());
  }
  ds.rebuild_indexes();

  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json ji = json::parse(line);
      Instance ins;
      ins.user = ji.at(0).get<int>();
      ins.ts = ji.at(1).get<int>();
      ins.product = ji.at(2).get<int>();
      ins.label = ji.at(3).get<int>();
      ins.label_reason = static_cast<ReturnReason>(ji.at(4).get<int>());
      if (ins.user < 0 || static_cast<size_t>(ins.user) >= ds.streams.size())
        fail(Err::IOError, "dataset: instance references unknown user");
      if (ins.product < 0 || static_cast<size_t>(ins.product) >= ds.products.size())
        fail(Err::IOError, "dataset: instance references unknown product");
      if (ins.label < 0 || ins.label >= ds.scale_length(ins.product))
        fail(Err::IOError, "dataset: label outside the product scale");
      ds.instances.push_back(ins);
    } catch (const json::exception& e) {
      fail(Err::IOError, "dataset: malformed instance at line " + std::to_string(lineno) +
                             ": " + e.what());
    }
  }
  return ds;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Err::IOError, "cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return dataset_from_string(ss.str());
}

}  // namespace sizerec
