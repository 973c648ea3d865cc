#include <cstring>
#include <fstream>

#include "sizerec/models.hpp"

// Bundle file (version 1):
//   8 bytes  magic "SRBNDL1\n"
//   u32      header length
//   bytes    header JSON: {model_type, version:1, hyper, vocabulary, scales,
//            pmcv (pmcv bundles only)}
//   u32      tensor count
//   per tensor: u32 name length, name bytes, u32 ndim, u64 dims[],
//               f64 little-endian values[]
// See docs/formats.md.

namespace sizerec {

namespace {

constexpr char kMagic[8] = {'S', 'R', 'B', 'N', 'D', 'L', '1', '\n'};

template <class T>
void write_raw(std::string& out, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(T));
}

template <class T>
T read_raw(const std::string& in, size_t& off) {
  if (off + sizeof(T) > in.size()) fail(Err::BundleCorrupt, "bundle truncated");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

json scales_to_json(const std::vector<Scale>& scales) {
  json arr = json::array();
  for (const Scale& s : scales) arr.push_back(json{{"id", s.id}, {"sizes", s.sizes}});
  return arr;
}

std::vector<Scale> scales_from_json(const json& j) {
  std::vector<Scale> out;
  for (const auto& js : j) {
    Scale s;
    s.id = js.at("id").get<std::string>();
    s.sizes = js.at("sizes").get<std::vector<std::string>>();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void save_bundle(Recommender& model, const std::string& path) {
  json header{{"model_type", model.type()},
              {"version", 1},
              {"hyper", model.hyper().to_json()},
              {"vocabulary", model.vocabulary().to_json()},
              {"scales", scales_to_json(model.scales())}};
  if (auto* pmcv = dynamic_cast<PmcvModel*>(&model)) header["pmcv"] = pmcv->tables_to_json();
  std::string hdr = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  write_raw<uint32_t>(out, static_cast<uint32_t>(hdr.size()));
  out += hdr;
  nn::NamedParams params = model.parameters();
  write_raw<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_raw<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out += name;
    write_raw<uint32_t>(out, static_cast<uint32_t>(t.shape().size()));
    for (size_t d : t.shape()) write_raw<uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Err::IOError, "cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(Err::IOError, "write failed: " + path);
}

std::unique_ptr<Recommender> load_bundle(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Err::ModelLoadError, "cannot open bundle: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    fail(Err::BundleCorrupt, "bundle: bad magic");
  size_t off = sizeof(kMagic);
  uint32_t hdr_len = read_raw<uint32_t>(buf, off);
  if (off + hdr_len > buf.size()) fail(Err::BundleCorrupt, "bundle truncated");
  json header;
  try {
    header = json::parse(buf.substr(off, hdr_len));
  } catch (const json::exception& e) {
    fail(Err::BundleCorrupt, std::string("bundle header: ") + e.what());
  }
  off += hdr_len;

  std::unique_ptr<Recommender> model;
  try {
    std::string type = header.at("model_type").get<std::string>();
    ModelHyper hyper = ModelHyper::from_json(header.at("hyper"));
    Vocabulary vocab = Vocabulary::from_json(header.at("vocabulary"));
    model = make_model(type, std::move(hyper), std::move(vocab), /*init_seed=*/0);
    model->set_catalog(scales_from_json(header.at("scales")));
    if (auto* pmcv = dynamic_cast<PmcvModel*>(model.get()))
      pmcv->tables_from_json(header.at("pmcv"));
  } catch (const json::exception& e) {
    fail(Err::BundleCorrupt, std::string("bundle header: ") + e.what());
  }

  nn::NamedParams params = model->parameters();
  uint32_t count = read_raw<uint32_t>(buf, off);
  if (count != params.size())
    fail(Err::BundleCorrupt, "bundle: parameter count mismatch");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_raw<uint32_t>(buf, off);
    if (off + name_len > buf.size()) fail(Err::BundleCorrupt, "bundle truncated");
    std::string name = buf.substr(off, name_len);
    off += name_len;
    if (name != params[i].first)
      fail(Err::BundleCorrupt, "bundle: unexpected tensor '" + name + "'");
    uint32_t ndim = read_raw<uint32_t>(buf, off);
    std::vector<size_t> shape;
    size_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<size_t>(read_raw<uint64_t>(buf, off)));
      n *= shape.back();
    }
    if (shape != params[i].second.shape())
      fail(Err::BundleCorrupt, "bundle: shape mismatch for '" + name + "'");
    if (off + n * sizeof(double) > buf.size()) fail(Err::BundleCorrupt, "bundle truncated");
    std::memcpy(params[i].second.data(), buf.data() + off, n * sizeof(double));
    off += n * sizeof(double);
  }
  return model;
}

}  // namespace sizerec
