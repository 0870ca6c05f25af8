#include "ina/model.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "ina/numeric.hpp"

namespace ina::model {

using nlohmann::json;
namespace fs = std::filesystem;

std::size_t Tensor::elems() const {
  std::size_t n = 1;
  for (unsigned d : shape) n *= d;
  return n;
}

unsigned weight_count(const Layer& l) {
  if (std::holds_alternative<Dense>(l) || std::holds_alternative<Conv1D>(l)) return 1;
  if (std::holds_alternative<Attention>(l)) return 3;
  return 0;
}

namespace {

void expect_shape(const Tensor& t, std::initializer_list<unsigned> want,
                  const std::string& what) {
  const std::vector<unsigned> w(want);
  if (t.shape != w || t.v.size() != t.elems())
    fail(Err::ShapeError, what + " weight tensor has the wrong shape");
}

}  // namespace

std::vector<ShapeInfo> infer_shapes(const ModelIR& ir) {
  if (ir.input_len == 0 || ir.input_ch == 0) fail(Err::ShapeError, "empty input geometry");
  std::vector<ShapeInfo> out;
  ShapeInfo s{ir.input_len, ir.input_ch};
  out.push_back(s);
  std::size_t wi = 0;
  auto next_weight = [&]() -> const Tensor& {
    if (wi >= ir.weights.size()) fail(Err::ShapeError, "missing weight tensor");
    return ir.weights[wi++];
  };
  for (const Layer& l : ir.layers) {
    if (const auto* d = std::get_if<Dense>(&l)) {
      if (s.ch != d->in)
        fail(Err::ShapeError, "dense layer expects " + std::to_string(d->in) + " channels, got " +
                                  std::to_string(s.ch));
      expect_shape(next_weight(), {d->in, d->out}, "dense");
      s.ch = d->out;
    } else if (const auto* c = std::get_if<Conv1D>(&l)) {
      if (s.ch != c->in_ch) fail(Err::ShapeError, "conv channel mismatch");
      if (c->kernel == 0 || c->stride == 0) fail(Err::ShapeError, "conv kernel/stride must be >= 1");
      expect_shape(next_weight(), {c->kernel * c->in_ch, c->out_ch}, "conv");
      unsigned w;
      if (c->pad == Conv1D::Pad::Same) {
        w = (s.len + c->stride - 1) / c->stride;
      } else {
        if (s.len < c->kernel) fail(Err::ShapeError, "conv input shorter than kernel");
        w = (s.len - c->kernel) / c->stride + 1;
      }
      s = {w, c->out_ch};
    } else if (const auto* p = std::get_if<MaxPool1D>(&l)) {
      if (p->stride == 0) fail(Err::ShapeError, "pool stride must be >= 1");
      s.len = (s.len + p->stride - 1) / p->stride;  // ceil mode
    } else if (std::holds_alternative<Activation>(l)) {
      // shape preserved
    } else if (const auto* a = std::get_if<Attention>(&l)) {
      if (s.len != a->seq_len || s.ch != a->d_model)
        fail(Err::ShapeError, "attention expects (" + std::to_string(a->seq_len) + "," +
                                  std::to_string(a->d_model) + ")");
      expect_shape(next_weight(), {a->d_model, a->d_head}, "WQ");
      expect_shape(next_weight(), {a->d_model, a->d_head}, "WK");
      expect_shape(next_weight(), {a->d_model, a->d_head}, "WV");
      s.ch = a->d_head;
    } else if (std::holds_alternative<Flatten>(l)) {
      s = {1, s.len * s.ch};
    } else {
      fail(Err::UnsupportedLayer, "unknown layer kind");
    }
    out.push_back(s);
  }
  if (wi != ir.weights.size()) fail(Err::ShapeError, "unused weight tensors");
  return out;
}

QuantTensor quantize(const Tensor& t) {
  double mx = 0.0;
  for (double x : t.v) {
    if (!std::isfinite(x)) fail(Err::ShapeError, "non-finite weight value");
    mx = std::max(mx, std::fabs(x));
  }
  QuantTensor q;
  q.shape = t.shape;
  q.scale = mx == 0.0 ? 1.0 : mx / 127.0;
  q.v.reserve(t.v.size());
  for (double x : t.v) {
    const std::int64_t r = round_half_even(x / q.scale);
    q.v.push_back(std::int8_t(std::max<std::int64_t>(-127, std::min<std::int64_t>(127, r))));
  }
  return q;
}

double vector_delay_estimate(unsigned m, unsigned n) {
  return std::log2(double(m) / 2.0) / double(n);
}
double vector_throughput_estimate(unsigned m, unsigned n) {
  return double(n) / std::log2(double(m) / 2.0);
}
double systolic_delay_estimate(unsigned m, unsigned n) {
  return std::sqrt(double(m)) / double(n);
}
double systolic_throughput_estimate(unsigned /*m*/, unsigned n) { return double(n); }

// ---------------------------------------------------------------------------
// Serialization

namespace {

json layer_to_json(const Layer& l) {
  json j;
  if (const auto* d = std::get_if<Dense>(&l)) {
    j = {{"type", "dense"}, {"in", d->in}, {"out", d->out}};
  } else if (const auto* c = std::get_if<Conv1D>(&l)) {
    j = {{"type", "conv1d"},
         {"kernel", c->kernel},
         {"in_ch", c->in_ch},
         {"out_ch", c->out_ch},
         {"stride", c->stride},
         {"pad", c->pad == Conv1D::Pad::Same ? "same" : "valid"}};
  } else if (const auto* p = std::get_if<MaxPool1D>(&l)) {
    j = {{"type", "maxpool1d"}, {"stride", p->stride}};
  } else if (const auto* a = std::get_if<Activation>(&l)) {
    const char* n = a->kind == ActKind::Relu ? "relu" : a->kind == ActKind::Gelu ? "gelu" : "softmax";
    j = {{"type", "activation"}, {"kind", n}};
  } else if (const auto* at = std::get_if<Attention>(&l)) {
    j = {{"type", "attention"},
         {"seq_len", at->seq_len},
         {"d_model", at->d_model},
         {"d_head", at->d_head}};
  } else {
    j = {{"type", "flatten"}};
  }
  return j;
}

Layer layer_from_json(const json& j) {
  const std::string t = j.at("type").get<std::string>();
  if (t == "dense") return Dense{j.at("in").get<unsigned>(), j.at("out").get<unsigned>()};
  if (t == "conv1d") {
    Conv1D c;
    c.kernel = j.at("kernel").get<unsigned>();
    c.in_ch = j.at("in_ch").get<unsigned>();
    c.out_ch = j.at("out_ch").get<unsigned>();
    c.stride = j.at("stride").get<unsigned>();
    c.pad = j.at("pad").get<std::string>() == "same" ? Conv1D::Pad::Same : Conv1D::Pad::Valid;
    return c;
  }
  if (t == "maxpool1d") return MaxPool1D{j.at("stride").get<unsigned>()};
  if (t == "activation") {
    const std::string k = j.at("kind").get<std::string>();
    return Activation{k == "relu" ? ActKind::Relu : k == "gelu" ? ActKind::Gelu : ActKind::Softmax};
  }
  if (t == "attention")
    return Attention{j.at("seq_len").get<unsigned>(), j.at("d_model").get<unsigned>(),
                     j.at("d_head").get<unsigned>()};
  if (t == "flatten") return Flatten{};
  fail(Err::UnsupportedLayer, "unknown layer type '" + t + "' in manifest");
}

}  // namespace

void save(const ModelIR& ir, const std::string& dir) {
  infer_shapes(ir);  // refuse to persist a malformed model
  fs::create_directories(dir);
  const std::string blob_name = ir.name + ".bin";

  std::ofstream blob(fs::path(dir) / blob_name, std::ios::binary);
  if (!blob) fail(Err::IoError, "cannot write weight blob");
  json jw = json::array();
  std::size_t off = 0;
  for (const Tensor& t : ir.weights) {
    jw.push_back({{"offset", off}, {"shape", t.shape}});
    for (double x : t.v) {
      std::uint64_t bits;
      static_assert(sizeof bits == sizeof x);
      std::memcpy(&bits, &x, 8);
      std::uint8_t le[8];
      for (int i = 0; i < 8; ++i) le[i] = std::uint8_t(bits >> (8 * i));
      blob.write(reinterpret_cast<const char*>(le), 8);
    }
    off += t.v.size() * 8;
  }
  blob.close();

  json j;
  j["name"] = ir.name;
  j["input_len"] = ir.input_len;
  j["input_ch"] = ir.input_ch;
  j["blob"] = blob_name;
  j["layers"] = json::array();
  for (const Layer& l : ir.layers) j["layers"].push_back(layer_to_json(l));
  j["weights"] = jw;

  std::ofstream mf(fs::path(dir) / (ir.name + ".json"));
  if (!mf) fail(Err::IoError, "cannot write model manifest");
  mf << j.dump(2) << '\n';
}

ModelIR load(const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) fail(Err::IoError, "cannot open model manifest " + manifest_path);
  json j;
  try {
    mf >> j;
  } catch (const std::exception& e) {
    fail(Err::ConfigError, std::string("bad model manifest: ") + e.what());
  }

  ModelIR ir;
  try {
    ir.name = j.at("name").get<std::string>();
    ir.input_len = j.at("input_len").get<unsigned>();
    ir.input_ch = j.at("input_ch").get<unsigned>();
    for (const json& lj : j.at("layers")) ir.layers.push_back(layer_from_json(lj));

    const fs::path blob_path =
        fs::path(manifest_path).parent_path() / j.at("blob").get<std::string>();
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) fail(Err::IoError, "cannot open weight blob " + blob_path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(blob)),
                                    std::istreambuf_iterator<char>());
    for (const json& wj : j.at("weights")) {
      Tensor t;
      t.shape = wj.at("shape").get<std::vector<unsigned>>();
      const std::size_t off = wj.at("offset").get<std::size_t>();
      const std::size_t n = t.elems();
      if (off + n * 8 > bytes.size()) fail(Err::IoError, "weight blob truncated");
      t.v.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t(bytes[off + i * 8 + b]) << (8 * b);
        std::memcpy(&t.v[i], &bits, 8);
      }
      ir.weights.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    fail(Err::ConfigError, std::string("bad model manifest: ") + e.what());
  }
  infer_shapes(ir);
  return ir;
}

// ---------------------------------------------------------------------------
// Use-case builders

namespace {

Tensor random_tensor(std::mt19937_64& g, std::initializer_list<unsigned> shape) {
  Tensor t;
  t.shape = shape;
  t.v.resize(t.elems());
  for (double& x : t.v) x = rng_signed_unit(g);
  return t;
}

}  // namespace

ModelIR make_usecase1(std::uint64_t seed) {
  std::mt19937_64 g(seed);
  ModelIR ir;
  ir.name = "pktmlp";
  ir.input_len = 1;
  ir.input_ch = 6;
  ir.layers = {Dense{6, 12},  Activation{ActKind::Relu}, Dense{12, 6},
               Activation{ActKind::Relu}, Dense{6, 3}, Activation{ActKind::Relu},
               Dense{3, 2}};
  ir.weights = {random_tensor(g, {6, 12}), random_tensor(g, {12, 6}), random_tensor(g, {6, 3}),
                random_tensor(g, {3, 2})};
  return ir;
}

ModelIR make_usecase2(std::uint64_t seed) {
  std::mt19937_64 g(seed);
  ModelIR ir;
  ir.name = "flowcnn";
  ir.input_len = 20;
  ir.input_ch = 1;
  auto conv = [](unsigned ic, unsigned oc) {
    return Conv1D{3, ic, oc, 1, Conv1D::Pad::Same};
  };
  ir.layers = {conv(1, 32),  Activation{ActKind::Relu}, MaxPool1D{2},
               conv(32, 32), Activation{ActKind::Relu}, MaxPool1D{2},
               conv(32, 32), Activation{ActKind::Relu}, MaxPool1D{2},
               Flatten{},    Dense{96, 128},            Activation{ActKind::Relu},
               Dense{128, 162}};
  ir.weights = {random_tensor(g, {3, 32}), random_tensor(g, {96, 32}),
                random_tensor(g, {96, 32}), random_tensor(g, {96, 128}),
                random_tensor(g, {128, 162})};
  return ir;
}

ModelIR make_usecase3(std::uint64_t seed) {
  std::mt19937_64 g(seed);
  ModelIR ir;
  ir.name = "flowattn";
  ir.input_len = 15;
  ir.input_ch = 16;
  ir.layers = {Attention{15, 16, 64}, Dense{64, 128}, Activation{ActKind::Gelu},
               Dense{128, 64}};
  ir.weights = {random_tensor(g, {16, 64}), random_tensor(g, {16, 64}),
                random_tensor(g, {16, 64}), random_tensor(g, {64, 128}),
                random_tensor(g, {128, 64})};
  return ir;
}

}  // namespace ina::model
