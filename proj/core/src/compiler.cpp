#include "ina/compiler.hpp"

#include <cmath>
#include <variant>

namespace ina::compiler {

TilingPlan tile(const MatmulTask& t, unsigned k) {
  if (k == 0) fail(Err::ConfigError, "tile: k must be nonzero");
  if (t.m == 0 || t.k_dim == 0 || t.n == 0)
    fail(Err::ShapeError, "tile: degenerate task " + t.tag);
  TilingPlan p;
  p.k = k;
  p.k_chunks = (t.k_dim + k - 1) / k;
  p.n_tiles = (t.n + k - 1) / k;
  return p;
}

MatmulTask img2col_1d(const model::Conv1D& c, unsigned in_len, unsigned flows,
                      const std::string& tag) {
  if (c.kernel == 0 || c.out_ch == 0 || c.stride == 0)
    fail(Err::ShapeError, "img2col_1d: degenerate convolution");
  unsigned out_w;
  if (c.pad == model::Conv1D::Pad::Same) {
    out_w = (in_len + c.stride - 1) / c.stride;
  } else {
    if (in_len < c.kernel) fail(Err::ShapeError, "img2col_1d: input shorter than kernel");
    out_w = (in_len - c.kernel) / c.stride + 1;
  }
  MatmulTask t;
  t.m = out_w * flows;
  t.k_dim = c.kernel * c.in_ch;
  t.n = c.out_ch;
  t.tag = tag;
  return t;
}

double requant_ratio(unsigned k_dim) {
  if (k_dim == 0) fail(Err::ShapeError, "requant_ratio: zero reduction width");
  return 1.0 / (134.0 * std::sqrt(double(k_dim)));
}

QEntry identity_qentry() {
  QEntry e;
  e.scale = QScale{};  // passthrough
  e.act = Act::None;
  return e;
}

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

void set_requant(Stage& s) {
  const double r = requant_ratio(s.k_dim);
  s.q = QEntry{};
  s.q.scale = quantize_multiplier(r);
  s.q.act = Act::None;
  s.out_scale = s.in_scale * s.w_scale / r;
}

void bake_gelu(Stage& s) {
  s.q.act = Act::GeluLut;
  s.q.has_lut = true;
  for (int i = 0; i < 256; ++i) {
    const int v = i - 128;
    const double real = double(v) * s.out_scale;
    const double g = gelu(real) / s.out_scale;
    s.q.lut[std::size_t(i)] = std::int8_t(sat_i8(std::int64_t(round_half_even(g))));
  }
}

}  // namespace

QuantModel lower_model(const model::ModelIR& ir) {
  model::infer_shapes(ir);  // validates layer composition and weight shapes
  QuantModel qm;
  qm.ir = ir;
  qm.input_len = ir.input_len;
  qm.input_ch = ir.input_ch;
  qm.weights.reserve(ir.weights.size());
  for (const model::Tensor& w : ir.weights) qm.weights.push_back(model::quantize(w));

  int cur = -1;
  unsigned len = ir.input_len, ch = ir.input_ch;
  double scale = 1.0;  // model input arrives as raw int8 on a unit grid
  unsigned wi = 0;
  int dense_n = 0, conv_n = 0, pool_n = 0;

  for (const model::Layer& layer : ir.layers) {
    if (const auto* d = std::get_if<model::Dense>(&layer)) {
      Stage s;
      s.kind = Stage::Kind::Matmul;
      s.name = "dense" + std::to_string(++dense_n);
      s.m = len;
      s.k_dim = d->in;
      s.n = d->out;
      s.weight = int(wi);
      s.in0 = cur;
      s.in_ch = ch;
      s.in_scale = scale;
      s.w_scale = qm.weights[wi].scale;
      set_requant(s);
      s.out_len = len;
      s.out_ch = d->out;
      qm.stages.push_back(s);
      cur = int(qm.stages.size()) - 1;
      ch = d->out;
      scale = s.out_scale;
      ++wi;
    } else if (const auto* c = std::get_if<model::Conv1D>(&layer)) {
      const MatmulTask t = img2col_1d(*c, len, 1);
      Stage s;
      s.kind = Stage::Kind::Matmul;
      s.name = "conv" + std::to_string(++conv_n);
      s.m = t.m;
      s.k_dim = t.k_dim;
      s.n = t.n;
      s.weight = int(wi);
      s.in0 = cur;
      s.window = c->kernel;
      s.in_ch = c->in_ch;
      s.stride = c->stride;
      s.pad = c->pad == model::Conv1D::Pad::Same ? (c->kernel - 1) / 2 : 0;
      s.in_scale = scale;
      s.w_scale = qm.weights[wi].scale;
      set_requant(s);
      s.out_len = t.m;
      s.out_ch = t.n;
      qm.stages.push_back(s);
      cur = int(qm.stages.size()) - 1;
      len = t.m;
      ch = t.n;
      scale = s.out_scale;
      ++wi;
    } else if (const auto* p = std::get_if<model::MaxPool1D>(&layer)) {
      Stage s;
      s.kind = Stage::Kind::Pool;
      s.name = "pool" + std::to_string(++pool_n);
      s.in0 = cur;
      s.in_ch = ch;
      s.pool_stride = p->stride;
      s.q = identity_qentry();
      s.in_scale = s.out_scale = scale;
      s.out_len = (len + p->stride - 1) / p->stride;
      s.out_ch = ch;
      qm.stages.push_back(s);
      cur = int(qm.stages.size()) - 1;
      len = s.out_len;
    } else if (const auto* a = std::get_if<model::Activation>(&layer)) {
      if (qm.stages.empty() || qm.stages.back().kind != Stage::Kind::Matmul)
        fail(Err::UnsupportedLayer, "activation without a preceding matmul stage");
      Stage& prev = qm.stages.back();
      if (prev.q.act != Act::None)
        fail(Err::UnsupportedLayer, "two activations on one matmul stage");
      switch (a->kind) {
        case model::ActKind::Relu:
          prev.q.act = Act::Relu;
          break;
        case model::ActKind::Gelu:
          bake_gelu(prev);
          break;
        case model::ActKind::Softmax:
          fail(Err::UnsupportedLayer, "standalone softmax is not lowerable");
      }
    } else if (const auto* at = std::get_if<model::Attention>(&layer)) {
      const char* heads[3] = {"attn.q", "attn.k", "attn.v"};
      int proj_idx[3];
      for (int h = 0; h < 3; ++h) {
        Stage s;
        s.kind = Stage::Kind::Matmul;
        s.name = heads[h];
        s.m = at->seq_len;
        s.k_dim = at->d_model;
        s.n = at->d_head;
        s.weight = int(wi + unsigned(h));
        s.in0 = cur;
        s.in_ch = ch;
        s.in_scale = scale;
        s.w_scale = qm.weights[wi + unsigned(h)].scale;
        set_requant(s);
        s.out_len = at->seq_len;
        s.out_ch = at->d_head;
        qm.stages.push_back(s);
        proj_idx[h] = int(qm.stages.size()) - 1;
      }
      Stage qk;
      qk.kind = Stage::Kind::Matmul;
      qk.name = "attn.qk";
      qk.m = at->seq_len;
      qk.k_dim = at->d_head;
      qk.n = at->seq_len;
      qk.in0 = proj_idx[0];
      qk.in1 = proj_idx[1];
      qk.transpose_w = true;
      qk.per_flow = true;
      qk.in_ch = at->d_head;
      qk.in_scale = qm.stages[std::size_t(proj_idx[0])].out_scale;
      qk.w_scale = qm.stages[std::size_t(proj_idx[1])].out_scale;
      set_requant(qk);
      qk.out_len = at->seq_len;
      qk.out_ch = at->seq_len;
      qm.stages.push_back(qk);
      const int qk_idx = int(qm.stages.size()) - 1;

      Stage sm;
      sm.kind = Stage::Kind::Softmax;
      sm.name = "attn.softmax";
      sm.in0 = qk_idx;
      sm.per_flow = true;
      sm.in_ch = at->seq_len;
      sm.in_scale = qm.stages[std::size_t(qk_idx)].out_scale;
      sm.out_scale = 1.0 / 127.0;  // rows sum to one; int8 carries p*127
      sm.out_len = at->seq_len;
      sm.out_ch = at->seq_len;
      qm.stages.push_back(sm);
      const int sm_idx = int(qm.stages.size()) - 1;
      const double arg_scale = sm.in_scale / std::sqrt(double(at->d_head));
      for (int d = 0; d < 256; ++d)
        qm.softmax_exp[std::size_t(d)] =
            std::uint32_t(std::llround(65536.0 * std::exp(-double(d) * arg_scale)));
      qm.has_softmax = true;

      Stage av;
      av.kind = Stage::Kind::Matmul;
      av.name = "attn.av";
      av.m = at->seq_len;
      av.k_dim = at->seq_len;
      av.n = at->d_head;
      av.in0 = sm_idx;
      av.in1 = proj_idx[2];
      av.per_flow = true;
      av.in_ch = at->seq_len;
      av.in_scale = sm.out_scale;
      av.w_scale = qm.stages[std::size_t(proj_idx[2])].out_scale;
      set_requant(av);
      av.out_len = at->seq_len;
      av.out_ch = at->d_head;
      qm.stages.push_back(av);
      cur = int(qm.stages.size()) - 1;
      len = at->seq_len;
      ch = at->d_head;
      scale = av.out_scale;
      wi += 3;
    } else {  // Flatten
      ch = len * ch;
      len = 1;
    }
  }
  return qm;
}

std::vector<ChainEntry> matmul_chain(const QuantModel& qm, unsigned flows) {
  if (flows == 0) fail(Err::ConfigError, "matmul_chain: zero flows");
  std::vector<ChainEntry> out;
  for (const Stage& s : qm.stages) {
    if (s.kind != Stage::Kind::Matmul) continue;
    ChainEntry e;
    e.task.k_dim = s.k_dim;
    e.task.n = s.n;
    e.task.tag = s.name;
    if (s.per_flow) {
      e.task.m = s.m;
      e.repeat = flows;
    } else {
      e.task.m = s.m * flows;
      e.repeat = 1;
    }
    out.push_back(std::move(e));
  }
  return out;
}

Engine place_stage(const Stage& s, unsigned k, double occupancy_threshold) {
  if (s.kind != Stage::Kind::Matmul || s.per_flow) return Engine::Array;
  if (s.k_dim > vpe::kLanes) return Engine::Array;  // must fit one dot lane group
  const double occ =
      double(s.k_dim) * double(std::min(s.n, k)) / (double(k) * double(k));
  return occ < occupancy_threshold ? Engine::Simdu : Engine::Array;
}

}  // namespace ina::compiler
