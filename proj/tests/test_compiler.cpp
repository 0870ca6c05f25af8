// Model IR, quantization, lowering, tiling, placement, and deterministic
// compilation to the two instruction sets.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "ina/asm_text.hpp"
#include "ina/compiler.hpp"
#include "ina/model.hpp"

using namespace ina;
using namespace ina::compiler;
using model::ModelIR;

// ---------------------------------------------------------------------------
// Task tiling

TEST_CASE("tiling splits reductions and output columns into k-wide pieces") {
  TilingPlan p = tile({10, 96, 32, ""}, 32);
  CHECK(p.k_chunks == 3);
  CHECK(p.n_tiles == 1);
  CHECK(p.sub_ops() == 3);
  CHECK(p.aggregations() == 2);

  p = tile({10, 96, 32, ""}, 16);
  CHECK(p.k_chunks == 6);
  CHECK(p.n_tiles == 2);
  CHECK(p.sub_ops() == 12);
  CHECK(p.aggregations() == 10);

  p = tile({7, 8, 8, ""}, 16);
  CHECK(p.k_chunks == 1);
  CHECK(p.n_tiles == 1);
  CHECK(p.aggregations() == 0);

  try {
    tile({0, 8, 8, ""}, 16);
    FAIL("expected ShapeError");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::ShapeError);
  }
  try {
    tile({1, 8, 8, ""}, 0);
    FAIL("expected ConfigError");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::ConfigError);
  }
}

TEST_CASE("sliding-window conv lowering produces the right matmul task") {
  model::Conv1D same{3, 32, 32, 1, model::Conv1D::Pad::Same};
  MatmulTask t = img2col_1d(same, 10, 5);
  CHECK(t.m == 50);
  CHECK(t.k_dim == 96);
  CHECK(t.n == 32);

  model::Conv1D valid{3, 1, 8, 1, model::Conv1D::Pad::Valid};
  CHECK(img2col_1d(valid, 20, 1).m == 18);

  model::Conv1D strided{3, 1, 8, 2, model::Conv1D::Pad::Valid};
  CHECK(img2col_1d(strided, 20, 1).m == 9);
  model::Conv1D strided_same{3, 1, 8, 2, model::Conv1D::Pad::Same};
  CHECK(img2col_1d(strided_same, 20, 1).m == 10);

  try {
    img2col_1d(valid, 2, 1);  // shorter than the kernel
    FAIL("expected ShapeError");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::ShapeError);
  }
}

// ---------------------------------------------------------------------------
// Quantization conventions

TEST_CASE("per-layer requant ratio follows the accumulator-std rule") {
  CHECK(requant_ratio(16) == doctest::Approx(1.0 / (134.0 * 4.0)));
  CHECK(requant_ratio(96) == doctest::Approx(1.0 / (134.0 * std::sqrt(96.0))));
  try {
    requant_ratio(0);
    FAIL("expected ShapeError");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::ShapeError);
  }
}

TEST_CASE("identity finalization is a pure int8 clamp") {
  const QEntry q = identity_qentry();
  CHECK(finalize_lane(56, q) == 56);
  CHECK(finalize_lane(-56, q) == -56);
  CHECK(finalize_lane(1000, q) == 127);
  CHECK(finalize_lane(-1000, q) == -128);
}

TEST_CASE("tensor quantization: scale = max|x|/127, half-even, symmetric") {
  model::Tensor t;
  t.shape = {4, 3};
  t.v = {0.1, -2.54, 1.27, 0.0, 0.005, -0.005, 2.54, -1.0, 0.5, 0.333, -0.333, 2.0};
  const model::QuantTensor q = model::quantize(t);
  CHECK(q.scale == doctest::Approx(2.54 / 127.0));
  for (std::size_t i = 0; i < t.v.size(); ++i) {
    CHECK(std::abs(t.v[i] - double(q.v[i]) * q.scale) <= q.scale / 2 + 1e-12);
    CHECK(q.v[i] >= -127);
    CHECK(q.v[i] <= 127);
  }
  CHECK(q.v[1] == -127);  // the max-magnitude entries hit the rails exactly
  CHECK(q.v[6] == 127);

  model::Tensor neg = t;
  for (auto& x : neg.v) x = -x;
  const model::QuantTensor qn = model::quantize(neg);
  for (std::size_t i = 0; i < t.v.size(); ++i) CHECK(qn.v[i] == -q.v[i]);

  model::Tensor zero;
  zero.shape = {2};
  zero.v = {0.0, 0.0};
  CHECK(model::quantize(zero).scale == 1.0);
}

// ---------------------------------------------------------------------------
// Shape inference

TEST_CASE("shape inference walks every built-in and rejects mismatches") {
  const auto s1 = model::infer_shapes(model::make_usecase1(1));
  REQUIRE(s1.size() == 8);  // input + 7 layers
  CHECK(s1.front().ch == 6);
  CHECK(s1.back().len == 1);
  CHECK(s1.back().ch == 2);

  const auto s2 = model::infer_shapes(model::make_usecase2(1));
  CHECK(s2.front().len == 20);
  CHECK(s2[3].len == 10);   // after first pool
  CHECK(s2[6].len == 5);    // after second pool
  CHECK(s2[9].len == 3);    // ceil-mode third pool
  CHECK(s2[10].ch == 96);   // flatten
  CHECK(s2.back().ch == 162);

  const auto s3 = model::infer_shapes(model::make_usecase3(1));
  CHECK(s3[1].len == 15);
  CHECK(s3[1].ch == 64);  // attention output (seq, d_head)
  CHECK(s3.back().ch == 64);

  ModelIR bad = model::make_usecase1(1);
  bad.layers[0] = model::Dense{5, 12};  // input has 6 channels
  try {
    model::infer_shapes(bad);
    FAIL("expected ShapeError");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::ShapeError);
  }

  ModelIR badw = model::make_usecase1(1);
  badw.weights[0].shape = {12, 6};  // transposed tensor for Dense{6,12}
  try {
    model::infer_shapes(badw);
    FAIL("expected ShapeError");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::ShapeError);
  }
}

// ---------------------------------------------------------------------------
// Lowering to stage chains

TEST_CASE("the per-packet MLP lowers to four fused matmul stages") {
  const QuantModel qm = lower_model(model::make_usecase1(7));
  REQUIRE(qm.stages.size() == 4);
  const unsigned want_k[] = {6, 12, 6, 3};
  const unsigned want_n[] = {12, 6, 3, 2};
  for (int i = 0; i < 4; ++i) {
    CHECK(qm.stages[i].kind == Stage::Kind::Matmul);
    CHECK(qm.stages[i].m == 1);
    CHECK(qm.stages[i].k_dim == want_k[i]);
    CHECK(qm.stages[i].n == want_n[i]);
    CHECK(qm.stages[i].q.act == (i < 3 ? Act::Relu : Act::None));
    // Scale bookkeeping: the output scale divides out the baked requant ratio.
    CHECK(qm.stages[i].out_scale ==
          doctest::Approx(qm.stages[i].in_scale * qm.stages[i].w_scale /
                          requant_ratio(qm.stages[i].k_dim)));
  }
  CHECK(qm.stages[1].in0 == 0);
  CHECK(qm.stages[3].in0 == 2);
  CHECK_FALSE(qm.has_softmax);
}

TEST_CASE("the flow CNN lowers to conv/pool alternation plus the dense head") {
  const QuantModel qm = lower_model(model::make_usecase2(7));
  REQUIRE(qm.stages.size() == 8);
  const Stage::Kind M = Stage::Kind::Matmul, P = Stage::Kind::Pool;
  const Stage::Kind want_kind[] = {M, P, M, P, M, P, M, M};
  for (int i = 0; i < 8; ++i) CHECK(qm.stages[i].kind == want_kind[i]);
  CHECK(qm.stages[0].m == 20);
  CHECK(qm.stages[0].k_dim == 3);
  CHECK(qm.stages[0].window == 3);
  CHECK(qm.stages[2].m == 10);
  CHECK(qm.stages[2].k_dim == 96);
  CHECK(qm.stages[4].m == 5);
  CHECK(qm.stages[4].n == 32);
  CHECK(qm.stages[5].out_len == 3);  // ceil-mode pool of 5
  CHECK(qm.stages[6].k_dim == 96);
  CHECK(qm.stages[6].n == 128);
  CHECK(qm.stages[7].n == 162);
}

TEST_CASE("the flow transformer lowers attention into runtime-weight matmuls") {
  const QuantModel qm = lower_model(model::make_usecase3(7));
  REQUIRE(qm.stages.size() == 8);
  // q, k, v projections share the input and carry static weights.
  for (int i = 0; i < 3; ++i) {
    CHECK(qm.stages[i].kind == Stage::Kind::Matmul);
    CHECK(qm.stages[i].m == 15);
    CHECK(qm.stages[i].k_dim == 16);
    CHECK(qm.stages[i].n == 64);
    CHECK(qm.stages[i].weight >= 0);
    CHECK(qm.stages[i].in0 == -1);
  }
  const Stage& scores = qm.stages[3];
  CHECK(scores.kind == Stage::Kind::Matmul);
  CHECK(scores.m == 15);
  CHECK(scores.k_dim == 64);
  CHECK(scores.n == 15);
  CHECK(scores.weight == -1);
  CHECK(scores.in1 == 1);  // K projection streamed in transposed
  CHECK(scores.transpose_w);
  CHECK(scores.per_flow);
  CHECK(qm.stages[4].kind == Stage::Kind::Softmax);
  const Stage& av = qm.stages[5];
  CHECK(av.m == 15);
  CHECK(av.k_dim == 15);
  CHECK(av.n == 64);
  CHECK(av.in1 == 2);
  CHECK(av.per_flow);
  CHECK_FALSE(av.transpose_w);
  CHECK(qm.stages[6].q.act == Act::GeluLut);
  CHECK(qm.stages[6].q.has_lut);
  CHECK(qm.stages[7].n == 64);
  CHECK(qm.has_softmax);
  // Q16 exp table: exact 1.0 at distance zero, monotone nonincreasing.
  CHECK(qm.softmax_exp[0] == 65536);
  for (int d = 1; d < 256; ++d) CHECK(qm.softmax_exp[d] <= qm.softmax_exp[d - 1]);
}

TEST_CASE("matmul chains fold flows into m except for per-flow attention") {
  const QuantModel q3 = lower_model(model::make_usecase3(7));
  const auto chain1 = matmul_chain(q3, 1);
  REQUIRE(chain1.size() == 7);
  auto dims = [](const ChainEntry& e) {
    return std::array<unsigned, 3>{e.task.m, e.task.k_dim, e.task.n};
  };
  for (int i = 0; i < 3; ++i) {
    CHECK(dims(chain1[i]) == std::array<unsigned, 3>{15, 16, 64});
    CHECK(chain1[i].repeat == 1);
  }
  CHECK(dims(chain1[3]) == std::array<unsigned, 3>{15, 64, 15});
  CHECK(dims(chain1[4]) == std::array<unsigned, 3>{15, 15, 64});
  CHECK(dims(chain1[5]) == std::array<unsigned, 3>{15, 64, 128});
  CHECK(dims(chain1[6]) == std::array<unsigned, 3>{15, 128, 64});

  const auto chain4 = matmul_chain(q3, 4);
  CHECK(dims(chain4[0]) == std::array<unsigned, 3>{60, 16, 64});
  CHECK(chain4[0].repeat == 1);
  CHECK(dims(chain4[3]) == std::array<unsigned, 3>{15, 64, 15});
  CHECK(chain4[3].repeat == 4);  // per-flow scores stay per-flow
  CHECK(chain4[4].repeat == 4);
  CHECK(dims(chain4[5]) == std::array<unsigned, 3>{60, 64, 128});

  const QuantModel q2 = lower_model(model::make_usecase2(7));
  const auto c2 = matmul_chain(q2, 3);
  REQUIRE(c2.size() == 5);
  CHECK(dims(c2[0]) == std::array<unsigned, 3>{60, 3, 32});
  CHECK(dims(c2[1]) == std::array<unsigned, 3>{30, 96, 32});
  CHECK(dims(c2[2]) == std::array<unsigned, 3>{15, 96, 32});
  CHECK(dims(c2[3]) == std::array<unsigned, 3>{3, 96, 128});
  CHECK(dims(c2[4]) == std::array<unsigned, 3>{3, 128, 162});
}

// ---------------------------------------------------------------------------
// Placement

TEST_CASE("narrow reductions go to the vector engine, everything else arrays") {
  Stage s;
  s.kind = Stage::Kind::Matmul;
  s.k_dim = 3;
  s.n = 32;
  CHECK(place_stage(s, 32, 0.15) == Engine::Simdu);  // 96/1024 below threshold
  CHECK(place_stage(s, 16, 0.15) == Engine::Array);  // 48/256 above

  Stage wide = s;
  wide.k_dim = 64;  // larger than one dot-lane group
  wide.n = 1;
  CHECK(place_stage(wide, 32, 0.15) == Engine::Array);

  Stage pf = s;
  pf.per_flow = true;
  CHECK(place_stage(pf, 32, 0.15) == Engine::Array);

  Stage pool;
  pool.kind = Stage::Kind::Pool;
  CHECK(place_stage(pool, 32, 0.15) == Engine::Array);
}

// ---------------------------------------------------------------------------
// Whole-bundle compilation

namespace {
std::string bundle_fingerprint(const CompiledBundle& b) {
  std::string fp;
  for (const auto& p : b.vpe_programs) fp += asmtext::emit(p);
  for (const auto& p : b.ary_programs) fp += asmtext::emit(p);
  fp += std::string(b.vpe_pcache.begin(), b.vpe_pcache.end());
  fp += std::string(b.ary_pcache.begin(), b.ary_pcache.end());
  for (const auto& r : b.regions)
    fp += r.name + "@" + std::to_string(r.base_word) + "+" + std::to_string(r.words) + ";";
  fp += "n" + std::to_string(b.nodes.size()) + "b" + std::to_string(b.buffers.size());
  return fp;
}
}  // namespace

TEST_CASE("compilation is deterministic") {
  const ModelIR ir = model::make_usecase2(42);
  CompileConfig cfg;
  cfg.k = 16;
  cfg.collab = true;
  cfg.flows = 50;
  const CompiledBundle a = compile(ir, cfg);
  const CompiledBundle b = compile(ir, cfg);
  CHECK(bundle_fingerprint(a) == bundle_fingerprint(b));
  CHECK(a.flows_per_block == 50);
  CHECK_FALSE(a.packet);
  CHECK(!a.ary_programs.empty());
  CHECK(!a.nodes.empty());
  CHECK(a.buffers.size() == a.qm.stages.size());
}

TEST_CASE("packet-mode compilation keeps the whole model on the vector engine") {
  const ModelIR ir = model::make_usecase1(42);
  CompileConfig cfg;
  cfg.packet = true;
  cfg.flows = 8;
  const CompiledBundle b = compile(ir, cfg);
  CHECK(b.packet);
  CHECK(!b.vpe_programs.empty());
  CHECK(b.ary_programs.empty());
  for (const auto& n : b.nodes)
    CHECK((n.kind == NodeKind::Vpe || n.kind == NodeKind::Readout));
}

TEST_CASE("collaboration changes the emitted schedule but not the model") {
  const ModelIR ir = model::make_usecase2(42);
  CompileConfig on;
  on.k = 16;
  on.flows = 10;
  CompileConfig off = on;
  off.collab = false;
  const CompiledBundle a = compile(ir, on);
  const CompiledBundle b = compile(ir, off);
  CHECK(a.collab);
  CHECK_FALSE(b.collab);
  // The no-collaboration schedule folds merges into array AGG sweeps.
  std::size_t aggs = 0;
  for (const auto& p : b.ary_programs)
    for (const auto& in : p.instrs)
      if (std::holds_alternative<arype::AggOp>(in)) aggs++;
  CHECK(aggs > 0);
  std::size_t aggs_on = 0;
  for (const auto& p : a.ary_programs)
    for (const auto& in : p.instrs)
      if (std::holds_alternative<arype::AggOp>(in)) aggs_on++;
  CHECK(aggs_on == 0);
}

// ---------------------------------------------------------------------------
// Architecture-class estimators

TEST_CASE("closed-form estimator identities") {
  CHECK(model::vector_delay_estimate(8, 4) == doctest::Approx(std::log2(4.0) / 4.0));
  CHECK(model::vector_throughput_estimate(8, 4) == doctest::Approx(4.0 / std::log2(4.0)));
  CHECK(model::systolic_delay_estimate(16, 4) == doctest::Approx(1.0));
  CHECK(model::systolic_throughput_estimate(16, 4) == doctest::Approx(4.0));
  // The crossover story: big-m matmuls favor the array, tiny ones the vectors.
  CHECK(model::systolic_delay_estimate(4096, 64) < model::vector_delay_estimate(4096, 64) * 10);
}

// ---------------------------------------------------------------------------
// Serialization

TEST_CASE("model save/load round-trips weights bit-exactly") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ina_model_rt";
  fs::create_directories(dir);
  const ModelIR ir = model::make_usecase3(99);
  model::save(ir, dir.string());
  const ModelIR back = model::load((dir / (ir.name + ".json")).string());
  CHECK(back.name == ir.name);
  CHECK(back.input_len == ir.input_len);
  CHECK(back.input_ch == ir.input_ch);
  REQUIRE(back.layers.size() == ir.layers.size());
  REQUIRE(back.weights.size() == ir.weights.size());
  for (std::size_t i = 0; i < ir.weights.size(); ++i) {
    CHECK(back.weights[i].shape == ir.weights[i].shape);
    CHECK(back.weights[i].v == ir.weights[i].v);  // float64 blob: exact
  }
  // Quantization of the reloaded model is therefore identical.
  const QuantModel qa = lower_model(ir);
  const QuantModel qb = lower_model(back);
  REQUIRE(qa.weights.size() == qb.weights.size());
  for (std::size_t i = 0; i < qa.weights.size(); ++i) {
    CHECK(qa.weights[i].v == qb.weights[i].v);
    CHECK(qa.weights[i].scale == qb.weights[i].scale);
  }
  fs::remove_all(dir);

  try {
    model::load("/nonexistent/of/course.json");
    FAIL("expected IoError");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::IoError);
  }
}
