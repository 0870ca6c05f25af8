#include "ina/oracle.hpp"

#include <algorithm>
#include <cstring>

#include "ina/controller.hpp"
#include "ina/numeric.hpp"
#include "ina/quant.hpp"

namespace ina::oracle {

namespace {

void wr_le(std::uint8_t* p, unsigned width, std::uint64_t v) {
  for (unsigned i = 0; i < width; ++i) p[i] = std::uint8_t(v >> (8 * i));
}

extractor::MetaRegister make_meta(const traffic::ParsedHeader& h, traffic::Direction orientation,
                                  std::uint64_t last_ts_ns, bool first, std::uint64_t hash) {
  extractor::MetaRegister m{};
  wr_le(m.data() + extractor::kMetaPktSize, 4, h.pkt_size);
  m[extractor::kMetaFlag] = h.flags;
  m[extractor::kMetaDir] = (!first && h.direction != orientation) ? 1 : 0;
  m[extractor::kMetaDigest] = std::uint8_t(hash & 0xff);
  std::uint64_t intv_us = 0;
  if (!first) {
    const std::uint64_t dt_ns = h.arrival_ns >= last_ts_ns ? h.arrival_ns - last_ts_ns : 0;
    intv_us = std::min<std::uint64_t>(dt_ns / 1000, 0xffffffffull);
  }
  wr_le(m.data() + extractor::kMetaIntv, 4, intv_us);
  m[extractor::kMetaOne] = 1;
  m[extractor::kMetaZero] = 0;
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureGolden

FeatureGolden::FeatureGolden(const extractor::ExtractorConfig& cfg, std::uint32_t depth,
                             std::uint32_t words_per_flow)
    : cfg_(cfg), depth_(depth), words_per_flow_(words_per_flow) {
  if (depth_ == 0 || (depth_ & (depth_ - 1)) != 0)
    fail(Err::ConfigError, "golden table depth must be a nonzero power of two");
  slots_.resize(depth_);
  for (Slot& s : slots_) s.image.assign(words_per_flow_, Word16{});
}

void FeatureGolden::accumulate(Slot& s, const traffic::ParsedHeader& h, bool first,
                               std::uint64_t hash) {
  const extractor::MetaRegister meta = make_meta(h, s.orientation, s.last_ts_ns, first, hash);
  std::uint32_t intv_us = 0;
  for (unsigned i = 0; i < 4; ++i)
    intv_us |= std::uint32_t(meta[extractor::kMetaIntv + i]) << (8 * i);
  const std::uint32_t pkt_idx = first ? 0 : s.count;
  switch (cfg_.capture) {
    case extractor::Capture::AluWord: {
      extractor::HistoryRegister hist{};
      if (!first) std::copy(s.image[0].begin(), s.image[0].end(), hist.begin());
      const extractor::HistoryRegister out = alu_cluster_step(cfg_.program, hist, meta, first);
      std::copy(out.begin(), out.end(), s.image[0].begin());
      break;
    }
    case extractor::Capture::IntervalVector: {
      if (pkt_idx >= cfg_.threshold_n) break;
      const std::uint32_t shifted = (first ? 0 : intv_us) >> cfg_.interval_shift;
      s.image[pkt_idx / 16][pkt_idx % 16] = std::uint8_t(std::min<std::uint32_t>(shifted, 127));
      break;
    }
    case extractor::Capture::PayloadRows: {
      if (pkt_idx >= cfg_.threshold_n) break;
      for (std::size_t i = 0; i < 16; ++i)
        s.image[pkt_idx][i] = std::uint8_t(h.payload_prefix[i] ^ 0x80);
      break;
    }
  }
}

void FeatureGolden::freeze(Slot& s, std::uint32_t idx) {
  GoldenReady r;
  r.tuple = s.tuple;
  r.slot = idx;
  r.words = s.image;
  ready_.push_back(std::move(r));
  in_flight_.push_back(idx);
}

void FeatureGolden::ingest(const traffic::ParsedHeader& h) {
  const traffic::FiveTuple canon = h.tuple.canonical();
  const std::uint64_t hash = extractor::hash_tuple(h.tuple);

  if (cfg_.packet_mode) {
    const std::uint32_t idx = std::uint32_t(pkt_seq_++ & (depth_ - 1));
    Slot& s = slots_[idx];
    if (s.count != 0) {
      dropped_++;
      return;
    }
    s.count = 1;
    s.last_ts_ns = h.arrival_ns;
    s.orientation = traffic::Direction::Forward;
    s.frozen = true;
    s.tuple = canon;
    accepted_++;
    if (cfg_.capture == extractor::Capture::AluWord) {
      extractor::MetaRegister meta = make_meta(h, s.orientation, s.last_ts_ns, true, hash);
      meta[extractor::kMetaDir] = h.direction == traffic::Direction::Forward ? 0 : 1;
      extractor::HistoryRegister hist{};
      const extractor::HistoryRegister out = alu_cluster_step(cfg_.program, hist, meta, true);
      std::copy(out.begin(), out.end(), s.image[0].begin());
    } else {
      accumulate(s, h, true, hash);
    }
    freeze(s, idx);
    return;
  }

  const std::uint32_t idx = extractor::slot_index(hash, depth_);
  Slot& s = slots_[idx];
  if (s.count == 0) {
    s.count = 1;
    s.last_ts_ns = h.arrival_ns;
    s.orientation = h.direction;
    s.frozen = false;
    s.tuple = canon;
    accepted_++;
    accumulate(s, h, true, hash);
    if (cfg_.threshold_n == 1) {
      s.frozen = true;
      freeze(s, idx);
    }
    return;
  }
  if (!(s.tuple == canon)) {
    dropped_++;
    return;
  }
  if (s.frozen) {
    s.count++;
    accepted_++;
    return;
  }
  accumulate(s, h, false, hash);
  s.count++;
  s.last_ts_ns = h.arrival_ns;
  accepted_++;
  if (s.count == cfg_.threshold_n) {
    s.frozen = true;
    freeze(s, idx);
  }
}

GoldenReady FeatureGolden::pop_ready() {
  if (ready_.empty()) fail(Err::OutOfRange, "pop on empty golden ready queue");
  GoldenReady r = std::move(ready_.front());
  ready_.pop_front();
  return r;
}

void FeatureGolden::recycle() {
  if (in_flight_.empty()) fail(Err::OutOfOrderFin, "golden recycle with no in-flight flows");
  Slot& s = slots_[in_flight_.front()];
  in_flight_.pop_front();
  s.count = 0;
  s.frozen = false;
}

// ---------------------------------------------------------------------------
// Reference forward pass

std::vector<std::int64_t> matmul_i8(const std::int8_t* a, const std::int8_t* b, unsigned m,
                                    unsigned k, unsigned n) {
  std::vector<std::int64_t> acc(std::size_t(m) * n, 0);
  for (unsigned r = 0; r < m; ++r)
    for (unsigned d = 0; d < k; ++d) {
      const std::int64_t av = a[std::size_t(r) * k + d];
      if (av == 0) continue;
      for (unsigned j = 0; j < n; ++j) acc[std::size_t(r) * n + j] += av * b[std::size_t(d) * n + j];
    }
  return acc;
}

std::vector<StageOut> reference_forward(const compiler::QuantModel& qm,
                                        const std::vector<std::int8_t>& input) {
  if (input.size() != std::size_t(qm.input_len) * qm.input_ch)
    fail(Err::ShapeError, "reference input size does not match the model input shape");

  std::vector<StageOut> outs;
  outs.reserve(qm.stages.size());

  auto src_of = [&](int idx) {
    struct View {
      unsigned rows, cols;
      const std::int8_t* v;
    };
    if (idx < 0) return View{qm.input_len, qm.input_ch, input.data()};
    const StageOut& s = outs[std::size_t(idx)];
    return View{s.rows, s.cols, s.v.data()};
  };

  for (const compiler::Stage& s : qm.stages) {
    StageOut o;
    o.rows = s.out_len;
    o.cols = s.out_ch;
    switch (s.kind) {
      case compiler::Stage::Kind::Matmul: {
        const auto src = src_of(s.in0);
        std::vector<std::int8_t> a(std::size_t(s.m) * s.k_dim, 0);
        if (s.window > 1 || s.pad > 0) {
          // Sliding conv windows over src rows, zero beyond either edge.
          for (unsigned r = 0; r < s.m; ++r) {
            const int start = int(r * s.stride) - int(s.pad);
            for (unsigned w = 0; w < s.window; ++w) {
              const int row = start + int(w);
              if (row < 0 || row >= int(src.rows)) continue;
              for (unsigned c = 0; c < s.in_ch; ++c)
                a[std::size_t(r) * s.k_dim + std::size_t(w) * s.in_ch + c] =
                    src.v[std::size_t(row) * src.cols + c];
            }
          }
        } else if (s.k_dim == src.cols) {
          if (s.m != src.rows) fail(Err::ShapeError, "row-wise stage disagrees with its source");
          std::copy(src.v, src.v + std::size_t(s.m) * s.k_dim, a.begin());
        } else {
          if (s.m != 1 || s.k_dim != src.rows * src.cols)
            fail(Err::ShapeError, "flattened stage disagrees with its source");
          std::copy(src.v, src.v + s.k_dim, a.begin());
        }

        std::vector<std::int64_t> acc;
        if (s.in1 >= 0) {
          const StageOut& b = outs[std::size_t(s.in1)];
          acc.assign(std::size_t(s.m) * s.n, 0);
          for (unsigned r = 0; r < s.m; ++r)
            for (unsigned j = 0; j < s.n; ++j) {
              std::int64_t t = 0;
              for (unsigned d = 0; d < s.k_dim; ++d) {
                const std::int8_t bv = s.transpose_w ? b.v[std::size_t(j) * b.cols + d]
                                                     : b.v[std::size_t(d) * b.cols + j];
                t += std::int64_t(a[std::size_t(r) * s.k_dim + d]) * bv;
              }
              acc[std::size_t(r) * s.n + j] = t;
            }
        } else {
          const auto& w = qm.weights[std::size_t(s.weight)];
          if (w.shape.size() != 2 || w.shape[0] != s.k_dim || w.shape[1] != s.n)
            fail(Err::ShapeError, "weight tensor shape disagrees with the stage");
          acc = matmul_i8(a.data(), w.v.data(), s.m, s.k_dim, s.n);
        }
        o.v.resize(acc.size());
        for (std::size_t i = 0; i < acc.size(); ++i)
          o.v[i] = std::int8_t(finalize_lane(acc[i], s.q));
        break;
      }
      case compiler::Stage::Kind::Pool: {
        const auto src = src_of(s.in0);
        const unsigned stride = s.pool_stride;
        const unsigned orows = (src.rows + stride - 1) / stride;
        o.v.resize(std::size_t(orows) * src.cols);
        for (unsigned r = 0; r < orows; ++r)
          for (unsigned c = 0; c < src.cols; ++c) {
            std::int8_t mx = src.v[std::size_t(r) * stride * src.cols + c];
            for (unsigned i = 1; i < stride && r * stride + i < src.rows; ++i)
              mx = std::max(mx, src.v[std::size_t(r * stride + i) * src.cols + c]);
            o.v[std::size_t(r) * src.cols + c] = mx;
          }
        break;
      }
      case compiler::Stage::Kind::Softmax: {
        const auto src = src_of(s.in0);
        o.v.resize(std::size_t(src.rows) * src.cols);
        for (unsigned r = 0; r < src.rows; ++r) {
          const auto q =
              ctrl::softmax_row_q16(src.v + std::size_t(r) * src.cols, src.cols, qm.softmax_exp);
          for (unsigned j = 0; j < src.cols; ++j)
            o.v[std::size_t(r) * src.cols + j] = std::int8_t(
                sat_i8(round_half_even_rshift(std::int64_t(q[j]) * 127, 16)));
        }
        break;
      }
    }
    if (o.v.size() != std::size_t(o.rows) * o.cols)
      fail(Err::ShapeError, "stage '" + s.name + "' produced a mismatched output shape");
    outs.push_back(std::move(o));
  }
  return outs;
}

std::vector<std::int64_t> verdict_scores(const StageOut& fin, bool colsum) {
  std::vector<std::int64_t> s(fin.cols, 0);
  if (colsum) {
    for (unsigned r = 0; r < fin.rows; ++r)
      for (unsigned c = 0; c < fin.cols; ++c) s[c] += fin.v[std::size_t(r) * fin.cols + c];
  } else if (fin.rows > 0) {
    for (unsigned c = 0; c < fin.cols; ++c)
      s[c] = fin.v[std::size_t(fin.rows - 1) * fin.cols + c];
  }
  return s;
}

unsigned argmax_label(const std::vector<std::int64_t>& scores) {
  unsigned label = 0;
  for (unsigned j = 1; j < scores.size(); ++j)
    if (scores[j] > scores[label]) label = j;
  return label;
}

// ---------------------------------------------------------------------------
// Boundary comparison

std::vector<std::uint8_t> peek_bytes(const fabric::Fabric& fab, fabric::MemAddr addr,
                                     std::size_t len) {
  const fabric::MemoryBank& bank = fab.bank(addr.bank);
  const auto& store = bank.committed();
  std::vector<std::uint8_t> out(len);
  for (std::size_t i = 0; i < len; ++i) {
    const std::uint64_t byte = addr.byte + i;
    const std::uint64_t word = byte / fabric::kWordBytes;
    if (word >= store.size()) fail(Err::BadAddress, "peek beyond bank end");
    out[i] = store[word][byte % fabric::kWordBytes];
  }
  return out;
}

CompareResult compare_block(const compiler::CompiledBundle& b, const fabric::Fabric& fab,
                            const std::vector<std::vector<std::int8_t>>& inputs,
                            const std::vector<unsigned>& flows) {
  CompareResult res;
  for (const unsigned f : flows) {
    if (f >= inputs.size()) fail(Err::BadIndex, "flow id beyond the input list");
    const std::vector<StageOut> ref = reference_forward(b.qm, inputs[f]);
    for (const compiler::StageBuffer& sb : b.buffers) {
      if (sb.stage == -1 && !b.gathered) continue;
      const std::int8_t* want_v = nullptr;
      unsigned rows = sb.rows_per_flow, cols = sb.row_bytes;
      if (sb.stage == -1) {
        want_v = inputs[f].data();
      } else {
        const StageOut& so = ref[std::size_t(sb.stage)];
        if (so.rows != rows || so.cols != cols)
          fail(Err::ShapeError, "stage buffer shape disagrees with the reference");
        want_v = so.v.data();
      }
      fabric::MemAddr base = sb.base;
      base.byte += f * sb.flow_stride;
      for (unsigned r = 0; r < rows; ++r) {
        const auto got = peek_bytes(fab, {base.bank, base.byte + r * sb.row_stride}, cols);
        for (unsigned c = 0; c < cols; ++c) {
          const int g = std::int8_t(got[c]);
          const int w = want_v[std::size_t(r) * cols + c];
          res.bytes_checked++;
          if (g != w && res.ok) {
            res.ok = false;
            res.first = {sb.stage, f, r, c, g, w};
          }
        }
      }
    }
  }
  return res;
}

}  // namespace ina::oracle
