// Machine-level half of the compiler: fabric region layout, vector/array
// program emission, and the per-block launch DAG.
//
// Layout conventions:
//   * Convolution inputs live in guard-row layouts: `pad` zero rows lead the
//     region and every flow cell ends in guard rows, so a sliding window can
//     read straight through flow edges and pick up zeros.
//   * Multi-chunk matmul outputs are written by fixed 8-lane stores, so their
//     rows pad to a 16-byte stride; pool-consumed rows pad to 8.
//   * Reductions wider than the array accumulate int32 partials in a
//     ping-pong arena (set A in compute bank 0, set B in bank 1). With
//     collaboration the vector engine drains one set while the array fills
//     the other; without it the array stalls and merges partials itself with
//     plain loads and standalone matmuls.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <tuple>

#include "ina/asm_text.hpp"
#include "ina/compiler.hpp"

namespace ina::compiler {

namespace {

constexpr std::uint32_t kWB = fabric::kWordBytes;
constexpr std::uint32_t kPartialRow = 64;  // 16 int32 lanes per partial row
constexpr unsigned kStoreQuantum = vpe::kLanes;

std::uint32_t ceil_to(std::uint32_t v, std::uint32_t q) { return (v + q - 1) / q * q; }

unsigned largest_divisor_leq(unsigned n, unsigned cap) {
  if (n == 0) return 1;
  cap = std::min(cap, n);
  for (unsigned d = std::max(1u, cap); d > 1; --d)
    if (n % d == 0) return d;
  return 1;
}

/// Where one stage's (or the model input's) int8 data sits in fabric.
struct Layout {
  fabric::MemAddr region{};  // includes leading guard rows
  fabric::MemAddr first{};   // first valid byte of flow 0
  std::uint32_t row_bytes = 0;
  std::uint32_t row_stride = 0;
  std::uint32_t rows_pf = 0;
  std::uint32_t flow_stride = 0;
  std::uint32_t lead_rows = 0;
  bool guarded = false;
};

/// How an array stage streams its input operand.
struct SrcView {
  fabric::MemAddr base{};  // flow 0, stream row 0, chunk 0 (pad included)
  std::uint32_t row_stride = 0;
  std::uint32_t rows_pf = 0;
  std::uint32_t flow_stride = 0;
  bool contiguous = false;  // rows of consecutive flows are back to back
};

class Builder {
 public:
  Builder(const model::ModelIR& ir, const CompileConfig& cfg) : cfg_(cfg) {
    if (cfg_.k == 0 || cfg_.k > 64) fail(Err::ConfigError, "array width must be 1..64");
    qm_ = lower_model(ir);
    out_.packet = cfg_.packet;
    out_.k = cfg_.k;
    out_.collab = cfg_.collab;
    out_.chain = matmul_chain(qm_, std::max(1u, cfg_.flows));
  }

  CompiledBundle build() {
    if (cfg_.packet)
      build_packet();
    else
      build_flow();
    out_.qm = qm_;
    return std::move(out_);
  }

 private:
  // ---- region planning -----------------------------------------------------

  std::uint32_t cursor_[2] = {0, 0};

  fabric::MemAddr alloc(const std::string& name, std::uint32_t bytes, bool zero,
                        int force_bank = -1) {
    const std::uint32_t words = bytes / kWB + 2;  // tail margin for 8-byte loads
    int bank = force_bank;
    if (bank < 0) bank = cursor_[0] <= cursor_[1] ? 0 : 1;
    if (cursor_[bank] + words > cfg_.compute_words) {
      bank ^= 1;
      if (force_bank >= 0 || cursor_[bank] + words > cfg_.compute_words)
        fail(Err::OutOfMemory, "compute banks cannot hold region " + name);
    }
    RegionSpec r;
    r.name = name;
    r.bank = bank == 0 ? fabric::BankId::Compute0 : fabric::BankId::Compute1;
    r.base_word = cursor_[bank];
    r.words = words;
    r.zero = zero;
    out_.regions.push_back(r);
    cursor_[bank] += words;
    return {r.bank, r.base_word * kWB};
  }

  // Guard-row needs of the convolution consumers of stage `idx` (-1 = input).
  void conv_guards(int idx, std::uint32_t rows_pf, std::uint32_t* lead,
                   std::uint32_t* trail) const {
    *lead = 0;
    *trail = 0;
    for (const Stage& c : qm_.stages) {
      if (c.kind != Stage::Kind::Matmul || c.in0 != idx || c.window <= 1) continue;
      const std::int64_t t = std::int64_t(c.m - 1) * c.stride + c.window - c.pad -
                             std::int64_t(rows_pf);
      *lead = std::max<std::uint32_t>(*lead, c.pad);
      *trail = std::max<std::uint32_t>(*trail, t > 0 ? std::uint32_t(t) : 0);
    }
  }

  bool pool_consumed(int idx) const {
    for (const Stage& c : qm_.stages)
      if (c.kind == Stage::Kind::Pool && c.in0 == idx) return true;
    return false;
  }

  Layout plan_layout(int idx, const std::string& name, std::uint32_t rows_pf,
                     std::uint32_t row_bytes, bool eight_quanta_writer) {
    Layout L;
    L.rows_pf = rows_pf;
    L.row_bytes = row_bytes;
    std::uint32_t lead = 0, trail = 0;
    conv_guards(idx, rows_pf, &lead, &trail);
    if (lead + trail > 0) {
      L.guarded = true;
      if (eight_quanta_writer && row_bytes % kStoreQuantum != 0)
        fail(Err::ConfigError, "row shape " + std::to_string(row_bytes) +
                                   " cannot share guard rows with 8-byte stores");
      L.row_stride = row_bytes;
      L.lead_rows = lead;
      const std::uint32_t g = std::max(lead, trail);
      L.flow_stride = (rows_pf + g) * row_bytes;
      L.region = alloc(name, lead * row_bytes + B_ * L.flow_stride, true);
      L.first = {L.region.bank, L.region.byte + lead * row_bytes};
    } else {
      L.row_stride = pool_consumed(idx) ? ceil_to(row_bytes, kStoreQuantum)
                                        : ceil_to(row_bytes, kWB);
      L.flow_stride = rows_pf * L.row_stride;
      L.region = alloc(name, B_ * L.flow_stride, false);
      L.first = L.region;
    }
    return L;
  }

  const Layout& layout_of(int idx) const {
    if (idx < 0) return input_;
    return layouts_.at(std::size_t(idx));
  }

  // ---- program bookkeeping -------------------------------------------------

  int add_vpe(vpe::VpeProgram p) {
    p.validate(cfg_.vpe.drf, cfg_.vpe.adrf);
    if (p.words.size() > cfg_.vpe.icache_words)
      fail(Err::CapacityError, "vector program exceeds iCache");
    const std::string key = asmtext::emit(p);
    auto it = vkeys_.find(key);
    if (it != vkeys_.end()) return it->second;
    out_.vpe_programs.push_back(std::move(p));
    const int idx = int(out_.vpe_programs.size()) - 1;
    vkeys_.emplace(key, idx);
    return idx;
  }

  int add_ary(arype::AryProgram p) {
    p.validate(cfg_.k, cfg_.ary.adrf);
    if (p.instrs.size() > cfg_.ary.icache_instrs)
      fail(Err::CapacityError, "array program exceeds iCache");
    const std::string key = asmtext::emit(p);
    auto it = akeys_.find(key);
    if (it != akeys_.end()) return it->second;
    out_.ary_programs.push_back(std::move(p));
    const int idx = int(out_.ary_programs.size()) - 1;
    akeys_.emplace(key, idx);
    return idx;
  }

  int add_node(LaunchNode n) {
    if (!cfg_.collab && !out_.nodes.empty())
      n.deps.push_back(std::int32_t(out_.nodes.size()) - 1);
    std::sort(n.deps.begin(), n.deps.end());
    n.deps.erase(std::unique(n.deps.begin(), n.deps.end()), n.deps.end());
    out_.nodes.push_back(std::move(n));
    return int(out_.nodes.size()) - 1;
  }

  // Producer nodes per flow, per data source (index 0 = input, 1+si = stage).
  std::vector<std::int32_t> producers(int src, unsigned f0, unsigned count) const {
    const auto& per_flow = producers_.at(std::size_t(src + 1));
    std::vector<std::int32_t> out;
    for (unsigned f = f0; f < f0 + count; ++f)
      for (std::int32_t n : per_flow.at(f)) out.push_back(n);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  void record(int src, unsigned f0, unsigned count, std::int32_t node) {
    auto& per_flow = producers_.at(std::size_t(src + 1));
    for (unsigned f = f0; f < f0 + count; ++f) per_flow.at(f).push_back(node);
  }

  // ---- weight tiles --------------------------------------------------------

  std::uint32_t tile_offset(int si, unsigned c, unsigned t) {
    const auto key = std::make_tuple(si, c, t);
    auto it = tiles_.find(key);
    if (it != tiles_.end()) return it->second;
    const Stage& s = qm_.stages[std::size_t(si)];
    const model::QuantTensor& w = qm_.weights.at(std::size_t(s.weight));
    const unsigned k = cfg_.k;
    const unsigned a = std::min(k, s.k_dim - c * k);
    const unsigned b = std::min(k, s.n - t * k);
    const std::uint32_t off = std::uint32_t(out_.ary_pcache.size());
    for (unsigned r = 0; r < a; ++r)
      for (unsigned j = 0; j < b; ++j)
        out_.ary_pcache.push_back(w.v[std::size_t(c * k + r) * s.n + t * k + j]);
    tiles_.emplace(key, off);
    return off;
  }

  // ---- source views --------------------------------------------------------

  SrcView src_view(const Stage& s) const {
    const Layout& L = layout_of(s.in0);
    SrcView v;
    if (s.window > 1 || s.pad > 0) {
      if (L.lead_rows < s.pad)
        fail(Err::ConfigError, "input region lacks leading guard rows");
      v.base = {L.first.bank, L.first.byte - s.pad * L.row_bytes};
      v.row_stride = s.stride * L.row_bytes;
      v.rows_pf = s.m;
      v.flow_stride = L.flow_stride;
      v.contiguous = false;
    } else if (s.k_dim == L.row_bytes) {
      v.base = L.first;
      v.row_stride = L.row_stride;
      v.rows_pf = s.m;
      v.flow_stride = L.flow_stride;
      v.contiguous = v.flow_stride == v.rows_pf * v.row_stride;
    } else if (s.k_dim == L.rows_pf * L.row_bytes && L.row_stride == L.row_bytes &&
               s.m == 1) {
      // Flattened read: the reduction spans the flow's packed rows.
      v.base = L.first;
      v.row_stride = L.flow_stride;
      v.rows_pf = 1;
      v.flow_stride = L.flow_stride;
      v.contiguous = true;
    } else {
      fail(Err::ShapeError, "stage " + s.name + " cannot address its input rows");
    }
    return v;
  }

  // ---- vector-engine program pieces ----------------------------------------

  /// Chunk-merge strip: loads int32 partial rows of every chunk, accumulates
  /// on the adder lanes and stores finalized int8 rows in 8-byte halves.
  /// Registers: d1..d{chunks} loads, d{chunks+1} accumulator, d31 zero;
  /// a0..a{chunks-1} partial bases, a{chunks} output cursor.
  int strip_program(unsigned chunks, std::uint32_t rows, unsigned halves,
                    const std::vector<std::int32_t>& store_incs, const QEntry& q) {
    vpe::VpeProgram p;
    p.qtable = {q};
    const unsigned pitch = chunks + 3;
    const std::uint8_t acc = std::uint8_t(chunks + 1);
    p.words.resize(std::size_t(rows) * halves * pitch + 1);
    std::size_t store_i = 0;
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (unsigned h = 0; h < halves; ++h) {
        const std::size_t w0 = (std::size_t(r) * halves + h) * pitch;
        for (unsigned c = 0; c < chunks; ++c) {
          vpe::MifOp ld;
          ld.kind = vpe::MifOp::Kind::Ld;
          ld.addr = std::uint8_t(c);
          ld.dst = std::uint8_t(1 + c);
          ld.width = vpe::ElemWidth::W4;
          ld.channel = std::uint8_t(c % 2);
          ld.post_inc = 32;
          p.words[w0 + c].mif = ld;
        }
        for (unsigned c = 1; c < chunks; ++c) {
          vpe::VuOp v;
          v.kind = vpe::VuOp::Kind::Vadd;
          v.src_a = c == 1 ? std::uint8_t(1) : acc;
          v.src_b = std::uint8_t(1 + c);
          v.dst = acc;
          p.words[w0 + 2 + c].vu = v;
        }
        vpe::VuOp st;
        st.kind = vpe::VuOp::Kind::Vadd;
        st.src_a = acc;
        st.src_b = 31;
        st.dst_mem = true;
        st.dst = std::uint8_t(chunks);
        st.qidx = 0;
        st.post_inc = store_incs.at(store_i++);
        p.words[w0 + chunks + 2].vu = st;
      }
    }
    p.words.back().fin = true;
    return add_vpe(std::move(p));
  }

  std::vector<std::int32_t> strip_incs(
      std::uint32_t rows, unsigned halves,
      const std::function<std::uint32_t(std::uint32_t)>& out_byte) const {
    std::vector<std::int32_t> incs;
    incs.reserve(std::size_t(rows) * halves);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (unsigned h = 0; h < halves; ++h) {
        const std::int64_t cur = std::int64_t(out_byte(r)) + h * 8;
        const std::int64_t nxt = (h + 1 < halves) ? cur + 8
                                 : (r + 1 < rows) ? std::int64_t(out_byte(r + 1))
                                                  : cur;
        incs.push_back(std::int32_t(nxt - cur));
      }
    return incs;
  }

  /// Max-pool over row pairs (ceil mode): for every 8-byte output chunk, load
  /// the even/odd row chunks double-buffered and store the elementwise max
  /// one chunk behind the loads. Registers: d1/d2 even rows, d3/d4 odd rows;
  /// a0 even cursor, a1 odd cursor, a2 output cursor.
  int pool_program(const std::vector<std::uint32_t>& e_addr,
                   const std::vector<std::int64_t>& o_addr,
                   const std::vector<std::uint32_t>& out_addr) {
    vpe::VpeProgram p;
    p.qtable = {identity_qentry()};
    const std::size_t G = e_addr.size();
    p.words.resize(3 * G + 2);
    for (std::size_t g = 0; g < G; ++g) {
      vpe::MifOp le;
      le.kind = vpe::MifOp::Kind::Ld;
      le.addr = 0;
      le.dst = std::uint8_t(1 + g % 2);
      le.width = vpe::ElemWidth::B1;
      le.channel = 0;
      le.post_inc =
          g + 1 < G ? std::int32_t(e_addr[g + 1]) - std::int32_t(e_addr[g]) : 0;
      p.words[3 * g].mif = le;
      if (o_addr[g] >= 0) {
        std::int64_t next = o_addr[g];
        for (std::size_t j = g + 1; j < G; ++j)
          if (o_addr[j] >= 0) {
            next = o_addr[j];
            break;
          }
        vpe::MifOp lo;
        lo.kind = vpe::MifOp::Kind::Ld;
        lo.addr = 1;
        lo.dst = std::uint8_t(3 + g % 2);
        lo.width = vpe::ElemWidth::B1;
        lo.channel = 1;
        lo.post_inc = std::int32_t(next - o_addr[g]);
        p.words[3 * g + 1].mif = lo;
      }
      if (g >= 1) place_pool_max(p, 3 * g + 2, g - 1, o_addr, out_addr, G);
    }
    place_pool_max(p, 3 * G, G - 1, o_addr, out_addr, G);
    p.words[3 * G + 1].fin = true;
    return add_vpe(std::move(p));
  }

  void place_pool_max(vpe::VpeProgram& p, std::size_t word, std::size_t g,
                      const std::vector<std::int64_t>& o_addr,
                      const std::vector<std::uint32_t>& out_addr, std::size_t G) {
    vpe::VuOp mx;
    mx.kind = vpe::VuOp::Kind::Vmax;
    mx.src_a = std::uint8_t(1 + g % 2);
    mx.src_b = o_addr[g] >= 0 ? std::uint8_t(3 + g % 2) : std::uint8_t(1 + g % 2);
    mx.dst_mem = true;
    mx.dst = 2;
    mx.qidx = 0;
    mx.post_inc =
        g + 1 < G ? std::int32_t(out_addr[g + 1]) - std::int32_t(out_addr[g]) : 0;
    p.words[word].vu = mx;
  }

  // ---- flow-granularity build ----------------------------------------------

  unsigned B_ = 1;
  Layout input_;
  std::vector<Layout> layouts_;
  fabric::MemAddr arena_[2]{};
  bool has_arena_ = false;
  std::vector<std::vector<std::vector<std::int32_t>>> producers_;
  int last_strip_[2] = {-1, -1};
  unsigned pingpong_ = 0;
  std::map<std::tuple<int, unsigned, unsigned>, std::uint32_t> tiles_;
  std::map<std::string, int> vkeys_, akeys_;

  bool plan(unsigned B) {
    B_ = B;
    out_.regions.clear();
    cursor_[0] = cursor_[1] = 0;
    layouts_.clear();
    has_arena_ = false;
    for (const Stage& s : qm_.stages) {
      if (s.kind != Stage::Kind::Matmul) continue;
      if (tile({s.m, s.k_dim, s.n, s.name}, cfg_.k).k_chunks > 1) has_arena_ = true;
    }
    try {
      if (has_arena_) {
        arena_[0] = alloc("arena.a", cfg_.arena_bytes, false, 0);
        arena_[1] = alloc("arena.b", cfg_.arena_bytes, false, 1);
      }
      input_ = plan_layout(-1, "input", qm_.input_len, qm_.input_ch, false);
      for (std::size_t si = 0; si < qm_.stages.size(); ++si) {
        const Stage& s = qm_.stages[si];
        bool eight = false;
        if (s.kind == Stage::Kind::Pool) {
          eight = true;
        } else if (s.kind == Stage::Kind::Matmul) {
          const TilingPlan tp = tile({s.m, s.k_dim, s.n, s.name}, cfg_.k);
          eight = tp.k_chunks > 1 ||
                  place_stage(s, cfg_.k, cfg_.occupancy_threshold) == Engine::Simdu;
        }
        layouts_.push_back(plan_layout(int(si), s.name, s.out_len, s.out_ch, eight));
      }
    } catch (const SimError& e) {
      if (e.code() == Err::OutOfMemory) return false;
      throw;
    }
    return true;
  }

  void build_flow() {
    const unsigned flows = std::max(1u, cfg_.flows);
    unsigned B = largest_divisor_leq(flows, cfg_.max_block);
    while (!plan(B)) {
      if (B == 1)
        fail(Err::OutOfMemory,
             "model does not fit the compute banks at one flow per block");
      B = largest_divisor_leq(flows, B - 1);
    }
    out_.flows_per_block = B_;
    out_.gathered = true;
    out_.input_base = input_.first;
    out_.input_flow_stride = input_.flow_stride;
    const std::uint32_t in_bytes = qm_.input_len * qm_.input_ch;
    out_.capture_words = (in_bytes + kWB - 1) / kWB;

    producers_.assign(qm_.stages.size() + 1, {});
    for (auto& p : producers_) p.assign(B_, {});

    for (unsigned f = 0; f < B_; ++f) {
      LaunchNode n;
      n.kind = NodeKind::Gather;
      n.flow = int(f);
      n.dst = {input_.first.bank, input_.first.byte + f * input_.flow_stride};
      n.words = out_.capture_words;
      n.rows = input_.rows_pf;
      n.cols = input_.row_bytes;
      n.row_stride = input_.row_stride;
      n.label = "gather.f" + std::to_string(f);
      record(-1, f, 1, add_node(std::move(n)));
    }

    for (std::size_t si = 0; si < qm_.stages.size(); ++si) {
      const Stage& s = qm_.stages[si];
      switch (s.kind) {
        case Stage::Kind::Matmul:
          if (s.per_flow)
            emit_perflow_matmul(int(si), s);
          else if (place_stage(s, cfg_.k, cfg_.occupancy_threshold) == Engine::Simdu)
            emit_simdu_matmul(int(si), s);
          else
            emit_batched_matmul(int(si), s);
          break;
        case Stage::Kind::Pool:
          emit_pool(int(si), s);
          break;
        case Stage::Kind::Softmax:
          emit_softmax(int(si), s);
          break;
      }
    }

    {
      StageBuffer ib;
      ib.stage = -1;
      ib.base = input_.first;
      ib.row_bytes = input_.row_bytes;
      ib.row_stride = input_.row_stride;
      ib.rows_per_flow = input_.rows_pf;
      ib.flow_stride = input_.flow_stride;
      out_.buffers.push_back(ib);
      for (std::size_t si = 0; si < qm_.stages.size(); ++si) {
        const Layout& L = layouts_[si];
        StageBuffer b;
        b.stage = int(si);
        b.base = L.first;
        b.row_bytes = L.row_bytes;
        b.row_stride = L.row_stride;
        b.rows_per_flow = L.rows_pf;
        b.flow_stride = L.flow_stride;
        out_.buffers.push_back(b);
      }
    }

    const int last = int(qm_.stages.size()) - 1;
    const Layout& F = layouts_.back();
    for (unsigned f = 0; f < B_; ++f) {
      LaunchNode n;
      n.kind = NodeKind::Readout;
      n.flow = int(f);
      n.stage = last;
      n.src = {F.first.bank, F.first.byte + f * F.flow_stride};
      n.rows = F.rows_pf;
      n.cols = F.row_bytes;
      n.row_stride = F.row_stride;
      n.colsum = F.rows_pf > 1;
      n.deps = producers(last, f, 1);
      n.label = "readout.f" + std::to_string(f);
      add_node(std::move(n));
    }
  }

  // ---- batched matmul (static weight tiles) --------------------------------

  struct Seg {
    unsigned f0 = 0, nflows = 0;     // flows covered
    std::uint32_t r0 = 0, rows = 0;  // stream rows covered
    bool by_flow = false;            // segmented per flow (guarded reads)
  };

  std::vector<Seg> segments(const Stage& s, const SrcView& v, unsigned chunks) const {
    std::vector<Seg> segs;
    if (!v.contiguous) {
      unsigned G = B_;
      if (chunks > 1) {
        const std::uint32_t per_flow = chunks * s.m * kPartialRow;
        unsigned cap = per_flow ? unsigned(cfg_.arena_bytes / per_flow) : B_;
        const unsigned halves = s.n > kStoreQuantum ? 2 : 1;
        const std::size_t wpr = std::size_t(halves) * (chunks + 3);
        cap = std::min<unsigned>(
            cap,
            unsigned((cfg_.vpe.icache_words - 2) / std::max<std::size_t>(1, s.m * wpr)));
        G = largest_divisor_leq(B_, std::max(1u, cap));
        if (std::uint64_t(chunks) * s.m * G * kPartialRow > cfg_.arena_bytes)
          fail(Err::OutOfMemory, "partial arena cannot hold one flow of " + s.name);
      }
      for (unsigned f = 0; f < B_; f += G)
        segs.push_back({f, G, f * s.m, G * s.m, true});
    } else {
      const std::uint32_t l_total = B_ * v.rows_pf;
      std::uint32_t l_blk = l_total;
      if (chunks > 1) {
        l_blk = std::min<std::uint32_t>(l_blk, cfg_.arena_bytes / (chunks * kPartialRow));
        const unsigned halves = s.n > kStoreQuantum ? 2 : 1;
        l_blk = std::min<std::uint32_t>(
            l_blk, std::uint32_t((cfg_.vpe.icache_words - 2) / (halves * (chunks + 3))));
        if (l_blk == 0)
          fail(Err::OutOfMemory, "partial arena cannot hold one row of " + s.name);
      }
      for (std::uint32_t r = 0; r < l_total; r += l_blk) {
        Seg g;
        g.r0 = r;
        g.rows = std::min(l_blk, l_total - r);
        g.f0 = r / v.rows_pf;
        g.nflows = (r + g.rows - 1) / v.rows_pf - g.f0 + 1;
        segs.push_back(g);
      }
    }
    return segs;
  }

  void emit_batched_matmul(int si, const Stage& s) {
    const TilingPlan tp = tile({s.m, s.k_dim, s.n, s.name}, cfg_.k);
    const SrcView v = src_view(s);
    const Layout& O = layouts_[std::size_t(si)];
    const unsigned k = cfg_.k;
    const auto segs = segments(s, v, tp.k_chunks);

    for (const Seg& g : segs) {
      for (unsigned t = 0; t < tp.n_tiles; ++t) {
        const unsigned b = std::min(k, s.n - t * k);
        auto src_addr = [&](unsigned c) {
          return fabric::MemAddr{
              v.base.bank, v.base.byte + c * k +
                               (g.by_flow ? g.f0 * v.flow_stride : g.r0 * v.row_stride)};
        };
        auto out_byte = [&, t](std::uint32_t r) {
          if (g.by_flow) {
            const unsigned f = g.f0 + unsigned(r / s.m);
            return O.first.byte + f * O.flow_stride + (r % s.m) * O.row_stride + t * k;
          }
          return O.first.byte + (g.r0 + r) * O.row_stride + t * k;
        };
        const std::string tag = s.name + ".t" + std::to_string(t) + ".s" +
                                std::to_string(g.by_flow ? g.f0 : g.r0);

        if (tp.k_chunks == 1) {
          arype::AryProgram p;
          p.qtable = {s.q};
          arype::LdOp ld;
          ld.src = arype::LdOp::Src::PCache;
          ld.pcache_off = tile_offset(si, 0, t);
          ld.rows = std::uint16_t(s.k_dim);
          ld.cols = std::uint16_t(b);
          p.instrs.emplace_back(ld);
          arype::MmOp mm;
          mm.l = g.rows;
          mm.src_areg = 0;
          mm.dst_areg = 1;
          mm.src_row_stride = v.row_stride;
          mm.dst_row_stride = O.row_stride;
          mm.qidx = 0;
          if (g.by_flow) {
            mm.rows_per_seg = s.m;
            mm.src_seg_stride = v.flow_stride;
            mm.dst_seg_stride = O.flow_stride;
          }
          p.instrs.emplace_back(mm);
          p.instrs.emplace_back(arype::FinOp{});
          LaunchNode n;
          n.kind = NodeKind::Ary;
          n.prog = add_ary(std::move(p));
          n.stage = si;
          n.adrf = {{0, src_addr(0)}, {1, {O.first.bank, out_byte(0)}}};
          n.deps = producers(s.in0, g.f0, g.nflows);
          n.label = tag;
          record(si, g.f0, g.nflows, add_node(std::move(n)));
        } else if (cfg_.collab && tp.k_chunks + 1 <= cfg_.vpe.adrf &&
                   2 * tp.k_chunks <= cfg_.ary.adrf) {
          emit_chunk_sweep(si, s, tp, g, t, b, v, src_addr, out_byte, tag);
        } else {
          // Merge strips address one register per chunk; very deep reductions
          // fall back to the array's own aggregation sweeps.
          emit_serial_chunks(si, s, tp, g, t, b, v, src_addr, out_byte, tag);
        }
      }
    }
  }

  template <class SrcFn, class OutFn>
  void emit_chunk_sweep(int si, const Stage& s, const TilingPlan& tp, const Seg& g,
                        unsigned t, unsigned b, const SrcView& v, SrcFn src_addr,
                        OutFn out_byte, const std::string& tag) {
    const unsigned k = cfg_.k;
    const unsigned set = pingpong_++ % 2;
    auto partial = [&](unsigned c) {
      return fabric::MemAddr{arena_[set].bank,
                             arena_[set].byte + c * g.rows * kPartialRow};
    };
    arype::AryProgram p;
    std::vector<std::pair<std::uint8_t, fabric::MemAddr>> adrf;
    for (unsigned c = 0; c < tp.k_chunks; ++c) {
      arype::LdOp ld;
      ld.src = arype::LdOp::Src::PCache;
      ld.pcache_off = tile_offset(si, c, t);
      ld.rows = std::uint16_t(std::min(k, s.k_dim - c * k));
      ld.cols = std::uint16_t(b);
      ld.shadow = c > 0;
      p.instrs.emplace_back(ld);
      arype::MmOp mm;
      mm.l = g.rows;
      mm.src_areg = std::uint8_t(c);
      mm.dst_areg = std::uint8_t(tp.k_chunks + c);
      mm.src_row_stride = v.row_stride;
      mm.dst_row_stride = kPartialRow;
      mm.cont = c > 0;
      if (g.by_flow) {
        mm.rows_per_seg = s.m;
        mm.src_seg_stride = v.flow_stride;
        mm.dst_seg_stride = s.m * kPartialRow;
      }
      p.instrs.emplace_back(mm);
      adrf.emplace_back(std::uint8_t(c), src_addr(c));
      adrf.emplace_back(std::uint8_t(tp.k_chunks + c), partial(c));
    }
    p.instrs.emplace_back(arype::FinOp{});
    LaunchNode n;
    n.kind = NodeKind::Ary;
    n.prog = add_ary(std::move(p));
    n.stage = si;
    n.adrf = std::move(adrf);
    n.deps = producers(s.in0, g.f0, g.nflows);
    if (last_strip_[set] >= 0) n.deps.push_back(last_strip_[set]);
    n.label = tag;
    const int sweep = add_node(std::move(n));

    const unsigned halves = b > kStoreQuantum ? 2 : 1;
    LaunchNode sn;
    sn.kind = NodeKind::Vpe;
    sn.prog = strip_program(tp.k_chunks, g.rows, halves,
                            strip_incs(g.rows, halves, out_byte), s.q);
    sn.stage = si;
    for (unsigned c = 0; c < tp.k_chunks; ++c)
      sn.adrf.emplace_back(std::uint8_t(c), partial(c));
    sn.adrf.emplace_back(
        std::uint8_t(tp.k_chunks),
        fabric::MemAddr{layouts_[std::size_t(si)].first.bank, out_byte(0)});
    sn.deps = {sweep};
    sn.label = tag + ".merge";
    const int strip = add_node(std::move(sn));
    last_strip_[set] = strip;
    record(si, g.f0, g.nflows, strip);
  }

  template <class SrcFn, class OutFn>
  void emit_serial_chunks(int si, const Stage& s, const TilingPlan& tp, const Seg& g,
                          unsigned t, unsigned b, const SrcView& v, SrcFn src_addr,
                          OutFn out_byte, const std::string& tag) {
    // Without collaboration the array merges its own partials. Chunk groups
    // keep src+dst pairs (+accumulator,+output) within the address registers.
    const unsigned k = cfg_.k;
    const unsigned set = pingpong_++ % 2;
    const Layout& O = layouts_[std::size_t(si)];
    auto partial = [&](unsigned c) {
      return fabric::MemAddr{arena_[set].bank,
                             arena_[set].byte + c * g.rows * kPartialRow};
    };
    const unsigned cg_max = std::max(1u, (cfg_.ary.adrf - 2) / 2);
    int last_node = -1;
    unsigned c0 = 0;
    while (c0 < tp.k_chunks) {
      const unsigned cg = std::min(cg_max, tp.k_chunks - c0);
      const bool first_group = c0 == 0;
      const bool last_group = c0 + cg == tp.k_chunks;
      arype::AryProgram p;
      p.qtable = {s.q};
      std::vector<std::pair<std::uint8_t, fabric::MemAddr>> adrf;
      std::uint8_t next_reg = 0;
      auto areg = [&](fabric::MemAddr a) {
        adrf.emplace_back(next_reg, a);
        return next_reg++;
      };
      std::vector<std::uint8_t> dst_regs;
      for (unsigned c = c0; c < c0 + cg; ++c) {
        arype::LdOp ld;
        ld.src = arype::LdOp::Src::PCache;
        ld.pcache_off = tile_offset(si, c, t);
        ld.rows = std::uint16_t(std::min(k, s.k_dim - c * k));
        ld.cols = std::uint16_t(b);
        p.instrs.emplace_back(ld);
        arype::MmOp mm;
        mm.l = g.rows;
        mm.src_areg = areg(src_addr(c));
        mm.dst_areg = areg(partial(c));
        dst_regs.push_back(mm.dst_areg);
        mm.src_row_stride = v.row_stride;
        mm.dst_row_stride = kPartialRow;
        if (g.by_flow) {
          mm.rows_per_seg = s.m;
          mm.src_seg_stride = v.flow_stride;
          mm.dst_seg_stride = s.m * kPartialRow;
        }
        p.instrs.emplace_back(mm);
      }
      const std::uint8_t acc0 = first_group ? dst_regs.front() : areg(partial(0));
      const unsigned merge_from = first_group ? 1 : 0;
      for (unsigned j = merge_from; j < cg; ++j) {
        const bool final_agg = last_group && j == cg - 1;
        arype::AggOp ag;
        ag.elems = g.rows * 16;
        ag.src_areg = dst_regs[j];
        ag.dst_areg = acc0;
        if (final_agg) {
          ag.qidx = 0;
          ag.out_areg = areg({O.first.bank, out_byte(0)});
          ag.out_row_elems = b;
          ag.out_row_stride = O.row_stride;
          ag.src_row_elems = 16;
          if (g.by_flow) {
            ag.rows_per_seg = s.m;
            ag.out_seg_stride = O.flow_stride;
          }
        }
        p.instrs.emplace_back(ag);
      }
      p.instrs.emplace_back(arype::FinOp{});
      LaunchNode n;
      n.kind = NodeKind::Ary;
      n.prog = add_ary(std::move(p));
      n.stage = si;
      n.adrf = std::move(adrf);
      n.deps = producers(s.in0, g.f0, g.nflows);
      if (cfg_.collab && last_strip_[set] >= 0) n.deps.push_back(last_strip_[set]);
      n.label = tag + (first_group && last_group ? "" : ".g" + std::to_string(c0));
      last_node = add_node(std::move(n));
      c0 += cg;
    }
    record(si, g.f0, g.nflows, last_node);
  }

  // ---- per-flow matmul (runtime weight operand) ----------------------------

  void emit_perflow_matmul(int si, const Stage& s) {
    if (s.in1 < 0) fail(Err::ConfigError, "per-flow stage without a weight operand");
    const TilingPlan tp = tile({s.m, s.k_dim, s.n, s.name}, cfg_.k);
    const unsigned k = cfg_.k;
    const Layout& W = layouts_.at(std::size_t(s.in1));
    const Layout& O = layouts_[std::size_t(si)];
    const SrcView v = src_view(s);

    for (unsigned f = 0; f < B_; ++f) {
      const std::uint32_t wbase = W.first.byte + f * W.flow_stride;
      const std::uint32_t sbase = v.base.byte + f * v.flow_stride;
      std::vector<std::int32_t> deps = producers(s.in0, f, 1);
      for (std::int32_t d : producers(s.in1, f, 1)) deps.push_back(d);
      // A weight chunk covers 16 reduction lanes: with a transposed latch
      // those run along the operand's columns, otherwise down its rows.
      auto wchunk = [&](unsigned c) {
        return fabric::MemAddr{W.first.bank,
                               wbase + (s.transpose_w ? c * k : c * k * W.row_stride)};
      };
      auto wtile = [&](unsigned t) {
        return fabric::MemAddr{W.first.bank,
                               wbase + (s.transpose_w ? t * k * W.row_stride : t * k)};
      };

      if (tp.k_chunks == 1) {
        // One latch per output tile, streaming the flow's rows each time.
        arype::AryProgram p;
        p.qtable = {s.q};
        std::vector<std::pair<std::uint8_t, fabric::MemAddr>> adrf;
        const std::uint8_t src_reg = std::uint8_t(2 * tp.n_tiles);
        for (unsigned t = 0; t < tp.n_tiles; ++t) {
          const unsigned b = std::min(k, s.n - t * k);
          arype::LdOp ld;
          ld.src = arype::LdOp::Src::Fabric;
          ld.areg = std::uint8_t(t);
          ld.rows = std::uint16_t(s.k_dim);
          ld.cols = std::uint16_t(b);
          ld.row_stride = W.row_stride;
          ld.transpose = s.transpose_w;
          ld.shadow = cfg_.collab && t > 0;
          p.instrs.emplace_back(ld);
          arype::MmOp mm;
          mm.l = s.m;
          mm.src_areg = src_reg;
          mm.dst_areg = std::uint8_t(tp.n_tiles + t);
          mm.src_row_stride = v.row_stride;
          mm.dst_row_stride = O.row_stride;
          mm.qidx = 0;
          mm.cont = cfg_.collab && t > 0;
          p.instrs.emplace_back(mm);
          adrf.emplace_back(std::uint8_t(t), wtile(t));
          adrf.emplace_back(
              std::uint8_t(tp.n_tiles + t),
              fabric::MemAddr{O.first.bank, O.first.byte + f * O.flow_stride + t * k});
        }
        adrf.emplace_back(src_reg, fabric::MemAddr{v.base.bank, sbase});
        p.instrs.emplace_back(arype::FinOp{});
        LaunchNode n;
        n.kind = NodeKind::Ary;
        n.prog = add_ary(std::move(p));
        n.stage = si;
        n.flow = int(f);
        n.adrf = std::move(adrf);
        n.deps = std::move(deps);
        n.label = s.name + ".f" + std::to_string(f);
        record(si, f, 1, add_node(std::move(n)));
        continue;
      }

      if (tp.n_tiles != 1)
        fail(Err::ConfigError, "per-flow chunked stage expects one output tile");
      const unsigned b = s.n;
      const unsigned set = pingpong_++ % 2;
      auto partial = [&](unsigned c) {
        return fabric::MemAddr{arena_[set].bank,
                               arena_[set].byte + c * s.m * kPartialRow};
      };
      auto out_byte = [&](std::uint32_t r) {
        return O.first.byte + f * O.flow_stride + r * O.row_stride;
      };

      if (cfg_.collab && tp.k_chunks + 1 <= cfg_.vpe.adrf &&
          3 * tp.k_chunks <= cfg_.ary.adrf) {
        arype::AryProgram p;
        std::vector<std::pair<std::uint8_t, fabric::MemAddr>> adrf;
        for (unsigned c = 0; c < tp.k_chunks; ++c) {
          arype::LdOp ld;
          ld.src = arype::LdOp::Src::Fabric;
          ld.areg = std::uint8_t(c);
          ld.rows = std::uint16_t(std::min(k, s.k_dim - c * k));
          ld.cols = std::uint16_t(b);
          ld.row_stride = W.row_stride;
          ld.transpose = s.transpose_w;
          ld.shadow = c > 0;
          p.instrs.emplace_back(ld);
          arype::MmOp mm;
          mm.l = s.m;
          mm.src_areg = std::uint8_t(tp.k_chunks + c);
          mm.dst_areg = std::uint8_t(2 * tp.k_chunks + c);
          mm.src_row_stride = v.row_stride;
          mm.dst_row_stride = kPartialRow;
          mm.cont = c > 0;
          p.instrs.emplace_back(mm);
          adrf.emplace_back(std::uint8_t(c), wchunk(c));
          adrf.emplace_back(std::uint8_t(tp.k_chunks + c),
                            fabric::MemAddr{v.base.bank, sbase + c * k});
          adrf.emplace_back(std::uint8_t(2 * tp.k_chunks + c), partial(c));
        }
        p.instrs.emplace_back(arype::FinOp{});
        LaunchNode n;
        n.kind = NodeKind::Ary;
        n.prog = add_ary(std::move(p));
        n.stage = si;
        n.flow = int(f);
        n.adrf = std::move(adrf);
        n.deps = deps;
        if (last_strip_[set] >= 0) n.deps.push_back(last_strip_[set]);
        n.label = s.name + ".f" + std::to_string(f);
        const int sweep = add_node(std::move(n));

        const unsigned halves = b > kStoreQuantum ? 2 : 1;
        LaunchNode sn;
        sn.kind = NodeKind::Vpe;
        sn.prog = strip_program(tp.k_chunks, s.m, halves,
                                strip_incs(s.m, halves, out_byte), s.q);
        sn.stage = si;
        sn.flow = int(f);
        for (unsigned c = 0; c < tp.k_chunks; ++c)
          sn.adrf.emplace_back(std::uint8_t(c), partial(c));
        sn.adrf.emplace_back(std::uint8_t(tp.k_chunks),
                             fabric::MemAddr{O.first.bank, out_byte(0)});
        sn.deps = {sweep};
        sn.label = s.name + ".f" + std::to_string(f) + ".merge";
        const int strip = add_node(std::move(sn));
        last_strip_[set] = strip;
        record(si, f, 1, strip);
      } else {
        if (3 * tp.k_chunks + 1 > cfg_.ary.adrf)
          fail(Err::ConfigError, "per-flow chunk count exceeds address registers");
        arype::AryProgram p;
        p.qtable = {s.q};
        std::vector<std::pair<std::uint8_t, fabric::MemAddr>> adrf;
        for (unsigned c = 0; c < tp.k_chunks; ++c) {
          arype::LdOp ld;
          ld.src = arype::LdOp::Src::Fabric;
          ld.areg = std::uint8_t(c);
          ld.rows = std::uint16_t(std::min(k, s.k_dim - c * k));
          ld.cols = std::uint16_t(b);
          ld.row_stride = W.row_stride;
          ld.transpose = s.transpose_w;
          p.instrs.emplace_back(ld);
          arype::MmOp mm;
          mm.l = s.m;
          mm.src_areg = std::uint8_t(tp.k_chunks + c);
          mm.dst_areg = std::uint8_t(2 * tp.k_chunks + c);
          mm.src_row_stride = v.row_stride;
          mm.dst_row_stride = kPartialRow;
          p.instrs.emplace_back(mm);
          adrf.emplace_back(std::uint8_t(c), wchunk(c));
          adrf.emplace_back(std::uint8_t(tp.k_chunks + c),
                            fabric::MemAddr{v.base.bank, sbase + c * k});
          adrf.emplace_back(std::uint8_t(2 * tp.k_chunks + c), partial(c));
        }
        const std::uint8_t out_reg = std::uint8_t(3 * tp.k_chunks);
        adrf.emplace_back(out_reg, fabric::MemAddr{O.first.bank, out_byte(0)});
        for (unsigned c = 1; c < tp.k_chunks; ++c) {
          arype::AggOp ag;
          ag.elems = s.m * 16;
          ag.src_areg = std::uint8_t(2 * tp.k_chunks + c);
          ag.dst_areg = std::uint8_t(2 * tp.k_chunks);
          if (c == tp.k_chunks - 1) {
            ag.qidx = 0;
            ag.out_areg = out_reg;
            ag.out_row_elems = b;
            ag.out_row_stride = O.row_stride;
            ag.src_row_elems = 16;
          }
          p.instrs.emplace_back(ag);
        }
        p.instrs.emplace_back(arype::FinOp{});
        LaunchNode n;
        n.kind = NodeKind::Ary;
        n.prog = add_ary(std::move(p));
        n.stage = si;
        n.flow = int(f);
        n.adrf = std::move(adrf);
        n.deps = std::move(deps);
        if (cfg_.collab && last_strip_[set] >= 0) n.deps.push_back(last_strip_[set]);
        n.label = s.name + ".f" + std::to_string(f);
        record(si, f, 1, add_node(std::move(n)));
      }
    }
  }

  // ---- narrow matmul on the vector engine's product lanes ------------------

  void emit_simdu_matmul(int si, const Stage& s) {
    const Layout& L = layout_of(s.in0);
    const Layout& O = layouts_[std::size_t(si)];
    if (s.k_dim > vpe::kLanes) fail(Err::ConfigError, "simdu stage reduction too wide");
    const model::QuantTensor& w = qm_.weights.at(std::size_t(s.weight));
    const unsigned n_groups = (s.n + vpe::kLanes - 1) / vpe::kLanes;

    // Window positions relative to the padded flow base, and the 8-byte loads
    // that cover them: consecutive windows share a load while they fit.
    struct Win {
      std::uint32_t src = 0;
      std::uint32_t out = 0;
    };
    std::vector<Win> wins(s.m);
    for (unsigned t = 0; t < s.m; ++t) {
      wins[t].src = t * s.stride * L.row_bytes;
      wins[t].out = t * O.row_stride;
    }
    std::vector<std::pair<std::uint32_t, std::vector<unsigned>>> groups;
    for (unsigned t = 0; t < s.m; ++t) {
      if (groups.empty() || wins[t].src + s.k_dim > groups.back().first + vpe::kLanes)
        groups.push_back({wins[t].src, {}});
      groups.back().second.push_back(t);
    }

    // One load word plus an idle visibility word per group, one store word per
    // (window, output group).
    const std::size_t wpf = 2 * groups.size() + std::size_t(s.m) * n_groups;
    const unsigned Gp = largest_divisor_leq(
        B_, unsigned(std::max<std::size_t>(1, (cfg_.vpe.icache_words - 2) / wpf)));

    const std::uint32_t pcache_base = std::uint32_t(out_.vpe_pcache.size());
    vpe::VpeProgram p;
    p.qtable = {s.q};
    std::vector<vpe::VliwWord>& words = p.words;
    std::uint32_t prev_ld = 0;
    bool have_ld = false;
    std::uint32_t prev_out = 0;
    bool have_out = false;
    auto patch_prev_ld = [&](std::uint32_t next) {
      for (auto it = words.rbegin(); it != words.rend(); ++it)
        if (it->mif && it->mif->kind == vpe::MifOp::Kind::Ld) {
          it->mif->post_inc = std::int32_t(next) - std::int32_t(prev_ld);
          return;
        }
    };
    auto patch_prev_store = [&](std::uint32_t next) {
      for (auto it = words.rbegin(); it != words.rend(); ++it)
        if (it->simdu && it->simdu->dst_mem) {
          it->simdu->post_inc = std::int32_t(next) - std::int32_t(prev_out);
          return;
        }
    };

    for (unsigned f = 0; f < Gp; ++f) {
      const std::uint32_t fbase = f * L.flow_stride;
      const std::uint32_t obase = f * O.flow_stride;
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& grp = groups[gi];
        const std::uint32_t ld_at = fbase + grp.first;
        if (have_ld) patch_prev_ld(ld_at);
        vpe::MifOp ld;
        ld.kind = vpe::MifOp::Kind::Ld;
        ld.addr = 0;
        ld.dst = std::uint8_t(1 + (gi + std::size_t(f) * groups.size()) % 2);
        ld.width = vpe::ElemWidth::B1;
        ld.channel = 0;
        ld.post_inc = 0;  // patched when the next load is known
        vpe::VliwWord lw;
        lw.mif = ld;
        words.push_back(lw);
        words.push_back({});  // data visible two words after the load
        prev_ld = ld_at;
        have_ld = true;
        for (unsigned t : grp.second) {
          const unsigned off = wins[t].src - grp.first;
          for (unsigned gcol = 0; gcol < n_groups; ++gcol) {
            const unsigned cnt = std::min(vpe::kLanes, s.n - gcol * vpe::kLanes);
            vpe::SimdOp op;
            op.src = ld.dst;
            const bool as_prds =
                s.k_dim <= 2 * vpe::kSubWidth &&
                cnt * (s.k_dim > vpe::kSubWidth ? 2u : 1u) <= 2 * vpe::kLanes;
            if (as_prds) {
              op.kind = vpe::SimdOp::Kind::Prds;
              for (unsigned j = 0; j < cnt; ++j) {
                const unsigned w1 = std::min<unsigned>(vpe::kSubWidth, s.k_dim);
                op.descs.push_back(
                    {std::uint8_t(j), std::uint8_t(off), std::uint8_t(w1)});
                if (s.k_dim > w1)
                  op.descs.push_back({std::uint8_t(j), std::uint8_t(off + w1),
                                      std::uint8_t(s.k_dim - w1)});
              }
            } else {
              if (off != 0)
                fail(Err::ConfigError, "wide products must start at the loaded base");
              op.kind = vpe::SimdOp::Kind::Prd;
              op.n_out = std::uint8_t(cnt);
            }
            op.dst_mem = true;
            op.dst = 8;  // output cursor register
            op.qidx = 0;
            op.post_inc = 0;  // patched when the next store is known
            const std::uint32_t out_at = obase + wins[t].out + gcol * vpe::kLanes;
            if (have_out) patch_prev_store(out_at);
            prev_out = out_at;
            have_out = true;
            vpe::VliwWord sw;
            sw.simdu = op;
            words.push_back(sw);
            // Weight stream in issue order.
            for (unsigned j = 0; j < cnt; ++j) {
              const unsigned col = gcol * vpe::kLanes + j;
              const unsigned rows = as_prds ? s.k_dim : vpe::kLanes;
              for (unsigned r = 0; r < rows; ++r)
                out_.vpe_pcache.push_back(
                    r < s.k_dim ? w.v[std::size_t(r) * s.n + col] : std::int8_t(0));
            }
          }
        }
      }
    }
    vpe::VliwWord fw;
    fw.fin = true;
    words.push_back(fw);
    const int prog = add_vpe(std::move(p));

    const std::uint32_t lead_off = s.pad * L.row_bytes;
    for (unsigned f0 = 0; f0 < B_; f0 += Gp) {
      LaunchNode n;
      n.kind = NodeKind::Vpe;
      n.prog = prog;
      n.pcache_base = pcache_base;
      n.stage = si;
      n.adrf = {{0,
                 {L.first.bank,
                  L.first.byte + f0 * L.flow_stride - lead_off + groups[0].first}},
                {8, {O.first.bank, O.first.byte + f0 * O.flow_stride}}};
      n.deps = producers(s.in0, f0, Gp);
      n.label = s.name + ".v.s" + std::to_string(f0);
      record(si, f0, Gp, add_node(std::move(n)));
    }
  }

  static bool simd_mem(const vpe::VliwWord& w) {
    return (w.simdu && w.simdu->dst_mem) || (w.vu && w.vu->dst_mem);
  }

  // ---- pooling -------------------------------------------------------------

  void emit_pool(int si, const Stage& s) {
    const Layout& L = layout_of(s.in0);
    const Layout& O = layouts_[std::size_t(si)];
    if (s.pool_stride != 2) fail(Err::ConfigError, "pooling stride must be 2");
    if (L.row_bytes % kStoreQuantum != 0 &&
        O.row_stride < ceil_to(L.row_bytes, kStoreQuantum))
      fail(Err::ConfigError, "pool rows must pad to the 8-byte store quantum");
    const unsigned chunks_per_row = (L.row_bytes + kStoreQuantum - 1) / kStoreQuantum;
    const std::size_t wpf = std::size_t(O.rows_pf) * chunks_per_row * 3 + 4;
    const unsigned Gp = largest_divisor_leq(
        B_, unsigned(std::max<std::size_t>(1, (cfg_.vpe.icache_words - 2) / wpf)));

    std::vector<std::uint32_t> e_addr, out_addr;
    std::vector<std::int64_t> o_addr;
    for (unsigned f = 0; f < Gp; ++f) {
      for (unsigned r = 0; r < O.rows_pf; ++r) {
        const unsigned r0 = 2 * r;
        const bool has_odd = r0 + 1 < L.rows_pf;
        for (unsigned c = 0; c < chunks_per_row; ++c) {
          const std::uint32_t off = c * kStoreQuantum;
          e_addr.push_back(f * L.flow_stride + r0 * L.row_stride + off);
          o_addr.push_back(
              has_odd ? std::int64_t(f * L.flow_stride + (r0 + 1) * L.row_stride + off)
                      : -1);
          out_addr.push_back(f * O.flow_stride + r * O.row_stride + off);
        }
      }
    }
    const int prog = pool_program(e_addr, o_addr, out_addr);

    std::int64_t first_odd = 0;
    for (std::int64_t a : o_addr)
      if (a >= 0) {
        first_odd = a;
        break;
      }
    for (unsigned f0 = 0; f0 < B_; f0 += Gp) {
      LaunchNode n;
      n.kind = NodeKind::Vpe;
      n.prog = prog;
      n.stage = si;
      n.adrf = {{0, {L.first.bank, L.first.byte + f0 * L.flow_stride + e_addr[0]}},
                {1,
                 {L.first.bank,
                  L.first.byte + f0 * L.flow_stride + std::uint32_t(first_odd)}},
                {2, {O.first.bank, O.first.byte + f0 * O.flow_stride + out_addr[0]}}};
      n.deps = producers(s.in0, f0, Gp);
      n.label = s.name + ".s" + std::to_string(f0);
      record(si, f0, Gp, add_node(std::move(n)));
    }
  }

  // ---- softmax (controller-executed) ---------------------------------------

  void emit_softmax(int si, const Stage& s) {
    const Layout& L = layout_of(s.in0);
    const Layout& O = layouts_[std::size_t(si)];
    if (L.row_stride != O.row_stride)
      fail(Err::ConfigError, "softmax expects matching source/destination strides");
    for (unsigned f = 0; f < B_; ++f) {
      LaunchNode n;
      n.kind = NodeKind::Softmax;
      n.stage = si;
      n.flow = int(f);
      n.src = {L.first.bank, L.first.byte + f * L.flow_stride};
      n.dst = {O.first.bank, O.first.byte + f * O.flow_stride};
      n.rows = L.rows_pf;
      n.cols = L.row_bytes;
      n.row_stride = L.row_stride;
      n.deps = producers(s.in0, f, 1);
      n.label = s.name + ".f" + std::to_string(f);
      record(si, f, 1, add_node(std::move(n)));
    }
  }

  // ---- packet granularity --------------------------------------------------

  void build_packet() {
    out_.flows_per_block = 1;
    out_.gathered = false;
    B_ = 1;
    for (const Stage& s : qm_.stages)
      if (s.kind != Stage::Kind::Matmul || s.per_flow || s.window != 1)
        fail(Err::UnsupportedLayer, "packet granularity supports dense chains only");
    const fabric::MemAddr result = alloc("result", kWB, false, 0);
    const fabric::MemAddr taps =
        alloc("taps", std::uint32_t(qm_.stages.size()) * kWB, false, 0);
    out_.capture_words = 1;
    out_.input_base = {};
    out_.input_flow_stride = 0;

    const int kp = packet_kernel();
    LaunchNode kn;
    kn.kind = NodeKind::Vpe;
    kn.prog = kp;
    kn.flow = 0;
    kn.push_fa = true;
    kn.adrf = {{1, result}, {2, taps}};
    kn.stage = int(qm_.stages.size()) - 1;
    kn.label = "kernel";
    const int knode = add_node(std::move(kn));

    for (std::size_t si = 0; si < qm_.stages.size(); ++si) {
      StageBuffer b;
      b.stage = int(si);
      b.base = si + 1 == qm_.stages.size()
                   ? result
                   : fabric::MemAddr{taps.bank, taps.byte + std::uint32_t(si) * kWB};
      b.row_bytes = qm_.stages[si].n;
      b.row_stride = kWB;
      b.rows_per_flow = 1;
      b.flow_stride = 0;
      out_.buffers.push_back(b);
    }

    LaunchNode r;
    r.kind = NodeKind::Readout;
    r.flow = 0;
    r.stage = int(qm_.stages.size()) - 1;
    r.src = result;
    r.rows = 1;
    r.cols = qm_.stages.back().n;
    r.row_stride = kWB;
    r.deps = {knode};
    r.label = "readout";
    add_node(std::move(r));
  }

  /// Whole-model kernel for one packet: the capture base arrives through the
  /// flow-address queue, every dense layer runs on the product lanes, and
  /// each intermediate layer's int8 vector is stored to a tap row so the
  /// boundary checker can compare it. Address registers: a0 capture (fa),
  /// a1 result cursor, a2 tap cursor.
  int packet_kernel() {
    vpe::VpeProgram p;
    p.qtable.push_back(identity_qentry());
    for (const Stage& s : qm_.stages) p.qtable.push_back(s.q);

    struct Slice {
      std::uint8_t reg = 0;
      unsigned lanes = 0;
    };
    std::vector<vpe::VliwWord>& words = p.words;
    std::vector<std::size_t> vis(cfg_.vpe.drf, 0);
    std::size_t ch_busy[2] = {0, 0};
    std::size_t last_simd = 0;
    std::size_t last_mem = 0;  // program order of memory accesses
    std::uint8_t next_reg = 0;
    auto fresh = [&]() {
      if (next_reg >= 30) fail(Err::CapacityError, "kernel register budget exceeded");
      return next_reg++;
    };
    auto word_at = [&](std::size_t i) -> vpe::VliwWord& {
      if (words.size() <= i) words.resize(i + 1);
      return words[i];
    };
    auto place_mif = [&](const vpe::MifOp& m, std::size_t earliest) {
      std::size_t i = std::max({earliest, ch_busy[m.channel], last_mem + 1});
      while (true) {
        vpe::VliwWord& w = word_at(i);
        if (!w.mif && !simd_mem(w)) break;
        ++i;
      }
      word_at(i).mif = m;
      ch_busy[m.channel] = i + 1;
      last_mem = i;
      return i;
    };
    auto place_simd = [&](const vpe::SimdOp& op, std::size_t earliest) {
      std::size_t i = std::max(earliest, last_simd + 1);
      if (op.dst_mem) i = std::max({i, ch_busy[0], last_mem + 1});
      while (true) {
        vpe::VliwWord& w = word_at(i);
        const bool mem_clash = op.dst_mem && (w.mif || simd_mem(w));
        if (!w.simdu && !mem_clash) break;
        ++i;
      }
      word_at(i).simdu = op;
      last_simd = i;
      if (op.dst_mem) {
        ch_busy[0] = i + 1;
        last_mem = i;
      } else {
        vis[op.dst] = i + vpe::kSimdLatency;
      }
      return i;
    };
    auto place_vu = [&](const vpe::VuOp& op, std::size_t earliest) {
      std::size_t i = earliest;
      if (op.dst_mem) i = std::max({i, ch_busy[0], last_mem + 1});
      while (true) {
        vpe::VliwWord& w = word_at(i);
        const bool mem_clash = op.dst_mem && (w.mif || simd_mem(w));
        if (!w.vu && !mem_clash) break;
        ++i;
      }
      word_at(i).vu = op;
      if (op.dst_mem) {
        ch_busy[0] = i + 1;
        last_mem = i;
      } else {
        vis[op.dst] = i + vpe::kVuLatency;
      }
      return i;
    };

    vpe::MifOp fa;
    fa.kind = vpe::MifOp::Kind::Fa;
    fa.addr = 0;
    fa.channel = 0;
    place_mif(fa, 0);
    vpe::MifOp ld;
    ld.kind = vpe::MifOp::Kind::Ld;
    ld.addr = 0;
    ld.dst = fresh();
    ld.width = vpe::ElemWidth::B1;
    ld.channel = 0;
    const std::size_t ldw = place_mif(ld, 1);
    vis[ld.dst] = ldw + vpe::kLdLatency;

    std::vector<Slice> cur = {{ld.dst, qm_.input_ch}};
    std::uint32_t tap_cursor = 0;
    bool tap_started = false;
    auto patch_tap_inc = [&](std::uint32_t next) {
      for (auto it = words.rbegin(); it != words.rend(); ++it)
        if (it->vu && it->vu->dst_mem && it->vu->dst == 2) {
          it->vu->post_inc = std::int32_t(next) - std::int32_t(tap_cursor);
          return;
        }
    };
    auto push_weights = [&](const model::QuantTensor& w, unsigned n, unsigned gcol,
                            unsigned cnt, unsigned r_base, unsigned r_count,
                            unsigned pad_to) {
      for (unsigned j = 0; j < cnt; ++j) {
        const unsigned col = gcol * vpe::kLanes + j;
        for (unsigned r = 0; r < pad_to; ++r)
          out_.vpe_pcache.push_back(r < r_count ? w.v[std::size_t(r_base + r) * n + col]
                                                : std::int8_t(0));
      }
    };

    for (std::size_t si = 0; si < qm_.stages.size(); ++si) {
      const Stage& s = qm_.stages[si];
      const std::uint8_t q = std::uint8_t(1 + si);
      const bool final_stage = si + 1 == qm_.stages.size();
      unsigned have = 0;
      for (const Slice& sl : cur) have += sl.lanes;
      if (have != s.k_dim) fail(Err::ShapeError, "kernel slice mismatch in " + s.name);
      if (cur.size() > 2) fail(Err::CapacityError, "kernel reductions limited to 16");
      const model::QuantTensor& w = qm_.weights.at(std::size_t(s.weight));
      const unsigned n_groups = (s.n + vpe::kLanes - 1) / vpe::kLanes;

      std::vector<Slice> next_slices;
      for (unsigned gcol = 0; gcol < n_groups; ++gcol) {
        const unsigned cnt = std::min(vpe::kLanes, s.n - gcol * vpe::kLanes);
        if (cur.size() == 1) {
          const Slice& sl = cur[0];
          const bool as_prds =
              s.k_dim <= 2 * vpe::kSubWidth &&
              cnt * (s.k_dim > vpe::kSubWidth ? 2u : 1u) <= 2 * vpe::kLanes;
          vpe::SimdOp op;
          op.src = sl.reg;
          op.qidx = q;
          if (as_prds) {
            op.kind = vpe::SimdOp::Kind::Prds;
            for (unsigned j = 0; j < cnt; ++j) {
              const unsigned w1 = std::min<unsigned>(vpe::kSubWidth, s.k_dim);
              op.descs.push_back({std::uint8_t(j), 0, std::uint8_t(w1)});
              if (s.k_dim > w1)
                op.descs.push_back(
                    {std::uint8_t(j), std::uint8_t(w1), std::uint8_t(s.k_dim - w1)});
            }
          } else {
            if (s.k_dim > vpe::kLanes)
              fail(Err::ShapeError, "kernel slice wider than the product lanes");
            op.kind = vpe::SimdOp::Kind::Prd;
            op.n_out = std::uint8_t(cnt);
          }
          if (final_stage) {
            op.dst_mem = true;
            op.dst = 1;
            op.post_inc = vpe::kLanes;
          } else {
            op.dst = fresh();
          }
          place_simd(op, vis[sl.reg]);
          if (!final_stage) next_slices.push_back({op.dst, cnt});
          push_weights(w, s.n, gcol, cnt, 0, s.k_dim, as_prds ? s.k_dim : vpe::kLanes);
        } else {
          // Two source slices: raw partial products summed on the adder lanes.
          vpe::SimdOp p0;
          p0.kind = vpe::SimdOp::Kind::Prd;
          p0.src = cur[0].reg;
          p0.n_out = std::uint8_t(cnt);
          p0.dst = fresh();
          place_simd(p0, vis[cur[0].reg]);
          push_weights(w, s.n, gcol, cnt, 0, cur[0].lanes, vpe::kLanes);
          vpe::SimdOp p1;
          p1.kind = vpe::SimdOp::Kind::Prd;
          p1.src = cur[1].reg;
          p1.n_out = std::uint8_t(cnt);
          p1.dst = fresh();
          place_simd(p1, vis[cur[1].reg]);
          push_weights(w, s.n, gcol, cnt, cur[0].lanes, cur[1].lanes, vpe::kLanes);
          vpe::VuOp add;
          add.kind = vpe::VuOp::Kind::Vadd;
          add.src_a = p0.dst;
          add.src_b = p1.dst;
          add.qidx = q;
          if (final_stage) {
            add.dst_mem = true;
            add.dst = 1;
            add.post_inc = vpe::kLanes;
          } else {
            add.dst = fresh();
          }
          place_vu(add, std::max(vis[p0.dst], vis[p1.dst]));
          if (!final_stage) next_slices.push_back({add.dst, cnt});
        }
      }
      if (!final_stage) {
        for (std::size_t gi = 0; gi < next_slices.size(); ++gi) {
          const std::uint32_t at =
              std::uint32_t(si) * kWB + std::uint32_t(gi) * vpe::kLanes;
          vpe::VuOp tap;
          tap.kind = vpe::VuOp::Kind::Vadd;
          tap.src_a = next_slices[gi].reg;
          tap.src_b = 31;
          tap.dst_mem = true;
          tap.dst = 2;
          tap.qidx = 0;
          tap.post_inc = 0;  // patched when the next tap is known
          if (tap_started) patch_tap_inc(at);
          place_vu(tap, vis[next_slices[gi].reg]);
          tap_cursor = at;
          tap_started = true;
        }
        cur = std::move(next_slices);
      }
    }
    vpe::VliwWord fw;
    fw.fin = true;
    words.push_back(fw);
    return add_vpe(std::move(p));
  }

  CompileConfig cfg_;
  QuantModel qm_;
  CompiledBundle out_;
};

}  // namespace

CompiledBundle compile(const model::ModelIR& ir, const CompileConfig& cfg) {
  Builder b(ir, cfg);
  return b.build();
}

}  // namespace ina::compiler
