#include "ina/controller.hpp"

#include <algorithm>
#include <cstring>

#include "ina/numeric.hpp"

namespace ina::ctrl {

namespace {
constexpr std::uint32_t kWB = fabric::kWordBytes;
// Controller writes retire late in the cycle, like the engines' stores, so a
// same-cycle read on the other port still sees the old word.
constexpr std::uint64_t kWritePhase = 2000;

std::uint32_t words_touched(std::uint32_t byte, std::uint32_t len) {
  return (byte % kWB + len + kWB - 1) / kWB;
}
}  // namespace

std::vector<std::uint32_t> softmax_row_q16(const std::int8_t* row, std::size_t n,
                                           const std::array<std::uint32_t, 256>& exp_lut) {
  std::int8_t mx = -128;
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
  std::vector<std::uint64_t> w(n);
  std::uint64_t total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const unsigned d = unsigned(int(mx) - int(row[j]));
    w[j] = exp_lut[d];
    total += w[j];
  }
  if (total == 0) {
    std::fill(w.begin(), w.end(), 1);
    total = n;
  }
  // Largest-remainder apportionment of 65536 across the lanes.
  std::vector<std::uint32_t> out(n);
  std::vector<std::pair<std::uint64_t, std::size_t>> rem(n);
  std::uint64_t assigned = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::uint64_t num = w[j] << 16;
    out[j] = std::uint32_t(num / total);
    rem[j] = {num % total, j};
    assigned += out[j];
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::uint64_t i = 0; i < 65536 - assigned; ++i) out[rem[i % n].second] += 1;
  return out;
}

Controller::Controller(const compiler::CompiledBundle& bundle, fabric::Fabric& fab,
                       vpe::Vpe& v, arype::AryPe& a)
    : bundle_(bundle), fab_(fab), vpe_(v), ary_(a), period_ps_(v.period_ps()) {}

void Controller::init() {
  for (const compiler::RegionSpec& r : bundle_.regions) {
    fab_.allocate_at(r.bank, r.name, r.base_word, r.words);
    if (r.zero) {
      const auto& img = fab_.bank(r.bank).committed();
      for (std::uint32_t w = r.base_word; w < r.base_word + r.words; ++w)
        for (std::uint8_t b : img[w])
          if (b != 0)
            fail(Err::LayoutError, "guard region " + r.name + " expects zeroed memory");
    }
  }
  vpe_.load_pcache(bundle_.vpe_pcache);
  ary_.load_pcache(bundle_.ary_pcache);
}

std::uint64_t Controller::exec(const compiler::LaunchNode& n, std::uint64_t start_ps,
                               const FlowBinding* fb) {
  switch (n.kind) {
    case compiler::NodeKind::Ary: {
      ary_.load_program(bundle_.ary_programs.at(std::size_t(n.prog)));
      arype::AryLaunch l;
      l.adrf_init = n.adrf;
      l.start_ps = start_ps;
      return ary_.run(l);
    }
    case compiler::NodeKind::Vpe: {
      vpe_.load_program(bundle_.vpe_programs.at(std::size_t(n.prog)));
      if (n.push_fa) {
        if (!fb) fail(Err::ConfigError, "fa node without a flow binding");
        vpe_.push_fa(fb->capture);
      }
      vpe::VpeLaunch l;
      l.pcache_base = n.pcache_base;
      l.adrf_init = n.adrf;
      l.start_ps = start_ps;
      return vpe_.run(l);
    }
    case compiler::NodeKind::Gather: {
      if (!fb) fail(Err::ConfigError, "gather node without a flow binding");
      return exec_gather(n, start_ps, *fb);
    }
    case compiler::NodeKind::Softmax:
      return exec_softmax(n, start_ps);
    case compiler::NodeKind::Readout:
      return exec_readout(n, start_ps, fb);
  }
  fail(Err::ConfigError, "unknown node kind");
}

std::uint64_t Controller::exec_gather(const compiler::LaunchNode& n, std::uint64_t t,
                                      const FlowBinding& fb) {
  const std::uint64_t P = period_ps_;
  const std::uint32_t src_words = n.words;
  if (std::uint64_t(n.rows) * n.cols > std::uint64_t(src_words) * kWB)
    fail(Err::ConfigError, "gather shape exceeds its capture region");
  std::vector<std::uint8_t> buf(std::size_t(src_words) * kWB);
  // Port 1 is the compute-side streamer port of the feature bank.
  fab_.read_bytes(fb.capture, buf.data(), buf.size(), 1, t, P);
  std::uint32_t widx = 0;
  for (std::uint32_t r = 0; r < n.rows; ++r) {
    const fabric::MemAddr a{n.dst.bank, n.dst.byte + r * n.row_stride};
    fab_.write_bytes(a, buf.data() + std::size_t(r) * n.cols, n.cols, 0,
                     t + (src_words + widx) * P + kWritePhase, P);
    widx += words_touched(a.byte, n.cols);
  }
  const std::uint64_t cycles = src_words + widx;
  stats_.gather_cycles += cycles;
  return t + cycles * P;
}

std::uint64_t Controller::exec_softmax(const compiler::LaunchNode& n, std::uint64_t t) {
  const std::uint64_t P = period_ps_;
  const auto& lut = bundle_.qm.softmax_exp;
  std::uint64_t off = 0;
  std::vector<std::int8_t> row(n.cols);
  std::vector<std::int8_t> out(n.cols);
  for (std::uint32_t r = 0; r < n.rows; ++r) {
    const fabric::MemAddr src{n.src.bank, n.src.byte + r * n.row_stride};
    const fabric::MemAddr dst{n.dst.bank, n.dst.byte + r * n.row_stride};
    const std::uint32_t wr = words_touched(src.byte, n.cols);
    const std::uint32_t ww = words_touched(dst.byte, n.cols);
    fab_.read_bytes(src, reinterpret_cast<std::uint8_t*>(row.data()), n.cols, 0,
                    t + off * P, P);
    const std::vector<std::uint32_t> q = softmax_row_q16(row.data(), n.cols, lut);
    for (std::uint32_t j = 0; j < n.cols; ++j)
      out[j] = sat_i8(round_half_even_rshift(std::int64_t(q[j]) * 127, 16));
    fab_.write_bytes(dst, reinterpret_cast<const std::uint8_t*>(out.data()), n.cols, 0,
                     t + (off + wr + 1) * P + kWritePhase, P);
    off += wr + ww + 2;
  }
  stats_.softmax_cycles += off;
  return t + off * P;
}

std::uint64_t Controller::exec_readout(const compiler::LaunchNode& n, std::uint64_t t,
                                       const FlowBinding* fb) {
  const std::uint64_t P = period_ps_;
  std::uint64_t reads = 0;
  std::vector<std::int64_t> scores(n.cols, 0);
  std::vector<std::int8_t> row(n.cols);
  for (std::uint32_t r = 0; r < n.rows; ++r) {
    const fabric::MemAddr src{n.src.bank, n.src.byte + r * n.row_stride};
    fabric::MemoryBank& bank = fab_.bank(src.bank);
    // A read at time t sees every write that drained before t; commit those
    // before the staleness audit so in-flight results are not misflagged.
    bank.commit_upto(t + reads * P);
    const std::uint32_t w0 = src.byte / kWB;
    const std::uint32_t w1 = (src.byte + n.cols - 1) / kWB;
    for (std::uint32_t w = w0; w <= w1; ++w) {
      const std::uint64_t lw = bank.last_write_ps(w);
      if (lw == 0 || lw < epoch_ps_)
        fail(Err::StaleResult,
             "readout " + n.label + " reads a word not written this block");
    }
    fab_.read_bytes(src, reinterpret_cast<std::uint8_t*>(row.data()), n.cols, 0,
                    t + reads * P, P);
    reads += w1 - w0 + 1;
    if (n.colsum) {
      for (std::uint32_t j = 0; j < n.cols; ++j) scores[j] += row[j];
    } else {
      for (std::uint32_t j = 0; j < n.cols; ++j) scores[j] = row[j];
    }
  }
  unsigned label = 0;
  for (std::uint32_t j = 1; j < n.cols; ++j)
    if (scores[j] > scores[label]) label = j;
  Verdict v;
  if (fb) {
    v.tuple = fb->tuple;
    v.arrival_ns = fb->last_arrival_ns;
  }
  v.flow = n.flow;
  v.label = label;
  v.scores = std::move(scores);
  v.done_ps = t + reads * P;
  verdicts_.push_back(std::move(v));
  stats_.readout_cycles += reads;
  stats_.decisions += 1;
  return t + reads * P;
}

}  // namespace ina::ctrl
