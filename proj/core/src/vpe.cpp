#include "ina/vpe.hpp"

#include <algorithm>
#include <cstring>
#include <string>

namespace ina::vpe {

namespace {

// Fabric port discipline: a compute bank's port 0 belongs to this engine's
// Mif; the feature bank is read from the compute side on port 1 (port 0 is
// the extractor's write port).
unsigned port_for(fabric::BankId b) { return b == fabric::BankId::Feature ? 1u : 0u; }

unsigned channel_cycles(std::size_t bytes) {
  return unsigned((bytes + fabric::kWordBytes - 1) / fabric::kWordBytes);
}

}  // namespace

// ---------------------------------------------------------------------------
// Program validation

void VpeProgram::validate(unsigned drf, unsigned adrf) const {
  if (words.empty()) fail(Err::ConfigError, "empty program");
  bool saw_fin = false;
  auto check_q = [&](std::uint8_t qidx) {
    if (qidx != kNoQ && qidx >= qtable.size())
      fail(Err::OutOfRange, "requant table index out of range");
  };
  for (const VliwWord& w : words) {
    if (saw_fin) fail(Err::ConfigError, "instruction word after fin");
    int mem_users = w.mif.has_value() ? 1 : 0;
    if (w.simdu) {
      const SimdOp& s = *w.simdu;
      if (s.src >= drf) fail(Err::OutOfRange, "simdu source register out of range");
      if (s.kind == SimdOp::Kind::Prd) {
        if (s.n_out < 1 || s.n_out > kLanes) fail(Err::OutOfRange, "prd lane count must be 1..8");
      } else {
        if (s.descs.empty() || s.descs.size() > 2 * kLanes)
          fail(Err::OutOfRange, "prds needs 1..16 descriptors");
        std::array<unsigned, kLanes> uses{};
        for (const PrdsDesc& d : s.descs) {
          if (d.dst_lane >= kLanes) fail(Err::OutOfRange, "prds destination lane out of range");
          if (d.width < 1 || d.width > kSubWidth)
            fail(Err::OutOfRange, "prds product width must be 1..4");
          if (unsigned(d.src_off) + d.width > kLanes)
            fail(Err::OutOfRange, "prds source slice out of range");
          if (++uses[d.dst_lane] > 2)
            fail(Err::Overlap, "more than two sub-lane products on one lane");
        }
      }
      if (s.dst_mem) {
        if (s.dst >= adrf) fail(Err::OutOfRange, "simdu address register out of range");
        mem_users++;
      } else if (s.dst >= drf) {
        fail(Err::OutOfRange, "simdu destination register out of range");
      }
      check_q(s.qidx);
      if (s.qidx != kNoQ && qtable[s.qidx].act == Act::GeluLut && !qtable[s.qidx].has_lut)
        fail(Err::ConfigError, "gelu entry without a baked table");
    }
    if (w.vu) {
      const VuOp& v = *w.vu;
      if (v.src_a >= drf || v.src_b >= drf) fail(Err::OutOfRange, "vu source register out of range");
      if (v.dst_mem) {
        if (v.dst >= adrf) fail(Err::OutOfRange, "vu address register out of range");
        mem_users++;
      } else if (v.dst >= drf) {
        fail(Err::OutOfRange, "vu destination register out of range");
      }
      check_q(v.qidx);
    }
    if (w.mif) {
      const MifOp& m = *w.mif;
      if (m.channel > 1) fail(Err::OutOfRange, "mif channel must be 0 or 1");
      if (m.kind == MifOp::Kind::Fa) {
        if (m.addr >= adrf) fail(Err::OutOfRange, "fa address register out of range");
      } else {
        if (m.addr >= adrf) fail(Err::OutOfRange, "ld address register out of range");
        if (m.dst >= drf) fail(Err::OutOfRange, "ld destination register out of range");
      }
    }
    if (mem_users > 1)
      fail(Err::PortConflict, "one memory operation per instruction word");
    if (w.fin) saw_fin = true;
  }
  if (!saw_fin) fail(Err::ConfigError, "program does not end with fin");
}

// ---------------------------------------------------------------------------

Vpe::Vpe(const VpeConfig& cfg, fabric::Fabric& fab) : cfg_(cfg), fab_(fab) {
  period_ps_ = ps_per_cycle(cfg_.clock_hz);
  drf_.resize(cfg_.drf);
  for (auto& r : drf_) r.fill(0);
  adrf_.resize(cfg_.adrf);
}

void Vpe::load_pcache(const std::vector<std::int8_t>& image) {
  if (image.size() > cfg_.pcache_bytes)
    fail(Err::CapacityExceeded, "parameter image exceeds pCache");
  pcache_ = image;
}

void Vpe::load_program(const VpeProgram& prog) {
  if (prog.words.size() > cfg_.icache_words)
    fail(Err::CapacityError, "program exceeds iCache capacity");
  prog.validate(cfg_.drf, cfg_.adrf);
  prog_ = prog;
  prog_loaded_ = true;
}

void Vpe::push_fa(fabric::MemAddr addr) { fa_queue_.push_back(addr); }

const VecReg& Vpe::reg(unsigned i) const {
  if (i >= drf_.size()) fail(Err::BadIndex, "dRf index out of range");
  return drf_[i];
}

fabric::MemAddr Vpe::areg(unsigned i) const {
  if (i >= adrf_.size()) fail(Err::BadIndex, "adRf index out of range");
  return adrf_[i];
}

VecReg Vpe::read_drf(unsigned idx) const { return drf_[idx]; }

void Vpe::queue_write(std::uint64_t cycle, std::uint8_t reg, const VecReg& v) {
  for (const PendingWrite& p : pending_)
    if (p.visible_cycle == cycle && p.reg == reg)
      fail(Err::RegisterConflict,
           "two results land on d" + std::to_string(reg) + " in the same cycle");
  pending_.push_back({cycle, reg, v});
}

void Vpe::commit_upto(std::uint64_t cycle) {
  std::stable_sort(pending_.begin(), pending_.end(),
                   [](const PendingWrite& a, const PendingWrite& b) {
                     return a.visible_cycle < b.visible_cycle;
                   });
  std::size_t i = 0;
  for (; i < pending_.size() && pending_[i].visible_cycle <= cycle; ++i)
    drf_[pending_[i].reg] = pending_[i].value;
  pending_.erase(pending_.begin(), pending_.begin() + std::ptrdiff_t(i));
}

void Vpe::store_vector(const VecReg& lanes, unsigned valid, std::uint8_t aidx,
                       std::int32_t post_inc, std::uint8_t qidx, std::uint64_t cycle,
                       std::uint64_t start_ps) {
  const fabric::MemAddr a = adrf_[aidx];
  // Stores sit in the back half of the cycle's picosecond slots so a store
  // retiring in cycle c never collides with a load issued in cycle c.
  const std::uint64_t t = start_ps + cycle * period_ps_ + 2000;
  std::uint8_t buf[kLanes * 4];
  std::size_t n = 0;
  if (qidx != kNoQ) {
    for (unsigned i = 0; i < valid; ++i) buf[n++] = std::uint8_t(std::int8_t(lanes[i]));
  } else {
    for (unsigned i = 0; i < valid; ++i) {
      std::uint32_t u = std::uint32_t(lanes[i]);
      std::memcpy(buf + n, &u, 4);
      n += 4;
    }
  }
  fab_.write_bytes(a, buf, n, port_for(a.bank), t, 1);
  adrf_[aidx].byte += std::uint32_t(post_inc);
  stats_.mem_bytes += n;
}

std::uint64_t Vpe::run(const VpeLaunch& launch) {
  if (!prog_loaded_) fail(Err::ConfigError, "no program loaded");
  if (launch.pcache_base > pcache_.size())
    fail(Err::OutOfRange, "pCache stream base beyond loaded image");
  pcursor_ = launch.pcache_base;
  pending_.clear();
  for (const auto& [idx, addr] : launch.adrf_init) {
    if (idx >= adrf_.size()) fail(Err::BadIndex, "adRf init index out of range");
    adrf_[idx] = addr;
  }

  auto take_weight = [&]() -> std::int32_t {
    if (pcursor_ >= pcache_.size()) fail(Err::CapacityExceeded, "parameter stream exhausted");
    return pcache_[pcursor_++];
  };

  std::uint64_t cycle = 0;
  std::uint64_t channel_busy[2] = {0, 0};
  std::uint64_t drain = 0;
  bool finished = false;

  for (const VliwWord& w : prog_.words) {
    // Structural stall only: an occupied Mif channel delays the whole word.
    int ch = -1;
    std::size_t mem_bytes = 0;
    if (w.mif) {
      ch = w.mif->channel;
      mem_bytes = w.mif->kind == MifOp::Kind::Ld
                      ? (w.mif->width == ElemWidth::W4 ? kLanes * 4 : kLanes)
                      : 0;
    } else if ((w.simdu && w.simdu->dst_mem) || (w.vu && w.vu->dst_mem)) {
      ch = 0;  // compute-op stores ride channel 0
    }
    if (ch >= 0) cycle = std::max(cycle, channel_busy[ch]);
    commit_upto(cycle);

    if (w.simdu) {
      const SimdOp& s = *w.simdu;
      const VecReg src = read_drf(s.src);
      std::int8_t src8[kLanes];
      for (unsigned i = 0; i < kLanes; ++i) src8[i] = sat_i8(src[i]);
      VecReg out = s.dst_mem ? VecReg{} : read_drf(s.dst);
      unsigned valid = 0;
      if (s.kind == SimdOp::Kind::Prd) {
        for (unsigned j = 0; j < s.n_out; ++j) {
          std::int64_t acc = 0;
          for (unsigned i = 0; i < kLanes; ++i) acc += std::int32_t(src8[i]) * take_weight();
          out[j] = s.qidx != kNoQ ? finalize_lane(acc, prog_.qtable[s.qidx]) : sat_i32(acc);
        }
        valid = s.n_out;
        stats_.macs += std::uint64_t(s.n_out) * kLanes;
      } else {
        std::array<std::int64_t, kLanes> acc{};
        std::array<bool, kLanes> touched{};
        for (const PrdsDesc& d : s.descs) {
          std::int64_t p = 0;
          for (unsigned i = 0; i < d.width; ++i)
            p += std::int32_t(src8[d.src_off + i]) * take_weight();
          acc[d.dst_lane] += p;
          touched[d.dst_lane] = true;
          stats_.macs += d.width;
          valid = std::max(valid, unsigned(d.dst_lane) + 1);
        }
        for (unsigned j = 0; j < kLanes; ++j)
          if (touched[j])
            out[j] = s.qidx != kNoQ ? finalize_lane(acc[j], prog_.qtable[s.qidx]) : sat_i32(acc[j]);
      }
      const std::uint64_t vis = cycle + kSimdLatency;
      if (s.dst_mem) {
        store_vector(out, valid, s.dst, s.post_inc, s.qidx, vis, launch.start_ps);
        channel_busy[0] =
            cycle + channel_cycles(s.qidx != kNoQ ? std::size_t(valid) : std::size_t(valid) * 4);
        // The store retires in the back half of cycle `vis`; it has fully
        // drained only once cycle vis+1 begins.
        drain = std::max(drain, vis + 1);
      } else {
        queue_write(vis, s.dst, out);
        drain = std::max(drain, vis);
      }
      stats_.simd_ops++;
    }

    if (w.vu) {
      const VuOp& v = *w.vu;
      const VecReg a = read_drf(v.src_a);
      const VecReg b = read_drf(v.src_b);
      VecReg out{};
      for (unsigned i = 0; i < kLanes; ++i) {
        std::int64_t r = 0;
        switch (v.kind) {
          case VuOp::Kind::Vadd:
            r = std::int64_t(a[i]) + b[i];
            break;
          case VuOp::Kind::Vem:
            r = std::int64_t(a[i]) * b[i];
            break;
          case VuOp::Kind::Vmax:
            r = std::max(a[i], b[i]);
            break;
        }
        out[i] = v.qidx != kNoQ ? finalize_lane(r, prog_.qtable[v.qidx]) : sat_i32(r);
      }
      const std::uint64_t vis = cycle + kVuLatency;
      if (v.dst_mem) {
        store_vector(out, kLanes, v.dst, v.post_inc, v.qidx, vis, launch.start_ps);
        channel_busy[0] = cycle + channel_cycles(v.qidx != kNoQ ? kLanes : kLanes * 4);
        drain = std::max(drain, vis + 1);
      } else {
        queue_write(vis, v.dst, out);
        drain = std::max(drain, vis);
      }
      stats_.vu_ops++;
    }

    if (w.mif) {
      const MifOp& m = *w.mif;
      if (m.kind == MifOp::Kind::Fa) {
        if (fa_queue_.empty())
          fail(Err::Deadlock, "fa issued with no ready flow queued");
        adrf_[m.addr] = fa_queue_.front();
        fa_queue_.pop_front();
        channel_busy[m.channel] = cycle + 1;
        drain = std::max(drain, cycle + kFaLatency);
      } else {
        const fabric::MemAddr a = adrf_[m.addr];
        std::uint8_t buf[kLanes * 4];
        fab_.read_bytes(a, buf, mem_bytes, port_for(a.bank),
                        launch.start_ps + cycle * period_ps_, 1);
        VecReg v{};
        if (m.width == ElemWidth::B1) {
          for (unsigned i = 0; i < kLanes; ++i) v[i] = std::int8_t(buf[i]);
        } else {
          for (unsigned i = 0; i < kLanes; ++i) {
            std::uint32_t u;
            std::memcpy(&u, buf + i * 4, 4);
            v[i] = std::int32_t(u);
          }
        }
        queue_write(cycle + kLdLatency, m.dst, v);
        adrf_[m.addr].byte += std::uint32_t(m.post_inc);
        channel_busy[m.channel] = cycle + channel_cycles(mem_bytes);
        drain = std::max(drain, cycle + kLdLatency);
        stats_.mem_bytes += mem_bytes;
      }
      stats_.mif_ops++;
    }

    stats_.words++;
    if (w.fin) {
      finished = true;
      drain = std::max(drain, cycle + 1);
      break;
    }
    cycle += 1;
  }
  if (!finished) fail(Err::ConfigError, "program ran off the end without fin");

  commit_upto(drain);
  stats_.programs++;
  stats_.busy_cycles += drain;
  return launch.start_ps + drain * period_ps_;
}

}  // namespace ina::vpe
