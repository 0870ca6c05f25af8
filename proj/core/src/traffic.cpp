#include "ina/traffic.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <memory>
#include <random>
#include <set>

#include "ina/numeric.hpp"

namespace ina::traffic {

namespace {

constexpr std::uint16_t kEthertypeIpv4 = 0x0800;
constexpr std::uint8_t kProtoIcmp = 1;
constexpr std::uint8_t kProtoTcp = 6;
constexpr std::uint8_t kProtoUdp = 17;

std::uint16_t rd16(const std::uint8_t* p) { return std::uint16_t(p[0]) << 8 | p[1]; }
std::uint32_t rd32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) << 24 | std::uint32_t(p[1]) << 16 | std::uint32_t(p[2]) << 8 | p[3];
}
void wr16(std::uint8_t* p, std::uint16_t v) {
  p[0] = std::uint8_t(v >> 8);
  p[1] = std::uint8_t(v);
}
void wr32(std::uint8_t* p, std::uint32_t v) {
  p[0] = std::uint8_t(v >> 24);
  p[1] = std::uint8_t(v >> 16);
  p[2] = std::uint8_t(v >> 8);
  p[3] = std::uint8_t(v);
}

}  // namespace

std::array<std::uint8_t, 13> tuple_bytes(const FiveTuple& t) {
  const FiveTuple c = t.canonical();
  std::array<std::uint8_t, 13> b{};
  wr32(b.data(), c.src_ip);
  wr16(b.data() + 4, c.src_port);
  wr32(b.data() + 6, c.dst_ip);
  wr16(b.data() + 10, c.dst_port);
  b[12] = c.proto;
  return b;
}

ParsedHeader parse_packet(const RawPacket& pkt, const ParseConfig& cfg) {
  const auto& b = pkt.bytes;
  if (b.size() < 14) fail(Err::MalformedFrame, "frame shorter than Ethernet header");
  const std::uint16_t ethertype = rd16(b.data() + 12);
  if (ethertype != kEthertypeIpv4)
    fail(Err::UnsupportedProtocol, "ethertype 0x" + std::to_string(ethertype));

  const std::uint8_t* ip = b.data() + 14;
  const std::size_t ip_avail = b.size() - 14;
  if (ip_avail < 20) fail(Err::MalformedFrame, "truncated IPv4 header");
  if ((ip[0] >> 4) != 4) fail(Err::MalformedFrame, "IPv4 version field mismatch");
  const std::size_t ihl = std::size_t(ip[0] & 0x0f) * 4;
  if (ihl < 20 || ip_avail < ihl) fail(Err::MalformedFrame, "bad IHL");
  const std::size_t ip_total = rd16(ip + 2);
  if (ip_total < ihl || ip_total > ip_avail) fail(Err::MalformedFrame, "bad IPv4 total length");

  ParsedHeader h;
  h.tuple.proto = ip[9];
  h.tuple.src_ip = rd32(ip + 12);
  h.tuple.dst_ip = rd32(ip + 16);
  h.pkt_size = static_cast<std::uint32_t>(b.size());
  h.arrival_ns = pkt.arrival_ns;

  const std::uint8_t* l4 = ip + ihl;
  const std::size_t l4_avail = ip_total - ihl;
  std::size_t payload_off = 0;
  switch (h.tuple.proto) {
    case kProtoTcp: {
      if (l4_avail < 20) fail(Err::MalformedFrame, "truncated TCP header");
      h.tuple.src_port = rd16(l4);
      h.tuple.dst_port = rd16(l4 + 2);
      const std::size_t doff = std::size_t(l4[12] >> 4) * 4;
      if (doff < 20 || doff > l4_avail) fail(Err::MalformedFrame, "bad TCP data offset");
      h.flags = l4[13];
      payload_off = doff;
      break;
    }
    case kProtoUdp: {
      if (l4_avail < 8) fail(Err::MalformedFrame, "truncated UDP header");
      h.tuple.src_port = rd16(l4);
      h.tuple.dst_port = rd16(l4 + 2);
      h.flags = 0;
      payload_off = 8;
      break;
    }
    case kProtoIcmp: {
      if (l4_avail < 8) fail(Err::MalformedFrame, "truncated ICMP header");
      h.flags = l4[0];  // ICMP type
      payload_off = 8;
      break;
    }
    default:
      fail(Err::UnsupportedProtocol, "IP protocol " + std::to_string(h.tuple.proto));
  }

  h.direction = h.tuple.is_canonical() ? Direction::Forward : Direction::Backward;

  h.payload_prefix.assign(cfg.payload_truncation, 0);
  const std::size_t have = l4_avail - payload_off;
  const std::size_t n = std::min(have, cfg.payload_truncation);
  std::memcpy(h.payload_prefix.data(), l4 + payload_off, n);
  return h;
}

RawPacket build_packet(const FiveTuple& tuple, std::uint64_t arrival_ns,
                       std::uint32_t frame_size, std::uint8_t flags,
                       const std::vector<std::uint8_t>& payload) {
  std::size_t l4_hdr = 0;
  switch (tuple.proto) {
    case kProtoTcp: l4_hdr = 20; break;
    case kProtoUdp: l4_hdr = 8; break;
    case kProtoIcmp: l4_hdr = 8; break;
    default: fail(Err::UnsupportedProtocol, "build_packet: protocol " + std::to_string(tuple.proto));
  }
  const std::size_t overhead = 14 + 20 + l4_hdr;
  const std::size_t total = std::max<std::size_t>(frame_size, overhead);
  std::size_t pay_len = total - overhead;

  RawPacket pkt;
  pkt.arrival_ns = arrival_ns;
  pkt.bytes.assign(total, 0);
  std::uint8_t* b = pkt.bytes.data();

  // Ethernet: fixed locally-administered MACs, IPv4 ethertype.
  const std::uint8_t dst_mac[6] = {0x02, 0, 0, 0, 0, 0x02};
  const std::uint8_t src_mac[6] = {0x02, 0, 0, 0, 0, 0x01};
  std::memcpy(b, dst_mac, 6);
  std::memcpy(b + 6, src_mac, 6);
  wr16(b + 12, kEthertypeIpv4);

  std::uint8_t* ip = b + 14;
  ip[0] = 0x45;  // v4, IHL 5
  wr16(ip + 2, static_cast<std::uint16_t>(20 + l4_hdr + pay_len));
  ip[8] = 64;  // TTL
  ip[9] = tuple.proto;
  wr32(ip + 12, tuple.src_ip);
  wr32(ip + 16, tuple.dst_ip);

  std::uint8_t* l4 = ip + 20;
  switch (tuple.proto) {
    case kProtoTcp:
      wr16(l4, tuple.src_port);
      wr16(l4 + 2, tuple.dst_port);
      l4[12] = 5 << 4;  // data offset 5 words
      l4[13] = flags;
      break;
    case kProtoUdp:
      wr16(l4, tuple.src_port);
      wr16(l4 + 2, tuple.dst_port);
      wr16(l4 + 4, static_cast<std::uint16_t>(8 + pay_len));
      break;
    case kProtoIcmp:
      l4[0] = flags;  // type
      break;
  }
  std::uint8_t* pay = l4 + l4_hdr;
  const std::size_t n = std::min(pay_len, payload.size());
  std::memcpy(pay, payload.data(), n);
  return pkt;
}

std::vector<RawPacket> generate_trace(const SyntheticFlowSpec& spec) {
  if (spec.flow_count == 0 || spec.packets_per_flow == 0)
    fail(Err::ConfigError, "generate_trace: empty spec");
  if (spec.size_min > spec.size_max || spec.intv_min_us > spec.intv_max_us)
    fail(Err::ConfigError, "generate_trace: inverted distribution bounds");
  if (spec.intv_min_us == 0)
    fail(Err::ConfigError, "generate_trace: inter-arrival must be strictly positive");

  std::mt19937_64 rng(spec.seed);

  // Distinct tuples, one per flow. Regenerate on the (rare) duplicate.
  std::vector<FiveTuple> tuples;
  std::set<std::array<std::uint8_t, 13>> seen;
  while (tuples.size() < spec.flow_count) {
    FiveTuple t;
    t.src_ip = 0x0a000000u | static_cast<std::uint32_t>(rng_range(rng, 1, 0xfffffe));
    t.dst_ip = 0xc0a80000u | static_cast<std::uint32_t>(rng_range(rng, 1, 0xfffe));
    t.src_port = static_cast<std::uint16_t>(rng_range(rng, 1024, 65535));
    t.dst_port = static_cast<std::uint16_t>(rng_range(rng, 1, 1023));
    t.proto = kProtoTcp;
    if (seen.insert(tuple_bytes(t)).second) tuples.push_back(t);
  }

  struct Pending {
    std::uint64_t ns;
    std::uint32_t flow;
    std::uint32_t idx;
    RawPacket pkt;
  };
  std::vector<Pending> all;
  all.reserve(std::size_t(spec.flow_count) * spec.packets_per_flow);

  std::uint64_t seq_cursor_ns = 1000;  // running start for sequential mode
  for (std::uint32_t f = 0; f < spec.flow_count; ++f) {
    std::uint64_t t_ns = (spec.interleave == Interleave::RoundRobin)
                             ? 1000 + std::uint64_t(f) * 997  // staggered starts
                             : seq_cursor_ns;
    for (std::uint32_t i = 0; i < spec.packets_per_flow; ++i) {
      if (i > 0) {
        const std::uint64_t iv_us = rng_range(rng, spec.intv_min_us, spec.intv_max_us);
        t_ns += iv_us * 1000;  // strictly positive step
      }
      const auto size = static_cast<std::uint32_t>(rng_range(rng, spec.size_min, spec.size_max));
      std::uint8_t flags = 0x10;  // ACK
      if (i == 0) flags = 0x02;   // SYN
      if (i + 1 == spec.packets_per_flow && spec.packets_per_flow > 1) flags = 0x11;  // FIN|ACK
      std::vector<std::uint8_t> payload(64);
      for (auto& byte : payload) byte = static_cast<std::uint8_t>(rng_range(rng, 0, 255));
      all.push_back({t_ns, f, i, build_packet(tuples[f], t_ns, size, flags, payload)});
    }
    seq_cursor_ns = t_ns + 1000;
  }

  std::stable_sort(all.begin(), all.end(),
                   [](const Pending& a, const Pending& b) { return a.ns < b.ns; });

  std::vector<RawPacket> out;
  out.reserve(all.size());
  for (auto& p : all) out.push_back(std::move(p.pkt));
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint32_t swap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

}  // namespace

std::vector<RawPacket> read_pcap(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail(Err::IoError, "cannot open " + path);

  std::uint8_t gh[24];
  if (std::fread(gh, 1, 24, f.get()) != 24) fail(Err::IoError, "pcap global header truncated");
  std::uint32_t magic;
  std::memcpy(&magic, gh, 4);

  bool swapped = false;
  std::uint64_t frac_to_ns = 1000;  // usec by default
  switch (magic) {
    case 0xa1b2c3d4u: break;
    case 0xd4c3b2a1u: swapped = true; break;
    case 0xa1b23c4du: frac_to_ns = 1; break;
    case 0x4d3cb2a1u: frac_to_ns = 1; swapped = true; break;
    default: fail(Err::BadMagic, "pcap magic 0x" + std::to_string(magic));
  }

  std::vector<RawPacket> out;
  for (;;) {
    std::uint8_t rh[16];
    const std::size_t got = std::fread(rh, 1, 16, f.get());
    if (got == 0) break;  // clean EOF
    if (got != 16) fail(Err::IoError, "pcap record header truncated");
    std::uint32_t ts_sec, ts_frac, incl_len;
    std::memcpy(&ts_sec, rh, 4);
    std::memcpy(&ts_frac, rh + 4, 4);
    std::memcpy(&incl_len, rh + 8, 4);
    if (swapped) {
      ts_sec = swap32(ts_sec);
      ts_frac = swap32(ts_frac);
      incl_len = swap32(incl_len);
    }
    if (incl_len > (1u << 26)) fail(Err::IoError, "pcap record length implausible");
    RawPacket p;
    p.bytes.resize(incl_len);
    if (incl_len && std::fread(p.bytes.data(), 1, incl_len, f.get()) != incl_len)
      fail(Err::IoError, "pcap record body truncated");
    p.arrival_ns = std::uint64_t(ts_sec) * 1000000000ull + std::uint64_t(ts_frac) * frac_to_ns;
    out.push_back(std::move(p));
  }
  // The engine requires non-decreasing arrivals; tolerate mildly unsorted
  // captures instead of rejecting them.
  std::stable_sort(out.begin(), out.end(),
                   [](const RawPacket& a, const RawPacket& b) { return a.arrival_ns < b.arrival_ns; });
  return out;
}

void write_pcap(const std::string& path, const std::vector<RawPacket>& pkts) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail(Err::IoError, "cannot create " + path);
  std::uint8_t hdr[24] = {};
  const std::uint32_t magic = 0xa1b2c3d4u;
  const std::uint16_t ver_major = 2, ver_minor = 4;
  const std::uint32_t snaplen = 65535, linktype = 1;  // Ethernet
  std::memcpy(hdr, &magic, 4);
  std::memcpy(hdr + 4, &ver_major, 2);
  std::memcpy(hdr + 6, &ver_minor, 2);
  std::memcpy(hdr + 16, &snaplen, 4);
  std::memcpy(hdr + 20, &linktype, 4);
  if (std::fwrite(hdr, 1, 24, f.get()) != 24) fail(Err::IoError, "short write " + path);

  for (const auto& p : pkts) {
    std::uint32_t rh[4];
    rh[0] = static_cast<std::uint32_t>(p.arrival_ns / 1000000000ull);
    rh[1] = static_cast<std::uint32_t>((p.arrival_ns % 1000000000ull) / 1000ull);
    rh[2] = static_cast<std::uint32_t>(p.bytes.size());
    rh[3] = static_cast<std::uint32_t>(p.bytes.size());
    if (std::fwrite(rh, 1, 16, f.get()) != 16) fail(Err::IoError, "short write " + path);
    if (!p.bytes.empty() &&
        std::fwrite(p.bytes.data(), 1, p.bytes.size(), f.get()) != p.bytes.size())
      fail(Err::IoError, "short write " + path);
  }
}

}  // namespace ina::traffic
