#pragma once
// Packet ingestion: header parsing, deterministic synthetic trace generation,
// and pcap file reading. Scope is IPv4 + TCP/UDP/ICMP over Ethernet; no
// reassembly, checksum validation, or live capture.

#include <cstdint>
#include <string>
#include <vector>

#include "ina/common.hpp"

namespace ina::traffic {

struct FiveTuple {
  std::uint32_t src_ip = 0;
  std::uint32_t dst_ip = 0;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t proto = 0;

  bool operator==(const FiveTuple&) const = default;

  /// True when (src_ip, src_port) <= (dst_ip, dst_port) lexicographically,
  /// i.e. the tuple is already in canonical endpoint order.
  bool is_canonical() const {
    if (src_ip != dst_ip) return src_ip < dst_ip;
    return src_port <= dst_port;
  }
  /// Endpoint-ordered form shared by both directions of a flow.
  FiveTuple canonical() const {
    if (is_canonical()) return *this;
    return FiveTuple{dst_ip, src_ip, dst_port, src_port, proto};
  }
  FiveTuple reversed() const { return FiveTuple{dst_ip, src_ip, dst_port, src_port, proto}; }
};

/// 13-byte canonical wire encoding (ip,port,ip,port,proto), used for hashing
/// and slot tags.
std::array<std::uint8_t, 13> tuple_bytes(const FiveTuple& t);

struct RawPacket {
  std::vector<std::uint8_t> bytes;
  std::uint64_t arrival_ns = 0;
};

enum class Direction : std::uint8_t { Forward = 0, Backward = 1 };

struct ParseConfig {
  std::size_t payload_truncation = 16;  // payload_prefix length, zero-padded
};

struct ParsedHeader {
  FiveTuple tuple;
  std::uint32_t pkt_size = 0;  // full frame length in bytes
  std::uint8_t flags = 0;      // TCP flags / ICMP type / 0 for UDP
  // Canonical-orientation bit: Forward when the tuple is endpoint-ordered.
  // Flow-relative direction is resolved by the extractor against the
  // orientation stored at first sight of the flow.
  Direction direction = Direction::Forward;
  std::uint64_t arrival_ns = 0;
  std::vector<std::uint8_t> payload_prefix;  // exactly payload_truncation bytes
};

/// Decode one Ethernet/IPv4 frame. Throws SimError{MalformedFrame} for
/// truncated or inconsistent frames and SimError{UnsupportedProtocol} for
/// non-IPv4 ethertypes or L4 protocols outside {TCP, UDP, ICMP}.
ParsedHeader parse_packet(const RawPacket& pkt, const ParseConfig& cfg = {});

/// Craft a well-formed frame for tests and synthetic traces. `frame_size`
/// pads/truncates the payload so the full frame has exactly that length
/// (minimum = header overhead). TCP carries `flags`; UDP/ICMP ignore it.
RawPacket build_packet(const FiveTuple& tuple, std::uint64_t arrival_ns,
                       std::uint32_t frame_size, std::uint8_t flags,
                       const std::vector<std::uint8_t>& payload);

enum class Interleave : std::uint8_t { RoundRobin, Sequential };

struct SyntheticFlowSpec {
  std::uint32_t flow_count = 1;
  std::uint32_t packets_per_flow = 1;
  std::uint32_t size_min = 64;       // frame bytes, uniform
  std::uint32_t size_max = 512;
  std::uint32_t intv_min_us = 1;     // per-flow inter-arrival, uniform, >= 1us
  std::uint32_t intv_max_us = 100;
  std::uint64_t seed = 1;
  Interleave interleave = Interleave::RoundRobin;
};

/// Deterministic trace: same spec -> byte-identical packets and timestamps.
/// Tuples are distinct across flows; per-flow inter-arrivals are strictly
/// positive; the returned stream is sorted by arrival time.
std::vector<RawPacket> generate_trace(const SyntheticFlowSpec& spec);

/// Read a classic pcap file (usec or nsec magic, either byte order).
/// Timestamps are converted to nanoseconds. Throws IoError / BadMagic.
std::vector<RawPacket> read_pcap(const std::string& path);

/// Write a classic usec pcap (linktype 1). Used by tests and tooling.
void write_pcap(const std::string& path, const std::vector<RawPacket>& pkts);

}  // namespace ina::traffic
