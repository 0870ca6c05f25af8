#pragma once
// On-chip memory fabric: one feature bank (8192 x 128b) written by the
// extractor and read by the compute side, plus two compute banks
// (16384 x 128b each) for activations/partials. Banks are true dual-port
// with a fixed port binding: port 0 belongs to the extractor (feature bank)
// or the vector engine (compute banks); port 1 to the compute-side streamer
// (feature bank) or the systolic array (compute banks).
//
// Timing contract: every access carries the caller's simulated time in
// picoseconds. A port accepts at most one access per timestamp; a write
// becomes visible to reads at strictly later timestamps (read-first on
// same-time races). Violations abort the simulation via SimError.

#include <cstdint>
#include <string>
#include <vector>

#include "ina/common.hpp"

namespace ina::fabric {

constexpr std::uint32_t kWordBytes = 16;

enum class BankId : std::uint8_t { Feature = 0, Compute0 = 1, Compute1 = 2 };

inline const char* bank_name(BankId b) {
  switch (b) {
    case BankId::Feature: return "feature";
    case BankId::Compute0: return "compute0";
    case BankId::Compute1: return "compute1";
  }
  return "?";
}

/// Byte-granular address within one bank.
struct MemAddr {
  BankId bank = BankId::Compute0;
  std::uint32_t byte = 0;
};

struct Region {
  std::string name;
  BankId bank;
  std::uint32_t base_word = 0;
  std::uint32_t words = 0;
};

struct FabricConfig {
  std::uint32_t feature_depth = 8192;
  std::uint32_t compute_depth = 16384;
};

class MemoryBank {
 public:
  MemoryBank(BankId id, std::uint32_t depth);

  std::uint32_t depth() const { return depth_; }

  /// Read one word. Commits pending writes older than `t_ps` first, so a
  /// same-timestamp write on the other port is not yet visible.
  Word16 read(std::uint32_t word, unsigned port, std::uint64_t t_ps);

  /// Stage one word write; visible to reads at later timestamps.
  void write(std::uint32_t word, const Word16& data, unsigned port, std::uint64_t t_ps);

  /// Apply every pending write with commit time < t_ps (UINT64_MAX = all).
  void commit_upto(std::uint64_t t_ps);

  /// Timestamp of the last committed write to `word` (0 = never written).
  std::uint64_t last_write_ps(std::uint32_t word) const;

  /// Direct committed-state access for verification/dump (no port model).
  const std::vector<Word16>& committed() const { return store_; }
  void load(const std::vector<Word16>& image);
  void reset();

 private:
  void check_port(unsigned port, std::uint64_t t_ps, bool is_write);

  BankId id_;
  std::uint32_t depth_;
  std::vector<Word16> store_;
  std::vector<std::uint64_t> write_ps_;

  struct Pending {
    std::uint64_t t;
    std::uint64_t seq;
    std::uint32_t word;
    std::uint8_t port;
    Word16 data;
  };
  std::vector<Pending> pending_;
  std::uint64_t seq_ = 0;

  struct PortState {
    std::uint64_t last_t = UINT64_MAX;
    unsigned uses_at_last = 0;
  };
  PortState ports_[2];
};

class Fabric {
 public:
  explicit Fabric(const FabricConfig& cfg = {});

  MemoryBank& bank(BankId id) { return banks_[static_cast<int>(id)]; }
  const MemoryBank& bank(BankId id) const { return banks_[static_cast<int>(id)]; }

  // ---- byte-granular helpers (multi-word ops touch one word per step) ----
  // Each touched word is a separate port access at t_ps + word_index*step_ps.
  void read_bytes(const MemAddr& a, std::uint8_t* out, std::size_t len, unsigned port,
                  std::uint64_t t_ps, std::uint64_t step_ps);
  void write_bytes(const MemAddr& a, const std::uint8_t* src, std::size_t len, unsigned port,
                   std::uint64_t t_ps, std::uint64_t step_ps);

  // ---- named-region allocation (bump allocator per bank) ----
  /// Allocate `words` words; returns base word index. Throws OutOfMemory.
  std::uint32_t allocate(BankId bank, const std::string& name, std::uint32_t words);
  /// Place a region at an explicit base; throws Overlap on intersection.
  void allocate_at(BankId bank, const std::string& name, std::uint32_t base,
                   std::uint32_t words);
  const std::vector<Region>& regions() const { return regions_; }
  const Region* find_region(const std::string& name) const;
  void clear_regions();

  void commit_all();

  /// Write <dir>/<bank>.bin images plus <dir>/manifest.json.
  void dump_image(const std::string& dir);
  /// Restore a dump produced by dump_image.
  void load_image(const std::string& dir);

 private:
  std::vector<MemoryBank> banks_;
  std::vector<Region> regions_;
  std::uint32_t cursor_[3] = {0, 0, 0};
};

}  // namespace ina::fabric
