// Dual-port memory fabric: read-first visibility, per-port single access per
// timestamp, commit ordering, region allocation and image dump/load.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "ina/fabric.hpp"

using namespace ina;
using namespace ina::fabric;

namespace {
Word16 pattern(std::uint8_t seed) {
  Word16 w{};
  for (unsigned i = 0; i < 16; ++i) w[i] = std::uint8_t(seed + i);
  return w;
}
}  // namespace

TEST_CASE("a write becomes visible only at strictly later timestamps") {
  Fabric fab;
  MemoryBank& b = fab.bank(BankId::Compute0);
  b.write(5, pattern(1), 0, 1000);
  // Same timestamp, other port: read-first, still the old (zero) word.
  CHECK(b.read(5, 1, 1000) == Word16{});
  // One picosecond later the write has committed.
  CHECK(b.read(5, 1, 1001) == pattern(1));
  CHECK(b.last_write_ps(5) == 1000);
}

TEST_CASE("same-time write race: port 1 wins, then issue order breaks ties") {
  Fabric fab;
  MemoryBank& b = fab.bank(BankId::Compute0);
  b.write(7, pattern(0x10), 1, 500);
  b.write(7, pattern(0x20), 0, 500);
  b.commit_upto(501);
  // Port 0 commits before port 1, so port 1's data is the survivor.
  CHECK(b.committed()[7] == pattern(0x10));

  b.write(8, pattern(0x30), 0, 600);
  b.write(8, pattern(0x40), 1, 601);
  b.commit_upto(UINT64_MAX);
  CHECK(b.committed()[8] == pattern(0x40));
  CHECK(b.last_write_ps(8) == 601);
}

TEST_CASE("one access per port per timestamp") {
  Fabric fab;
  MemoryBank& b = fab.bank(BankId::Feature);
  b.read(0, 0, 100);
  try {
    b.read(1, 0, 100);  // different word, same port+time: still a conflict
    FAIL("expected PortConflict");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::PortConflict);
  }
  // The other port at the same time is fine.
  CHECK_NOTHROW(b.read(1, 1, 100));
  // And the same port at another time is fine.
  CHECK_NOTHROW(b.read(1, 0, 101));

  b.write(2, pattern(9), 0, 200);
  try {
    b.write(3, pattern(9), 0, 200);
    FAIL("expected PortConflict");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::PortConflict);
  }
}

TEST_CASE("out-of-range words are rejected") {
  Fabric fab;
  MemoryBank& b = fab.bank(BankId::Feature);  // depth 8192
  try {
    b.read(8192, 0, 1);
    FAIL("expected OutOfRange");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::OutOfRange);
  }
  try {
    b.write(8192, Word16{}, 0, 1);
    FAIL("expected OutOfRange");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::OutOfRange);
  }
}

TEST_CASE("byte helpers stride port accesses across word boundaries") {
  Fabric fab;
  // 40 bytes starting at byte 8 touch words 0,1,2 at t, t+3, t+6.
  std::uint8_t src[40];
  for (unsigned i = 0; i < 40; ++i) src[i] = std::uint8_t(i + 1);
  fab.write_bytes({BankId::Compute1, 8}, src, 40, 0, 1000, 3);

  std::uint8_t back[40] = {};
  fab.read_bytes({BankId::Compute1, 8}, back, 40, 1, 2000, 3);
  for (unsigned i = 0; i < 40; ++i) CHECK(back[i] == src[i]);

  // The three writes consumed port 0 at exactly t, t+3, t+6.
  MemoryBank& b = fab.bank(BankId::Compute1);
  for (std::uint64_t t : {1000ull, 1003ull, 1006ull}) {
    try {
      b.write(100, Word16{}, 0, t);
      FAIL("expected PortConflict");
    } catch (const SimError& e) {
      CHECK(e.code() == Err::PortConflict);
    }
  }
  // A partial-word write preserved the neighbors' bytes.
  b.commit_upto(UINT64_MAX);
  CHECK(b.committed()[0][7] == 0);
  CHECK(b.committed()[0][8] == 1);
  CHECK(b.committed()[3][0] == 0);
}

TEST_CASE("bump allocator and explicit placement") {
  Fabric fab;
  const std::uint32_t a = fab.allocate(BankId::Compute0, "a", 100);
  const std::uint32_t b = fab.allocate(BankId::Compute0, "b", 50);
  CHECK(a == 0);
  CHECK(b == 100);
  CHECK(fab.find_region("a") != nullptr);
  CHECK(fab.find_region("a")->words == 100);
  CHECK(fab.find_region("missing") == nullptr);

  // Explicit placement collides with 'b'.
  try {
    fab.allocate_at(BankId::Compute0, "c", 120, 10);
    FAIL("expected Overlap");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::Overlap);
  }
  // Same base in the other bank is independent.
  CHECK_NOTHROW(fab.allocate_at(BankId::Compute1, "c", 120, 10));

  // Exhaustion.
  try {
    fab.allocate(BankId::Compute0, "huge", 20000);
    FAIL("expected OutOfMemory");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::OutOfMemory);
  }

  fab.clear_regions();
  CHECK(fab.regions().empty());
  CHECK(fab.allocate(BankId::Compute0, "fresh", 1) == 0);
}

TEST_CASE("image dump/load restores committed bytes") {
  namespace fs = std::filesystem;
  const std::string dir = "fabric_image_test_dir";
  fs::create_directories(dir);

  Fabric fab;
  fab.allocate(BankId::Compute0, "blob", 4);
  std::uint8_t data[64];
  for (unsigned i = 0; i < 64; ++i) data[i] = std::uint8_t(255 - i);
  fab.write_bytes({BankId::Compute0, 0}, data, 64, 0, 10, 1);
  fab.dump_image(dir);  // commits, then writes images + manifest

  Fabric other;
  other.load_image(dir);
  std::uint8_t back[64];
  other.read_bytes({BankId::Compute0, 0}, back, 64, 1, 99, 1);
  for (unsigned i = 0; i < 64; ++i) CHECK(back[i] == data[i]);

  fs::remove_all(dir);
}
