#include "ina/fabric.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ina::fabric {

MemoryBank::MemoryBank(BankId id, std::uint32_t depth)
    : id_(id), depth_(depth), store_(depth, Word16{}), write_ps_(depth, 0) {}

void MemoryBank::check_port(unsigned port, std::uint64_t t_ps, bool is_write) {
  if (port > 1) fail(Err::PortConflict, std::string(bank_name(id_)) + ": port index > 1");
  PortState& ps = ports_[port];
  if (ps.last_t == t_ps) {
    ++ps.uses_at_last;
    fail(Err::PortConflict, std::string(bank_name(id_)) + " port " + std::to_string(port) +
                                ": second " + (is_write ? "write" : "read") + " in cycle t=" +
                                std::to_string(t_ps) + " ps");
  }
  ps.last_t = t_ps;
  ps.uses_at_last = 1;
}

Word16 MemoryBank::read(std::uint32_t word, unsigned port, std::uint64_t t_ps) {
  if (word >= depth_)
    fail(Err::OutOfRange, std::string(bank_name(id_)) + ": read word " + std::to_string(word));
  check_port(port, t_ps, false);
  commit_upto(t_ps);
  return store_[word];
}

void MemoryBank::write(std::uint32_t word, const Word16& data, unsigned port,
                       std::uint64_t t_ps) {
  if (word >= depth_)
    fail(Err::OutOfRange, std::string(bank_name(id_)) + ": write word " + std::to_string(word));
  check_port(port, t_ps, true);
  pending_.push_back(Pending{t_ps, seq_++, word, static_cast<std::uint8_t>(port), data});
}

void MemoryBank::commit_upto(std::uint64_t t_ps) {
  if (pending_.empty()) return;
  // Commit order: time, then port (port 1 wins same-time write races), then
  // issue order. Writes at exactly t_ps stay pending (read-first rule).
  std::stable_sort(pending_.begin(), pending_.end(), [](const Pending& a, const Pending& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.port != b.port) return a.port < b.port;
    return a.seq < b.seq;
  });
  std::size_t i = 0;
  for (; i < pending_.size() && pending_[i].t < t_ps; ++i) {
    store_[pending_[i].word] = pending_[i].data;
    write_ps_[pending_[i].word] = pending_[i].t;
  }
  pending_.erase(pending_.begin(), pending_.begin() + i);
}

std::uint64_t MemoryBank::last_write_ps(std::uint32_t word) const {
  if (word >= depth_) fail(Err::OutOfRange, "last_write_ps");
  return write_ps_[word];
}

void MemoryBank::load(const std::vector<Word16>& image) {
  if (image.size() != depth_) fail(Err::OutOfRange, "bank image size mismatch");
  store_ = image;
}

void MemoryBank::reset() {
  std::fill(store_.begin(), store_.end(), Word16{});
  std::fill(write_ps_.begin(), write_ps_.end(), 0);
  pending_.clear();
  ports_[0] = PortState{};
  ports_[1] = PortState{};
}

Fabric::Fabric(const FabricConfig& cfg) {
  banks_.emplace_back(BankId::Feature, cfg.feature_depth);
  banks_.emplace_back(BankId::Compute0, cfg.compute_depth);
  banks_.emplace_back(BankId::Compute1, cfg.compute_depth);
}

void Fabric::read_bytes(const MemAddr& a, std::uint8_t* out, std::size_t len, unsigned port,
                        std::uint64_t t_ps, std::uint64_t step_ps) {
  MemoryBank& b = bank(a.bank);
  std::size_t done = 0;
  std::uint32_t word = a.byte / 16;
  std::uint32_t off = a.byte % 16;
  std::uint64_t t = t_ps;
  while (done < len) {
    const Word16 w = b.read(word, port, t);
    const std::size_t n = std::min<std::size_t>(16 - off, len - done);
    std::memcpy(out + done, w.data() + off, n);
    done += n;
    off = 0;
    ++word;
    t += step_ps;
  }
}

void Fabric::write_bytes(const MemAddr& a, const std::uint8_t* src, std::size_t len,
                         unsigned port, std::uint64_t t_ps, std::uint64_t step_ps) {
  MemoryBank& b = bank(a.bank);
  std::size_t done = 0;
  std::uint32_t word = a.byte / 16;
  std::uint32_t off = a.byte % 16;
  std::uint64_t t = t_ps;
  while (done < len) {
    const std::size_t n = std::min<std::size_t>(16 - off, len - done);
    Word16 w{};
    if (n != 16) {
      // partial-word update: read-modify-write against latest visible state
      b.commit_upto(t + 1);
      w = b.committed()[word];
    }
    std::memcpy(w.data() + off, src + done, n);
    b.write(word, w, port, t);
    done += n;
    off = 0;
    ++word;
    t += step_ps;
  }
}

std::uint32_t Fabric::allocate(BankId bk, const std::string& name, std::uint32_t words) {
  const int i = static_cast<int>(bk);
  const std::uint32_t base = cursor_[i];
  if (base + words > bank(bk).depth())
    fail(Err::OutOfMemory, std::string(bank_name(bk)) + ": region '" + name + "' needs " +
                               std::to_string(words) + " words, " +
                               std::to_string(bank(bk).depth() - base) + " free");
  cursor_[i] = base + words;
  regions_.push_back(Region{name, bk, base, words});
  return base;
}

void Fabric::allocate_at(BankId bk, const std::string& name, std::uint32_t base,
                         std::uint32_t words) {
  if (base + words > bank(bk).depth())
    fail(Err::OutOfMemory, std::string(bank_name(bk)) + ": region '" + name + "' out of bank");
  for (const Region& r : regions_) {
    if (r.bank != bk) continue;
    const bool disjoint = base + words <= r.base_word || r.base_word + r.words <= base;
    if (!disjoint)
      fail(Err::Overlap, "region '" + name + "' overlaps '" + r.name + "' in " + bank_name(bk));
  }
  regions_.push_back(Region{name, bk, base, words});
  const int i = static_cast<int>(bk);
  cursor_[i] = std::max(cursor_[i], base + words);
}

const Region* Fabric::find_region(const std::string& name) const {
  for (const Region& r : regions_)
    if (r.name == name) return &r;
  return nullptr;
}

void Fabric::clear_regions() {
  regions_.clear();
  cursor_[0] = cursor_[1] = cursor_[2] = 0;
}

void Fabric::commit_all() {
  for (auto& b : banks_) b.commit_upto(UINT64_MAX);
}

void Fabric::dump_image(const std::string& dir) {
  commit_all();
  nlohmann::json manifest;
  for (auto& b : banks_) {
    const BankId id = static_cast<BankId>(&b - banks_.data());
    const std::string file = std::string(bank_name(id)) + ".bin";
    std::ofstream os(dir + "/" + file, std::ios::binary);
    if (!os) fail(Err::IoError, "cannot create " + dir + "/" + file);
    os.write(reinterpret_cast<const char*>(b.committed().data()),
             static_cast<std::streamsize>(b.committed().size() * 16));
    manifest["banks"].push_back({{"name", bank_name(id)},
                                 {"file", file},
                                 {"depth_words", b.depth()},
                                 {"word_bytes", 16}});
  }
  for (const Region& r : regions_)
    manifest["regions"].push_back({{"name", r.name},
                                   {"bank", bank_name(r.bank)},
                                   {"base_word", r.base_word},
                                   {"words", r.words}});
  std::ofstream os(dir + "/manifest.json");
  if (!os) fail(Err::IoError, "cannot create " + dir + "/manifest.json");
  os << manifest.dump(2) << "\n";
}

void Fabric::load_image(const std::string& dir) {
  std::ifstream ms(dir + "/manifest.json");
  if (!ms) fail(Err::IoError, "cannot open " + dir + "/manifest.json");
  nlohmann::json manifest = nlohmann::json::parse(ms, nullptr, false);
  if (manifest.is_discarded()) fail(Err::IoError, "manifest.json is not valid JSON");
  for (const auto& bj : manifest.at("banks")) {
    const std::string name = bj.at("name");
    MemoryBank* target = nullptr;
    for (auto& b : banks_)
      if (name == bank_name(static_cast<BankId>(&b - banks_.data()))) target = &b;
    if (!target) fail(Err::IoError, "manifest names unknown bank " + name);
    std::ifstream is(dir + "/" + bj.at("file").get<std::string>(), std::ios::binary);
    if (!is) fail(Err::IoError, "cannot open bank image for " + name);
    std::vector<Word16> image(target->depth());
    is.read(reinterpret_cast<char*>(image.data()),
            static_cast<std::streamsize>(image.size() * 16));
    if (static_cast<std::size_t>(is.gcount()) != image.size() * 16)
      fail(Err::IoError, "bank image truncated for " + name);
    target->load(image);
  }
}

}  // namespace ina::fabric
