#include "ina/asm_text.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>
#include <vector>

namespace ina::asmtext {

namespace {

// ---- shared emit helpers --------------------------------------------------

const char* act_name(Act a) {
  switch (a) {
    case Act::Relu:
      return "relu";
    case Act::GeluLut:
      return "gelu";
    default:
      return "none";
  }
}

void emit_qtable(std::ostringstream& os, const std::vector<QEntry>& qt) {
  for (std::size_t i = 0; i < qt.size(); ++i) {
    const QEntry& e = qt[i];
    os << ".q " << i << ' ' << e.scale.mult << ' ' << unsigned(e.scale.shift) << ' '
       << act_name(e.act) << '\n';
    if (e.has_lut) {
      os << ".lut " << i << ' ';
      char b[4];
      for (int v : e.lut) {
        std::snprintf(b, sizeof b, "%02x", unsigned(std::uint8_t(v)));
        os << b;
      }
      os << '\n';
    }
  }
}

// ---- shared parse helpers -------------------------------------------------

[[noreturn]] void perr(std::size_t line, const std::string& msg) {
  fail(Err::ConfigError, "asm line " + std::to_string(line) + ": " + msg);
}

std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  int brace = 0;
  for (char c : s) {
    if (c == '{') brace++;
    if (c == '}') brace--;
    if (c == sep && brace == 0) {
      out.push_back(strip(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!strip(cur).empty() || !out.empty()) out.push_back(strip(cur));
  return out;
}

long num(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    long v = std::stol(s, &used);
    if (used != s.size()) perr(line, "bad number '" + s + "'");
    return v;
  } catch (const std::exception&) {
    perr(line, "bad number '" + s + "'");
  }
}

/// "d3" -> 3 with required prefix letter.
unsigned reg(const std::string& s, char prefix, std::size_t line) {
  if (s.size() < 2 || s[0] != prefix) perr(line, std::string("expected ") + prefix + "-register, got '" + s + "'");
  return unsigned(num(s.substr(1), line));
}

Act act_from(const std::string& s, std::size_t line) {
  if (s == "none") return Act::None;
  if (s == "relu") return Act::Relu;
  if (s == "gelu") return Act::GeluLut;
  perr(line, "unknown activation '" + s + "'");
}

struct QDirectives {
  std::vector<QEntry> qtable;
  bool handle(const std::string& t, std::size_t line) {
    if (t.rfind(".q ", 0) == 0) {
      auto f = split(t.substr(3), ' ');
      std::vector<std::string> tok;
      for (auto& x : f)
        if (!x.empty()) tok.push_back(x);
      if (tok.size() != 4) perr(line, ".q needs: index mult shift act");
      const std::size_t idx = std::size_t(num(tok[0], line));
      if (qtable.size() <= idx) qtable.resize(idx + 1);
      qtable[idx].scale.mult = std::int32_t(num(tok[1], line));
      qtable[idx].scale.shift = std::uint8_t(num(tok[2], line));
      qtable[idx].act = act_from(tok[3], line);
      return true;
    }
    if (t.rfind(".lut ", 0) == 0) {
      auto sp = t.find(' ', 5);
      if (sp == std::string::npos) perr(line, ".lut needs: index hexbytes");
      const std::size_t idx = std::size_t(num(strip(t.substr(5, sp - 5)), line));
      const std::string hex = strip(t.substr(sp + 1));
      if (hex.size() != 512) perr(line, ".lut needs 256 hex bytes");
      if (qtable.size() <= idx) qtable.resize(idx + 1);
      for (int i = 0; i < 256; ++i) {
        unsigned v = 0;
        if (std::sscanf(hex.c_str() + 2 * i, "%2x", &v) != 1) perr(line, "bad .lut hex");
        qtable[idx].lut[std::size_t(i)] = std::int8_t(std::uint8_t(v));
      }
      qtable[idx].has_lut = true;
      return true;
    }
    return false;
  }
};

// ---- VPE operand text -----------------------------------------------------

std::string mem_dst(unsigned areg, std::int32_t post_inc) {
  std::string s = "@a" + std::to_string(areg);
  if (post_inc != 0) s += "+" + std::to_string(post_inc);
  return s;
}

// "@a3+8" -> (3, 8); plain "d4" handled by caller.
void parse_mem_dst(const std::string& s, std::uint8_t& areg, std::int32_t& post, std::size_t line) {
  auto plus = s.find('+');
  areg = std::uint8_t(reg(s.substr(1, plus == std::string::npos ? std::string::npos : plus - 1),
                          'a', line));
  post = plus == std::string::npos ? 0 : std::int32_t(num(s.substr(plus + 1), line));
}

}  // namespace

// ===========================================================================
// VPE

std::string emit(const vpe::VpeProgram& p) {
  std::ostringstream os;
  emit_qtable(os, p.qtable);
  for (const vpe::VliwWord& w : p.words) {
    std::string line;
    auto field = [&](const std::string& f) {
      if (!line.empty()) line += ' ';
      line += '[' + f + ']';
    };
    if (w.simdu) {
      const vpe::SimdOp& s = *w.simdu;
      std::string f = s.kind == vpe::SimdOp::Kind::Prd ? "prd" : "prds";
      f += " d" + std::to_string(s.src) + ",";
      f += s.dst_mem ? mem_dst(s.dst, s.post_inc) : "d" + std::to_string(s.dst);
      if (s.kind == vpe::SimdOp::Kind::Prd) f += ",o" + std::to_string(s.n_out);
      if (s.qidx != vpe::kNoQ) f += ",q" + std::to_string(s.qidx);
      if (s.kind == vpe::SimdOp::Kind::Prds) {
        f += ",{";
        for (std::size_t i = 0; i < s.descs.size(); ++i) {
          if (i) f += ';';
          f += std::to_string(s.descs[i].dst_lane) + ":" + std::to_string(s.descs[i].src_off) +
               "w" + std::to_string(s.descs[i].width);
        }
        f += "}";
      }
      field(f);
    }
    if (w.vu) {
      const vpe::VuOp& v = *w.vu;
      std::string f = v.kind == vpe::VuOp::Kind::Vadd  ? "vadd"
                      : v.kind == vpe::VuOp::Kind::Vem ? "vem"
                                                       : "vmax";
      f += " d" + std::to_string(v.src_a) + ",d" + std::to_string(v.src_b) + ",";
      f += v.dst_mem ? mem_dst(v.dst, v.post_inc) : "d" + std::to_string(v.dst);
      if (v.qidx != vpe::kNoQ) f += ",q" + std::to_string(v.qidx);
      field(f);
    }
    if (w.mif) {
      const vpe::MifOp& m = *w.mif;
      std::string f;
      if (m.kind == vpe::MifOp::Kind::Fa) {
        f = "fa a" + std::to_string(m.addr);
      } else {
        f = m.width == vpe::ElemWidth::B1 ? "ld.b" : "ld.w";
        f += " a" + std::to_string(m.addr) + ",d" + std::to_string(m.dst);
        if (m.post_inc != 0) f += ",+" + std::to_string(m.post_inc);
      }
      if (m.channel != 0) f += ",c" + std::to_string(m.channel);
      field(f);
    }
    if (w.fin) field("fin");
    os << line << '\n';
  }
  return os.str();
}

vpe::VpeProgram parse_vpe(const std::string& text) {
  vpe::VpeProgram p;
  QDirectives qd;
  std::istringstream is(text);
  std::string raw;
  std::size_t ln = 0;
  while (std::getline(is, raw)) {
    ++ln;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const std::string t = strip(raw);
    if (t.empty()) continue;
    if (qd.handle(t, ln)) continue;

    vpe::VliwWord w;
    std::size_t pos = 0;
    while (pos < t.size()) {
      if (t[pos] != '[') perr(ln, "expected '['");
      auto close = t.find(']', pos);
      if (close == std::string::npos) perr(ln, "missing ']'");
      const std::string body = strip(t.substr(pos + 1, close - pos - 1));
      pos = close + 1;
      while (pos < t.size() && std::isspace(std::uint8_t(t[pos]))) ++pos;

      auto sp = body.find(' ');
      const std::string op = sp == std::string::npos ? body : body.substr(0, sp);
      auto args = sp == std::string::npos ? std::vector<std::string>{}
                                          : split(body.substr(sp + 1), ',');

      if (op == "fin") {
        w.fin = true;
      } else if (op == "prd" || op == "prds") {
        vpe::SimdOp s;
        s.kind = op == "prd" ? vpe::SimdOp::Kind::Prd : vpe::SimdOp::Kind::Prds;
        if (args.size() < 2) perr(ln, op + " needs src,dst");
        s.src = std::uint8_t(reg(args[0], 'd', ln));
        if (args[1][0] == '@') {
          s.dst_mem = true;
          parse_mem_dst(args[1], s.dst, s.post_inc, ln);
        } else {
          s.dst = std::uint8_t(reg(args[1], 'd', ln));
        }
        for (std::size_t i = 2; i < args.size(); ++i) {
          const std::string& a = args[i];
          if (a.empty()) perr(ln, "empty operand");
          if (a[0] == 'o') {
            s.n_out = std::uint8_t(num(a.substr(1), ln));
          } else if (a[0] == 'q') {
            s.qidx = std::uint8_t(num(a.substr(1), ln));
          } else if (a[0] == '{') {
            if (a.back() != '}') perr(ln, "unterminated descriptor list");
            for (const std::string& d : split(a.substr(1, a.size() - 2), ';')) {
              auto colon = d.find(':');
              auto wpos = d.find('w');
              if (colon == std::string::npos || wpos == std::string::npos || wpos < colon)
                perr(ln, "descriptor must be lane:off wWIDTH");
              vpe::PrdsDesc pd;
              pd.dst_lane = std::uint8_t(num(d.substr(0, colon), ln));
              pd.src_off = std::uint8_t(num(d.substr(colon + 1, wpos - colon - 1), ln));
              pd.width = std::uint8_t(num(d.substr(wpos + 1), ln));
              s.descs.push_back(pd);
            }
          } else {
            perr(ln, "unknown " + op + " operand '" + a + "'");
          }
        }
        w.simdu = s;
      } else if (op == "vadd" || op == "vem" || op == "vmax") {
        vpe::VuOp v;
        v.kind = op == "vadd"  ? vpe::VuOp::Kind::Vadd
                 : op == "vem" ? vpe::VuOp::Kind::Vem
                               : vpe::VuOp::Kind::Vmax;
        if (args.size() < 3) perr(ln, op + " needs srcA,srcB,dst");
        v.src_a = std::uint8_t(reg(args[0], 'd', ln));
        v.src_b = std::uint8_t(reg(args[1], 'd', ln));
        if (args[2][0] == '@') {
          v.dst_mem = true;
          parse_mem_dst(args[2], v.dst, v.post_inc, ln);
        } else {
          v.dst = std::uint8_t(reg(args[2], 'd', ln));
        }
        for (std::size_t i = 3; i < args.size(); ++i) {
          if (args[i][0] == 'q')
            v.qidx = std::uint8_t(num(args[i].substr(1), ln));
          else
            perr(ln, "unknown " + op + " operand '" + args[i] + "'");
        }
        w.vu = v;
      } else if (op == "fa" || op == "ld.b" || op == "ld.w") {
        vpe::MifOp m;
        if (op == "fa") {
          m.kind = vpe::MifOp::Kind::Fa;
          if (args.empty()) perr(ln, "fa needs an address register");
          m.addr = std::uint8_t(reg(args[0], 'a', ln));
          for (std::size_t i = 1; i < args.size(); ++i) {
            if (args[i][0] == 'c')
              m.channel = std::uint8_t(num(args[i].substr(1), ln));
            else
              perr(ln, "unknown fa operand");
          }
        } else {
          m.kind = vpe::MifOp::Kind::Ld;
          m.width = op == "ld.b" ? vpe::ElemWidth::B1 : vpe::ElemWidth::W4;
          if (args.size() < 2) perr(ln, "ld needs addr,dst");
          m.addr = std::uint8_t(reg(args[0], 'a', ln));
          m.dst = std::uint8_t(reg(args[1], 'd', ln));
          for (std::size_t i = 2; i < args.size(); ++i) {
            if (args[i][0] == '+')
              m.post_inc = std::int32_t(num(args[i].substr(1), ln));
            else if (args[i][0] == 'c')
              m.channel = std::uint8_t(num(args[i].substr(1), ln));
            else
              perr(ln, "unknown ld operand '" + args[i] + "'");
          }
        }
        w.mif = m;
      } else {
        perr(ln, "unknown field opcode '" + op + "'");
      }
    }
    p.words.push_back(w);
  }
  p.qtable = std::move(qd.qtable);
  return p;
}

// ===========================================================================
// Array engine

std::string emit(const arype::AryProgram& p) {
  std::ostringstream os;
  emit_qtable(os, p.qtable);
  for (const arype::AryInstr& in : p.instrs) {
    if (const auto* ld = std::get_if<arype::LdOp>(&in)) {
      os << "LD ";
      if (ld->src == arype::LdOp::Src::PCache)
        os << "p@" << ld->pcache_off;
      else
        os << 'a' << unsigned(ld->areg);
      os << ", " << ld->rows << 'x' << ld->cols;
      if (ld->src == arype::LdOp::Src::Fabric) {
        os << ", s" << ld->row_stride;
        if (ld->transpose) os << ", t";
      }
      if (ld->shadow) os << ", sh";
      os << '\n';
    } else if (const auto* mm = std::get_if<arype::MmOp>(&in)) {
      os << "MM " << mm->l << ", a" << unsigned(mm->src_areg) << ", a" << unsigned(mm->dst_areg);
      if (mm->src_row_stride != fabric::kWordBytes) os << ", rs" << mm->src_row_stride;
      if (mm->dst_row_stride != 0) os << ", ds" << mm->dst_row_stride;
      if (mm->rows_per_seg != 0)
        os << ", seg" << mm->rows_per_seg << ':' << mm->src_seg_stride << ':'
           << mm->dst_seg_stride;
      if (mm->qidx != arype::kNoQ) os << ", q" << unsigned(mm->qidx);
      if (mm->cont) os << ", cont";
      os << '\n';
    } else if (const auto* ag = std::get_if<arype::AggOp>(&in)) {
      os << "AGG " << ag->elems << ", a" << unsigned(ag->src_areg) << ", a"
         << unsigned(ag->dst_areg);
      if (ag->qidx != arype::kNoQ) {
        os << ", q" << unsigned(ag->qidx) << ", a" << unsigned(ag->out_areg);
        if (ag->out_row_elems != 0) os << ", row" << ag->out_row_elems << ':' << ag->out_row_stride;
        if (ag->rows_per_seg != 0) os << ", seg" << ag->rows_per_seg << ':' << ag->out_seg_stride;
        if (ag->src_row_elems != 0) os << ", sr" << ag->src_row_elems;
      }
      os << '\n';
    } else {
      os << "FIN\n";
    }
  }
  return os.str();
}

arype::AryProgram parse_arype(const std::string& text) {
  arype::AryProgram p;
  QDirectives qd;
  std::istringstream is(text);
  std::string raw;
  std::size_t ln = 0;
  while (std::getline(is, raw)) {
    ++ln;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const std::string t = strip(raw);
    if (t.empty()) continue;
    if (qd.handle(t, ln)) continue;

    auto sp = t.find(' ');
    const std::string op = sp == std::string::npos ? t : t.substr(0, sp);
    auto args = sp == std::string::npos ? std::vector<std::string>{}
                                        : split(t.substr(sp + 1), ',');

    if (op == "FIN") {
      p.instrs.emplace_back(arype::FinOp{});
    } else if (op == "LD") {
      arype::LdOp ld;
      if (args.size() < 2) perr(ln, "LD needs source, RxC");
      if (args[0].rfind("p@", 0) == 0) {
        ld.src = arype::LdOp::Src::PCache;
        ld.pcache_off = std::uint32_t(num(args[0].substr(2), ln));
      } else {
        ld.src = arype::LdOp::Src::Fabric;
        ld.areg = std::uint8_t(reg(args[0], 'a', ln));
      }
      auto x = args[1].find('x');
      if (x == std::string::npos) perr(ln, "LD dims must be RxC");
      ld.rows = std::uint16_t(num(args[1].substr(0, x), ln));
      ld.cols = std::uint16_t(num(args[1].substr(x + 1), ln));
      for (std::size_t i = 2; i < args.size(); ++i) {
        if (args[i] == "t")
          ld.transpose = true;
        else if (args[i] == "sh")
          ld.shadow = true;
        else if (args[i][0] == 's')
          ld.row_stride = std::uint32_t(num(args[i].substr(1), ln));
        else
          perr(ln, "unknown LD operand '" + args[i] + "'");
      }
      p.instrs.emplace_back(ld);
    } else if (op == "MM") {
      arype::MmOp mm;
      if (args.size() < 3) perr(ln, "MM needs l, src, dst");
      mm.l = std::uint32_t(num(args[0], ln));
      mm.src_areg = std::uint8_t(reg(args[1], 'a', ln));
      mm.dst_areg = std::uint8_t(reg(args[2], 'a', ln));
      for (std::size_t i = 3; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("rs", 0) == 0) {
          mm.src_row_stride = std::uint32_t(num(a.substr(2), ln));
        } else if (a.rfind("ds", 0) == 0) {
          mm.dst_row_stride = std::uint32_t(num(a.substr(2), ln));
        } else if (a.rfind("seg", 0) == 0) {
          auto f = split(a.substr(3), ':');
          if (f.size() != 3) perr(ln, "seg needs rows:src:dst");
          mm.rows_per_seg = std::uint32_t(num(f[0], ln));
          mm.src_seg_stride = std::uint32_t(num(f[1], ln));
          mm.dst_seg_stride = std::uint32_t(num(f[2], ln));
        } else if (a == "cont") {
          mm.cont = true;
        } else if (a[0] == 'q') {
          mm.qidx = std::uint8_t(num(a.substr(1), ln));
        } else {
          perr(ln, "unknown MM operand '" + a + "'");
        }
      }
      p.instrs.emplace_back(mm);
    } else if (op == "AGG") {
      arype::AggOp ag;
      if (args.size() < 3) perr(ln, "AGG needs elems, src, dst");
      ag.elems = std::uint32_t(num(args[0], ln));
      ag.src_areg = std::uint8_t(reg(args[1], 'a', ln));
      ag.dst_areg = std::uint8_t(reg(args[2], 'a', ln));
      std::size_t i = 3;
      if (i < args.size() && args[i][0] == 'q') {
        ag.qidx = std::uint8_t(num(args[i].substr(1), ln));
        ++i;
        if (i >= args.size()) perr(ln, "finalize AGG needs an output register");
        ag.out_areg = std::uint8_t(reg(args[i], 'a', ln));
        ++i;
        for (; i < args.size(); ++i) {
          const std::string& a = args[i];
          if (a.rfind("row", 0) == 0) {
            auto f = split(a.substr(3), ':');
            if (f.size() != 2) perr(ln, "row needs elems:stride");
            ag.out_row_elems = std::uint32_t(num(f[0], ln));
            ag.out_row_stride = std::uint32_t(num(f[1], ln));
          } else if (a.rfind("seg", 0) == 0) {
            auto f = split(a.substr(3), ':');
            if (f.size() != 2) perr(ln, "seg needs rows:stride");
            ag.rows_per_seg = std::uint32_t(num(f[0], ln));
            ag.out_seg_stride = std::uint32_t(num(f[1], ln));
          } else if (a.rfind("sr", 0) == 0) {
            ag.src_row_elems = std::uint32_t(num(a.substr(2), ln));
          } else {
            perr(ln, "unknown AGG operand '" + a + "'");
          }
        }
      } else if (i < args.size()) {
        perr(ln, "unknown AGG operand '" + args[i] + "'");
      }
      p.instrs.emplace_back(ag);
    } else {
      perr(ln, "unknown instruction '" + op + "'");
    }
  }
  p.qtable = std::move(qd.qtable);
  return p;
}

}  // namespace ina::asmtext
