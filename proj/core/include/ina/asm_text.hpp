#pragma once
// Textual assembly for both engines, round-trippable: emit() output parses
// back to an equal program. One VLIW word per line with bracketed fields,
// e.g.  [prd d0,d1,o8,q0] [ld.b a0,d2,+16]  [fin]
// Array programs are one instruction per line:  LD p@0, 3x32  /  MM 20, a0, a1
// Requantization tables ride along as .q / .lut directives so a file is
// self-contained. Full grammar reference lives in the repo README.

#include <string>

#include "ina/arype.hpp"
#include "ina/vpe.hpp"

namespace ina::asmtext {

std::string emit(const vpe::VpeProgram& p);
std::string emit(const arype::AryProgram& p);

vpe::VpeProgram parse_vpe(const std::string& text);
arype::AryProgram parse_arype(const std::string& text);

}  // namespace ina::asmtext
