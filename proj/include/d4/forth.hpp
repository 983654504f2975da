// Copyright 2026 The d4 Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Tokenizer, compiler and exact interpreter for the Forth subset.
//
// Programs lower to a flat instruction list: colon definitions become labelled
// blocks ending in RET, structured control flow becomes BRANCH/BRANCH0, macros
// are inlined, variables are fixed heap addresses, and top-level code is
// appended after all definitions and terminated by the single HALT.

#ifndef D4_FORTH_HPP_
#define D4_FORTH_HPP_

#include <cctype>
#include <charconv>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "d4/tensor.hpp"

namespace d4 {

// Sizes shared by the discrete and the continuous machine.
struct MachineDims {
  std::size_t stack = 12;  // l: rows of each stack buffer
  std::size_t value = 10;  // v: value range, values are integers mod v
  std::size_t heap = 16;   // heap cells

  // One pointer position encodes the empty stack, so l - 1 items fit.
  std::size_t capacity() const { return stack - 1; }
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class CompileError : public Error {
 public:
  using Error::Error;
};

class RuntimeFault : public Error {
 public:
  RuntimeFault(const std::string& what, std::size_t instruction)
      : Error("instruction " + std::to_string(instruction) + ": " + what), instruction_(instruction) {}
  std::size_t instruction() const { return instruction_; }

 private:
  std::size_t instruction_;
};

class StepTimeout : public Error {
 public:
  explicit StepTimeout(std::size_t steps)
      : Error("no HALT after " + std::to_string(steps) + " steps"), steps_(steps) {}
  std::size_t steps() const { return steps_; }

 private:
  std::size_t steps_;
};

// ---------------------------------------------------------------------------
// Tokens

enum class TokenKind { kWord, kNumber, kColonDefStart, kColonDefEnd, kSlotOpen, kSlotBody, kComment };

struct Token {
  std::string text;
  TokenKind kind = TokenKind::kWord;
  int line = 1;  // 1-based
  int column = 1;

  friend bool operator==(const Token&, const Token&) = default;
};

namespace detail {

inline bool is_number(std::string_view s) {
  if (s.empty()) return false;
  for (char ch : s)
    if (!std::isdigit(static_cast<unsigned char>(ch))) return false;
  return true;
}

}  // namespace detail

// Splits source into whitespace-separated tokens. `( ... )` and `\ ...`
// comments are dropped unless keep_comments; `{ ... }` slot bodies become a
// single kSlotBody token holding the text between the braces.
inline std::vector<Token> tokenize(std::string_view src, bool keep_comments = false) {
  std::vector<Token> out;
  std::size_t i = 0;
  int line = 1;
  int col = 1;
  auto advance = [&]() {
    if (src[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
    ++i;
  };
  auto is_space = [](char ch) { return std::isspace(static_cast<unsigned char>(ch)) != 0; };

  while (i < src.size()) {
    if (is_space(src[i])) {
      advance();
      continue;
    }
    const int start_line = line;
    const int start_col = col;
    if (src[i] == '{') {
      advance();
      std::string body;
      while (i < src.size() && src[i] != '}') {
        if (src[i] == '{') throw ParseError("nested '{' inside slot", line);
        body += src[i];
        advance();
      }
      if (i >= src.size()) throw ParseError("unterminated slot '{'", start_line);
      advance();
      out.push_back({std::move(body), TokenKind::kSlotBody, start_line, start_col});
      continue;
    }
    std::string word;
    while (i < src.size() && !is_space(src[i])) {
      word += src[i];
      advance();
    }
    if (word == "\\") {
      std::string text;
      while (i < src.size() && src[i] != '\n') {
        text += src[i];
        advance();
      }
      if (keep_comments) out.push_back({text, TokenKind::kComment, start_line, start_col});
      continue;
    }
    if (word == "(") {
      std::string text;
      while (i < src.size() && src[i] != ')') {
        text += src[i];
        advance();
      }
      if (i >= src.size()) throw ParseError("unterminated comment '('", start_line);
      advance();
      if (keep_comments) out.push_back({text, TokenKind::kComment, start_line, start_col});
      continue;
    }
    TokenKind kind = TokenKind::kWord;
    if (word == ":" || word == "MACRO:") kind = TokenKind::kColonDefStart;
    else if (word == ";") kind = TokenKind::kColonDefEnd;
    else if (detail::is_number(word)) kind = TokenKind::kNumber;
    out.push_back({std::move(word), kind, start_line, start_col});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lowered programs

enum class Op {
  kLit, kInc, kDec, kDup, kSwap, kOver, kDrop, kAdd, kSub, kMul, kDiv,
  kFetch, kStore, kGt, kLt, kEq, kToR, kFromR, kFetchR,
  kBranch, kBranch0, kCall, kRet, kHalt, kSlot,
  kNop,  // identity; only produced by slot word lists
};

inline std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLit: return "LIT";
    case Op::kInc: return "1+";
    case Op::kDec: return "1-";
    case Op::kDup: return "DUP";
    case Op::kSwap: return "SWAP";
    case Op::kOver: return "OVER";
    case Op::kDrop: return "DROP";
    case Op::kAdd: return "+";
    case Op::kSub: return "-";
    case Op::kMul: return "*";
    case Op::kDiv: return "/";
    case Op::kFetch: return "@";
    case Op::kStore: return "!";
    case Op::kGt: return ">";
    case Op::kLt: return "<";
    case Op::kEq: return "=";
    case Op::kToR: return ">R";
    case Op::kFromR: return "R>";
    case Op::kFetchR: return "@R";
    case Op::kBranch: return "BRANCH";
    case Op::kBranch0: return "BRANCH0";
    case Op::kCall: return "CALL";
    case Op::kRet: return "RET";
    case Op::kHalt: return "HALT";
    case Op::kSlot: return "SLOT";
    case Op::kNop: return "NOP";
  }
  return "?";
}

// Primitive words that map one-to-one onto an opcode.
inline std::optional<Op> primitive_word(std::string_view w) {
  static const std::map<std::string_view, Op> table = {
      {"1+", Op::kInc},   {"1-", Op::kDec},    {"DUP", Op::kDup},   {"SWAP", Op::kSwap},
      {"OVER", Op::kOver}, {"DROP", Op::kDrop}, {"+", Op::kAdd},     {"-", Op::kSub},
      {"*", Op::kMul},    {"/", Op::kDiv},     {"@", Op::kFetch},   {"!", Op::kStore},
      {">", Op::kGt},     {"<", Op::kLt},      {"=", Op::kEq},      {">R", Op::kToR},
      {"R>", Op::kFromR}, {"@R", Op::kFetchR}, {"R@", Op::kFetchR},
  };
  auto it = table.find(w);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

// True for words that only touch D, R and H and fall through to the next
// instruction.
inline bool is_data_op(Op op) {
  switch (op) {
    case Op::kBranch: case Op::kBranch0: case Op::kCall: case Op::kRet:
    case Op::kHalt: case Op::kSlot:
      return false;
    default:
      return true;
  }
}

struct SourceRef {
  int line = 0;  // 1-based; 0 for synthesized instructions
  int column = 0;
  std::string text;
};

struct Instruction {
  Op op = Op::kNop;
  std::size_t arg = 0;  // literal, jump target, call target or slot id
  SourceRef src;
};

// IF..ELSE..THEN as lowered: BRANCH0 at `branch0`, optional BRANCH at
// `else_branch`, first instruction after the construct at `end`.
struct IfRegion {
  std::size_t branch0 = 0;
  std::optional<std::size_t> else_branch;
  std::size_t end = 0;
};

struct SlotSource {
  std::string body;
  int line = 0;
};

struct LoweredProgram {
  std::vector<Instruction> instructions;
  std::map<std::string, std::size_t> labels;  // subroutine name -> first instruction
  std::map<std::string, int> definition_lines;
  std::map<std::string, std::size_t> variables;  // name -> heap address
  std::vector<SlotSource> slots;
  std::vector<IfRegion> if_regions;
  std::size_t entry = 0;
  std::size_t heap_used = 0;

  std::size_t size() const { return instructions.size(); }
  std::size_t halt_index() const { return instructions.size() - 1; }
  bool has_calls() const {
    for (const auto& in : instructions)
      if (in.op == Op::kCall) return true;
    return false;
  }
};

struct CompileOptions {
  std::size_t value_size = 10;
  std::size_t heap_size = 16;
};

namespace detail {

class Compiler {
 public:
  explicit Compiler(const CompileOptions& opts) : opts_(opts) {}

  LoweredProgram run(const std::vector<Token>& tokens) {
    tokens_ = &tokens;
    for (pos_ = 0; pos_ < tokens.size();) step();
    if (in_definition_) throw CompileError("definition of '" + current_def_ + "' is missing ';'");
    if (!control_.empty()) throw CompileError("unbalanced control structure at end of input");

    // Append top-level code, relocating its internal targets.
    const std::size_t offset = prog_.instructions.size();
    prog_.entry = offset;
    for (Instruction in : main_) {
      if (in.op == Op::kBranch || in.op == Op::kBranch0) in.arg += offset;
      prog_.instructions.push_back(std::move(in));
    }
    for (IfRegion r : main_regions_) {
      r.branch0 += offset;
      if (r.else_branch) *r.else_branch += offset;
      r.end += offset;
      prog_.if_regions.push_back(r);
    }
    prog_.instructions.push_back({Op::kHalt, 0, {0, 0, "HALT"}});

    if (prog_.has_calls() && prog_.size() > opts_.value_size)
      throw CompileError("program has " + std::to_string(prog_.size()) +
                         " instructions but return addresses must fit value size " +
                         std::to_string(opts_.value_size));
    return std::move(prog_);
  }

 private:
  enum class Ctl { kIf, kElse, kBegin, kWhile, kDo };
  struct ControlEntry {
    Ctl kind;
    std::size_t a = 0;  // IF/ELSE: branch0, BEGIN/WHILE/DO: loop top
    std::size_t b = 0;  // ELSE: else branch, WHILE/DO: exit branch0
    std::size_t cell = 0;  // DO: index cell
    int line = 0;
  };

  std::vector<Instruction>& code() { return in_definition_ ? prog_.instructions : main_; }
  std::vector<IfRegion>& regions() { return in_definition_ ? prog_.if_regions : main_regions_; }
  std::size_t here() { return code().size(); }
  // Targets inside top-level code are relative until run() relocates them;
  // calls always hold absolute addresses.
  void emit(Op op, std::size_t arg, const Token& t) { code().push_back({op, arg, {t.line, t.column, t.text}}); }

  const Token& next_token(const char* what) {
    if (pos_ >= tokens_->size()) throw CompileError(std::string("unexpected end of input after ") + what);
    return (*tokens_)[pos_++];
  }

  std::size_t allocate(std::size_t cells, const Token& t) {
    const std::size_t addr = prog_.heap_used;
    const std::size_t limit = std::min(opts_.heap_size, opts_.value_size);
    if (addr + cells > limit)
      throw CompileError("line " + std::to_string(t.line) + ": heap exhausted allocating " +
                         std::to_string(cells) + " cell(s) for '" + t.text + "' (limit " +
                         std::to_string(limit) + ")");
    prog_.heap_used += cells;
    return addr;
  }

  void step() {
    const Token& t = (*tokens_)[pos_++];
    switch (t.kind) {
      case TokenKind::kComment:
        return;
      case TokenKind::kColonDefStart:
        return begin_definition(t);
      case TokenKind::kColonDefEnd:
        return end_definition(t);
      default:
        break;
    }
    if (t.kind == TokenKind::kNumber && pos_ < tokens_->size() && (*tokens_)[pos_].text == "ALLOT") {
      ++pos_;
      allocate(parse_number(t), t);
      return;
    }
    if (t.text == "VARIABLE") {
      const Token& name = next_token("VARIABLE");
      prog_.variables[name.text] = allocate(1, name);
      return;
    }
    if (t.text == "CREATE") {
      const Token& name = next_token("CREATE");
      std::size_t cells = 0;
      if (pos_ + 1 < tokens_->size() && (*tokens_)[pos_].kind == TokenKind::kNumber &&
          (*tokens_)[pos_ + 1].text == "ALLOT") {
        cells = parse_number((*tokens_)[pos_]);
        pos_ += 2;
      }
      prog_.variables[name.text] = allocate(cells, name);
      return;
    }
    compile_word(t, 0);
  }

  std::size_t parse_number(const Token& t) const {
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), value);
    if (ec != std::errc() || value >= opts_.value_size)
      throw CompileError("line " + std::to_string(t.line) + ": literal " + t.text +
                         " outside value range [0, " + std::to_string(opts_.value_size) + ")");
    return value;
  }

  void begin_definition(const Token& t) {
    if (in_definition_ || macro_) throw CompileError("line " + std::to_string(t.line) + ": nested definition");
    const Token& name = next_token(t.text.c_str());
    if (name.kind != TokenKind::kWord) throw CompileError("line " + std::to_string(name.line) + ": bad definition name '" + name.text + "'");
    if (t.text == "MACRO:") {
      std::vector<Token> body;
      while (true) {
        const Token& b = next_token("MACRO:");
        if (b.kind == TokenKind::kColonDefEnd) break;
        if (b.kind == TokenKind::kColonDefStart)
          throw CompileError("line " + std::to_string(b.line) + ": nested definition in macro '" + name.text + "'");
        body.push_back(b);
      }
      macros_[name.text] = std::move(body);
      return;
    }
    if (!control_.empty()) throw CompileError("line " + std::to_string(t.line) + ": definition inside open control structure");
    in_definition_ = true;
    current_def_ = name.text;
    prog_.labels[name.text] = prog_.instructions.size();
    prog_.definition_lines[name.text] = t.line;
  }

  void end_definition(const Token& t) {
    if (!in_definition_) throw CompileError("line " + std::to_string(t.line) + ": ';' outside a definition");
    if (!control_.empty()) throw CompileError("line " + std::to_string(t.line) + ": unbalanced control structure in '" + current_def_ + "'");
    emit(Op::kRet, 0, t);
    in_definition_ = false;
    current_def_.clear();
  }

  void compile_word(const Token& t, int depth) {
    if (depth > 64) throw CompileError("macro expansion too deep at '" + t.text + "'");
    if (t.kind == TokenKind::kSlotBody) {
      prog_.slots.push_back({t.text, t.line});
      emit(Op::kSlot, prog_.slots.size() - 1, t);
      return;
    }
    if (t.kind == TokenKind::kNumber) {
      emit(Op::kLit, parse_number(t), t);
      return;
    }
    if (auto op = primitive_word(t.text)) {
      emit(*op, 0, t);
      return;
    }
    if (control_word(t)) return;
    if (auto m = macros_.find(t.text); m != macros_.end()) {
      const std::vector<Token> body = m->second;
      for (const Token& b : body) {
        if (b.kind == TokenKind::kNumber && &b != &body.back() && (&b)[1].text == "ALLOT")
          throw CompileError("ALLOT inside macro '" + t.text + "'");
        compile_word(b, depth + 1);
      }
      return;
    }
    if (auto v = prog_.variables.find(t.text); v != prog_.variables.end()) {
      if (v->second >= opts_.value_size)
        throw CompileError("variable '" + t.text + "' address does not fit value size");
      emit(Op::kLit, v->second, t);
      return;
    }
    if (auto l = prog_.labels.find(t.text); l != prog_.labels.end()) {
      emit(Op::kCall, l->second, t);
      return;
    }
    throw CompileError("line " + std::to_string(t.line) + ": undefined word '" + t.text + "'");
  }

  bool control_word(const Token& t) {
    const std::string& w = t.text;
    auto fail = [&](const std::string& why) {
      return CompileError("line " + std::to_string(t.line) + ": " + why);
    };
    if (w == "IF") {
      control_.push_back({Ctl::kIf, here(), 0, 0, t.line});
      emit(Op::kBranch0, 0, t);
      return true;
    }
    if (w == "ELSE") {
      if (control_.empty() || control_.back().kind != Ctl::kIf) throw fail("ELSE without IF");
      ControlEntry e = control_.back();
      control_.pop_back();
      e.kind = Ctl::kElse;
      e.b = here();
      emit(Op::kBranch, 0, t);
      code()[e.a].arg = here();
      control_.push_back(e);
      return true;
    }
    if (w == "THEN") {
      if (control_.empty() || (control_.back().kind != Ctl::kIf && control_.back().kind != Ctl::kElse))
        throw fail("THEN without IF");
      ControlEntry e = control_.back();
      control_.pop_back();
      IfRegion r;
      r.branch0 = e.a;
      r.end = here();
      if (e.kind == Ctl::kElse) {
        code()[e.b].arg = here();
        r.else_branch = e.b;
      } else {
        code()[e.a].arg = here();
      }
      regions().push_back(r);
      return true;
    }
    if (w == "BEGIN") {
      control_.push_back({Ctl::kBegin, here(), 0, 0, t.line});
      return true;
    }
    if (w == "WHILE") {
      if (control_.empty() || control_.back().kind != Ctl::kBegin) throw fail("WHILE without BEGIN");
      control_.back().kind = Ctl::kWhile;
      control_.back().b = here();
      emit(Op::kBranch0, 0, t);
      return true;
    }
    if (w == "REPEAT") {
      if (control_.empty() || control_.back().kind != Ctl::kWhile) throw fail("REPEAT without WHILE");
      ControlEntry e = control_.back();
      control_.pop_back();
      emit(Op::kBranch, e.a, t);
      code()[e.b].arg = here();
      return true;
    }
    if (w == "DO") {
      // ( limit index -- ) Both live in two heap cells reserved for this loop
      // site; the loop is skipped when index already equals limit.
      const std::size_t cell = allocate(2, t);
      if (cell + 1 >= opts_.value_size) throw fail("loop cells do not fit value size");
      emit(Op::kLit, cell, t);
      emit(Op::kStore, 0, t);
      emit(Op::kLit, cell + 1, t);
      emit(Op::kStore, 0, t);
      const std::size_t top = here();
      emit(Op::kLit, cell, t);
      emit(Op::kFetch, 0, t);
      emit(Op::kLit, cell + 1, t);
      emit(Op::kFetch, 0, t);
      emit(Op::kSub, 0, t);
      const std::size_t exit = here();
      emit(Op::kBranch0, 0, t);
      control_.push_back({Ctl::kDo, top, exit, cell, t.line});
      return true;
    }
    if (w == "LOOP") {
      if (control_.empty() || control_.back().kind != Ctl::kDo) throw fail("LOOP without DO");
      ControlEntry e = control_.back();
      control_.pop_back();
      emit(Op::kLit, e.cell, t);
      emit(Op::kFetch, 0, t);
      emit(Op::kInc, 0, t);
      emit(Op::kLit, e.cell, t);
      emit(Op::kStore, 0, t);
      emit(Op::kBranch, e.a, t);
      code()[e.b].arg = here();
      return true;
    }
    if (w == "ALLOT" || w == "VARIABLE" || w == "CREATE") throw fail("misplaced " + w);
    return false;
  }

  CompileOptions opts_;
  const std::vector<Token>* tokens_ = nullptr;
  std::size_t pos_ = 0;
  LoweredProgram prog_;
  std::vector<Instruction> main_;
  std::vector<IfRegion> main_regions_;
  std::vector<ControlEntry> control_;
  std::map<std::string, std::vector<Token>> macros_;
  bool in_definition_ = false;
  bool macro_ = false;
  std::string current_def_;
};

}  // namespace detail

inline LoweredProgram compile(const std::vector<Token>& tokens, const CompileOptions& opts = {}) {
  return detail::Compiler(opts).run(tokens);
}

inline LoweredProgram compile_source(std::string_view source, const CompileOptions& opts = {}) {
  return compile(tokenize(source), opts);
}

// One instruction per line: idx<TAB>opcode<TAB>arg (arg empty when unused).
inline std::string dump_program(const LoweredProgram& prog) {
  std::ostringstream os;
  for (std::size_t i = 0; i < prog.size(); ++i) {
    const Instruction& in = prog.instructions[i];
    os << i << '\t' << op_name(in.op) << '\t';
    switch (in.op) {
      case Op::kLit: case Op::kBranch: case Op::kBranch0: case Op::kCall: case Op::kSlot:
        os << in.arg;
        break;
      default:
        break;
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Discrete machine

// Stacks are listed bottom to top.
struct DiscreteState {
  std::vector<std::size_t> D;
  std::vector<std::size_t> R;
  std::vector<std::size_t> H;
  std::size_t c = 0;

  friend bool operator==(const DiscreteState&, const DiscreteState&) = default;
};

inline DiscreteState initial_state(const LoweredProgram& prog, const MachineDims& dims,
                                   std::vector<std::size_t> data = {}) {
  DiscreteState s;
  s.D = std::move(data);
  s.H.assign(dims.heap, 0);
  s.c = prog.entry;
  return s;
}

// Successor state. HALT maps to itself.
inline DiscreteState step_discrete(const DiscreteState& in, const LoweredProgram& prog, const MachineDims& dims) {
  if (in.c >= prog.size()) throw RuntimeFault("program counter out of range", in.c);
  const Instruction& ins = prog.instructions[in.c];
  const std::size_t v = dims.value;
  DiscreteState s = in;
  const std::size_t at = in.c;
  auto pop = [&](std::vector<std::size_t>& st, const char* which) {
    if (st.empty()) throw RuntimeFault(std::string("pop from empty ") + which, at);
    const std::size_t x = st.back();
    st.pop_back();
    return x;
  };
  auto push = [&](std::vector<std::size_t>& st, std::size_t x, const char* which) {
    if (st.size() >= dims.capacity()) throw RuntimeFault(std::string(which) + " overflow", at);
    st.push_back(x % v);
  };
  auto heap_addr = [&](std::size_t a) {
    if (a >= s.H.size()) throw RuntimeFault("heap address " + std::to_string(a) + " out of range", at);
    return a;
  };
  s.c = at + 1;
  switch (ins.op) {
    case Op::kLit: push(s.D, ins.arg, "data stack"); break;
    case Op::kInc: { auto x = pop(s.D, "data stack"); push(s.D, x + 1, "data stack"); break; }
    case Op::kDec: { auto x = pop(s.D, "data stack"); push(s.D, x + v - 1, "data stack"); break; }
    case Op::kDup: { auto x = pop(s.D, "data stack"); push(s.D, x, "data stack"); push(s.D, x, "data stack"); break; }
    case Op::kSwap: {
      auto b = pop(s.D, "data stack");
      auto a = pop(s.D, "data stack");
      push(s.D, b, "data stack");
      push(s.D, a, "data stack");
      break;
    }
    case Op::kOver: {
      if (s.D.size() < 2) throw RuntimeFault("OVER needs two items", at);
      push(s.D, s.D[s.D.size() - 2], "data stack");
      break;
    }
    case Op::kDrop: pop(s.D, "data stack"); break;
    case Op::kAdd: case Op::kSub: case Op::kMul: case Op::kDiv:
    case Op::kGt: case Op::kLt: case Op::kEq: {
      const std::size_t b = pop(s.D, "data stack");
      const std::size_t a = pop(s.D, "data stack");
      std::size_t r = 0;
      switch (ins.op) {
        case Op::kAdd: r = a + b; break;
        case Op::kSub: r = a + v - b; break;
        case Op::kMul: r = a * b; break;
        case Op::kDiv: r = b == 0 ? 0 : a / b; break;
        case Op::kGt: r = a > b; break;
        case Op::kLt: r = a < b; break;
        default: r = a == b; break;
      }
      push(s.D, r, "data stack");
      break;
    }
    case Op::kFetch: { auto a = heap_addr(pop(s.D, "data stack")); push(s.D, s.H[a], "data stack"); break; }
    case Op::kStore: {
      auto a = heap_addr(pop(s.D, "data stack"));
      s.H[a] = pop(s.D, "data stack");
      break;
    }
    case Op::kToR: push(s.R, pop(s.D, "data stack"), "return stack"); break;
    case Op::kFromR: push(s.D, pop(s.R, "return stack"), "data stack"); break;
    case Op::kFetchR: {
      if (s.R.empty()) throw RuntimeFault("@R on empty return stack", at);
      push(s.D, s.R.back(), "data stack");
      break;
    }
    case Op::kBranch: s.c = ins.arg; break;
    case Op::kBranch0: if (pop(s.D, "data stack") == 0) s.c = ins.arg; break;
    case Op::kCall: push(s.R, at + 1, "return stack"); s.c = ins.arg; break;
    case Op::kRet: {
      const std::size_t a = pop(s.R, "return stack");
      if (a >= prog.size()) throw RuntimeFault("return to invalid address " + std::to_string(a), at);
      s.c = a;
      break;
    }
    case Op::kHalt: s.c = at; break;
    case Op::kNop: break;
    case Op::kSlot: throw RuntimeFault("slot has no discrete semantics", at);
  }
  return s;
}

struct DiscreteRun {
  DiscreteState state;
  std::size_t steps = 0;
};

// Called after every step with the step number, the index of the instruction
// just executed and the resulting state.
using DiscreteObserver = std::function<void(std::size_t, std::size_t, const DiscreteState&)>;

inline DiscreteRun run_discrete(DiscreteState state, const LoweredProgram& prog, const MachineDims& dims,
                                std::size_t max_steps, const DiscreteObserver& observe = {}) {
  if (max_steps == 0) throw Error("run_discrete: max_steps must be positive");
  std::size_t steps = 0;
  while (prog.instructions.at(state.c).op != Op::kHalt) {
    if (steps == max_steps) throw StepTimeout(steps);
    const std::size_t at = state.c;
    state = step_discrete(state, prog, dims);
    ++steps;
    if (observe) observe(steps, at, state);
  }
  return {std::move(state), steps};
}

}  // namespace d4

#endif  // D4_FORTH_HPP_
