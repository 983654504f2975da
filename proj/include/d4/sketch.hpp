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

// Slots: `{ encoder -> ... -> decoder }` transitions with trainable
// parameters.
//
//   observe D0 D-1 R0 H3   concatenated value distributions (length v each)
//   static                 trainable vector of length v, zero at start
//   linear N               affine map to N units
//   sigmoid | tanh         activation; written right before `linear N` it is
//                          applied to that layer's output
//   choose W1 .. Wm        softmax-weighted mix of the words' successors
//   manipulate X1 .. Xm    softmax value written over each referenced cell
//   permute X1 .. Xm       softmax-weighted mix of all m! rearrangements

#ifndef D4_SKETCH_HPP_
#define D4_SKETCH_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "d4/autodiff.hpp"
#include "d4/forth.hpp"
#include "d4/machine.hpp"

namespace d4 {

// A cell of the machine state: D/R at `depth` below the top, or heap row.
struct CellRef {
  enum class Where { kData, kReturn, kHeap };
  Where where = Where::kData;
  std::size_t index = 0;  // depth for stacks, address for the heap

  std::string str() const {
    switch (where) {
      case Where::kData: return "D" + (index ? "-" + std::to_string(index) : std::string("0"));
      case Where::kReturn: return "R" + (index ? "-" + std::to_string(index) : std::string("0"));
      default: return "H" + std::to_string(index);
    }
  }
  friend bool operator==(const CellRef&, const CellRef&) = default;
};

struct EncoderStage {
  enum class Kind { kObserve, kStatic, kLinear, kSigmoid, kTanh };
  Kind kind = Kind::kObserve;
  std::vector<CellRef> refs;  // kObserve
  std::size_t units = 0;      // kLinear
  // kLinear only: activation applied to the layer output (kSigmoid/kTanh), or
  // kLinear when none.
  Kind activation = Kind::kLinear;
};

struct ChoiceWord {
  Op op = Op::kNop;
  std::size_t arg = 0;
  std::string text;
};

struct Decoder {
  enum class Kind { kChoose, kManipulate, kPermute };
  Kind kind = Kind::kChoose;
  std::vector<ChoiceWord> words;  // kChoose
  std::vector<CellRef> refs;      // kManipulate, kPermute
};

struct SlotSpec {
  std::size_t id = 0;
  std::vector<EncoderStage> encoder;
  Decoder decoder;
};

inline constexpr std::size_t kMaxPermuteRefs = 4;

namespace detail {

inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream is{std::string(s)};
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

inline CellRef parse_ref(const std::string& t, int line) {
  if (t.size() < 2 || (t[0] != 'D' && t[0] != 'R' && t[0] != 'H'))
    throw ParseError("bad reference '" + t + "'", line);
  const std::string num = t.substr(1);
  CellRef r;
  if (t[0] == 'H') {
    if (!is_number(num)) throw ParseError("bad heap reference '" + t + "'", line);
    r.where = CellRef::Where::kHeap;
    r.index = std::stoul(num);
    return r;
  }
  r.where = t[0] == 'D' ? CellRef::Where::kData : CellRef::Where::kReturn;
  if (num == "0") return r;
  if (num.size() < 2 || num[0] != '-' || !is_number(num.substr(1)))
    throw ParseError("bad reference index in '" + t + "' (expected 0 or a negative offset)", line);
  r.index = std::stoul(num.substr(1));
  return r;
}

inline std::vector<CellRef> parse_refs(const std::vector<std::string>& w, int line) {
  std::vector<CellRef> out;
  for (std::size_t k = 1; k < w.size(); ++k) out.push_back(parse_ref(w[k], line));
  if (out.empty()) throw ParseError("'" + w[0] + "' needs at least one reference", line);
  return out;
}

}  // namespace detail

inline SlotSpec parse_slot(std::string_view body, std::size_t id = 0, int line = 0) {
  std::vector<std::string> parts;
  std::string text(body);
  std::size_t start = 0;
  while (true) {
    const std::size_t at = text.find("->", start);
    parts.push_back(text.substr(start, at == std::string::npos ? std::string::npos : at - start));
    if (at == std::string::npos) break;
    start = at + 2;
  }
  if (parts.size() < 2) throw ParseError("slot needs '{ encoder -> decoder }'", line);

  SlotSpec spec;
  spec.id = id;
  for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
    const auto w = detail::split_words(parts[k]);
    if (w.empty()) throw ParseError("empty slot stage", line);
    EncoderStage st;
    if (w[0] == "observe") {
      st.kind = EncoderStage::Kind::kObserve;
      st.refs = detail::parse_refs(w, line);
    } else if (w[0] == "static") {
      if (w.size() != 1) throw ParseError("'static' takes no arguments", line);
      st.kind = EncoderStage::Kind::kStatic;
    } else if (w[0] == "linear") {
      if (w.size() != 2 || !detail::is_number(w[1]) || std::stoul(w[1]) == 0)
        throw ParseError("'linear' needs a positive size", line);
      st.kind = EncoderStage::Kind::kLinear;
      st.units = std::stoul(w[1]);
    } else if (w[0] == "sigmoid" || w[0] == "tanh") {
      if (w.size() != 1) throw ParseError("'" + w[0] + "' takes no arguments", line);
      st.kind = w[0] == "tanh" ? EncoderStage::Kind::kTanh : EncoderStage::Kind::kSigmoid;
    } else {
      throw ParseError("unknown encoder stage '" + w[0] + "'", line);
    }
    spec.encoder.push_back(std::move(st));
  }
  const auto& first = spec.encoder.front();
  if (first.kind != EncoderStage::Kind::kObserve && first.kind != EncoderStage::Kind::kStatic)
    throw ParseError("slot encoder must start with 'observe' or 'static'", line);
  for (std::size_t k = 1; k < spec.encoder.size(); ++k) {
    const auto kind = spec.encoder[k].kind;
    if (kind == EncoderStage::Kind::kObserve || kind == EncoderStage::Kind::kStatic)
      throw ParseError("'observe'/'static' may only open the encoder", line);
  }
  // An activation directly before `linear N` becomes that layer's output
  // activation.
  std::vector<EncoderStage> bound;
  for (std::size_t k = 0; k < spec.encoder.size(); ++k) {
    EncoderStage st = spec.encoder[k];
    const bool act = st.kind == EncoderStage::Kind::kTanh || st.kind == EncoderStage::Kind::kSigmoid;
    if (act && k + 1 < spec.encoder.size() && spec.encoder[k + 1].kind == EncoderStage::Kind::kLinear) {
      EncoderStage lin = spec.encoder[++k];
      lin.activation = st.kind;
      bound.push_back(lin);
    } else {
      bound.push_back(st);
    }
  }
  spec.encoder = std::move(bound);

  const auto w = detail::split_words(parts.back());
  if (w.empty()) throw ParseError("slot decoder missing", line);
  Decoder& dec = spec.decoder;
  if (w[0] == "choose") {
    dec.kind = Decoder::Kind::kChoose;
    for (std::size_t k = 1; k < w.size(); ++k) {
      ChoiceWord cw;
      cw.text = w[k];
      if (w[k] == "NOP") {
        cw.op = Op::kNop;
      } else if (detail::is_number(w[k])) {
        cw.op = Op::kLit;
        cw.arg = std::stoul(w[k]);
      } else if (auto op = primitive_word(w[k])) {
        cw.op = *op;
      } else {
        throw ParseError("'" + w[k] + "' is not a primitive word", line);
      }
      dec.words.push_back(cw);
    }
    if (dec.words.empty()) throw ParseError("'choose' needs at least one word", line);
  } else if (w[0] == "manipulate" || w[0] == "permute") {
    dec.kind = w[0] == "permute" ? Decoder::Kind::kPermute : Decoder::Kind::kManipulate;
    dec.refs = detail::parse_refs(w, line);
    if (dec.kind == Decoder::Kind::kPermute && dec.refs.size() > kMaxPermuteRefs)
      throw ParseError("'permute' supports at most " + std::to_string(kMaxPermuteRefs) + " references", line);
    for (std::size_t a = 0; a < dec.refs.size(); ++a)
      for (std::size_t b = a + 1; b < dec.refs.size(); ++b)
        if (dec.refs[a] == dec.refs[b]) throw ParseError("duplicate reference " + dec.refs[a].str(), line);
  } else {
    throw ParseError("unknown decoder '" + w[0] + "'", line);
  }
  return spec;
}

// Lexicographic permutations of 0..m-1; entry k maps position j to perm[k][j].
inline std::vector<std::vector<std::size_t>> permutations(std::size_t m) {
  std::vector<std::size_t> p(m);
  std::iota(p.begin(), p.end(), 0);
  std::vector<std::vector<std::size_t>> out;
  do out.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  return out;
}

inline std::size_t decoder_arity(const Decoder& dec, std::size_t v) {
  switch (dec.kind) {
    case Decoder::Kind::kChoose: return dec.words.size();
    case Decoder::Kind::kManipulate: return dec.refs.size() * v;
    default: return permutations(dec.refs.size()).size();
  }
}

inline std::string param_name(std::size_t slot, const std::string& part) {
  return "slot" + std::to_string(slot) + "." + part;
}

// Checks references and words against machine sizes.
inline void validate_slot(const SlotSpec& spec, const MachineDims& dims) {
  auto check = [&](const CellRef& r) {
    const std::size_t limit = r.where == CellRef::Where::kHeap ? dims.heap : dims.stack;
    if (r.index >= limit)
      throw CompileError("slot " + std::to_string(spec.id) + ": reference " + r.str() + " beyond machine size");
  };
  for (const auto& st : spec.encoder)
    for (const auto& r : st.refs) check(r);
  for (const auto& r : spec.decoder.refs) check(r);
  for (const auto& w : spec.decoder.words)
    if (w.op == Op::kLit && w.arg >= dims.value)
      throw CompileError("slot " + std::to_string(spec.id) + ": literal " + w.text + " outside value range");
}

// Glorot-uniform weights, zero biases, zero static vectors.
inline void init_params(const SlotSpec& spec, const MachineDims& dims, ParameterStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (spec.id + 1)));
  auto glorot = [&](std::size_t in, std::size_t out) {
    Tensor w = Tensor::matrix(in, out);
    const double s = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-s, s);
    for (double& x : w.data()) x = u(rng);
    return w;
  };
  std::size_t width = 0;
  for (std::size_t k = 0; k < spec.encoder.size(); ++k) {
    const EncoderStage& st = spec.encoder[k];
    const std::string stage = "stage" + std::to_string(k);
    switch (st.kind) {
      case EncoderStage::Kind::kObserve:
        width = st.refs.size() * dims.value;
        break;
      case EncoderStage::Kind::kStatic:
        width = dims.value;
        store.add(param_name(spec.id, stage + ".static"), Tensor::vector(dims.value));
        break;
      case EncoderStage::Kind::kLinear:
        store.add(param_name(spec.id, stage + ".W"), glorot(width, st.units));
        store.add(param_name(spec.id, stage + ".b"), Tensor::vector(st.units));
        width = st.units;
        break;
      default:
        break;
    }
  }
  const std::size_t out = decoder_arity(spec.decoder, dims.value);
  store.add(param_name(spec.id, "decoder.W"), glorot(width, out));
  store.add(param_name(spec.id, "decoder.b"), Tensor::vector(out));
}

namespace detail {

inline Var cell_pointer(const CellRef& r, const DataState& s, const MachineDims& dims) {
  switch (r.where) {
    case CellRef::Where::kData: return ops::shift(s.d, -static_cast<long>(r.index));
    case CellRef::Where::kReturn: return ops::shift(s.r, -static_cast<long>(r.index));
    default: return constant_one_hot(dims.heap, r.index);
  }
}

inline const Var& cell_buffer(const CellRef& r, const DataState& s) {
  switch (r.where) {
    case CellRef::Where::kData: return s.D;
    case CellRef::Where::kReturn: return s.R;
    default: return s.H;
  }
}

inline Var& cell_buffer(const CellRef& r, DataState& s) {
  switch (r.where) {
    case CellRef::Where::kData: return s.D;
    case CellRef::Where::kReturn: return s.R;
    default: return s.H;
  }
}

inline Var affine(const Var& x, const Var& W, const Var& b) { return add(vecmat(x, W), b); }

}  // namespace detail

// Latent vector h of the encoder.
inline Var encode_state(const SlotSpec& spec, const ParameterStore& store, const DataState& s, const MachineDims& dims) {
  Var h;
  for (std::size_t k = 0; k < spec.encoder.size(); ++k) {
    const EncoderStage& st = spec.encoder[k];
    const std::string stage = "stage" + std::to_string(k);
    switch (st.kind) {
      case EncoderStage::Kind::kObserve: {
        std::vector<Var> parts;
        for (const CellRef& r : st.refs)
          parts.push_back(ops::read(detail::cell_buffer(r, s), detail::cell_pointer(r, s, dims)));
        h = parts.size() == 1 ? parts.front() : concat(parts);
        break;
      }
      case EncoderStage::Kind::kStatic:
        h = store.at(param_name(spec.id, stage + ".static"));
        break;
      case EncoderStage::Kind::kLinear:
        h = detail::affine(h, store.at(param_name(spec.id, stage + ".W")), store.at(param_name(spec.id, stage + ".b")));
        if (st.activation == EncoderStage::Kind::kTanh) h = tanh(h);
        else if (st.activation == EncoderStage::Kind::kSigmoid) h = sigmoid(h);
        break;
      case EncoderStage::Kind::kTanh:
        h = tanh(h);
        break;
      case EncoderStage::Kind::kSigmoid:
        h = sigmoid(h);
        break;
    }
  }
  return h;
}

// Decoder logits from h.
inline Var decoder_logits(const SlotSpec& spec, const ParameterStore& store, const Var& h) {
  return detail::affine(h, store.at(param_name(spec.id, "decoder.W")), store.at(param_name(spec.id, "decoder.b")));
}

// Σ a_k · word_k(S) for weights a.
inline DataState decode_choose(const std::vector<ChoiceWord>& words, const Var& a, const DataState& s, const MachineDims& dims) {
  std::vector<ops::MixEntry> D, d, R, r, H;
  for (std::size_t k = 0; k < words.size(); ++k) {
    if (a.value()[k] == 0.0) continue;
    DataState out = apply_data(words[k].op, words[k].arg, s, dims);
    D.push_back({k, out.D});
    d.push_back({k, out.d});
    R.push_back({k, out.R});
    r.push_back({k, out.r});
    H.push_back({k, out.H});
  }
  return {ops::mix(a, D), ops::mix(a, d), ops::mix(a, R), ops::mix(a, r), ops::mix(a, H)};
}

// Writes value row j over refs[j]; pointers stay put.
inline DataState decode_manipulate(const std::vector<CellRef>& refs, const std::vector<Var>& values, const DataState& s,
                                   const MachineDims& dims) {
  DataState out = s;
  std::vector<Var> ptrs;
  for (const CellRef& r : refs) ptrs.push_back(detail::cell_pointer(r, s, dims));
  for (std::size_t j = 0; j < refs.size(); ++j) {
    Var& M = detail::cell_buffer(refs[j], out);
    M = ops::write(M, values[j], ptrs[j]);
  }
  return out;
}

// New value at refs[j] is Σ_π b_π x_{π(j)} with π over lexicographic
// permutations.
inline DataState decode_permute(const std::vector<CellRef>& refs, const Var& b, const DataState& s, const MachineDims& dims) {
  const std::size_t m = refs.size();
  const auto perms = permutations(m);
  // P[(j, i), π] = 1 when π(j) = i, so (P b) reshaped is the m x m mixing matrix.
  Tensor P = Tensor::matrix(m * m, perms.size());
  for (std::size_t k = 0; k < perms.size(); ++k)
    for (std::size_t j = 0; j < m; ++j) P(j * m + perms[k][j], k) = 1.0;
  Var W = reshape(matvec(Var::constant(std::move(P)), b), m, m);
  std::vector<Var> xs;
  for (const CellRef& r : refs) xs.push_back(ops::read(detail::cell_buffer(r, s), detail::cell_pointer(r, s, dims)));
  Var X = reshape(concat(xs), m, dims.value);
  Var Y = reshape(matmul(W, X), m * dims.value, 0);
  std::vector<Var> ys;
  for (std::size_t j = 0; j < m; ++j) ys.push_back(slice(Y, j * dims.value, dims.value));
  return decode_manipulate(refs, ys, s, dims);
}

// Successor data state of a slot.
inline DataState apply_slot(const SlotSpec& spec, const ParameterStore& store, const DataState& s, const MachineDims& dims) {
  Var logits = decoder_logits(spec, store, encode_state(spec, store, s, dims));
  switch (spec.decoder.kind) {
    case Decoder::Kind::kChoose:
      return decode_choose(spec.decoder.words, softmax(logits), s, dims);
    case Decoder::Kind::kManipulate: {
      std::vector<Var> rows;
      for (std::size_t j = 0; j < spec.decoder.refs.size(); ++j)
        rows.push_back(softmax(slice(logits, j * dims.value, dims.value)));
      return decode_manipulate(spec.decoder.refs, rows, s, dims);
    }
    default:
      return decode_permute(spec.decoder.refs, softmax(logits), s, dims);
  }
}

// A compiled program with its parsed slots and their parameters.
struct Sketch {
  std::string source;
  LoweredProgram program;
  std::vector<SlotSpec> slots;
  ParameterStore params;
  MachineDims dims;

  static Sketch load(std::string source, const MachineDims& dims, std::uint64_t seed) {
    Sketch s;
    s.source = std::move(source);
    s.dims = dims;
    s.program = compile_source(s.source, {dims.value, dims.heap});
    for (std::size_t k = 0; k < s.program.slots.size(); ++k) {
      s.slots.push_back(parse_slot(s.program.slots[k].body, k, s.program.slots[k].line));
      validate_slot(s.slots.back(), dims);
      init_params(s.slots.back(), dims, s.params, seed);
    }
    return s;
  }
};

}  // namespace d4

#endif  // D4_SKETCH_HPP_
