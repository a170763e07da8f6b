#pragma once

// NIF stand-off annotation documents: a context string plus offset-anchored
// entity annotations, exchanged as a closed turtle subset. Offsets are
// Unicode code points (RFC 5147 character semantics), never bytes.
//
// Documents are immutable values; every operation returns a new document.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "cwm/report.hpp"
#include "cwm/utf8.hpp"

namespace cwm::nif {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ParseError : Error {
  using Error::Error;
};

// Syntactically fine turtle whose triples violate the document model
// (zero/multiple contexts, anchor mismatch, offsets out of range).
struct ModelError : Error {
  using Error::Error;
};

struct OffsetError : Error {
  using Error::Error;
};

struct ContextMismatchError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Annotation {
  std::size_t begin = 0;  // code points, inclusive
  std::size_t end = 0;    // code points, exclusive
  std::string anchor_of;  // substring of the context covered by [begin, end)
  std::string entity_class;
  std::optional<std::string> ident_ref;

  // Identity for deduplication and deterministic ordering.
  auto key() const { return std::tie(begin, end, entity_class, ident_ref); }
  bool operator==(const Annotation&) const = default;
  bool operator<(const Annotation& o) const { return key() < o.key(); }
};

struct NifDocument {
  std::string base_uri;      // fragment identifiers attach here
  std::string context_text;  // the nif:isString value, UTF-8
  std::size_t begin_index = 0;
  std::size_t end_index = 0;  // code points
  std::vector<Annotation> annotations;  // kept sorted and deduplicated

  std::string context_uri() const {
    return base_uri + "#char=" + std::to_string(begin_index) + "," + std::to_string(end_index);
  }
  bool operator==(const NifDocument&) const = default;
};

inline NifDocument make_context(std::string text, std::string base_uri) {
  NifDocument doc;
  doc.base_uri = std::move(base_uri);
  doc.end_index = utf8::length(text);
  doc.context_text = std::move(text);
  return doc;
}

// Returns a copy with one more annotation; the input is never mutated and
// identical (begin, end, class, identRef) tuples are added once.
inline NifDocument annotate(const NifDocument& doc, std::size_t begin, std::size_t end,
                            std::string entity_class,
                            std::optional<std::string> ident_ref = std::nullopt) {
  if (begin >= end || end > doc.end_index)
    throw OffsetError("annotation range [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") out of range for context of length " + std::to_string(doc.end_index));
  Annotation a;
  a.begin = begin;
  a.end = end;
  a.anchor_of = std::string(utf8::slice(doc.context_text, begin, end));
  a.entity_class = std::move(entity_class);
  a.ident_ref = std::move(ident_ref);

  NifDocument out = doc;
  auto pos = std::lower_bound(out.annotations.begin(), out.annotations.end(), a);
  if (pos == out.annotations.end() || !(*pos == a)) out.annotations.insert(pos, a);
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

namespace ns {
inline constexpr std::string_view rdf = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
inline constexpr std::string_view nif = "http://persistence.uni-leipzig.de/nlp2rdf/ontologies/nif-core#";
inline constexpr std::string_view xsd = "http://www.w3.org/2001/XMLSchema#";
inline constexpr std::string_view itsrdf = "http://www.w3.org/2005/11/its/rdf#";
}  // namespace ns

namespace detail {

inline std::string iri(std::string_view prefix, std::string_view local) {
  return std::string(prefix) + std::string(local);
}

inline const std::string kRdfType = iri(ns::rdf, "type");
inline const std::string kBeginIndex = iri(ns::nif, "beginIndex");
inline const std::string kEndIndex = iri(ns::nif, "endIndex");
inline const std::string kIsString = iri(ns::nif, "isString");
inline const std::string kAnchorOf = iri(ns::nif, "anchorOf");
inline const std::string kReferenceContext = iri(ns::nif, "referenceContext");
inline const std::string kEntity = iri(ns::nif, "entity");
inline const std::string kTaIdentRef = iri(ns::itsrdf, "taIdentRef");
inline const std::string kTypeContext = iri(ns::nif, "Context");
inline const std::string kTypeString = iri(ns::nif, "String");
inline const std::string kTypeRfc5147 = iri(ns::nif, "RFC5147String");

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

enum class TokKind { iri, pname, string, datatype_marker, semicolon, comma, dot, prefix_directive, kw_a, end };

struct Token {
  TokKind kind = TokKind::end;
  std::string text;      // iri value, pname text, or decoded string value
  std::size_t line = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view input) : in_(input) {}

  Token next() {
    skip_ws();
    Token t;
    t.line = line_;
    if (pos_ >= in_.size()) return t;
    char c = in_[pos_];
    if (c == '<') return lex_iri();
    if (c == '"') return lex_string();
    if (c == ';') { ++pos_; t.kind = TokKind::semicolon; return t; }
    if (c == ',') { ++pos_; t.kind = TokKind::comma; return t; }
    if (c == '.') { ++pos_; t.kind = TokKind::dot; return t; }
    if (c == '^') {
      if (pos_ + 1 < in_.size() && in_[pos_ + 1] == '^') {
        pos_ += 2;
        t.kind = TokKind::datatype_marker;
        return t;
      }
      fail("stray '^'");
    }
    if (c == '@') return lex_directive();
    if (is_name_start(c)) return lex_name();
    fail(std::string("unexpected character '") + c + "'");
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("turtle syntax error at line " + std::to_string(line_) + ": " + msg);
  }

  void skip_ws() {
    while (pos_ < in_.size()) {
      char c = in_[pos_];
      if (c == '\n') { ++line_; ++pos_; }
      else if (c == ' ' || c == '\t' || c == '\r') { ++pos_; }
      else if (c == '#') {  // comment to end of line
        while (pos_ < in_.size() && in_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  static bool is_name_start(char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_';
  }
  static bool is_name_char(char c) {
    return is_name_start(c) || (c >= '0' && c <= '9') || c == '-' || c == '.' || c == ':';
  }

  std::uint32_t lex_hex(std::size_t digits) {
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < digits; ++i) {
      if (pos_ >= in_.size()) fail("truncated \\u escape");
      char c = in_[pos_++];
      v <<= 4;
      if (c >= '0' && c <= '9') v |= static_cast<std::uint32_t>(c - '0');
      else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint32_t>(c - 'a' + 10);
      else if (c >= 'A' && c <= 'F') v |= static_cast<std::uint32_t>(c - 'A' + 10);
      else fail("bad hex digit in escape");
    }
    return v;
  }

  Token lex_iri() {
    ++pos_;  // consume '<'
    Token t;
    t.kind = TokKind::iri;
    t.line = line_;
    while (true) {
      if (pos_ >= in_.size()) fail("unterminated IRI");
      char c = in_[pos_++];
      if (c == '>') break;
      if (c == '\n') fail("newline inside IRI");
      if (c == '\\') {
        if (pos_ >= in_.size()) fail("truncated escape in IRI");
        char e = in_[pos_++];
        if (e == 'u') utf8::append(t.text, lex_hex(4));
        else if (e == 'U') utf8::append(t.text, lex_hex(8));
        else fail("unsupported escape in IRI");
      } else {
        t.text.push_back(c);
      }
    }
    return t;
  }

  Token lex_string() {
    ++pos_;  // consume '"'
    Token t;
    t.kind = TokKind::string;
    t.line = line_;
    while (true) {
      if (pos_ >= in_.size()) fail("unterminated string literal");
      char c = in_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (pos_ >= in_.size()) fail("truncated escape");
        char e = in_[pos_++];
        switch (e) {
          case 't': t.text.push_back('\t'); break;
          case 'n': t.text.push_back('\n'); break;
          case 'r': t.text.push_back('\r'); break;
          case 'b': t.text.push_back('\b'); break;
          case 'f': t.text.push_back('\f'); break;
          case '"': t.text.push_back('"'); break;
          case '\\': t.text.push_back('\\'); break;
          case 'u': utf8::append(t.text, lex_hex(4)); break;
          case 'U': utf8::append(t.text, lex_hex(8)); break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      } else {
        if (c == '\n') ++line_;
        t.text.push_back(c);
      }
    }
    return t;
  }

  Token lex_directive() {
    std::size_t start = pos_++;
    while (pos_ < in_.size() && is_name_start(in_[pos_])) ++pos_;
    std::string word(in_.substr(start, pos_ - start));
    if (word != "@prefix") fail("unsupported directive '" + word + "'");
    Token t;
    t.kind = TokKind::prefix_directive;
    t.line = line_;
    return t;
  }

  Token lex_name() {
    std::size_t start = pos_;
    while (pos_ < in_.size() && is_name_char(in_[pos_])) ++pos_;
    // A trailing '.' terminates the statement, it is not part of the name.
    while (pos_ > start && in_[pos_ - 1] == '.') --pos_;
    std::string word(in_.substr(start, pos_ - start));
    Token t;
    t.line = line_;
    if (word == "a") {
      t.kind = TokKind::kw_a;
      return t;
    }
    if (word.find(':') == std::string::npos)
      fail("bare word '" + word + "' (expected prefixed name)");
    t.kind = TokKind::pname;
    t.text = std::move(word);
    return t;
  }

  std::string_view in_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

// ---------------------------------------------------------------------------
// Statement parser
// ---------------------------------------------------------------------------

struct Object {
  bool is_iri = false;
  std::string value;     // IRI or literal lexical form
  std::string datatype;  // expanded datatype IRI, empty for plain literals
};

// One `subject predicate-object-list .` statement. Each non-context block
// is its own annotation record, so one span may carry several annotations
// without entity/identRef pairing ambiguity.
struct Block {
  std::string subject;
  std::size_t line = 0;
  std::vector<std::pair<std::string, Object>> triples;  // (expanded predicate, object)
};

class StatementParser {
 public:
  explicit StatementParser(std::string_view input) : lexer_(input) {
    prefixes_ = {{"rdf", std::string(ns::rdf)},
                 {"nif", std::string(ns::nif)},
                 {"xsd", std::string(ns::xsd)},
                 {"itsrdf", std::string(ns::itsrdf)}};
    advance();
  }

  std::vector<Block> parse() {
    std::vector<Block> blocks;
    while (tok_.kind != TokKind::end) {
      if (tok_.kind == TokKind::prefix_directive) {
        parse_prefix();
      } else {
        blocks.push_back(parse_block());
      }
    }
    return blocks;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("turtle syntax error at line " + std::to_string(tok_.line) + ": " + msg);
  }

  void advance() { tok_ = lexer_.next(); }

  void expect(TokKind kind, const char* what) {
    if (tok_.kind != kind) fail(std::string("expected ") + what);
    advance();
  }

  std::string expand(const std::string& pname) const {
    auto colon = pname.find(':');
    std::string prefix = pname.substr(0, colon);
    auto it = prefixes_.find(prefix);
    if (it == prefixes_.end())
      throw ParseError("unknown prefix '" + prefix + ":' at line " + std::to_string(tok_.line));
    return it->second + pname.substr(colon + 1);
  }

  void parse_prefix() {
    advance();  // @prefix
    if (tok_.kind != TokKind::pname) fail("expected prefix name after @prefix");
    std::string name = tok_.text;
    if (name.empty() || name.back() != ':') fail("prefix name must end with ':'");
    name.pop_back();
    advance();
    if (tok_.kind != TokKind::iri) fail("expected IRI in @prefix");
    prefixes_[name] = tok_.text;
    advance();
    expect(TokKind::dot, "'.' after @prefix");
  }

  std::string parse_resource(const char* what) {
    if (tok_.kind == TokKind::iri) {
      std::string v = tok_.text;
      advance();
      return v;
    }
    if (tok_.kind == TokKind::pname) {
      std::string v = expand(tok_.text);
      advance();
      return v;
    }
    fail(std::string("expected ") + what);
  }

  Object parse_object() {
    Object o;
    if (tok_.kind == TokKind::iri || tok_.kind == TokKind::pname) {
      o.is_iri = true;
      o.value = parse_resource("object");
      return o;
    }
    if (tok_.kind == TokKind::string) {
      o.value = tok_.text;
      advance();
      if (tok_.kind == TokKind::datatype_marker) {
        advance();
        o.datatype = parse_resource("datatype IRI");
      }
      return o;
    }
    fail("expected IRI, prefixed name or literal");
  }

  Block parse_block() {
    Block b;
    b.line = tok_.line;
    if (tok_.kind != TokKind::iri) fail("expected IRI subject");
    b.subject = tok_.text;
    advance();
    while (true) {
      std::string predicate;
      if (tok_.kind == TokKind::kw_a) {
        predicate = kRdfType;
        advance();
      } else {
        predicate = parse_resource("predicate");
      }
      // object list
      while (true) {
        b.triples.emplace_back(predicate, parse_object());
        if (tok_.kind == TokKind::comma) {
          advance();
          continue;
        }
        break;
      }
      if (tok_.kind == TokKind::semicolon) {
        advance();
        if (tok_.kind == TokKind::dot) break;  // tolerate trailing ';'
        continue;
      }
      break;
    }
    expect(TokKind::dot, "'.' at end of statement");
    return b;
  }

  Lexer lexer_;
  Token tok_;
  std::map<std::string, std::string> prefixes_;
};

// ---------------------------------------------------------------------------
// Model assembly
// ---------------------------------------------------------------------------

inline std::size_t parse_index(const Object& o, const char* field, std::size_t line) {
  if (o.is_iri) throw ModelError(std::string(field) + " must be a literal (line " +
                                 std::to_string(line) + ")");
  if (o.value.empty() || o.value.find_first_not_of("0123456789") != std::string::npos)
    throw ModelError(std::string(field) + " is not a non-negative integer: '" + o.value + "'");
  return std::stoull(o.value);
}

struct BlockView {
  std::set<std::string> types;
  std::map<std::string, std::vector<Object>> props;  // predicate -> objects
};

inline BlockView view_of(const Block& b) {
  static const std::set<std::string> known_predicates = {
      kRdfType, kBeginIndex, kEndIndex, kIsString, kAnchorOf,
      kReferenceContext, kEntity, kTaIdentRef};
  static const std::set<std::string> known_types = {kTypeContext, kTypeString, kTypeRfc5147};
  BlockView v;
  for (const auto& [pred, obj] : b.triples) {
    if (!known_predicates.contains(pred))
      throw ParseError("unsupported predicate <" + pred + "> (line " + std::to_string(b.line) + ")");
    if (pred == kRdfType) {
      if (!obj.is_iri) throw ModelError("rdf:type object must be an IRI");
      if (!known_types.contains(obj.value))
        throw ParseError("unsupported type <" + obj.value + "> (line " + std::to_string(b.line) + ")");
      v.types.insert(obj.value);
    } else {
      v.props[pred].push_back(obj);
    }
  }
  return v;
}

inline const Object& single(const BlockView& v, const std::string& pred, const char* name,
                            const Block& b) {
  auto it = v.props.find(pred);
  if (it == v.props.end())
    throw ModelError(std::string("missing ") + name + " in subject <" + b.subject + ">");
  if (it->second.size() > 1)
    throw ModelError(std::string("multiple ") + name + " values in subject <" + b.subject + ">");
  return it->second.front();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// parse / serialize
// ---------------------------------------------------------------------------

// Accepts the closed NIF turtle subset: optional @prefix declarations
// (nif/itsrdf/xsd/rdf are predeclared), one nif:Context subject block and
// any number of annotation blocks referencing it.
inline NifDocument parse(std::string_view turtle) {
  auto blocks = detail::StatementParser(turtle).parse();

  const detail::Block* context_block = nullptr;
  detail::BlockView context_view;
  std::vector<std::pair<const detail::Block*, detail::BlockView>> annotation_blocks;

  for (const auto& b : blocks) {
    detail::BlockView v = detail::view_of(b);
    if (v.types.contains(detail::kTypeContext)) {
      if (context_block) throw ModelError("multiple nif:Context subjects");
      context_block = &b;
      context_view = std::move(v);
    } else {
      if (!v.types.contains(detail::kTypeString))
        throw ModelError("subject <" + b.subject + "> is neither nif:Context nor nif:String");
      annotation_blocks.emplace_back(&b, std::move(v));
    }
  }
  if (!context_block) throw ModelError("no nif:Context subject");

  NifDocument doc;
  {
    const auto& b = *context_block;
    const auto& v = context_view;
    doc.context_text = detail::single(v, detail::kIsString, "nif:isString", b).value;
    doc.begin_index = detail::parse_index(detail::single(v, detail::kBeginIndex, "nif:beginIndex", b),
                                          "nif:beginIndex", b.line);
    doc.end_index = detail::parse_index(detail::single(v, detail::kEndIndex, "nif:endIndex", b),
                                        "nif:endIndex", b.line);
    if (v.props.contains(detail::kAnchorOf) || v.props.contains(detail::kReferenceContext) ||
        v.props.contains(detail::kEntity) || v.props.contains(detail::kTaIdentRef))
      throw ModelError("context subject carries annotation predicates");
    if (doc.begin_index != 0) throw ModelError("context beginIndex must be 0");
    if (doc.end_index - doc.begin_index != utf8::length(doc.context_text))
      throw ModelError("context endIndex " + std::to_string(doc.end_index) +
                       " does not match isString length " +
                       std::to_string(utf8::length(doc.context_text)));
    auto hash = b.subject.find('#');
    if (hash == std::string::npos)
      throw ModelError("context subject lacks a #char=<b>,<e> fragment");
    doc.base_uri = b.subject.substr(0, hash);
    std::string expected_fragment =
        "char=" + std::to_string(doc.begin_index) + "," + std::to_string(doc.end_index);
    if (b.subject.substr(hash + 1) != expected_fragment)
      throw ModelError("context fragment '" + b.subject.substr(hash + 1) +
                       "' does not match indices (expected '" + expected_fragment + "')");
  }

  for (const auto& [bp, v] : annotation_blocks) {
    const auto& b = *bp;
    const detail::Object& ref = detail::single(v, detail::kReferenceContext, "nif:referenceContext", b);
    if (!ref.is_iri || ref.value != context_block->subject)
      throw ModelError("annotation <" + b.subject + "> does not reference the context");
    Annotation a;
    a.begin = detail::parse_index(detail::single(v, detail::kBeginIndex, "nif:beginIndex", b),
                                  "nif:beginIndex", b.line);
    a.end = detail::parse_index(detail::single(v, detail::kEndIndex, "nif:endIndex", b),
                                "nif:endIndex", b.line);
    a.anchor_of = detail::single(v, detail::kAnchorOf, "nif:anchorOf", b).value;
    const detail::Object& entity = detail::single(v, detail::kEntity, "nif:entity", b);
    if (!entity.is_iri) throw ModelError("nif:entity must be an IRI");
    a.entity_class = entity.value;
    if (auto it = v.props.find(detail::kTaIdentRef); it != v.props.end()) {
      if (it->second.size() > 1)
        throw ModelError("multiple itsrdf:taIdentRef values in subject <" + b.subject + ">");
      if (!it->second.front().is_iri) throw ModelError("itsrdf:taIdentRef must be an IRI");
      a.ident_ref = it->second.front().value;
    }
    if (a.begin >= a.end || a.end > doc.end_index)
      throw ModelError("annotation range [" + std::to_string(a.begin) + "," +
                       std::to_string(a.end) + ") out of range in <" + b.subject + ">");
    std::string_view expected = utf8::slice(doc.context_text, a.begin, a.end);
    if (a.anchor_of != expected)
      throw ModelError("anchorOf '" + a.anchor_of + "' does not match context substring '" +
                       std::string(expected) + "'");
    auto pos = std::lower_bound(doc.annotations.begin(), doc.annotations.end(), a);
    if (pos == doc.annotations.end() || !(*pos == a)) doc.annotations.insert(pos, a);
  }
  return doc;
}

namespace detail {

inline std::string escape_literal(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline void emit(std::string& out, const char* predicate, const std::string& object, bool last) {
  out += " ";
  out += predicate;
  std::size_t pad = 22;
  std::size_t len = std::string_view(predicate).size();
  out.append(len < pad ? pad - len : 1, ' ');
  out += object;
  out += last ? " .\n" : " ;\n";
}

inline std::string integer_literal(std::size_t v) {
  return "\"" + std::to_string(v) + "\"^^xsd:nonNegativeInteger";
}

inline std::string string_literal(std::string_view s) {
  return "\"" + escape_literal(s) + "\"^^xsd:string";
}

}  // namespace detail

// Deterministic output: prefixes, the context block, then annotations in
// (begin, end, entityClass, identRef) order. parse(serialize(doc)) == doc.
inline std::string serialize(const NifDocument& doc) {
  std::string out;
  out += "@prefix itsrdf: <" + std::string(ns::itsrdf) + "> .\n";
  out += "@prefix nif:    <" + std::string(ns::nif) + "> .\n";
  out += "@prefix xsd:    <" + std::string(ns::xsd) + "> .\n\n";

  out += "<" + doc.context_uri() + ">\n";
  detail::emit(out, "a", "nif:RFC5147String, nif:String, nif:Context", false);
  detail::emit(out, "nif:beginIndex", detail::integer_literal(doc.begin_index), false);
  detail::emit(out, "nif:endIndex", detail::integer_literal(doc.end_index), false);
  detail::emit(out, "nif:isString", detail::string_literal(doc.context_text), true);

  for (const auto& a : doc.annotations) {
    out += "\n<" + doc.base_uri + "#char=" + std::to_string(a.begin) + "," +
           std::to_string(a.end) + ">\n";
    detail::emit(out, "a", "nif:RFC5147String, nif:String", false);
    detail::emit(out, "nif:anchorOf", detail::string_literal(a.anchor_of), false);
    detail::emit(out, "nif:beginIndex", detail::integer_literal(a.begin), false);
    detail::emit(out, "nif:endIndex", detail::integer_literal(a.end), false);
    detail::emit(out, "nif:entity", "<" + a.entity_class + ">", false);
    detail::emit(out, "nif:referenceContext", "<" + doc.context_uri() + ">",
                 !a.ident_ref.has_value());
    if (a.ident_ref)
      detail::emit(out, "itsrdf:taIdentRef", "<" + *a.ident_ref + ">", true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// merge / validate
// ---------------------------------------------------------------------------

// Union of annotation sets over a shared context, deduplicated on the
// full annotation tuple. Conflicting identRefs for the same span survive
// as distinct annotations.
inline NifDocument merge(const std::vector<NifDocument>& docs) {
  if (docs.empty()) throw ContextMismatchError("merge requires at least one document");
  NifDocument out = docs.front();
  for (std::size_t i = 1; i < docs.size(); ++i) {
    const NifDocument& d = docs[i];
    if (d.context_text != out.context_text)
      throw ContextMismatchError("documents disagree on context text");
    if (d.base_uri != out.base_uri)
      throw ContextMismatchError("documents disagree on base URI");
    for (const auto& a : d.annotations) {
      auto pos = std::lower_bound(out.annotations.begin(), out.annotations.end(), a);
      if (pos == out.annotations.end() || !(*pos == a)) out.annotations.insert(pos, a);
    }
  }
  return out;
}

// Machine-checks the document invariants; findings name the violated field.
inline ValidationReport validate(const NifDocument& doc) {
  ValidationReport report;
  if (!utf8::valid(doc.context_text))
    report.error("contextText", "not valid UTF-8");
  if (doc.begin_index != 0)
    report.error("beginIndex", "context beginIndex must be 0");
  std::size_t len = utf8::length(doc.context_text);
  if (doc.end_index - doc.begin_index != len)
    report.error("endIndex", "endIndex - beginIndex = " +
                                 std::to_string(doc.end_index - doc.begin_index) +
                                 " but context has " + std::to_string(len) + " code points");
  for (std::size_t i = 0; i < doc.annotations.size(); ++i) {
    const Annotation& a = doc.annotations[i];
    std::string path = "annotations[" + std::to_string(i) + "]";
    if (a.begin >= a.end)
      report.error(path + ".beginIndex", "empty or inverted range [" + std::to_string(a.begin) +
                                             "," + std::to_string(a.end) + ")");
    if (a.end > doc.end_index)
      report.error(path + ".endIndex", "endIndex " + std::to_string(a.end) +
                                           " exceeds context endIndex " +
                                           std::to_string(doc.end_index));
    if (a.begin < a.end && a.end <= doc.end_index) {
      std::string_view expected = utf8::slice(doc.context_text, a.begin, a.end);
      if (a.anchor_of != expected)
        report.error(path + ".anchorOf", "anchorOf '" + a.anchor_of +
                                             "' does not match context substring '" +
                                             std::string(expected) + "'");
    }
    if (a.entity_class.empty())
      report.error(path + ".entityClass", "empty entity class URI");
  }
  for (std::size_t i = 1; i < doc.annotations.size(); ++i) {
    if (doc.annotations[i] == doc.annotations[i - 1])
      report.error("annotations[" + std::to_string(i) + "]", "duplicate annotation tuple");
    if (doc.annotations[i] < doc.annotations[i - 1])
      report.error("annotations[" + std::to_string(i) + "]", "annotations out of canonical order");
  }
  return report;
}

}  // namespace cwm::nif
