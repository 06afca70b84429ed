// SPDX-License-Identifier: Apache-2.0
//
// Verilog-subset front end: lexer, recursive-descent parser, design AST,
// parameter constant evaluation, and strict/lenient symbol resolution.
// Supported subset: module/endmodule, ANSI and non-ANSI ports, wire/reg/
// integer declarations, parameter/localparam, assign, always blocks with
// if/case/casez/casex and blocking/non-blocking assignments, module
// instantiation with named or positional connections, concatenation,
// replication, part/bit selects, unary/binary/ternary operators.
// Constructs outside the subset become located diagnostics and opaque
// nodes in lenient mode, errors in strict mode.

#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rarecov::rtl {

// ---------------------------------------------------------------------------
// Errors and diagnostics
// ---------------------------------------------------------------------------

struct SyntaxError : std::runtime_error {
  std::string file;
  int line, col;
  SyntaxError(std::string f, int l, int c, const std::string& what)
      : std::runtime_error(f + ":" + std::to_string(l) + ":" + std::to_string(c) + ": " + what),
        file(std::move(f)),
        line(l),
        col(c) {}
};

struct UnresolvedModule : std::runtime_error {
  std::string module_name;
  explicit UnresolvedModule(std::string name)
      : std::runtime_error("instantiated module is not defined: " + name),
        module_name(std::move(name)) {}
};

struct DuplicateDeclaration : std::runtime_error {
  std::string name;
  explicit DuplicateDeclaration(std::string n)
      : std::runtime_error("duplicate declaration: " + n), name(std::move(n)) {}
};

struct Diagnostic {
  std::string file;
  int line = 0, col = 0;
  std::string message;
};

// ---------------------------------------------------------------------------
// Expressions
// ---------------------------------------------------------------------------

struct Expr;
using ExprPtr = std::unique_ptr<Expr>;

struct Expr {
  enum Kind { Ident, Literal, Unary, Binary, Ternary, Concat, Replicate, Select, Opaque } kind;
  std::string text;  // identifier name, literal text, or operator symbol
  std::string src;   // exact source span, for rendering
  std::vector<ExprPtr> args;

  explicit Expr(Kind k) : kind(k) {}
};

/// All identifier names referenced anywhere in the expression.
inline void collect_identifiers(const Expr& e, std::vector<std::string>& out) {
  if (e.kind == Expr::Ident) out.push_back(e.text);
  if (e.kind == Expr::Select && !e.text.empty()) out.push_back(e.text);
  for (const auto& a : e.args) collect_identifiers(*a, out);
}

inline std::vector<std::string> identifiers_of(const Expr& e) {
  std::vector<std::string> out;
  collect_identifiers(e, out);
  return out;
}

// ---------------------------------------------------------------------------
// Statements
// ---------------------------------------------------------------------------

struct Stmt;
using StmtPtr = std::unique_ptr<Stmt>;

struct CaseItem {
  std::vector<ExprPtr> labels;  // empty means `default`
  std::vector<StmtPtr> body;
};

struct Stmt {
  enum Kind { Assign, If, Case, Block, Opaque } kind;
  // Assign
  std::string lhs_name;  // base identifier of the target
  std::string lhs_text;  // as written (may include a select)
  ExprPtr rhs;
  bool non_blocking = false;
  // If
  ExprPtr cond;
  std::vector<StmtPtr> then_body, else_body;
  // Case
  ExprPtr subject;
  std::vector<CaseItem> items;
  std::string case_kind;  // case | casez | casex
  // Block
  std::vector<StmtPtr> body;
  // Opaque
  std::string note;

  explicit Stmt(Kind k) : kind(k) {}
};

struct SensitivityEntry {
  enum Edge { None, Pos, Neg } edge = None;
  std::string signal;  // empty for @(*)
};

struct AlwaysBlock {
  std::vector<SensitivityEntry> sensitivity;
  std::vector<StmtPtr> body;
};

// ---------------------------------------------------------------------------
// Module structure
// ---------------------------------------------------------------------------

struct Port {
  enum Dir { In, Out, InOut } dir = In;
  std::string name;
  unsigned width = 1;
};

struct Net {
  std::string name;
  unsigned width = 1;
  bool is_reg = false;
};

struct ContAssign {
  std::string lhs_name;
  std::string lhs_text;
  ExprPtr rhs;
};

struct Connection {
  std::string port;  // empty until positional connections are linked
  ExprPtr expr;      // null for explicitly unconnected .port()
};

struct Instance {
  std::string module_name;
  std::string instance_name;
  std::vector<Connection> connections;
  bool positional = false;
};

struct Module {
  std::string name;
  std::vector<Port> ports;            // declaration order
  std::map<std::string, Net> nets;    // includes ports
  std::map<std::string, int64_t> params;
  std::vector<ContAssign> assigns;
  std::vector<AlwaysBlock> always_blocks;
  std::vector<Instance> instances;
  std::vector<Diagnostic> diagnostics;

  const Port* find_port(const std::string& n) const {
    for (const auto& p : ports)
      if (p.name == n) return &p;
    return nullptr;
  }
};

struct DesignAST {
  std::map<std::string, Module> modules;
  std::vector<std::string> module_order;  // declaration order across sources
  std::string top;
  std::vector<Diagnostic> diagnostics;
  std::vector<std::string> external_modules;  // referenced but not defined
};

struct ParseOptions {
  bool strict = false;
  std::string top_override;  // empty: auto-detect
};

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

namespace detail {

struct Token {
  enum Kind { Ident, Number, String, Punct, End } kind = End;
  std::string text;
  int line = 1, col = 1;
  size_t offset = 0;
};

class Lexer {
 public:
  Lexer(std::string_view text, std::string file, std::vector<Diagnostic>* diags)
      : text_(text), file_(std::move(file)), diags_(diags) {
    advance();
  }

  const Token& peek() const { return cur_; }
  Token take() {
    Token t = cur_;
    advance();
    return t;
  }
  const std::string& file() const { return file_; }
  std::string_view source() const { return text_; }

 private:
  void advance() {
    skip_space_and_comments();
    cur_ = Token{};
    cur_.line = line_;
    cur_.col = col_;
    cur_.offset = pos_;
    if (pos_ >= text_.size()) {
      cur_.kind = Token::End;
      return;
    }
    char c = text_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$') {
      size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_' ||
              text_[pos_] == '$'))
        bump();
      cur_.kind = Token::Ident;
      cur_.text = std::string(text_.substr(start, pos_ - start));
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '\'') {
      size_t start = pos_;
      while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) ||
                                     text_[pos_] == '_'))
        bump();
      if (pos_ < text_.size() && text_[pos_] == '\'') {
        bump();  // '
        if (pos_ < text_.size() && (text_[pos_] == 's' || text_[pos_] == 'S')) bump();
        if (pos_ < text_.size()) bump();  // base char
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_' ||
                text_[pos_] == '?'))
          bump();
      }
      cur_.kind = Token::Number;
      cur_.text = std::string(text_.substr(start, pos_ - start));
      return;
    }
    if (c == '"') {
      size_t start = pos_;
      bump();
      while (pos_ < text_.size() && text_[pos_] != '"') {
        if (text_[pos_] == '\\') bump();
        bump();
      }
      if (pos_ < text_.size()) bump();
      cur_.kind = Token::String;
      cur_.text = std::string(text_.substr(start, pos_ - start));
      return;
    }
    if (c == '`') {
      // compiler directive: skip the rest of the line, note it, re-lex
      size_t start = pos_;
      while (pos_ < text_.size() && text_[pos_] != '\n') bump();
      if (diags_)
        diags_->push_back({file_, cur_.line, cur_.col,
                           "ignored compiler directive: " +
                               std::string(text_.substr(start, std::min<size_t>(20, pos_ - start)))});
      advance();
      return;
    }
    // multi-char operators, longest first
    static const char* ops[] = {"<<<", ">>>", "===", "!==", "<=", ">=", "==", "!=", "&&",
                                "||",  "<<",  ">>",  "~&",  "~|", "~^", "^~", "+:", "-:", "**"};
    for (const char* op : ops) {
      size_t n = std::char_traits<char>::length(op);
      if (text_.substr(pos_, n) == op) {
        cur_.kind = Token::Punct;
        cur_.text = op;
        for (size_t i = 0; i < n; ++i) bump();
        return;
      }
    }
    cur_.kind = Token::Punct;
    cur_.text = std::string(1, c);
    bump();
  }

  void skip_space_and_comments() {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        bump();
      } else if (c == '/' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '/') {
        while (pos_ < text_.size() && text_[pos_] != '\n') bump();
      } else if (c == '/' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '*') {
        bump();
        bump();
        while (pos_ + 1 < text_.size() && !(text_[pos_] == '*' && text_[pos_ + 1] == '/')) bump();
        if (pos_ + 1 < text_.size()) {
          bump();
          bump();
        }
      } else {
        break;
      }
    }
  }

  void bump() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  std::string_view text_;
  std::string file_;
  std::vector<Diagnostic>* diags_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;
  Token cur_;
};

// ---------------------------------------------------------------------------
// Number literal evaluation ("8'hFF", "'b1010", "42")
// ---------------------------------------------------------------------------

inline std::optional<int64_t> eval_literal(const std::string& text) {
  auto tick = text.find('\'');
  std::string digits;
  int base = 10;
  if (tick == std::string::npos) {
    digits = text;
  } else {
    size_t i = tick + 1;
    if (i < text.size() && (text[i] == 's' || text[i] == 'S')) ++i;
    if (i >= text.size()) return std::nullopt;
    switch (std::tolower(static_cast<unsigned char>(text[i]))) {
      case 'b': base = 2; break;
      case 'o': base = 8; break;
      case 'd': base = 10; break;
      case 'h': base = 16; break;
      default: return std::nullopt;
    }
    digits = text.substr(i + 1);
  }
  int64_t value = 0;
  bool any = false;
  for (char c : digits) {
    if (c == '_') continue;
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = 10 + c - 'a';
    else if (c >= 'A' && c <= 'F') d = 10 + c - 'A';
    else return std::nullopt;  // x/z/? digits are not constants
    if (d >= base) return std::nullopt;
    value = value * base + d;
    any = true;
  }
  return any ? std::optional<int64_t>(value) : std::nullopt;
}

}  // namespace detail

/// Fold an expression to a constant using the module's parameter bindings.
inline std::optional<int64_t> eval_const(const Expr& e,
                                         const std::map<std::string, int64_t>& params) {
  switch (e.kind) {
    case Expr::Literal: return detail::eval_literal(e.text);
    case Expr::Ident: {
      auto it = params.find(e.text);
      if (it == params.end()) return std::nullopt;
      return it->second;
    }
    case Expr::Unary: {
      auto v = eval_const(*e.args[0], params);
      if (!v) return std::nullopt;
      if (e.text == "-") return -*v;
      if (e.text == "+") return *v;
      if (e.text == "!") return *v == 0 ? 1 : 0;
      if (e.text == "~") return ~*v;
      return std::nullopt;
    }
    case Expr::Binary: {
      auto a = eval_const(*e.args[0], params);
      auto b = eval_const(*e.args[1], params);
      if (!a || !b) return std::nullopt;
      const std::string& op = e.text;
      if (op == "+") return *a + *b;
      if (op == "-") return *a - *b;
      if (op == "*") return *a * *b;
      if (op == "/") return *b == 0 ? std::nullopt : std::optional<int64_t>(*a / *b);
      if (op == "%") return *b == 0 ? std::nullopt : std::optional<int64_t>(*a % *b);
      if (op == "<<") return *a << *b;
      if (op == ">>") return *a >> *b;
      if (op == "&") return *a & *b;
      if (op == "|") return *a | *b;
      if (op == "^") return *a ^ *b;
      return std::nullopt;
    }
    case Expr::Ternary: {
      auto c = eval_const(*e.args[0], params);
      if (!c) return std::nullopt;
      return eval_const(*e.args[*c != 0 ? 1 : 2], params);
    }
    default: return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace detail {

class Parser {
 public:
  Parser(std::string_view text, std::string file, const ParseOptions& opt, DesignAST& out)
      : lex_(text, file, &out.diagnostics), opt_(opt), out_(out) {}

  void parse_source() {
    while (lex_.peek().kind != Token::End) {
      if (lex_.peek().kind == Token::Ident && lex_.peek().text == "module") {
        parse_module();
      } else {
        Token t = lex_.take();
        diag(t, "skipped top-level token outside any module: " + t.text);
      }
    }
  }

 private:
  [[noreturn]] void fail(const Token& at, const std::string& what) {
    throw SyntaxError(lex_.file(), at.line, at.col, what);
  }

  void diag(const Token& at, const std::string& message) {
    Diagnostic d{lex_.file(), at.line, at.col, message};
    if (mod_) mod_->diagnostics.push_back(d);
    out_.diagnostics.push_back(d);
  }

  bool at_punct(const char* p) const {
    return lex_.peek().kind == Token::Punct && lex_.peek().text == p;
  }
  bool at_kw(const char* k) const {
    return lex_.peek().kind == Token::Ident && lex_.peek().text == k;
  }
  Token expect_punct(const char* p) {
    if (!at_punct(p)) fail(lex_.peek(), std::string("expected '") + p + "', found '" +
                                            lex_.peek().text + "'");
    return lex_.take();
  }
  Token expect_ident() {
    if (lex_.peek().kind != Token::Ident) fail(lex_.peek(), "expected identifier");
    return lex_.take();
  }

  // ---- declarations -------------------------------------------------------

  unsigned parse_range_width() {
    // '[' msb ':' lsb ']' -> |msb-lsb|+1; non-constant bounds give width 1
    Token open = expect_punct("[");
    ExprPtr msb = parse_expr();
    expect_punct(":");
    ExprPtr lsb = parse_expr();
    expect_punct("]");
    auto m = eval_const(*msb, mod_->params);
    auto l = eval_const(*lsb, mod_->params);
    if (!m || !l) {
      diag(open, "non-constant range bounds; assuming width 1");
      return 1;
    }
    int64_t w = (*m > *l ? *m - *l : *l - *m) + 1;
    return w < 1 ? 1 : static_cast<unsigned>(w);
  }

  void parse_param_decl(bool expect_semicolon) {
    // parameter [range]? NAME = const {, NAME = const}
    lex_.take();  // parameter | localparam
    if (at_punct("[")) parse_range_width();
    while (true) {
      Token name = expect_ident();
      expect_punct("=");
      ExprPtr value = parse_expr();
      auto v = eval_const(*value, mod_->params);
      if (v) {
        mod_->params[name.text] = *v;
      } else {
        diag(name, "non-constant parameter value for " + name.text + "; assuming 0");
        mod_->params[name.text] = 0;
      }
      if (at_punct(",")) {
        lex_.take();
        continue;
      }
      break;
    }
    if (expect_semicolon) expect_punct(";");
  }

  Port::Dir dir_of(const std::string& kw) {
    if (kw == "input") return Port::In;
    if (kw == "output") return Port::Out;
    return Port::InOut;
  }

  void parse_port_decl_body(Port::Dir dir, bool ansi_single) {
    // after the direction keyword: [wire|reg]? [range]? name {, name}
    bool is_reg = false;
    if (at_kw("wire") || at_kw("reg")) is_reg = lex_.take().text == "reg";
    else if (at_kw("integer")) {
      lex_.take();
      is_reg = true;
    }
    unsigned width = at_punct("[") ? parse_range_width() : 1;
    while (true) {
      Token name = expect_ident();
      auto existing = mod_->nets.find(name.text);
      if (existing != mod_->nets.end()) {
        // non-ANSI second mention: direction decl refining a prior wire/reg
        existing->second.width = std::max(existing->second.width, width);
        existing->second.is_reg = existing->second.is_reg || is_reg;
      } else {
        mod_->nets[name.text] = Net{name.text, width, is_reg};
      }
      bool listed = false;
      for (auto& p : mod_->ports)
        if (p.name == name.text) {
          p.dir = dir;
          p.width = width;
          listed = true;
        }
      if (!listed) mod_->ports.push_back(Port{dir, name.text, width});
      if (!ansi_single && at_punct(",")) {
        lex_.take();
        continue;
      }
      break;
    }
  }

  void parse_net_decl() {
    bool is_reg = false;
    Token kw = lex_.take();  // wire | reg | integer
    if (kw.text == "reg" || kw.text == "integer") is_reg = true;
    unsigned width = at_punct("[") ? parse_range_width() : 1;
    while (true) {
      Token name = expect_ident();
      if (at_punct("[")) {  // memory: reg [7:0] mem [0:63] -- subset keeps width only
        parse_range_width();
        diag(name, "memory dimension on " + name.text + " recorded as plain net");
      }
      declare_net(name, name.text, width, is_reg, /*merging_port_ok=*/true);
      if (at_punct("=")) {  // net initializer: treat as continuous assign
        lex_.take();
        ExprPtr rhs = parse_expr();
        mod_->assigns.push_back(ContAssign{name.text, name.text, std::move(rhs)});
      }
      if (at_punct(",")) {
        lex_.take();
        continue;
      }
      break;
    }
    expect_punct(";");
  }

  // ---- module -------------------------------------------------------------

  void parse_module() {
    lex_.take();  // module
    Token name = expect_ident();
    if (out_.modules.count(name.text)) throw DuplicateDeclaration(name.text);
    Module m;
    m.name = name.text;
    out_.modules[name.text] = std::move(m);
    out_.module_order.push_back(name.text);
    mod_ = &out_.modules[name.text];
    port_decl_merged_.clear();

    if (at_punct("#")) {  // #(parameter ...) header
      lex_.take();
      expect_punct("(");
      while (!at_punct(")")) {
        if (at_kw("parameter")) parse_param_decl(false);
        else lex_.take();
        if (at_punct(",")) lex_.take();
      }
      expect_punct(")");
    }
    if (at_punct("(")) {
      lex_.take();
      bool ansi = at_kw("input") || at_kw("output") || at_kw("inout");
      if (ansi) {
        while (!at_punct(")")) {
          if (at_kw("input") || at_kw("output") || at_kw("inout")) {
            Port::Dir dir = dir_of(lex_.take().text);
            parse_port_decl_body(dir, /*ansi_single=*/true);
            last_ansi_dir_ = dir;
          } else if (lex_.peek().kind == Token::Ident) {
            // `input a, b` continuation reuses the previous direction
            parse_port_decl_body(last_ansi_dir_, /*ansi_single=*/true);
          } else {
            lex_.take();
          }
          if (at_punct(",")) lex_.take();
        }
      } else {
        while (!at_punct(")")) {
          if (lex_.peek().kind == Token::Ident)
            mod_->ports.push_back(Port{Port::In, lex_.take().text, 1});
          else
            lex_.take();
          if (at_punct(",")) lex_.take();
        }
      }
      expect_punct(")");
    }
    expect_punct(";");

    while (!at_kw("endmodule")) {
      if (lex_.peek().kind == Token::End) fail(lex_.peek(), "missing endmodule");
      parse_module_item();
    }
    lex_.take();  // endmodule
    mod_ = nullptr;
  }

  void parse_module_item() {
    const Token& t = lex_.peek();
    if (t.kind != Token::Ident) {
      Token bad = lex_.take();
      diag(bad, "skipped unexpected token: " + bad.text);
      return;
    }
    const std::string& kw = t.text;
    if (kw == "parameter" || kw == "localparam") {
      parse_param_decl(true);
    } else if (kw == "input" || kw == "output" || kw == "inout") {
      Port::Dir dir = dir_of(lex_.take().text);
      parse_port_decl_body(dir, /*ansi_single=*/false);
      expect_punct(";");
    } else if (kw == "wire" || kw == "reg" || kw == "integer") {
      parse_net_decl();
    } else if (kw == "assign") {
      lex_.take();
      while (true) {
        auto [lhs_name, lhs_text] = parse_lvalue();
        expect_punct("=");
        ExprPtr rhs = parse_expr();
        mod_->assigns.push_back(ContAssign{lhs_name, lhs_text, std::move(rhs)});
        if (at_punct(",")) {
          lex_.take();
          continue;
        }
        break;
      }
      expect_punct(";");
    } else if (kw == "always") {
      parse_always();
    } else if (kw == "initial") {
      Token at = lex_.take();
      diag(at, "initial block outside subset; recorded opaque");
      if (opt_.strict) fail(at, "initial block not in the supported subset");
      skip_statement();
    } else if (kw == "generate") {
      Token at = lex_.take();
      diag(at, "generate block outside subset; recorded opaque");
      if (opt_.strict) fail(at, "generate not in the supported subset");
      int depth = 1;
      while (depth > 0 && lex_.peek().kind != Token::End) {
        Token u = lex_.take();
        if (u.kind == Token::Ident && u.text == "generate") ++depth;
        if (u.kind == Token::Ident && u.text == "endgenerate") --depth;
      }
    } else if (kw == "function" || kw == "task") {
      Token at = lex_.take();
      std::string end_kw = kw == "function" ? "endfunction" : "endtask";
      diag(at, kw + " outside subset; recorded opaque");
      if (opt_.strict) fail(at, kw + " not in the supported subset");
      while (lex_.peek().kind != Token::End &&
             !(lex_.peek().kind == Token::Ident && lex_.peek().text == end_kw))
        lex_.take();
      if (lex_.peek().kind != Token::End) lex_.take();
    } else {
      parse_instance();
    }
  }

  void parse_always() {
    lex_.take();  // always
    AlwaysBlock blk;
    if (at_punct("@")) {
      lex_.take();
      if (at_punct("*")) {
        lex_.take();
        blk.sensitivity.push_back(SensitivityEntry{SensitivityEntry::None, ""});
      } else {
        expect_punct("(");
        if (at_punct("*")) {
          lex_.take();
          blk.sensitivity.push_back(SensitivityEntry{SensitivityEntry::None, ""});
        } else {
          while (!at_punct(")")) {
            SensitivityEntry e;
            if (at_kw("posedge")) {
              lex_.take();
              e.edge = SensitivityEntry::Pos;
            } else if (at_kw("negedge")) {
              lex_.take();
              e.edge = SensitivityEntry::Neg;
            }
            e.signal = expect_ident().text;
            blk.sensitivity.push_back(e);
            if (at_punct(",")) lex_.take();
            else if (at_kw("or")) lex_.take();
          }
        }
        if (at_punct(")")) lex_.take();
      }
    }
    blk.body.push_back(parse_statement());
    mod_->always_blocks.push_back(std::move(blk));
  }

  StmtPtr parse_statement() {
    if (at_kw("begin")) {
      lex_.take();
      if (at_punct(":")) {  // named block
        lex_.take();
        expect_ident();
      }
      auto s = std::make_unique<Stmt>(Stmt::Block);
      while (!at_kw("end")) {
        if (lex_.peek().kind == Token::End) fail(lex_.peek(), "missing end");
        s->body.push_back(parse_statement());
      }
      lex_.take();
      return s;
    }
    if (at_kw("if")) {
      lex_.take();
      auto s = std::make_unique<Stmt>(Stmt::If);
      expect_punct("(");
      s->cond = parse_expr();
      expect_punct(")");
      s->then_body.push_back(parse_statement());
      if (at_kw("else")) {
        lex_.take();
        s->else_body.push_back(parse_statement());
      }
      return s;
    }
    if (at_kw("case") || at_kw("casez") || at_kw("casex")) {
      auto s = std::make_unique<Stmt>(Stmt::Case);
      s->case_kind = lex_.take().text;
      expect_punct("(");
      s->subject = parse_expr();
      expect_punct(")");
      while (!at_kw("endcase")) {
        if (lex_.peek().kind == Token::End) fail(lex_.peek(), "missing endcase");
        CaseItem item;
        if (at_kw("default")) {
          lex_.take();
          if (at_punct(":")) lex_.take();
        } else {
          while (true) {
            item.labels.push_back(parse_expr());
            if (at_punct(",")) {
              lex_.take();
              continue;
            }
            break;
          }
          expect_punct(":");
        }
        item.body.push_back(parse_statement());
        s->items.push_back(std::move(item));
      }
      lex_.take();
      return s;
    }
    if (at_punct(";")) {
      lex_.take();
      return std::make_unique<Stmt>(Stmt::Block);
    }
    if (at_punct("#")) {  // delay control: skip `#num` then parse the statement
      lex_.take();
      if (lex_.peek().kind == Token::Number) lex_.take();
      return parse_statement();
    }
    if (at_kw("for") || at_kw("while") || at_kw("repeat") || at_kw("forever")) {
      Token at = lex_.take();
      diag(at, at.text + " loop outside subset; recorded opaque");
      if (opt_.strict) fail(at, at.text + " not in the supported subset");
      if (at_punct("(")) skip_balanced("(", ")");
      skip_statement();
      auto s = std::make_unique<Stmt>(Stmt::Opaque);
      s->note = at.text + " loop";
      return s;
    }
    if (lex_.peek().kind == Token::Ident || at_punct("{")) {
      auto s = std::make_unique<Stmt>(Stmt::Assign);
      auto [lhs_name, lhs_text] = parse_lvalue();
      s->lhs_name = lhs_name;
      s->lhs_text = lhs_text;
      if (at_punct("<=")) {
        lex_.take();
        s->non_blocking = true;
      } else {
        expect_punct("=");
      }
      if (at_punct("#")) {
        lex_.take();
        if (lex_.peek().kind == Token::Number) lex_.take();
      }
      s->rhs = parse_expr();
      expect_punct(";");
      return s;
    }
    Token bad = lex_.take();
    diag(bad, "skipped unsupported statement token: " + bad.text);
    auto s = std::make_unique<Stmt>(Stmt::Opaque);
    s->note = "unsupported token " + bad.text;
    return s;
  }

  void skip_balanced(const char* open, const char* close) {
    expect_punct(open);
    int depth = 1;
    while (depth > 0 && lex_.peek().kind != Token::End) {
      if (at_punct(open)) ++depth;
      if (at_punct(close)) --depth;
      lex_.take();
    }
  }

  void skip_statement() {
    if (at_kw("begin")) {
      lex_.take();
      int depth = 1;
      while (depth > 0 && lex_.peek().kind != Token::End) {
        if (at_kw("begin")) ++depth;
        if (at_kw("end")) --depth;
        lex_.take();
      }
      return;
    }
    while (lex_.peek().kind != Token::End && !at_punct(";")) lex_.take();
    if (at_punct(";")) lex_.take();
  }

  // lvalue: IDENT select? | { lvalue, lvalue } (concat target keeps first name)
  std::pair<std::string, std::string> parse_lvalue() {
    if (at_punct("{")) {
      size_t start = lex_.peek().offset;
      lex_.take();
      std::string first;
      while (!at_punct("}")) {
        Token t = lex_.take();
        if (t.kind == Token::Ident && first.empty()) first = t.text;
        if (t.kind == Token::End) fail(t, "unterminated concatenation target");
      }
      Token close = lex_.take();
      std::string text(lex_.source().substr(start, close.offset + 1 - start));
      return {first, text};
    }
    Token name = expect_ident();
    std::string text = name.text;
    while (at_punct("[")) {
      size_t start = lex_.peek().offset;
      skip_balanced("[", "]");
      // recover the select text verbatim
      size_t end = lex_.peek().offset;
      text += std::string(lex_.source().substr(start, end - start));
      while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
    }
    return {name.text, text};
  }

  // ---- instances ----------------------------------------------------------

  void parse_instance() {
    Token mod_name = expect_ident();
    Instance inst;
    inst.module_name = mod_name.text;
    if (at_punct("#")) {
      lex_.take();
      skip_balanced("(", ")");  // parameter overrides are out of the traced model
      diag(mod_name, "parameter override on instance of " + mod_name.text + " ignored");
    }
    Token inst_name = expect_ident();
    inst.instance_name = inst_name.text;
    expect_punct("(");
    if (at_punct(".")) {
      while (at_punct(".")) {
        lex_.take();
        Token port = expect_ident();
        expect_punct("(");
        Connection c;
        c.port = port.text;
        if (!at_punct(")")) c.expr = parse_expr();
        expect_punct(")");
        inst.connections.push_back(std::move(c));
        if (at_punct(",")) lex_.take();
      }
    } else if (!at_punct(")")) {
      inst.positional = true;
      while (true) {
        Connection c;
        if (!at_punct(",") && !at_punct(")")) c.expr = parse_expr();
        inst.connections.push_back(std::move(c));
        if (at_punct(",")) {
          lex_.take();
          continue;
        }
        break;
      }
    }
    expect_punct(")");
    expect_punct(";");
    mod_->instances.push_back(std::move(inst));
  }

  // ---- expressions --------------------------------------------------------

  ExprPtr parse_expr() { return parse_ternary(); }

  ExprPtr finish(ExprPtr e, size_t start) {
    size_t end = lex_.peek().offset;
    std::string_view span = lex_.source().substr(start, end - start);
    while (!span.empty() && std::isspace(static_cast<unsigned char>(span.back())))
      span.remove_suffix(1);
    e->src = std::string(span);
    return e;
  }

  ExprPtr parse_ternary() {
    size_t start = lex_.peek().offset;
    ExprPtr cond = parse_binary(0);
    if (!at_punct("?")) return cond;
    lex_.take();
    auto e = std::make_unique<Expr>(Expr::Ternary);
    e->args.push_back(std::move(cond));
    e->args.push_back(parse_ternary());
    expect_punct(":");
    e->args.push_back(parse_ternary());
    return finish(std::move(e), start);
  }

  static int precedence_of(const std::string& op) {
    if (op == "||") return 1;
    if (op == "&&") return 2;
    if (op == "|") return 3;
    if (op == "^" || op == "~^" || op == "^~") return 4;
    if (op == "&") return 5;
    if (op == "==" || op == "!=" || op == "===" || op == "!==") return 6;
    if (op == "<" || op == "<=" || op == ">" || op == ">=") return 7;
    if (op == "<<" || op == ">>" || op == "<<<" || op == ">>>") return 8;
    if (op == "+" || op == "-") return 9;
    if (op == "*" || op == "/" || op == "%") return 10;
    if (op == "**") return 11;
    return -1;
  }

  ExprPtr parse_binary(int min_prec) {
    size_t start = lex_.peek().offset;
    ExprPtr lhs = parse_unary();
    while (lex_.peek().kind == Token::Punct) {
      int prec = precedence_of(lex_.peek().text);
      if (prec < 0 || prec < min_prec) break;
      std::string op = lex_.take().text;
      ExprPtr rhs = parse_binary(prec + 1);
      auto e = std::make_unique<Expr>(Expr::Binary);
      e->text = op;
      e->args.push_back(std::move(lhs));
      e->args.push_back(std::move(rhs));
      lhs = finish(std::move(e), start);
    }
    return lhs;
  }

  ExprPtr parse_unary() {
    size_t start = lex_.peek().offset;
    if (lex_.peek().kind == Token::Punct) {
      const std::string& t = lex_.peek().text;
      if (t == "~" || t == "!" || t == "-" || t == "+" || t == "&" || t == "|" || t == "^" ||
          t == "~&" || t == "~|" || t == "~^") {
        auto e = std::make_unique<Expr>(Expr::Unary);
        e->text = lex_.take().text;
        e->args.push_back(parse_unary());
        return finish(std::move(e), start);
      }
    }
    return parse_primary();
  }

  ExprPtr parse_primary() {
    size_t start = lex_.peek().offset;
    if (at_punct("(")) {
      lex_.take();
      ExprPtr inner = parse_expr();
      expect_punct(")");
      return finish(std::move(inner), start);
    }
    if (at_punct("{")) {
      lex_.take();
      auto first = parse_expr();
      if (at_punct("{")) {  // replication {N{expr}}
        lex_.take();
        auto e = std::make_unique<Expr>(Expr::Replicate);
        e->args.push_back(std::move(first));
        e->args.push_back(parse_expr());
        while (at_punct(",")) {
          lex_.take();
          e->args.push_back(parse_expr());
        }
        expect_punct("}");
        expect_punct("}");
        return finish(std::move(e), start);
      }
      auto e = std::make_unique<Expr>(Expr::Concat);
      e->args.push_back(std::move(first));
      while (at_punct(",")) {
        lex_.take();
        e->args.push_back(parse_expr());
      }
      expect_punct("}");
      return finish(std::move(e), start);
    }
    if (lex_.peek().kind == Token::Number) {
      auto e = std::make_unique<Expr>(Expr::Literal);
      e->text = lex_.take().text;
      e->src = e->text;
      return e;
    }
    if (lex_.peek().kind == Token::String) {
      auto e = std::make_unique<Expr>(Expr::Literal);
      e->text = lex_.take().text;
      e->src = e->text;
      return e;
    }
    if (lex_.peek().kind == Token::Ident) {
      Token name = lex_.take();
      if (at_punct("(")) {
        // function/system call: outside subset; keep arguments for fan-in
        diag(name, "call to " + name.text + " treated as opaque expression");
        auto e = std::make_unique<Expr>(Expr::Opaque);
        e->text = name.text;
        lex_.take();
        if (!at_punct(")")) {
          e->args.push_back(parse_expr());
          while (at_punct(",")) {
            lex_.take();
            e->args.push_back(parse_expr());
          }
        }
        expect_punct(")");
        return finish(std::move(e), start);
      }
      if (at_punct("[")) {
        auto e = std::make_unique<Expr>(Expr::Select);
        e->text = name.text;
        while (at_punct("[")) {
          lex_.take();
          e->args.push_back(parse_expr());
          if (at_punct(":") || at_punct("+:") || at_punct("-:")) {
            lex_.take();
            e->args.push_back(parse_expr());
          }
          expect_punct("]");
        }
        return finish(std::move(e), start);
      }
      auto e = std::make_unique<Expr>(Expr::Ident);
      e->text = name.text;
      e->src = e->text;
      return e;
    }
    Token bad = lex_.take();
    fail(bad, "expected expression, found '" + bad.text + "'");
  }

  // `output [3:0] b; reg [3:0] b;` is one signal declared twice by design:
  // the second mention of a listed port merges rather than collides, once.
  void declare_net(const Token& at, const std::string& name, unsigned width, bool is_reg,
                   bool merging_port_ok) {
    auto it = mod_->nets.find(name);
    if (it != mod_->nets.end()) {
      if (merging_port_ok && mod_->find_port(name) && !port_decl_merged_.count(name)) {
        port_decl_merged_.insert(name);
        it->second.is_reg = it->second.is_reg || is_reg;
        if (width > 1 && it->second.width == 1) it->second.width = width;
        return;
      }
      throw DuplicateDeclaration(mod_->name + "." + name);
    }
    (void)at;
    mod_->nets[name] = Net{name, width, is_reg};
  }

  Lexer lex_;
  ParseOptions opt_;
  DesignAST& out_;
  Module* mod_ = nullptr;
  Port::Dir last_ansi_dir_ = Port::In;
  std::set<std::string> port_decl_merged_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Linking and validation
// ---------------------------------------------------------------------------

namespace detail {

inline void check_expr_symbols(const Expr& e, Module& m, DesignAST& design, bool strict,
                               const std::string& file) {
  for (const auto& id : identifiers_of(e)) {
    if (m.nets.count(id) || m.params.count(id)) continue;
    if (strict)
      throw SyntaxError(file, 0, 0, "undeclared identifier '" + id + "' in module " + m.name);
    m.nets[id] = Net{id, 1, false};  // implicit wire
    Diagnostic d{file, 0, 0, "implicit wire '" + id + "' in module " + m.name};
    m.diagnostics.push_back(d);
    design.diagnostics.push_back(d);
  }
}

inline void check_stmt_symbols(const Stmt& s, Module& m, DesignAST& design, bool strict,
                               const std::string& file) {
  switch (s.kind) {
    case Stmt::Assign:
      if (!s.lhs_name.empty() && !m.nets.count(s.lhs_name) && !m.params.count(s.lhs_name)) {
        if (strict)
          throw SyntaxError(file, 0, 0,
                            "undeclared identifier '" + s.lhs_name + "' in module " + m.name);
        m.nets[s.lhs_name] = Net{s.lhs_name, 1, true};
        Diagnostic d{file, 0, 0, "implicit reg '" + s.lhs_name + "' in module " + m.name};
        m.diagnostics.push_back(d);
        design.diagnostics.push_back(d);
      }
      if (s.rhs) check_expr_symbols(*s.rhs, m, design, strict, file);
      break;
    case Stmt::If:
      if (s.cond) check_expr_symbols(*s.cond, m, design, strict, file);
      for (const auto& c : s.then_body) check_stmt_symbols(*c, m, design, strict, file);
      for (const auto& c : s.else_body) check_stmt_symbols(*c, m, design, strict, file);
      break;
    case Stmt::Case:
      if (s.subject) check_expr_symbols(*s.subject, m, design, strict, file);
      for (const auto& item : s.items) {
        for (const auto& l : item.labels) check_expr_symbols(*l, m, design, strict, file);
        for (const auto& c : item.body) check_stmt_symbols(*c, m, design, strict, file);
      }
      break;
    case Stmt::Block:
      for (const auto& c : s.body) check_stmt_symbols(*c, m, design, strict, file);
      break;
    case Stmt::Opaque:
      break;
  }
}

}  // namespace detail

struct SourceFile {
  std::string name;
  std::string text;
};

/// Parse sources, resolve positional connections against child port order,
/// validate symbols, and detect the top module (the unique module never
/// instantiated; first by declaration order on a tie).
inline DesignAST parse_rtl(const std::vector<SourceFile>& sources, const ParseOptions& opt = {}) {
  DesignAST design;
  for (const auto& src : sources) {
    detail::Parser p(src.text, src.name, opt, design);
    p.parse_source();
  }

  // symbol validation / implicit declaration
  for (auto& [name, m] : design.modules) {
    for (auto& a : m.assigns) {
      if (!m.nets.count(a.lhs_name) && !m.params.count(a.lhs_name)) {
        if (opt.strict)
          throw SyntaxError("", 0, 0, "undeclared identifier '" + a.lhs_name + "' in module " + name);
        m.nets[a.lhs_name] = Net{a.lhs_name, 1, false};
        design.diagnostics.push_back({"", 0, 0, "implicit wire '" + a.lhs_name + "' in module " + name});
      }
      detail::check_expr_symbols(*a.rhs, m, design, opt.strict, "");
    }
    for (auto& blk : m.always_blocks) {
      for (auto& e : blk.sensitivity)
        if (!e.signal.empty() && !m.nets.count(e.signal)) {
          if (opt.strict)
            throw SyntaxError("", 0, 0,
                              "undeclared identifier '" + e.signal + "' in module " + name);
          m.nets[e.signal] = Net{e.signal, 1, false};
        }
      for (auto& s : blk.body) detail::check_stmt_symbols(*s, m, design, opt.strict, "");
    }
    for (auto& inst : m.instances)
      for (auto& c : inst.connections)
        if (c.expr) detail::check_expr_symbols(*c.expr, m, design, opt.strict, "");
  }

  // instance resolution + positional linking
  std::set<std::string> instantiated;
  for (auto& [name, m] : design.modules) {
    for (auto& inst : m.instances) {
      auto child = design.modules.find(inst.module_name);
      if (child == design.modules.end()) {
        if (opt.strict) throw UnresolvedModule(inst.module_name);
        bool known = false;
        for (const auto& e : design.external_modules)
          if (e == inst.module_name) known = true;
        if (!known) {
          design.external_modules.push_back(inst.module_name);
          design.diagnostics.push_back(
              {"", 0, 0, "module " + inst.module_name + " is external (not defined)"});
        }
        continue;
      }
      instantiated.insert(inst.module_name);
      if (inst.positional) {
        const auto& ports = child->second.ports;
        for (size_t i = 0; i < inst.connections.size(); ++i) {
          if (i < ports.size()) inst.connections[i].port = ports[i].name;
          else
            design.diagnostics.push_back({"", 0, 0,
                                          "extra positional connection on instance " +
                                              inst.instance_name + " of " + inst.module_name});
        }
      }
    }
  }

  // top detection
  if (!opt.top_override.empty()) {
    if (!design.modules.count(opt.top_override))
      throw UnresolvedModule(opt.top_override);
    design.top = opt.top_override;
  } else {
    for (const auto& name : design.module_order)
      if (!instantiated.count(name)) {
        design.top = name;
        break;
      }
    if (design.top.empty() && !design.module_order.empty()) design.top = design.module_order[0];
  }
  return design;
}

inline DesignAST parse_rtl(const std::string& text, const ParseOptions& opt = {}) {
  return parse_rtl(std::vector<SourceFile>{{"<memory>", text}}, opt);
}

}  // namespace rarecov::rtl
