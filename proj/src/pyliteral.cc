#include "todflow/pyliteral.h"

#include <cctype>
#include <charconv>

namespace todflow::py {

const std::string& Value::as_string() const {
  if (!is_string()) throw LiteralError("literal is not a string");
  return std::get<std::string>(data_);
}

std::int64_t Value::as_int() const {
  if (!is_int()) throw LiteralError("literal is not an integer");
  return std::get<std::int64_t>(data_);
}

const List& Value::as_list() const {
  if (!is_list()) throw LiteralError("literal is not a list");
  return std::get<List>(data_);
}

const Dict& Value::as_dict() const {
  if (!is_dict()) throw LiteralError("literal is not a dict");
  return std::get<Dict>(data_);
}

const Value* Value::find(std::string_view key) const {
  if (!is_dict()) return nullptr;
  for (const auto& [k, v] : std::get<Dict>(data_))
    if (k == key) return &v;
  return nullptr;
}

std::string repr_string(std::string_view s) {
  bool has_single = s.find('\'') != std::string_view::npos;
  bool has_double = s.find('"') != std::string_view::npos;
  char q = (has_single && !has_double) ? '"' : '\'';
  std::string out(1, q);
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c == q) out += '\\';
        out += c;
    }
  }
  out += q;
  return out;
}

std::string repr(const Value& v) {
  if (v.is_none()) return "None";
  if (v.is_string()) return repr_string(v.as_string());
  if (v.is_int()) return std::to_string(v.as_int());
  std::string out;
  if (v.is_list()) {
    out += '[';
    const auto& l = v.as_list();
    for (size_t i = 0; i < l.size(); ++i) {
      if (i) out += ", ";
      out += repr(l[i]);
    }
    out += ']';
    return out;
  }
  out += '{';
  const auto& d = v.as_dict();
  for (size_t i = 0; i < d.size(); ++i) {
    if (i) out += ", ";
    out += repr_string(d[i].first);
    out += ": ";
    out += repr(d[i].second);
  }
  out += '}';
  return out;
}

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  Value value() {
    skip_ws();
    if (eof()) fail("unexpected end of literal");
    char c = s_[pos_];
    if (c == '\'' || c == '"') return Value(string());
    if (c == '[') return list();
    if (c == '{') return dict();
    if (c == '-' || std::isdigit(static_cast<unsigned char>(c))) return integer();
    if (s_.substr(pos_, 4) == "None") {
      pos_ += 4;
      return Value();
    }
    fail("unexpected character");
  }

  List sequence() {
    List out;
    skip_ws();
    if (eof()) return out;
    while (true) {
      out.push_back(value());
      skip_ws();
      if (eof()) break;
      expect(',');
    }
    return out;
  }

  void finish() {
    skip_ws();
    if (!eof()) fail("trailing characters");
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw LiteralError(what + " at offset " + std::to_string(pos_) + " in '" + std::string(s_) + "'");
  }

  bool eof() const { return pos_ >= s_.size(); }

  void skip_ws() {
    while (!eof() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  void expect(char c) {
    skip_ws();
    if (eof() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string string() {
    char q = s_[pos_++];
    std::string out;
    while (true) {
      if (eof()) fail("unterminated string");
      char c = s_[pos_++];
      if (c == q) break;
      if (c == '\\') {
        if (eof()) fail("dangling escape");
        char e = s_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          default: out += e;
        }
      } else {
        out += c;
      }
    }
    return out;
  }

  Value integer() {
    size_t start = pos_;
    if (s_[pos_] == '-') ++pos_;
    while (!eof() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, v);
    if (ec != std::errc() || ptr != s_.data() + pos_) fail("bad integer");
    return Value(v);
  }

  Value list() {
    ++pos_;
    List out;
    skip_ws();
    if (!eof() && s_[pos_] == ']') {
      ++pos_;
      return Value(std::move(out));
    }
    while (true) {
      out.push_back(value());
      skip_ws();
      if (!eof() && s_[pos_] == ']') {
        ++pos_;
        break;
      }
      expect(',');
    }
    return Value(std::move(out));
  }

  Value dict() {
    ++pos_;
    Dict out;
    skip_ws();
    if (!eof() && s_[pos_] == '}') {
      ++pos_;
      return Value(std::move(out));
    }
    while (true) {
      skip_ws();
      if (eof() || (s_[pos_] != '\'' && s_[pos_] != '"')) fail("dict key must be a string");
      std::string key = string();
      expect(':');
      out.emplace_back(std::move(key), value());
      skip_ws();
      if (!eof() && s_[pos_] == '}') {
        ++pos_;
        break;
      }
      expect(',');
    }
    return Value(std::move(out));
  }

  std::string_view s_;
  size_t pos_ = 0;
};

}  // namespace

Value parse(std::string_view text) {
  Parser p(text);
  Value v = p.value();
  p.finish();
  return v;
}

List parse_sequence(std::string_view text) {
  Parser p(text);
  List out = p.sequence();
  p.finish();
  return out;
}

}  // namespace todflow::py
