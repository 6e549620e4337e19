#pragma once

// Python-literal values as printed by repr(): the corpus dumps database
// records and dialogue-act slot lists in this notation, and the wire format
// carries them verbatim.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace todflow::py {

class LiteralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Value;
using List = std::vector<Value>;
using Dict = std::vector<std::pair<std::string, Value>>;

class Value {
 public:
  Value() : data_(std::monostate{}) {}
  Value(std::string s) : data_(std::move(s)) {}          // NOLINT
  Value(const char* s) : data_(std::string(s)) {}        // NOLINT
  Value(std::int64_t i) : data_(i) {}                    // NOLINT
  Value(int i) : data_(static_cast<std::int64_t>(i)) {}  // NOLINT
  Value(List l) : data_(std::move(l)) {}                 // NOLINT
  Value(Dict d) : data_(std::move(d)) {}                 // NOLINT

  bool is_none() const { return std::holds_alternative<std::monostate>(data_); }
  bool is_string() const { return std::holds_alternative<std::string>(data_); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(data_); }
  bool is_list() const { return std::holds_alternative<List>(data_); }
  bool is_dict() const { return std::holds_alternative<Dict>(data_); }

  const std::string& as_string() const;
  std::int64_t as_int() const;
  const List& as_list() const;
  const Dict& as_dict() const;

  // Dict lookup; nullptr when absent or not a dict.
  const Value* find(std::string_view key) const;

  bool operator==(const Value& other) const { return data_ == other.data_; }

 private:
  std::variant<std::monostate, std::string, std::int64_t, List, Dict> data_;
};

std::string repr(const Value& v);
std::string repr_string(std::string_view s);

Value parse(std::string_view text);
// A bare top-level sequence "a, b, c" (a tuple without parentheses).
List parse_sequence(std::string_view text);

}  // namespace todflow::py
