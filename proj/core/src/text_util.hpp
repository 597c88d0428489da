#pragma once

// Internal helpers shared by the line-oriented text formats (SOF, rtab,
// registry manifest). Not installed.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stablelink::text {

std::string hex_u64(uint64_t value);        // "0x1f" (minimal width)
std::string hex_i64(int64_t value);         // "0x8" / "-0x8"
std::string hex_uuid(uint64_t value);       // 16 zero-padded chars, no 0x

bool parse_u64(std::string_view token, uint64_t& out);  // decimal or 0x hex
bool parse_i64(std::string_view token, int64_t& out);   // optional leading '-'

// Splits on single spaces; empty tokens are not produced.
std::vector<std::string_view> split_fields(std::string_view line);
void split_fields_into(std::string_view line, std::vector<std::string_view>& out);

// Walks a buffer line by line, tracking 1-based line numbers. Lines must be
// separated by '\n'; a missing final newline is accepted.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  // Returns false at end of input.
  bool next(std::string_view& line);
  size_t line_number() const { return line_number_; }

 private:
  std::string_view text_;
  size_t pos_ = 0;
  size_t line_number_ = 0;
};

// "key: value" (value may be empty, written as "key:"). Returns false when
// the line does not have that shape.
bool split_key_value(std::string_view line, std::string_view& key,
                     std::string_view& value);

}  // namespace stablelink::text
