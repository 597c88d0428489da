#include "text_util.hpp"

#include <limits>

namespace stablelink::text {

namespace {

const char kHexDigits[] = "0123456789abcdef";

}  // namespace

std::string hex_u64(uint64_t value) {
  char buf[16];
  size_t n = 0;
  do {
    buf[n++] = kHexDigits[value & 0xf];
    value >>= 4;
  } while (value != 0);
  std::string out = "0x";
  while (n > 0) out.push_back(buf[--n]);
  return out;
}

std::string hex_i64(int64_t value) {
  // Magnitude form; INT64_MIN has no positive counterpart, so go unsigned.
  if (value < 0) return "-" + hex_u64(~static_cast<uint64_t>(value) + 1);
  return hex_u64(static_cast<uint64_t>(value));
}

std::string hex_uuid(uint64_t value) {
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = kHexDigits[value & 0xf];
    value >>= 4;
  }
  return out;
}

namespace {

bool parse_hex_body(std::string_view body, uint64_t& out) {
  if (body.empty() || body.size() > 16) return false;
  uint64_t v = 0;
  for (char c : body) {
    uint64_t d;
    if (c >= '0' && c <= '9') {
      d = static_cast<uint64_t>(c - '0');
    } else if (c >= 'a' && c <= 'f') {
      d = static_cast<uint64_t>(c - 'a') + 10;
    } else if (c >= 'A' && c <= 'F') {
      d = static_cast<uint64_t>(c - 'A') + 10;
    } else {
      return false;
    }
    v = (v << 4) | d;
  }
  out = v;
  return true;
}

bool parse_dec_body(std::string_view body, uint64_t& out) {
  if (body.empty() || body.size() > 20) return false;
  uint64_t v = 0;
  for (char c : body) {
    if (c < '0' || c > '9') return false;
    uint64_t d = static_cast<uint64_t>(c - '0');
    if (v > (std::numeric_limits<uint64_t>::max() - d) / 10) return false;
    v = v * 10 + d;
  }
  out = v;
  return true;
}

}  // namespace

bool parse_u64(std::string_view token, uint64_t& out) {
  if (token.size() > 2 && token[0] == '0' && (token[1] == 'x' || token[1] == 'X'))
    return parse_hex_body(token.substr(2), out);
  return parse_dec_body(token, out);
}

bool parse_i64(std::string_view token, int64_t& out) {
  bool negative = false;
  if (!token.empty() && token[0] == '-') {
    negative = true;
    token.remove_prefix(1);
  }
  uint64_t magnitude;
  if (!parse_u64(token, magnitude)) return false;
  if (negative) {
    // Magnitude up to 2^63 maps onto [INT64_MIN, 0).
    if (magnitude > static_cast<uint64_t>(1) << 63) return false;
    out = static_cast<int64_t>(~magnitude + 1);
  } else {
    if (magnitude > static_cast<uint64_t>(std::numeric_limits<int64_t>::max()))
      return false;
    out = static_cast<int64_t>(magnitude);
  }
  return true;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  split_fields_into(line, fields);
  return fields;
}

void split_fields_into(std::string_view line, std::vector<std::string_view>& out) {
  out.clear();
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    size_t start = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
}

bool LineReader::next(std::string_view& line) {
  if (pos_ >= text_.size()) return false;
  size_t nl = text_.find('\n', pos_);
  if (nl == std::string_view::npos) {
    line = text_.substr(pos_);
    pos_ = text_.size();
  } else {
    line = text_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
  }
  ++line_number_;
  return true;
}

bool split_key_value(std::string_view line, std::string_view& key,
                     std::string_view& value) {
  size_t colon = line.find(':');
  if (colon == std::string_view::npos || colon == 0) return false;
  key = line.substr(0, colon);
  if (colon + 1 == line.size()) {
    value = std::string_view();
    return true;
  }
  if (line[colon + 1] != ' ') return false;
  value = line.substr(colon + 2);
  return true;
}

}  // namespace stablelink::text
