#include "stablelink/object_model.hpp"

#include <algorithm>
#include <unordered_set>

#include "stablelink/error.hpp"
#include "text_util.hpp"

namespace stablelink {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::Syntax: return "SYNTAX";
    case Errc::Invariant: return "INVARIANT";
    case Errc::AlreadyManaging: return "ALREADY_MANAGING";
    case Errc::NotManaging: return "NOT_MANAGING";
    case Errc::EpochLocked: return "EPOCH_LOCKED";
    case Errc::MissingDependency: return "MISSING_DEPENDENCY";
    case Errc::MaterializationFailed: return "MATERIALIZATION_FAILED";
    case Errc::NotExecutable: return "NOT_EXECUTABLE";
    case Errc::Unresolved: return "UNRESOLVED";
    case Errc::UuidCollision: return "UUID_COLLISION";
    case Errc::UuidMismatch: return "UUID_MISMATCH";
    case Errc::Bounds: return "BOUNDS";
    case Errc::Ambiguous: return "AMBIGUOUS";
    case Errc::Exhausted: return "EXHAUSTED";
    case Errc::StaleTables: return "STALE_TABLES";
    case Errc::SymbolNotExported: return "SYMBOL_NOT_EXPORTED";
    case Errc::NoMatch: return "NO_MATCH";
    case Errc::UnknownObject: return "UNKNOWN_OBJECT";
    case Errc::Corrupt: return "CORRUPT";
    case Errc::Io: return "IO";
  }
  return "UNKNOWN";
}

const char* reloc_type_name(RelocType type) {
  return type == RelocType::Direct ? "DIRECT" : "RELATIVE";
}

bool parse_reloc_type(std::string_view token, RelocType& out) {
  if (token == "DIRECT") {
    out = RelocType::Direct;
    return true;
  }
  if (token == "RELATIVE") {
    out = RelocType::Relative;
    return true;
  }
  return false;
}

const char* object_kind_name(ObjectKind kind) {
  return kind == ObjectKind::Executable ? "EXECUTABLE" : "LIBRARY";
}

bool parse_object_kind(std::string_view token, ObjectKind& out) {
  if (token == "EXECUTABLE") {
    out = ObjectKind::Executable;
    return true;
  }
  if (token == "LIBRARY") {
    out = ObjectKind::Library;
    return true;
  }
  return false;
}

const SymbolDef* SharedObject::find_export(std::string_view symbol) const {
  for (const SymbolDef& def : exports) {
    if (def.name == symbol) return &def;
  }
  return nullptr;
}

std::string ObjectUUID::hex() const { return text::hex_uuid(value); }

bool ObjectUUID::from_hex(std::string_view text, ObjectUUID& out) {
  if (text.size() != 16) return false;
  uint64_t v = 0;
  for (char c : text) {
    uint64_t d;
    if (c >= '0' && c <= '9') {
      d = static_cast<uint64_t>(c - '0');
    } else if (c >= 'a' && c <= 'f') {
      d = static_cast<uint64_t>(c - 'a') + 10;
    } else {
      return false;
    }
    v = (v << 4) | d;
  }
  out.value = v;
  return true;
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t djb2_64(std::string_view bytes) {
  uint64_t h = 5381;
  for (unsigned char c : bytes) h = h * 33 + c;
  return h;
}

uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

bool is_valid_name(std::string_view name) {
  if (name.empty()) return false;
  auto head = [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_' || c == '.';
  };
  auto tail = [&](char c) {
    return head(c) || (c >= '0' && c <= '9') || c == '+' || c == '-';
  };
  if (!head(name[0])) return false;
  for (char c : name.substr(1)) {
    if (!tail(c)) return false;
  }
  return true;
}

namespace {

[[noreturn]] void invariant_error(const std::string& path, const std::string& what) {
  throw Error(Errc::Invariant, path + ": " + what);
}

}  // namespace

void validate(const SharedObject& obj) {
  if (!is_valid_name(obj.name)) invariant_error("name", "invalid object name");
  if (obj.image_size == 0 || obj.image_size % kPageSize != 0)
    invariant_error("image_size", "must be a nonzero multiple of 4096");

  std::unordered_set<std::string_view> seen_needed;
  for (size_t i = 0; i < obj.needed.size(); ++i) {
    const std::string& dep = obj.needed[i];
    std::string path = "needed[" + std::to_string(i) + "]";
    if (!is_valid_name(dep)) invariant_error(path, "invalid object name");
    if (dep == obj.name) invariant_error(path, "object depends on itself");
    if (!seen_needed.insert(dep).second) invariant_error(path, "duplicate entry");
  }

  std::unordered_set<std::string_view> seen_exports;
  for (size_t i = 0; i < obj.exports.size(); ++i) {
    const SymbolDef& def = obj.exports[i];
    std::string path = "exports[" + std::to_string(i) + "]";
    if (!is_valid_name(def.name)) invariant_error(path + ".name", "invalid symbol name");
    if (!seen_exports.insert(def.name).second)
      invariant_error(path + ".name", "duplicate export");
    if (def.st_size > UINT64_MAX - def.st_value)
      invariant_error(path + ".st_size", "st_value + st_size overflows");
    if (def.st_value + def.st_size > obj.image_size)
      invariant_error(path + ".st_size", "symbol extends past image_size");
  }

  std::unordered_set<uint64_t> seen_offsets;
  for (size_t i = 0; i < obj.relocs.size(); ++i) {
    const RelocInstruction& rel = obj.relocs[i];
    std::string path = "relocs[" + std::to_string(i) + "]";
    if (rel.offset % kWordSize != 0)
      invariant_error(path + ".offset", "not 8-aligned (" + text::hex_u64(rel.offset) + ")");
    if (rel.offset > obj.image_size - kWordSize)
      invariant_error(path + ".offset", "relocation slot extends past image_size");
    if (!seen_offsets.insert(rel.offset).second)
      invariant_error(path + ".offset", "duplicate relocation offset");
    if (rel.type == RelocType::Direct) {
      if (!is_valid_name(rel.symbol_name))
        invariant_error(path + ".symbol_name", "DIRECT relocation needs a symbol name");
    } else {
      if (!rel.symbol_name.empty())
        invariant_error(path + ".symbol_name", "RELATIVE relocation carries a symbol name");
    }
  }
}

// ---------------------------------------------------------------------------
// SOF text format. Grammar in docs/FORMATS.md; canonical form is what
// serialize_sof emits and parse_sof(serialize_sof(x)) == x.
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void syntax_error(size_t line, const std::string& what) {
  throw Error(Errc::Syntax, "line " + std::to_string(line) + ": " + what);
}

struct SofParser {
  text::LineReader reader;
  std::string_view line;
  bool line_pending = false;

  explicit SofParser(std::string_view input) : reader(input) {}

  bool fetch() {
    if (line_pending) return true;
    while (reader.next(line)) {
      std::string_view body = line;
      size_t i = 0;
      while (i < body.size() && body[i] == ' ') ++i;
      if (i == body.size()) continue;             // blank
      if (body[i] == '#') continue;               // comment
      line_pending = true;
      return true;
    }
    return false;
  }

  void consume() { line_pending = false; }

  size_t lineno() const { return reader.line_number(); }

  static size_t indent_of(std::string_view l) {
    size_t i = 0;
    while (i < l.size() && l[i] == ' ') ++i;
    return i;
  }
};

uint64_t require_u64(std::string_view token, size_t line, const char* what) {
  uint64_t v;
  if (token.empty()) syntax_error(line, std::string(what) + ": missing integer");
  if (token[0] == '-') syntax_error(line, std::string(what) + ": must be non-negative");
  if (!text::parse_u64(token, v))
    syntax_error(line, std::string(what) + ": bad integer '" + std::string(token) + "'");
  return v;
}

int64_t require_i64(std::string_view token, size_t line, const char* what) {
  int64_t v;
  if (!text::parse_i64(token, v))
    syntax_error(line, std::string(what) + ": bad integer '" + std::string(token) + "'");
  return v;
}

}  // namespace

SharedObject parse_sof(std::string_view input) {
  SofParser p(input);
  SharedObject obj;
  obj.image_size = 0;

  bool saw_name = false, saw_kind = false, saw_image = false;
  bool saw_needed = false, saw_exports = false, saw_relocs = false;

  while (p.fetch()) {
    if (SofParser::indent_of(p.line) != 0)
      syntax_error(p.lineno(), "expected a top-level key");
    std::string_view key, value;
    if (!text::split_key_value(p.line, key, value))
      syntax_error(p.lineno(), "expected 'key: value'");
    p.consume();

    if (key == "name") {
      if (saw_name) syntax_error(p.lineno(), "duplicate key 'name'");
      saw_name = true;
      obj.name = std::string(value);
    } else if (key == "kind") {
      if (saw_kind) syntax_error(p.lineno(), "duplicate key 'kind'");
      saw_kind = true;
      if (!parse_object_kind(value, obj.kind))
        syntax_error(p.lineno(), "kind must be EXECUTABLE or LIBRARY");
    } else if (key == "image_size") {
      if (saw_image) syntax_error(p.lineno(), "duplicate key 'image_size'");
      saw_image = true;
      obj.image_size = require_u64(value, p.lineno(), "image_size");
    } else if (key == "needed") {
      if (saw_needed) syntax_error(p.lineno(), "duplicate key 'needed'");
      saw_needed = true;
      if (!value.empty()) syntax_error(p.lineno(), "'needed' takes a list, not a value");
      while (p.fetch() && p.line.rfind("  - ", 0) == 0) {
        obj.needed.emplace_back(p.line.substr(4));
        p.consume();
      }
    } else if (key == "exports") {
      if (saw_exports) syntax_error(p.lineno(), "duplicate key 'exports'");
      saw_exports = true;
      if (!value.empty()) syntax_error(p.lineno(), "'exports' takes a list, not a value");
      while (p.fetch() && p.line.rfind("  - ", 0) == 0) {
        SymbolDef def;
        bool got_name = false, got_value = false, got_size = false;
        std::string_view first = p.line.substr(4);
        size_t item_line = p.lineno();
        p.consume();
        auto apply = [&](std::string_view fline, size_t ln) {
          std::string_view k, v;
          if (!text::split_key_value(fline, k, v))
            syntax_error(ln, "expected 'field: value' in export entry");
          if (k == "name") {
            if (got_name) syntax_error(ln, "duplicate field 'name'");
            got_name = true;
            def.name = std::string(v);
          } else if (k == "st_value") {
            if (got_value) syntax_error(ln, "duplicate field 'st_value'");
            got_value = true;
            def.st_value = require_u64(v, ln, "st_value");
          } else if (k == "st_size") {
            if (got_size) syntax_error(ln, "duplicate field 'st_size'");
            got_size = true;
            def.st_size = require_u64(v, ln, "st_size");
          } else {
            syntax_error(ln, "unknown export field '" + std::string(k) + "'");
          }
        };
        apply(first, item_line);
        while (p.fetch() && p.line.rfind("    ", 0) == 0 && p.line.rfind("  - ", 0) != 0) {
          apply(p.line.substr(4), p.lineno());
          p.consume();
        }
        if (!got_name || !got_value || !got_size)
          syntax_error(item_line, "export entry needs name, st_value and st_size");
        obj.exports.push_back(std::move(def));
      }
    } else if (key == "relocs") {
      if (saw_relocs) syntax_error(p.lineno(), "duplicate key 'relocs'");
      saw_relocs = true;
      if (!value.empty()) syntax_error(p.lineno(), "'relocs' takes a list, not a value");
      while (p.fetch() && p.line.rfind("  - ", 0) == 0) {
        RelocInstruction rel;
        bool got_type = false, got_offset = false, got_addend = false, got_symbol = false;
        std::string_view first = p.line.substr(4);
        size_t item_line = p.lineno();
        p.consume();
        auto apply = [&](std::string_view fline, size_t ln) {
          std::string_view k, v;
          if (!text::split_key_value(fline, k, v))
            syntax_error(ln, "expected 'field: value' in reloc entry");
          if (k == "type") {
            if (got_type) syntax_error(ln, "duplicate field 'type'");
            got_type = true;
            if (!parse_reloc_type(v, rel.type))
              syntax_error(ln, "type must be DIRECT or RELATIVE");
          } else if (k == "offset") {
            if (got_offset) syntax_error(ln, "duplicate field 'offset'");
            got_offset = true;
            rel.offset = require_u64(v, ln, "offset");
          } else if (k == "addend") {
            if (got_addend) syntax_error(ln, "duplicate field 'addend'");
            got_addend = true;
            rel.addend = require_i64(v, ln, "addend");
          } else if (k == "symbol_name") {
            if (got_symbol) syntax_error(ln, "duplicate field 'symbol_name'");
            got_symbol = true;
            rel.symbol_name = std::string(v);
          } else {
            syntax_error(ln, "unknown reloc field '" + std::string(k) + "'");
          }
        };
        apply(first, item_line);
        while (p.fetch() && p.line.rfind("    ", 0) == 0 && p.line.rfind("  - ", 0) != 0) {
          apply(p.line.substr(4), p.lineno());
          p.consume();
        }
        if (!got_type || !got_offset || !got_addend)
          syntax_error(item_line, "reloc entry needs type, offset and addend");
        obj.relocs.push_back(std::move(rel));
      }
    } else {
      syntax_error(p.lineno(), "unknown key '" + std::string(key) + "'");
    }
  }

  if (!saw_name) throw Error(Errc::Syntax, "missing required key 'name'");
  if (!saw_kind) throw Error(Errc::Syntax, "missing required key 'kind'");
  if (!saw_image) throw Error(Errc::Syntax, "missing required key 'image_size'");

  validate(obj);
  return obj;
}

std::string serialize_sof(const SharedObject& obj) {
  std::string out;
  out += "name: " + obj.name + "\n";
  out += "kind: " + std::string(object_kind_name(obj.kind)) + "\n";
  out += "image_size: " + text::hex_u64(obj.image_size) + "\n";
  if (!obj.needed.empty()) {
    out += "needed:\n";
    for (const std::string& dep : obj.needed) out += "  - " + dep + "\n";
  }
  if (!obj.exports.empty()) {
    out += "exports:\n";
    for (const SymbolDef& def : obj.exports) {
      out += "  - name: " + def.name + "\n";
      out += "    st_value: " + text::hex_u64(def.st_value) + "\n";
      out += "    st_size: " + text::hex_u64(def.st_size) + "\n";
    }
  }
  if (!obj.relocs.empty()) {
    out += "relocs:\n";
    for (const RelocInstruction& rel : obj.relocs) {
      out += "  - type: " + std::string(reloc_type_name(rel.type)) + "\n";
      out += "    offset: " + text::hex_u64(rel.offset) + "\n";
      out += "    addend: " + text::hex_i64(rel.addend) + "\n";
      if (rel.type == RelocType::Direct)
        out += "    symbol_name: " + rel.symbol_name + "\n";
    }
  }
  return out;
}

ObjectUUID content_uuid(const SharedObject& obj) {
  return ObjectUUID{fnv1a64(serialize_sof(obj))};
}

}  // namespace stablelink
