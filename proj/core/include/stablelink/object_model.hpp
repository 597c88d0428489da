#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace stablelink {

inline constexpr uint64_t kPageSize = 4096;
inline constexpr uint64_t kWordSize = 8;

// One exported symbol: where it lives inside its owning object.
struct SymbolDef {
  std::string name;
  uint64_t st_value = 0;  // offset from the object base, bytes
  uint64_t st_size = 0;   // bytes

  friend bool operator==(const SymbolDef&, const SymbolDef&) = default;
};

// DIRECT binds a named symbol from whichever object resolves it first.
// RELATIVE is a base-relative fixup inside the requiring object itself.
enum class RelocType { Direct, Relative };

const char* reloc_type_name(RelocType type);
bool parse_reloc_type(std::string_view token, RelocType& out);

struct RelocInstruction {
  RelocType type = RelocType::Direct;
  uint64_t offset = 0;  // into the requiring object, 8-aligned
  int64_t addend = 0;
  std::string symbol_name;  // empty iff type == Relative

  friend bool operator==(const RelocInstruction&, const RelocInstruction&) = default;
};

enum class ObjectKind { Executable, Library };

const char* object_kind_name(ObjectKind kind);
bool parse_object_kind(std::string_view token, ObjectKind& out);

// A shared object in the portable SOF form: an executable or a library, its
// export list, its dependency names, and its relocation instructions.
struct SharedObject {
  std::string name;
  ObjectKind kind = ObjectKind::Library;
  uint64_t image_size = kPageSize;  // page multiple
  std::vector<std::string> needed;
  std::vector<SymbolDef> exports;
  std::vector<RelocInstruction> relocs;

  const SymbolDef* find_export(std::string_view symbol) const;

  friend bool operator==(const SharedObject&, const SharedObject&) = default;
};

// Content-derived identity: FNV-1a over the canonical serialization.
struct ObjectUUID {
  uint64_t value = 0;

  std::string hex() const;  // 16 lowercase hex chars, zero padded
  static bool from_hex(std::string_view text, ObjectUUID& out);

  friend bool operator==(const ObjectUUID&, const ObjectUUID&) = default;
  friend auto operator<=>(const ObjectUUID&, const ObjectUUID&) = default;
};

uint64_t fnv1a64(std::string_view bytes);
uint64_t djb2_64(std::string_view bytes);
uint64_t splitmix64(uint64_t& state);

// Object and symbol names: first char [A-Za-z_.], then [A-Za-z0-9._+-].
// This keeps every line-oriented format (SOF, rtab, CSV) quote-free.
bool is_valid_name(std::string_view name);

// Throws Error{Invariant} naming the offending field path.
void validate(const SharedObject& obj);

SharedObject parse_sof(std::string_view text);
std::string serialize_sof(const SharedObject& obj);
ObjectUUID content_uuid(const SharedObject& obj);

}  // namespace stablelink
