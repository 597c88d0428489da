#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stablelink/registry.hpp"
#include "stablelink/resolver.hpp"

namespace stablelink {

enum class ExportFormat { Json, Csv, Relational };

bool parse_export_format(std::string_view token, ExportFormat& out);

// Flat-file exports carry all ten item columns plus the table header and load
// set, and round-trip losslessly: import(export(t)) == t and re-export is
// byte-identical.
std::string export_json(const RelocationTable& table);
std::string export_csv(const RelocationTable& table);
RelocationTable import_json(std::string_view text);
RelocationTable import_csv(std::string_view text);

// Single-file SQLite database with tables `header`, `load_set` and
// `relocation_table` (schema in docs/FORMATS.md). Overwrites `db`.
void export_relational(const RelocationTable& table, const std::filesystem::path& db);
RelocationTable import_relational(const std::filesystem::path& db);

void export_table(const RelocationTable& table, ExportFormat format,
                  const std::filesystem::path& out);

// The exported symbols of one library: name, st_value, st_size, sorted by
// symbol name.
struct AbiTable {
  std::string library;
  ObjectUUID uuid;
  std::vector<SymbolDef> rows;
};

AbiTable abi_table(const ObjectRegistry& reg, const std::string& library);
AbiTable abi_table(const SharedObject& obj);  // standalone .sof path

// Bindings in `table` against `old_name` that would break if the library
// were replaced by one with `new_abi`: the item's symbol is absent from the
// new export list. Sorted, deduplicated; empty means ABI compatible.
struct BrokenBinding {
  std::string symbol_name;
  std::string requires_so_name;

  friend bool operator==(const BrokenBinding&, const BrokenBinding&) = default;
  friend auto operator<=>(const BrokenBinding&, const BrokenBinding&) = default;
};

std::vector<BrokenBinding> query_abi_compat(const RelocationTable& table,
                                            const std::string& old_name,
                                            const AbiTable& new_abi);

// Executables whose current table binds `symbol` from `library`. Requires
// epoch mode, otherwise the tables are stale and the answer would lie.
std::vector<std::string> query_cve(const ObjectRegistry& reg, const std::string& library,
                                   const std::string& symbol);

// Redirect selected DIRECT bindings to a different provider. The selector
// matches on symbol name, optionally restricted to one requiring object.
struct Patch {
  std::optional<std::string> requires_filter;
  std::string symbol_name;
  std::string new_provider;
};

// Rewrites every matching item of the executable's stored table to bind
// against new_provider, adds the provider to the load set when absent,
// validates the result and stores it. Management time only. Returns the
// number of rewritten items.
size_t apply_patch(ObjectRegistry& reg, const std::string& exe, const Patch& patch);

}  // namespace stablelink
