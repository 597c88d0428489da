#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stablelink/object_model.hpp"

namespace stablelink {

class ObjectRegistry;

// Executable-first breadth-first search order over needed lists; ties broken
// by declaration order, repeat visits deduplicated.
struct LoadOrderEntry {
  const SharedObject* object = nullptr;
  ObjectUUID uuid;
};
using LoadOrder = std::vector<LoadOrderEntry>;

enum class IndexStrategy { Linear, Hashed };

// Probe instrumentation for the scaling benchmark.
struct LookupStats {
  uint64_t lookups = 0;
  uint64_t resolved = 0;
  uint64_t unresolved = 0;
  uint64_t objects_visited = 0;
  uint64_t name_comparisons = 0;
  uint64_t bloom_rejections = 0;

  uint64_t total_probes() const {
    return objects_visited + name_comparisons + bloom_rejections;
  }
};

// Per-object symbol lookup structure. LINEAR scans export lists and is the
// oracle; HASHED fronts each object with a Bloom filter over export names
// plus a bucketed hash map. Both return identical results; Bloom false
// positives only cost an extra bucket probe. Holds pointers into the order
// it was built from, which must outlive the index.
class ResolutionIndex {
 public:
  struct Hit {
    const SymbolDef* symbol = nullptr;
    const LoadOrderEntry* provider = nullptr;
  };

  ResolutionIndex(const LoadOrder& order, IndexStrategy strategy);
  ~ResolutionIndex();
  ResolutionIndex(ResolutionIndex&&) noexcept;
  ResolutionIndex& operator=(ResolutionIndex&&) noexcept;

  IndexStrategy strategy() const { return strategy_; }

  // First match in load order, or nullopt.
  std::optional<Hit> try_lookup(std::string_view name, LookupStats* stats = nullptr) const;

 private:
  struct ObjectIndex;
  IndexStrategy strategy_;
  const LoadOrder* order_;
  std::vector<ObjectIndex> per_object_;
};

ResolutionIndex build_index(const LoadOrder& order, IndexStrategy strategy);

// Throws Error{Unresolved} when no object in order exports the name.
ResolutionIndex::Hit lookup_symbol(const ResolutionIndex& index, std::string_view name,
                                   LookupStats* stats = nullptr);

LookupStats count_lookup_cost(const LoadOrder& order, IndexStrategy strategy,
                              const std::vector<std::string>& workload);

// One materialized binding, mirroring the executor's replay needs plus the
// inspector columns.
struct RelocationTableItem {
  RelocType type = RelocType::Direct;
  int64_t addend = 0;
  uint64_t offset = 0;
  uint64_t st_value = 0;
  uint64_t st_size = 0;
  ObjectUUID requires_so_uuid;
  ObjectUUID provides_so_uuid;
  std::string symbol_name;
  std::string requires_so_name;
  std::string provides_so_name;

  friend bool operator==(const RelocationTableItem&, const RelocationTableItem&) = default;
};

struct LoadSetEntry {
  std::string name;
  ObjectUUID uuid;
  uint64_t image_size = 0;

  friend bool operator==(const LoadSetEntry&, const LoadSetEntry&) = default;
};

struct RelocationTable {
  std::string executable;
  ObjectUUID executable_uuid;
  uint64_t epoch_id = 0;
  std::vector<LoadSetEntry> load_set;  // load order
  std::vector<RelocationTableItem> items;  // (load-order position, offset)

  friend bool operator==(const RelocationTable&, const RelocationTable&) = default;
};

void require_distinct_uuids(const LoadOrder& order);

LoadOrder compute_load_order(const ObjectRegistry& reg, const std::string& exe);

// Full, non-lazy resolution of every relocation in load order. All-or-nothing:
// an unresolved symbol aborts with no table. Items carry offsets only, never
// absolute addresses, so tables survive ASLR.
RelocationTable materialize(const ObjectRegistry& reg, const std::string& exe,
                            uint64_t epoch_id,
                            IndexStrategy strategy = IndexStrategy::Hashed,
                            LookupStats* stats = nullptr);

// Structural invariants of a table (item ordering, load_set coverage,
// RELATIVE self-reference shape). Throws Error{Invariant}.
void validate_table(const RelocationTable& table);

// Canonical .rtab text. Bit-exact: serialize is deterministic and
// parse(serialize(t)) == t.
std::string serialize_rtab(const RelocationTable& table);
RelocationTable parse_rtab(std::string_view text);

}  // namespace stablelink
