#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "stablelink/resolver.hpp"

namespace stablelink {

class ObjectRegistry;

inline constexpr uint64_t kAddressFloor = 1ull << 24;
inline constexpr uint64_t kAddressCeiling = 1ull << 46;
inline constexpr int kMaxPlacementRejections = 10000;

// Simulated process image: page-aligned per-object bases with pairwise
// disjoint extents, plus the 64-bit words written by relocation processing.
struct AddressSpace {
  struct Extent {
    std::string name;
    ObjectUUID uuid;
    uint64_t base = 0;
    uint64_t image_size = 0;
  };

  std::vector<Extent> extents;  // load order
  uint64_t seed = 0;
  std::unordered_map<uint64_t, uint64_t> writes;  // absolute address -> word

  const Extent* find_uuid(ObjectUUID uuid) const;
};

// Random bases in [2^24, 2^46), 4096-aligned, drawn from splitmix64(seed) and
// rejection-sampled until extents are disjoint. Deterministic per
// (load_set, seed). Throws Error{Exhausted} after 10^4 rejected placements.
AddressSpace assign_bases(const std::vector<LoadSetEntry>& load_set, uint64_t seed);

// Applies every table item in table order:
//   DIRECT:   word at base(req)+offset <- base(prov) + st_value + addend
//   RELATIVE: word at base(req)+offset <- base(req) + addend
// Writes are buffered and committed only if every item applies, so a failed
// replay leaves the space untouched. When trace is non-null, appends one line
// per item: "REQ=<name>+0x<offset> <- PROV=<name>+0x<st_value>+<addend>".
void replay(const RelocationTable& table, AddressSpace& space,
            std::string* trace = nullptr);

// The management-time path: resolves every relocation online through the
// resolver and writes the same word formulas as replay. Equivalent to
// replay(materialize(...)) up to normalization.
void dynamic_load(const ObjectRegistry& reg, const std::string& exe,
                  AddressSpace& space,
                  IndexStrategy strategy = IndexStrategy::Hashed,
                  LookupStats* stats = nullptr, std::string* trace = nullptr);

// Base-independent view of an image: each written word becomes either
// ABS_INTO(target object, inner offset) when it lands inside exactly one
// loaded extent, or RAW(word) otherwise.
struct NormalizedImage {
  enum class Kind { AbsInto, Raw };
  struct Entry {
    std::string object;  // object owning the written slot
    uint64_t offset = 0; // slot offset within that object
    Kind kind = Kind::Raw;
    std::string target;  // ABS_INTO only
    uint64_t value = 0;  // inner offset (ABS_INTO) or raw word

    friend bool operator==(const Entry&, const Entry&) = default;
  };
  std::vector<Entry> entries;  // sorted by (object, offset)

  friend bool operator==(const NormalizedImage&, const NormalizedImage&) = default;
};

std::ostream& operator<<(std::ostream& os, const NormalizedImage::Entry& e);

NormalizedImage normalize(const AddressSpace& space);

}  // namespace stablelink
