#include "stablelink/executor.hpp"

#include <algorithm>
#include <ostream>

#include "stablelink/error.hpp"
#include "stablelink/registry.hpp"
#include "text_util.hpp"

namespace stablelink {

const AddressSpace::Extent* AddressSpace::find_uuid(ObjectUUID uuid) const {
  for (const Extent& e : extents) {
    if (e.uuid == uuid) return &e;
  }
  return nullptr;
}

AddressSpace assign_bases(const std::vector<LoadSetEntry>& load_set, uint64_t seed) {
  if (load_set.empty()) throw Error(Errc::Invariant, "empty load set");

  AddressSpace space;
  space.seed = seed;
  uint64_t state = seed;
  const uint64_t slots = (kAddressCeiling - kAddressFloor) / kPageSize;
  int rejections = 0;

  for (const LoadSetEntry& entry : load_set) {
    for (;;) {
      uint64_t base = kAddressFloor + (splitmix64(state) % slots) * kPageSize;
      bool ok = base <= kAddressCeiling - entry.image_size;
      if (ok) {
        for (const AddressSpace::Extent& placed : space.extents) {
          if (base < placed.base + placed.image_size && placed.base < base + entry.image_size) {
            ok = false;
            break;
          }
        }
      }
      if (ok) {
        space.extents.push_back(
            AddressSpace::Extent{entry.name, entry.uuid, base, entry.image_size});
        break;
      }
      if (++rejections >= kMaxPlacementRejections)
        throw Error(Errc::Exhausted,
                    "couldn't place '" + entry.name + "' after " +
                        std::to_string(rejections) + " rejected bases");
    }
  }
  return space;
}

namespace {

void require_extents_cover(const AddressSpace& space,
                           const std::vector<LoadSetEntry>& load_set) {
  if (space.extents.size() != load_set.size())
    throw Error(Errc::UuidMismatch, "address space covers " +
                                        std::to_string(space.extents.size()) +
                                        " objects, table expects " +
                                        std::to_string(load_set.size()));
  for (const LoadSetEntry& entry : load_set) {
    const AddressSpace::Extent* extent = space.find_uuid(entry.uuid);
    if (!extent)
      throw Error(Errc::UuidMismatch,
                  "no extent for " + entry.name + " (" + entry.uuid.hex() + ")");
    if (extent->image_size != entry.image_size)
      throw Error(Errc::UuidMismatch, "extent size mismatch for " + entry.name);
  }
}

std::string trace_line(const RelocationTableItem& item) {
  std::string line = "REQ=" + item.requires_so_name + "+" + text::hex_u64(item.offset);
  line += " <- PROV=" + item.provides_so_name + "+" + text::hex_u64(item.st_value);
  line += "+" + text::hex_i64(item.addend);
  line += "\n";
  return line;
}

struct PendingWrite {
  uint64_t address;
  uint64_t value;
};

// uuid -> extent, built once per load.
struct ExtentIndex {
  std::unordered_map<uint64_t, const AddressSpace::Extent*> by_uuid;

  explicit ExtentIndex(const AddressSpace& space) {
    by_uuid.reserve(space.extents.size());
    for (const AddressSpace::Extent& e : space.extents) by_uuid.emplace(e.uuid.value, &e);
  }

  const AddressSpace::Extent* find(ObjectUUID uuid) const {
    auto it = by_uuid.find(uuid.value);
    return it == by_uuid.end() ? nullptr : it->second;
  }
};

uint64_t checked_slot(const AddressSpace::Extent& req, uint64_t offset,
                      const std::string& requiring_name) {
  if (offset % kWordSize != 0 || req.image_size < kWordSize ||
      offset > req.image_size - kWordSize)
    throw Error(Errc::Bounds,
                "slot " + text::hex_u64(offset) + " outside " + requiring_name);
  return req.base + offset;
}

void commit(AddressSpace& space, const std::vector<PendingWrite>& buffer) {
  space.writes.reserve(space.writes.size() + buffer.size());
  for (const PendingWrite& w : buffer) space.writes[w.address] = w.value;
}

}  // namespace

void replay(const RelocationTable& table, AddressSpace& space, std::string* trace) {
  require_extents_cover(space, table.load_set);
  ExtentIndex extents(space);
  std::vector<PendingWrite> buffer;
  buffer.reserve(table.items.size());
  for (const RelocationTableItem& item : table.items) {
    const AddressSpace::Extent* req = extents.find(item.requires_so_uuid);
    if (!req)
      throw Error(Errc::UuidMismatch,
                  "requiring object " + item.requires_so_name + " not loaded");
    uint64_t address = checked_slot(*req, item.offset, item.requires_so_name);
    uint64_t value;
    if (item.type == RelocType::Direct) {
      const AddressSpace::Extent* prov = extents.find(item.provides_so_uuid);
      if (!prov)
        throw Error(Errc::UuidMismatch,
                    "providing object " + item.provides_so_name + " not loaded");
      value = prov->base + item.st_value + static_cast<uint64_t>(item.addend);
    } else {
      value = req->base + static_cast<uint64_t>(item.addend);
    }
    buffer.push_back(PendingWrite{address, value});
    if (trace) *trace += trace_line(item);
  }
  commit(space, buffer);
}

void dynamic_load(const ObjectRegistry& reg, const std::string& exe,
                  AddressSpace& space, IndexStrategy strategy, LookupStats* stats,
                  std::string* trace) {
  LoadOrder order = compute_load_order(reg, exe);
  std::vector<LoadSetEntry> load_set;
  load_set.reserve(order.size());
  for (const LoadOrderEntry& entry : order)
    load_set.push_back(
        LoadSetEntry{entry.object->name, entry.uuid, entry.object->image_size});
  require_extents_cover(space, load_set);

  ExtentIndex extents(space);
  ResolutionIndex index(order, strategy);
  std::vector<PendingWrite> buffer;
  std::vector<const RelocInstruction*> relocs;
  for (const LoadOrderEntry& entry : order) {
    const SharedObject& obj = *entry.object;
    const AddressSpace::Extent* req = extents.find(entry.uuid);
    relocs.clear();
    relocs.reserve(obj.relocs.size());
    for (const RelocInstruction& rel : obj.relocs) relocs.push_back(&rel);
    std::sort(relocs.begin(), relocs.end(),
              [](const RelocInstruction* a, const RelocInstruction* b) {
                return a->offset < b->offset;
              });
    for (const RelocInstruction* rel : relocs) {
      uint64_t address = checked_slot(*req, rel->offset, obj.name);
      uint64_t value;
      const AddressSpace::Extent* prov = req;
      uint64_t st_value = 0;
      if (rel->type == RelocType::Direct) {
        auto hit = index.try_lookup(rel->symbol_name, stats);
        if (!hit)
          throw Error(Errc::Unresolved,
                      "'" + rel->symbol_name + "' required by '" + obj.name + "'");
        prov = extents.find(hit->provider->uuid);
        if (!prov)
          throw Error(Errc::UuidMismatch,
                      "providing object " + hit->provider->object->name + " not loaded");
        st_value = hit->symbol->st_value;
        value = prov->base + st_value + static_cast<uint64_t>(rel->addend);
      } else {
        value = req->base + static_cast<uint64_t>(rel->addend);
      }
      buffer.push_back(PendingWrite{address, value});
      if (trace) {
        *trace += "REQ=" + obj.name + "+" + text::hex_u64(rel->offset) +
                  " <- PROV=" + prov->name + "+" + text::hex_u64(st_value) + "+" +
                  text::hex_i64(rel->addend) + "\n";
      }
    }
  }
  commit(space, buffer);
}

std::ostream& operator<<(std::ostream& os, const NormalizedImage::Entry& e) {
  os << e.object << "+" << text::hex_u64(e.offset) << " = ";
  if (e.kind == NormalizedImage::Kind::AbsInto)
    os << "ABS_INTO(" << e.target << ", " << text::hex_u64(e.value) << ")";
  else
    os << "RAW(" << text::hex_u64(e.value) << ")";
  return os;
}

NormalizedImage normalize(const AddressSpace& space) {
  std::vector<const AddressSpace::Extent*> sorted;
  sorted.reserve(space.extents.size());
  for (const AddressSpace::Extent& e : space.extents) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(),
            [](const AddressSpace::Extent* a, const AddressSpace::Extent* b) {
              return a->base < b->base;
            });

  auto classify = [&](uint64_t address) -> const AddressSpace::Extent* {
    // Last extent with base <= address; extents are disjoint.
    auto it = std::upper_bound(sorted.begin(), sorted.end(), address,
                               [](uint64_t addr, const AddressSpace::Extent* e) {
                                 return addr < e->base;
                               });
    if (it == sorted.begin()) return nullptr;
    const AddressSpace::Extent* cand = *(it - 1);
    if (address - cand->base < cand->image_size) return cand;
    return nullptr;
  };

  // Defensive: disjointness is an AddressSpace invariant, but hand-built
  // spaces may violate it, so detect overlap before classifying into it.
  for (size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->base < sorted[i - 1]->base + sorted[i - 1]->image_size)
      throw Error(Errc::Ambiguous, "extents of " + sorted[i - 1]->name + " and " +
                                       sorted[i]->name + " overlap");
  }

  NormalizedImage image;
  image.entries.reserve(space.writes.size());
  for (const auto& [address, word] : space.writes) {
    const AddressSpace::Extent* owner = classify(address);
    if (!owner)
      throw Error(Errc::Invariant,
                  "write at " + text::hex_u64(address) + " outside all extents");
    NormalizedImage::Entry entry;
    entry.object = owner->name;
    entry.offset = address - owner->base;
    if (const AddressSpace::Extent* target = classify(word)) {
      entry.kind = NormalizedImage::Kind::AbsInto;
      entry.target = target->name;
      entry.value = word - target->base;
    } else {
      entry.kind = NormalizedImage::Kind::Raw;
      entry.value = word;
    }
    image.entries.push_back(std::move(entry));
  }
  std::sort(image.entries.begin(), image.entries.end(),
            [](const NormalizedImage::Entry& a, const NormalizedImage::Entry& b) {
              return a.object != b.object ? a.object < b.object : a.offset < b.offset;
            });
  return image;
}

}  // namespace stablelink
