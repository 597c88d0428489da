#include "stablelink/resolver.hpp"

#include <algorithm>
#include <deque>
#include <unordered_map>
#include <unordered_set>

#include "stablelink/error.hpp"
#include "stablelink/registry.hpp"
#include "text_util.hpp"

namespace stablelink {

namespace {

uint64_t next_pow2(uint64_t n) {
  uint64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

struct ResolutionIndex::ObjectIndex {
  // HASHED only; LINEAR entries stay empty.
  std::vector<uint64_t> bloom_words;
  uint64_t bloom_bit_mask = 0;  // m - 1
  uint32_t bucket_mask = 0;     // nbuckets - 1
  std::vector<std::vector<uint32_t>> buckets;
};

ResolutionIndex::ResolutionIndex(const LoadOrder& order, IndexStrategy strategy)
    : strategy_(strategy), order_(&order) {
  if (strategy_ != IndexStrategy::Hashed) return;
  per_object_.reserve(order.size());
  for (const LoadOrderEntry& entry : order) {
    ObjectIndex idx;
    const auto& exports = entry.object->exports;
    // m = next power of two >= 16 bits per export (floor 64); k = 2.
    uint64_t m = next_pow2(std::max<uint64_t>(16 * exports.size(), 64));
    idx.bloom_bit_mask = m - 1;
    idx.bloom_words.assign(m / 64, 0);
    uint64_t nbuckets = next_pow2(std::max<uint64_t>(exports.size(), 1));
    idx.bucket_mask = static_cast<uint32_t>(nbuckets - 1);
    idx.buckets.assign(nbuckets, {});
    for (uint32_t i = 0; i < exports.size(); ++i) {
      uint64_t h1 = fnv1a64(exports[i].name);
      uint64_t h2 = djb2_64(exports[i].name);
      uint64_t b1 = h1 & idx.bloom_bit_mask;
      uint64_t b2 = h2 & idx.bloom_bit_mask;
      idx.bloom_words[b1 >> 6] |= 1ull << (b1 & 63);
      idx.bloom_words[b2 >> 6] |= 1ull << (b2 & 63);
      idx.buckets[h1 & idx.bucket_mask].push_back(i);
    }
    per_object_.push_back(std::move(idx));
  }
}

ResolutionIndex::~ResolutionIndex() = default;
ResolutionIndex::ResolutionIndex(ResolutionIndex&&) noexcept = default;
ResolutionIndex& ResolutionIndex::operator=(ResolutionIndex&&) noexcept = default;

std::optional<ResolutionIndex::Hit> ResolutionIndex::try_lookup(
    std::string_view name, LookupStats* stats) const {
  if (stats) ++stats->lookups;
  if (strategy_ == IndexStrategy::Linear) {
    for (const LoadOrderEntry& entry : *order_) {
      if (stats) ++stats->objects_visited;
      for (const SymbolDef& def : entry.object->exports) {
        if (stats) ++stats->name_comparisons;
        if (def.name == name) {
          if (stats) ++stats->resolved;
          return Hit{&def, &entry};
        }
      }
    }
    if (stats) ++stats->unresolved;
    return std::nullopt;
  }

  uint64_t h1 = fnv1a64(name);
  uint64_t h2 = djb2_64(name);
  for (size_t i = 0; i < order_->size(); ++i) {
    const LoadOrderEntry& entry = (*order_)[i];
    const ObjectIndex& idx = per_object_[i];
    if (stats) ++stats->objects_visited;
    uint64_t b1 = h1 & idx.bloom_bit_mask;
    uint64_t b2 = h2 & idx.bloom_bit_mask;
    bool maybe = (idx.bloom_words[b1 >> 6] >> (b1 & 63)) & 1 &&
                 (idx.bloom_words[b2 >> 6] >> (b2 & 63)) & 1;
    if (!maybe) {
      if (stats) ++stats->bloom_rejections;
      continue;
    }
    for (uint32_t export_ix : idx.buckets[h1 & idx.bucket_mask]) {
      const SymbolDef& def = entry.object->exports[export_ix];
      if (stats) ++stats->name_comparisons;
      if (def.name == name) {
        if (stats) ++stats->resolved;
        return Hit{&def, &entry};
      }
    }
  }
  if (stats) ++stats->unresolved;
  return std::nullopt;
}

ResolutionIndex build_index(const LoadOrder& order, IndexStrategy strategy) {
  return ResolutionIndex(order, strategy);
}

ResolutionIndex::Hit lookup_symbol(const ResolutionIndex& index, std::string_view name,
                                   LookupStats* stats) {
  if (name.empty()) throw Error(Errc::Invariant, "symbol lookup with empty name");
  auto hit = index.try_lookup(name, stats);
  if (!hit) throw Error(Errc::Unresolved, std::string(name));
  return *hit;
}

LookupStats count_lookup_cost(const LoadOrder& order, IndexStrategy strategy,
                              const std::vector<std::string>& workload) {
  ResolutionIndex index(order, strategy);
  LookupStats stats;
  for (const std::string& name : workload) index.try_lookup(name, &stats);
  return stats;
}

void require_distinct_uuids(const LoadOrder& order) {
  std::unordered_map<uint64_t, const char*> seen;
  for (const LoadOrderEntry& entry : order) {
    auto [it, inserted] = seen.emplace(entry.uuid.value, entry.object->name.c_str());
    if (!inserted) {
      throw Error(Errc::UuidCollision,
                  "objects '" + std::string(it->second) + "' and '" + entry.object->name +
                      "' share UUID " + entry.uuid.hex());
    }
  }
}

LoadOrder compute_load_order(const ObjectRegistry& reg, const std::string& exe) {
  const RegistryEntry* root = reg.find(exe);
  if (!root) throw Error(Errc::UnknownObject, exe);
  if (root->object.kind != ObjectKind::Executable)
    throw Error(Errc::NotExecutable, exe + " is not an executable");

  LoadOrder order;
  std::unordered_set<std::string_view> visited;
  std::deque<const RegistryEntry*> queue;
  queue.push_back(root);
  visited.insert(root->object.name);
  while (!queue.empty()) {
    const RegistryEntry* entry = queue.front();
    queue.pop_front();
    order.push_back(LoadOrderEntry{&entry->object, entry->uuid});
    for (const std::string& dep : entry->object.needed) {
      if (visited.count(dep)) continue;
      const RegistryEntry* next = reg.find(dep);
      if (!next) {
        throw Error(Errc::MissingDependency,
                    "'" + dep + "' needed by '" + entry->object.name + "'");
      }
      visited.insert(next->object.name);
      queue.push_back(next);
    }
  }
  require_distinct_uuids(order);
  return order;
}

RelocationTable materialize(const ObjectRegistry& reg, const std::string& exe,
                            uint64_t epoch_id, IndexStrategy strategy,
                            LookupStats* stats) {
  LoadOrder order = compute_load_order(reg, exe);
  ResolutionIndex index(order, strategy);

  RelocationTable table;
  table.executable = exe;
  table.executable_uuid = order.front().uuid;
  table.epoch_id = epoch_id;
  for (const LoadOrderEntry& entry : order) {
    table.load_set.push_back(
        LoadSetEntry{entry.object->name, entry.uuid, entry.object->image_size});
  }

  for (const LoadOrderEntry& entry : order) {
    const SharedObject& obj = *entry.object;
    std::vector<const RelocInstruction*> relocs;
    relocs.reserve(obj.relocs.size());
    for (const RelocInstruction& rel : obj.relocs) relocs.push_back(&rel);
    std::sort(relocs.begin(), relocs.end(),
              [](const RelocInstruction* a, const RelocInstruction* b) {
                return a->offset < b->offset;
              });
    for (const RelocInstruction* rel : relocs) {
      RelocationTableItem item;
      item.type = rel->type;
      item.addend = rel->addend;
      item.offset = rel->offset;
      item.requires_so_uuid = entry.uuid;
      item.requires_so_name = obj.name;
      if (rel->type == RelocType::Direct) {
        auto hit = index.try_lookup(rel->symbol_name, stats);
        if (!hit) {
          throw Error(Errc::Unresolved,
                      "'" + rel->symbol_name + "' required by '" + obj.name + "'");
        }
        item.st_value = hit->symbol->st_value;
        item.st_size = hit->symbol->st_size;
        item.provides_so_uuid = hit->provider->uuid;
        item.provides_so_name = hit->provider->object->name;
        item.symbol_name = rel->symbol_name;
      } else {
        item.st_value = 0;
        item.st_size = 0;
        item.provides_so_uuid = entry.uuid;
        item.provides_so_name = obj.name;
      }
      table.items.push_back(std::move(item));
    }
  }
  return table;
}

void validate_table(const RelocationTable& table) {
  if (!is_valid_name(table.executable))
    throw Error(Errc::Invariant, "table executable name invalid");
  if (table.load_set.empty())
    throw Error(Errc::Invariant, "table load_set is empty");
  if (table.load_set.front().name != table.executable ||
      table.load_set.front().uuid != table.executable_uuid)
    throw Error(Errc::Invariant, "load_set[0] must be the executable");

  struct SlotInfo {
    const LoadSetEntry* entry;
    size_t position;
  };
  std::unordered_map<uint64_t, SlotInfo> by_uuid;
  std::unordered_set<std::string_view> names;
  for (size_t i = 0; i < table.load_set.size(); ++i) {
    const LoadSetEntry& e = table.load_set[i];
    std::string path = "load_set[" + std::to_string(i) + "]";
    if (!is_valid_name(e.name)) throw Error(Errc::Invariant, path + ": invalid name");
    if (e.image_size == 0 || e.image_size % kPageSize != 0)
      throw Error(Errc::Invariant, path + ": image_size not a page multiple");
    if (!names.insert(e.name).second)
      throw Error(Errc::Invariant, path + ": duplicate name " + e.name);
    if (!by_uuid.emplace(e.uuid.value, SlotInfo{&e, i}).second)
      throw Error(Errc::UuidCollision, path + ": duplicate UUID " + e.uuid.hex());
  }

  // Items must be grouped by load-set position, offsets strictly ascending
  // within each group.
  size_t prev_group = 0;
  uint64_t prev_offset = 0;
  bool have_prev = false;
  for (size_t i = 0; i < table.items.size(); ++i) {
    const RelocationTableItem& item = table.items[i];
    std::string path = "items[" + std::to_string(i) + "]";
    auto req = by_uuid.find(item.requires_so_uuid.value);
    if (req == by_uuid.end())
      throw Error(Errc::Invariant, path + ": requires UUID not in load_set");
    auto prov = by_uuid.find(item.provides_so_uuid.value);
    if (prov == by_uuid.end())
      throw Error(Errc::Invariant, path + ": provides UUID not in load_set");
    if (req->second.entry->name != item.requires_so_name)
      throw Error(Errc::Invariant, path + ": requires name does not match load_set");
    if (prov->second.entry->name != item.provides_so_name)
      throw Error(Errc::Invariant, path + ": provides name does not match load_set");
    if (item.offset % kWordSize != 0 ||
        item.offset > req->second.entry->image_size - kWordSize)
      throw Error(Errc::Bounds, path + ": offset outside the requiring object");
    if (item.type == RelocType::Relative) {
      if (item.provides_so_uuid != item.requires_so_uuid || !item.symbol_name.empty() ||
          item.st_value != 0 || item.st_size != 0)
        throw Error(Errc::Invariant, path + ": malformed RELATIVE item");
    } else {
      if (!is_valid_name(item.symbol_name))
        throw Error(Errc::Invariant, path + ": DIRECT item without symbol name");
    }
    size_t group = req->second.position;
    if (have_prev &&
        (group < prev_group || (group == prev_group && item.offset <= prev_offset)))
      throw Error(Errc::Invariant, path + ": items out of canonical order");
    prev_group = group;
    prev_offset = item.offset;
    have_prev = true;
  }
}

// ---------------------------------------------------------------------------
// .rtab canonical text. Header scalars, then one record per line. Item fields
// follow the struct order; an empty symbol name is written as '-'.
// ---------------------------------------------------------------------------

std::string serialize_rtab(const RelocationTable& table) {
  std::string out;
  out += "executable: " + table.executable + "\n";
  out += "uuid: " + table.executable_uuid.hex() + "\n";
  out += "epoch_id: " + text::hex_u64(table.epoch_id) + "\n";
  out += "load_set:\n";
  for (const LoadSetEntry& e : table.load_set) {
    out += "  - " + e.name + " " + e.uuid.hex() + " " + text::hex_u64(e.image_size) + "\n";
  }
  out += "items:\n";
  for (const RelocationTableItem& item : table.items) {
    out += "  - ";
    out += reloc_type_name(item.type);
    out += ' ';
    out += text::hex_i64(item.addend);
    out += ' ';
    out += text::hex_u64(item.offset);
    out += ' ';
    out += text::hex_u64(item.st_value);
    out += ' ';
    out += text::hex_u64(item.st_size);
    out += ' ';
    out += item.requires_so_uuid.hex();
    out += ' ';
    out += item.provides_so_uuid.hex();
    out += ' ';
    out += item.symbol_name.empty() ? "-" : item.symbol_name;
    out += ' ';
    out += item.requires_so_name;
    out += ' ';
    out += item.provides_so_name;
    out += '\n';
  }
  return out;
}

namespace {

[[noreturn]] void rtab_error(size_t line, const std::string& what) {
  throw Error(Errc::Syntax, "rtab line " + std::to_string(line) + ": " + what);
}

uint64_t rtab_u64(std::string_view token, size_t line, const char* what) {
  uint64_t v;
  if (token.empty() || token[0] == '-' || !text::parse_u64(token, v))
    rtab_error(line, std::string(what) + ": bad integer '" + std::string(token) + "'");
  return v;
}

ObjectUUID rtab_uuid(std::string_view token, size_t line, const char* what) {
  ObjectUUID u;
  if (!ObjectUUID::from_hex(token, u))
    rtab_error(line, std::string(what) + ": bad UUID '" + std::string(token) + "'");
  return u;
}

}  // namespace

RelocationTable parse_rtab(std::string_view input) {
  text::LineReader reader(input);
  std::string_view line;
  RelocationTable table;

  auto expect_scalar = [&](const char* key) -> std::string_view {
    if (!reader.next(line)) rtab_error(reader.line_number() + 1, "unexpected end of file");
    std::string_view k, v;
    if (!text::split_key_value(line, k, v) || k != key)
      rtab_error(reader.line_number(), std::string("expected '") + key + ":'");
    return v;
  };

  table.executable = std::string(expect_scalar("executable"));
  std::string_view uuid_text = expect_scalar("uuid");
  table.executable_uuid = rtab_uuid(uuid_text, reader.line_number(), "uuid");
  std::string_view epoch_text = expect_scalar("epoch_id");
  table.epoch_id = rtab_u64(epoch_text, reader.line_number(), "epoch_id");
  if (std::string_view v = expect_scalar("load_set"); !v.empty())
    rtab_error(reader.line_number(), "'load_set' takes a list");

  bool in_items = false;
  std::vector<std::string_view> f;
  while (reader.next(line)) {
    if (!in_items && line == "items:") {
      in_items = true;
      continue;
    }
    if (line.rfind("  - ", 0) != 0)
      rtab_error(reader.line_number(), "expected a '  - ' record");
    text::split_fields_into(line.substr(4), f);
    if (!in_items) {
      if (f.size() != 3) rtab_error(reader.line_number(), "load_set record needs 3 fields");
      LoadSetEntry e;
      e.name = std::string(f[0]);
      e.uuid = rtab_uuid(f[1], reader.line_number(), "load_set uuid");
      e.image_size = rtab_u64(f[2], reader.line_number(), "image_size");
      table.load_set.push_back(std::move(e));
    } else {
      if (f.size() != 10) rtab_error(reader.line_number(), "item record needs 10 fields");
      RelocationTableItem item;
      if (!parse_reloc_type(f[0], item.type))
        rtab_error(reader.line_number(), "bad reloc type '" + std::string(f[0]) + "'");
      if (!text::parse_i64(f[1], item.addend))
        rtab_error(reader.line_number(), "bad addend '" + std::string(f[1]) + "'");
      item.offset = rtab_u64(f[2], reader.line_number(), "offset");
      item.st_value = rtab_u64(f[3], reader.line_number(), "st_value");
      item.st_size = rtab_u64(f[4], reader.line_number(), "st_size");
      item.requires_so_uuid = rtab_uuid(f[5], reader.line_number(), "requires_so_uuid");
      item.provides_so_uuid = rtab_uuid(f[6], reader.line_number(), "provides_so_uuid");
      if (f[7] != "-") item.symbol_name = std::string(f[7]);
      item.requires_so_name = std::string(f[8]);
      item.provides_so_name = std::string(f[9]);
      table.items.push_back(std::move(item));
    }
  }
  if (!in_items) throw Error(Errc::Syntax, "rtab: missing 'items:' section");
  return table;
}

}  // namespace stablelink
