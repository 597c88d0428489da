#include "stablelink/registry.hpp"

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <deque>
#include <fstream>
#include <unordered_set>

#include "stablelink/error.hpp"
#include "text_util.hpp"

namespace stablelink {

namespace fs = std::filesystem;

const char* mode_name(Mode mode) {
  return mode == Mode::Management ? "MANAGEMENT" : "EPOCH";
}

// ---------------------------------------------------------------------------
// Locking and file IO
// ---------------------------------------------------------------------------

FileLock::FileLock(const fs::path& path, Kind kind) {
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0)
    throw Error(Errc::Io, "cannot open lock file " + path.string() + ": " +
                              std::strerror(errno));
  if (::flock(fd_, kind == Kind::Exclusive ? LOCK_EX : LOCK_SH) != 0) {
    int saved = errno;
    ::close(fd_);
    fd_ = -1;
    throw Error(Errc::Io, "cannot lock " + path.string() + ": " + std::strerror(saved));
  }
}

FileLock::~FileLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

bool FileLock::try_acquire(const fs::path& path, Kind kind) {
  int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) return false;
  int op = (kind == Kind::Exclusive ? LOCK_EX : LOCK_SH) | LOCK_NB;
  bool ok = ::flock(fd, op) == 0;
  if (ok) ::flock(fd, LOCK_UN);
  ::close(fd);
  return ok;
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error(Errc::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

struct ManifestData {
  Mode mode = Mode::Management;
  uint64_t epoch_id = 0;
  bool fresh = true;
  // name -> (uuid, dirty)
  std::map<std::string, std::pair<ObjectUUID, bool>> objects;
  std::map<std::string, uint64_t> tables;
};

std::string render_manifest(const ManifestData& m) {
  std::string out;
  out += "mode: " + std::string(mode_name(m.mode)) + "\n";
  out += "epoch_id: " + text::hex_u64(m.epoch_id) + "\n";
  out += std::string("fresh: ") + (m.fresh ? "true" : "false") + "\n";
  out += "objects:\n";
  for (const auto& [name, info] : m.objects) {
    out += "  - " + name + " " + info.first.hex() + " " +
           (info.second ? "dirty" : "clean") + "\n";
  }
  out += "tables:\n";
  for (const auto& [name, epoch] : m.tables) {
    out += "  - " + name + " " + text::hex_u64(epoch) + "\n";
  }
  return out;
}

[[noreturn]] void manifest_error(size_t line, const std::string& what) {
  throw Error(Errc::Corrupt, "manifest line " + std::to_string(line) + ": " + what);
}

ManifestData parse_manifest(std::string_view input) {
  text::LineReader reader(input);
  std::string_view line;
  ManifestData m;

  auto scalar = [&](const char* key) -> std::string_view {
    if (!reader.next(line)) manifest_error(reader.line_number() + 1, "truncated");
    std::string_view k, v;
    if (!text::split_key_value(line, k, v) || k != key)
      manifest_error(reader.line_number(), std::string("expected '") + key + "'");
    return v;
  };

  std::string_view mode = scalar("mode");
  if (mode == "MANAGEMENT") {
    m.mode = Mode::Management;
  } else if (mode == "EPOCH") {
    m.mode = Mode::Epoch;
  } else {
    manifest_error(reader.line_number(), "bad mode");
  }
  if (!text::parse_u64(scalar("epoch_id"), m.epoch_id))
    manifest_error(reader.line_number(), "bad epoch_id");
  std::string_view fresh = scalar("fresh");
  if (fresh == "true") {
    m.fresh = true;
  } else if (fresh == "false") {
    m.fresh = false;
  } else {
    manifest_error(reader.line_number(), "bad fresh flag");
  }
  if (!scalar("objects").empty()) manifest_error(reader.line_number(), "'objects' takes a list");

  bool in_tables = false;
  while (reader.next(line)) {
    if (!in_tables && line == "tables:") {
      in_tables = true;
      continue;
    }
    if (line.rfind("  - ", 0) != 0) manifest_error(reader.line_number(), "expected record");
    std::vector<std::string_view> f = text::split_fields(line.substr(4));
    if (!in_tables) {
      if (f.size() != 3) manifest_error(reader.line_number(), "object record needs 3 fields");
      ObjectUUID uuid;
      if (!ObjectUUID::from_hex(f[1], uuid)) manifest_error(reader.line_number(), "bad uuid");
      bool dirty;
      if (f[2] == "dirty") {
        dirty = true;
      } else if (f[2] == "clean") {
        dirty = false;
      } else {
        manifest_error(reader.line_number(), "bad dirty flag");
      }
      m.objects[std::string(f[0])] = {uuid, dirty};
    } else {
      if (f.size() != 2) manifest_error(reader.line_number(), "table record needs 2 fields");
      uint64_t epoch;
      if (!text::parse_u64(f[1], epoch)) manifest_error(reader.line_number(), "bad epoch");
      m.tables[std::string(f[0])] = epoch;
    }
  }
  if (!in_tables) throw Error(Errc::Corrupt, "manifest: missing 'tables:' section");
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// ObjectRegistry
// ---------------------------------------------------------------------------

fs::path ObjectRegistry::object_path(const std::string& name) const {
  return root_ / "objects" / (name + ".sof");
}

fs::path ObjectRegistry::table_path(const std::string& name) const {
  return root_ / "tables" / (name + ".rtab");
}

void ObjectRegistry::init(const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + root.string() + ": " + ec.message());
  if (fs::exists(root / "manifest"))
    throw Error(Errc::Io, root.string() + " is already a registry");
  fs::create_directories(root / "objects");
  fs::create_directories(root / "tables");
  { std::ofstream lock(root / ".lock", std::ios::binary); }
  ManifestData fresh;
  write_file_atomic(root / "manifest", render_manifest(fresh));
}

ObjectRegistry ObjectRegistry::open(const fs::path& root) {
  ObjectRegistry reg;
  reg.root_ = root;
  if (!fs::exists(reg.manifest_path()))
    throw Error(Errc::Io, root.string() + " is not a registry (no manifest)");
  FileLock lock(reg.lock_path(), FileLock::Kind::Shared);
  reg.load_from_disk();
  return reg;
}

void ObjectRegistry::load_from_disk() {
  std::string text = read_file(manifest_path());
  ManifestData m = parse_manifest(text);

  std::map<std::string, RegistryEntry> entries;
  for (const auto& [name, info] : m.objects) {
    SharedObject obj = parse_sof(read_file(object_path(name)));
    if (obj.name != name)
      throw Error(Errc::Corrupt, "object file " + name + ".sof declares name " + obj.name);
    ObjectUUID uuid = content_uuid(obj);
    if (uuid != info.first)
      throw Error(Errc::Corrupt, "object " + name + " content does not match manifest UUID " +
                                     info.first.hex());
    entries[name] = RegistryEntry{std::move(obj), uuid, info.second};
  }

  mode_ = m.mode;
  epoch_id_ = m.epoch_id;
  fresh_ = m.fresh;
  entries_ = std::move(entries);
  table_provenance_ = std::move(m.tables);
  manifest_cache_ = std::move(text);
}

void ObjectRegistry::reload() {
  std::string text = read_file(manifest_path());
  if (text == manifest_cache_) return;
  load_from_disk();
}

std::string ObjectRegistry::serialize_manifest() const {
  ManifestData m;
  m.mode = mode_;
  m.epoch_id = epoch_id_;
  m.fresh = fresh_;
  for (const auto& [name, entry] : entries_) m.objects[name] = {entry.uuid, entry.dirty};
  m.tables = table_provenance_;
  return render_manifest(m);
}

void ObjectRegistry::write_manifest() {
  std::string text = serialize_manifest();
  write_file_atomic(manifest_path(), text);
  manifest_cache_ = std::move(text);
}

const RegistryEntry* ObjectRegistry::find(std::string_view name) const {
  auto it = entries_.find(std::string(name));
  return it == entries_.end() ? nullptr : &it->second;
}

void ObjectRegistry::begin_mgmt() {
  FileLock lock(lock_path(), FileLock::Kind::Exclusive);
  reload();
  if (mode_ == Mode::Management && !fresh_)
    throw Error(Errc::AlreadyManaging, "registry is already in management time");
  mode_ = Mode::Management;
  fresh_ = false;
  write_manifest();
}

void ObjectRegistry::update_obj(const SharedObject& obj) {
  FileLock lock(lock_path(), FileLock::Kind::Exclusive);
  reload();
  if (mode_ == Mode::Epoch)
    throw Error(Errc::EpochLocked, "cannot update '" + obj.name + "' during an epoch");
  validate(obj);
  std::string canonical = serialize_sof(obj);
  ObjectUUID uuid{fnv1a64(canonical)};
  for (const auto& [name, entry] : entries_) {
    if (name != obj.name && entry.uuid == uuid)
      throw Error(Errc::UuidCollision,
                  "'" + obj.name + "' collides with '" + name + "' on " + uuid.hex());
  }
  write_file_atomic(object_path(obj.name), canonical);
  entries_[obj.name] = RegistryEntry{obj, uuid, true};
  write_manifest();
}

namespace {

// Transitive needed-closure from one root, cycles deduplicated.
std::unordered_set<std::string> dependency_closure(
    const std::map<std::string, RegistryEntry>& entries, const std::string& root) {
  std::unordered_set<std::string> visited;
  std::deque<const RegistryEntry*> queue;
  auto push = [&](const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw Error(Errc::MissingDependency, "'" + name + "' is not in the registry");
    if (visited.insert(name).second) queue.push_back(&it->second);
  };
  push(root);
  while (!queue.empty()) {
    const RegistryEntry* entry = queue.front();
    queue.pop_front();
    for (const std::string& dep : entry->object.needed) push(dep);
  }
  return visited;
}

}  // namespace

void ObjectRegistry::end_mgmt() {
  FileLock lock(lock_path(), FileLock::Kind::Exclusive);
  reload();
  if (mode_ != Mode::Management)
    throw Error(Errc::NotManaging, "registry is not in management time");

  // Closure property for the whole registry.
  for (const auto& [name, entry] : entries_) {
    for (const std::string& dep : entry.object.needed) {
      if (!entries_.count(dep))
        throw Error(Errc::MissingDependency, "'" + dep + "' needed by '" + name + "'");
    }
  }

  uint64_t new_epoch = epoch_id_ + 1;

  // Re-materialize executables whose transitive closure intersects the dirty
  // set (or which have no table yet); untouched closures keep their tables.
  std::map<std::string, RelocationTable> new_tables;
  std::map<std::string, uint64_t> provenance;
  for (const auto& [name, entry] : entries_) {
    if (entry.object.kind != ObjectKind::Executable) continue;
    bool need = !table_provenance_.count(name);
    if (!need) {
      for (const std::string& member : dependency_closure(entries_, name)) {
        if (entries_.at(member).dirty) {
          need = true;
          break;
        }
      }
    }
    if (need) {
      try {
        new_tables[name] = materialize(*this, name, new_epoch);
      } catch (const Error& e) {
        throw Error(Errc::MaterializationFailed, "for '" + name + "': " + e.what());
      }
      provenance[name] = new_epoch;
    } else {
      provenance[name] = table_provenance_.at(name);
    }
  }

  if (commit_hook) commit_hook("materialized");

  // Commit sequence: table files first, manifest rename is the atomic commit
  // point, orphan cleanup afterwards.
  for (const auto& [name, table] : new_tables) {
    write_file_atomic(table_path(name), serialize_rtab(table));
    if (commit_hook) commit_hook("table_written:" + name);
  }
  if (commit_hook) commit_hook("tables_written");

  ManifestData m;
  m.mode = Mode::Epoch;
  m.epoch_id = new_epoch;
  m.fresh = false;
  for (const auto& [name, entry] : entries_) m.objects[name] = {entry.uuid, false};
  m.tables = provenance;
  fs::path tmp = manifest_path();
  tmp += ".tmp";
  std::string text = render_manifest(m);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw Error(Errc::Io, "short write to " + tmp.string());
  }
  if (commit_hook) commit_hook("manifest_temp");
  std::error_code ec;
  fs::rename(tmp, manifest_path(), ec);
  if (ec) throw Error(Errc::Io, "cannot commit manifest: " + ec.message());
  if (commit_hook) commit_hook("committed");

  // In-memory state now reflects the committed manifest.
  mode_ = Mode::Epoch;
  epoch_id_ = new_epoch;
  fresh_ = false;
  for (auto& [name, entry] : entries_) entry.dirty = false;
  std::map<std::string, uint64_t> old_tables = std::move(table_provenance_);
  table_provenance_ = std::move(provenance);
  manifest_cache_ = std::move(text);

  // Tables for names that are no longer executables are unreferenced now.
  for (const auto& [name, epoch] : old_tables) {
    if (!table_provenance_.count(name)) {
      std::error_code ignore;
      fs::remove(table_path(name), ignore);
    }
  }
}

StatusReport ObjectRegistry::status() const {
  StatusReport report;
  report.mode = mode_;
  report.epoch_id = epoch_id_;
  report.object_count = entries_.size();
  for (const auto& [name, entry] : entries_) {
    if (entry.object.kind != ObjectKind::Executable) continue;
    StatusReport::TableStatus ts;
    ts.executable = name;
    auto it = table_provenance_.find(name);
    ts.present = it != table_provenance_.end();
    ts.provenance_epoch = ts.present ? it->second : 0;
    ts.stale = mode_ == Mode::Management;
    report.tables.push_back(std::move(ts));
  }
  return report;
}

bool ObjectRegistry::has_table(const std::string& exe) const {
  return table_provenance_.count(exe) != 0;
}

uint64_t ObjectRegistry::table_provenance(const std::string& exe) const {
  auto it = table_provenance_.find(exe);
  if (it == table_provenance_.end())
    throw Error(Errc::UnknownObject, "no table for '" + exe + "'");
  return it->second;
}

RelocationTable ObjectRegistry::load_table(const std::string& exe) const {
  FileLock lock(lock_path(), FileLock::Kind::Shared);
  if (!table_provenance_.count(exe))
    throw Error(Errc::UnknownObject, "no table for '" + exe + "'");
  return parse_rtab(read_file(table_path(exe)));
}

void ObjectRegistry::store_table(const RelocationTable& table) {
  FileLock lock(lock_path(), FileLock::Kind::Exclusive);
  reload();
  if (mode_ != Mode::Management)
    throw Error(Errc::EpochLocked, "tables can only be edited during management time");
  const RegistryEntry* entry = find(table.executable);
  if (!entry || entry->object.kind != ObjectKind::Executable)
    throw Error(Errc::UnknownObject, "'" + table.executable + "' is not a registered executable");
  if (!table_provenance_.count(table.executable))
    throw Error(Errc::UnknownObject, "no existing table for '" + table.executable + "'");
  validate_table(table);
  write_file_atomic(table_path(table.executable), serialize_rtab(table));
}

}  // namespace stablelink
