#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "stablelink/object_model.hpp"
#include "stablelink/resolver.hpp"

namespace stablelink {

enum class Mode { Management, Epoch };

const char* mode_name(Mode mode);

// Advisory flock on <root>/.lock. Mutating registry operations hold it
// exclusive; readers hold it shared.
class FileLock {
 public:
  enum class Kind { Shared, Exclusive };

  FileLock(const std::filesystem::path& path, Kind kind);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

  // Non-blocking probe; used by tests and by callers that cannot wait.
  static bool try_acquire(const std::filesystem::path& path, Kind kind);

 private:
  int fd_ = -1;
};

struct RegistryEntry {
  SharedObject object;
  ObjectUUID uuid;
  bool dirty = false;
};

struct StatusReport {
  Mode mode = Mode::Management;
  uint64_t epoch_id = 0;
  size_t object_count = 0;
  struct TableStatus {
    std::string executable;
    bool present = false;
    uint64_t provenance_epoch = 0;  // epoch in which the table was materialized
    bool stale = false;             // pending revalidation at the next end_mgmt
  };
  std::vector<TableStatus> tables;
};

// Persisted store of shared objects plus the management/epoch mode machine.
// Layout under root: manifest, .lock, objects/<name>.sof, tables/<exe>.rtab.
// The manifest is the commit point; it is always replaced atomically via
// write-temp-then-rename.
class ObjectRegistry {
 public:
  static void init(const std::filesystem::path& root);
  static ObjectRegistry open(const std::filesystem::path& root);

  ObjectRegistry(ObjectRegistry&&) = default;
  ObjectRegistry& operator=(ObjectRegistry&&) = default;
  ObjectRegistry(const ObjectRegistry&) = delete;
  ObjectRegistry& operator=(const ObjectRegistry&) = delete;

  // Mode lifecycle. begin_mgmt is also accepted on a freshly initialized
  // registry that has never left management time.
  void begin_mgmt();
  void update_obj(const SharedObject& obj);
  void end_mgmt();
  StatusReport status() const;

  Mode mode() const { return mode_; }
  uint64_t epoch_id() const { return epoch_id_; }
  const std::filesystem::path& root() const { return root_; }
  const std::map<std::string, RegistryEntry>& objects() const { return entries_; }
  const RegistryEntry* find(std::string_view name) const;

  bool has_table(const std::string& exe) const;
  uint64_t table_provenance(const std::string& exe) const;
  RelocationTable load_table(const std::string& exe) const;

  // Replaces an executable's table in place, keeping its epoch provenance.
  // Management time only (the inspector's patch path).
  void store_table(const RelocationTable& table);

  // Test hook: invoked with a step label at each point of the end_mgmt
  // commit sequence. Throwing from it simulates a crash.
  std::function<void(std::string_view)> commit_hook;

 private:
  ObjectRegistry() = default;

  std::filesystem::path manifest_path() const { return root_ / "manifest"; }
  std::filesystem::path lock_path() const { return root_ / ".lock"; }
  std::filesystem::path object_path(const std::string& name) const;
  std::filesystem::path table_path(const std::string& name) const;

  void reload();  // re-reads the manifest if it changed on disk
  void load_from_disk();
  std::string serialize_manifest() const;
  void write_manifest();

  std::filesystem::path root_;
  Mode mode_ = Mode::Management;
  uint64_t epoch_id_ = 0;
  bool fresh_ = true;
  std::map<std::string, RegistryEntry> entries_;
  std::map<std::string, uint64_t> table_provenance_;  // exe -> materialization epoch
  std::string manifest_cache_;
};

// Atomic file replacement used for every registry artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace stablelink
