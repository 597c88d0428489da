#include "stablelink/inspector.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <set>

#include <json.hpp>

#include "stablelink/error.hpp"
#include "text_util.hpp"

namespace stablelink {

bool parse_export_format(std::string_view token, ExportFormat& out) {
  if (token == "json") {
    out = ExportFormat::Json;
    return true;
  }
  if (token == "csv") {
    out = ExportFormat::Csv;
    return true;
  }
  if (token == "db") {
    out = ExportFormat::Relational;
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

using ordered_json = nlohmann::ordered_json;

std::string export_json(const RelocationTable& table) {
  ordered_json doc;
  doc["executable"] = table.executable;
  doc["uuid"] = table.executable_uuid.hex();
  doc["epoch_id"] = table.epoch_id;
  doc["load_set"] = ordered_json::array();
  for (const LoadSetEntry& e : table.load_set) {
    ordered_json entry;
    entry["name"] = e.name;
    entry["uuid"] = e.uuid.hex();
    entry["image_size"] = e.image_size;
    doc["load_set"].push_back(std::move(entry));
  }
  doc["items"] = ordered_json::array();
  for (const RelocationTableItem& item : table.items) {
    ordered_json row;
    row["type"] = reloc_type_name(item.type);
    row["addend"] = item.addend;
    row["offset"] = item.offset;
    row["st_value"] = item.st_value;
    row["st_size"] = item.st_size;
    row["requires_so_uuid"] = item.requires_so_uuid.hex();
    row["provides_so_uuid"] = item.provides_so_uuid.hex();
    row["symbol_name"] = item.symbol_name;
    row["requires_so_name"] = item.requires_so_name;
    row["provides_so_name"] = item.provides_so_name;
    doc["items"].push_back(std::move(row));
  }
  return doc.dump(2) + "\n";
}

namespace {

[[noreturn]] void import_error(const std::string& what) {
  throw Error(Errc::Syntax, "import: " + what);
}

ObjectUUID uuid_from_text(const std::string& text, const char* what) {
  ObjectUUID u;
  if (!ObjectUUID::from_hex(text, u))
    import_error(std::string(what) + ": bad UUID '" + text + "'");
  return u;
}

ObjectUUID uuid_from_json(const ordered_json& j, const char* field) {
  if (!j.is_string()) import_error(std::string(field) + ": bad UUID");
  return uuid_from_text(j.get<std::string>(), field);
}

}  // namespace

RelocationTable import_json(std::string_view text) {
  ordered_json doc = ordered_json::parse(text, nullptr, false);
  if (doc.is_discarded()) import_error("malformed JSON");
  RelocationTable table;
  try {
    table.executable = doc.at("executable").get<std::string>();
    table.executable_uuid = uuid_from_json(doc.at("uuid"), "uuid");
    table.epoch_id = doc.at("epoch_id").get<uint64_t>();
    for (const ordered_json& e : doc.at("load_set")) {
      LoadSetEntry entry;
      entry.name = e.at("name").get<std::string>();
      entry.uuid = uuid_from_json(e.at("uuid"), "load_set uuid");
      entry.image_size = e.at("image_size").get<uint64_t>();
      table.load_set.push_back(std::move(entry));
    }
    for (const ordered_json& r : doc.at("items")) {
      RelocationTableItem item;
      if (!parse_reloc_type(r.at("type").get<std::string>(), item.type))
        import_error("bad reloc type");
      item.addend = r.at("addend").get<int64_t>();
      item.offset = r.at("offset").get<uint64_t>();
      item.st_value = r.at("st_value").get<uint64_t>();
      item.st_size = r.at("st_size").get<uint64_t>();
      item.requires_so_uuid = uuid_from_json(r.at("requires_so_uuid"), "requires_so_uuid");
      item.provides_so_uuid = uuid_from_json(r.at("provides_so_uuid"), "provides_so_uuid");
      item.symbol_name = r.at("symbol_name").get<std::string>();
      item.requires_so_name = r.at("requires_so_name").get<std::string>();
      item.provides_so_name = r.at("provides_so_name").get<std::string>();
      table.items.push_back(std::move(item));
    }
  } catch (const ordered_json::exception& e) {
    import_error(e.what());
  }
  return table;
}

// ---------------------------------------------------------------------------
// CSV. Preamble comments carry the header and load set; names are validated
// to exclude commas and newlines, so no quoting is needed.
// ---------------------------------------------------------------------------

namespace {

const char kCsvHeader[] =
    "type,addend,offset,st_value,st_size,requires_so_uuid,provides_so_uuid,"
    "symbol_name,requires_so_name,provides_so_name";

}  // namespace

std::string export_csv(const RelocationTable& table) {
  std::string out;
  out += "# executable: " + table.executable + "\n";
  out += "# uuid: " + table.executable_uuid.hex() + "\n";
  out += "# epoch_id: " + std::to_string(table.epoch_id) + "\n";
  out += "# load_set:";
  for (size_t i = 0; i < table.load_set.size(); ++i) {
    const LoadSetEntry& e = table.load_set[i];
    out += (i == 0 ? " " : ", ") + e.name + " " + e.uuid.hex() + " " +
           std::to_string(e.image_size);
  }
  out += "\n";
  out += kCsvHeader;
  out += "\n";
  for (const RelocationTableItem& item : table.items) {
    out += reloc_type_name(item.type);
    out += ',';
    out += std::to_string(item.addend);
    out += ',';
    out += std::to_string(item.offset);
    out += ',';
    out += std::to_string(item.st_value);
    out += ',';
    out += std::to_string(item.st_size);
    out += ',';
    out += item.requires_so_uuid.hex();
    out += ',';
    out += item.provides_so_uuid.hex();
    out += ',';
    out += item.symbol_name;
    out += ',';
    out += item.requires_so_name;
    out += ',';
    out += item.provides_so_name;
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  size_t start = 0;
  for (size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

}  // namespace

RelocationTable import_csv(std::string_view text) {
  text::LineReader reader(text);
  std::string_view line;
  RelocationTable table;
  bool saw_header_row = false;

  while (reader.next(line)) {
    if (line.rfind("# ", 0) == 0) {
      std::string_view k, v;
      if (!text::split_key_value(line.substr(2), k, v)) import_error("bad CSV preamble line");
      if (k == "executable") {
        table.executable = std::string(v);
      } else if (k == "uuid") {
        table.executable_uuid = uuid_from_text(std::string(v), "uuid");
      } else if (k == "epoch_id") {
        if (!text::parse_u64(v, table.epoch_id)) import_error("bad epoch_id");
      } else if (k == "load_set") {
        size_t start = 0;
        std::string value(v);
        while (start < value.size()) {
          size_t end = value.find(", ", start);
          std::string chunk = value.substr(
              start, end == std::string::npos ? std::string::npos : end - start);
          std::vector<std::string_view> f = text::split_fields(chunk);
          if (f.size() != 3) import_error("bad load_set entry in CSV preamble");
          LoadSetEntry entry;
          entry.name = std::string(f[0]);
          if (!ObjectUUID::from_hex(f[1], entry.uuid)) import_error("bad load_set uuid");
          if (!text::parse_u64(f[2], entry.image_size)) import_error("bad image_size");
          table.load_set.push_back(std::move(entry));
          if (end == std::string::npos) break;
          start = end + 2;
        }
      } else {
        import_error("unknown CSV preamble key '" + std::string(k) + "'");
      }
      continue;
    }
    if (!saw_header_row) {
      if (line != kCsvHeader) import_error("bad CSV header row");
      saw_header_row = true;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> f = split_csv(line);
    if (f.size() != 10) import_error("CSV row needs 10 fields");
    RelocationTableItem item;
    if (!parse_reloc_type(f[0], item.type)) import_error("bad reloc type");
    if (!text::parse_i64(f[1], item.addend)) import_error("bad addend");
    if (!text::parse_u64(f[2], item.offset)) import_error("bad offset");
    if (!text::parse_u64(f[3], item.st_value)) import_error("bad st_value");
    if (!text::parse_u64(f[4], item.st_size)) import_error("bad st_size");
    if (!ObjectUUID::from_hex(f[5], item.requires_so_uuid)) import_error("bad requires uuid");
    if (!ObjectUUID::from_hex(f[6], item.provides_so_uuid)) import_error("bad provides uuid");
    item.symbol_name = std::string(f[7]);
    item.requires_so_name = std::string(f[8]);
    item.provides_so_name = std::string(f[9]);
    table.items.push_back(std::move(item));
  }
  if (!saw_header_row) import_error("missing CSV header row");
  return table;
}

// ---------------------------------------------------------------------------
// SQLite
// ---------------------------------------------------------------------------

namespace {

struct SqliteDb {
  sqlite3* db = nullptr;

  explicit SqliteDb(const std::filesystem::path& path, int flags) {
    if (sqlite3_open_v2(path.c_str(), &db, flags, nullptr) != SQLITE_OK) {
      std::string msg = db ? sqlite3_errmsg(db) : "out of memory";
      sqlite3_close(db);
      throw Error(Errc::Io, "sqlite: " + msg);
    }
  }
  ~SqliteDb() { sqlite3_close(db); }

  void exec(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      throw Error(Errc::Io, "sqlite: " + msg);
    }
  }
};

struct SqliteStmt {
  sqlite3_stmt* stmt = nullptr;

  SqliteStmt(sqlite3* db, const char* sql) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt, nullptr) != SQLITE_OK)
      throw Error(Errc::Io, std::string("sqlite: ") + sqlite3_errmsg(db));
  }
  ~SqliteStmt() { sqlite3_finalize(stmt); }

  void bind_int64(int ix, int64_t v) { sqlite3_bind_int64(stmt, ix, v); }
  void bind_u64(int ix, uint64_t v) { sqlite3_bind_int64(stmt, ix, static_cast<int64_t>(v)); }
  void bind_text(int ix, const std::string& v) {
    sqlite3_bind_text(stmt, ix, v.c_str(), -1, SQLITE_TRANSIENT);
  }
  bool step() {
    int rc = sqlite3_step(stmt);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw Error(Errc::Io, "sqlite: step failed");
  }
  void step_done() {
    if (step()) throw Error(Errc::Io, "sqlite: unexpected row");
    sqlite3_reset(stmt);
  }
  int64_t col_int64(int ix) { return sqlite3_column_int64(stmt, ix); }
  uint64_t col_u64(int ix) { return static_cast<uint64_t>(sqlite3_column_int64(stmt, ix)); }
  std::string col_text(int ix) {
    const unsigned char* p = sqlite3_column_text(stmt, ix);
    return p ? reinterpret_cast<const char*>(p) : "";
  }
};

constexpr int kTypeDirect = 1;
constexpr int kTypeRelative = 2;

}  // namespace

void export_relational(const RelocationTable& table, const std::filesystem::path& db_path) {
  std::error_code ec;
  std::filesystem::remove(db_path, ec);
  SqliteDb db(db_path, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE);
  db.exec("BEGIN");
  db.exec(
      "CREATE TABLE header (executable TEXT, uuid TEXT, epoch_id INTEGER)");
  db.exec("CREATE TABLE load_set (name TEXT, uuid TEXT, image_size INTEGER)");
  db.exec(
      "CREATE TABLE relocation_table ("
      "type INTEGER, addend INTEGER, offset INTEGER, st_value INTEGER, "
      "st_size INTEGER, requires_so_uuid TEXT, provides_so_uuid TEXT, "
      "symbol_name TEXT, requires_so_name TEXT, provides_so_name TEXT)");

  {
    SqliteStmt stmt(db.db, "INSERT INTO header VALUES (?, ?, ?)");
    stmt.bind_text(1, table.executable);
    stmt.bind_text(2, table.executable_uuid.hex());
    stmt.bind_u64(3, table.epoch_id);
    stmt.step_done();
  }
  {
    SqliteStmt stmt(db.db, "INSERT INTO load_set VALUES (?, ?, ?)");
    for (const LoadSetEntry& e : table.load_set) {
      stmt.bind_text(1, e.name);
      stmt.bind_text(2, e.uuid.hex());
      stmt.bind_u64(3, e.image_size);
      stmt.step_done();
    }
  }
  {
    SqliteStmt stmt(db.db,
                    "INSERT INTO relocation_table VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)");
    for (const RelocationTableItem& item : table.items) {
      stmt.bind_int64(1, item.type == RelocType::Direct ? kTypeDirect : kTypeRelative);
      stmt.bind_int64(2, item.addend);
      stmt.bind_u64(3, item.offset);
      stmt.bind_u64(4, item.st_value);
      stmt.bind_u64(5, item.st_size);
      stmt.bind_text(6, item.requires_so_uuid.hex());
      stmt.bind_text(7, item.provides_so_uuid.hex());
      stmt.bind_text(8, item.symbol_name);
      stmt.bind_text(9, item.requires_so_name);
      stmt.bind_text(10, item.provides_so_name);
      stmt.step_done();
    }
  }
  db.exec("COMMIT");
}

RelocationTable import_relational(const std::filesystem::path& db_path) {
  if (!std::filesystem::exists(db_path))
    throw Error(Errc::Io, "no such database: " + db_path.string());
  SqliteDb db(db_path, SQLITE_OPEN_READONLY);
  RelocationTable table;
  {
    SqliteStmt stmt(db.db, "SELECT executable, uuid, epoch_id FROM header");
    if (!stmt.step()) throw Error(Errc::Syntax, "import: empty header table");
    table.executable = stmt.col_text(0);
    table.executable_uuid = uuid_from_text(stmt.col_text(1), "header uuid");
    table.epoch_id = stmt.col_u64(2);
  }
  {
    SqliteStmt stmt(db.db, "SELECT name, uuid, image_size FROM load_set ORDER BY rowid");
    while (stmt.step()) {
      LoadSetEntry e;
      e.name = stmt.col_text(0);
      e.uuid = uuid_from_text(stmt.col_text(1), "load_set uuid");
      e.image_size = stmt.col_u64(2);
      table.load_set.push_back(std::move(e));
    }
  }
  {
    SqliteStmt stmt(db.db,
                    "SELECT type, addend, offset, st_value, st_size, requires_so_uuid, "
                    "provides_so_uuid, symbol_name, requires_so_name, provides_so_name "
                    "FROM relocation_table ORDER BY rowid");
    while (stmt.step()) {
      RelocationTableItem item;
      int64_t type = stmt.col_int64(0);
      if (type == kTypeDirect) {
        item.type = RelocType::Direct;
      } else if (type == kTypeRelative) {
        item.type = RelocType::Relative;
      } else {
        throw Error(Errc::Syntax, "import: bad type value " + std::to_string(type));
      }
      item.addend = stmt.col_int64(1);
      item.offset = stmt.col_u64(2);
      item.st_value = stmt.col_u64(3);
      item.st_size = stmt.col_u64(4);
      item.requires_so_uuid = uuid_from_text(stmt.col_text(5), "requires_so_uuid");
      item.provides_so_uuid = uuid_from_text(stmt.col_text(6), "provides_so_uuid");
      item.symbol_name = stmt.col_text(7);
      item.requires_so_name = stmt.col_text(8);
      item.provides_so_name = stmt.col_text(9);
      table.items.push_back(std::move(item));
    }
  }
  return table;
}

void export_table(const RelocationTable& table, ExportFormat format,
                  const std::filesystem::path& out) {
  switch (format) {
    case ExportFormat::Json:
      write_file_atomic(out, export_json(table));
      break;
    case ExportFormat::Csv:
      write_file_atomic(out, export_csv(table));
      break;
    case ExportFormat::Relational:
      export_relational(table, out);
      break;
  }
}

// ---------------------------------------------------------------------------
// ABI tables and the audit queries
// ---------------------------------------------------------------------------

AbiTable abi_table(const SharedObject& obj) {
  AbiTable abi;
  abi.library = obj.name;
  abi.uuid = content_uuid(obj);
  abi.rows = obj.exports;
  std::sort(abi.rows.begin(), abi.rows.end(),
            [](const SymbolDef& a, const SymbolDef& b) { return a.name < b.name; });
  return abi;
}

AbiTable abi_table(const ObjectRegistry& reg, const std::string& library) {
  const RegistryEntry* entry = reg.find(library);
  if (!entry) throw Error(Errc::UnknownObject, "'" + library + "' is not in the registry");
  return abi_table(entry->object);
}

std::vector<BrokenBinding> query_abi_compat(const RelocationTable& table,
                                            const std::string& old_name,
                                            const AbiTable& new_abi) {
  std::set<std::string_view> new_names;
  for (const SymbolDef& row : new_abi.rows) new_names.insert(row.name);

  std::set<BrokenBinding> broken;
  for (const RelocationTableItem& item : table.items) {
    if (item.provides_so_name != old_name) continue;
    if (item.symbol_name.empty()) continue;  // RELATIVE items have no ABI surface
    if (!new_names.count(item.symbol_name))
      broken.insert(BrokenBinding{item.symbol_name, item.requires_so_name});
  }
  return {broken.begin(), broken.end()};
}

std::vector<std::string> query_cve(const ObjectRegistry& reg, const std::string& library,
                                   const std::string& symbol) {
  if (reg.mode() != Mode::Epoch)
    throw Error(Errc::StaleTables,
                "tables are stale during management time; run end-mgmt first");
  std::set<std::string> hits;
  for (const auto& [name, entry] : reg.objects()) {
    if (entry.object.kind != ObjectKind::Executable) continue;
    if (!reg.has_table(name)) continue;
    RelocationTable table = reg.load_table(name);
    for (const RelocationTableItem& item : table.items) {
      if (item.provides_so_name == library && item.symbol_name == symbol) {
        hits.insert(name);
        break;
      }
    }
  }
  return {hits.begin(), hits.end()};
}

size_t apply_patch(ObjectRegistry& reg, const std::string& exe, const Patch& patch) {
  if (reg.mode() != Mode::Management)
    throw Error(Errc::EpochLocked, "patches are a management-time act; run begin-mgmt first");

  const RegistryEntry* provider = reg.find(patch.new_provider);
  if (!provider)
    throw Error(Errc::UnknownObject, "'" + patch.new_provider + "' is not in the registry");
  const SymbolDef* def = provider->object.find_export(patch.symbol_name);
  if (!def)
    throw Error(Errc::SymbolNotExported,
                "'" + patch.new_provider + "' does not export '" + patch.symbol_name + "'");

  RelocationTable table = reg.load_table(exe);

  size_t patched = 0;
  for (RelocationTableItem& item : table.items) {
    if (item.type != RelocType::Direct) continue;
    if (item.symbol_name != patch.symbol_name) continue;
    if (patch.requires_filter && item.requires_so_name != *patch.requires_filter) continue;
    item.provides_so_uuid = provider->uuid;
    item.provides_so_name = provider->object.name;
    item.st_value = def->st_value;
    item.st_size = def->st_size;
    ++patched;
  }
  if (patched == 0)
    throw Error(Errc::NoMatch, "no item binds '" + patch.symbol_name + "'" +
                                   (patch.requires_filter
                                        ? " required by '" + *patch.requires_filter + "'"
                                        : ""));

  bool in_load_set = false;
  for (const LoadSetEntry& e : table.load_set) {
    if (e.uuid == provider->uuid) in_load_set = true;
    if (e.name == provider->object.name && e.uuid != provider->uuid)
      throw Error(Errc::UuidMismatch,
                  "'" + provider->object.name +
                      "' changed since this table was materialized; end management "
                      "time and patch in the next session");
  }
  if (!in_load_set) {
    table.load_set.push_back(LoadSetEntry{provider->object.name, provider->uuid,
                                          provider->object.image_size});
  }

  validate_table(table);
  reg.store_table(table);
  return patched;
}

}  // namespace stablelink
