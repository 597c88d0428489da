#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "stablelink/error.hpp"
#include "stablelink/executor.hpp"
#include "stablelink/inspector.hpp"
#include "support/fixtures.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace stablelink;
using namespace testsupport;

namespace {

std::string golden(const std::string& name) {
  std::ifstream in(std::string(STABLELINK_TEST_GOLDEN_DIR) + "/" + name,
                   std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Multiset comparison key over all ten columns.
std::multiset<std::string> row_multiset(const RelocationTable& table) {
  std::multiset<std::string> rows;
  for (const RelocationTableItem& i : table.items) {
    rows.insert(std::string(reloc_type_name(i.type)) + "|" + std::to_string(i.addend) +
                "|" + std::to_string(i.offset) + "|" + std::to_string(i.st_value) + "|" +
                std::to_string(i.st_size) + "|" + i.requires_so_uuid.hex() + "|" +
                i.provides_so_uuid.hex() + "|" + i.symbol_name + "|" +
                i.requires_so_name + "|" + i.provides_so_name);
  }
  return rows;
}

}  // namespace

TEST_CASE("export csv: paradox golden bytes and exact column set") {
  TempDir dir("csv");
  ObjectRegistry reg = paradox_registry(dir.path());
  RelocationTable table = reg.load_table("app");

  std::string csv = export_csv(table);
  CHECK(csv == golden("paradox.csv"));

  // Two data rows and exactly the ten documented columns.
  size_t header_pos = csv.find("type,");
  REQUIRE(header_pos != std::string::npos);
  std::string header = csv.substr(header_pos, csv.find('\n', header_pos) - header_pos);
  CHECK(header ==
        "type,addend,offset,st_value,st_size,requires_so_uuid,provides_so_uuid,"
        "symbol_name,requires_so_name,provides_so_name");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4 + 1 + 2);  // preamble + header + rows
}

TEST_CASE("export csv: empty table is header-only") {
  RelocationTable table;
  table.executable = "app";
  table.executable_uuid = ObjectUUID{1};
  table.load_set = {{"app", ObjectUUID{1}, 4096}};
  std::string csv = export_csv(table);
  CHECK(csv.find("\nDIRECT") == std::string::npos);
  CHECK(import_csv(csv) == table);
}

TEST_CASE("export/import: json and csv round-trip byte-identically") {
  Rng rng(404);
  for (int i = 0; i < 100; ++i) {
    RelocationTable table = random_table(rng);

    std::string json = export_json(table);
    RelocationTable from_json = import_json(json);
    CHECK(from_json == table);
    CHECK(export_json(from_json) == json);

    std::string csv = export_csv(table);
    RelocationTable from_csv = import_csv(csv);
    CHECK(from_csv == table);
    CHECK(export_csv(from_csv) == csv);
  }
}

TEST_CASE("export/import: relational round-trip and pairwise multiset agreement") {
  Rng rng(505);
  TempDir dir("sqlite");
  for (int i = 0; i < 25; ++i) {
    RelocationTable table = random_table(rng);
    std::filesystem::path db = dir / ("t" + std::to_string(i) + ".db");
    export_relational(table, db);
    RelocationTable from_db = import_relational(db);
    CHECK(from_db == table);

    RelocationTable from_json = import_json(export_json(table));
    RelocationTable from_csv = import_csv(export_csv(table));
    CHECK(row_multiset(from_db) == row_multiset(from_json));
    CHECK(row_multiset(from_csv) == row_multiset(from_json));
  }
}

TEST_CASE("abi_table: sorted rows from the registry and from a standalone object") {
  TempDir dir("abi");
  ObjectRegistry reg = paradox_registry(dir.path());

  AbiTable abi = abi_table(reg, "liba");
  REQUIRE(abi.rows.size() == 2);
  CHECK(abi.rows[0] == SymbolDef{"bar", 0x200, 8});
  CHECK(abi.rows[1] == SymbolDef{"foo", 0x100, 8});

  SharedObject none;
  none.name = "libnone";
  none.image_size = 0x1000;
  CHECK(abi_table(none).rows.empty());

  CHECK_THROWS_AS(abi_table(reg, "nope"), Error);
}

TEST_CASE("query_abi_compat: vignette fixture") {
  // app binds b from libfoo; the new libfoo only exports a.
  RelocationTable table;
  table.executable = "app";
  table.executable_uuid = ObjectUUID{1};
  table.load_set = {{"app", ObjectUUID{1}, 4096}, {"libfoo", ObjectUUID{2}, 4096}};
  RelocationTableItem item;
  item.type = RelocType::Direct;
  item.offset = 0x10;
  item.st_value = 0x100;
  item.st_size = 8;
  item.requires_so_uuid = ObjectUUID{1};
  item.provides_so_uuid = ObjectUUID{2};
  item.symbol_name = "b";
  item.requires_so_name = "app";
  item.provides_so_name = "libfoo";
  table.items = {item};

  AbiTable new_abi;
  new_abi.library = "libfoo";
  new_abi.rows = {{"a", 0x10, 8}};

  auto broken = query_abi_compat(table, "libfoo", new_abi);
  REQUIRE(broken.size() == 1);
  CHECK(broken[0] == BrokenBinding{"b", "app"});

  // Supersets never break.
  new_abi.rows.push_back({"b", 0x20, 8});
  CHECK(query_abi_compat(table, "libfoo", new_abi).empty());
}

TEST_CASE("query_abi_compat equals the naive join on random instances") {
  Rng rng(606);
  for (int i = 0; i < 500; ++i) {
    RelocationTable table = random_table(rng);
    AbiTable abi;
    abi.library = "libx";
    uint64_t rows = rng.below(6);
    for (uint64_t r = 0; r < rows; ++r)
      abi.rows.push_back({symbol_pool_name(rng.below(40)), rng.below(4096), 8});
    std::string old_name =
        table.load_set[rng.below(table.load_set.size())].name;
    CHECK(query_abi_compat(table, old_name, abi) ==
          naive_abi_compat(table, old_name, abi));
  }
}

TEST_CASE("query_cve: vignette fixture and the stale-tables guard") {
  TempDir dir("cve");
  ObjectRegistry::init(dir.path());
  ObjectRegistry reg = ObjectRegistry::open(dir.path());

  SharedObject libbar;
  libbar.name = "libbar";
  libbar.image_size = 0x1000;
  libbar.exports = {{"baz", 0x100, 8}};
  SharedObject libother;
  libother.name = "libother";
  libother.image_size = 0x1000;
  libother.exports = {{"baz", 0x300, 8}};

  SharedObject app1;
  app1.name = "app1";
  app1.kind = ObjectKind::Executable;
  app1.image_size = 0x1000;
  app1.needed = {"libbar"};
  app1.relocs = {{RelocType::Direct, 0x10, 0, "baz"}};

  SharedObject app2 = app1;
  app2.name = "app2";
  app2.needed = {"libother"};

  reg.update_obj(libbar);
  reg.update_obj(libother);
  reg.update_obj(app1);
  reg.update_obj(app2);

  CHECK_THROWS_AS(query_cve(reg, "libbar", "baz"), Error);  // still management time

  reg.end_mgmt();
  CHECK(query_cve(reg, "libbar", "baz") == std::vector<std::string>{"app1"});
  CHECK(query_cve(reg, "libbar", "nobody_binds_this").empty());
}

TEST_CASE("query_cve equals the naive scan on random registries") {
  Rng rng(707);
  TempDir dir("cve-prop");
  for (int i = 0; i < 30; ++i) {
    std::filesystem::path root = dir / ("reg" + std::to_string(i));
    ObjectRegistry::init(root);
    ObjectRegistry reg = ObjectRegistry::open(root);
    for (const SharedObject& obj : random_registry_objects(rng)) reg.update_obj(obj);
    reg.end_mgmt();

    std::vector<RelocationTable> tables;
    for (const auto& [name, entry] : reg.objects()) {
      if (reg.has_table(name)) tables.push_back(reg.load_table(name));
    }
    for (int probe = 0; probe < 10; ++probe) {
      std::string lib = probe % 2 ? "exe" : "lib" + std::to_string(rng.below(20));
      std::string sym = symbol_pool_name(rng.below(40));
      CHECK(query_cve(reg, lib, sym) == naive_cve(tables, lib, sym));
    }
  }
}

TEST_CASE("apply_patch: realizes the paradox binding and replays cleanly") {
  TempDir dir("patch");
  ObjectRegistry reg = paradox_registry(dir.path());
  RelocationTable before = reg.load_table("app");

  reg.begin_mgmt();
  Patch patch;
  patch.symbol_name = "bar";
  patch.requires_filter = "app";
  patch.new_provider = "libb";
  CHECK(apply_patch(reg, "app", patch) == 1);

  RelocationTable after = reg.load_table("app");
  CHECK(after.items[0].provides_so_name == "liba");  // foo untouched
  CHECK(after.items[0] == before.items[0]);          // byte-level minimality
  CHECK(after.items[1].provides_so_name == "libb");
  CHECK(after.items[1].st_value == 0x400);
  CHECK(after.items[1].provides_so_uuid == reg.find("libb")->uuid);

  // The patched table replays; the image differs from the original exactly
  // at the patched offset.
  AddressSpace s1 = assign_bases(after.load_set, 31);
  replay(after, s1);
  AddressSpace s2 = assign_bases(before.load_set, 32);
  replay(before, s2);
  NormalizedImage n1 = normalize(s1);
  NormalizedImage n2 = normalize(s2);
  REQUIRE(n1.entries.size() == 2);
  CHECK(n1.entries[0] == n2.entries[0]);
  CHECK(n1.entries[1] != n2.entries[1]);
  CHECK(n1.entries[1].target == "libb");
  CHECK(n1.entries[1].offset == 0x18);
}

TEST_CASE("apply_patch: requires filter leaves other requirers untouched") {
  TempDir dir("patch-filter");
  ObjectRegistry::init(dir.path());
  ObjectRegistry reg = ObjectRegistry::open(dir.path());

  SharedObject libc_;
  libc_.name = "libc";
  libc_.image_size = 0x1000;
  libc_.exports = {{"malloc", 0x100, 8}};
  SharedObject duma;
  duma.name = "libduma";
  duma.image_size = 0x1000;
  duma.exports = {{"malloc", 0x500, 8}};
  SharedObject libmpm;
  libmpm.name = "libmpm";
  libmpm.image_size = 0x1000;
  libmpm.relocs = {{RelocType::Direct, 0x20, 0, "malloc"}};
  SharedObject app;
  app.name = "app";
  app.kind = ObjectKind::Executable;
  app.image_size = 0x1000;
  app.needed = {"libmpm", "libc", "libduma"};
  app.relocs = {{RelocType::Direct, 0x10, 0, "malloc"}};

  reg.update_obj(libc_);
  reg.update_obj(duma);
  reg.update_obj(libmpm);
  reg.update_obj(app);
  reg.end_mgmt();

  reg.begin_mgmt();
  Patch patch;
  patch.symbol_name = "malloc";
  patch.requires_filter = "libmpm";
  patch.new_provider = "libduma";
  CHECK(apply_patch(reg, "app", patch) == 1);

  RelocationTable table = reg.load_table("app");
  for (const RelocationTableItem& item : table.items) {
    if (item.requires_so_name == "libmpm") {
      CHECK(item.provides_so_name == "libduma");
      CHECK(item.st_value == 0x500);
    } else {
      CHECK(item.provides_so_name == "libc");
    }
  }
}

TEST_CASE("apply_patch: errors") {
  TempDir dir("patch-err");
  ObjectRegistry reg = paradox_registry(dir.path());

  Patch patch;
  patch.symbol_name = "bar";
  patch.new_provider = "libb";
  CHECK_THROWS_AS(apply_patch(reg, "app", patch), Error);  // EPOCH_LOCKED

  reg.begin_mgmt();
  Patch missing = patch;
  missing.symbol_name = "foo";
  missing.new_provider = "libz";
  CHECK_THROWS_AS(apply_patch(reg, "app", missing), Error);  // unknown provider

  SharedObject libz;
  libz.name = "libz";
  libz.image_size = 0x1000;
  reg.update_obj(libz);
  try {
    apply_patch(reg, "app", missing);
    FAIL("expected SYMBOL_NOT_EXPORTED");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::SymbolNotExported);
  }

  Patch nomatch = patch;
  nomatch.symbol_name = "foo";
  nomatch.requires_filter = "libb";  // nothing required by libb binds foo
  nomatch.new_provider = "libb";
  try {
    apply_patch(reg, "app", nomatch);
    FAIL("expected NO_MATCH");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NoMatch);
  }
}

TEST_CASE("apply_patch: provider outside the load set is added") {
  TempDir dir("patch-add");
  ObjectRegistry::init(dir.path());
  ObjectRegistry reg = ObjectRegistry::open(dir.path());

  SharedObject liba;
  liba.name = "liba";
  liba.image_size = 0x1000;
  liba.exports = {{"fn", 0x100, 8}};
  SharedObject interposer;
  interposer.name = "libspy";
  interposer.image_size = 0x2000;
  interposer.exports = {{"fn", 0x800, 8}};
  SharedObject app;
  app.name = "app";
  app.kind = ObjectKind::Executable;
  app.image_size = 0x1000;
  app.needed = {"liba"};
  app.relocs = {{RelocType::Direct, 0x10, 0, "fn"}};

  reg.update_obj(liba);
  reg.update_obj(interposer);
  reg.update_obj(app);
  reg.end_mgmt();
  CHECK(reg.load_table("app").load_set.size() == 2);

  reg.begin_mgmt();
  Patch patch;
  patch.symbol_name = "fn";
  patch.new_provider = "libspy";
  apply_patch(reg, "app", patch);

  RelocationTable table = reg.load_table("app");
  REQUIRE(table.load_set.size() == 3);
  CHECK(table.load_set[2].name == "libspy");
  CHECK(table.load_set[2].image_size == 0x2000);

  // Still replayable; end_mgmt with a clean closure keeps the patch.
  reg.end_mgmt();
  RelocationTable kept = reg.load_table("app");
  CHECK(kept.items[0].provides_so_name == "libspy");
  AddressSpace space = assign_bases(kept.load_set, 77);
  replay(kept, space);
  CHECK(space.writes.size() == 1);
}
