// Acceptance suite: each criterion prints one PASS/FAIL line; the process
// exits nonzero if any criterion fails. Budgets are asserted, not advisory.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "stablelink/bench.hpp"
#include "stablelink/error.hpp"
#include "stablelink/executor.hpp"
#include "stablelink/inspector.hpp"
#include "stablelink/registry.hpp"
#include "stablelink/resolver.hpp"
#include "support/fixtures.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace stablelink;
using namespace testsupport;

namespace {

int failures = 0;
int checked = 0;

#define REQUIRE_TRUE(cond)                                              \
  do {                                                                  \
    ++checked;                                                          \
    if (!(cond)) {                                                      \
      std::printf("      assertion failed at %s:%d: %s\n", __FILE__,    \
                  __LINE__, #cond);                                     \
      return false;                                                     \
    }                                                                   \
  } while (0)

std::string golden(const std::string& name) {
  std::ifstream in(std::string(STABLELINK_TEST_GOLDEN_DIR) + "/" + name,
                   std::ios::binary);
  if (!in.good()) throw Error(Errc::Io, "missing golden file " + name);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void report(int number, const std::string& name, bool ok, double seconds,
            const std::string& note = "") {
  std::printf("%s  criterion %d: %-38s (%6.2fs)%s%s\n", ok ? "PASS" : "FAIL", number,
              name.c_str(), seconds, note.empty() ? "" : "  ", note.c_str());
  if (!ok) ++failures;
}

double run_criterion(int number, const std::string& name, double budget_s,
                     const std::function<bool(std::string&)>& body) {
  std::string note;
  auto start = std::chrono::steady_clock::now();
  bool ok = false;
  try {
    ok = body(note);
  } catch (const std::exception& e) {
    note = std::string("exception: ") + e.what();
  }
  double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (ok && budget_s > 0 && elapsed >= budget_s) {
    ok = false;
    note += " [over " + std::to_string(budget_s) + "s budget]";
  }
  report(number, name, ok, elapsed, note);
  return elapsed;
}

ObjectRegistry build_registry(const std::filesystem::path& root,
                              const std::vector<SharedObject>& objects) {
  ObjectRegistry::init(root);
  ObjectRegistry reg = ObjectRegistry::open(root);
  for (const SharedObject& obj : objects) reg.update_obj(obj);
  return reg;
}

// --------------------------------------------------------------------------

bool criterion_keystone(std::string& note) {
  Rng rng(20250801);
  TempDir dir("acc1");
  for (int i = 0; i < 1000; ++i) {
    std::filesystem::path root = dir / ("r" + std::to_string(i));
    ObjectRegistry reg = build_registry(root, random_registry_objects(rng));
    RelocationTable table = materialize(reg, "exe", 1);
    for (int s = 0; s < 3; ++s) {
      uint64_t seed = rng.next();
      AddressSpace replayed = assign_bases(table.load_set, seed);
      replay(table, replayed);
      AddressSpace online = assign_bases(table.load_set, rng.next());
      dynamic_load(reg, "exe", online);
      REQUIRE_TRUE(normalize(replayed) == normalize(online));
    }
    std::filesystem::remove_all(root);
  }
  note = "1000 registries x 3 seeds";
  return true;
}

bool criterion_aslr_invariance(std::string& note) {
  Rng rng(20250802);
  TempDir dir("acc2");
  for (int i = 0; i < 100; ++i) {
    std::filesystem::path root = dir / ("r" + std::to_string(i));
    ObjectRegistry reg = build_registry(root, random_registry_objects(rng));
    RelocationTable table = materialize(reg, "exe", 1);

    std::vector<AddressSpace> spaces;
    for (int s = 0; s < 5; ++s) {
      AddressSpace space = assign_bases(table.load_set, 1000 + static_cast<uint64_t>(s));
      replay(table, space);
      spaces.push_back(std::move(space));
    }
    NormalizedImage reference = normalize(spaces[0]);
    for (int s = 1; s < 5; ++s) REQUIRE_TRUE(normalize(spaces[s]) == reference);
    for (int a = 0; a < 5; ++a) {
      for (int b = a + 1; b < 5; ++b) {
        REQUIRE_TRUE(spaces[a].writes != spaces[b].writes);
      }
    }
    std::filesystem::remove_all(root);
  }
  note = "100 registries x 5 seeds";
  return true;
}

bool criterion_paradox(std::string& note) {
  TempDir dir("acc3");
  ObjectRegistry reg = paradox_registry(dir.path());

  RelocationTable table = reg.load_table("app");
  REQUIRE_TRUE(table.items.size() == 2);
  REQUIRE_TRUE(table.items[0].symbol_name == "foo");
  REQUIRE_TRUE(table.items[0].provides_so_name == "liba");
  REQUIRE_TRUE(table.items[1].symbol_name == "bar");
  REQUIRE_TRUE(table.items[1].provides_so_name == "liba");

  reg.begin_mgmt();
  Patch patch;
  patch.symbol_name = "bar";
  patch.requires_filter = "app";
  patch.new_provider = "libb";
  REQUIRE_TRUE(apply_patch(reg, "app", patch) == 1);

  RelocationTable patched = reg.load_table("app");
  REQUIRE_TRUE(patched.items[0].provides_so_name == "liba");
  REQUIRE_TRUE(patched.items[1].provides_so_name == "libb");
  REQUIRE_TRUE(patched.items[1].st_value == 0x400);

  AddressSpace space = assign_bases(patched.load_set, 42);
  replay(patched, space);
  REQUIRE_TRUE(space.writes.size() == 2);
  NormalizedImage image = normalize(space);
  REQUIRE_TRUE(image.entries[0].target == "liba");
  REQUIRE_TRUE(image.entries[1].target == "libb");
  note = "foo->liba, bar->libb after patch";
  return true;
}

bool criterion_vignette_queries(std::string& note) {
  Rng rng(20250804);

  // Randomized ABI-compatibility instances against the nested-loop oracle.
  for (int i = 0; i < 500; ++i) {
    RelocationTable table = random_table(rng);
    AbiTable abi;
    abi.library = "libx";
    uint64_t rows = rng.below(8);
    for (uint64_t r = 0; r < rows; ++r)
      abi.rows.push_back({symbol_pool_name(rng.below(40)), rng.below(4096), 8});
    std::string old_name = table.load_set[rng.below(table.load_set.size())].name;
    REQUIRE_TRUE(query_abi_compat(table, old_name, abi) ==
                 naive_abi_compat(table, old_name, abi));
  }

  // Randomized CVE instances.
  TempDir dir("acc4");
  int cve_checks = 0;
  for (int i = 0; i < 50; ++i) {
    std::filesystem::path root = dir / ("r" + std::to_string(i));
    RandomRegistrySpec spec;
    spec.max_objects = 8;
    spec.max_relocs = 60;
    ObjectRegistry reg = build_registry(root, random_registry_objects(rng, spec));
    reg.end_mgmt();
    std::vector<RelocationTable> tables;
    for (const auto& [name, entry] : reg.objects())
      if (reg.has_table(name)) tables.push_back(reg.load_table(name));
    for (int probe = 0; probe < 10; ++probe) {
      std::string lib = probe % 2 ? "exe" : "lib" + std::to_string(rng.below(8));
      std::string sym = symbol_pool_name(rng.below(40));
      REQUIRE_TRUE(query_cve(reg, lib, sym) == naive_cve(tables, lib, sym));
      ++cve_checks;
    }
    std::filesystem::remove_all(root);
  }

  // Concrete fixtures: broken symbol b; app1 flagged, app2 not.
  {
    RelocationTable table;
    table.executable = "app";
    table.executable_uuid = ObjectUUID{1};
    table.load_set = {{"app", ObjectUUID{1}, 4096}, {"libfoo", ObjectUUID{2}, 4096}};
    RelocationTableItem item;
    item.type = RelocType::Direct;
    item.offset = 0x10;
    item.st_value = 0x80;
    item.st_size = 8;
    item.requires_so_uuid = ObjectUUID{1};
    item.provides_so_uuid = ObjectUUID{2};
    item.symbol_name = "b";
    item.requires_so_name = "app";
    item.provides_so_name = "libfoo";
    table.items = {item};
    AbiTable new_abi;
    new_abi.library = "libfoo";
    new_abi.rows = {{"a", 0, 8}};
    auto broken = query_abi_compat(table, "libfoo", new_abi);
    REQUIRE_TRUE(broken.size() == 1);
    BrokenBinding expected{"b", "app"};
    REQUIRE_TRUE(broken[0] == expected);
  }
  {
    std::filesystem::path root = dir / "cve-fixture";
    SharedObject libbar, libother, app1, app2;
    libbar.name = "libbar";
    libbar.image_size = 4096;
    libbar.exports = {{"baz", 0x100, 8}};
    libother.name = "libother";
    libother.image_size = 4096;
    libother.exports = {{"baz", 0x200, 8}};
    app1.name = "app1";
    app1.kind = ObjectKind::Executable;
    app1.image_size = 4096;
    app1.needed = {"libbar"};
    app1.relocs = {{RelocType::Direct, 0x10, 0, "baz"}};
    app2 = app1;
    app2.name = "app2";
    app2.needed = {"libother"};
    ObjectRegistry reg = build_registry(root, {libbar, libother, app1, app2});
    reg.end_mgmt();
    std::vector<std::string> flagged = query_cve(reg, "libbar", "baz");
    REQUIRE_TRUE(flagged == std::vector<std::string>{"app1"});
  }
  note = "500 + " + std::to_string(cve_checks) + " oracle instances + fixtures";
  return true;
}

bool criterion_mode_gating(std::string& note) {
  // EPOCH_LOCKED leaves the registry directory byte-identical.
  {
    TempDir dir("acc5a");
    ObjectRegistry reg = paradox_registry(dir.path());
    uint64_t before = dir_digest(dir.path());
    bool locked = false;
    try {
      reg.update_obj(paradox_liba());
    } catch (const Error& e) {
      locked = e.code() == Errc::EpochLocked;
    }
    REQUIRE_TRUE(locked);
    REQUIRE_TRUE(dir_digest(dir.path()) == before);
  }

  // Simulated crash at every commit step: the manifest afterwards is either
  // the old bytes or the new bytes, and the registry reopens cleanly.
  const char* steps[] = {"materialized", "table_written:app", "tables_written",
                         "manifest_temp", "committed"};
  for (const char* step : steps) {
    TempDir dir(std::string("acc5b-") + step);
    ObjectRegistry::init(dir.path());
    ObjectRegistry reg = ObjectRegistry::open(dir.path());
    reg.update_obj(paradox_liba());
    reg.update_obj(paradox_libb());
    reg.update_obj(paradox_app());

    std::string old_manifest = read_file(dir.path() / "manifest");
    reg.commit_hook = [&](std::string_view at) {
      if (at == step) throw std::runtime_error("crash");
    };
    bool threw = false;
    try {
      reg.end_mgmt();
    } catch (const std::exception&) {
      threw = true;
    }
    REQUIRE_TRUE(threw);

    std::string now = read_file(dir.path() / "manifest");
    ObjectRegistry reopened = ObjectRegistry::open(dir.path());
    if (now == old_manifest) {
      REQUIRE_TRUE(reopened.mode() == Mode::Management);
      ObjectRegistry retry = ObjectRegistry::open(dir.path());
      retry.end_mgmt();
      REQUIRE_TRUE(retry.epoch_id() == 1);
    } else {
      REQUIRE_TRUE(reopened.mode() == Mode::Epoch);
      REQUIRE_TRUE(reopened.epoch_id() == 1);
      REQUIRE_TRUE(reopened.load_table("app").items.size() == 2);
    }
  }
  note = "locked update + 5 crash points";
  return true;
}

bool criterion_scaling(std::string& note) {
  TempDir dir("acc6");
  BenchConfig cfg;
  cfg.trials = 10;
  cfg.warmups = 5;
  cfg.seed = 1;

  std::vector<std::pair<uint64_t, uint64_t>> grid;
  for (uint64_t n : {1, 10, 100})
    for (uint64_t f : {1, 10, 100, 1000}) grid.emplace_back(n, f);

  BenchResult result = run_bench(cfg, grid, dir / "work");

  // Probe monotonicity along both axes.
  auto probes_at = [&](uint64_t n, uint64_t f) -> uint64_t {
    for (const BenchRow& row : result.rows)
      if (row.mode == "ONLINE" && row.n == n && row.f_per_object == f) return row.probes;
    return 0;
  };
  for (uint64_t f : {1, 10, 100, 1000}) {
    REQUIRE_TRUE(probes_at(1, f) <= probes_at(10, f));
    REQUIRE_TRUE(probes_at(10, f) <= probes_at(100, f));
  }
  for (uint64_t n : {1, 10, 100}) {
    REQUIRE_TRUE(probes_at(n, 1) <= probes_at(n, 10));
    REQUIRE_TRUE(probes_at(n, 10) <= probes_at(n, 100));
    REQUIRE_TRUE(probes_at(n, 100) <= probes_at(n, 1000));
  }

  // Wall time at the heaviest grid point: replay beats online resolution.
  double online = 0, replayed = 0;
  for (const BenchRow& row : result.rows) {
    if (row.n == 100 && row.f_per_object == 1000) {
      if (row.mode == "ONLINE") online = row.mean_s;
      if (row.mode == "REPLAY") replayed = row.mean_s;
    }
  }
  REQUIRE_TRUE(online > 0);
  REQUIRE_TRUE(replayed > 0);
  REQUIRE_TRUE(replayed < online);

  char buf[128];
  std::snprintf(buf, sizeof(buf), "speedup at (100,1000): %.2fx (%.1fms -> %.1fms)",
                online / replayed, online * 1e3, replayed * 1e3);
  note = buf;
  return true;
}

bool criterion_strategy_equivalence(std::string& note) {
  Rng rng(20250807);
  std::vector<SharedObject> objects;
  for (int i = 0; i < 30; ++i)
    objects.push_back(
        random_object(rng, "lib" + std::to_string(i), ObjectKind::Library, 60));
  LoadOrder order;
  for (size_t i = 0; i < objects.size(); ++i)
    order.push_back({&objects[i], ObjectUUID{static_cast<uint64_t>(i + 1)}});

  ResolutionIndex linear(order, IndexStrategy::Linear);
  ResolutionIndex hashed(order, IndexStrategy::Hashed);
  int hits = 0;
  for (int i = 0; i < 10000; ++i) {
    std::string name = symbol_pool_name(rng.below(80));  // ~25% misses
    auto a = linear.try_lookup(name);
    auto b = hashed.try_lookup(name);
    REQUIRE_TRUE(a.has_value() == b.has_value());
    if (a) {
      ++hits;
      REQUIRE_TRUE(a->provider == b->provider);
      REQUIRE_TRUE(a->symbol == b->symbol);
    }
  }
  note = "10000 probes, " + std::to_string(hits) + " hits";
  return true;
}

bool criterion_format_fidelity(std::string& note) {
  Rng rng(20250808);
  TempDir dir("acc8");

  auto row_multiset = [](const RelocationTable& table) {
    std::multiset<std::string> rows;
    for (const RelocationTableItem& i : table.items) {
      rows.insert(std::string(reloc_type_name(i.type)) + "|" + std::to_string(i.addend) +
                  "|" + std::to_string(i.offset) + "|" + std::to_string(i.st_value) +
                  "|" + std::to_string(i.st_size) + "|" + i.requires_so_uuid.hex() + "|" +
                  i.provides_so_uuid.hex() + "|" + i.symbol_name + "|" +
                  i.requires_so_name + "|" + i.provides_so_name);
    }
    return rows;
  };

  for (int i = 0; i < 100; ++i) {
    RelocationTable table = random_table(rng);
    RelocationTable from_json = import_json(export_json(table));
    RelocationTable from_csv = import_csv(export_csv(table));
    std::filesystem::path db = dir / "t.db";
    export_relational(table, db);
    RelocationTable from_db = import_relational(db);

    REQUIRE_TRUE(from_json == table);
    REQUIRE_TRUE(from_csv == table);
    REQUIRE_TRUE(from_db == table);
    REQUIRE_TRUE(row_multiset(from_json) == row_multiset(from_csv));
    REQUIRE_TRUE(row_multiset(from_csv) == row_multiset(from_db));
  }

  // Golden bytes for the canonical .rtab and CSV of the paradox fixture.
  TempDir preg("acc8-paradox");
  ObjectRegistry reg = paradox_registry(preg.path());
  RelocationTable table = reg.load_table("app");
  REQUIRE_TRUE(serialize_rtab(table) == golden("paradox.rtab"));
  REQUIRE_TRUE(export_csv(table) == golden("paradox.csv"));
  note = "100 tables x 3 formats + goldens";
  return true;
}

}  // namespace

int main() {
  std::printf("stablelink acceptance suite\n");
  double total = 0;
  total += run_criterion(1, "replay/online keystone equivalence", 60, criterion_keystone);
  total += run_criterion(2, "ASLR invariance of normalized images", 10,
                         criterion_aslr_invariance);
  total += run_criterion(3, "paradox fixture and patch", 0, criterion_paradox);
  total += run_criterion(4, "vignette queries vs oracles", 10, criterion_vignette_queries);
  total += run_criterion(5, "mode gating and commit atomicity", 0, criterion_mode_gating);
  total += run_criterion(6, "scaling direction and replay win", 300, criterion_scaling);
  total += run_criterion(7, "LINEAR/HASHED strategy equivalence", 5,
                         criterion_strategy_equivalence);
  total += run_criterion(8, "export format fidelity", 0, criterion_format_fidelity);

  std::printf("%d assertions, %d failed criteria, %.2fs total\n", checked, failures, total);
  return failures == 0 ? 0 : 1;
}
