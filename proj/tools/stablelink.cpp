// stablelink: manage a shared-object registry, materialize relocation
// tables at the end of management time, replay them into simulated address
// spaces, and inspect or patch the resulting bindings.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stablelink/bench.hpp"
#include "stablelink/error.hpp"
#include "stablelink/executor.hpp"
#include "stablelink/inspector.hpp"
#include "stablelink/registry.hpp"
#include "stablelink/resolver.hpp"

namespace fs = std::filesystem;
using namespace stablelink;

namespace {

fs::path registry_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("STABLELINK_REGISTRY")) {
    if (*env) return env;
  }
  throw CLI::ValidationError(
      "no registry selected: pass --registry or set STABLELINK_REGISTRY");
}

ObjectRegistry open_registry(const std::string& flag) {
  return ObjectRegistry::open(registry_root(flag));
}

void print_status(const StatusReport& report) {
  std::cout << "mode: " << mode_name(report.mode) << "\n";
  std::cout << "epoch_id: " << report.epoch_id << "\n";
  std::cout << "objects: " << report.object_count << "\n";
  std::cout << "tables:\n";
  for (const auto& ts : report.tables) {
    std::cout << "  " << ts.executable << ": ";
    if (!ts.present) {
      std::cout << "none\n";
    } else {
      std::cout << "epoch " << ts.provenance_epoch << (ts.stale ? " (stale)" : " (current)")
                << "\n";
    }
  }
}

// Registry name, or a path to a standalone .sof file.
SharedObject load_library_arg(const ObjectRegistry* reg, const std::string& arg) {
  bool looks_like_path =
      arg.find('/') != std::string::npos || (arg.size() > 4 && arg.ends_with(".sof"));
  if (looks_like_path && fs::exists(arg)) return parse_sof(read_file(arg));
  if (reg) {
    if (const RegistryEntry* entry = reg->find(arg)) return entry->object;
  }
  if (fs::exists(arg)) return parse_sof(read_file(arg));
  throw Error(Errc::UnknownObject, "'" + arg + "' is neither a registry object nor a file");
}

std::vector<std::pair<uint64_t, uint64_t>> parse_grid(const std::string& spec) {
  // "<n1>,<n2>,...x<f1>,<f2>,..."
  size_t cross = spec.find('x');
  if (cross == std::string::npos)
    throw CLI::ValidationError("--grid expects '<n-list>x<f-list>', e.g. 1,10,100x1,10");
  auto parse_list = [](const std::string& text) {
    std::vector<uint64_t> values;
    size_t start = 0;
    while (start <= text.size()) {
      size_t end = text.find(',', start);
      std::string token =
          text.substr(start, end == std::string::npos ? std::string::npos : end - start);
      if (token.empty() || token.find_first_not_of("0123456789") != std::string::npos)
        throw CLI::ValidationError("--grid: bad list entry '" + token + "'");
      values.push_back(std::stoull(token));
      if (end == std::string::npos) break;
      start = end + 1;
    }
    return values;
  };
  std::vector<std::pair<uint64_t, uint64_t>> grid;
  for (uint64_t n : parse_list(spec.substr(0, cross)))
    for (uint64_t f : parse_list(spec.substr(cross + 1))) grid.emplace_back(n, f);
  return grid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stable-linking toolkit"};
  app.require_subcommand(1);
  std::string registry_flag;
  app.add_option("--registry", registry_flag,
                 "registry root (default: $STABLELINK_REGISTRY)");

  // --- init ---
  std::string init_dir;
  CLI::App* cmd_init = app.add_subcommand("init", "create an empty registry");
  cmd_init->add_option("dir", init_dir, "registry directory")->required();

  // --- begin-mgmt / end-mgmt / status ---
  CLI::App* cmd_begin = app.add_subcommand("begin-mgmt", "enter management time");
  CLI::App* cmd_end =
      app.add_subcommand("end-mgmt", "materialize tables and enter the next epoch");
  CLI::App* cmd_status = app.add_subcommand("status", "show registry state");

  // --- add ---
  std::string add_file;
  CLI::App* cmd_add = app.add_subcommand("add", "insert or replace a shared object");
  cmd_add->add_option("file", add_file, "a .sof document")->required();

  // --- run ---
  std::string run_exe;
  uint64_t run_seed = 1;
  bool run_trace = false;
  CLI::App* cmd_run = app.add_subcommand(
      "run", "load an executable (table replay in epoch, online during management)");
  cmd_run->add_option("exe", run_exe)->required();
  cmd_run->add_option("--seed", run_seed, "ASLR seed (default 1)");
  cmd_run->add_flag("--trace", run_trace, "print one line per applied relocation");

  // --- materialize-dump ---
  std::string dump_exe;
  CLI::App* cmd_dump = app.add_subcommand(
      "materialize-dump", "materialize now and print the canonical table");
  cmd_dump->add_option("exe", dump_exe)->required();

  // --- export ---
  std::string export_exe, export_format = "json", export_out;
  CLI::App* cmd_export = app.add_subcommand("export", "write a stored table to a file");
  cmd_export->add_option("exe", export_exe)->required();
  cmd_export->add_option("--format", export_format, "json|csv|db")->required();
  cmd_export->add_option("--out", export_out, "output path")->required();

  // --- abi ---
  std::string abi_lib;
  CLI::App* cmd_abi = app.add_subcommand("abi", "print a library's exported symbols");
  cmd_abi->add_option("lib", abi_lib, "registry name or .sof path")->required();

  // --- check-abi ---
  std::string check_exe, check_old, check_new;
  CLI::App* cmd_check = app.add_subcommand(
      "check-abi", "bindings of exe against --old that --new would break");
  cmd_check->add_option("exe", check_exe)->required();
  cmd_check->add_option("--old", check_old, "library name bound in the table")->required();
  cmd_check->add_option("--new", check_new, "candidate replacement (.sof path or name)")
      ->required();

  // --- audit-cve ---
  std::string cve_lib, cve_symbol;
  CLI::App* cmd_cve = app.add_subcommand(
      "audit-cve", "executables whose tables bind a symbol from a library");
  cmd_cve->add_option("--lib", cve_lib)->required();
  cmd_cve->add_option("--symbol", cve_symbol)->required();

  // --- patch ---
  std::string patch_exe, patch_symbol, patch_requires, patch_provider;
  CLI::App* cmd_patch =
      app.add_subcommand("patch", "rebind selected relocations to another provider");
  cmd_patch->add_option("exe", patch_exe)->required();
  cmd_patch->add_option("--symbol", patch_symbol)->required();
  cmd_patch->add_option("--requires", patch_requires,
                        "only items required by this object");
  cmd_patch->add_option("--provider", patch_provider, "new providing library")->required();

  // --- gen-bench ---
  uint64_t gen_n = 1, gen_f = 1, gen_total = 0, gen_seed = 0;
  std::string gen_out;
  CLI::App* cmd_gen = app.add_subcommand("gen-bench", "generate a synthetic registry");
  cmd_gen->add_option("--n", gen_n, "number of shared libraries");
  CLI::Option* gen_f_opt = cmd_gen->add_option("--f", gen_f, "functions per library");
  cmd_gen->add_option("--total-functions", gen_total,
                      "distribute this many functions over the n libraries")
      ->excludes(gen_f_opt);
  cmd_gen->add_option("--seed", gen_seed);
  cmd_gen->add_option("--out", gen_out, "registry directory to create")->required();

  // --- bench ---
  std::string bench_grid, bench_out, bench_workdir;
  uint64_t bench_trials = 10, bench_warmups = 5, bench_seed = 1;
  CLI::App* cmd_bench = app.add_subcommand("bench", "time ONLINE vs REPLAY over a grid");
  cmd_bench->add_option("--grid", bench_grid, "'<n-list>x<f-list>', e.g. 1,10,100x1,10")
      ->required();
  cmd_bench->add_option("--out", bench_out, "CSV output path")->required();
  cmd_bench->add_option("--trials", bench_trials);
  cmd_bench->add_option("--warmups", bench_warmups);
  cmd_bench->add_option("--seed", bench_seed);
  cmd_bench->add_option("--workdir", bench_workdir,
                        "where synthetic registries are built (default: temp)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (cmd_init->parsed()) {
      ObjectRegistry::init(init_dir);
      std::cout << "initialized registry at " << init_dir << "\n";
    } else if (cmd_begin->parsed()) {
      ObjectRegistry reg = open_registry(registry_flag);
      reg.begin_mgmt();
      std::cout << "management time (epoch_id " << reg.epoch_id() << ")\n";
    } else if (cmd_end->parsed()) {
      ObjectRegistry reg = open_registry(registry_flag);
      reg.end_mgmt();
      std::cout << "epoch " << reg.epoch_id() << " begun\n";
    } else if (cmd_status->parsed()) {
      print_status(open_registry(registry_flag).status());
    } else if (cmd_add->parsed()) {
      ObjectRegistry reg = open_registry(registry_flag);
      SharedObject obj = parse_sof(read_file(add_file));
      reg.update_obj(obj);
      std::cout << "added " << obj.name << " (" << content_uuid(obj).hex() << ")\n";
    } else if (cmd_run->parsed()) {
      ObjectRegistry reg = open_registry(registry_flag);
      std::string trace;
      std::string* trace_ptr = run_trace ? &trace : nullptr;
      if (reg.mode() == Mode::Epoch && reg.has_table(run_exe)) {
        RelocationTable table = reg.load_table(run_exe);
        AddressSpace space = assign_bases(table.load_set, run_seed);
        replay(table, space, trace_ptr);
        std::cout << "replayed " << table.items.size() << " relocations across "
                  << space.extents.size() << " objects (epoch " << table.epoch_id
                  << ", seed " << run_seed << ")\n";
      } else {
        LoadOrder order = compute_load_order(reg, run_exe);
        std::vector<LoadSetEntry> load_set;
        for (const LoadOrderEntry& e : order)
          load_set.push_back(LoadSetEntry{e.object->name, e.uuid, e.object->image_size});
        AddressSpace space = assign_bases(load_set, run_seed);
        LookupStats stats;
        dynamic_load(reg, run_exe, space, IndexStrategy::Hashed, &stats, trace_ptr);
        std::cout << "dynamically loaded " << space.writes.size()
                  << " relocations across " << space.extents.size() << " objects ("
                  << stats.total_probes() << " probes, seed " << run_seed << ")\n";
      }
      if (run_trace) std::cout << trace;
    } else if (cmd_dump->parsed()) {
      ObjectRegistry reg = open_registry(registry_flag);
      RelocationTable table = materialize(reg, dump_exe, reg.epoch_id());
      std::cout << serialize_rtab(table);
    } else if (cmd_export->parsed()) {
      ObjectRegistry reg = open_registry(registry_flag);
      ExportFormat format;
      if (!parse_export_format(export_format, format))
        throw CLI::ValidationError("--format must be json, csv or db");
      export_table(reg.load_table(export_exe), format, export_out);
      std::cout << "wrote " << export_out << "\n";
    } else if (cmd_abi->parsed()) {
      std::optional<ObjectRegistry> reg;
      if (!registry_flag.empty() || std::getenv("STABLELINK_REGISTRY"))
        reg = open_registry(registry_flag);
      AbiTable abi = abi_table(load_library_arg(reg ? &*reg : nullptr, abi_lib));
      std::cout << "library: " << abi.library << " uuid: " << abi.uuid.hex() << "\n";
      for (const SymbolDef& row : abi.rows)
        std::printf("%-32s 0x%llx 0x%llx\n", row.name.c_str(),
                    static_cast<unsigned long long>(row.st_value),
                    static_cast<unsigned long long>(row.st_size));
    } else if (cmd_check->parsed()) {
      ObjectRegistry reg = open_registry(registry_flag);
      AbiTable new_abi = abi_table(load_library_arg(&reg, check_new));
      auto broken = query_abi_compat(reg.load_table(check_exe), check_old, new_abi);
      if (broken.empty()) {
        std::cout << "compatible: no binding of " << check_exe << " against " << check_old
                  << " is missing from the new ABI\n";
      } else {
        for (const BrokenBinding& b : broken)
          std::cout << b.symbol_name << " (required by " << b.requires_so_name << ")\n";
        return 1;
      }
    } else if (cmd_cve->parsed()) {
      ObjectRegistry reg = open_registry(registry_flag);
      for (const std::string& exe : query_cve(reg, cve_lib, cve_symbol))
        std::cout << exe << "\n";
    } else if (cmd_patch->parsed()) {
      ObjectRegistry reg = open_registry(registry_flag);
      Patch patch;
      patch.symbol_name = patch_symbol;
      patch.new_provider = patch_provider;
      if (!patch_requires.empty()) patch.requires_filter = patch_requires;
      size_t patched = apply_patch(reg, patch_exe, patch);
      std::cout << "patched " << patched << " item" << (patched == 1 ? "" : "s") << " of "
                << patch_exe << "\n";
    } else if (cmd_gen->parsed()) {
      BenchConfig cfg;
      cfg.n = gen_n;
      cfg.f_per_object =
          gen_total > 0 ? std::max<uint64_t>(1, gen_total / std::max<uint64_t>(gen_n, 1))
                        : gen_f;
      cfg.seed = gen_seed;
      generate_synthetic(cfg, gen_out);
      std::cout << "generated registry at " << gen_out << " (n=" << cfg.n
                << ", f=" << cfg.f_per_object << ")\n";
    } else if (cmd_bench->parsed()) {
      BenchConfig cfg;
      cfg.trials = bench_trials;
      cfg.warmups = bench_warmups;
      cfg.seed = bench_seed;
      fs::path workdir = bench_workdir.empty()
                             ? fs::temp_directory_path() / "stablelink-bench"
                             : fs::path(bench_workdir);
      BenchResult result = run_bench(cfg, parse_grid(bench_grid), workdir);
      write_file_atomic(bench_out, bench_csv(result));
      std::cout << bench_csv(result);
      std::cout << "wrote " << bench_out << "\n";
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
