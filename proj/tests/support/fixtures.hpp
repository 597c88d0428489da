#pragma once

#include <filesystem>

#include "stablelink/object_model.hpp"
#include "stablelink/registry.hpp"

namespace testsupport {

// The shadowing fixture: app needs [liba, libb] and both libraries export
// foo and bar. First-match resolution binds both symbols from liba; binding
// foo from liba and bar from libb needs a patch.
inline stablelink::SharedObject paradox_app() {
  stablelink::SharedObject app;
  app.name = "app";
  app.kind = stablelink::ObjectKind::Executable;
  app.image_size = 0x1000;
  app.needed = {"liba", "libb"};
  app.relocs = {
      {stablelink::RelocType::Direct, 0x10, 0, "foo"},
      {stablelink::RelocType::Direct, 0x18, 0, "bar"},
  };
  return app;
}

inline stablelink::SharedObject paradox_liba() {
  stablelink::SharedObject lib;
  lib.name = "liba";
  lib.kind = stablelink::ObjectKind::Library;
  lib.image_size = 0x1000;
  lib.exports = {{"foo", 0x100, 8}, {"bar", 0x200, 8}};
  return lib;
}

inline stablelink::SharedObject paradox_libb() {
  stablelink::SharedObject lib;
  lib.name = "libb";
  lib.kind = stablelink::ObjectKind::Library;
  lib.image_size = 0x1000;
  lib.exports = {{"foo", 0x300, 8}, {"bar", 0x400, 8}};
  return lib;
}

// Registry R0 with the three paradox objects, one epoch materialized.
inline stablelink::ObjectRegistry paradox_registry(const std::filesystem::path& root) {
  stablelink::ObjectRegistry::init(root);
  auto reg = stablelink::ObjectRegistry::open(root);
  reg.update_obj(paradox_app());
  reg.update_obj(paradox_liba());
  reg.update_obj(paradox_libb());
  reg.end_mgmt();
  return reg;
}

}  // namespace testsupport
