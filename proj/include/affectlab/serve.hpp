#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace httplib {
class Server;
}

namespace affectlab::serve {

struct CatalogEntry {
  std::string id;
  std::filesystem::path path;
  double fps = 25.0;
  std::size_t frame_count = 0;
};

// catalog.csv lines `id,path,fps,frame_count`; an optional header line starting
// with `id,` is skipped. Relative paths resolve against base_dir.
std::vector<CatalogEntry> parse_catalog(std::string_view text, const std::filesystem::path& base_dir);

struct ServeState {
  std::map<std::string, CatalogEntry> catalog;  // immutable once serving
  std::filesystem::path store;                  // <store>/<video>/<annotator>_<dimension>.csv
  std::filesystem::path ui_root;                // static files served at /, optional
};

// Reads <catalog_dir>/catalog.csv and creates the store directory if needed.
ServeState load_state(const std::filesystem::path& catalog_dir, const std::filesystem::path& store,
                      const std::filesystem::path& ui_root = {});

// Installs every route on the server. The state must outlive the server.
void configure(httplib::Server& server, const ServeState& state);

// "host:port" -> listens until stopped.
void run(const ServeState& state, const std::string& address);

}  // namespace affectlab::serve
