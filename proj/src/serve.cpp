#include "affectlab/serve.hpp"

#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <set>

#include "affectlab/annotation.hpp"
#include "affectlab/error.hpp"
#include "affectlab/metrics.hpp"
#include "text_util.hpp"

namespace affectlab::serve {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<CatalogEntry> parse_catalog(std::string_view text, const fs::path& base_dir) {
  std::vector<CatalogEntry> out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  for (auto line : detail::split(text, '\n')) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty() || line.front() == '#') continue;
    if (line_no == 1 && line.rfind("id,", 0) == 0) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 4) throw ParseError("expected id,path,fps,frame_count", line_no);
    CatalogEntry e;
    e.id = std::string(detail::trim(f[0]));
    e.path = fs::path(std::string(detail::trim(f[1])));
    if (e.path.is_relative()) e.path = base_dir / e.path;
    const auto fps = detail::parse_double(detail::trim(f[2]));
    const auto frames = detail::parse_int(detail::trim(f[3]));
    if (e.id.empty()) throw ParseError("empty video id", line_no);
    if (!fps || !(*fps > 0.0)) throw ParseError("fps must be positive", line_no);
    if (!frames || *frames <= 0) throw ParseError("frame_count must be a positive integer", line_no);
    e.fps = *fps;
    e.frame_count = static_cast<std::size_t>(*frames);
    if (!ids.insert(e.id).second) throw ParseError("duplicate video id " + e.id, line_no);
    out.push_back(std::move(e));
  }
  return out;
}

ServeState load_state(const fs::path& catalog_dir, const fs::path& store, const fs::path& ui_root) {
  if (!fs::is_directory(catalog_dir)) throw IOError("catalog directory not found: " + catalog_dir.string());
  ServeState s;
  for (auto& e : parse_catalog(detail::read_file(catalog_dir / "catalog.csv"), catalog_dir)) s.catalog[e.id] = e;
  fs::create_directories(store);
  s.store = store;
  s.ui_root = ui_root;
  return s;
}

namespace {

// Ids end up in file names.
bool safe_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

std::string media_type(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".mp4" || ext == ".m4v") return "video/mp4";
  if (ext == ".webm") return "video/webm";
  if (ext == ".ogv" || ext == ".ogg") return "video/ogg";
  if (ext == ".mov") return "video/quicktime";
  return "application/octet-stream";
}

void error(httplib::Response& res, int status, const std::string& msg) {
  res.status = status;
  res.set_content(msg + "\n", "text/plain; charset=utf-8");
}

struct StoredTrace {
  fs::path file;
  annotation::AnnotationTrace trace;
};

std::vector<StoredTrace> stored_traces(const ServeState& state, const std::string& video) {
  std::vector<StoredTrace> out;
  const fs::path dir = state.store / video;
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.push_back({f, annotation::read_trace_file(f)});
  return out;
}

}  // namespace

void configure(httplib::Server& server, const ServeState& state) {
  // Serializes the check-then-write of annotation uploads.
  static std::mutex store_mu;

  server.Get("/api/videos", [&state](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const auto& [id, e] : state.catalog) list.push_back({{"id", id}, {"fps", e.fps}, {"frame_count", e.frame_count}});
    res.set_content(list.dump(), "application/json");
  });

  server.Get(R"(/media/([^/]+))", [&state](const httplib::Request& req, httplib::Response& res) {
    const auto it = state.catalog.find(req.matches[1].str());
    if (it == state.catalog.end()) return error(res, 404, "unknown video");
    std::error_code ec;
    const auto size = fs::file_size(it->second.path, ec);
    if (ec) return error(res, 404, "video file missing");
    const fs::path path = it->second.path;
    res.set_header("Accept-Ranges", "bytes");
    res.set_content_provider(static_cast<std::size_t>(size), media_type(path),
                             [path](std::size_t offset, std::size_t length, httplib::DataSink& sink) {
                               std::ifstream in(path, std::ios::binary);
                               if (!in) return false;
                               in.seekg(static_cast<std::streamoff>(offset));
                               std::vector<char> buf(std::min<std::size_t>(length, 1 << 16));
                               in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
                               const auto got = static_cast<std::size_t>(in.gcount());
                               if (got == 0) return false;
                               return sink.write(buf.data(), got);
                             });
  });

  server.Post("/api/annotations", [&state](const httplib::Request& req, httplib::Response& res) {
    annotation::AnnotationTrace trace;
    try {
      trace = annotation::parse_trace(req.body);
    } catch (const ParseError& e) {
      return error(res, 400, e.what());
    }
    if (!state.catalog.count(trace.video_id)) return error(res, 404, "unknown video " + trace.video_id);
    if (!safe_id(trace.annotator_id)) return error(res, 400, "annotator id may only use letters, digits, _ - .");
    const bool overwrite = req.has_param("overwrite") && req.get_param_value("overwrite") == "1";
    const fs::path file = state.store / trace.video_id /
                          (trace.annotator_id + "_" + std::string(annotation::to_string(trace.dimension)) + ".csv");
    std::lock_guard lock(store_mu);
    if (fs::exists(file) && !overwrite) return error(res, 409, "annotation already exists; use ?overwrite=1");
    fs::create_directories(file.parent_path());
    annotation::write_trace_file(file, trace);
    res.status = 201;
    res.set_content(json{{"path", fs::relative(file, state.store).generic_string()},
                         {"samples", trace.samples.size()}}
                        .dump(),
                    "application/json");
  });

  server.Get("/api/annotations", [&state](const httplib::Request& req, httplib::Response& res) {
    const std::string video = req.get_param_value("video");
    if (!state.catalog.count(video)) return error(res, 404, "unknown video " + video);
    json list = json::array();
    try {
      for (const auto& s : stored_traces(state, video))
        list.push_back({{"annotator", s.trace.annotator_id},
                        {"dimension", std::string(annotation::to_string(s.trace.dimension))},
                        {"file", s.file.filename().string()},
                        {"samples", s.trace.samples.size()}});
    } catch (const Error& e) {
      return error(res, 500, e.what());
    }
    res.set_content(list.dump(), "application/json");
  });

  server.Get("/api/agreement", [&state](const httplib::Request& req, httplib::Response& res) {
    const std::string video = req.get_param_value("video");
    const auto it = state.catalog.find(video);
    if (it == state.catalog.end()) return error(res, 404, "unknown video " + video);
    annotation::Dimension dim;
    try {
      dim = annotation::parse_dimension(req.get_param_value("dimension"));
    } catch (const ParseError& e) {
      return error(res, 400, e.what());
    }
    std::vector<std::vector<double>> series;
    std::vector<std::string> ids;
    try {
      for (const auto& s : stored_traces(state, video)) {
        if (s.trace.dimension != dim) continue;
        series.push_back(annotation::resample_to_frames(s.trace, it->second.fps, it->second.frame_count).values);
        ids.push_back(s.trace.annotator_id);
      }
      if (series.size() < 2) return error(res, 400, "need ≥ 2 annotators, have " + std::to_string(series.size()));
      const auto m = metrics::agreement_matrix(series, ids, metrics::AgreementMetric::ccc);
      res.set_content(metrics::render_agreement_csv(m), "text/csv");
    } catch (const Error& e) {
      return error(res, 500, e.what());
    }
  });

  if (!state.ui_root.empty() && fs::is_directory(state.ui_root)) server.set_mount_point("/", state.ui_root.string());
}

void run(const ServeState& state, const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw UsageError("address must look like host:port");
  const auto port = detail::parse_int(address.substr(colon + 1));
  if (!port || *port <= 0 || *port > 65535) throw UsageError("bad port in " + address);
  httplib::Server server;
  configure(server, state);
  if (!server.listen(address.substr(0, colon), static_cast<int>(*port)))
    throw IOError("cannot listen on " + address);
}

}  // namespace affectlab::serve
