#include "affectlab/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>

#include "affectlab/annotation.hpp"
#include "affectlab/checkpoint.hpp"
#include "affectlab/dataio.hpp"
#include "affectlab/error.hpp"
#include "affectlab/eval.hpp"
#include "affectlab/image.hpp"
#include "affectlab/metrics.hpp"
#include "affectlab/preproc.hpp"
#include "affectlab/serve.hpp"
#include "affectlab/train.hpp"
#include "text_util.hpp"

namespace affectlab::cli {

namespace fs = std::filesystem;

namespace {

std::string data_root() {
  const char* v = std::getenv("AFFECTLAB_DATA");
  return v ? v : "";
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Traces of one video and one dimension, resampled to a common frame grid.
struct TraceSet {
  std::vector<annotation::AnnotationTrace> traces;
  std::vector<annotation::FrameSeries> series;
};

TraceSet load_traces(const std::vector<std::string>& files, double fps, std::size_t frames) {
  if (!(fps > 0.0)) throw UsageError("--fps must be positive");
  TraceSet set;
  for (const auto& f : files) set.traces.push_back(annotation::read_trace_file(f));
  const auto& first = set.traces.front();
  for (const auto& t : set.traces) {
    if (t.video_id != first.video_id)
      throw UsageError("traces are for different videos: " + first.video_id + " and " + t.video_id);
    if (t.dimension != first.dimension) throw UsageError("traces mix valence and arousal");
  }
  if (frames == 0) {
    // Enough frames to cover the longest trace.
    double last = 0.0;
    for (const auto& t : set.traces) last = std::max(last, t.samples.back().time);
    frames = static_cast<std::size_t>(std::floor(last * fps + 1e-9)) + 1;
  }
  for (const auto& t : set.traces) set.series.push_back(annotation::resample_to_frames(t, fps, frames));
  return set;
}

struct AgreementArgs {
  std::vector<std::string> traces;
  double fps = annotation::kDefaultFps;
  std::size_t frames = 0;
  std::string metric = "ccc";
  bool csv = false;
};

int cmd_agreement(const AgreementArgs& a, std::ostream& out) {
  if (a.traces.size() < 2) throw UsageError("agreement needs at least 2 trace files");
  const auto set = load_traces(a.traces, a.fps, a.frames);
  std::vector<std::vector<double>> values;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < set.traces.size(); ++i) {
    values.push_back(set.series[i].values);
    ids.push_back(set.traces[i].annotator_id);
  }
  metrics::AgreementMetric metric;
  if (a.metric == "ccc") metric = metrics::AgreementMetric::ccc;
  else if (a.metric == "pearson") metric = metrics::AgreementMetric::pearson;
  else throw UsageError("--metric must be ccc or pearson");
  const auto m = metrics::agreement_matrix(values, ids, metric);
  out << (a.csv ? metrics::render_agreement_csv(m) : metrics::render_agreement_table(m));
  out << "mean " << fmt("%.4f", metrics::mean_agreement(m)) << '\n';
  return kExitOk;
}

struct MergeArgs {
  std::vector<std::string> traces;
  double fps = annotation::kDefaultFps;
  std::size_t frames = 0;
  std::string out;
};

int cmd_merge(const MergeArgs& a, std::ostream& out) {
  const auto set = load_traces(a.traces, a.fps, a.frames);
  const auto merged = annotation::merge_annotators(set.series);
  annotation::write_series_file(a.out, merged);
  out << "wrote " << merged.values.size() << " frames for " << merged.video_id << " to " << a.out << '\n';
  return kExitOk;
}

struct BuildManifestArgs {
  std::string frames_root, series_dir, out;
};

int cmd_build_manifest(const BuildManifestArgs& a, std::ostream& out) {
  std::map<std::string, annotation::FrameSeries> valence, arousal;
  if (!fs::is_directory(a.series_dir)) throw IOError("series directory not found: " + a.series_dir);
  for (const auto& e : fs::directory_iterator(a.series_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string stem = e.path().stem().string();
    const auto us = stem.rfind('_');
    if (us == std::string::npos) continue;
    const std::string dim = stem.substr(us + 1);
    if (dim != "valence" && dim != "arousal") continue;
    auto s = annotation::read_series_file(e.path());
    (dim == "valence" ? valence : arousal)[stem.substr(0, us)] = std::move(s);
  }
  if (valence.empty()) throw UsageError("no <video>_valence.csv series files in " + a.series_dir);
  const auto records = annotation::build_manifest(a.frames_root, valence, arousal);
  annotation::write_manifest(a.out, records);
  out << "wrote " << records.size() << " records for " << valence.size() << " videos to " << a.out << '\n';
  return kExitOk;
}

struct SplitArgs {
  std::string manifest, ratio = "2:1", out;
  std::uint64_t seed = 0;
};

int cmd_split(const SplitArgs& a, std::ostream& out) {
  const auto split =
      dataio::split_train_test(dataio::load_manifest(a.manifest), dataio::Ratio::parse(a.ratio), a.seed);
  detail::write_file_atomic(a.out, dataio::serialize_split(split.spec));
  out << "train " << split.spec.train_videos.size() << " videos " << split.train.size() << " frames\n"
      << "test " << split.spec.test_videos.size() << " videos " << split.test.size() << " frames\n";
  return kExitOk;
}

struct StatsArgs {
  std::string manifest, frames_root, landmarks, out;
  std::size_t image_size = 0;
  bool global = false;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
  std::optional<preproc::LandmarkTable> lm;
  if (!a.landmarks.empty()) {
    if (a.image_size == 0) throw UsageError("--landmarks needs --image-size for the aligned crop");
    lm = preproc::read_landmarks(a.landmarks);
  }
  const auto stats = dataio::compute_manifest_stats(dataio::load_manifest(a.manifest), a.frames_root, !a.global,
                                                    a.image_size, lm ? &*lm : nullptr);
  preproc::write_stats(a.out, stats);
  out << preproc::serialize_stats(stats);
  return kExitOk;
}

// Chain settings recorded in the checkpoint unless overridden.
struct ChainArgs {
  std::string preproc, stats, landmarks;
};

preproc::PreprocChain chain_for(const nn::Checkpoint& ck, const fs::path& ckpt_path, const ChainArgs& a,
                                preproc::LandmarkTable& landmarks) {
  std::string steps = a.preproc;
  if (steps.empty()) {
    const auto it = ck.extra.find("preproc");
    steps = it != ck.extra.end() ? it->second : "normalize";
  }
  auto chain = preproc::PreprocChain::parse(steps);
  const bool needs_stats = std::any_of(chain.steps.begin(), chain.steps.end(), [](preproc::Step s) {
    return s == preproc::Step::mean_subtract || s == preproc::Step::whiten;
  });
  if (needs_stats) {
    const fs::path p = a.stats.empty() ? ckpt_path.parent_path() / "stats.txt" : fs::path(a.stats);
    chain.stats = preproc::read_stats(p);
  }
  if (!chain.steps.empty() && chain.steps.front() == preproc::Step::crop_align) {
    if (a.landmarks.empty()) throw UsageError("crop_align needs --landmarks");
    landmarks = preproc::read_landmarks(a.landmarks);
    chain.landmarks = &landmarks;
  }
  return chain;
}

std::size_t extra_size(const nn::Checkpoint& ck, const std::string& key, std::size_t fallback) {
  const auto it = ck.extra.find(key);
  if (it == ck.extra.end()) return fallback;
  const auto v = detail::parse_int(it->second);
  return v && *v > 0 ? static_cast<std::size_t>(*v) : fallback;
}

struct EvalArgs {
  std::string ckpt, manifest, frames_root, dump, name;
  std::size_t seq_len = 0, group_size = 0;
  ChainArgs chain;
  bool mse = false, tsv = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto ck = nn::load_checkpoint(a.ckpt);
  preproc::LandmarkTable lm;
  eval::FrameSource src;
  src.frames_root = a.frames_root;
  src.image_size = ck.spec.input_size;
  src.chain = chain_for(ck, a.ckpt, a.chain, lm);
  const std::size_t l = a.seq_len ? a.seq_len : extra_size(ck, "sequence_length", 80);
  const std::size_t n = a.group_size ? a.group_size : extra_size(ck, "group_size", 4);
  eval::Predictions preds;
  auto report = eval::evaluate(ck, dataio::load_manifest(a.manifest), l, n, src,
                               fs::path(a.manifest).stem().string(), a.dump.empty() ? nullptr : &preds);
  if (!a.name.empty()) report.model_name = a.name;
  if (!a.dump.empty()) eval::write_predictions_csv(a.dump, preds);
  out << (a.tsv ? eval::render_tsv({report}) : eval::render_table({report}, a.mse));
  return kExitOk;
}

struct PredictArgs {
  std::string ckpt, image;
  std::size_t seq_len = 0;
  double tail = 0.1;
  ChainArgs chain;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const auto ck = nn::load_checkpoint(a.ckpt);
  nn::Model model(ck.spec, 0);
  nn::restore_parameters(model, ck);
  preproc::LandmarkTable lm;
  const auto chain = chain_for(ck, a.ckpt, a.chain, lm);
  const Image img = chain.apply(load_image(a.image), a.image, ck.spec.input_size);
  const std::size_t l = a.seq_len ? a.seq_len : extra_size(ck, "sequence_length", 80);
  const auto [v, ar] = eval::predict_static(model, img, l, a.tail);
  out << fmt("%.6f", v) << ' ' << fmt("%.6f", ar) << '\n';
  return kExitOk;
}

struct ServeArgs {
  std::string catalog, store, ui, addr = "127.0.0.1:8080";
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  const std::string catalog = a.catalog.empty() ? data_root() : a.catalog;
  if (catalog.empty()) throw UsageError("serve needs --catalog or AFFECTLAB_DATA");
  const fs::path store = a.store.empty() ? fs::path(catalog) / "annotations" : fs::path(a.store);
  const auto state = serve::load_state(catalog, store, a.ui);
  out << "serving " << state.catalog.size() << " videos on http://" << a.addr << '\n' << std::flush;
  serve::run(state, a.addr);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"affectlab: valence/arousal regression from face video"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "affectlab 0.1");

  AgreementArgs ag;
  auto* agreement = app.add_subcommand("agreement", "Inter-annotator agreement of trace files");
  agreement->add_option("traces", ag.traces, "Trace files of one video and dimension")->required();
  agreement->add_option("--fps", ag.fps, "Resampling frame rate");
  agreement->add_option("--frames", ag.frames, "Frame count (default: cover the longest trace)");
  agreement->add_option("--metric", ag.metric, "ccc or pearson");
  agreement->add_flag("--csv", ag.csv, "CSV instead of an aligned table");

  MergeArgs mg;
  auto* merge = app.add_subcommand("merge", "Average annotators into one per-frame series");
  merge->add_option("traces", mg.traces, "Trace files")->required();
  merge->add_option("--fps", mg.fps, "Frame rate");
  merge->add_option("--frames", mg.frames, "Frame count (default: cover the longest trace)");
  merge->add_option("--out", mg.out, "Series file to write")->required();

  BuildManifestArgs bm;
  auto* build = app.add_subcommand("build-manifest", "Join frame directories with merged series");
  build->add_option("--frames-root", bm.frames_root, "Directory holding <video>/<NNNNNN>.png");
  build->add_option("--series", bm.series_dir, "Directory of <video>_valence.csv / <video>_arousal.csv")->required();
  build->add_option("--out", bm.out, "Manifest to write")->required();

  SplitArgs sp;
  auto* split = app.add_subcommand("split", "Video-level train/test split");
  split->add_option("--manifest", sp.manifest)->required();
  split->add_option("--ratio", sp.ratio, "train:test");
  split->add_option("--seed", sp.seed);
  split->add_option("--out", sp.out, "Split file to write")->required();

  StatsArgs st;
  auto* stats = app.add_subcommand("stats", "Training-set pixel statistics");
  stats->add_option("--manifest", st.manifest)->required();
  stats->add_option("--frames-root", st.frames_root);
  stats->add_option("--landmarks", st.landmarks);
  stats->add_option("--image-size", st.image_size, "Resize before measuring (0 keeps decoded size)");
  stats->add_flag("--global", st.global, "One mean/std over all channels");
  stats->add_option("--out", st.out)->required();

  std::string config_path, resume_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config_path, "key = value file; flags override it");
  tr->add_option("--resume", resume_path, "Continue from a checkpoint");
  tr->add_option("--set", sets, "Extra key=value config entries")->take_all();
  const std::vector<std::pair<std::string, std::string>> train_flags = {
      {"--manifest", "manifest"}, {"--frames-root", "frames_root"}, {"--landmarks", "landmarks"},
      {"--out", "out"},           {"--seed", "seed"},               {"--model", "model"},
      {"--lr", "lr"},             {"--epochs", "epochs"},           {"--seq-len", "sequence_length"},
      {"--group-size", "group_size"}, {"--image-size", "image_size"}};
  for (const auto& [flag, key] : train_flags) tr->add_option(flag, flag_values[key]);

  EvalArgs ev;
  auto* evc = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  evc->add_option("--ckpt", ev.ckpt)->required();
  evc->add_option("--manifest", ev.manifest)->required();
  evc->add_option("--frames-root", ev.frames_root);
  evc->add_option("--seq-len", ev.seq_len);
  evc->add_option("--group-size", ev.group_size);
  evc->add_option("--preproc", ev.chain.preproc);
  evc->add_option("--stats", ev.chain.stats);
  evc->add_option("--landmarks", ev.chain.landmarks);
  evc->add_option("--dump-predictions", ev.dump, "Per-frame CSV");
  evc->add_option("--name", ev.name, "Model name in the table");
  evc->add_flag("--mse", ev.mse, "Add MSE columns");
  evc->add_flag("--tsv", ev.tsv, "Tab-separated output");

  PredictArgs pr;
  auto* prc = app.add_subcommand("predict", "Predict valence and arousal for a still image");
  prc->add_option("--ckpt", pr.ckpt)->required();
  prc->add_option("--image", pr.image)->required();
  prc->add_option("--seq-len", pr.seq_len);
  prc->add_option("--tail", pr.tail, "Fraction of final steps to average");
  prc->add_option("--preproc", pr.chain.preproc);
  prc->add_option("--stats", pr.chain.stats);
  prc->add_option("--landmarks", pr.chain.landmarks);

  ServeArgs sv;
  auto* svc = app.add_subcommand("serve", "Annotation HTTP service");
  svc->add_option("--catalog", sv.catalog, "Directory with catalog.csv (default AFFECTLAB_DATA)");
  svc->add_option("--store", sv.store, "Annotation store (default <catalog>/annotations)");
  svc->add_option("--ui", sv.ui, "Static UI bundle served at /");
  svc->add_option("--addr", sv.addr, "host:port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const std::string root = data_root();
  try {
    if (*agreement) return cmd_agreement(ag, out);
    if (*merge) return cmd_merge(mg, out);
    if (*build) {
      if (bm.frames_root.empty()) bm.frames_root = root;
      return cmd_build_manifest(bm, out);
    }
    if (*split) return cmd_split(sp, out);
    if (*stats) {
      if (st.frames_root.empty()) st.frames_root = root;
      return cmd_stats(st, out);
    }
    if (*tr) {
      auto kv = config_path.empty() ? std::map<std::string, std::string>{} : train::read_config_file(config_path);
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + s);
        kv[std::string(detail::trim(s.substr(0, eq)))] = std::string(detail::trim(s.substr(eq + 1)));
      }
      for (const auto& [flag, key] : train_flags)
        if (tr->get_option(flag)->count()) kv[key] = flag_values[key];
      if (!kv.count("frames_root") && !root.empty()) kv["frames_root"] = root;
      train::TrainConfig cfg;
      train::apply_config(cfg, kv);
      train::TrainHooks hooks;
      hooks.log = &out;
      hooks.notice = &err;
      const auto result = resume_path.empty() ? train::train(cfg, hooks) : train::resume(resume_path, cfg, hooks);
      err << "final checkpoint " << result.final_checkpoint.string() << '\n';
      return kExitOk;
    }
    if (*evc) {
      if (ev.frames_root.empty()) ev.frames_root = root;
      return cmd_eval(ev, out);
    }
    if (*prc) return cmd_predict(pr, out);
    if (*svc) return cmd_serve(sv, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace affectlab::cli
