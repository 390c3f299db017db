#include "affectlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>

#include "affectlab/checkpoint.hpp"
#include "affectlab/error.hpp"
#include "affectlab/eval.hpp"
#include "affectlab/optim.hpp"
#include "text_util.hpp"

namespace affectlab::train {

namespace fs = std::filesystem;

std::size_t TrainConfig::resolved_epochs() const {
  if (epochs) return epochs;
  return model.rfind("resnet", 0) == 0 ? 60 : 50;
}

std::size_t TrainConfig::resolved_image_size() const { return model_spec().input_size; }

nn::ModelSpec TrainConfig::model_spec() const { return nn::preset(model, image_size); }

void TrainConfig::validate() const {
  if (group_size < 2) throw UsageError("group_size must be at least 2");
  if (sequence_length < 1) throw UsageError("sequence_length must be at least 1");
  if (!(lr > 0.0)) throw UsageError("lr must be positive");
  if (checkpoint_every < 1) throw UsageError("checkpoint_every must be at least 1");
  if (checkpoint_width != 4 && checkpoint_width != 8) throw UsageError("checkpoint_width must be 4 or 8");
  if (manifest.empty()) throw UsageError("no manifest given");
  if (out_dir.empty()) throw UsageError("no output directory given");
  nn::infer_shapes(model_spec());
  const auto chain = preproc::PreprocChain::parse(preproc);
  if (!chain.steps.empty() && chain.steps.front() == preproc::Step::crop_align && landmarks.empty())
    throw UsageError("crop_align needs a landmarks file");
  dataio::Ratio::parse(split_ratio);
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::size_t line_no = 0;
  for (auto line : detail::split(text, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", line_no);
    const auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", line_no);
    kv[std::string(key)] = std::string(detail::trim(line.substr(eq + 1)));
  }
  return kv;
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  try {
    return parse_config_text(detail::read_file(path));
  } catch (const ParseError& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

namespace {

std::size_t to_size(const std::string& key, const std::string& v) {
  const auto i = detail::parse_int(v);
  if (!i || *i < 0) throw UsageError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(*i);
}

double to_double(const std::string& key, const std::string& v) {
  const auto d = detail::parse_double(v);
  if (!d) throw UsageError(key + ": expected a number, got '" + v + "'");
  return *d;
}

using Setter = void (*)(TrainConfig&, const std::string&, const std::string&);

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model", [](TrainConfig& c, const std::string&, const std::string& v) { c.model = v; }},
      {"image_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.image_size = to_size(k, v); }},
      {"sequence_length",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.sequence_length = to_size(k, v); }},
      {"group_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.group_size = to_size(k, v); }},
      {"lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr = to_double(k, v); }},
      {"epochs", [](TrainConfig& c, const std::string& k, const std::string& v) { c.epochs = to_size(k, v); }},
      {"checkpoint_every",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.checkpoint_every = to_size(k, v); }},
      {"early_stop_patience",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.early_stop_patience = to_size(k, v); }},
      {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = to_size(k, v); }},
      {"preproc", [](TrainConfig& c, const std::string&, const std::string& v) { c.preproc = v; }},
      {"ccc_stats",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "joint") c.ccc_stats = nn::CccStats::joint;
         else if (v == "per_sequence") c.ccc_stats = nn::CccStats::per_sequence;
         else throw UsageError(k + ": expected joint or per_sequence");
       }},
      {"eval_subset", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_subset = to_size(k, v); }},
      {"checkpoint_width",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.checkpoint_width = static_cast<int>(to_size(k, v));
       }},
      {"manifest", [](TrainConfig& c, const std::string&, const std::string& v) { c.manifest = v; }},
      {"test_manifest", [](TrainConfig& c, const std::string&, const std::string& v) { c.test_manifest = v; }},
      {"split_file", [](TrainConfig& c, const std::string&, const std::string& v) { c.split_file = v; }},
      {"split_ratio", [](TrainConfig& c, const std::string&, const std::string& v) { c.split_ratio = v; }},
      {"frames_root", [](TrainConfig& c, const std::string&, const std::string& v) { c.frames_root = v; }},
      {"landmarks", [](TrainConfig& c, const std::string&, const std::string& v) { c.landmarks = v; }},
      {"stats_file", [](TrainConfig& c, const std::string&, const std::string& v) { c.stats_file = v; }},
      {"out", [](TrainConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"warm_start", [](TrainConfig& c, const std::string&, const std::string& v) { c.warm_start = v; }},
      {"warm_start_prefix", [](TrainConfig& c, const std::string&, const std::string& v) { c.warm_start_prefix = v; }},
      {"freeze",
       [](TrainConfig& c, const std::string&, const std::string& v) {
         c.freeze.clear();
         for (auto p : detail::split(v, ','))
           if (!detail::trim(p).empty()) c.freeze.emplace_back(detail::trim(p));
       }},
  };
  return table;
}

}  // namespace

void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw UsageError("unknown config key '" + key + "'");
    it->second(cfg, key, value);
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

std::string report_header() {
  return "epoch\ttrain_loss\ttrain_valence_ccc\ttrain_arousal_ccc\ttrain_valence_mse\ttrain_arousal_mse"
         "\ttest_valence_ccc\ttest_arousal_ccc\ttest_valence_mse\ttest_arousal_mse\twall_seconds";
}

std::string report_line(const EpochReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.3f", r.epoch,
                r.train_loss, r.train_valence_ccc, r.train_arousal_ccc, r.train_valence_mse, r.train_arousal_mse,
                r.test_valence_ccc, r.test_arousal_ccc, r.test_valence_mse, r.test_arousal_mse, r.wall_seconds);
  return buf;
}

fs::path checkpoint_path(const fs::path& out_dir, std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_epoch%04zu.aflb", epoch);
  return out_dir / buf;
}

namespace {

std::string describe_group(const std::vector<dataio::SequenceBatch>& batches, const std::vector<std::size_t>& group) {
  std::string s;
  for (std::size_t idx : group) {
    if (!s.empty()) s += ", ";
    s += batches[idx].video_id + "@" + std::to_string(batches[idx].first_frame);
  }
  return "[" + s + "]";
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct EarlyStop {
  double best = -2.0;  // below any CCC mean
  std::size_t since_best = 0;
};

class Trainer {
public:
  Trainer(const TrainConfig& cfg, const TrainHooks& hooks) : cfg_(cfg), hooks_(hooks) {}

  TrainResult run(std::optional<nn::Checkpoint> from) {
    cfg_.validate();
    const nn::ModelSpec spec = cfg_.model_spec();
    if (from && !(from->spec == spec))
      throw SpecMismatch("checkpoint model '" + from->spec.name + "' (input " + std::to_string(from->spec.input_size) +
                         ") does not match config model '" + spec.name + "' (input " +
                         std::to_string(spec.input_size) + ")");
    const std::size_t epochs = cfg_.resolved_epochs();
    const std::size_t start = from ? static_cast<std::size_t>(from->epoch) : 0;
    if (from && start >= epochs) {
      say("checkpoint is at epoch " + std::to_string(start) + ", config asks for " + std::to_string(epochs) +
          " epochs: nothing to do");
      return {};
    }

    prepare_data();
    nn::Model model(spec, cfg_.seed);
    nn::AdamState adam;
    adam.lr = cfg_.lr;
    EarlyStop stop;
    if (from) {
      nn::restore_parameters(model, *from);
      if (!from->adam) throw CorruptCheckpoint("checkpoint has no optimizer state to resume from");
      adam = *from->adam;
      adam.lr = cfg_.lr;
      if (auto it = from->extra.find("early_stop.best"); it != from->extra.end())
        stop.best = detail::parse_double(it->second).value_or(-2.0);
      if (auto it = from->extra.find("early_stop.since_best"); it != from->extra.end())
        stop.since_best = static_cast<std::size_t>(detail::parse_int(it->second).value_or(0));
      for (const auto& name : frozen_from(*from))
        if (auto* p = model.find(name)) p->trainable = false;
    } else if (!cfg_.warm_start.empty()) {
      const nn::Checkpoint ws = nn::load_checkpoint(cfg_.warm_start);
      const auto r = nn::warm_start(model, ws, cfg_.warm_start_prefix, cfg_.freeze);
      say("warm start: loaded " + std::to_string(r.loaded) + " blocks, froze " + std::to_string(r.frozen));
      for (const auto& s : r.skipped) say("warm start skipped " + s);
      if (r.loaded == 0) say("warning: warm start matched no parameters");
    }

    fs::create_directories(cfg_.out_dir);
    if (chain_.stats) preproc::write_stats(cfg_.out_dir / "stats.txt", *chain_.stats);
    const fs::path log_path = cfg_.out_dir / "train_log.tsv";
    const bool append = from && fs::exists(log_path);
    log_file_.open(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log_file_) throw IOError("cannot open " + log_path.string());
    if (!append) log_file_ << report_header() << '\n';
    if (hooks_.log) *hooks_.log << report_header() << '\n';

    TrainResult result;
    for (std::size_t epoch = start + 1; epoch <= epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochReport rep;
      rep.epoch = epoch;
      rep.train_loss = run_epoch(model, adam, epoch);
      evaluate_into(model, rep);
      rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.reports.push_back(rep);
      const std::string line = report_line(rep);
      log_file_ << line << '\n' << std::flush;
      if (hooks_.log) *hooks_.log << line << '\n' << std::flush;

      const double mean_ccc = 0.5 * (rep.test_valence_ccc + rep.test_arousal_ccc);
      if (mean_ccc > stop.best) {
        stop.best = mean_ccc;
        stop.since_best = 0;
      } else {
        ++stop.since_best;
      }
      const bool patience_out = cfg_.early_stop_patience && stop.since_best >= cfg_.early_stop_patience;
      const bool hook_stop = hooks_.on_epoch && !hooks_.on_epoch(rep);
      const bool last = epoch == epochs || patience_out || hook_stop;
      if (epoch % cfg_.checkpoint_every == 0 || last) {
        result.final_checkpoint = checkpoint_path(cfg_.out_dir, epoch);
        nn::save_checkpoint(result.final_checkpoint, model, &adam, epoch, checkpoint_extra(model, stop),
                            cfg_.checkpoint_width);
      }
      if (patience_out) {
        say("early stop at epoch " + std::to_string(epoch) + ": no test CCC improvement for " +
            std::to_string(stop.since_best) + " epochs");
        result.early_stopped = true;
      }
      if (last) break;
    }
    return result;
  }

private:
  void say(const std::string& msg) {
    if (hooks_.notice) *hooks_.notice << msg << '\n';
  }

  static std::vector<std::string> frozen_from(const nn::Checkpoint& ck) {
    std::vector<std::string> names;
    if (auto it = ck.extra.find("frozen"); it != ck.extra.end())
      for (auto n : detail::split(it->second, ','))
        if (!n.empty()) names.emplace_back(n);
    return names;
  }

  std::map<std::string, std::string> checkpoint_extra(nn::Model& model, const EarlyStop& stop) {
    std::string frozen;
    for (auto* p : model.parameters())
      if (!p->trainable) frozen += (frozen.empty() ? "" : ",") + p->name;
    return {{"early_stop.best", fmt17(stop.best)},
            {"early_stop.since_best", std::to_string(stop.since_best)},
            {"frozen", frozen},
            {"preproc", chain_.to_string()},
            {"seed", std::to_string(cfg_.seed)},
            {"sequence_length", std::to_string(cfg_.sequence_length)},
            {"group_size", std::to_string(cfg_.group_size)}};
  }

  void prepare_data() {
    const auto records = dataio::load_manifest(cfg_.manifest);
    dataio::Split split;
    if (!cfg_.test_manifest.empty()) {
      split.train = records;
      split.test = dataio::load_manifest(cfg_.test_manifest);
    } else if (!cfg_.split_file.empty()) {
      split = dataio::apply_split(records, dataio::parse_split(detail::read_file(cfg_.split_file)));
    } else {
      split = dataio::split_train_test(records, dataio::Ratio::parse(cfg_.split_ratio), cfg_.seed);
    }
    train_batches_ = dataio::make_batches(split.train, cfg_.sequence_length);
    test_batches_ = dataio::make_batches(split.test, cfg_.sequence_length);
    if (train_batches_.size() < cfg_.group_size)
      throw UsageError("training set has " + std::to_string(train_batches_.size()) + " batches of length " +
                       std::to_string(cfg_.sequence_length) + ", fewer than group size " +
                       std::to_string(cfg_.group_size));
    if (test_batches_.empty()) throw UsageError("test set has no full batch of length " +
                                                std::to_string(cfg_.sequence_length));

    chain_ = preproc::PreprocChain::parse(cfg_.preproc);
    if (!cfg_.landmarks.empty()) {
      landmarks_ = preproc::read_landmarks(cfg_.landmarks);
      chain_.landmarks = &landmarks_;
    }
    const bool needs_stats = std::any_of(chain_.steps.begin(), chain_.steps.end(), [](preproc::Step s) {
      return s == preproc::Step::mean_subtract || s == preproc::Step::whiten;
    });
    if (needs_stats) {
      if (!cfg_.stats_file.empty()) {
        stats_ = preproc::read_stats(cfg_.stats_file);
      } else {
        const bool aligned = !chain_.steps.empty() && chain_.steps.front() == preproc::Step::crop_align;
        stats_ = dataio::compute_manifest_stats(split.train, cfg_.frames_root, true, cfg_.resolved_image_size(),
                                                aligned ? &landmarks_ : nullptr);
      }
      chain_.stats = stats_;
    }
    source_.frames_root = cfg_.frames_root;
    source_.image_size = cfg_.resolved_image_size();
    source_.chain = chain_;

    train_eval_batches_ = train_batches_;
    if (cfg_.eval_subset && cfg_.eval_subset < train_batches_.size()) {
      std::vector<std::size_t> idx(train_batches_.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::mt19937_64 rng(cfg_.seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(cfg_.eval_subset);
      std::sort(idx.begin(), idx.end());
      train_eval_batches_.clear();
      for (std::size_t i : idx) train_eval_batches_.push_back(train_batches_[i]);
    }
  }

  double run_epoch(nn::Model& model, nn::AdamState& adam, std::size_t epoch) {
    const auto plan = dataio::epoch_plan(train_batches_, cfg_.group_size, cfg_.seed, epoch);
    if (hooks_.on_plan) hooks_.on_plan(epoch, plan);
    std::vector<unsigned> seen(train_batches_.size(), 0);
    std::size_t g = 0;
    dataio::GroupPrefetcher loader(plan.groups, [&](const std::vector<std::size_t>& group) {
      try {
        return dataio::load_group(train_batches_, group, source_.frames_root, source_.image_size, source_.chain);
      } catch (const Error& e) {
        throw IOError("loading group " + describe_group(train_batches_, group) + ": " + e.what());
      }
    });
    double loss_sum = 0.0;
    std::size_t counted = 0;
    while (auto group = loader.next()) {
      for (std::size_t idx : group->batch_indices) ++seen[idx];
      ++g;
      // A lone length-1 sequence has no spread to correlate; it is consumed without an update.
      if (group->target.dim(0) * group->target.dim(1) < 2) continue;
      model.zero_grad();
      nn::Tensor pred;
      nn::LossResult lr;
      try {
        pred = model.forward_sequence(group->input);
        lr = nn::loss_1mccc(pred, group->target, cfg_.ccc_stats);
      } catch (const Error& e) {
        throw Error("epoch " + std::to_string(epoch) + " group " + describe_group(train_batches_, group->batch_indices) +
                    ": " + e.what());
      }
      if (!std::isfinite(lr.loss)) {
        dump_nan(epoch, *group, pred, lr);
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + " group " +
                    describe_group(train_batches_, group->batch_indices) + "; see " +
                    (cfg_.out_dir / "nan_dump.txt").string());
      }
      model.backward(lr.grad);
      nn::adam_step(model.parameters(), adam);
      loss_sum += lr.loss;
      ++counted;
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
      if (seen[i] != 1)
        throw Error("epoch " + std::to_string(epoch) + " consumed batch " + std::to_string(i) + " " +
                    std::to_string(seen[i]) + " times");
    return counted ? loss_sum / static_cast<double>(counted) : 0.0;
  }

  void dump_nan(std::size_t epoch, const dataio::GroupTensors& group, const nn::Tensor& pred,
                const nn::LossResult& lr) {
    std::string s = "epoch " + std::to_string(epoch) + "\n";
    s += "group " + describe_group(train_batches_, group.batch_indices) + "\n";
    s += "loss " + fmt17(lr.loss) + "\nccc_valence " + fmt17(lr.ccc_valence) + "\nccc_arousal " +
         fmt17(lr.ccc_arousal) + "\n";
    s += "pred_v,pred_a,true_v,true_a\n";
    for (std::size_t i = 0; i + 1 < pred.size(); i += 2)
      s += fmt17(pred[i]) + "," + fmt17(pred[i + 1]) + "," + fmt17(group.target[i]) + "," +
           fmt17(group.target[i + 1]) + "\n";
    fs::create_directories(cfg_.out_dir);
    detail::write_file_atomic(cfg_.out_dir / "nan_dump.txt", s);
  }

  void evaluate_into(nn::Model& model, EpochReport& rep) {
    const auto tr = eval::evaluate(model, train_eval_batches_, cfg_.group_size, source_, "train");
    const auto te = eval::evaluate(model, test_batches_, cfg_.group_size, source_, "test");
    rep.train_valence_ccc = tr.valence_ccc;
    rep.train_arousal_ccc = tr.arousal_ccc;
    rep.train_valence_mse = tr.valence_mse;
    rep.train_arousal_mse = tr.arousal_mse;
    rep.test_valence_ccc = te.valence_ccc;
    rep.test_arousal_ccc = te.arousal_ccc;
    rep.test_valence_mse = te.valence_mse;
    rep.test_arousal_mse = te.arousal_mse;
  }

  TrainConfig cfg_;
  TrainHooks hooks_;
  std::vector<dataio::SequenceBatch> train_batches_, train_eval_batches_, test_batches_;
  preproc::PreprocChain chain_;
  preproc::LandmarkTable landmarks_;
  preproc::DatasetStats stats_;
  eval::FrameSource source_;
  std::ofstream log_file_;
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks) { return Trainer(cfg, hooks).run(std::nullopt); }

TrainResult resume(const fs::path& checkpoint, const TrainConfig& cfg, const TrainHooks& hooks) {
  nn::Checkpoint ck = nn::load_checkpoint(checkpoint);
  TrainResult r = Trainer(cfg, hooks).run(std::move(ck));
  if (r.final_checkpoint.empty()) r.final_checkpoint = checkpoint;
  return r;
}

}  // namespace affectlab::train
