#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "affectlab/dataio.hpp"
#include "affectlab/loss.hpp"
#include "affectlab/model.hpp"

namespace affectlab::train {

struct TrainConfig {
  std::string model = "vgg16-gru";
  std::size_t image_size = 0;  // 0: the preset's own input size (96, or 16 for mini presets)
  std::size_t sequence_length = 80;
  std::size_t group_size = 4;
  double lr = 1e-5;
  std::size_t epochs = 0;  // 0: 50, or 60 for resnet presets
  std::size_t checkpoint_every = 10;
  std::size_t early_stop_patience = 10;  // 0 disables early stopping
  std::uint64_t seed = 0;
  std::string preproc = "normalize";
  nn::CccStats ccc_stats = nn::CccStats::joint;
  std::size_t eval_subset = 0;  // >0: evaluate the training set on k sampled batches
  int checkpoint_width = 8;

  std::filesystem::path manifest;
  std::filesystem::path test_manifest;  // if set, `manifest` is used whole for training
  std::filesystem::path split_file;     // otherwise an explicit split, or
  std::string split_ratio = "2:1";      // a seeded split by ratio
  std::filesystem::path frames_root;
  std::filesystem::path landmarks;
  std::filesystem::path stats_file;  // for mean_subtract/whiten; computed from train frames if empty
  std::filesystem::path out_dir = "run";

  std::filesystem::path warm_start;
  std::string warm_start_prefix;
  std::vector<std::string> freeze;

  std::size_t resolved_epochs() const;
  std::size_t resolved_image_size() const;
  nn::ModelSpec model_spec() const;
  void validate() const;
};

// `key = value` lines with `#` comments; duplicate keys keep the last value.
std::map<std::string, std::string> parse_config_text(std::string_view text);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);
// Applies entries over cfg. Unknown keys and malformed values throw UsageError.
void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv);
std::vector<std::string> config_keys();

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_valence_ccc = 0.0, train_arousal_ccc = 0.0;
  double train_valence_mse = 0.0, train_arousal_mse = 0.0;
  double test_valence_ccc = 0.0, test_arousal_ccc = 0.0;
  double test_valence_mse = 0.0, test_arousal_mse = 0.0;
  double wall_seconds = 0.0;
};

std::string report_header();
std::string report_line(const EpochReport& r);

struct TrainHooks {
  std::ostream* log = nullptr;     // report lines (with header) as they are produced
  std::ostream* notice = nullptr;  // warnings and informational messages
  // Called after each epoch's report; returning false stops training after the
  // epoch's checkpoint.
  std::function<bool(const EpochReport&)> on_epoch;
  // Sees every epoch plan before it is consumed.
  std::function<void(std::size_t epoch, const dataio::EpochPlan&)> on_plan;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<EpochReport> reports;
  bool early_stopped = false;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::size_t epoch);

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {});

// Continues from a checkpoint up to cfg.epochs. The checkpoint's spec must equal the
// config's. Nothing in the output directory is touched if the checkpoint fails to load.
TrainResult resume(const std::filesystem::path& checkpoint, const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace affectlab::train
