#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "affectlab/checkpoint.hpp"
#include "affectlab/dataio.hpp"
#include "affectlab/model.hpp"

namespace affectlab::eval {

struct EvalReport {
  std::string model_name;
  std::string dataset_name;
  double valence_ccc = 0.0, arousal_ccc = 0.0;
  double valence_mse = 0.0, arousal_mse = 0.0;
  std::size_t frames = 0;
};

// Per-frame predictions in batch order.
struct Predictions {
  std::vector<std::string> frame_paths;
  std::vector<double> pred_valence, pred_arousal, true_valence, true_arousal;
};

// Where frames come from and how they are prepared.
struct FrameSource {
  std::filesystem::path frames_root;
  std::size_t image_size = 0;
  preproc::PreprocChain chain;
};

// Maps a loaded group to predictions [n,l,2].
using Predictor = std::function<nn::Tensor(const dataio::GroupTensors&)>;

// Runs every batch once, in order, n batches per forward pass.
Predictions predict_batches(const Predictor& predictor, const std::vector<dataio::SequenceBatch>& batches,
                            std::size_t n, const FrameSource& source);

EvalReport summarize(const Predictions& p, std::string model_name, std::string dataset_name);

EvalReport evaluate(nn::Model& model, const std::vector<dataio::SequenceBatch>& batches, std::size_t n,
                    const FrameSource& source, const std::string& dataset_name, Predictions* dump = nullptr);

// Loads the checkpoint, batches the manifest at length l and evaluates.
EvalReport evaluate(const nn::Checkpoint& ckpt, const std::vector<dataio::ManifestRecord>& manifest, std::size_t l,
                    std::size_t n, const FrameSource& source, const std::string& dataset_name,
                    Predictions* dump = nullptr);

// Replicates one preprocessed frame l times and averages the outputs of the last
// ceil(tail_fraction * l) steps. Returns (valence, arousal).
std::pair<double, double> predict_static(nn::Model& model, const Image& frame, std::size_t l,
                                         double tail_fraction = 0.1);

// Header plus one row per report; values with 2 decimals.
std::string render_table(const std::vector<EvalReport>& reports, bool with_mse = false);
std::string render_tsv(const std::vector<EvalReport>& reports);

// `frame_path,pred_v,pred_a,true_v,true_a`
void write_predictions_csv(const std::filesystem::path& path, const Predictions& p);

}  // namespace affectlab::eval
