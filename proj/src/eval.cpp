#include "affectlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "affectlab/error.hpp"
#include "affectlab/metrics.hpp"
#include "text_util.hpp"

namespace affectlab::eval {

Predictions predict_batches(const Predictor& predictor, const std::vector<dataio::SequenceBatch>& batches,
                            std::size_t n, const FrameSource& source) {
  Predictions p;
  const auto plan = dataio::sequential_plan(batches.size(), n);
  dataio::GroupPrefetcher loader(plan.groups, [&](const std::vector<std::size_t>& group) {
    return dataio::load_group(batches, group, source.frames_root, source.image_size, source.chain);
  });
  while (auto group = loader.next()) {
    const nn::Tensor out = predictor(*group);
    const std::size_t l = group->target.dim(1);
    nn::require_shape(out, group->target.shape(), "predictions");
    for (std::size_t g = 0; g < group->batch_indices.size(); ++g) {
      const auto& b = batches[group->batch_indices[g]];
      for (std::size_t t = 0; t < l; ++t) {
        const std::size_t k = (g * l + t) * 2;
        p.frame_paths.push_back(b.frame_paths[t]);
        p.pred_valence.push_back(out[k]);
        p.pred_arousal.push_back(out[k + 1]);
        p.true_valence.push_back(group->target[k]);
        p.true_arousal.push_back(group->target[k + 1]);
      }
    }
  }
  return p;
}

EvalReport summarize(const Predictions& p, std::string model_name, std::string dataset_name) {
  if (p.frame_paths.size() < 2) throw UsageError("evaluation needs at least 2 frames in full batches");
  EvalReport r;
  r.model_name = std::move(model_name);
  r.dataset_name = std::move(dataset_name);
  r.valence_ccc = metrics::ccc(p.pred_valence, p.true_valence);
  r.arousal_ccc = metrics::ccc(p.pred_arousal, p.true_arousal);
  r.valence_mse = metrics::mse(p.pred_valence, p.true_valence);
  r.arousal_mse = metrics::mse(p.pred_arousal, p.true_arousal);
  r.frames = p.frame_paths.size();
  return r;
}

EvalReport evaluate(nn::Model& model, const std::vector<dataio::SequenceBatch>& batches, std::size_t n,
                    const FrameSource& source, const std::string& dataset_name, Predictions* dump) {
  Predictions p = predict_batches([&](const dataio::GroupTensors& g) { return model.forward_sequence(g.input); },
                                  batches, n, source);
  EvalReport r = summarize(p, model.spec().name, dataset_name);
  if (dump) *dump = std::move(p);
  return r;
}

EvalReport evaluate(const nn::Checkpoint& ckpt, const std::vector<dataio::ManifestRecord>& manifest, std::size_t l,
                    std::size_t n, const FrameSource& source, const std::string& dataset_name, Predictions* dump) {
  nn::Model model(ckpt.spec, 0);
  nn::restore_parameters(model, ckpt);
  FrameSource src = source;
  if (src.image_size == 0) src.image_size = ckpt.spec.input_size;
  if (src.image_size != ckpt.spec.input_size)
    throw SpecMismatch("image size " + std::to_string(src.image_size) + " does not match model input " +
                       std::to_string(ckpt.spec.input_size));
  return evaluate(model, dataio::make_batches(manifest, l), n, src, dataset_name, dump);
}

std::pair<double, double> predict_static(nn::Model& model, const Image& frame, std::size_t l, double tail_fraction) {
  const std::size_t s = model.spec().input_size;
  if (frame.height != s || frame.width != s || frame.channels != 3)
    throw ShapeError("predict_static: frame must be " + std::to_string(s) + "x" + std::to_string(s) + "x3");
  if (l == 0) throw UsageError("sequence length must be at least 1");
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) throw UsageError("tail fraction must be in (0,1]");
  nn::Tensor x({1, l, s, s, 3});
  for (std::size_t t = 0; t < l; ++t) std::copy(frame.pixels.begin(), frame.pixels.end(), x.ptr() + t * s * s * 3);
  const nn::Tensor out = model.forward_sequence(x);
  const auto tail = std::min<std::size_t>(
      l, std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(l) - 1e-9))));
  double v = 0.0, a = 0.0;
  for (std::size_t t = l - tail; t < l; ++t) {
    v += out[t * 2];
    a += out[t * 2 + 1];
  }
  return {v / static_cast<double>(tail), a / static_cast<double>(tail)};
}

std::string render_table(const std::vector<EvalReport>& reports, bool with_mse) {
  if (reports.empty()) throw UsageError("render_table needs at least one report");
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"model", "valence_ccc", "arousal_ccc"});
  if (with_mse) {
    rows.back().push_back("valence_mse");
    rows.back().push_back("arousal_mse");
  }
  char buf[32];
  auto f2 = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    rows.push_back({r.model_name, f2(r.valence_ccc), f2(r.arousal_ccc)});
    if (with_mse) {
      rows.back().push_back(f2(r.valence_mse));
      rows.back().push_back(f2(r.arousal_mse));
    }
  }
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      out << row[c];
      if (c + 1 < row.size()) out << std::string(width[c] - row[c].size(), ' ');
    }
    out << '\n';
  }
  return out.str();
}

std::string render_tsv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "model\tdataset\tvalence_ccc\tarousal_ccc\tvalence_mse\tarousal_mse\tframes\n";
  char buf[160];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\t%.6f\t%.6f\t%zu\n", r.valence_ccc, r.arousal_ccc, r.valence_mse,
                  r.arousal_mse, r.frames);
    out << r.model_name << '\t' << r.dataset_name << buf;
  }
  return out.str();
}

void write_predictions_csv(const std::filesystem::path& path, const Predictions& p) {
  std::string out = "frame_path,pred_v,pred_a,true_v,true_a\n";
  char buf[128];
  for (std::size_t i = 0; i < p.frame_paths.size(); ++i) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g\n", p.pred_valence[i], p.pred_arousal[i],
                  p.true_valence[i], p.true_arousal[i]);
    out += p.frame_paths[i];
    out += buf;
  }
  detail::write_file_atomic(path, out);
}

}  // namespace affectlab::eval
