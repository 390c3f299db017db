#include "affectlab/dataio.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "affectlab/error.hpp"
#include "text_util.hpp"

namespace affectlab::dataio {

namespace fs = std::filesystem;

std::vector<ManifestRecord> load_manifest(const fs::path& path) {
  try {
    return annotation::parse_manifest(detail::read_file(path));
  } catch (const ContiguityError& e) {
    throw ContiguityError(path.string() + ": " + e.what());
  } catch (const RangeError& e) {
    throw RangeError(path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Ratio Ratio::parse(std::string_view text) {
  const auto parts = detail::split(text, ':');
  if (parts.size() != 2) throw UsageError("ratio must look like 2:1");
  const auto a = detail::parse_int(detail::trim(parts[0]));
  const auto b = detail::parse_int(detail::trim(parts[1]));
  if (!a || !b || *a <= 0 || *b <= 0) throw UsageError("ratio terms must be positive integers");
  return {static_cast<unsigned>(*a), static_cast<unsigned>(*b)};
}

namespace {

struct VideoSpan {
  std::string id;
  std::size_t begin = 0, end = 0;  // record range
};

std::vector<VideoSpan> video_spans(const std::vector<ManifestRecord>& records) {
  std::vector<VideoSpan> spans;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (spans.empty() || spans.back().id != records[i].video_id) spans.push_back({records[i].video_id, i, i});
    spans.back().end = i + 1;
  }
  return spans;
}

}  // namespace

Split split_train_test(const std::vector<ManifestRecord>& records, Ratio ratio, std::uint64_t seed) {
  auto spans = video_spans(records);
  if (spans.size() < 2) throw UsageError("split needs at least 2 videos, got " + std::to_string(spans.size()));
  std::vector<std::size_t> order(spans.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const double target =
      static_cast<double>(records.size()) * ratio.train / static_cast<double>(ratio.train + ratio.test);
  std::size_t best_k = 1, cum = 0;
  double best_diff = 0.0;
  for (std::size_t k = 1; k < order.size(); ++k) {
    cum += spans[order[k - 1]].end - spans[order[k - 1]].begin;
    const double diff = std::abs(static_cast<double>(cum) - target);
    if (k == 1 || diff < best_diff) {
      best_diff = diff;
      best_k = k;
    }
  }
  SplitSpec spec;
  for (std::size_t k = 0; k < order.size(); ++k)
    (k < best_k ? spec.train_videos : spec.test_videos).insert(spans[order[k]].id);
  return apply_split(records, spec);
}

std::string serialize_split(const SplitSpec& spec) {
  std::string out;
  for (const auto& id : spec.train_videos) out += id + ",train\n";
  for (const auto& id : spec.test_videos) out += id + ",test\n";
  return out;
}

SplitSpec parse_split(std::string_view text) {
  SplitSpec spec;
  std::size_t line_no = 0;
  for (auto line : detail::split(text, '\n')) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 2) throw ParseError("expected <video_id>,<train|test>", line_no);
    const std::string id(detail::trim(f[0]));
    const auto side = detail::trim(f[1]);
    if (side == "train") spec.train_videos.insert(id);
    else if (side == "test") spec.test_videos.insert(id);
    else throw ParseError("side must be train or test", line_no);
    if (spec.train_videos.count(id) && spec.test_videos.count(id))
      throw ParseError("video " + id + " assigned to both sides", line_no);
  }
  return spec;
}

Split apply_split(const std::vector<ManifestRecord>& records, const SplitSpec& spec) {
  Split s;
  s.spec = spec;
  for (const auto& r : records) {
    if (spec.train_videos.count(r.video_id)) s.train.push_back(r);
    else if (spec.test_videos.count(r.video_id)) s.test.push_back(r);
    else throw UsageError("video " + r.video_id + " is not covered by the split");
  }
  return s;
}

std::vector<SequenceBatch> make_batches(const std::vector<ManifestRecord>& records, std::size_t l) {
  if (l == 0) throw UsageError("sequence length must be at least 1");
  std::vector<SequenceBatch> batches;
  for (const auto& span : video_spans(records)) {
    const std::size_t frames = span.end - span.begin;
    for (std::size_t start = 0; start + l <= frames; start += l) {
      SequenceBatch b;
      b.video_id = span.id;
      b.first_frame = start;
      b.frame_paths.reserve(l);
      b.targets.reserve(2 * l);
      for (std::size_t k = 0; k < l; ++k) {
        const auto& r = records[span.begin + start + k];
        b.frame_paths.push_back(r.frame_path);
        b.targets.push_back(r.valence);
        b.targets.push_back(r.arousal);
      }
      batches.push_back(std::move(b));
    }
  }
  return batches;
}

EpochPlan epoch_plan(const std::vector<SequenceBatch>& batches, std::size_t n, std::uint64_t seed,
                     std::uint64_t epoch_index) {
  if (n < 2) throw UsageError("group size n must be at least 2");
  if (batches.size() < n)
    throw UsageError("need at least n=" + std::to_string(n) + " batches, have " + std::to_string(batches.size()));
  std::mt19937_64 rng(seed ^ epoch_index);
  std::vector<std::size_t> order(batches.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  // Per-video queues in shuffled order; a video's rank is the shuffled position of
  // its first batch, used to break ties between equally full videos.
  std::map<std::string, std::size_t> video_index;
  std::vector<std::deque<std::size_t>> queues;
  for (std::size_t idx : order) {
    auto [it, fresh] = video_index.emplace(batches[idx].video_id, queues.size());
    if (fresh) queues.emplace_back();
    queues[it->second].push_back(idx);
  }

  // Fill a group from the fullest videos, one batch per video while possible.
  auto take_group = [&](std::size_t size) {
    std::vector<std::size_t> group;
    std::vector<std::size_t> candidates;
    for (std::size_t v = 0; v < queues.size(); ++v)
      if (!queues[v].empty()) candidates.push_back(v);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return queues[a].size() > queues[b].size(); });
    for (std::size_t v : candidates) {
      if (group.size() == size) break;
      group.push_back(queues[v].front());
      queues[v].pop_front();
    }
    // Fewer distinct videos than slots: repeat from the fullest queues.
    while (group.size() < size) {
      std::size_t best = queues.size();
      for (std::size_t v = 0; v < queues.size(); ++v)
        if (!queues[v].empty() && (best == queues.size() || queues[v].size() > queues[best].size())) best = v;
      group.push_back(queues[best].front());
      queues[best].pop_front();
    }
    return group;
  };

  EpochPlan plan;
  plan.seed = seed;
  plan.epoch = epoch_index;
  const std::size_t remainder = batches.size() % n;
  std::vector<std::size_t> tail;
  // The short group is filled first: the fullest videos must appear in it when
  // they have a batch for every group.
  if (remainder) tail = take_group(remainder);
  for (std::size_t g = 0; g < batches.size() / n; ++g) plan.groups.push_back(take_group(n));
  std::shuffle(plan.groups.begin(), plan.groups.end(), rng);
  if (remainder) plan.groups.push_back(std::move(tail));
  return plan;
}

EpochPlan sequential_plan(std::size_t batch_count, std::size_t n) {
  if (n == 0) throw UsageError("group size must be positive");
  EpochPlan plan;
  for (std::size_t i = 0; i < batch_count; i += n) {
    std::vector<std::size_t> g;
    for (std::size_t j = i; j < std::min(batch_count, i + n); ++j) g.push_back(j);
    plan.groups.push_back(std::move(g));
  }
  return plan;
}

GroupTensors load_group(const std::vector<SequenceBatch>& batches, const std::vector<std::size_t>& group,
                        const fs::path& frames_root, std::size_t image_size, const preproc::PreprocChain& chain) {
  if (group.empty()) throw UsageError("empty group");
  if (image_size == 0) throw UsageError("image size must be positive");
  const std::size_t l = batches.at(group.front()).length();
  const std::size_t n = group.size();
  const std::size_t frame_elems = image_size * image_size * 3;
  GroupTensors out{nn::Tensor({n, l, image_size, image_size, 3}), nn::Tensor({n, l, 2}), group};
  for (std::size_t g = 0; g < n; ++g) {
    const SequenceBatch& b = batches.at(group[g]);
    if (b.length() != l) throw UsageError("batches in a group differ in sequence length");
    for (std::size_t t = 0; t < l; ++t) {
      const Image decoded = load_image(frames_root / b.frame_paths[t]);
      const Image img = chain.apply(decoded, b.frame_paths[t], image_size);
      std::copy(img.pixels.begin(), img.pixels.end(), out.input.ptr() + (g * l + t) * frame_elems);
      out.target[(g * l + t) * 2] = b.targets[2 * t];
      out.target[(g * l + t) * 2 + 1] = b.targets[2 * t + 1];
    }
  }
  return out;
}

preproc::DatasetStats compute_manifest_stats(const std::vector<ManifestRecord>& records, const fs::path& frames_root,
                                             bool channelwise, std::size_t image_size,
                                             const preproc::LandmarkTable* landmarks) {
  if (records.empty()) throw UsageError("statistics need a non-empty training manifest");
  preproc::PreprocChain prefix;
  prefix.steps.clear();
  if (landmarks) prefix.steps.push_back(preproc::Step::crop_align);
  prefix.landmarks = landmarks;
  preproc::StatsAccumulator acc(channelwise);
  for (const auto& r : records) {
    Image img = load_image(frames_root / r.frame_path);
    if (image_size) img = prefix.apply(img, r.frame_path, image_size);
    acc.add(img);
  }
  return acc.finish();
}

GroupPrefetcher::GroupPrefetcher(std::vector<std::vector<std::size_t>> groups, LoadFn load, std::size_t depth)
    : groups_(std::move(groups)), load_(std::move(load)), depth_(std::max<std::size_t>(1, depth)) {
  worker_ = std::thread([this] { run(); });
}

GroupPrefetcher::~GroupPrefetcher() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

void GroupPrefetcher::run() {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stop_ || ready_.size() < depth_; });
      if (stop_) return;
    }
    try {
      GroupTensors t = load_(groups_[i]);
      std::lock_guard lock(mu_);
      ready_.push_back(std::move(t));
    } catch (...) {
      std::lock_guard lock(mu_);
      error_ = std::current_exception();
      done_ = true;
      cv_.notify_all();
      return;
    }
    cv_.notify_all();
  }
  std::lock_guard lock(mu_);
  done_ = true;
  cv_.notify_all();
}

std::optional<GroupTensors> GroupPrefetcher::next() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return !ready_.empty() || done_; });
  if (!ready_.empty()) {
    GroupTensors t = std::move(ready_.front());
    ready_.pop_front();
    ++delivered_;
    lock.unlock();
    cv_.notify_all();
    return t;
  }
  if (error_) std::rethrow_exception(error_);
  return std::nullopt;
}

}  // namespace affectlab::dataio
