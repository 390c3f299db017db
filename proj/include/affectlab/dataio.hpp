#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "affectlab/annotation.hpp"
#include "affectlab/preproc.hpp"
#include "affectlab/tensor.hpp"

namespace affectlab::dataio {

using annotation::ManifestRecord;

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);

struct Ratio {
  unsigned train = 2, test = 1;
  static Ratio parse(std::string_view text);  // "2:1"
};

struct SplitSpec {
  std::set<std::string> train_videos, test_videos;
};

struct Split {
  SplitSpec spec;
  std::vector<ManifestRecord> train, test;
};

// Whole-video split. Videos are shuffled with `seed`; the train set is the prefix of
// that order whose frame count is closest to total * train / (train + test), keeping
// at least one video on each side.
Split split_train_test(const std::vector<ManifestRecord>& records, Ratio ratio, std::uint64_t seed);

// Lines `<video_id>,<train|test>`.
std::string serialize_split(const SplitSpec& spec);
SplitSpec parse_split(std::string_view text);
Split apply_split(const std::vector<ManifestRecord>& records, const SplitSpec& spec);

struct SequenceBatch {
  std::string video_id;
  std::size_t first_frame = 0;  // 0-based index within the video
  std::vector<std::string> frame_paths;
  std::vector<double> targets;  // l x 2, (valence, arousal) per frame

  std::size_t length() const { return frame_paths.size(); }
  bool operator==(const SequenceBatch&) const = default;
};

// Non-overlapping windows of l frames per video; remainders shorter than l are dropped.
std::vector<SequenceBatch> make_batches(const std::vector<ManifestRecord>& records, std::size_t l);

struct EpochPlan {
  std::vector<std::vector<std::size_t>> groups;  // indices into the batch list
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
};

// Shuffles with seed ^ epoch, then groups n batches at a time, preferring distinct
// videos within a group. The remainder group (if any) comes last.
EpochPlan epoch_plan(const std::vector<SequenceBatch>& batches, std::size_t n, std::uint64_t seed,
                     std::uint64_t epoch_index);

// Deterministic plan for evaluation: groups of n in batch order.
EpochPlan sequential_plan(std::size_t batch_count, std::size_t n);

struct GroupTensors {
  nn::Tensor input;   // [n,l,S,S,3]
  nn::Tensor target;  // [n,l,2]
  std::vector<std::size_t> batch_indices;
};

GroupTensors load_group(const std::vector<SequenceBatch>& batches, const std::vector<std::size_t>& group,
                        const std::filesystem::path& frames_root, std::size_t image_size,
                        const preproc::PreprocChain& chain);

// Pixel statistics over the training frames after decode (and crop_align/resize).
preproc::DatasetStats compute_manifest_stats(const std::vector<ManifestRecord>& records,
                                             const std::filesystem::path& frames_root, bool channelwise,
                                             std::size_t image_size, const preproc::LandmarkTable* landmarks);

// Loads the groups of a plan on a worker thread, at most `depth` groups ahead,
// delivering them in plan order. Worker errors are rethrown from next().
class GroupPrefetcher {
public:
  using LoadFn = std::function<GroupTensors(const std::vector<std::size_t>&)>;

  GroupPrefetcher(std::vector<std::vector<std::size_t>> groups, LoadFn load, std::size_t depth = 2);
  ~GroupPrefetcher();
  GroupPrefetcher(const GroupPrefetcher&) = delete;
  GroupPrefetcher& operator=(const GroupPrefetcher&) = delete;

  // nullopt once every group has been delivered.
  std::optional<GroupTensors> next();

private:
  void run();

  std::vector<std::vector<std::size_t>> groups_;
  LoadFn load_;
  std::size_t depth_;
  std::size_t delivered_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<GroupTensors> ready_;
  std::exception_ptr error_;
  bool stop_ = false;
  bool done_ = false;
  std::thread worker_;
};

}  // namespace affectlab::dataio
