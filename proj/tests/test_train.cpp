#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "affectlab/checkpoint.hpp"
#include "affectlab/error.hpp"
#include "affectlab/eval.hpp"
#include "affectlab/train.hpp"
#include "fixtures.hpp"

using namespace affectlab;
using train::TrainConfig;

namespace {

struct Run {
  fixtures::TempDir dir{"train"};
  fixtures::Synthetic syn;
  TrainConfig cfg;

  explicit Run(std::size_t videos = 4, std::size_t frames = 40) {
    syn = fixtures::make_synthetic(dir.path, videos, frames, 16, 7);
    // First video held out for testing.
    std::vector<annotation::ManifestRecord> tr, te;
    for (const auto& r : syn.records) (r.video_id == syn.records.front().video_id ? te : tr).push_back(r);
    write(dir.path / "train.csv", annotation::serialize_manifest(tr));
    write(dir.path / "test.csv", annotation::serialize_manifest(te));
    cfg.model = "vgg-mini-gru";
    cfg.sequence_length = 10;
    cfg.group_size = 2;
    cfg.lr = 1e-3;
    cfg.epochs = 3;
    cfg.seed = 5;
    cfg.manifest = dir.path / "train.csv";
    cfg.test_manifest = dir.path / "test.csv";
    cfg.frames_root = syn.frames_root;
    cfg.out_dir = dir.path / "out";
  }

  static void write(const std::filesystem::path& p, const std::string& s) {
    std::ofstream f(p);
    f << s;
  }
};

std::string read(const std::filesystem::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Log lines without the trailing wall-time column.
std::vector<std::string> log_without_wall(const std::filesystem::path& p) {
  std::vector<std::string> out;
  std::istringstream in(read(p));
  std::string line;
  while (std::getline(in, line)) out.push_back(line.substr(0, line.rfind('\t')));
  return out;
}

void check_same_reports(const std::vector<train::EpochReport>& a, const std::vector<train::EpochReport>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].epoch == b[i].epoch);
    CHECK(a[i].train_loss == b[i].train_loss);
    CHECK(a[i].train_valence_ccc == b[i].train_valence_ccc);
    CHECK(a[i].train_arousal_mse == b[i].train_arousal_mse);
    CHECK(a[i].test_valence_ccc == b[i].test_valence_ccc);
    CHECK(a[i].test_arousal_ccc == b[i].test_arousal_ccc);
    CHECK(a[i].test_valence_mse == b[i].test_valence_mse);
  }
}

}  // namespace

TEST_CASE("config parsing") {
  const auto kv = train::parse_config_text("# comment\nmodel = resnet-mini-gru\nlr=0.001\n\nseed = 3 # trailing\n");
  TrainConfig cfg;
  train::apply_config(cfg, kv);
  CHECK(cfg.model == "resnet-mini-gru");
  CHECK(cfg.lr == 0.001);
  CHECK(cfg.seed == 3);
  CHECK(cfg.resolved_epochs() == 60);
  CHECK(cfg.resolved_image_size() == 16);
  TrainConfig d;
  CHECK(d.resolved_epochs() == 50);
  CHECK(d.resolved_image_size() == 96);

  CHECK_THROWS_AS(train::apply_config(cfg, {{"learning_rate", "1"}}), UsageError);
  CHECK_THROWS_AS(train::apply_config(cfg, {{"lr", "fast"}}), UsageError);
  CHECK_THROWS_AS(train::apply_config(cfg, {{"ccc_stats", "odd"}}), UsageError);
  TrainConfig bad;
  bad.group_size = 1;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad.group_size = 2;
  bad.lr = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("three epochs give three reports and a log") {
  Run run;
  std::ostringstream log;
  std::map<std::size_t, std::size_t> plan_sizes;
  train::TrainHooks hooks;
  hooks.log = &log;
  hooks.on_plan = [&](std::size_t epoch, const dataio::EpochPlan& plan) {
    std::multiset<std::size_t> seen;
    for (const auto& g : plan.groups) seen.insert(g.begin(), g.end());
    // 3 training videos of 40 frames at l=10: 12 batches, each exactly once.
    CHECK(seen.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) CHECK(seen.count(i) == 1);
    plan_sizes[epoch] = plan.groups.size();
  };
  const auto res = train::train(run.cfg, hooks);
  REQUIRE(res.reports.size() == 3);
  CHECK(plan_sizes.size() == 3);
  double best = 1e9, prev_best = 1e9;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& r = res.reports[i];
    CHECK(r.epoch == i + 1);
    CHECK(std::isfinite(r.train_loss));
    for (double c : {r.train_valence_ccc, r.train_arousal_ccc, r.test_valence_ccc, r.test_arousal_ccc}) {
      CHECK(c >= -1.0);
      CHECK(c <= 1.0);
    }
    for (double m : {r.train_valence_mse, r.train_arousal_mse, r.test_valence_mse, r.test_arousal_mse}) CHECK(m >= 0.0);
    best = std::min(best, r.train_loss);
    CHECK(best <= prev_best);
    prev_best = best;
  }
  CHECK(res.final_checkpoint == train::checkpoint_path(run.cfg.out_dir, 3));
  CHECK(std::filesystem::exists(res.final_checkpoint));
  const auto lines = log_without_wall(run.cfg.out_dir / "train_log.tsv");
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].rfind("epoch\ttrain_loss", 0) == 0);
  CHECK(log.str() == read(run.cfg.out_dir / "train_log.tsv"));
}

TEST_CASE("checkpoint cadence") {
  Run run;
  run.cfg.epochs = 2;
  run.cfg.checkpoint_every = 1;
  train::train(run.cfg);
  CHECK(std::filesystem::exists(run.cfg.out_dir / "ckpt_epoch0001.aflb"));
  CHECK(std::filesystem::exists(run.cfg.out_dir / "ckpt_epoch0002.aflb"));
  CHECK(nn::load_checkpoint(run.cfg.out_dir / "ckpt_epoch0001.aflb").epoch == 1);
}

TEST_CASE("same config and seed give identical reports") {
  Run run;
  auto a = run.cfg, b = run.cfg;
  a.out_dir = run.dir.path / "a";
  b.out_dir = run.dir.path / "b";
  const auto ra = train::train(a), rb = train::train(b);
  check_same_reports(ra.reports, rb.reports);
  CHECK(log_without_wall(a.out_dir / "train_log.tsv") == log_without_wall(b.out_dir / "train_log.tsv"));

  auto c = run.cfg;
  c.seed = 6;
  c.out_dir = run.dir.path / "c";
  CHECK(train::train(c).reports.back().train_loss != ra.reports.back().train_loss);
}

TEST_CASE("resume equals straight-through training") {
  Run run;
  auto straight = run.cfg;
  straight.epochs = 4;
  straight.out_dir = run.dir.path / "straight";
  const auto full = train::train(straight);

  auto half = run.cfg;
  half.epochs = 2;
  half.out_dir = run.dir.path / "resumed";
  const auto first = train::train(half);
  half.epochs = 4;
  const auto rest = train::resume(first.final_checkpoint, half);
  REQUIRE(rest.reports.size() == 2);
  CHECK(rest.reports[0].epoch == 3);
  check_same_reports({full.reports[2], full.reports[3]}, rest.reports);

  const auto a = nn::load_checkpoint(full.final_checkpoint), b = nn::load_checkpoint(rest.final_checkpoint);
  REQUIRE(a.blocks.size() == b.blocks.size());
  for (std::size_t i = 0; i < a.blocks.size(); ++i) CHECK(a.blocks[i].data == b.blocks[i].data);
  CHECK(a.adam->step == b.adam->step);
  CHECK(log_without_wall(straight.out_dir / "train_log.tsv") == log_without_wall(half.out_dir / "train_log.tsv"));

  SUBCASE("resume past the budget is a no-op") {
    std::ostringstream notice;
    train::TrainHooks hooks;
    hooks.notice = &notice;
    const auto before = read(half.out_dir / "train_log.tsv");
    const auto none = train::resume(rest.final_checkpoint, half, hooks);
    CHECK(none.reports.empty());
    CHECK(notice.str().find("nothing to do") != std::string::npos);
    CHECK(read(half.out_dir / "train_log.tsv") == before);
  }
  SUBCASE("spec mismatch") {
    auto other = half;
    other.model = "alexnet-mini-gru";
    other.epochs = 6;
    CHECK_THROWS_AS(train::resume(rest.final_checkpoint, other), SpecMismatch);
  }
}

TEST_CASE("corrupt checkpoint aborts before the output directory is touched") {
  Run run;
  const auto bogus = run.dir.path / "bogus.aflb";
  Run::write(bogus, "AFLB1 but not really");
  CHECK_THROWS_AS(train::resume(bogus, run.cfg), CorruptCheckpoint);
  CHECK_FALSE(std::filesystem::exists(run.cfg.out_dir));
}

TEST_CASE("checkpoint reproduces its epoch's test metrics") {
  Run run;
  run.cfg.epochs = 2;
  const auto res = train::train(run.cfg);
  const auto ck = nn::load_checkpoint(res.final_checkpoint);
  eval::FrameSource src{run.syn.frames_root, 16, preproc::PreprocChain::parse("normalize")};
  const auto rep = eval::evaluate(ck, dataio::load_manifest(run.cfg.test_manifest), 10, 3, src, "test");
  CHECK(rep.valence_ccc == res.reports.back().test_valence_ccc);
  CHECK(rep.arousal_ccc == res.reports.back().test_arousal_ccc);
  CHECK(rep.valence_mse == res.reports.back().test_valence_mse);
  CHECK(rep.frames == 40);
}

TEST_CASE("early stop when nothing can improve") {
  Run run;
  // Freeze every parameter through a warm start from an untrained checkpoint.
  nn::Model m(run.cfg.model_spec(), 1);
  const auto init = run.dir.path / "init.aflb";
  nn::save_checkpoint(init, m, nullptr, 0);
  run.cfg.warm_start = init;
  run.cfg.freeze = {"conv", "fc", "gru", "head"};
  run.cfg.epochs = 10;
  run.cfg.early_stop_patience = 2;
  const auto res = train::train(run.cfg);
  CHECK(res.early_stopped);
  CHECK(res.reports.size() == 3);
  CHECK(res.reports[0].test_valence_ccc == res.reports[2].test_valence_ccc);
  const auto ck = nn::load_checkpoint(res.final_checkpoint);
  CHECK(ck.epoch == 3);
  CHECK(ck.extra.at("frozen").find("conv1.kernel") != std::string::npos);
}

TEST_CASE("on_epoch hook can stop training") {
  Run run;
  run.cfg.epochs = 5;
  train::TrainHooks hooks;
  hooks.on_epoch = [](const train::EpochReport& r) { return r.epoch < 2; };
  const auto res = train::train(run.cfg, hooks);
  CHECK(res.reports.size() == 2);
  CHECK(std::filesystem::exists(train::checkpoint_path(run.cfg.out_dir, 2)));
}

TEST_CASE("missing frames name the file") {
  Run run;
  std::filesystem::remove(run.syn.frames_root / run.syn.records.back().frame_path);
  try {
    train::train(run.cfg);
    FAIL("expected IOError");
  } catch (const IOError& e) {
    CHECK(std::string(e.what()).find(run.syn.records.back().frame_path) != std::string::npos);
  }
}
