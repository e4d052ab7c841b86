#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "scr/cli.hpp"
#include "scr/metrics.hpp"
#include "scr/sweep.hpp"
#include "scr/train.hpp"

namespace {

namespace fs = std::filesystem;
using scr::Candidate;
using scr::SceneRanking;
using scr::SceneRecord;

SceneRecord scene_with(std::vector<scr::ClassIndex> labels, std::vector<scr::Triplet> triplets) {
  SceneRecord s;
  for (auto l : labels) s.entities.push_back({l, {0.0}});
  s.triplets = std::move(triplets);
  return s;
}

Candidate cand(std::size_t s, std::size_t o, scr::ClassIndex p, const SceneRecord& scene, double score) {
  return {s, o, p, scene.entities[s].label, scene.entities[o].label, score};
}

struct TwoScenes {
  std::vector<SceneRecord> scenes;
  std::vector<SceneRanking> rankings;
  std::set<scr::TripletClass> train;
};

TwoScenes two_scene_fixture() {
  TwoScenes f;
  f.scenes.push_back(scene_with({0, 1, 2}, {{0, 1, 1}, {1, 2, 2}, {2, 0, 1}}));
  f.scenes.push_back(scene_with({1, 1}, {{0, 1, 3}, {1, 0, 2}}));
  const auto& a = f.scenes[0];
  const auto& b = f.scenes[1];
  f.rankings.push_back({cand(0, 1, 1, a, 0.9), cand(1, 0, 2, a, 0.8), cand(1, 2, 3, a, 0.7),
                        cand(2, 0, 1, a, 0.6), cand(1, 2, 2, a, 0.5)});
  f.rankings.push_back({cand(1, 0, 2, b, 0.95), cand(0, 1, 1, b, 0.4), cand(0, 1, 3, b, 0.3)});
  f.train = {{0, 1, 1}, {1, 2, 2}, {1, 3, 1}};
  return f;
}

struct Expected {
  double recall, mean_recall, zs;
};

// Rank position of every ground-truth triplet, then counts per class.
Expected enumerate(const TwoScenes& f, std::size_t k, std::size_t num_rel) {
  std::vector<double> hit(num_rel, 0), gt(num_rel, 0);
  double hits = 0, total = 0, zs_hits = 0, zs_total = 0;
  for (std::size_t s = 0; s < f.scenes.size(); ++s) {
    const auto& scene = f.scenes[s];
    for (const auto& t : scene.triplets) {
      std::size_t rank = std::numeric_limits<std::size_t>::max();
      for (std::size_t c = 0; c < f.rankings[s].size(); ++c) {
        const auto& x = f.rankings[s][c];
        if (x.subject == t.subject && x.object == t.object && x.predicate == t.predicate &&
            x.subj_label == scene.entities[t.subject].label &&
            x.obj_label == scene.entities[t.object].label) {
          rank = std::min(rank, c);
        }
      }
      const bool in = rank < k;
      total += 1;
      hits += in;
      gt[t.predicate] += 1;
      hit[t.predicate] += in;
      const scr::TripletClass tc{scene.entities[t.subject].label, t.predicate,
                                 scene.entities[t.object].label};
      if (!f.train.contains(tc)) {
        zs_total += 1;
        zs_hits += in;
      }
    }
  }
  double sum = 0;
  int populated = 0;
  for (std::size_t c = 1; c < num_rel; ++c) {
    if (gt[c] > 0) {
      sum += hit[c] / gt[c];
      ++populated;
    }
  }
  return {hits / total, sum / populated, zs_hits / zs_total};
}

TEST(Metrics, TwoSceneFixtureMatchesHandValues) {
  const TwoScenes f = two_scene_fixture();
  scr::EvalOptions opts;
  opts.ks = {1, 3, 5};
  const auto r = scr::score_rankings(f.rankings, f.scenes, 4, f.train, opts);
  EXPECT_EQ(r.at(1).recall, 2.0 / 5.0);
  EXPECT_EQ(r.at(1).mean_recall, (0.5 + 0.5 + 0.0) / 3.0);
  EXPECT_EQ(*r.at(1).zs_recall, 0.5);
  EXPECT_EQ(r.at(3).recall, 3.0 / 5.0);
  EXPECT_EQ(r.at(3).mean_recall, (0.5 + 0.5 + 1.0) / 3.0);
  EXPECT_EQ(*r.at(3).zs_recall, 0.5);
  EXPECT_EQ(r.at(5).recall, 1.0);
  EXPECT_EQ(r.at(5).mean_recall, 1.0);
  EXPECT_EQ(*r.at(5).zs_recall, 1.0);
}

TEST(Metrics, TwoSceneFixtureMatchesEnumeration) {
  const TwoScenes f = two_scene_fixture();
  scr::EvalOptions opts;
  opts.ks = {1, 2, 3, 4, 5, 20, 50, 100};
  const auto r = scr::score_rankings(f.rankings, f.scenes, 4, f.train, opts);
  for (std::size_t k : opts.ks) {
    const Expected e = enumerate(f, k, 4);
    EXPECT_EQ(r.at(k).recall, e.recall) << k;
    EXPECT_EQ(r.at(k).mean_recall, e.mean_recall) << k;
    EXPECT_EQ(*r.at(k).zs_recall, e.zs) << k;
  }
}

TEST(Metrics, WrongPredictedLabelsAreMisses) {
  TwoScenes f = two_scene_fixture();
  f.rankings[1][0].subj_label = 0;
  scr::EvalOptions opts;
  opts.ks = {1};
  const auto r = scr::score_rankings(f.rankings, f.scenes, 4, f.train, opts);
  EXPECT_EQ(r.at(1).recall, 1.0 / 5.0);
}

TEST(Metrics, ZeroShotIsNullWhenEverythingWasSeen) {
  TwoScenes f = two_scene_fixture();
  f.train = scr::triplet_classes(f.scenes);
  const auto r = scr::score_rankings(f.rankings, f.scenes, 4, f.train, {});
  for (const auto& x : r.at_k) EXPECT_FALSE(x.zs_recall.has_value());
  const auto j = scr::to_json(r);
  EXPECT_TRUE(j["k"]["20"]["zs_recall"].is_null());
  EXPECT_EQ(j["per_predicate_recall"].size(), 3u);
}

TEST(Metrics, MacroAveragesScenes) {
  const TwoScenes f = two_scene_fixture();
  scr::EvalOptions opts;
  opts.ks = {1};
  opts.macro_over_scenes = true;
  const auto r = scr::score_rankings(f.rankings, f.scenes, 4, f.train, opts);
  EXPECT_EQ(r.at(1).recall, (1.0 / 3.0 + 1.0 / 2.0) / 2.0);
}

TEST(Metrics, Errors) {
  const TwoScenes f = two_scene_fixture();
  EXPECT_THROW(scr::score_rankings({}, {}, 4, f.train, {}), std::invalid_argument);
  EXPECT_THROW(scr::score_rankings(std::span(f.rankings).first(1), f.scenes, 4, f.train, {}),
               std::invalid_argument);
}

TEST(Metrics, PerfectRankingOfSingleTriplet) {
  // Zero weights leave the frequency prior as the only signal, peaked at predicate 2 for (0, 1).
  SceneRecord s = scene_with({0, 1, 1, 0}, {{0, 1, 2}});
  for (auto& e : s.entities) e.features = {0.0, 0.0};
  scr::FreqTable freq(2, 5);
  freq.at(0, 1, 2) = 100;
  const scr::ModelParams p(scr::ModelDims{2, 2, 5, 3});
  const std::vector<SceneRecord> scenes{s};
  const auto r = scr::evaluate(p, scenes, freq, {});
  EXPECT_EQ(r.at(20).recall, 1.0);
  const auto ranking = scr::rank_scene(p, s, freq, {});
  EXPECT_EQ(ranking.front().subject, 0u);
  EXPECT_EQ(ranking.front().object, 1u);
  EXPECT_EQ(ranking.front().predicate, 2u);
  EXPECT_EQ(ranking.size(), 12u);

  scr::EvalOptions open;
  open.graph_constraint = false;
  EXPECT_EQ(scr::rank_scene(p, s, freq, open).size(), 12u * 4u);
}

scr::DatasetConfig small_corpus() {
  scr::DatasetConfig c;
  c.num_scenes = 200;
  c.num_obj_classes = 6;
  c.num_predicates = 10;
  c.feature_dim = 6;
  c.seed = 3;
  return c;
}

scr::TrainConfig small_train() {
  scr::TrainConfig t;
  t.epochs = 3;
  t.batch_scenes = 8;
  t.embedding_dim = 4;
  return t;
}

TEST(Evaluate, ReportInvariants) {
  const scr::Experiment exp = scr::Experiment::from_dataset(scr::sample_dataset(small_corpus()));
  const auto run = scr::run_once(small_train(), exp);
  for (auto task : {scr::Task::PredCls, scr::Task::SgCls}) {
    for (bool constrained : {true, false}) {
      scr::EvalOptions opts;
      opts.task = task;
      opts.graph_constraint = constrained;
      opts.ks = {1, 5, 20, 50, 100};
      const auto r = scr::evaluate(run.trained.params, exp.test, exp.freq, exp.train_triplets, opts);
      const scr::RecallAtK* prev = nullptr;
      for (const auto& x : r.at_k) {
        EXPECT_GE(x.recall, 0.0);
        EXPECT_LE(x.recall, 1.0);
        double sum = 0.0, lo = 1.0, hi = 0.0;
        int n = 0;
        for (const auto& v : x.per_predicate) {
          if (!v) continue;
          sum += *v;
          lo = std::min(lo, *v);
          hi = std::max(hi, *v);
          ++n;
        }
        ASSERT_GT(n, 0);
        EXPECT_NEAR(x.mean_recall, sum / n, 1e-12);
        EXPECT_GE(x.mean_recall, lo);
        EXPECT_LE(x.mean_recall, hi);
        if (prev != nullptr) {
          EXPECT_GE(x.recall, prev->recall);
          EXPECT_GE(x.mean_recall, prev->mean_recall);
          if (x.zs_recall && prev->zs_recall) { EXPECT_GE(*x.zs_recall, *prev->zs_recall); }
        }
        prev = &x;
      }
    }
  }
  const auto j = scr::to_json(run.report);
  for (const char* k : {"20", "50", "100"}) {
    EXPECT_TRUE(j["k"][k].contains("recall"));
    EXPECT_TRUE(j["k"][k].contains("mean_recall"));
    EXPECT_TRUE(j["k"][k].contains("zs_recall"));
  }
  EXPECT_EQ(j["config"]["delta"], 0.7);
  EXPECT_EQ(j["history"]["epochs"].size(), 3u);
}

TEST(Train, ZeroEpochsReturnsInitialParams) {
  const scr::Experiment exp = scr::Experiment::from_dataset(scr::sample_dataset(small_corpus()));
  scr::TrainConfig t = small_train();
  t.epochs = 0;
  const auto r = scr::train(t, exp.train, exp.val, exp.freq);
  EXPECT_EQ(r.params, scr::init_params(scr::model_dims_for(exp.train, exp.freq, 4), t.seed));
  EXPECT_TRUE(r.history.epochs.empty());
}

TEST(Train, EmptyTrainingSetThrows) {
  const scr::FreqTable freq(3, 4);
  EXPECT_THROW(scr::train(small_train(), {}, {}, freq), std::invalid_argument);
}

TEST(Train, CrossEntropyMatchesUniformBranchStepByStep) {
  const scr::Experiment exp = scr::Experiment::from_dataset(scr::sample_dataset(small_corpus()));
  scr::TrainConfig ce = small_train();
  ce.loss_mode = scr::LossMode::CE;
  scr::TrainConfig off = small_train();
  off.delta = -std::numeric_limits<double>::infinity();
  const auto a = scr::train(ce, exp.train, exp.val, exp.freq);
  const auto b = scr::train(off, exp.train, exp.val, exp.freq);
  ASSERT_EQ(a.history.step_loss.size(), b.history.step_loss.size());
  for (std::size_t k = 0; k < a.history.step_loss.size(); ++k) {
    EXPECT_NEAR(a.history.step_loss[k], b.history.step_loss[k], 1e-12) << k;
  }
  EXPECT_EQ(b.history.epochs.back().triggered_fraction, 0.0);
}

TEST(Train, DeterministicAndReweighted) {
  const scr::Experiment exp = scr::Experiment::from_dataset(scr::sample_dataset(small_corpus()));
  const auto a = scr::train(small_train(), exp.train, exp.val, exp.freq);
  const auto b = scr::train(small_train(), exp.train, exp.val, exp.freq);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.history.step_loss, b.history.step_loss);
  EXPECT_GT(a.history.epochs.front().triggered_fraction, 0.0);
  EXPECT_TRUE(a.history.epochs.back().val_loss.has_value());
  EXPECT_LT(a.history.epochs.back().train_loss, a.history.epochs.front().train_loss);
}

TEST(Sweep, GridOfOneEqualsSingleRun) {
  const scr::Experiment exp = scr::Experiment::from_dataset(scr::sample_dataset(small_corpus()));
  const double delta[] = {0.6};
  const double lambda[] = {0.03};
  const scr::SkewVariant variant[] = {scr::SkewVariant::Freq};
  const auto rows = scr::run_sweep(small_train(), delta, lambda, variant, exp);
  ASSERT_EQ(rows.size(), 1u);
  scr::TrainConfig t = small_train();
  t.delta = 0.6;
  t.lambda_skew = 0.03;
  t.skew_variant = scr::SkewVariant::Freq;
  const auto single = scr::run_once(t, exp);
  EXPECT_EQ(scr::to_json(rows[0].report), scr::to_json(single.report));

  std::ostringstream csv;
  scr::write_sweep_csv(rows, csv);
  std::istringstream lines(csv.str());
  std::string header;
  std::getline(lines, header);
  EXPECT_EQ(header, "variant,delta,lambda,k,recall,mean_recall,zs_recall");
  int count = 0;
  for (std::string line; std::getline(lines, line);) {
    if (count++ == 1) {
      std::vector<std::string> f;
      std::istringstream fields(line);
      for (std::string x; std::getline(fields, x, ',');) f.push_back(x);
      f.resize(7);
      const auto& r = single.report.at(50);
      EXPECT_EQ(f[0], "freq");
      EXPECT_EQ(f[1], "0.6");
      EXPECT_EQ(f[2], "0.03");
      EXPECT_EQ(f[3], "50");
      EXPECT_EQ(std::stod(f[4]), r.recall);
      EXPECT_EQ(std::stod(f[5]), r.mean_recall);
      if (r.zs_recall) {
        EXPECT_EQ(std::stod(f[6]), *r.zs_recall);
      } else {
        EXPECT_EQ(f[6], "");
      }
    }
  }
  EXPECT_EQ(count, 3);

  EXPECT_THROW(scr::run_sweep(small_train(), {}, lambda, variant, exp), std::invalid_argument);
}

TEST(Sweep, CartesianProduct) {
  scr::DatasetConfig c = small_corpus();
  c.num_scenes = 40;
  const scr::Experiment exp = scr::Experiment::from_dataset(scr::sample_dataset(c));
  scr::TrainConfig t = small_train();
  t.epochs = 1;
  const double deltas[] = {0.6, 0.7};
  const double lambdas[] = {0.03, 0.06, 0.08};
  const scr::SkewVariant variants[] = {scr::SkewVariant::Emb, scr::SkewVariant::FreqEmb};
  const auto rows = scr::run_sweep(t, deltas, lambdas, variants, exp);
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows[0].variant, scr::SkewVariant::Emb);
  EXPECT_EQ(rows[11].variant, scr::SkewVariant::FreqEmb);
  EXPECT_EQ(rows[4].delta, 0.7);
  EXPECT_EQ(rows[4].lambda_skew, 0.06);
}

// CLI, driven in-process.

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "scr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = scr::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("scr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

TEST_F(CliTest, GenIsDeterministic) {
  const auto a = run_cli({"gen", "--scenes", "10", "--seed", "1", "--out", path("a.jsonl")});
  const auto b = run_cli({"gen", "--scenes", "10", "--seed", "1", "--out", path("b.jsonl")});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(path("a.jsonl")), slurp(path("b.jsonl")));
  EXPECT_FALSE(slurp(path("a.jsonl")).empty());
  EXPECT_TRUE(fs::exists(path("a.meta.json")));
  const auto stats = nlohmann::json::parse(slurp(path("a.stats.json")));
  EXPECT_EQ(stats["counts"].size(), 31u);
  EXPECT_EQ(slurp(path("a.stats.json")), slurp(path("b.stats.json")));
}

TEST_F(CliTest, TrainEvalSweepEndToEnd) {
  ASSERT_EQ(run_cli({"gen", "--scenes", "60", "--predicates", "6", "--obj-classes", "4",
                     "--feature-dim", "4", "--out", path("d.jsonl")})
                .code,
            0);
  const auto tr = run_cli({"train", "--data", path("d.jsonl"), "--out", path("m.json"), "--epochs",
                           "2", "--embedding-dim", "3", "--delta", "inf", "--freq-out",
                           path("freq.json")});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_NE(tr.out.find("final train loss"), std::string::npos);
  const auto hist = nlohmann::json::parse(slurp(path("m.history.json")));
  EXPECT_EQ(hist["config"]["delta"], "inf");
  EXPECT_EQ(hist["epochs"].size(), 2u);

  const auto ev = run_cli({"eval", "--checkpoint", path("m.json"), "--data", path("d.jsonl"),
                           "--freq", path("freq.json"), "--out", path("metrics.json")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto metrics = nlohmann::json::parse(slurp(path("metrics.json")));
  EXPECT_TRUE(metrics["k"].contains("50"));
  EXPECT_EQ(metrics["config"]["split"], "test");

  const auto sg = run_cli({"eval", "--checkpoint", path("m.json"), "--data", path("d.jsonl"),
                           "--task", "sgcls", "--split", "val", "--no-graph-constraint"});
  ASSERT_EQ(sg.code, 0) << sg.err;
  EXPECT_EQ(nlohmann::json::parse(sg.out)["config"]["task"], "sgcls");

  const auto sw = run_cli({"sweep", "--data", path("d.jsonl"), "--deltas", "0.7", "--lambdas",
                           "0.03,0.08", "--epochs", "1", "--embedding-dim", "3"});
  ASSERT_EQ(sw.code, 0) << sw.err;
  EXPECT_EQ(sw.out.rfind("variant,delta,lambda,k,recall,mean_recall,zs_recall\n", 0), 0u);
  EXPECT_EQ(std::count(sw.out.begin(), sw.out.end(), '\n'), 7);
}

TEST_F(CliTest, EvalWithoutCheckpoint) {
  ASSERT_EQ(run_cli({"gen", "--scenes", "10", "--out", path("d.jsonl")}).code, 0);
  const auto r = run_cli({"eval", "--checkpoint", path("missing.json"), "--data", path("d.jsonl")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("checkpoint not found"), std::string::npos);
  const auto none = run_cli({"eval", "--data", path("d.jsonl")});
  EXPECT_NE(none.code, 0);
  EXPECT_NE(none.err.find("checkpoint not found"), std::string::npos);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run_cli({"bogus"}).code, 2);
  EXPECT_EQ(run_cli({}).code, 2);
  const auto flag = run_cli({"gen", "--out", path("x.jsonl"), "--nope"});
  EXPECT_EQ(flag.code, 2);
  EXPECT_NE(flag.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run_cli({"train", "--data", "x", "--out", "y", "--variant", "other"}).code, 2);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST_F(CliTest, RuntimeErrors) {
  const auto r = run_cli({"train", "--data", path("nothing.jsonl"), "--out", path("m.json")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("not found"), std::string::npos);
  EXPECT_EQ(run_cli({"gen", "--max-entities", "1", "--min-entities", "1", "--out", path("g.jsonl")}).code, 1);
}

TEST_F(CliTest, Gradcheck) {
  const auto r = run_cli({"gradcheck"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
}

}  // namespace
