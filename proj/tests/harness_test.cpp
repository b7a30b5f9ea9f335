#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "metaepi/errors.hpp"
#include "metaepi/harness.hpp"

namespace metaepi {
namespace {

namespace fs = std::filesystem;

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

class HarnessDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("metaepi_harness_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // A run small enough for unit tests.
  ExperimentConfig quick() const {
    ExperimentConfig c;
    c.epochs = 1;
    c.episodes_per_epoch = 2;
    c.tasks_per_episode = 5;
    c.eval_tasks = 20;
    c.out_dir = (dir_ / "run").string();
    return c;
  }
  fs::path dir_;
};

TEST(Config, KeysInCanonicalOrder) {
  const std::vector<std::string> expected{
      "data_bank",   "data_labels",       "data_prototypes",    "algo",       "sampler",
      "n_way",       "k_shot",            "q_query",            "tasks_per_episode",
      "episodes_per_epoch", "epochs",     "meta_batch",         "outer_lr",   "init_inner_lr",
      "reptile_rate", "adapter_hidden",   "blend_ratio",        "logit_scale", "inner_steps_train",
      "inner_steps_test", "seed",         "eval_tasks",         "eval_seed",  "out_dir"};
  EXPECT_EQ(ExperimentConfig::keys(), expected);
}

TEST(Config, DeskDefaults) {
  const ExperimentConfig c;
  const TrainConfig t = c.train_config();
  EXPECT_EQ(t.algorithm, Algorithm::maml);
  EXPECT_EQ(t.sampler, SamplerKind::dynamic);
  EXPECT_EQ(t.shape.n_way, 3u);
  EXPECT_EQ(t.shape.k_shot, 5u);
  EXPECT_EQ(t.shape.q_query, 5u);
  EXPECT_EQ(t.tasks_per_episode, 20u);
  EXPECT_EQ(t.episodes_per_epoch, 10u);
  EXPECT_EQ(t.epochs, 30u);
  EXPECT_EQ(t.meta_batch, 1u);
  EXPECT_EQ(t.outer_lr, 1e-4);
  EXPECT_EQ(t.init_inner_lr, 0.01);
  EXPECT_EQ(c.adapter_shape(32).hidden, 16u);
  EXPECT_EQ(c.eval_tasks, 200u);
}

TEST(Config, UnknownKeyAndBadValuesRejected) {
  ExperimentConfig c;
  EXPECT_THROW(c.set("learning_rate", "1"), ConfigError);
  EXPECT_THROW(c.set("epochs", "-3"), ConfigError);
  EXPECT_THROW(c.set("epochs", "3x"), ConfigError);
  EXPECT_THROW(c.set("outer_lr", "fast"), ConfigError);
  EXPECT_THROW(c.set("algo", "adam"), ConfigError);
  EXPECT_THROW(parse_config("epochs 3\n"), ConfigError);
  EXPECT_THROW(parse_config("nonsense = 1\n"), ConfigError);
}

TEST(Config, ParsesCommentsAndWhitespace) {
  const auto c = parse_config("# header\n\n  epochs = 7   # trailing\nalgo=reptile\nouter_lr = 2.5e-3\r\n");
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_EQ(c.algo, Algorithm::reptile);
  EXPECT_EQ(c.outer_lr, 2.5e-3);
  EXPECT_EQ(c.k_shot, 5u);
}

TEST(Config, EchoRoundTrips) {
  ExperimentConfig c;
  c.algo = Algorithm::metasgd;
  c.sampler = SamplerKind::random;
  c.outer_lr = 0.1 + 0.2;
  c.blend_ratio = 1.0 / 3.0;
  c.seed = 123456789012345ULL;
  c.out_dir = "some dir/out";
  const std::string echoed = "junk before\n" + c.render_echo() + "epoch,episode\n0,0\n";
  const ExperimentConfig back = parse_config(echoed);
  EXPECT_EQ(back.render(), c.render());
  EXPECT_EQ(back.outer_lr, c.outer_lr);
  EXPECT_EQ(parse_config(c.render()).render(), c.render());
}

TEST(Config, Presets) {
  ExperimentConfig c;
  c.apply_preset("paper");
  EXPECT_EQ(c.tasks_per_episode, 20u);
  EXPECT_EQ(c.episodes_per_epoch, 50u);
  EXPECT_EQ(c.epochs, 100u);
  EXPECT_EQ(c.outer_lr, 1e-4);
  EXPECT_EQ(c.inner_steps_train, 1u);
  EXPECT_EQ(c.inner_steps_test, 1u);
  c.apply_preset("desk");
  EXPECT_EQ(c.episodes_per_epoch, 10u);
  EXPECT_EQ(c.epochs, 30u);
  EXPECT_THROW(c.apply_preset("huge"), ConfigError);
}

TEST(Format, SixSignificantDigits) {
  EXPECT_EQ(format_number(0.123456789), "0.123457");
  EXPECT_EQ(format_number(1.0), "1");
  EXPECT_EQ(format_number(1234567.0), "1.23457e+06");
}

TEST_F(HarnessDir, ParamsRoundTrip) {
  const MetaParams scalar{{1.5, -2.0, 1e-300}, {0.01}};
  write_params(dir_ / "a.mpar", scalar);
  EXPECT_EQ(read_params(dir_ / "a.mpar", 3), scalar);
  const MetaParams vec{{1.5, -2.0}, {0.1, 0.2}};
  write_params(dir_ / "b.mpar", vec);
  EXPECT_EQ(read_params(dir_ / "b.mpar", 2), vec);
  EXPECT_THROW(read_params(dir_ / "a.mpar", 5), DimensionError);
  std::ofstream(dir_ / "c.mpar", std::ios::binary) << "MPAX\x01\x00\x00\x00";
  EXPECT_THROW(read_params(dir_ / "c.mpar", 1), ParseError);
}

TEST(Format, MetricsCarryEchoAndOneRowPerStep) {
  ExperimentConfig c;
  MetricsLog log;
  for (std::size_t i = 0; i < 4; ++i) {
    StepRecord r;
    r.task = i;
    r.inner_loss = 1.0 / 3.0;
    log.records.push_back(r);
  }
  const std::string text = format_metrics(c, log);
  EXPECT_EQ(text.rfind(c.render_echo(), 0), 0u);
  EXPECT_NE(text.find("# config end\nepoch,episode,task,inner_loss,outer_loss,mean_acc\n0,0,0,"),
            std::string::npos);
  EXPECT_NE(text.find("\n0,0,3,0.333333,0,0\n"), std::string::npos);
  EXPECT_EQ(count_lines(text), count_lines(c.render_echo()) + 1 + 4);
  EXPECT_EQ(text.back(), '\n');
}

TEST_F(HarnessDir, GenDataRoundTripsThroughLoadDataset) {
  GenDataOptions opt;
  opt.spec = SyntheticSpec::desk(7);
  opt.out_dir = dir_ / "data";
  const auto files = run_gen_data(opt);
  for (const auto& p : {files.bank, files.labels, files.prototypes, files.split}) EXPECT_TRUE(fs::exists(p));
  ExperimentConfig c;
  c.data_bank = files.bank.string();
  c.data_labels = files.labels.string();
  c.data_prototypes = files.prototypes.string();
  const Dataset loaded = load_dataset(c);
  const Dataset direct = make_dataset(opt.spec, opt.test_fraction);
  EXPECT_EQ(loaded.split.test_rows, direct.split.test_rows);
  EXPECT_EQ(loaded.bank.labels, direct.bank.labels);
  for (std::size_t i = 0; i < loaded.bank.features.size(); ++i) {
    EXPECT_NEAR(loaded.bank.features.values()[i], direct.bank.features.values()[i], 1e-6);
  }
}

TEST(Dataset, DefaultIsDeskData) {
  const Dataset d = load_dataset(ExperimentConfig{});
  EXPECT_EQ(d.bank, generate(SyntheticSpec::desk(kDefaultDataSeed)).bank);
  EXPECT_EQ(d.split.test.per_class_counts(), std::vector<std::size_t>(10, 12));
}

TEST(Dataset, MissingCompanionFilesRejected) {
  ExperimentConfig c;
  c.data_bank = "bank.emb";
  EXPECT_THROW(load_dataset(c), ConfigError);
}

TEST_F(HarnessDir, TrainWritesOutputs) {
  const ExperimentConfig c = quick();
  const TrainOutcome out = run_train(c);
  for (const char* f : {"metrics.csv", "memory.csv", "summary.txt", "params.mpar"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
  const std::string summary = read_text(dir_ / "run" / "summary.txt");
  EXPECT_NE(summary.find("min_class_acc = " + format_number(out.summary.eval.min_class_accuracy) + "\n"),
            std::string::npos);
  EXPECT_EQ(out.summary.train_steps, 10u);
  EXPECT_EQ(count_lines(read_text(dir_ / "run" / "memory.csv")), count_lines(c.render_echo()) + 1 + 10 * 10);
  const RunSummary again = run_eval(c, dir_ / "run" / "params.mpar");
  EXPECT_EQ(again.eval.overall_accuracy, out.summary.eval.overall_accuracy);
  EXPECT_EQ(again.eval.per_class_accuracy, out.summary.eval.per_class_accuracy);
}

TEST_F(HarnessDir, CompareCoversEveryCellOnOneFixture) {
  const ExperimentConfig c = quick();
  const std::vector<std::pair<Algorithm, SamplerKind>> cells{{Algorithm::maml, SamplerKind::dynamic},
                                                              {Algorithm::reptile, SamplerKind::random}};
  const CompareReport report = compare(c, cells, {0, 3}, 2);
  ASSERT_EQ(report.cells.size(), 4u);
  std::set<std::string> seen;
  for (const auto& cell : report.cells) {
    EXPECT_TRUE(seen.insert(cell_name(cell.algo, cell.sampler) + "/" + std::to_string(cell.seed)).second);
  }
  EXPECT_EQ(report.fixture, eval_fixture(c, load_dataset(c)));
  const std::string text = format_compare(c, report);
  EXPECT_NE(text.find("config,seed,overall_acc,min_class_acc,worst3_acc\n"), std::string::npos);
  EXPECT_NE(text.find("maml:dynamic,mean,"), std::string::npos);
  EXPECT_NE(text.find("reptile:random,3,"), std::string::npos);
  // Concurrency does not change results.
  const CompareReport serial = compare(c, cells, {0, 3}, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(serial.cells[i].summary.eval.per_class_accuracy, report.cells[i].summary.eval.per_class_accuracy);
  }
}

TEST_F(HarnessDir, SingleCellCompareMatchesTrain) {
  ExperimentConfig c = quick();
  c.seed = 4;
  const CompareReport report = compare(c, {{c.algo, c.sampler}}, {4});
  const TrainOutcome train = run_train(c);
  ASSERT_EQ(report.cells.size(), 1u);
  EXPECT_EQ(report.cells[0].summary.eval.overall_accuracy, train.summary.eval.overall_accuracy);
  EXPECT_EQ(report.cells[0].summary.eval.min_class_accuracy, train.summary.eval.min_class_accuracy);
}

TEST(Sweep, ZeroRateRowsIdentical) {
  ExperimentConfig c;
  c.eval_tasks = 30;
  const Dataset data = load_dataset(c);
  const AdapterShape shape = c.adapter_shape(data.bank.dim());
  const MetaParams mp{AdapterParams::initialize(shape, 1).flatten(), {0.0}};
  const auto rows = sweep_steps(c, data, mp, {1, 2, 3, 4, 5});
  ASSERT_EQ(rows.size(), 5u);
  for (const auto& r : rows) {
    EXPECT_NEAR(r.mean_accuracy, rows[0].mean_accuracy, 1e-12);
    EXPECT_NEAR(r.min_class_accuracy, rows[0].min_class_accuracy, 1e-12);
  }
  EXPECT_EQ(sweep_steps(c, data, mp, {1}).size(), 1u);
  const std::string text = format_sweep(c, rows);
  EXPECT_NE(text.find("steps,mean_acc,min_class_acc\n1,"), std::string::npos);
}

TEST(CellName, ParsesAlgoSampler) {
  EXPECT_EQ(parse_cell_name("fomaml:random"), std::make_pair(Algorithm::fomaml, SamplerKind::random));
  EXPECT_THROW(parse_cell_name("fomaml"), ConfigError);
  EXPECT_THROW(parse_cell_name("fomaml:greedy"), ConfigError);
}

}  // namespace
}  // namespace metaepi
