#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "ganforge/data.hpp"
#include "ganforge/tensor_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ganforge;

namespace {

/// Runs the CLI from `cwd` with `args`; returns its exit status. Output goes to cli.log.
int cli(const fs::path& cwd, const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + (env.empty() ? "" : " ") + "'" GANFORGE_CLI "' " +
                          args + " >> cli.log 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

std::size_t line_count(const fs::path& p) {
  const std::string s = read_file(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("ganforge_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  /// Small two-class glyph cache at dir_/data.
  void small_dataset(std::size_t per_class = 12) {
    ASSERT_EQ(cli(dir_, "--quiet dataset --toy glyphs --classes 2 --per-class " + std::to_string(per_class) +
                            " --out data"),
              0);
  }

  static constexpr const char* kTinyGan = " --base-width 2 --latent 8 --batch 8 --grid-every 0";

  fs::path dir_;
};

}  // namespace

// ---- dataset ---------------------------------------------------------------

TEST_F(Cli, DatasetToyGlyphsHas192AndIsIdempotent) {
  ASSERT_EQ(cli(dir_, "dataset --toy glyphs --classes 3 --per-class 64 --out data"), 0);
  const Dataset d = load_dataset(dir_ / "data");
  EXPECT_EQ(d.size(), 192u);
  EXPECT_EQ(d.num_classes(), 3u);
  const std::string before = read_file(dir_ / "data" / "images.gft") + read_file(dir_ / "data" / "manifest.json");
  ASSERT_EQ(cli(dir_, "dataset --toy glyphs --classes 3 --per-class 64 --out data"), 0);
  EXPECT_EQ(read_file(dir_ / "data" / "images.gft") + read_file(dir_ / "data" / "manifest.json"), before);
  const json rc = read_json(dir_ / "data" / "run_config.json");
  EXPECT_EQ(rc.at("command"), "dataset");
  EXPECT_EQ(rc.at("params").at("per_class"), 64);
}

TEST_F(Cli, DatasetFromMixedSizeImagesCachesAt64) {
  for (const auto& [cls, w, h] : {std::tuple{"a", 20, 30}, std::tuple{"a", 100, 80}, std::tuple{"b", 64, 64}}) {
    RawImage img;
    img.width = static_cast<std::size_t>(w);
    img.height = static_cast<std::size_t>(h);
    img.channels = 1;
    img.samples.assign(img.width * img.height, 0);
    for (std::size_t i = 0; i < img.samples.size(); ++i) img.samples[i] = static_cast<unsigned>(i % 256);
    fs::create_directories(dir_ / "imgs" / cls);
    write_pgm(dir_ / "imgs" / cls / (std::to_string(w) + "x" + std::to_string(h) + ".pgm"), img);
  }
  ASSERT_EQ(cli(dir_, "dataset --from imgs --channels 1 --out data"), 0);
  const Dataset d = load_dataset(dir_ / "data");
  EXPECT_EQ(d.images.shape(), (Shape{3, 1, 64, 64}));
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"a", "b"}));
}

TEST_F(Cli, DatasetValidationAndMissingSourceExitCodes) {
  EXPECT_EQ(cli(dir_, "dataset --out data"), 2);                                   // neither source
  EXPECT_EQ(cli(dir_, "dataset --toy glyphs --from x --out data"), 2);             // both sources
  EXPECT_EQ(cli(dir_, "dataset --toy circles --out data"), 2);                     // unknown corpus
  EXPECT_EQ(cli(dir_, "dataset --toy glyphs --classes 0 --out data"), 2);          // invalid size
  EXPECT_EQ(cli(dir_, "dataset --from does_not_exist --out data"), 4);
  EXPECT_EQ(cli(dir_, "dataset --toy glyphs --no-such-flag"), 2);
  // The resolved configuration is on disk even though the command failed.
  EXPECT_TRUE(fs::exists(dir_ / "data" / "run_config.json"));
}

// ---- train-gan -------------------------------------------------------------

TEST_F(Cli, TrainGanTwoEpochsWritesHistoryCheckpointsAndGrids) {
  small_dataset(32);
  ASSERT_EQ(cli(dir_, "train-gan --data data --out gan --epochs 2 --batch 32 --base-width 2 --latent 8 "
                      "--checkpoint-every 1 --grid-side 2"),
            0);
  EXPECT_EQ(line_count(dir_ / "gan" / "history.csv"), 3u);  // header + 2 epochs
  EXPECT_TRUE(fs::exists(dir_ / "gan" / "final.gfc"));
  EXPECT_TRUE(fs::exists(dir_ / "gan" / "checkpoints" / "epoch_0001.gfc"));
  EXPECT_TRUE(fs::exists(dir_ / "gan" / "checkpoints" / "epoch_0002.gfc"));
  const RawImage grid = decode_image(dir_ / "gan" / "samples" / "epoch_0002.ppm");
  EXPECT_EQ(grid.width, 128u);
  EXPECT_EQ(grid.height, 128u);
}

TEST_F(Cli, TrainGanEchoesBothStabilizers) {
  small_dataset();
  ASSERT_EQ(cli(dir_, std::string("train-gan --data data --out gan --epochs 1 --loss wgan-gp --sn") + kTinyGan), 0);
  const json rc = read_json(dir_ / "gan" / "run_config.json");
  EXPECT_EQ(rc.at("params").at("loss_mode"), "wgan_gp+spectral_norm");
  EXPECT_EQ(rc.at("params").at("train").at("loss_mode"), "wgan_gp+spectral_norm");
  EXPECT_NE(read_file(dir_ / "cli.log").find("gradient-penalty(lambda=10) spectral-norm(iters=1)"), std::string::npos);
}

TEST_F(Cli, TrainGanIsByteIdenticalOnRerun) {
  small_dataset();
  const std::string args = std::string("--seed 4 train-gan --data data --out gan --epochs 2 --track-fid") + kTinyGan;
  ASSERT_EQ(cli(dir_, args), 0);
  const std::string first = read_file(dir_ / "gan" / "final.gfc") + read_file(dir_ / "gan" / "fid.csv");
  fs::remove_all(dir_ / "gan");
  ASSERT_EQ(cli(dir_, args), 0);
  EXPECT_EQ(read_file(dir_ / "gan" / "final.gfc") + read_file(dir_ / "gan" / "fid.csv"), first);
}

TEST_F(Cli, TrainGanExitCodes) {
  EXPECT_EQ(cli(dir_, "train-gan --data nowhere --out gan --epochs 1"), 4);
  small_dataset();
  EXPECT_EQ(cli(dir_, "train-gan --data data --out gan --epochs 0"), 2);
  EXPECT_EQ(cli(dir_, "train-gan --data data --out gan --loss hinge"), 2);
  // An astronomically large step drives the critic to overflow.
  EXPECT_EQ(cli(dir_, std::string("train-gan --data data --out gan --epochs 2 --loss wgan-gp --lr 1e300") + kTinyGan),
            3);
  EXPECT_TRUE(fs::exists(dir_ / "gan" / "run_config.json"));
}

TEST_F(Cli, PerClassTrainingWritesOneGeneratorPerClass) {
  small_dataset();
  ASSERT_EQ(cli(dir_, std::string("train-gan --data data --out gan --epochs 1 --per-class") + kTinyGan), 0);
  const json idx = read_json(dir_ / "gan" / "classes.json");
  ASSERT_EQ(idx.at("classes").size(), 2u);
  EXPECT_TRUE(fs::exists(dir_ / "gan" / "class_0" / "final.gfc"));
  EXPECT_TRUE(fs::exists(dir_ / "gan" / "class_1" / "final.gfc"));
  EXPECT_EQ(idx.at("classes")[1].at("n_train"), 12);
}

// ---- evaluate --------------------------------------------------------------

TEST_F(Cli, EvaluateSelfTestGivesZeroFidAndFullSchema) {
  small_dataset();
  ASSERT_EQ(cli(dir_, "evaluate --data data --self-test --out eval"), 0);
  const json r = read_json(dir_ / "eval" / "report.json");
  EXPECT_LE(r.at("fid").get<double>(), 1e-6);
  for (const char* key : {"is_mean", "is_std", "fid", "kid_mean", "kid_std", "precision", "recall", "extractor_id"}) {
    EXPECT_TRUE(r.contains(key)) << key;
  }
  EXPECT_EQ(line_count(dir_ / "eval" / "report.csv"), 2u);
}

TEST_F(Cli, EvaluateRawPixelsAndProjectionBothSucceedAndDiffer) {
  small_dataset();
  ASSERT_EQ(cli(dir_, std::string("train-gan --data data --out gan --epochs 1") + kTinyGan), 0);
  ASSERT_EQ(cli(dir_, "evaluate --data data --checkpoint gan --extractor raw-pixels --out raw"), 0);
  ASSERT_EQ(cli(dir_, "evaluate --data data --checkpoint gan --extractor rp:64 --out rp"), 0);
  const json a = read_json(dir_ / "raw" / "report.json"), b = read_json(dir_ / "rp" / "report.json");
  EXPECT_NE(a.at("extractor_id"), b.at("extractor_id"));
  EXPECT_NE(a.at("fid").get<double>(), b.at("fid").get<double>());
  const std::string log = read_file(dir_ / "cli.log");
  EXPECT_NE(log.find("[raw-pixels"), std::string::npos);
  EXPECT_NE(log.find("[random-projection:64"), std::string::npos);
}

TEST_F(Cli, EvaluateClassifierExtractorNeedsClassifier) {
  small_dataset();
  EXPECT_EQ(cli(dir_, "evaluate --data data --self-test --extractor classifier --out e1"), 4);
  EXPECT_EQ(cli(dir_, "evaluate --data data --self-test --classifier missing.gfn --out e2"), 4);
  EXPECT_EQ(cli(dir_, "evaluate --data data --out e3"), 4);  // no checkpoint
  ASSERT_EQ(cli(dir_, "evaluate --data data --self-test --extractor classifier --fit-classifier --clf-epochs 1 "
                      "--clf-widths 2,4,8 --out e4"),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "e4" / "classifier.gfn"));
  EXPECT_EQ(read_json(dir_ / "e4" / "report.json").at("is_available"), true);
  // A saved classifier is reusable.
  EXPECT_EQ(cli(dir_, "evaluate --data data --self-test --extractor classifier --classifier e4/classifier.gfn --out e5"),
            0);
}

// ---- embed -----------------------------------------------------------------

TEST_F(Cli, EmbedPcaWritesCsvAndSvg) {
  small_dataset();
  ASSERT_EQ(cli(dir_, "embed --data data --method pca --out emb"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "emb" / "pca.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "emb" / "pca.svg"));
  EXPECT_FALSE(fs::exists(dir_ / "emb" / "tsne.csv"));
}

TEST_F(Cli, EmbedTsneTwiceGivesIdenticalFiles) {
  small_dataset();
  ASSERT_EQ(cli(dir_, "embed --data data --method tsne --perp 10 --seed 7 --iters 200 --out a"), 0);
  ASSERT_EQ(cli(dir_, "embed --data data --method tsne --perp 10 --seed 7 --iters 200 --out b"), 0);
  EXPECT_EQ(read_file(dir_ / "a" / "tsne.csv"), read_file(dir_ / "b" / "tsne.csv"));
  EXPECT_EQ(read_file(dir_ / "a" / "tsne.svg"), read_file(dir_ / "b" / "tsne.svg"));
}

TEST_F(Cli, EmbedMixedRealAndSyntheticHasSourceFlags) {
  ASSERT_EQ(cli(dir_, "--quiet dataset --toy glyphs --classes 2 --per-class 50 --out data"), 0);
  ASSERT_EQ(cli(dir_, std::string("train-gan --data data --out gan --epochs 1 --per-class") + kTinyGan), 0);
  ASSERT_EQ(cli(dir_, "embed --data data --checkpoint gan --n-real 100 --n-fake 100 --method both --iters 100 "
                      "--out emb"),
            0);
  EXPECT_EQ(line_count(dir_ / "emb" / "tsne.csv"), 201u);
  const std::string csv = read_file(dir_ / "emb" / "tsne.csv");
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  std::size_t real = 0, synth = 0;
  while (std::getline(is, line)) {
    if (line.ends_with(",real")) ++real;
    if (line.ends_with(",synthetic")) ++synth;
  }
  EXPECT_EQ(real, 100u);
  EXPECT_EQ(synth, 100u);
}

TEST_F(Cli, EmbedTsneNeedsFourPoints) {
  ASSERT_EQ(cli(dir_, "--quiet dataset --toy glyphs --classes 1 --per-class 3 --out data"), 0);
  EXPECT_EQ(cli(dir_, "embed --data data --method tsne --out emb"), 4);
  EXPECT_EQ(cli(dir_, "embed --data data --method pca --out emb"), 0);
  EXPECT_EQ(cli(dir_, "embed --data data --method umap --out emb"), 2);
}

// ---- protocol --------------------------------------------------------------

TEST_F(Cli, ProtocolRealOnlyTable) {
  small_dataset();
  ASSERT_EQ(cli(dir_, "protocol --data data --regimens real --epochs 1 --widths 2,4,8 --seeds 0,1 --out p"), 0);
  const std::string md = read_file(dir_ / "p" / "results.md");
  EXPECT_NE(md.find("| real | 2 |"), std::string::npos);
  EXPECT_EQ(md.find("| classical"), std::string::npos);
  EXPECT_EQ(md.find("| gan"), std::string::npos);
  EXPECT_EQ(line_count(dir_ / "p" / "results.csv"), 3u);
}

TEST_F(Cli, ProtocolRatioZeroMatchesRealPerSeed) {
  small_dataset();
  ASSERT_EQ(cli(dir_, "protocol --data data --train-first --gan-epochs 1 --gan-base-width 2 --gan-latent 8 "
                      "--gan-batch 8 --regimens real,gan --ratios 0 --epochs 2 --widths 2,4,8 --seeds 3,4 "
                      "--split 0.5,0.25,0.25 --out p"),
            0);
  const json res = read_json(dir_ / "p" / "results.json");
  std::map<std::uint64_t, json> real, gan;
  for (const auto& r : res.at("rows")) {
    (r.at("regimen") == "real" ? real : gan)[r.at("seed").get<std::uint64_t>()] = r;
  }
  ASSERT_EQ(real.size(), 2u);
  ASSERT_EQ(gan.size(), 2u);
  for (const auto& [seed, r] : real) {
    for (const char* key : {"accuracy", "macro_f1", "auroc", "sens_at_spec", "best_epoch"}) {
      EXPECT_EQ(r.at(key), gan[seed].at(key)) << key << " seed " << seed;
    }
  }
  EXPECT_TRUE(read_json(dir_ / "p" / "gate.json").at("passed"));
}

TEST_F(Cli, ProtocolPrerequisitesAndGateExhaustion) {
  small_dataset();
  EXPECT_EQ(cli(dir_, "protocol --data data --epochs 1 --widths 2,4,8 --seeds 0 --out p1"), 4);
  // A single (not per-class) generator is not enough.
  ASSERT_EQ(cli(dir_, std::string("train-gan --data data --out gan --epochs 1") + kTinyGan), 0);
  EXPECT_EQ(cli(dir_, "protocol --data data --gan gan --epochs 1 --widths 2,4,8 --seeds 0 --out p2"), 4);
  EXPECT_EQ(cli(dir_, "protocol --data data --regimens real,bogus --out p3"), 2);
  EXPECT_EQ(cli(dir_, "protocol --data data --regimens real --split 0.5,0.5 --out p4"), 2);
  // An unreachable FID ceiling fails every round.
  EXPECT_EQ(cli(dir_, "protocol --data data --train-first --gan-epochs 1 --gan-base-width 2 --gan-latent 8 "
                      "--gan-batch 8 --gate-fid-max 1e-9 --gate-rounds 2 --gate-epochs 1 --epochs 1 "
                      "--widths 2,4,8 --seeds 0 --split 0.5,0.25,0.25 --out p5"),
            5);
  const json gate = read_json(dir_ / "p5" / "gate.json");
  EXPECT_EQ(gate.at("passed"), false);
  EXPECT_EQ(gate.at("rounds").size(), 2u);
  EXPECT_NE(read_file(dir_ / "cli.log").find("quality gate failed after 2 round(s): fid"), std::string::npos);
  // Continued training extended each class history by the round's budget.
  EXPECT_EQ(line_count(dir_ / "p5" / "gan" / "class_0" / "history.csv"), 3u);
}

// ---- ablate ----------------------------------------------------------------

TEST_F(Cli, AblateReportsRelativeDeltas) {
  small_dataset();
  ASSERT_EQ(cli(dir_, "ablate --data data --epochs 1 --base-width 2 --latent 8 --batch 8 --extractor rp:16 --out a"),
            0);
  EXPECT_EQ(line_count(dir_ / "a" / "ablation.csv"), 5u);
  const std::string md = read_file(dir_ / "a" / "ablation.md");
  for (const char* mode : {"wgan_gp", "vanilla+spectral_norm", "wgan_gp+spectral_norm"}) {
    EXPECT_NE(md.find(std::string("- ") + mode), std::string::npos) << mode;
  }
  EXPECT_NE(md.find("% relative to vanilla"), std::string::npos);
}

// ---- configuration ---------------------------------------------------------

TEST_F(Cli, ConfigFileIsOverriddenByFlags) {
  small_dataset();
  std::ofstream(dir_ / "run.toml") << "seed = 11\n[train-gan]\nepochs = 3\nbase-width = 2\nlatent = 8\n"
                                      "batch = 8\ngrid-every = 0\nloss = \"wgan-gp\"\n";
  ASSERT_EQ(cli(dir_, "--config run.toml train-gan --data data --out gan --epochs 1"), 0);
  const json rc = read_json(dir_ / "gan" / "run_config.json");
  EXPECT_EQ(rc.at("seed"), 11);
  EXPECT_EQ(rc.at("params").at("train").at("epochs"), 1);       // flag wins
  EXPECT_EQ(rc.at("params").at("train").at("base_width"), 2);   // from the file
  EXPECT_EQ(rc.at("params").at("loss_mode"), "wgan_gp");
  EXPECT_EQ(cli(dir_, "--config missing.toml dataset --toy glyphs --out d2"), 2);
}

TEST_F(Cli, SeedEnvironmentVariableIsTheLowestPrecedenceDefault) {
  ASSERT_EQ(cli(dir_, "--quiet dataset --toy lungs --per-class 4 --out a", "GANFORGE_SEED=5"), 0);
  EXPECT_EQ(read_json(dir_ / "a" / "run_config.json").at("seed"), 5);
  ASSERT_EQ(cli(dir_, "--quiet dataset --toy lungs --per-class 4 --out b --seed 9", "GANFORGE_SEED=5"), 0);
  EXPECT_EQ(read_json(dir_ / "b" / "run_config.json").at("seed"), 9);
  std::ofstream(dir_ / "s.toml") << "seed = 2\n";
  ASSERT_EQ(cli(dir_, "--config s.toml --quiet dataset --toy lungs --per-class 4 --out c", "GANFORGE_SEED=5"), 0);
  EXPECT_EQ(read_json(dir_ / "c" / "run_config.json").at("seed"), 2);
  // Different seeds give different corpora.
  EXPECT_NE(read_file(dir_ / "a" / "images.gft"), read_file(dir_ / "b" / "images.gft"));
}
