#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ganforge/downstream.hpp"
#include "ganforge/grad_check.hpp"
#include "ganforge/metrics.hpp"

using namespace ganforge;

namespace {

Tensor random_images(std::size_t n, std::size_t c, Rng& rng) {
  Tensor t({n, c, 64, 64});
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

Batch random_batch(std::size_t n, std::size_t c, std::size_t classes, Rng& rng) {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back(i % classes);
  return make_batch(random_images(n, c, rng), labels, classes);
}

/// Two classes separated by mean brightness.
Dataset brightness_toy(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.class_names = {"dark", "bright"};
  d.images = Tensor({2 * per_class, 1, 64, 64});
  const std::size_t len = 64 * 64;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const std::size_t label = i % 2;
    d.labels.push_back(label);
    for (std::size_t k = 0; k < len; ++k) {
      d.images[i * len + k] = std::clamp((label ? 0.4 : -0.4) + 0.2 * rng.normal(), -1.0, 1.0);
    }
  }
  d.synthetic.assign(d.labels.size(), false);
  return d;
}

// All-pairs Mann-Whitney count.
double auroc_oracle(const std::vector<double>& s, const std::vector<bool>& pos) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

// Exhaustive sweep: every distinct score and +inf as "predict positive if >= t".
double sensitivity_oracle(const std::vector<double>& s, const std::vector<bool>& pos, double target) {
  std::vector<double> cands = s;
  cands.push_back(INFINITY);
  double best = 0;
  for (double t : cands) {
    double tn = 0, neg = 0, tp = 0, p = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (pos[i]) {
        p += 1;
        tp += s[i] >= t;
      } else {
        neg += 1;
        tn += s[i] < t;
      }
    }
    if (tn / neg >= target - 1e-12) best = std::max(best, tp / p);
  }
  return best;
}

ClassifierConfig tiny_config(int epochs) {
  ClassifierConfig c;
  c.widths = {4, 8, 16};
  c.epochs = epochs;
  c.batch_size = 16;
  return c;
}

}  // namespace

// ---- classifier ------------------------------------------------------------

TEST(Classifier, ShapesAndPenultimateWidth) {
  const Network net = build_classifier(3, 5);
  EXPECT_EQ(net.output_shape(), (Shape{5}));
  EXPECT_EQ(classifier_feature_width(net), 128u);
  EXPECT_EQ(build_classifier(1, 2).input_shape(), (Shape{1, 64, 64}));
  Network trained = net;
  Rng rng(1);
  trained.init_weights(rng);
  Extractor e;
  e.kind = ExtractorKind::classifier_features;
  e.classifier = &trained;
  const FeatureSet f = extract_features(random_images(3, 3, rng), e);
  EXPECT_EQ(f.features.shape(), (Shape{3, 128}));
  EXPECT_THROW(build_classifier(3, 1), ValidationError);
}

TEST(Classifier, TinyVariantGradientsMatchFiniteDifferences) {
  Rng rng(2);
  Network net = build_classifier(2, 3, {2, 3, 4});
  net.init_weights(rng);
  const Batch b = random_batch(3, 2, 3, rng);
  for (const char* name : {"L01.weight", "L07.weight", "L11.weight"}) {
    auto builder = [&](Tape& t, const Var& w) {
      Network copy = net;
      Bindings bound = copy.bind(t, false);
      bound[name] = w;
      return ops::softmax_cross_entropy(copy.forward(bound, t.constant(b.images), Mode::train), b.targets);
    };
    EXPECT_LT(grad_check(builder, net.params().at(name), {1e-6, 30, 3}), 1e-4) << name;
  }
}

TEST(Classifier, SaveLoadRoundTrip) {
  Rng rng(3);
  Network net = build_classifier(1, 2, {4, 8, 16});
  net.init_weights(rng);
  const auto path = std::filesystem::temp_directory_path() / "ganforge_classifier_roundtrip.gfn";
  save_classifier(path, net, {{"note", "x"}});
  nlohmann::json meta;
  const Network back = load_classifier(path, &meta);
  EXPECT_EQ(back, net);
  EXPECT_EQ(meta.at("note"), "x");
  EXPECT_THROW(load_classifier(std::filesystem::temp_directory_path() / "missing.gfn"), IoError);
}

// ---- augmentation ----------------------------------------------------------

TEST(AugPolicy, ParseAndPrintRoundTrip) {
  for (const char* spec : {"none", "flip", "rotate:15", "contrast:0.8:1.2", "mixup:0.4", "cutout:16", "cutmix:1",
                           "augmix:3:2", "flip+rotate:10+cutout:8"}) {
    EXPECT_EQ(AugPolicy::parse(spec).to_string(), spec);
  }
  EXPECT_EQ(AugPolicy::classical_default().to_string(), "flip+rotate:15+contrast:0.8:1.2");
  EXPECT_EQ(AugPolicy::parse("rotate").max_deg, 15.0);
  EXPECT_TRUE(AugPolicy::parse("flip+cutout").label_preserving());
  EXPECT_FALSE(AugPolicy::parse("flip+mixup").label_preserving());
}

TEST(AugPolicy, InvalidParametersRejected) {
  for (const char* spec : {"rotate:200", "contrast:1.2:0.8", "contrast:0:1", "mixup:0", "cutmix:-1", "cutout:0",
                           "cutout:65", "cutout:2.5", "augmix:0", "augmix:2:0", "bogus", "rotate:x", "flip+", "flip:1"}) {
    EXPECT_THROW(AugPolicy::parse(spec), ValidationError) << spec;
  }
  AugPolicy compose;
  compose.kind = AugKind::compose;
  EXPECT_THROW(compose.validate(), ValidationError);
}

TEST(AugPolicy, NoneLeavesBatchUnchanged) {
  Rng rng(4);
  const Batch b = random_batch(4, 3, 2, rng);
  const Batch out = apply_policy(b, AugPolicy{});
  EXPECT_EQ(out.images, b.images);
  EXPECT_EQ(out.targets, b.targets);
}

TEST(AugPolicy, MixWeightOneReturnsFirstSample) {
  Rng rng(5);
  const Batch b = random_batch(4, 1, 2, rng);
  const Batch same = mix_pairs(b, {3, 2, 1, 0}, 1.0);
  EXPECT_EQ(same.images, b.images);
  EXPECT_EQ(same.targets, b.targets);
  const Batch other = mix_pairs(b, {3, 2, 1, 0}, 0.0);
  EXPECT_EQ(other.images.slice0(0, 1), b.images.slice0(3, 4));
}

TEST(AugPolicy, CutoutBlanksExactSquare) {
  Batch b = make_batch(Tensor({3, 3, 64, 64}, 1.0), {0, 1, 0}, 2);
  const Batch out = apply_policy(b, AugPolicy::parse("cutout:16"));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      std::size_t blanked = 0;
      for (std::size_t k = 0; k < 4096; ++k) blanked += out.images[(i * 3 + c) * 4096 + k] == -1.0;
      EXPECT_EQ(blanked, 256u);
    }
  EXPECT_EQ(out.targets, b.targets);
}

TEST(AugPolicy, LabelsPreservedOrConvex) {
  Rng rng(6);
  const Batch b = random_batch(6, 3, 3, rng);
  for (const char* spec : {"flip", "rotate:30", "contrast:0.5:1.5", "cutout:20", "augmix:3:3", "mixup:0.4",
                           "cutmix:1", "flip+mixup:1+cutout:8"}) {
    AugPolicy p = AugPolicy::parse(spec);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      p.seed = seed;
      const Batch out = apply_policy(b, p);
      ASSERT_EQ(out.images.shape(), b.images.shape());
      for (double v : out.images.values()) ASSERT_TRUE(v >= -1.0 && v <= 1.0) << spec;
      if (p.label_preserving()) {
        ASSERT_EQ(out.targets, b.targets) << spec;
      } else {
        for (std::size_t i = 0; i < 6; ++i) {
          double s = 0;
          for (std::size_t c = 0; c < 3; ++c) {
            ASSERT_GE(out.targets[i * 3 + c], 0.0);
            s += out.targets[i * 3 + c];
          }
          ASSERT_NEAR(s, 1.0, 1e-9) << spec;
        }
      }
      EXPECT_EQ(apply_policy(b, p).images, out.images) << "policy must be deterministic in its seed";
    }
  }
}

TEST(AugPolicy, FlipMirrorsOrKeepsEachSample) {
  Rng rng(7);
  const Batch b = random_batch(8, 2, 2, rng);
  const Batch out = apply_policy(b, AugPolicy::parse("flip"));
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    bool same = true, mirrored = true;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x) {
          same = same && out.images.at(i, c, y, x) == b.images.at(i, c, y, x);
          mirrored = mirrored && out.images.at(i, c, y, x) == b.images.at(i, c, y, 63 - x);
        }
    EXPECT_TRUE(same || mirrored);
    flipped += mirrored;
  }
  EXPECT_GT(flipped, 0u);
  EXPECT_LT(flipped, 8u);
}

TEST(AugPolicy, RotationGeometry) {
  Rng rng(8);
  const Tensor img = random_images(1, 2, rng).reshaped({2, 64, 64});
  EXPECT_EQ(rotate_image(img, 0.0), img);
  EXPECT_LE(max_abs_diff(rotate_image(img, 360.0), img), 1e-9);
  // A quarter turn about the centre permutes pixels exactly.
  const Tensor q = rotate_image(img, 90.0);
  double worst = 0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        worst = std::max(worst, std::abs(q[(c * 64 + y) * 64 + x] - img[(c * 64 + (63 - x)) * 64 + y]));
      }
  EXPECT_LE(worst, 1e-9);
}

TEST(AugPolicy, CutMixLabelWeightMatchesPastedArea) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Batch b = make_batch(Tensor({2, 1, 64, 64}), {0, 1}, 2);
    for (std::size_t k = 0; k < 4096; ++k) {
      b.images[k] = 0.5;
      b.images[4096 + k] = -0.5;
    }
    AugPolicy p = AugPolicy::parse("cutmix:1");
    p.seed = seed;
    const Batch out = apply_policy(b, p);
    for (std::size_t i = 0; i < 2; ++i) {
      const double other = i == 0 ? -0.5 : 0.5;
      double pasted = 0;
      for (std::size_t k = 0; k < 4096; ++k) pasted += out.images[i * 4096 + k] == other;
      EXPECT_NEAR(out.targets[i * 2 + (1 - i)], pasted / 4096.0, 1e-12);
    }
  }
}

// ---- synthetic mixing ------------------------------------------------------

TEST(MixSynthetic, RatioZeroIsIdentity) {
  const Dataset real = synth_glyphs(2, 5, 0.3, 1), synth = synth_glyphs(2, 5, 0.3, 2);
  const Dataset out = mix_synthetic(real, synth, 0.0, 9);
  EXPECT_EQ(out.images, real.images);
  EXPECT_EQ(out.labels, real.labels);
  EXPECT_EQ(out.synthetic, real.synthetic);
}

TEST(MixSynthetic, CountsAndBalance) {
  Dataset real = brightness_toy(50, 1), synth = brightness_toy(60, 2);
  const Dataset full = mix_synthetic(real, synth, 1.0, 3);
  EXPECT_EQ(full.size(), 200u);
  EXPECT_EQ(std::count(full.synthetic.begin(), full.synthetic.end(), true), 100);
  const Dataset half = mix_synthetic(real, synth, 0.5, 3);
  EXPECT_EQ(half.size(), 150u);
  std::vector<std::size_t> added(2);
  for (std::size_t i = 100; i < 150; ++i) {
    EXPECT_TRUE(half.synthetic[i]);
    ++added[half.labels[i]];
  }
  EXPECT_EQ(added, (std::vector<std::size_t>{25, 25}));
  EXPECT_EQ(half.images.slice0(0, 100), real.images);
  EXPECT_EQ(mix_synthetic(real, synth, 0.5, 3).images, half.images);
  EXPECT_NE(mix_synthetic(real, synth, 0.5, 4).images, half.images);
}

TEST(MixSynthetic, ShortfallReportedPerClass) {
  const Dataset real = brightness_toy(20, 1), small = brightness_toy(5, 2);
  try {
    mix_synthetic(real, small, 1.0, 0);
    FAIL() << "expected a shortfall error";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("dark needs 20, has 5 (short 15)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("bright needs 20, has 5 (short 15)"), std::string::npos) << msg;
  }
  Dataset renamed = small;
  renamed.class_names = {"a", "b"};
  EXPECT_THROW(mix_synthetic(real, renamed, 0.1, 0), ValidationError);
  EXPECT_THROW(mix_synthetic(real, small, -0.5, 0), ValidationError);
}

// ---- evaluation ------------------------------------------------------------

TEST(Evaluation, HandScoresGivePerfectSeparation) {
  const std::vector<double> s = {0.9, 0.8, 0.1, 0.2};
  const std::vector<bool> pos = {true, true, false, false};
  EXPECT_EQ(auroc(s, pos).value(), 1.0);
  EXPECT_EQ(sensitivity_at_specificity(s, pos, 1.0).value(), 1.0);
  const std::vector<double> flipped = {0.1, 0.2, 0.9, 0.8};
  EXPECT_EQ(auroc(flipped, pos).value(), 0.0);
  EXPECT_FALSE(auroc(s, {true, true, true, true}).has_value());
  EXPECT_FALSE(sensitivity_at_specificity(s, {false, false, false, false}, 0.9).has_value());
}

TEST(Evaluation, AurocMatchesAllPairsCount) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      pos[i] = rng.uniform() < 0.4;
      s[i] = std::round(rng.uniform() * 20.0) / 20.0 + (pos[i] ? 0.1 : 0.0);  // heavy ties
    }
    pos[0] = true;
    pos[1] = false;
    ASSERT_NEAR(auroc(s, pos).value(), auroc_oracle(s, pos), 1e-12);
  }
}

TEST(Evaluation, SensitivityMatchesSweepAndIsMonotone) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(80);
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      pos[i] = rng.uniform() < 0.5;
      s[i] = std::round(rng.uniform() * 10.0) / 10.0;
    }
    pos[0] = true;
    pos[1] = false;
    double prev = 1.0;
    for (int step = 0; step <= 20; ++step) {
      const double t = step / 20.0;
      const double got = sensitivity_at_specificity(s, pos, t).value();
      ASSERT_EQ(got, sensitivity_oracle(s, pos, t));
      ASSERT_LE(got, prev);
      prev = got;
    }
  }
}

TEST(Evaluation, MacroF1) {
  EXPECT_EQ(macro_f1({0, 1, 2}, {0, 1, 2}, 3), 1.0);
  // Class 0: tp 1, fp 1, fn 1 -> 0.5; class 1: tp 1, fp 1, fn 1 -> 0.5.
  EXPECT_NEAR(macro_f1({0, 1, 1, 0}, {0, 0, 1, 1}, 2), 0.5, 1e-15);
  // Class 2 has no support and contributes zero.
  EXPECT_NEAR(macro_f1({0, 1}, {0, 1}, 3), 2.0 / 3.0, 1e-15);
}

TEST(Evaluation, ProbabilityReportModes) {
  const Tensor perfect({4, 2}, {0.9, 0.1, 0.2, 0.8, 0.7, 0.3, 0.4, 0.6});
  const Evaluation e = evaluate_probabilities(perfect, {0, 1, 0, 1});
  EXPECT_EQ(e.accuracy, 1.0);
  EXPECT_EQ(e.macro_f1, 1.0);
  EXPECT_EQ(e.auroc.value(), 1.0);
  EXPECT_EQ(e.auroc_mode, "binary");
  const Tensor three({3, 3}, {0.8, 0.1, 0.1, 0.1, 0.8, 0.1, 0.1, 0.1, 0.8});
  EXPECT_EQ(evaluate_probabilities(three, {0, 1, 2}).auroc_mode, "macro-one-vs-rest");
  const Evaluation ovr = evaluate_probabilities(three, {0, 1, 2}, 2);
  EXPECT_EQ(ovr.auroc_mode, "one-vs-rest:2");
  EXPECT_EQ(ovr.auroc.value(), 1.0);
  EXPECT_FALSE(evaluate_probabilities(perfect.slice0(0, 1), {0}).auroc.has_value());
  EXPECT_THROW(evaluate_probabilities(perfect, {0, 1}), DimensionError);
}

// ---- training --------------------------------------------------------------

TEST(TrainClassifier, SeparableToyReachesFullTrainingAccuracy) {
  const Dataset data = brightness_toy(16, 11);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ClassifierConfig c = tiny_config(30);
    c.seed = seed;
    const TrainedClassifier t = train_classifier(data, Dataset{}, AugPolicy{}, c);
    EXPECT_EQ(t.best_epoch, 30);
    EXPECT_EQ(evaluate_classifier(t.model, data).accuracy, 1.0) << "seed " << seed;
  }
}

TEST(TrainClassifier, ZeroEpochsReturnsInitialNetwork) {
  const Dataset data = brightness_toy(8, 12);
  const TrainedClassifier a = train_classifier(data, data, AugPolicy{}, tiny_config(0));
  const TrainedClassifier b = train_classifier(data, data, AugPolicy{}, tiny_config(0));
  EXPECT_EQ(a.best_epoch, 0);
  EXPECT_TRUE(a.history.empty());
  EXPECT_EQ(a.model, b.model);
  const Evaluation e = evaluate_classifier(a.model, data);
  EXPECT_GE(e.accuracy, 0.0);
  EXPECT_LE(e.accuracy, 1.0);
}

TEST(TrainClassifier, DeterministicAndSelectsBestValidationEpoch) {
  const Dataset glyphs = synth_glyphs(2, 24, 0.5, 13);
  const Splits s = split(glyphs, SplitSpec{0.6, 0.2, 0.2, 1, true});
  ClassifierConfig c = tiny_config(8);
  const AugPolicy policy = AugPolicy::classical_default();
  const TrainedClassifier a = train_classifier(s.train, s.val, policy, c);
  const TrainedClassifier b = train_classifier(s.train, s.val, policy, c);
  EXPECT_EQ(a.model, b.model);
  ASSERT_EQ(a.history.size(), 8u);
  double best = -1;
  int best_epoch = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    if (a.history[i].val_macro_f1 > best) {
      best = a.history[i].val_macro_f1;
      best_epoch = a.history[i].epoch;
    }
  }
  EXPECT_EQ(a.best_epoch, best_epoch);
  EXPECT_EQ(a.best_val_macro_f1, best);
  EXPECT_EQ(evaluate_classifier(a.model, s.val).macro_f1, best);
}

TEST(TrainClassifier, RejectsMismatchedInputs) {
  const Dataset data = brightness_toy(4, 14);
  Dataset other = data;
  other.class_names = {"x", "y"};
  EXPECT_THROW(train_classifier(data, other, AugPolicy{}, tiny_config(1)), ValidationError);
  ClassifierConfig bad = tiny_config(1);
  bad.batch_size = 0;
  EXPECT_THROW(train_classifier(data, data, AugPolicy{}, bad), ValidationError);
}

// ---- protocol --------------------------------------------------------------

class Protocol : public ::testing::Test {
 protected:
  void SetUp() override {
    const Dataset data = brightness_toy(12, 15);
    splits = split(data, SplitSpec{0.5, 0.25, 0.25, 2, true});
    Dataset pool = brightness_toy(20, 16);
    pool.synthetic.assign(pool.size(), true);
    pools.unfiltered = pool;
    config.classifier = tiny_config(2);
    config.seeds = {0, 1};
    config.ratios = {0.0, 0.5};
  }
  Splits splits;
  SyntheticPools pools;
  ProtocolConfig config;
};

TEST_F(Protocol, RealOnlyHasOneRowPerSeed) {
  config.regimens = {Regimen::real};
  const ProtocolResult r = run_protocol(splits, {}, config);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].label(), "real");
  EXPECT_EQ(r.rows[1].seed, 1u);
}

TEST_F(Protocol, RatioZeroReproducesRealOnlyExactly) {
  const ProtocolResult r = run_protocol(splits, pools, config);
  ASSERT_EQ(r.rows.size(), 2u * 4u);
  for (std::size_t s = 0; s < 2; ++s) {
    const RegimenResult& real = r.rows[s * 4];
    const RegimenResult& zero = r.rows[s * 4 + 2];
    const RegimenResult& half = r.rows[s * 4 + 3];
    EXPECT_EQ(zero.label(), "gan@0");
    EXPECT_EQ(zero.accuracy, real.accuracy);
    EXPECT_EQ(zero.macro_f1, real.macro_f1);
    EXPECT_EQ(zero.auroc, real.auroc);
    EXPECT_EQ(zero.n_train_synth, 0u);
    EXPECT_EQ(half.n_train_synth, splits.train.size() / 2);
  }
  const std::string md = r.to_markdown();
  EXPECT_NE(md.find("| regimen | seeds | accuracy | macro_f1 | auroc | sens_at_spec |"), std::string::npos);
  EXPECT_NE(md.find("| classical | 2 |"), std::string::npos);
  EXPECT_EQ(run_protocol(splits, pools, config).to_csv(), r.to_csv());
}

TEST_F(Protocol, MissingGeneratorIsPrerequisiteError) {
  EXPECT_THROW(run_protocol(splits, {}, config), PrerequisiteError);
  config.filter_modes = {true};
  EXPECT_THROW(run_protocol(splits, pools, config), PrerequisiteError);
}

TEST(SynthesizePool, FilteringKeepsTopScoredHalf) {
  Rng rng(17);
  std::vector<ClassGenerator> gens(2);
  for (auto& g : gens) {
    g.generator = build_generator(100, 1, 2);
    g.discriminator = build_discriminator(1, {2});
    g.generator.init_weights(rng);
    g.discriminator.init_weights(rng);
  }
  const Dataset plain = synthesize_pool(gens, {"a", "b"}, 5, false, 3);
  EXPECT_EQ(plain.size(), 10u);
  EXPECT_EQ(plain.class_counts(), (std::vector<std::size_t>{5, 5}));
  EXPECT_NO_THROW(plain.validate());
  const Dataset kept = synthesize_pool(gens, {"a", "b"}, 5, true, 3);
  EXPECT_EQ(kept.size(), 10u);
  EXPECT_TRUE(std::all_of(kept.synthetic.begin(), kept.synthetic.end(), [](bool b) { return b; }));
  for (std::size_t c = 0; c < 2; ++c) {
    const Tensor all = generate(gens[c].generator, 10, derive_seed(3, c));
    const Tensor all_scores = score(gens[c].discriminator, all);
    std::vector<double> s(all_scores.values().begin(), all_scores.values().end());
    std::sort(s.begin(), s.end());
    const Tensor retained_scores = score(gens[c].discriminator, kept.subset(kept.indices_of(c)).images);
    for (double v : retained_scores.values()) EXPECT_GE(v, s[5]);
  }
  EXPECT_THROW(synthesize_pool(gens, {"a"}, 5, false, 3), ValidationError);
}
