#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "gradcheck.hpp"
#include "petroseg/net/checkpoint.hpp"
#include "petroseg/net/train.hpp"
#include "petroseg/phantom.hpp"
#include "support.hpp"

using namespace petroseg;
using namespace petroseg::net;

namespace {

SegNet<double> single_conv(int k, int stride, int dilation, std::uint64_t seed) {
  std::vector<NodeSpec> g(2);
  g[1] = {OpKind::Conv, 0, -1, 3, 3, k, stride, dilation};
  auto net = SegNet<double>(g);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  for (std::size_t i = 0; i < net.parameter_count(); ++i) net.parameter(i) = d(rng);
  return net;
}

FeatureMap<double> random_feature(int c, int h, int w, std::uint64_t seed) {
  FeatureMap<double> fm(c, h, w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  for (Eigen::Index i = 0; i < fm.data.size(); ++i) fm.data.data()[i] = d(rng);
  return fm;
}

std::vector<TrainingPair> phantom_pairs(int count, int size, std::uint64_t seed) {
  std::vector<TrainingPair> pairs;
  for (int k = 0; k < count; ++k) {
    PhantomSpec s;
    s.width = s.height = size;
    s.seed = seed + k;
    s.plant_specks = false;
    s.aggregate_feature_px = 40;
    s.void_radius_min_px = 3;
    s.void_radius_max_px = 8;
    auto p = make_phantom(s);
    pairs.push_back({"p" + std::to_string(k), p.scan, p.truth});
  }
  return pairs;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.iterations = 3;
  c.batch = 2;
  c.crop = 32;
  c.snapshot_period = 2;
  c.snapshot_crops = 2;
  c.base_channels = 2;
  return c;
}

}  // namespace

TEST(Conv, MatchesNaiveOracle) {
  for (auto [k, s, d] : {std::tuple{1, 1, 1}, std::tuple{3, 1, 1}, std::tuple{3, 2, 1}, std::tuple{3, 1, 2},
                         std::tuple{5, 2, 1}, std::tuple{3, 2, 2}}) {
    const auto net = single_conv(k, s, d, 7);
    for (auto [h, w] : {std::pair{9, 7}, std::pair{8, 8}, std::pair{5, 11}}) {
      const auto in = random_feature(3, h, w, 3);
      ForwardCache<double> cache;
      const auto& out = forward_image(net, in, cache, false);
      const int pad = d * (k - 1) / 2;
      const int oh = (h + 2 * pad - d * (k - 1) - 1) / s + 1, ow = (w + 2 * pad - d * (k - 1) - 1) / s + 1;
      ASSERT_EQ(out.height, oh);
      ASSERT_EQ(out.width, ow);
      const auto& p = net.params(1);
      double worst = 0.0;
      for (int o = 0; o < 3; ++o)
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            double acc = p.bias(o);
            for (int c = 0; c < 3; ++c)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = y * s - pad + ky * d, ix = x * s - pad + kx * d;
                  if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
                  acc += p.weight(o, (c * k + ky) * k + kx) * in.data(c, iy * w + ix);
                }
            worst = std::max(worst, std::abs(acc - out.data(o, y * ow + x)));
          }
      EXPECT_LT(worst, 1e-12) << "k" << k << " s" << s << " d" << d;
    }
  }
}

TEST(SegNet, OutputMatchesInputSizeForOddShapes) {
  const auto net = SegNet<float>::initialized(default_architecture(2), 1);
  for (auto [h, w] : {std::pair{16, 16}, std::pair{17, 23}, std::pair{31, 18}}) {
    Tensor<float> img({1, 3, h, w}, 0.3f);
    const auto probs = forward(net, img);
    ASSERT_EQ(probs.shape(), (std::vector<int>{1, 3, h, w}));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double sum = probs.at(0, 0, y, x) + probs.at(0, 1, y, x) + probs.at(0, 2, y, x);
        EXPECT_NEAR(sum, 1.0, 1e-5);
      }
  }
}

TEST(SegNet, GraphValidation) {
  auto g = default_architecture(2);
  g.back().out_channels = 4;
  EXPECT_THROW(SegNet<float>{g}, Error);
  g = default_architecture(2);
  g[3].input = 7;
  EXPECT_THROW(SegNet<float>{g}, Error);
  g = default_architecture(2);
  g[1].kernel = 2;
  EXPECT_THROW(SegNet<float>{g}, Error);
}

TEST(Softmax, NormalisedAndShiftInvariant) {
  Matrix<double> z(3, 4);
  z << 1, 1000, -5, 0, 2, 1000, -5, 0, 3, 999, 40, 0;
  const auto p = softmax(z);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-15);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p(0, 3), 1.0 / 3.0, 1e-15);
  Matrix<double> shifted = z.array() + 17.0;
  EXPECT_LT((softmax(shifted) - p).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Loss, CrossEntropyOfUniformIsLn3) {
  Matrix<double> p = Matrix<double>::Constant(3, 30, 1.0 / 3.0);
  std::vector<PhaseLabel> l;
  for (int i = 0; i < 30; ++i) l.push_back(phase_from_index(i % 3));
  EXPECT_NEAR(cross_entropy(p, l), std::log(3.0), 1e-9);
  l[0] = PhaseLabel::Unlabeled;
  EXPECT_NEAR(cross_entropy(p, l), std::log(3.0), 1e-9);
  std::vector<PhaseLabel> none(30, PhaseLabel::Unlabeled);
  EXPECT_THROW(cross_entropy(p, none), Error);
}

TEST(Loss, LovaszAtVerticesIsJaccardLoss) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cls(0, 2);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = len(rng);
    Matrix<double> p = Matrix<double>::Zero(3, n);
    std::vector<PhaseLabel> truth(n);
    std::vector<int> pred(n);
    for (int i = 0; i < n; ++i) {
      pred[i] = cls(rng);
      p(pred[i], i) = 1.0;
      truth[i] = phase_from_index(cls(rng));
    }
    for (int c = 0; c < 3; ++c) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (int i = 0; i < n; ++i) {
        const bool t = phase_index(truth[i]) == c, q = pred[i] == c;
        tp += t && q;
        fp += !t && q;
        fn += t && !q;
      }
      if (tp + fn == 0) continue;
      const double jaccard = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      EXPECT_EQ(lovasz_class<double>(p, truth, c, nullptr, 1.0), 1.0 - jaccard);
    }
  }
}

TEST(Loss, LovaszGradIsJaccardIncrement) {
  const std::vector<char> t = {1, 0, 1, 1, 0};
  const auto g = lovasz_grad(t);
  const auto j = lovasz_jaccard(t);
  double sum = 0.0;
  for (double v : g) sum += v;
  EXPECT_NEAR(sum, j.back(), 1e-15);
  EXPECT_DOUBLE_EQ(j.back(), 1.0);
  EXPECT_DOUBLE_EQ(g[0], 1.0 - 2.0 / 3.0);
}

TEST(Loss, CombinedIsWeightedSum) {
  const auto b = testsupport::random_batch(1, 16, 1);
  const auto net = SegNet<double>::initialized(default_architecture(2), 2);
  const auto probs = forward(net, batch_images<double>(b));
  const auto labels = batch_labels(b);
  const auto v = combined_loss(probs, labels, LossWeights{0.3, 0.7});
  EXPECT_NEAR(v.total, 0.3 * cross_entropy(probs, labels) + 0.7 * lovasz_softmax(probs, labels), 1e-12);
}

TEST(Gradient, FloatAnalyticMatchesFiniteDifferences) {
  const auto net = SegNet<float>::initialized(default_architecture(2), 3);
  const auto batch = testsupport::random_batch(2, 16, 4);
  for (LossWeights w : {LossWeights{1.0, 0.0}, LossWeights{0.0, 1.0}, LossWeights{0.5, 0.5}}) {
    const auto r = testsupport::check_gradients(net, batch, w, 1e-3);
    EXPECT_GT(r.checked, 100u);
    EXPECT_EQ(r.failed, 0u) << "worst " << r.worst_rel << " ce=" << w.cross_entropy;
  }
}

TEST(Gradient, DoubleAnalyticMatchesTightly) {
  const auto net = SegNet<double>::initialized(default_architecture(2), 9);
  const auto batch = testsupport::random_batch(1, 16, 8);
  const LossWeights w{0.5, 0.5};
  const auto lg = loss_and_gradient(net, batch, w);
  const Tensor<double> images = batch_images<double>(batch);
  const auto labels = batch_labels(batch);
  auto ref = net;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> pick(0, net.parameter_count() - 1);
  std::vector<double> flat;
  for (const auto& p : lg.grads) {
    flat.insert(flat.end(), p.weight.data(), p.weight.data() + p.weight.size());
    flat.insert(flat.end(), p.bias.data(), p.bias.data() + p.bias.size());
  }
  int checked = 0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t i = pick(rng);
    const double g = flat[i];
    if (std::abs(g) < 1e-4) continue;
    double& p = ref.parameter(i);
    const double saved = p, eps = 1e-6;
    p = saved + eps;
    const double up = combined_loss(forward(ref, images), labels, w).total;
    p = saved - eps;
    const double down = combined_loss(forward(ref, images), labels, w).total;
    p = saved;
    EXPECT_NEAR((up - down) / (2 * eps), g, 1e-6 * std::abs(g) + 1e-9) << "param " << i;
    ++checked;
  }
  EXPECT_GT(checked, 50);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  auto cfg = tiny_config();
  cfg.learning_rate = 0.0;
  const auto pairs = phantom_pairs(1, 48, 1);
  const auto r = train(pairs, cfg);
  const auto init = SegNet<float>::initialized(default_architecture(cfg.base_channels), init_seed(cfg.seed));
  EXPECT_TRUE(r.net == init);
  EXPECT_EQ(r.trace.steps.size(), 3u);
  ASSERT_EQ(r.trace.snapshots.size(), 2u);
  EXPECT_EQ(r.trace.snapshots[0].iteration, 2);
  EXPECT_EQ(r.trace.snapshots[1].iteration, 3);
}

TEST(Train, DeterministicForFixedSeed) {
  const auto pairs = phantom_pairs(2, 48, 2);
  const auto a = train(pairs, tiny_config());
  const auto b = train(pairs, tiny_config());
  EXPECT_EQ(encode_checkpoint(a.net), encode_checkpoint(b.net));
  EXPECT_EQ(loss_csv(a.trace), loss_csv(b.trace));
  auto other = tiny_config();
  other.seed = 2;
  EXPECT_NE(encode_checkpoint(train(pairs, other).net), encode_checkpoint(a.net));
}

TEST(Train, SingleIterationRuns) {
  auto cfg = tiny_config();
  cfg.iterations = 1;
  const auto r = train(phantom_pairs(1, 40, 3), cfg);
  ASSERT_EQ(r.trace.steps.size(), 1u);
  ASSERT_EQ(r.trace.snapshots.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.trace.steps[0].loss));
  EXPECT_EQ(loss_csv(r.trace).substr(0, 19), "iter,loss,ce,lovasz");
}

TEST(Train, NonFiniteGradientIsDiagnosed) {
  auto net = SegNet<float>::initialized(default_architecture(2), 1);
  net.params(1).weight(0, 0) = std::numeric_limits<float>::quiet_NaN();
  SgdState<float> st;
  try {
    backward_and_step(net, st, testsupport::random_batch(1, 16, 1), tiny_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Internal);
    EXPECT_NE(std::string(e.what()).find("non-finite gradient in layer"), std::string::npos);
  }
}

TEST(Train, ConfigValidation) {
  auto c = tiny_config();
  c.crop = 8;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.weights = {0.0, 0.0};
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.crop = 64;
  EXPECT_THROW(train(phantom_pairs(1, 40, 1), c), Error);
}

TEST(Train, BlockMeans) {
  TrainTrace t;
  for (int i = 1; i <= 7; ++i) t.steps.push_back({i, static_cast<double>(i), 0, 0});
  EXPECT_EQ(block_means(t, 3), (std::vector<double>{2.0, 5.0}));
}

TEST(Jitter, IdentityAndQuarterTurns) {
  const auto s = testsupport::random_batch(1, 9, 2)[0];
  EXPECT_EQ(apply_jitter(s, {}), s);
  JitterParams four;
  four.quarter_turns = 1;
  Sample r = s;
  for (int k = 0; k < 4; ++k) r = apply_jitter(r, four);
  EXPECT_EQ(r, s);
  JitterParams flip;
  flip.flip_horizontal = true;
  const auto f = apply_jitter(s, flip);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) EXPECT_EQ(f.labels[y * 9 + x], s.labels[y * 9 + (8 - x)]);
  EXPECT_EQ(apply_jitter(f, flip), s);
}

TEST(Jitter, RotationMovesCorner) {
  auto s = testsupport::random_batch(1, 5, 3)[0];
  JitterParams p;
  p.quarter_turns = 1;
  const auto r = apply_jitter(s, p);
  // label multiset is preserved by a pure rotation
  auto a = s.labels, b = r.labels;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_NE(r, s);
}

TEST(Jitter, ScalingExposesUnlabeledBorder) {
  testsupport::TempDir unused("j");
  Sample s;
  s.size = 20;
  s.rgb.assign(3 * 400, 100.0f);
  s.labels.assign(400, PhaseLabel::Paste);
  JitterParams p;
  p.scale = 0.5;
  const auto shrunk = apply_jitter(s, p);
  EXPECT_EQ(shrunk.labels[0], PhaseLabel::Unlabeled);
  EXPECT_EQ(shrunk.rgb[0], 0.0f);
  EXPECT_EQ(shrunk.labels[10 * 20 + 10], PhaseLabel::Paste);
  EXPECT_FLOAT_EQ(shrunk.rgb[10 * 20 + 10], 100.0f);
  p.scale = 1.5;
  const auto grown = apply_jitter(s, p);
  EXPECT_EQ(std::count(grown.labels.begin(), grown.labels.end(), PhaseLabel::Unlabeled), 0);
}

TEST(Jitter, DrawsWithinRanges) {
  std::mt19937_64 rng(4);
  JitterRanges r{0.9, 1.1};
  std::set<int> turns;
  for (int k = 0; k < 200; ++k) {
    const auto p = draw_jitter(rng, r);
    EXPECT_GE(p.scale, 0.9);
    EXPECT_LE(p.scale, 1.1);
    turns.insert(p.quarter_turns);
  }
  EXPECT_EQ(turns.size(), 4u);
}

TEST(Predict, SingleTileMatchesFullImage) {
  const auto net = SegNet<float>::initialized(default_architecture(2), 5);
  const auto ph = phantom_pairs(1, 64, 8)[0];
  EXPECT_EQ(predict_tiled(net, ph.scan, 64, 8).labels().size(), 64u * 64u);
  const auto a = predict_tiled(net, ph.scan, 64, 8);
  const auto b = predict_full(net, ph.scan);
  EXPECT_TRUE(std::equal(a.labels().begin(), a.labels().end(), b.labels().begin()));
}

TEST(Predict, TwoByTwoTilingMatchesWholeImageOutsideSeams) {
  // receptive field radius 2: conv3 -> relu -> conv3
  std::vector<NodeSpec> g(4);
  g[1] = {OpKind::Conv, 0, -1, 3, 6, 3, 1, 1};
  g[2] = {OpKind::Relu, 1, -1, 0, 0, 1, 1, 1};
  g[3] = {OpKind::Conv, 2, -1, 6, 3, 3, 1, 1};
  const auto net = SegNet<float>::initialized(g, 12);
  PhantomSpec s;
  s.width = s.height = 480;
  s.seed = 77;
  s.aggregate_feature_px = 40;
  const auto ph = make_phantom(s);
  const auto tiled = predict_tiled(net, ph.scan, 256, 32);
  const auto full = predict_full(net, ph.scan);
  // tiles start at 0 and 224; outputs can differ only within 2 px of an inner tile edge
  auto near_seam = [](int v) { return (v >= 222 && v <= 226) || (v >= 253 && v <= 257); };
  std::size_t diff = 0;
  for (int y = 0; y < 480; ++y)
    for (int x = 0; x < 480; ++x) {
      if (tiled.at(x, y) == full.at(x, y)) continue;
      ++diff;
      EXPECT_TRUE(near_seam(x) || near_seam(y)) << x << "," << y;
    }
  EXPECT_LT(static_cast<double>(diff) / (480.0 * 480.0), 0.005);
}

TEST(Predict, ScanSmallerThanTile) {
  const auto net = SegNet<float>::initialized(default_architecture(2), 5);
  const Scan small("s", 20, 13, 5.3, std::vector<Rgb>(260, Rgb{1, 2, 3}));
  const auto m = predict_tiled(net, small, 64, 8);
  EXPECT_EQ(m.width(), 20);
  EXPECT_EQ(m.height(), 13);
  EXPECT_THROW(predict_tiled(net, small, 16, 8), Error);
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto net = SegNet<float>::initialized(default_architecture(3), 11);
  const auto bytes = encode_checkpoint(net);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), std::string("PSEGNET\0", 8));
  EXPECT_TRUE(decode_checkpoint(bytes) == net);
  testsupport::TempDir dir("ckpt");
  save_checkpoint(net, dir / "m.ckpt");
  EXPECT_TRUE(load_checkpoint(dir / "m.ckpt") == net);
  EXPECT_EQ(testsupport::read_bytes(dir / "m.ckpt"), bytes);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const auto bytes = encode_checkpoint(SegNet<float>::initialized(default_architecture(2), 1));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  try {
    decode_checkpoint(truncated, "m.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
    EXPECT_NE(std::string(e.what()).find("truncated while reading parameters"), std::string::npos) << e.what();
  }
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), Error);
  auto version = bytes;
  version[8] = 2;
  try {
    decode_checkpoint(version);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("v2"), std::string::npos);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), Error);
  EXPECT_THROW(load_checkpoint("/nonexistent/m.ckpt"), Error);
}

TEST(Retrain, EmptyReplacementEqualsPlainTraining) {
  const auto pairs = phantom_pairs(2, 48, 30);
  const auto base = train(pairs, tiny_config());
  const auto again = retrain_with_predictions(pairs, {}, base.net, tiny_config(), 48, 8);
  EXPECT_TRUE(again.net == base.net);
  EXPECT_THROW(retrain_with_predictions(pairs, {"nope"}, base.net, tiny_config()), Error);
}
