#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "stkd/student/student.hpp"

using namespace stkd;
using namespace stkd::student;
using num::Tensor;
using num::Var;
using Sd = Student<double>;
using Ids = std::vector<std::uint32_t>;

namespace {

StudentDims micro(std::size_t d = 8, std::size_t n = 4, std::size_t V = 6) {
  StudentDims s;
  s.num_takeaways = V;
  s.num_regions = 3;
  s.num_distances = 16;
  s.d = d;
  s.n = n;
  s.heads = 2;
  s.layers = 2;
  s.dropout = 0.0;
  s.init_std = 0.3;  // larger than the default so the fixture is far from trivial
  return s;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor<double> row_of(const Tensor<double>& t, std::size_t r) {
  auto s = t.row_span(r);
  return Tensor<double>::row(std::vector<double>(s.begin(), s.end()));
}

}  // namespace

TEST(Student, HeadWidthFollowsDivision) {
  auto dims = micro(256, 8, 10);
  Sd s(dims, 1);
  EXPECT_EQ(s.blocks[0].Wq[0].shape(), (num::Shape{256, 128}));
  dims.heads = 3;
  EXPECT_THROW(Sd(dims, 1), ConfigError);
}

TEST(SpatialEmbedding, AllPadIsZero) {
  Sd s(micro(), 2);
  auto e = spatial_position_embedding(s, {0, 0, 0}, {0, 0, 0});
  for (auto v : e.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(SpatialEmbedding, IdentityMapGivesSum) {
  Sd s(micro(), 3);
  s.W_SP.mutable_value().fill(0.0);
  for (std::size_t i = 0; i < 8; ++i) s.W_SP.mutable_value()(i, i) = 1.0;
  auto e = spatial_position_embedding(s, {1, 3}, {5, 16});
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_DOUBLE_EQ(e.value()(0, j), s.region_emb.value()(1, j) + s.dist_emb.value()(5, j));
    EXPECT_DOUBLE_EQ(e.value()(1, j), s.region_emb.value()(3, j) + s.dist_emb.value()(16, j));
  }
  EXPECT_THROW(spatial_position_embedding(s, {4}, {1}), std::out_of_range);
}

TEST(SpatialEmbedding, MatchesMatrixProductOracle) {
  Sd s(micro(), 4);
  const Ids c = {2, 0, 1, 3}, f = {7, 0, 1, 12};
  auto e = spatial_position_embedding(s, c, f);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      long double acc = 0;
      for (std::size_t k = 0; k < 8; ++k)
        acc += ((long double)s.region_emb.value()(c[i], k) + s.dist_emb.value()(f[i], k)) * s.W_SP.value()(k, j);
      EXPECT_NEAR(e.value()(i, j), double(acc), 1e-12);
    }
}

TEST(EmbedSequence, ZeroSpatialAndPositionLeavesItems) {
  Sd s(micro(), 5);
  s.params.zero_and_freeze("W_SP");
  s.params.zero_and_freeze("pos_emb");
  auto w = real_window({0, 2, 4, 1}, {0, 1, 2, 3}, {0, 3, 3, 9});
  auto e = embed_sequence(s, w);
  ASSERT_EQ(e.rows(), 3u);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(e.value()(i, j), s.item_emb.value()(w.items[i], j));
}

TEST(EmbedSequence, DistanceChangeIsLocal) {
  Sd s(micro(), 6);
  auto a = embed_sequence(s, real_window({3, 2, 4, 1}, {1, 1, 2, 3}, {2, 3, 3, 9})).value();
  auto b = embed_sequence(s, real_window({3, 2, 4, 1}, {1, 1, 2, 3}, {2, 3, 11, 9})).value();
  for (std::size_t i = 0; i < 4; ++i) {
    const double diff = max_abs_diff(row_of(a, i), row_of(b, i));
    if (i == 2)
      EXPECT_GT(diff, 0.0);
    else
      EXPECT_EQ(diff, 0.0);
  }
}

TEST(EmbedSequence, FullLengthShape) {
  auto dims = micro(256, 128, 50);
  Sd s(dims, 7);
  Ids x(128), c(128, 1), f(128, 1);
  for (std::size_t i = 0; i < 128; ++i) x[i] = 1 + i % 50;
  EXPECT_EQ(embed_sequence(s, real_window(x, c, f)).shape(), (num::Shape{128, 256}));
}

TEST(AttentionBlock, SingleRealPositionDependsOnlyOnItself) {
  Sd s(micro(), 8);
  const Ids x = {0, 0, 0, 5}, c = {0, 0, 0, 2}, f = {0, 0, 0, 4};
  // The padded rows carry no information at all, so a full-length pass
  // (pads included) and the single-row pass give the same real output.
  auto w = real_window(x, c, f);
  ASSERT_EQ(w.size(), 1u);
  auto X = embed_sequence(s, w);
  auto one = attention_block(s, 0, X).value();
  // Oracle for m = 1: attention weight 1 on itself.
  auto a = num::layer_norm(X, s.blocks[0].ln1_g, s.blocks[0].ln1_b);
  std::vector<Var<double>> heads;
  for (std::size_t h = 0; h < 2; ++h) heads.push_back(num::matmul(a, s.blocks[0].Wv[h]));
  auto H = num::add(X, num::add_row(num::matmul(num::concat_cols(heads), s.blocks[0].Wo), s.blocks[0].bo));
  auto cc = num::layer_norm(H, s.blocks[0].ln2_g, s.blocks[0].ln2_b);
  auto out = num::add(H, num::add_row(num::matmul(num::relu(num::add_row(num::matmul(cc, s.blocks[0].ff_W1),
                                                                         s.blocks[0].ff_b1)),
                                                  s.blocks[0].ff_W2),
                                      s.blocks[0].ff_b2));
  EXPECT_LE(max_abs_diff(one, out.value()), 1e-12);
}

TEST(AttentionBlock, CausalUnderPerturbation) {
  auto dims = micro(8, 6, 9);
  Sd s(dims, 9);
  Rng rng = make_rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Ids x(6), c(6), f(6);
    for (std::size_t i = 0; i < 6; ++i) {
      x[i] = 1 + uniform_index(rng, 9);
      c[i] = 1 + uniform_index(rng, 3);
      f[i] = 1 + uniform_index(rng, 16);
    }
    const auto j = uniform_index(rng, 6);
    Ids x2 = x, f2 = f;
    x2[j] = 1 + (x[j] % 9);
    f2[j] = 1 + (f[j] % 16);
    const auto a = encode(s, real_window(x, c, f)).value();
    const auto b = encode(s, real_window(x2, c, f2)).value();
    for (std::size_t i = 0; i < 6; ++i) {
      const double diff = max_abs_diff(row_of(a, i), row_of(b, i));
      if (i < j)
        EXPECT_EQ(diff, 0.0) << "row " << i << " changed by position " << j;
      else
        EXPECT_GT(diff, 0.0);
    }
  }
}

TEST(AttentionBlock, WindowEqualsFullLengthPassWithPadMask) {
  // Reference: run the block over all n rows (PAD rows included, PAD keys
  // masked) and compare the real rows with the window computation.
  Sd s(micro(8, 5, 6), 10);
  const Ids x = {0, 0, 3, 1, 6}, c = {0, 0, 1, 2, 3}, f = {0, 0, 4, 5, 6};
  auto fast = encode(s, real_window(x, c, f)).value();

  auto X = num::add(num::add(num::gather_rows(s.item_emb, x), s.pos_emb), spatial_position_embedding(s, c, f));
  std::vector<std::uint8_t> mask(25, 0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j <= i; ++j) mask[i * 5 + j] = x[j] != 0 || i == j;
  for (auto& b : s.blocks) {
    auto a = num::layer_norm(X, b.ln1_g, b.ln1_b);
    std::vector<Var<double>> heads;
    for (std::size_t h = 0; h < 2; ++h) {
      auto Q = num::matmul(a, b.Wq[h]), K = num::matmul(a, b.Wk[h]), V = num::matmul(a, b.Wv[h]);
      auto P = num::softmax_rows(num::scale(num::matmul_nt(Q, K), 0.5), 1.0, std::span<const std::uint8_t>(mask));
      heads.push_back(num::matmul(P, V));
    }
    auto H = num::add(X, num::add_row(num::matmul(num::concat_cols(heads), b.Wo), b.bo));
    auto cc = num::layer_norm(H, b.ln2_g, b.ln2_b);
    X = num::add(H, num::add_row(num::matmul(num::relu(num::add_row(num::matmul(cc, b.ff_W1), b.ff_b1)), b.ff_W2),
                                 b.ff_b2));
  }
  auto full = num::layer_norm(X, s.lnf_g, s.lnf_b).value();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LE(max_abs_diff(row_of(fast, i), row_of(full, i + 2)), 1e-12);
}

TEST(Predict, DistributionWithZeroPad) {
  Sd s(micro(), 11);
  auto p = predict(s, {0, 1, 2, 3}, {0, 1, 1, 2}, {0, 2, 2, 3}).probs.value();
  ASSERT_EQ(p.size(), 7u);
  EXPECT_EQ(p[0], 0.0);
  double sum = 0;
  for (auto v : p.values()) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_THROW(predict(s, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}), InvalidSampleError);
}

TEST(Predict, TrailingPadsMoveAnchorOnly) {
  Sd s(micro(), 12);
  // The anchor of [0,4,2,PAD] is position 2; by causality it equals row 2 of
  // the pass over [0,4,2,5].
  auto a = predict(s, {0, 4, 2, 0}, {0, 1, 3, 0}, {0, 2, 6, 0}).probs.value();
  auto H = encode(s, real_window({0, 4, 2, 5}, {0, 1, 3, 2}, {0, 2, 6, 7}));
  auto logits = num::matmul_nt(num::slice_rows(H, 1, 2), s.item_emb);
  const auto mask = item_mask(6);
  auto b = num::softmax_rows(logits, 1.0, std::span<const std::uint8_t>(mask)).value();
  EXPECT_LE(max_abs_diff(a, b), 1e-15);
  // Junk features under a PAD item do not matter.
  auto c = predict(s, {0, 4, 2, 0}, {0, 1, 3, 2}, {0, 2, 6, 9}).probs.value();
  EXPECT_EQ(a, c);
}

TEST(Predict, EngineeredAnchorPicksAlignedItem) {
  Sd s(micro(8, 4, 6), 13);
  // Orthogonal item embeddings; h* will be made equal to 10 * e_3.
  s.item_emb.mutable_value().fill(0.0);
  for (std::uint32_t v = 1; v <= 6; ++v) s.item_emb.mutable_value()(v, v) = 1.0;
  s.lnf_g.mutable_value().fill(0.0);
  s.lnf_b.mutable_value().fill(0.0);
  s.lnf_b.mutable_value()(0, 3) = 10.0;
  auto top = recommend(s, {0, 1, 2, 5}, {0, 1, 1, 1}, {0, 1, 1, 1}, 3);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].first, 3u);
  EXPECT_GT(top[0].second, 0.99);
}

TEST(Losses, KdIdenticalLogitsIsZero) {
  for (double tau : {1.0, 3.0, 5.0, 7.0, 9.0}) {
    Tensor<double> t = Tensor<double>::row({0.0, 1.5, -2.0, 0.25, 3.0});
    EXPECT_NEAR(kd_loss(t, Var<double>::constant(t), tau).value().item(), 0.0, 1e-12);
  }
  Tensor<double> t = Tensor<double>::row({0.0, 1.0});
  EXPECT_THROW(kd_loss(t, Var<double>::constant(t), 0.0), std::invalid_argument);
}

TEST(Losses, KdMatchesScriptedOracleAtTau3) {
  const std::vector<double> tl = {0.0, 2.0, -1.0, 0.5, 1.5}, sl = {0.0, 0.3, 0.1, -0.7, 2.2};
  const long double tau = 3;
  // Oracle over ids 1..4 (id 0 is PAD).
  auto soft = [&](const std::vector<double>& l) {
    std::vector<long double> p(5, 0);
    long double z = 0;
    for (int i = 1; i < 5; ++i) z += std::exp(l[i] / tau);
    for (int i = 1; i < 5; ++i) p[i] = std::exp(l[i] / tau) / z;
    return p;
  };
  const auto p = soft(tl), q = soft(sl);
  long double kl = 0;
  for (int i = 1; i < 5; ++i) kl += p[i] * std::log(p[i] / q[i]);
  const double want = double(kl * tau * tau);
  const double got = kd_loss(Tensor<double>::row(tl), Var<double>::constant(Tensor<double>::row(sl)), 3.0).value().item();
  EXPECT_NEAR(got, want, 1e-9);
}

TEST(Losses, SoftenedDivergenceVanishesAtLargeTemperature) {
  // The KL between the softened distributions falls monotonically to 0 once
  // tau is large enough; the tau^2-scaled loss tends to the logit-matching
  // limit 0.5 * Var(t - s) taken uniformly over the real takeaways.
  const std::vector<double> tl = {0.0, 4.0, -1.0, 0.5, 2.0}, sl = {0.0, -2.0, 3.0, 0.0, 1.0};
  Tensor<double> t = Tensor<double>::row(tl);
  auto s = Var<double>::constant(Tensor<double>::row(sl));
  double prev = kd_loss(t, s, 2.0).value().item() / 4.0;
  for (double tau = 4; tau <= 4096; tau *= 2) {
    const double v = kd_loss(t, s, tau).value().item() / (tau * tau);
    EXPECT_LE(v, prev + 1e-15) << tau;
    EXPECT_GE(v, -1e-12);
    prev = v;
  }
  EXPECT_LT(prev, 1e-6);

  double mean = 0, var = 0;
  for (int i = 1; i < 5; ++i) mean += (tl[i] - sl[i]) / 4;
  for (int i = 1; i < 5; ++i) var += (tl[i] - sl[i] - mean) * (tl[i] - sl[i] - mean) / 4;
  EXPECT_NEAR(kd_loss(t, s, 4096.0).value().item(), 0.5 * var, 1e-3 * var);
}

TEST(Losses, CachedSoftLabelsRecoverTeacherAtTauOne) {
  Tensor<double> logits = Tensor<double>::row({0.0, 1.0, -3.0, 2.5, 0.2});
  const auto probs = teacher_distribution(logits, 1.0);
  const auto back = teacher_distribution(logits_from_soft_labels(probs), 1.0);
  EXPECT_LE(max_abs_diff(probs, back), 1e-12);
  auto s = Var<double>::constant(Tensor<double>::row({0.0, 0.1, 0.2, 0.3, 0.4}));
  EXPECT_NEAR(kd_loss(logits, s, 1.0).value().item(), kd_loss(logits_from_soft_labels(probs), s, 1.0).value().item(),
              1e-12);
}

TEST(Losses, RecLoss) {
  auto onehot = Var<double>::constant(Tensor<double>::row({0, 0, 1, 0}));
  EXPECT_LE(rec_loss(onehot, 2).value().item(), 1e-9);
  std::vector<double> u(101, 0.01);
  u[0] = 0.0;
  EXPECT_NEAR(rec_loss(Var<double>::constant(Tensor<double>::row(u)), 37).value().item(), std::log(100.0), 1e-9);
  EXPECT_THROW(rec_loss(onehot, 4), std::out_of_range);
  EXPECT_THROW(rec_loss(onehot, 0), std::out_of_range);
  auto p = Var<double>::constant(Tensor<double>::row({0, 0.2, 0.5, 0.3}));
  EXPECT_EQ(rec_loss(p, 1).value().item(), num::cross_entropy(p, 1).value().item());
}

TEST(Losses, JointEndpointsAndLinearity) {
  auto kd = Var<double>::constant(Tensor<double>::scalar(1.0));
  auto rec = Var<double>::constant(Tensor<double>::scalar(2.0));
  EXPECT_EQ(joint_loss(kd, rec, 0.0).value().item(), 2.0);
  EXPECT_EQ(joint_loss(kd, rec, 1.0).value().item(), 1.0);
  EXPECT_NEAR(joint_loss(kd, rec, 0.2).value().item(), 1.8, 1e-15);
  for (double a : {0.1, 0.5, 0.9}) EXPECT_NEAR(joint_loss(kd, rec, a).value().item(), a * 1.0 + (1 - a) * 2.0, 1e-15);
  EXPECT_THROW(joint_loss(kd, rec, 1.5), std::invalid_argument);
  EXPECT_THROW(joint_loss(kd, rec, -0.1), std::invalid_argument);
}

TEST(Losses, AlphaOneCutsRecGradient) {
  auto kd = Var<double>::parameter(Tensor<double>::scalar(0.7));
  auto rec = Var<double>::parameter(Tensor<double>::scalar(1.3));
  num::backward(joint_loss(kd, rec, 1.0));
  EXPECT_EQ(rec.grad()[0], 0.0);
  EXPECT_EQ(kd.grad()[0], 1.0);
}

TEST(Student, JointLossGradientMatchesFiniteDifferences) {
  Sd s(micro(8, 4, 6), 14);
  const Tensor<double> teacher = Tensor<double>::row({0.0, 0.4, -0.3, 1.2, 0.1, -0.8, 0.6});
  const Ids x = {0, 2, 5, 1}, c = {0, 1, 3, 2}, f = {0, 4, 9, 2};
  auto loss = [&] {
    auto p = predict(s, x, c, f);
    return joint_loss(kd_loss(teacher, p.logits, 3.0), rec_loss(p.probs, 4), 0.2);
  };
  std::vector<num::NamedVar> named;
  for (auto& p : s.params.items()) named.push_back({p.name, p.var});
  auto rep = num::finite_diff_check(loss, named, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.worst_param << "[" << rep.worst_index << "] analytic " << rep.worst_analytic
                          << " numeric " << rep.worst_numeric << " rel " << rep.max_rel_error;
}

TEST(Student, NoSpatialEqualsPlainTransformer) {
  auto dims = micro(8, 5, 6);
  Sd ablated(dims, 15);
  ablated.disable_spatial();
  dims.spatial = false;
  Sd plain(dims, 15);
  const Ids x = {0, 3, 1, 6, 2}, c = {0, 1, 2, 3, 1}, f = {0, 4, 5, 6, 16};
  EXPECT_EQ(predict(ablated, x, c, f).probs.value(), predict(plain, x, c, f).probs.value());
}

TEST(Student, PadRowStaysZeroUnderTraining) {
  auto dims = micro();
  dims.dropout = 0.1;
  Sd s(dims, 16);
  num::Adam<double> opt(s.params, {.lr = 0.05});
  Rng rng = make_rng(1);
  for (int step = 0; step < 10; ++step) {
    auto p = predict(s, {0, 2, 5, 1}, {0, 1, 3, 2}, {0, 4, 9, 2}, &rng);
    num::backward(rec_loss(p.probs, 3));
    opt.step();
  }
  for (auto v : s.item_emb.value().row_span(0)) EXPECT_EQ(v, 0.0);
  for (auto v : s.region_emb.value().row_span(0)) EXPECT_EQ(v, 0.0);
  for (auto v : s.dist_emb.value().row_span(0)) EXPECT_EQ(v, 0.0);
}

TEST(Student, FusionNeedsReadoutAndCatProjects) {
  auto dims = micro();
  dims.fusion = Fusion::cat;
  Sd s(dims, 17);
  EXPECT_THROW(predict(s, {0, 2, 5, 1}, {0, 1, 3, 2}, {0, 4, 9, 2}), ConfigError);
  auto r = Var<double>::constant(Tensor<double>::matrix(1, 8, 0.5));
  auto p = predict(s, {0, 2, 5, 1}, {0, 1, 3, 2}, {0, 4, 9, 2}, nullptr, &r);
  EXPECT_EQ(p.anchor.shape(), (num::Shape{1, 8}));
}

TEST(Checkpoint, StudentRoundTrip) {
  auto dims = micro();
  dims.fusion = Fusion::multi;
  Sd s(dims, 18);
  s.disable_region();
  const std::string path = ::testing::TempDir() + "/student.bin";
  save_student(s, 77, "{}", path);
  auto back = load_student<double>(path, 77);
  EXPECT_EQ(back.student.dims().fusion, Fusion::multi);
  EXPECT_TRUE(back.student.params.at("region_emb").frozen);
  const auto a = s.params.snapshot(), b = back.student.params.snapshot();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_THROW(load_student<double>(path, 78), ConsistencyError);
}
