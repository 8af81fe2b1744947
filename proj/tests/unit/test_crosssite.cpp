#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fedrecon/crosssite.hpp"
#include "fedrecon/error.hpp"
#include "fedrecon/ops.hpp"
#include "gradcheck.hpp"

namespace fedrecon::crosssite {
namespace {

using testing::random_tensor;

const double kTwoLn2 = 2.0 * std::numbers::ln2;

fl::FLConfig small_config() {
  fl::FLConfig cfg;
  cfg.image_size = 16;
  cfg.unet = {1, 4, 2};
  cfg.identifier_hidden = 4;
  cfg.batch_size = 4;
  cfg.local_epochs = 1;
  cfg.global_rounds = 2;
  cfg.lr1 = 1e-3;
  cfg.lr2 = 1e-4;
  return cfg;
}

sites::SiteDataset site(const std::string& id, std::size_t n_train) {
  for (const auto& p : sites::default_profiles()) {
    if (p.site_id == id) return sites::generate_site(p, n_train, 4, 16, {});
  }
  throw std::logic_error("unknown site");
}

model::LatentBatch latents(ad::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return {random_tensor(std::move(shape), rng, lo, hi, 0.0, false), ""};
}

TEST(Losses, EqualTwoLn2WhenIdentifierIsUndecided) {
  const model::DomainIdentifierConfig cfg{8, 4, 0.2};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    model::Rng rng(seed);
    const auto c = model::identifier_init(cfg, rng, true);
    const auto zs = latents({3, 8, 2, 2}, seed), zt = latents({3, 8, 2, 2}, seed + 100);
    EXPECT_NEAR(identifier_loss(c, cfg, zs, zt).item(), kTwoLn2, 1e-12);
    EXPECT_NEAR(encoder_adv_loss(c, cfg, zs, zt).item(), kTwoLn2, 1e-12);
    EXPECT_NEAR(encoder_adv_loss(c, cfg, zs, zt, true).item(), kTwoLn2, 1e-12);
  }
}

// One latent channel; C(z) = sigmoid(w * leaky(z)) for constant latent maps.
ParamSet sign_identifier(const model::DomainIdentifierConfig& cfg, double w) {
  model::Rng rng(0);
  auto c = model::identifier_init(cfg, rng, true);
  for (auto [name, t] : c) {
    for (auto& v : t.mutable_data()) v = 0.0;
  }
  c.at("ident.conv1.weight").mutable_data()[4] = 1.0;
  c.at("ident.conv2.weight").mutable_data()[4] = w;
  return c;
}

TEST(Losses, PerfectDiscriminationLimit) {
  const model::DomainIdentifierConfig cfg{1, 1, 0.2};
  const auto c = sign_identifier(cfg, 200.0);
  const model::LatentBatch pos{ad::Tensor::full({2, 1, 3, 3}, 1.0), ""}, neg{ad::Tensor::full({2, 1, 3, 3}, -1.0), ""};
  const double near_zero = -2.0 * std::log1p(-ad::kProbClamp);  // ~ 2 * delta
  EXPECT_NEAR(identifier_loss(c, cfg, pos, neg).item(), near_zero, 1e-12);
  EXPECT_LT(identifier_loss(c, cfg, pos, neg).item(), 1e-6);
  // Encoders have "won" when C says source for everything.
  EXPECT_NEAR(encoder_adv_loss(c, cfg, pos, pos).item(), near_zero, 1e-12);
  EXPECT_DOUBLE_EQ(identifier_accuracy(c, cfg, pos, neg), 1.0);
  EXPECT_DOUBLE_EQ(identifier_accuracy(c, cfg, neg, pos), 0.0);
}

TEST(Losses, MismatchedBatchesAreRejected) {
  const model::DomainIdentifierConfig cfg{2, 2, 0.2};
  model::Rng rng(1);
  const auto c = model::identifier_init(cfg, rng);
  EXPECT_THROW(identifier_loss(c, cfg, latents({2, 2, 2, 2}, 1), latents({3, 2, 2, 2}, 2)), Error);
  EXPECT_THROW(encoder_adv_loss(c, cfg, latents({2, 2, 2, 2}, 1), latents({2, 2, 4, 4}, 2)), Error);
}

TEST(Losses, IdentifierLossGradientsMatchFiniteDifferences) {
  const model::DomainIdentifierConfig cfg{3, 4, 0.2};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    model::Rng rng(seed);
    const auto c = model::identifier_init(cfg, rng);
    const auto zs = latents({2, 3, 2, 2}, 10 + seed), zt = latents({2, 3, 2, 2}, 50 + seed);
    const auto check =
        testing::grad_check_params([&] { return identifier_loss(c, cfg, zs, zt); }, c, static_cast<std::size_t>(-1), seed);
    EXPECT_TRUE(check.ok()) << "seed " << seed << ": " << check.max_rel_error << " at " << check.worst;
  }
}

TEST(Losses, EncoderLossGradientsReachOnlyTheLatents) {
  const model::DomainIdentifierConfig cfg{3, 4, 0.2};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    model::Rng rng(seed);
    auto c = model::identifier_init(cfg, rng);
    std::mt19937_64 r(seed);
    const ad::Tensor zs = random_tensor({2, 3, 2, 2}, r), zt = random_tensor({2, 3, 2, 2}, r);
    for (bool inverted : {false, true}) {
      const auto check = testing::grad_check(
          [&] { return encoder_adv_loss(c, cfg, {zs, ""}, {zt, ""}, inverted); }, {zs, zt}, static_cast<std::size_t>(-1),
          seed, {"z_s", "z_t"});
      EXPECT_TRUE(check.ok()) << "seed " << seed << ": " << check.max_rel_error << " at " << check.worst;
    }
    c.zero_grad();
    ad::backward(encoder_adv_loss(c, cfg, {zs, ""}, {zt, ""}));
    for (const auto& [name, t] : c) EXPECT_FALSE(t.has_grad()) << name;
  }
}

TEST(Losses, EncoderLossGradientsThroughSourceEncoder) {
  const model::UNetConfig ucfg{1, 4, 2};
  const model::DomainIdentifierConfig cfg{ucfg.latent_channels(), 4, 0.2};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    model::Rng rng(seed);
    const auto g = model::unet_init(ucfg, rng);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto [name, t] : g) {
      if (name.ends_with(".bias")) {
        for (auto& v : t.mutable_data()) v = u(rng);
      }
    }
    const auto enc = model::encoder_view(g);
    const auto c = model::identifier_init(cfg, rng);
    std::mt19937_64 r(seed);
    const auto x = random_tensor({2, 1, 8, 8}, r, 0, 1, 0, false);
    const auto zt = latents({2, ucfg.latent_channels(), 2, 2}, seed, 0.0, 1.0);
    const auto check = testing::grad_check_params(
        [&] { return encoder_adv_loss(c, cfg, model::encoder_forward(enc, ucfg, x).latent, zt); }, enc, 4, seed, true);
    EXPECT_TRUE(check.ok()) << "seed " << seed << ": " << check.max_rel_error << " at " << check.worst;
  }
}

TEST(Identifier, LearnsToSeparateGaussianClusters) {
  const model::DomainIdentifierConfig cfg{4, 8, 0.2};
  model::Rng rng(3);
  auto c = model::identifier_init(cfg, rng);
  auto adam = AdamState::for_params(c);
  std::normal_distribution<double> noise(0.0, 0.5);
  auto cluster = [&](double mu, std::size_t n) {
    std::vector<double> v(n * 4 * 2 * 2);
    for (auto& x : v) x = mu + noise(rng);
    return model::LatentBatch{ad::Tensor({n, 4, 2, 2}, std::move(v)), ""};
  };
  const auto zs = cluster(1.0, 64), zt = cluster(-1.0, 64);
  const double before = identifier_loss(c, cfg, zs, zt).item();
  for (int step = 0; step < 200; ++step) {
    ad::backward(identifier_loss(c, cfg, zs, zt));
    adam_step(c, adam, 1e-3);
  }
  EXPECT_LT(identifier_loss(c, cfg, zs, zt).item(), before);
  EXPECT_GT(identifier_accuracy(c, cfg, cluster(1.0, 64), cluster(-1.0, 64)), 0.95);
}

TEST(SourceSite, SubStepsTouchOnlyTheirOwnParameters) {
  const auto cfg = small_config();
  const auto a = site("A", 8), t = site("D", 8);
  SourceSite s(0, a, cfg, "D");
  auto tgt = TargetSite::from_dataset(t, cfg);
  const auto init = fl::initial_params(cfg);
  ParamSet local = s.begin_round(init);
  tgt.deploy(init);
  tgt.begin_step();
  const std::vector<std::size_t> batch{0, 1, 2, 3};
  const auto z_t = tgt.serve_latents(0, 0, 0, batch.size());

  const auto before_ident = s.pair().identifier_params.clone();
  const auto before_local = local.clone();
  s.identifier_step(local, batch, z_t, 1e-3);
  EXPECT_TRUE(local.bit_equal(before_local));
  for (const auto& [name, tensor] : local) EXPECT_FALSE(tensor.has_grad()) << name;
  EXPECT_FALSE(s.pair().identifier_params.bit_equal(before_ident));

  const auto ident = s.pair().identifier_params.clone();
  const ad::Tensor grad = s.encoder_step(local, batch, z_t, 1e-3);
  EXPECT_TRUE(s.pair().identifier_params.bit_equal(ident));
  for (const auto& [name, tensor] : s.pair().identifier_params) EXPECT_FALSE(tensor.has_grad()) << name;
  for (const auto& [name, tensor] : local) {
    const bool encoder = name.starts_with("enc") || name.starts_with("bottleneck.");
    EXPECT_EQ(ad::bit_equal(tensor, before_local.at(name)), !encoder) << name;
  }
  EXPECT_EQ(grad.shape(), z_t.features.shape());

  const auto version = tgt.encoder().version;
  const auto e_before = tgt.encoder().encoder_params.clone();
  tgt.apply_update(0, grad, 1e-3);
  EXPECT_EQ(tgt.encoder().version, version + 1);
  EXPECT_FALSE(tgt.encoder().encoder_params.bit_equal(e_before));
  EXPECT_THROW(tgt.apply_update(0, grad, 1e-3), Error);  // one update per served batch
}

TEST(TargetSite, ServesLatentsOnlyInsideAStep) {
  const auto cfg = small_config();
  const auto t = site("B", 5);
  auto tgt = TargetSite::from_dataset(t, cfg);
  EXPECT_EQ(tgt.input_count(), 5u);
  EXPECT_THROW(tgt.begin_step(), Error);
  tgt.deploy(fl::initial_params(cfg));
  EXPECT_THROW(tgt.serve_latents(0, 0, 0, 4), Error);
  tgt.begin_step();
  const auto z = tgt.serve_latents(1, 0, 0, 7);  // more than the target holds: cycles
  EXPECT_EQ(z.features.shape(), (ad::Shape{7, 8, 4, 4}));
  EXPECT_EQ(z.origin_site, "B");
  EXPECT_FALSE(z.features.requires_grad());
}

TEST(RunFlmrcm, ZeroLambdaReducesToFlmr) {
  auto cfg = small_config();
  cfg.lambda_adv = 0.0;
  const auto a = site("A", 6), b = site("B", 5), t = site("C", 4);
  const auto cm = run_flmrcm(cfg, {&a, &b}, t);
  const auto plain = fl::run_flmr(cfg, {&a, &b});
  EXPECT_TRUE(cm.run.global.bit_equal(plain.global));
  for (const auto& m : cm.run.messages) EXPECT_NE(m.kind, fl::MessageKind::kEncoderUpdate);
}

TEST(RunFlmrcm, ProtocolShape) {
  auto cfg = small_config();
  const auto a = site("A", 6), b = site("B", 3), t = site("C", 4);
  const auto r = run_flmrcm(cfg, {&a, &b}, t);
  // Per round: ceil(6/4) + ceil(3/4) source steps.
  const std::size_t steps = cfg.global_rounds * 3;
  std::map<fl::MessageKind, std::size_t> count;
  for (const auto& m : r.run.messages) ++count[m.kind];
  EXPECT_EQ(count[fl::MessageKind::kDeploy], cfg.global_rounds * 3);  // two sources and the target
  EXPECT_EQ(count[fl::MessageKind::kUpload], cfg.global_rounds * 2);
  EXPECT_EQ(count[fl::MessageKind::kLatentRequest], steps);
  EXPECT_EQ(count[fl::MessageKind::kLatentReply], steps);
  EXPECT_EQ(count[fl::MessageKind::kEncoderUpdate], steps);
  EXPECT_EQ(r.target_encoder.version, steps);
  ASSERT_EQ(r.pairs.size(), 2u);
  EXPECT_EQ(r.pairs[1].source_site, "B");
  EXPECT_EQ(r.pairs[1].target_site, "C");
  for (const auto& [name, tensor] : r.run.global) EXPECT_FALSE(name.starts_with(model::kIdentifierPrefix)) << name;
  EXPECT_EQ(r.run.global.size(), fl::initial_params(cfg).size());
}

TEST(RunFlmrcm, ZeroSourcesIsAnError) {
  const auto cfg = small_config();
  const auto t = site("C", 4);
  EXPECT_THROW(run_flmrcm(cfg, {}, t), Error);
}

TEST(RunFlmrcm, TargetMayAlsoBeASource) {
  const auto cfg = small_config();
  const auto a = site("A", 4), c = site("C", 4);
  EXPECT_NO_THROW(run_flmrcm(cfg, {&a, &c}, c));
  EXPECT_THROW(run_flmrcm(cfg, {&a, &a}, c), Error);
}

TEST(RunFlmrcm, TargetReferencesAreNeverRead) {
  const auto cfg = small_config();
  const auto a = site("A", 6), b = site("B", 5), t = site("D", 4);
  auto poisoned = t;
  for (auto* split : {&poisoned.train, &poisoned.test}) {
    for (auto& s : *split) s.reference = ad::Tensor::full(s.reference.shape(), std::nan(""));
  }
  const auto clean = run_flmrcm(cfg, {&a, &b}, t);
  const auto dirty = run_flmrcm(cfg, {&a, &b}, poisoned);
  EXPECT_TRUE(clean.run.global.bit_equal(dirty.run.global));
  EXPECT_TRUE(clean.target_encoder.encoder_params.bit_equal(dirty.target_encoder.encoder_params));
}

TEST(RunFlmrcm, IndependentOfThreadCount) {
  auto cfg = small_config();
  const auto a = site("A", 6), b = site("B", 5), c = site("C", 2), t = site("D", 4);
  cfg.threads = 1;
  const auto serial = run_flmrcm(cfg, {&a, &b, &c}, t);
  cfg.threads = 3;
  const auto parallel = run_flmrcm(cfg, {&a, &b, &c}, t);
  EXPECT_TRUE(serial.run.global.bit_equal(parallel.run.global));
  EXPECT_EQ(fl::rounds_to_jsonl(serial.run.rounds), fl::rounds_to_jsonl(parallel.run.rounds));
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_TRUE(serial.pairs[k].identifier_params.bit_equal(parallel.pairs[k].identifier_params));
  }
}

TEST(LatentDistance, MatchesDirectComputation) {
  const auto cfg = small_config();
  const auto a = site("A", 2), b = site("B", 2);
  const auto g = fl::initial_params(cfg);
  EXPECT_EQ(latent_distance(g, cfg.unet, {&a}, a), 0.0);
  auto mean_of = [&](const sites::SiteDataset& ds) {
    std::vector<ad::Tensor> imgs;
    for (const auto& s : ds.test) imgs.push_back(s.input);
    const auto z = model::encoder_forward(g, cfg.unet, model::stack_images(imgs)).latent.features;
    const std::size_t per = z.numel() / imgs.size();
    std::vector<double> m(per, 0.0);
    for (std::size_t i = 0; i < z.numel(); ++i) m[i % per] += z.data()[i] / static_cast<double>(imgs.size());
    return m;
  };
  const auto ma = mean_of(a), mb = mean_of(b);
  double d2 = 0.0;
  for (std::size_t j = 0; j < ma.size(); ++j) d2 += (ma[j] - mb[j]) * (ma[j] - mb[j]);
  EXPECT_NEAR(latent_distance(g, cfg.unet, {&a}, b), std::sqrt(d2), 1e-12);
  EXPECT_NEAR(latent_distance(g, cfg.unet, {&a, &b}, b), std::sqrt(d2) / 2.0, 1e-12);
}

}  // namespace
}  // namespace fedrecon::crosssite
