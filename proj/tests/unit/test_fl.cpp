#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <numeric>
#include <set>
#include <thread>

#include "fedrecon/channel.hpp"
#include "fedrecon/error.hpp"
#include "fedrecon/fl.hpp"
#include "fedrecon/metrics.hpp"
#include "fedrecon/ops.hpp"
#include "fedrecon/scenario.hpp"
#include "oracles.hpp"

namespace fedrecon::fl {
namespace {

FLConfig small_config() {
  FLConfig cfg;
  cfg.image_size = 16;
  cfg.unet = {1, 4, 2};
  cfg.identifier_hidden = 4;
  cfg.batch_size = 4;
  cfg.local_epochs = 1;
  cfg.global_rounds = 3;
  cfg.lr1 = 1e-3;
  cfg.lr2 = 1e-4;
  return cfg;
}

sites::SiteDataset site(const std::string& id, std::size_t n_train, std::size_t image_size = 16) {
  for (const auto& p : sites::default_profiles()) {
    if (p.site_id == id) return sites::generate_site(p, n_train, 4, image_size, {});
  }
  throw std::logic_error("unknown site");
}

ParamSet scalars(std::initializer_list<double> values) {
  ParamSet p;
  p.add("w", ad::Tensor({values.size()}, std::vector<double>(values)));
  return p;
}

ParamSet random_params(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ParamSet p;
  for (const auto& [name, shape] : std::vector<std::pair<std::string, ad::Shape>>{{"a", {3, 4}}, {"b", {7}}, {"c", {2, 2, 3}}}) {
    std::vector<double> v(ad::shape_numel(shape));
    for (auto& x : v) x = n(rng) * std::exp(n(rng));
    p.add(name, ad::Tensor(shape, std::move(v)));
  }
  return p;
}

TEST(Schedule, EightyPercentAtLr1) {
  FLConfig cfg;
  cfg.global_rounds = 50;
  EXPECT_EQ(cfg.lr1_rounds(), 40u);
  EXPECT_EQ(cfg.lr_for_round(39), cfg.lr1);
  EXPECT_EQ(cfg.lr_for_round(40), cfg.lr2);
  cfg.global_rounds = 1;
  EXPECT_EQ(cfg.lr1_rounds(), 1u);
  cfg.global_rounds = 20;
  EXPECT_EQ(cfg.lr1_rounds(), 16u);
}

TEST(Config, InvalidValuesAreRejected) {
  auto cfg = small_config();
  cfg.lr2 = cfg.lr1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = small_config();
  cfg.local_epochs = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = small_config();
  cfg.image_size = 20;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_NO_THROW(small_config().validate());
}

TEST(Rng, ClientSeedsAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::size_t k = 0; k < 16; ++k) seen.insert(client_seed(7, k));
  EXPECT_EQ(seen.size(), 16u);
  EXPECT_EQ(client_seed(7, 3), client_seed(7, 3));
  EXPECT_NE(client_seed(7, 3), client_seed(8, 3));
}

TEST(LocalTrain, ZeroLearningRateKeepsParameters) {
  const auto cfg = small_config();
  const auto ds = site("A", 8);
  Client client(0, ds, cfg);
  const auto init = initial_params(cfg);
  ParamSet p = client.begin_round(init);
  for (const auto& batch : client.round_batches(0)) client.train_batch(p, batch, 0.0);
  EXPECT_TRUE(p.bit_equal(init));
}

TEST(LocalTrain, RepeatedSampleLossDecreases) {
  auto cfg = small_config();
  cfg.image_size = 32;
  cfg.unet = {1, 8, 3};
  const auto ds = site("B", 1, 32);
  auto measure = [&](const ParamSet& p) {
    const auto& s = ds.train[0];
    return ad::l1_loss(model::reconstruct(p, cfg.unet, model::stack_images({s.input})),
                       model::stack_images({s.reference}))
        .item();
  };
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    cfg.seed = seed;
    Client client(0, ds, cfg);
    ParamSet p = client.begin_round(initial_params(cfg));
    const double before = measure(p);
    for (int step = 0; step < 50; ++step) client.train_batch(p, {0}, 1e-4);
    EXPECT_LT(measure(p), 0.99 * before) << "seed " << seed;
  }
}

TEST(LocalTrain, IsDeterministic) {
  const auto cfg = small_config();
  const auto ds = site("C", 10);
  Client a(0, ds, cfg), b(0, ds, cfg);
  const auto init = initial_params(cfg);
  EXPECT_TRUE(a.local_train(init, 2, 1e-3).bit_equal(b.local_train(init, 2, 1e-3)));
}

TEST(LocalTrain, BatchesCoverEveryEpochAndDependOnRound) {
  auto cfg = small_config();
  cfg.local_epochs = 2;
  const auto ds = site("A", 10);
  Client c(0, ds, cfg);
  const auto batches = c.round_batches(0);
  ASSERT_EQ(batches.size(), 6u);  // 2 epochs x ceil(10 / 4)
  std::vector<std::size_t> first;
  for (std::size_t b = 0; b < 3; ++b) first.insert(first.end(), batches[b].begin(), batches[b].end());
  std::ranges::sort(first);
  std::vector<std::size_t> all(10);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(first, all);
  EXPECT_NE(c.round_batches(0), c.round_batches(1));
  EXPECT_EQ(c.round_batches(1), Client(0, ds, cfg).round_batches(1));
}

TEST(LocalTrain, IncompatibleParametersAreRejected) {
  const auto cfg = small_config();
  const auto ds = site("A", 4);
  Client c(0, ds, cfg);
  EXPECT_THROW(c.local_train(scalars({1.0}), 0, 1e-3), Error);
}

TEST(LocalTrain, EmptyDatasetIsRejected) {
  const auto cfg = small_config();
  auto ds = site("A", 4);
  ds.train.clear();
  EXPECT_THROW(Client(0, ds, cfg), Error);
}

TEST(Aggregate, MeanOfThreeScalars) {
  const auto g = aggregate({scalars({0.0}), scalars({3.0}), scalars({6.0})});
  EXPECT_EQ(g.at("w").item(), 3.0);
}

TEST(Aggregate, SingleUploadIsReturnedUnchanged) {
  std::mt19937_64 rng(1);
  const auto p = random_params(rng);
  EXPECT_TRUE(aggregate({p}).bit_equal(p));
}

TEST(Aggregate, MatchesIndependentMeanBitExactly) {
  std::mt19937_64 rng(2);
  for (std::size_t k = 1; k <= 6; ++k) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<ParamSet> uploads;
      for (std::size_t i = 0; i < k; ++i) uploads.push_back(random_params(rng));
      const auto g = aggregate(uploads);
      EXPECT_TRUE(g.bit_equal(testing::oracle_mean(uploads))) << "K=" << k;
      // And close to the textbook mean in extended precision.
      for (const auto& [name, t] : g) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
          long double s = 0;
          for (const auto& u : uploads) s += u.at(name).data()[i];
          const double m = static_cast<double>(s / k);
          EXPECT_NEAR(t.data()[i], m, 1e-14 * std::max(1.0, std::abs(m)));
        }
      }
    }
  }
}

TEST(Aggregate, PermutationInvariantAndIdempotent) {
  std::mt19937_64 rng(3);
  std::vector<ParamSet> uploads;
  for (int i = 0; i < 5; ++i) uploads.push_back(random_params(rng));
  const auto g = aggregate(uploads);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(uploads.begin(), uploads.end(), rng);
    EXPECT_TRUE(aggregate(uploads).bit_equal(g));
  }
  EXPECT_TRUE(aggregate({g, g, g, g}).bit_equal(g));
}

TEST(Aggregate, WeightedMean) {
  const auto g = aggregate({scalars({0.0}), scalars({10.0})}, {1.0, 3.0});
  EXPECT_EQ(g.at("w").item(), 7.5);
  EXPECT_THROW(aggregate({scalars({0.0}), scalars({1.0})}, {1.0}), Error);
}

TEST(Aggregate, ShapeMismatchNamesEntry) {
  ParamSet a = scalars({1.0}), b;
  b.add("w", ad::Tensor({2}, {1.0, 2.0}));
  try {
    aggregate({a, b});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
  EXPECT_THROW(aggregate({}), Error);
}

TEST(RunFlmr, SingleClientEqualsCentralizedTraining) {
  auto cfg = small_config();
  cfg.persist_adam = true;
  cfg.global_rounds = 4;
  cfg.local_epochs = 2;
  const auto ds = site("B", 10);
  const auto fed = run_flmr(cfg, {&ds});
  EXPECT_TRUE(fed.global.bit_equal(train_centralized(cfg, ds)));
}

TEST(RunFlmr, MessageLogHasDeployAndUploadPerClientRound) {
  auto cfg = small_config();
  const auto a = site("A", 6), b = site("B", 6), c = site("C", 3);
  const auto run = run_flmr(cfg, {&a, &b, &c});
  std::size_t deploys = 0, uploads = 0;
  for (const auto& m : run.messages) {
    deploys += m.kind == MessageKind::kDeploy;
    uploads += m.kind == MessageKind::kUpload;
  }
  EXPECT_EQ(deploys, cfg.global_rounds * 3);
  EXPECT_EQ(uploads, cfg.global_rounds * 3);
  EXPECT_EQ(run.messages.size(), deploys + uploads);
  ASSERT_EQ(run.rounds.size(), cfg.global_rounds);
  for (const auto& r : run.rounds) {
    EXPECT_EQ(r.deploy_messages, 3u);
    EXPECT_EQ(r.upload_messages, 3u);
    EXPECT_GT(r.bytes, 0u);
    EXPECT_EQ(r.clients.size(), 3u);
  }
}

TEST(RunFlmr, ResultIndependentOfThreadCount) {
  auto cfg = small_config();
  const auto a = site("A", 6), b = site("D", 6);
  cfg.threads = 1;
  const auto serial = run_flmr(cfg, {&a, &b});
  cfg.threads = 4;
  const auto parallel = run_flmr(cfg, {&a, &b});
  EXPECT_TRUE(serial.global.bit_equal(parallel.global));
  EXPECT_EQ(rounds_to_jsonl(serial.rounds), rounds_to_jsonl(parallel.rounds));
}

TEST(RunFlmr, NextDeployIsAggregateOfUploads) {
  // Replays the protocol by hand and compares round by round.
  auto cfg = small_config();
  cfg.global_rounds = 2;
  const auto a = site("A", 6), b = site("B", 5);
  Client ca(0, a, cfg), cb(1, b, cfg);
  ParamSet g = initial_params(cfg);
  for (std::size_t q = 0; q < cfg.global_rounds; ++q) {
    const double lr = cfg.lr_for_round(q);
    g = aggregate({cb.local_train(g, q, lr), ca.local_train(g, q, lr)});
  }
  EXPECT_TRUE(run_flmr(cfg, {&a, &b}).global.bit_equal(g));
}

TEST(RunFlmr, DuplicateSitesAreRejected) {
  const auto cfg = small_config();
  const auto a = site("A", 4);
  EXPECT_THROW(run_flmr(cfg, {&a, &a}), Error);
  EXPECT_THROW(run_flmr(cfg, {}), Error);
}

TEST(RunFlmr, JsonlHasOneLinePerRound) {
  auto cfg = small_config();
  const auto a = site("A", 4);
  const auto run = run_flmr(cfg, {&a});
  const auto text = rounds_to_jsonl(run.rounds);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), static_cast<long>(cfg.global_rounds));
  EXPECT_EQ(text.rfind("{\"round\":0,", 0), 0u);
  EXPECT_NE(text.find("\"train_loss\":{\"A\":"), std::string::npos);
}

TEST(RunFlmr, IdenticalSitesMatchSingleSiteTraining) {
  auto cfg = small_config();
  cfg.image_size = 32;
  cfg.unet = {1, 4, 3};
  cfg.global_rounds = 4;
  cfg.local_epochs = 2;
  const auto a = site("A", 24, 32);
  auto twin = a;
  twin.profile.site_id = "A2";
  for (auto& s : twin.train) s.site_id = "A2";
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    cfg.seed = seed;
    const auto fed = run_flmr(cfg, {&a, &twin}).global;
    const auto single = train_centralized(cfg, a);
    const double d = metrics::evaluate(fed, cfg.unet, a.test).mean_psnr -
                     metrics::evaluate(single, cfg.unet, a.test).mean_psnr;
    EXPECT_LT(std::abs(d), 0.5) << "seed " << seed;
  }
}

class ChannelTest : public ::testing::Test {
 protected:
  ChannelTest() : ds_(site("A", 2)), channel_(make_auditor()) {}
  PrivacyAuditor make_auditor() {
    PrivacyAuditor a(16);
    a.register_dataset(ds_);
    return a;
  }
  sites::SiteDataset ds_;
  Channel channel_;
};

TEST_F(ChannelTest, ImageShapedTensorIsRejected) {
  ParamSet p;
  p.add("leak", ad::Tensor::zeros({1, 1, 16, 16}));
  EXPECT_THROW(channel_.send({MessageKind::kUpload, 0, "A", kServerId, p}), PrivacyViolation);
  model::LatentBatch z{ad::Tensor::zeros({2, 3, 16, 16}), "A"};
  EXPECT_THROW(channel_.send({MessageKind::kLatentReply, 0, "A", "B", z}), PrivacyViolation);
  EXPECT_TRUE(channel_.records().empty());
  EXPECT_FALSE(channel_.has_pending(kServerId));
}

TEST_F(ChannelTest, FlattenedSampleIsRejected) {
  for (const ad::Tensor& img : {ds_.train[1].reference, ds_.test[0].input}) {
    ParamSet p;
    p.add("flat", ad::Tensor({256}, {img.data().begin(), img.data().end()}));
    EXPECT_THROW(channel_.send({MessageKind::kUpload, 0, "A", kServerId, p}), PrivacyViolation);
    std::vector<double> padded(512, 0.25);
    std::copy(img.data().begin(), img.data().end(), padded.begin() + 256);
    ParamSet q;
    q.add("hidden", ad::Tensor({512}, padded));
    EXPECT_THROW(channel_.send({MessageKind::kUpload, 0, "A", kServerId, q}), PrivacyViolation);
  }
}

TEST_F(ChannelTest, DeliversDecodedCopiesInOrder) {
  ParamSet p = scalars({1.0, 2.0});
  channel_.send({MessageKind::kDeploy, 0, kServerId, "A", p});
  channel_.send({MessageKind::kDeploy, 1, kServerId, "A", scalars({3.0})});
  const auto m0 = channel_.receive("A", kServerId);
  EXPECT_EQ(m0.round, 0u);
  const auto& got = std::get<ParamSet>(m0.payload);
  EXPECT_TRUE(got.bit_equal(p));
  EXPECT_FALSE(got.at("w").same_storage(p.at("w")));
  EXPECT_EQ(channel_.receive("A", kServerId).round, 1u);
  EXPECT_THROW(channel_.receive("A", kServerId), Error);
  EXPECT_EQ(channel_.count(MessageKind::kDeploy), 2u);
}

TEST_F(ChannelTest, ConcurrentSendersKeepPerSenderOrder) {
  std::vector<std::jthread> senders;
  for (int s = 0; s < 4; ++s) {
    senders.emplace_back([this, s] {
      for (std::uint32_t r = 0; r < 25; ++r) channel_.send({MessageKind::kUpload, r, "S" + std::to_string(s), kServerId, scalars({1.0 * s})});
    });
  }
  senders.clear();
  for (int s = 0; s < 4; ++s) {
    for (std::uint32_t r = 0; r < 25; ++r) EXPECT_EQ(channel_.receive(kServerId, "S" + std::to_string(s)).round, r);
  }
}

TEST(ClientIsolation, EachClientHoldsOnlyItsOwnDataset) {
  const auto cfg = small_config();
  const auto a = site("A", 4), b = site("B", 4);
  Client ca(0, a, cfg), cb(1, b, cfg);
  EXPECT_EQ(ca.dataset_handle(), &a);
  EXPECT_EQ(cb.dataset_handle(), &b);
  EXPECT_EQ(ca.id(), "A");
  // Only the client's own samples can feed its batches.
  EXPECT_TRUE(ad::bit_equal(ca.batch_inputs({0}), model::stack_images({a.train[0].input})));
  EXPECT_THROW(ca.batch_inputs({4}), std::out_of_range);
}

}  // namespace
}  // namespace fedrecon::fl
