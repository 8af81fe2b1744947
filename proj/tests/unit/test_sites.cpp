#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "fedrecon/binary_io.hpp"
#include "fedrecon/error.hpp"
#include "fedrecon/sites.hpp"

namespace fedrecon::sites {
namespace {

constexpr std::size_t kSize = 32;

SiteProfile profile(const std::string& id) {
  for (const auto& p : default_profiles()) {
    if (p.site_id == id) return p;
  }
  throw std::logic_error("unknown site " + id);
}

double mean(const ad::Tensor& t) {
  return std::accumulate(t.data().begin(), t.data().end(), 0.0) / static_cast<double>(t.numel());
}

TEST(Sites, GenerationIsDeterministic) {
  const auto a = generate_site(profile("B"), 6, 3, kSize, {}, 1);
  const auto b = generate_site(profile("B"), 6, 3, kSize, {}, 4);
  EXPECT_TRUE(datasets_equal(a, b));
  auto other = profile("B");
  other.seed += 1;
  EXPECT_FALSE(datasets_equal(a, generate_site(other, 6, 3, kSize, {}, 1)));
}

TEST(Sites, SamplesAreNormalizedAndMasked) {
  const auto ds = generate_site(profile("C"), 4, 2, kSize, {4.0, 0.08}, 1);
  ASSERT_EQ(ds.train.size(), 4u);
  ASSERT_EQ(ds.test.size(), 2u);
  for (const auto& s : ds.train) {
    EXPECT_EQ(s.site_id, "C");
    EXPECT_EQ(s.reference.shape(), (ad::Shape{kSize, kSize}));
    EXPECT_EQ(*std::max_element(s.reference.data().begin(), s.reference.data().end()), 1.0);
    EXPECT_GE(*std::min_element(s.reference.data().begin(), s.reference.data().end()), 0.0);
    EXPECT_EQ(s.mask.kept_columns.size(), kSize / 4);
    EXPECT_NO_THROW(kspace::validate_mask(s.mask));
    EXPECT_FALSE(ad::bit_equal(s.input, s.reference));
  }
}

TEST(Sites, NeutralSiteProducesPlainPhantoms) {
  SiteProfile neutral{"N", 1.0, 0.0, 0.0, 1.0, 0.0, 5};
  const auto ref = make_reference(neutral, kSize, 0, 0);
  // Piecewise-constant: few distinct levels.
  std::vector<double> levels(ref.data().begin(), ref.data().end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  EXPECT_LE(levels.size(), 64u);
  EXPECT_EQ(ref.data()[0], 0.0);  // corner lies outside the head
}

TEST(Sites, ContrastGammaDarkensImages) {
  double previous = 2.0;
  for (double gamma : {0.5, 1.0, 2.0, 3.0}) {
    SiteProfile p{"G", gamma, 0.0, 0.0, 1.0, 0.0, 11};
    double total = 0.0;
    for (std::size_t i = 0; i < 100; ++i) total += mean(make_reference(p, kSize, 0, i));
    EXPECT_LT(total / 100.0, previous) << "gamma " << gamma;
    previous = total / 100.0;
  }
}

TEST(Sites, SmallSiteGetsTenthOfSamples) {
  EXPECT_EQ(default_train_count("C", 200), 20u);
  EXPECT_EQ(default_train_count("A", 200), 200u);
  EXPECT_EQ(default_train_count("C", 5), 1u);
  ASSERT_EQ(default_profiles().size(), 4u);
}

TEST(Sites, InvalidProfilesAreRejected) {
  auto p = profile("A");
  p.contrast_gamma = 0.0;
  EXPECT_THROW(make_reference(p, kSize, 0, 0), Error);
  p = profile("A");
  p.lesion_probability = 1.5;
  EXPECT_THROW(generate_site(p, 1, 1, kSize, {}), Error);
  EXPECT_THROW(generate_site(profile("A"), 1, 1, 24, {}), Error);
  EXPECT_THROW(generate_site(profile("A"), 0, 1, kSize, {}), Error);
}

class SitesFile : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("fedrecon_sites_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(SitesFile, SaveLoadRoundTripIsExact) {
  const auto ds = generate_site(profile("D"), 5, 3, kSize, {4.0, 0.08});
  const auto path = dataset_path(dir_, "D");
  save_dataset(ds, path);
  EXPECT_TRUE(datasets_equal(ds, load_dataset(path)));
}

TEST_F(SitesFile, CorruptFilesAreRejected) {
  const auto ds = generate_site(profile("A"), 2, 1, kSize, {});
  auto bytes = encode_dataset(ds);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_dataset(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_dataset(trailing), FormatError);
}

TEST_F(SitesFile, EmptyTrainSplitIsRejected) {
  auto ds = generate_site(profile("A"), 1, 1, kSize, {});
  ds.train.clear();
  EXPECT_THROW(save_dataset(ds, dataset_path(dir_, "A")), Error);
}

TEST(Sites, DomainShiftIsMeasurable) {
  std::vector<std::vector<double>> hists;
  for (const auto& p : default_profiles()) {
    const auto ds = generate_site(p, 50, 1, kSize, {}, 4);
    hists.push_back(intensity_histogram(ds.train));
    const auto again = generate_site(p, 50, 1, kSize, {}, 1);
    EXPECT_LT(jensen_shannon(hists.back(), intensity_histogram(again.train)), 0.001) << p.site_id;
  }
  for (std::size_t i = 0; i < hists.size(); ++i) {
    for (std::size_t j = i + 1; j < hists.size(); ++j) {
      EXPECT_GT(jensen_shannon(hists[i], hists[j]), 0.01) << i << " vs " << j;
    }
  }
}

TEST(Sites, JensenShannonProperties) {
  const std::vector<double> p{0.5, 0.5, 0.0}, q{0.0, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(jensen_shannon(p, p), 0.0);
  EXPECT_NEAR(jensen_shannon(p, q), jensen_shannon(q, p), 1e-15);
  // Disjoint supports reach ln 2.
  EXPECT_NEAR(jensen_shannon(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0}), std::log(2.0), 1e-15);
}

}  // namespace
}  // namespace fedrecon::sites
