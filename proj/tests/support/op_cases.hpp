#pragma once

#include <functional>
#include <random>
#include <vector>

#include "fedrecon/ops.hpp"
#include "fedrecon/param_set.hpp"
#include "gradcheck.hpp"

namespace fedrecon::testing {

// One finite-difference case per operator and seed.
struct OpCase {
  const char* name;
  std::function<void(std::mt19937_64&, std::vector<ad::Tensor>&, std::function<ad::Tensor()>&)> build;
};

inline std::vector<OpCase> op_cases() {
  auto dim = [](std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  return {
      {"conv2d",
       [=](auto& rng, auto& leaves, auto& fn) {
         const std::size_t c = dim(rng, 1, 2), o = dim(rng, 1, 2), h = dim(rng, 3, 5), w = dim(rng, 3, 5);
         const std::size_t k = dim(rng, 0, 1) == 0 ? 1 : 3, stride = dim(rng, 1, 2), pad = k == 3 ? dim(rng, 0, 1) : 0;
         leaves = {random_tensor({1, c, h, w}, rng), random_tensor({o, c, k, k}, rng), random_tensor({o}, rng)};
         fn = [=] { return project(ad::conv2d(leaves[0], leaves[1], leaves[2], stride, pad), 1); };
       }},
      {"upsample_nearest2",
       [=](auto& rng, auto& leaves, auto& fn) {
         leaves = {random_tensor({1, dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3)}, rng)};
         fn = [=] { return project(ad::upsample_nearest2(leaves[0]), 2); };
       }},
      {"maxpool2",
       [=](auto& rng, auto& leaves, auto& fn) {
         // Distinct values spaced far beyond the step, shuffled.
         const ad::Shape s{1, dim(rng, 1, 2), 2 * dim(rng, 1, 3), 2 * dim(rng, 1, 3)};
         std::vector<double> v(ad::shape_numel(s));
         for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i) - 1.0;
         std::shuffle(v.begin(), v.end(), rng);
         leaves = {ad::Tensor(s, v, true)};
         fn = [=] { return project(ad::maxpool2(leaves[0]), 3); };
       }},
      {"relu",
       [=](auto& rng, auto& leaves, auto& fn) {
         leaves = {random_tensor({dim(rng, 1, 8), dim(rng, 1, 8)}, rng)};
         fn = [=] { return project(ad::relu(leaves[0]), 4); };
       }},
      {"leaky_relu",
       [=](auto& rng, auto& leaves, auto& fn) {
         leaves = {random_tensor({dim(rng, 1, 8), dim(rng, 1, 8)}, rng)};
         fn = [=] { return project(ad::leaky_relu(leaves[0], 0.2), 5); };
       }},
      {"sigmoid",
       [=](auto& rng, auto& leaves, auto& fn) {
         leaves = {random_tensor({dim(rng, 1, 8), dim(rng, 1, 8)}, rng, -4, 4)};
         fn = [=] { return project(ad::sigmoid(leaves[0]), 6); };
       }},
      {"linear",
       [=](auto& rng, auto& leaves, auto& fn) {
         const std::size_t n = dim(rng, 1, 4), i = dim(rng, 1, 4), o = dim(rng, 1, 4);
         leaves = {random_tensor({n, i}, rng), random_tensor({o, i}, rng), random_tensor({o}, rng)};
         fn = [=] { return project(ad::linear(leaves[0], leaves[1], leaves[2]), 7); };
       }},
      {"concat_channels",
       [=](auto& rng, auto& leaves, auto& fn) {
         const std::size_t h = dim(rng, 1, 3), w = dim(rng, 1, 3);
         leaves = {random_tensor({2, dim(rng, 1, 2), h, w}, rng), random_tensor({2, dim(rng, 1, 2), h, w}, rng)};
         fn = [=] { return project(ad::concat_channels(leaves[0], leaves[1]), 8); };
       }},
      {"global_avg_pool",
       [=](auto& rng, auto& leaves, auto& fn) {
         leaves = {random_tensor({dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4)}, rng)};
         fn = [=] { return project(ad::global_avg_pool(leaves[0]), 9); };
       }},
      {"l1_loss",
       [=](auto& rng, auto& leaves, auto& fn) {
         const ad::Shape s{dim(rng, 1, 8), dim(rng, 1, 8)};
         leaves = {random_tensor(s, rng, 0.1, 1.0), random_tensor(s, rng, -1.0, -0.1)};
         fn = [=] { return ad::l1_loss(leaves[0], leaves[1]); };
       }},
      {"bce_terms",
       [=](auto& rng, auto& leaves, auto& fn) {
         leaves = {random_tensor({dim(rng, 1, 8)}, rng, 0.05, 0.95)};
         const double label = static_cast<double>(dim(rng, 0, 1));
         fn = [=] { return project(ad::bce_terms(leaves[0], label), 10); };
       }},
      {"add_sub_mul",
       [=](auto& rng, auto& leaves, auto& fn) {
         const ad::Shape s{dim(rng, 1, 6), dim(rng, 1, 6)};
         leaves = {random_tensor(s, rng), random_tensor(s, rng)};
         fn = [=] {
           return project(ad::mul(ad::add(leaves[0], leaves[1]), ad::sub(leaves[0], ad::scale(leaves[1], 0.5))), 11);
         };
       }},
      {"sum_mean_reshape",
       [=](auto& rng, auto& leaves, auto& fn) {
         const std::size_t a = dim(rng, 1, 6), b = dim(rng, 1, 6);
         leaves = {random_tensor({a, b}, rng)};
         fn = [=] {
           const ad::Tensor r = ad::reshape(leaves[0], {b, a});
           return ad::add(ad::mean(ad::mul(r, r)), ad::scale(ad::sum(r), 0.3));
         };
       }},
  };
}

// Zero biases put every ReLU preactivation of a constant region on the kink.
inline void randomize_biases(const ParamSet& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (auto [name, t] : p) {
    if (name.ends_with(".bias")) {
      for (auto& v : t.mutable_data()) v = u(rng);
    }
  }
}

}  // namespace fedrecon::testing
