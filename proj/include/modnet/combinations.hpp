#pragma once

#include <cstdint>
#include <vector>

#include "modnet/attributes.hpp"

namespace modnet::vqa {

// Disjoint train/test attribute-combination sets. Every one of the 21
// attribute instances appears in at least r_train train combinations and
// r_test test combinations.
struct CombinationSplit {
  std::vector<Combination> train;
  std::vector<Combination> test;
  int r_train = 0;
  int r_test = 0;
  uint64_t seed = 0;

  bool train_contains(const Combination& c) const;
  bool test_contains(const Combination& c) const;
};

// Stochastic round-based sampler. Test combinations are drawn first; train
// rounds then continue the same stream, rejecting duplicates across both
// sets, so train sets are nested across increasing r for a fixed seed.
CombinationSplit generate_combinations(int r_train, int r_test, uint64_t seed);

// One split per r value (strictly increasing), sharing a single test set:
// split_i.train is a prefix of split_j.train for i < j.
std::vector<CombinationSplit> build_data_run(const std::vector<int>& r_values, int r_test, uint64_t seed);

// occurrences of each attribute instance in a combination list
std::vector<int> instance_coverage(const std::vector<Combination>& combos);

}  // namespace modnet::vqa
