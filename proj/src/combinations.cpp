#include "modnet/combinations.hpp"

#include <algorithm>

#include "modnet/common.hpp"

namespace modnet::vqa {

namespace {

bool contains(const std::vector<Combination>& list, const Combination& c) {
  return std::find(list.begin(), list.end(), c) != list.end();
}

// One sampling round: uniform candidates are appended unless all four of
// their attribute instances were already taken this round, or the candidate
// already exists in one of the exclusion lists. The round ends when every
// instance has been taken.
void sampling_round(Rng& rng, std::vector<Combination>& out,
                    const std::vector<const std::vector<Combination>*>& exclusion) {
  std::array<bool, static_cast<size_t>(kNumInstances)> taken{};
  int taken_count = 0;
  int64_t draws = 0;
  const int64_t max_draws = 1'000'000;
  while (taken_count < kNumInstances) {
    if (++draws > max_draws) {
      auto cov = instance_coverage(out);
      std::string missing;
      for (int i = 0; i < kNumInstances; ++i)
        if (!taken[static_cast<size_t>(i)]) missing += (missing.empty() ? "" : ", ") + instance_name(i);
      throw GenerationError("combination sampling stalled after " + std::to_string(max_draws) +
                            " draws; instances still missing this round: " + missing);
    }
    Combination cand{rng.uniform_int(kNumCategories), rng.uniform_int(kNumColors),
                     rng.uniform_int(kNumLights), rng.uniform_int(kNumSizes)};
    bool exists = false;
    for (auto* list : exclusion) exists = exists || contains(*list, cand);
    bool reject = true;
    for (int inst : cand.instances()) reject = reject && taken[static_cast<size_t>(inst)];
    if (!reject && !exists) {
      out.push_back(cand);
      for (int inst : cand.instances()) {
        if (!taken[static_cast<size_t>(inst)]) ++taken_count;
        taken[static_cast<size_t>(inst)] = true;
      }
    }
  }
}

}  // namespace

bool CombinationSplit::train_contains(const Combination& c) const { return contains(train, c); }
bool CombinationSplit::test_contains(const Combination& c) const { return contains(test, c); }

std::vector<int> instance_coverage(const std::vector<Combination>& combos) {
  std::vector<int> cov(static_cast<size_t>(kNumInstances), 0);
  for (const auto& c : combos)
    for (int inst : c.instances()) ++cov[static_cast<size_t>(inst)];
  return cov;
}

std::vector<CombinationSplit> build_data_run(const std::vector<int>& r_values, int r_test, uint64_t seed) {
  if (r_values.empty()) throw GenerationError("data run: no r values");
  for (size_t i = 0; i < r_values.size(); ++i) {
    if (r_values[i] < 1) throw GenerationError("data run: r values must be >= 1");
    if (i > 0 && r_values[i] <= r_values[i - 1])
      throw GenerationError("data run: r values must be strictly increasing");
  }
  if (r_test < 1) throw GenerationError("data run: r_test must be >= 1");

  Rng rng(mix_seed(seed, 0xc0b1ull));

  std::vector<Combination> test;
  for (int round = 0; round < r_test; ++round) sampling_round(rng, test, {&test});

  std::vector<CombinationSplit> splits;
  std::vector<Combination> train;
  size_t next = 0;
  for (int round = 1; round <= r_values.back(); ++round) {
    sampling_round(rng, train, {&test, &train});
    if (next < r_values.size() && r_values[next] == round) {
      CombinationSplit s;
      s.train = train;
      s.test = test;
      s.r_train = round;
      s.r_test = r_test;
      s.seed = seed;
      splits.push_back(std::move(s));
      ++next;
    }
  }
  return splits;
}

CombinationSplit generate_combinations(int r_train, int r_test, uint64_t seed) {
  return build_data_run({r_train}, r_test, seed).back();
}

}  // namespace modnet::vqa
