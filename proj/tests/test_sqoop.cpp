#include <doctest.h>

#include <map>
#include <set>

#include "modnet/dataset.hpp"
#include "modnet/layout.hpp"

using namespace modnet;
using namespace modnet::vqa;

namespace {

std::vector<Example> collect(const std::function<void(const ExampleSink&)>& gen) {
  std::vector<Example> out;
  gen([&](const Example& e) { out.push_back(e); });
  return out;
}

}  // namespace

TEST_CASE("sqoop spec: 36 objects, perfect matching, validation") {
  auto spec = SqoopSpec::make(36, 5, 1);
  CHECK(spec.objects.size() == 36);
  CHECK(spec.objects[0] == "a");
  CHECK(spec.objects[25] == "z");
  CHECK(spec.objects[26] == "d0");
  CHECK(spec.pairing.size() == 18);
  spec.validate();

  auto small = SqoopSpec::make(12, 2, 2);
  CHECK(small.pairing.size() == 6);

  CHECK_THROWS_AS((void)SqoopSpec::make(13, 2, 1), ConfigError);
  auto broken = small;
  broken.pairing[0] = broken.pairing[1];
  CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("sqoop question lists: training pairs allowed, ood pairs held out, disjoint") {
  auto spec = SqoopSpec::make(12, 2, 3);
  auto train_qs = sqoop_questions(spec, false, 0, 3);
  CHECK(train_qs.size() == 12 * 4);  // both directions of 6 matched pairs x 4 relations
  for (auto& q : train_qs) CHECK(spec.pair_allowed(q.x, q.y));

  auto ood_qs = sqoop_questions(spec, true, 12, 3);
  CHECK(ood_qs.size() == 12 * 4);
  std::set<std::pair<int, int>> train_pairs, ood_pairs;
  for (auto& q : train_qs) train_pairs.insert({q.x, q.y});
  for (auto& q : ood_qs) {
    CHECK_FALSE(spec.pair_allowed(q.x, q.y));
    ood_pairs.insert({q.x, q.y});
  }
  for (auto& p : ood_pairs) CHECK(train_pairs.count(p) == 0);
}

TEST_CASE("two-object sqoop: images contain exactly the question pair; co-occurrence is the matching") {
  auto spec = SqoopSpec::make(12, 2, 5);
  SqoopOptions opt{.n = 24 * 4 * 2, .ood = false, .max_ood_pairs = 0, .seed = 7};
  auto examples = collect([&](const ExampleSink& sink) { gen_sqoop(spec, opt, sink); });
  REQUIRE(examples.size() == static_cast<size_t>(opt.n));

  auto reg = sqoop_registry(spec.objects);
  std::set<std::pair<int, int>> cooccur;
  for (auto& e : examples) {
    CHECK(e.centers.size() == 2);  // exactly the queried objects
    auto layout = parse_layout(e.layout, reg);
    REQUIRE(layout.node_count() == 3);
    int x = layout.nodes[0].subtask, y = layout.nodes[1].subtask;
    cooccur.insert({std::min(x, y), std::max(x, y)});
  }
  // the training co-occurrence graph is exactly the 6-edge matching
  std::set<std::pair<int, int>> matching(spec.pairing.begin(), spec.pairing.end());
  CHECK(cooccur == matching);
}

TEST_CASE("five-object sqoop: distractors present, geometry matches labels, balance exact") {
  auto spec = SqoopSpec::make(12, 5, 9);
  SqoopOptions opt{.n = 24 * 4 * 2, .ood = false, .max_ood_pairs = 0, .seed = 11};
  auto examples = collect([&](const ExampleSink& sink) { gen_sqoop(spec, opt, sink); });

  std::map<std::string, std::pair<int, int>> balance;
  auto reg = sqoop_registry(spec.objects);
  for (auto& e : examples) {
    CHECK(e.centers.size() == 5);
    CHECK(e.image_size == 64);
    auto layout = parse_layout(e.layout, reg);
    std::string rel = reg.subtasks[static_cast<size_t>(layout.nodes[2].subtask)];
    auto [cx1, cy1] = e.centers[0];
    auto [cx2, cy2] = e.centers[1];
    bool holds;
    if (rel == "left_of") holds = cx1 < cx2;
    else if (rel == "right_of") holds = cx1 > cx2;
    else if (rel == "above") holds = cy1 < cy2;
    else holds = cy1 > cy2;
    CHECK(holds == static_cast<bool>(e.label));
    auto& [yes, no] = balance[e.layout];
    (e.label ? yes : no) += 1;
  }
  for (auto& [q, yn] : balance) CHECK(yn.first == yn.second);
}

TEST_CASE("ood sqoop questions never appear among training questions") {
  auto spec = SqoopSpec::make(12, 5, 13);
  SqoopOptions train_opt{.n = 96 * 2, .ood = false, .max_ood_pairs = 0, .seed = 17};
  SqoopOptions ood_opt{.n = 48 * 2, .ood = true, .max_ood_pairs = 12, .seed = 17};
  auto train_examples = collect([&](const ExampleSink& sink) { gen_sqoop(spec, train_opt, sink); });
  auto ood_examples = collect([&](const ExampleSink& sink) { gen_sqoop(spec, ood_opt, sink); });
  std::set<std::string> train_questions, ood_questions;
  for (auto& e : train_examples) train_questions.insert(e.layout);
  for (auto& e : ood_examples) ood_questions.insert(e.layout);
  for (auto& q : ood_questions) CHECK(train_questions.count(q) == 0);
}

TEST_CASE("sqoop generation is deterministic per seed") {
  auto spec = SqoopSpec::make(12, 2, 19);
  SqoopOptions opt{.n = 96 * 2, .ood = false, .max_ood_pairs = 0, .seed = 23};
  auto a = collect([&](const ExampleSink& sink) { gen_sqoop(spec, opt, sink); });
  auto b = collect([&](const ExampleSink& sink) { gen_sqoop(spec, opt, sink); });
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].images == b[i].images);
    CHECK(a[i].layout == b[i].layout);
  }
}
