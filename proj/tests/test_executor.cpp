#include <doctest.h>

#include "modnet/attributes.hpp"
#include "modnet/executor.hpp"
#include "test_util.hpp"

using namespace modnet;
using namespace modnet::testutil;

namespace {

LibraryConfig tiny(const std::string& name, int channels = 4) {
  auto cfg = LibraryConfig::parse_name(name);
  cfg.channels = channels;
  cfg.embedding_dim = channels;
  cfg.vector_hidden = 8;
  return cfg;
}

}  // namespace

TEST_CASE("parse_layout handles leaves, trees, and errors with positions") {
  auto reg = vqa::spatial_registry();
  auto leaf = parse_layout("green", reg);
  CHECK(leaf.node_count() == 1);
  CHECK(leaf.nodes[0].subtask == reg.index_of("green"));

  auto tree = parse_layout("left_of(green, cat_2)", reg);
  CHECK(tree.node_count() == 3);
  CHECK(tree.root == 2);
  CHECK(tree.nodes[2].subtask == reg.index_of("left_of"));
  CHECK(tree.nodes[0].subtask == reg.index_of("green"));
  CHECK(tree.nodes[1].subtask == reg.index_of("cat_2"));

  CHECK(parse_layout("  left_of ( green ,cat_2 ) ", reg).node_count() == 3);

  CHECK_THROWS_WITH_AS((void)parse_layout("purple", reg),
                       doctest::Contains("unknown sub-task 'purple'"), ParseError);
  CHECK_THROWS_WITH_AS((void)parse_layout("left_of(green, cat_2, red)", reg),
                       doctest::Contains("arity > 2"), ParseError);
  CHECK_THROWS_AS((void)parse_layout("left_of(green)", reg), ParseError);
  CHECK_THROWS_AS((void)parse_layout("left_of(green, above(red, blue))", reg), ParseError);
  CHECK_THROWS_AS((void)parse_layout("", reg), ParseError);
}

TEST_CASE("serialize(parse(x)) is canonical over random layouts") {
  auto reg = vqa::spatial_registry();
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    std::string text;
    if (rng.uniform() < 0.3) {
      text = reg.subtasks[static_cast<size_t>(rng.uniform_int(21))];
    } else {
      std::string rel = vqa::kSpatialRelations[static_cast<size_t>(rng.uniform_int(4))];
      std::string a = reg.subtasks[static_cast<size_t>(rng.uniform_int(21))];
      std::string b = reg.subtasks[static_cast<size_t>(rng.uniform_int(21))];
      // random cosmetic whitespace
      std::string pad = rng.uniform() < 0.5 ? " " : "";
      text = rel + pad + "(" + pad + a + pad + "," + pad + b + pad + ")";
    }
    auto layout = parse_layout(text, reg);
    auto canon = serialize_layout(layout, reg);
    auto again = serialize_layout(parse_layout(canon, reg), reg);
    CHECK(canon == again);
  }
}

TEST_CASE("execute: single node produces batchx2 logits") {
  auto reg = vqa::extraction_registry();
  auto lib = build_library<float>(tiny("all-all-all"), reg, 5);
  Rng rng(32);
  auto img = random_tensor<float>({3, 3, 28, 28}, rng);
  auto layout = parse_layout("green", reg);
  auto logits = execute<float>(layout, {img}, lib);
  CHECK(logits->shape == std::vector<int>{3, 2});
}

TEST_CASE("trace: single node has length 1; tree leaf outputs with shared module are identical") {
  auto reg = vqa::pair_comparison_registry();
  auto lib = build_library<float>(tiny("all-all-all"), reg, 6);
  Rng rng(33);

  auto single = parse_layout("color", reg);
  auto img = random_tensor<float>({2, 3, 28, 28}, rng);
  auto tr1 = trace<float>(single, {img}, lib);
  CHECK(tr1.node_outputs.size() == 1);

  // both leaves same sub-task, identical images, shared (all) intermediate
  auto pair_layout = parse_layout("same_color(color, color)", reg);
  auto tr2 = trace<float>(pair_layout, {img, img}, lib);
  REQUIRE(tr2.node_outputs.size() == 3);
  CHECK(tr2.node_outputs[0]->value == tr2.node_outputs[1]->value);
  CHECK(tr2.logits->value == execute<float>(pair_layout, {img, img}, lib)->value);
}

TEST_CASE("executed node count is layout-determined, library-invariant") {
  auto reg = vqa::spatial_registry();
  Rng rng(34);
  auto img = random_tensor<float>({2, 3, 64, 64}, rng);
  auto layout = parse_layout("left_of(green, cat_2)", reg);
  for (const char* name : {"all-all-all", "group-all-all", "all-group-group", "group-group-group",
                           "sub-task-sub-task-sub-task", "all-sub-task-all", "all-vector-all"}) {
    auto lib = build_library<float>(tiny(name), reg, 7);
    auto tr = trace<float>(layout, {img}, lib);
    CHECK(tr.node_outputs.size() == 3);
    CHECK(tr.logits->shape == std::vector<int>{2, 2});
  }
}

TEST_CASE("encoder is invoked once per distinct (leaf-group, image) pair") {
  auto reg = vqa::spatial_registry();
  Rng rng(35);
  auto img = random_tensor<float>({1, 3, 64, 64}, rng);
  auto layout = parse_layout("left_of(green, cat_2)", reg);  // groups: color, category

  auto all_lib = build_library<float>(tiny("all-all-all"), reg, 8);
  CHECK(trace<float>(layout, {img}, all_lib).encoder_invocations == 1);

  auto group_lib = build_library<float>(tiny("group-all-all"), reg, 8);
  CHECK(trace<float>(layout, {img}, group_lib).encoder_invocations == 2);

  auto same_group = parse_layout("left_of(green, red)", reg);
  CHECK(trace<float>(same_group, {img}, group_lib).encoder_invocations == 1);
}

TEST_CASE("gradients reach exactly the parameters the layout uses") {
  auto reg = vqa::spatial_registry();
  Rng rng(36);
  auto img = random_tensor<float>({2, 3, 64, 64}, rng);
  auto layout = parse_layout("left_of(green, cat_2)", reg);

  // width 8: wide enough that no branch collapses into an all-dead relu
  for (const char* name : {"group-all-all", "sub-task-sub-task-sub-task", "all-sub-task-all"}) {
    auto lib = build_library<float>(tiny(name, 8), reg, 9);
    auto logits = execute<float>(layout, {img}, lib, /*train=*/true);
    backward(softmax_cross_entropy(logits, std::vector<int>{0, 1}));

    std::vector<int> used_subtasks = {reg.index_of("green"), reg.index_of("cat_2"),
                                      reg.index_of("left_of")};
    auto used_enc = [&](int key) {
      for (int s : used_subtasks)
        if (lib.encoder_key(s) == key) return true;
      return false;
    };
    for (size_t k = 0; k < lib.encoders.size(); ++k) {
      bool any = false;
      for (auto& [n, t] : lib.encoders[k].items)
        for (float g : t->grad) any = any || g != 0.0f;
      // leaves encode through their own group's encoder
      bool expected = lib.encoder_key(reg.index_of("green")) == static_cast<int>(k) ||
                      lib.encoder_key(reg.index_of("cat_2")) == static_cast<int>(k);
      (void)used_enc;
      CHECK(any == expected);
    }
    for (size_t k = 0; k < lib.intermediates.size(); ++k) {
      bool any = false;
      for (auto& [n, t] : lib.intermediates[k].items)
        for (float g : t->grad) any = any || g != 0.0f;
      bool expected = false;
      for (int s : used_subtasks) expected = expected || lib.intermediate_key(s) == static_cast<int>(k);
      CHECK(any == expected);
    }
    for (size_t k = 0; k < lib.classifiers.size(); ++k) {
      bool any = false;
      for (auto& [n, t] : lib.classifiers[k].items)
        for (float g : t->grad) any = any || g != 0.0f;
      bool expected = lib.classifier_key(reg.index_of("left_of")) == static_cast<int>(k);
      CHECK(any == expected);
    }
    for (auto& t : lib.trainable_params()) t->zero_grad();
  }
}

TEST_CASE("leaf order fixes concat order; the double swap preserves leaf pairings") {
  auto reg = vqa::pair_comparison_registry();
  auto lib = build_library<float>(tiny("all-all-all"), reg, 10);
  Rng rng(37);
  auto img_a = random_tensor<float>({2, 3, 28, 28}, rng);
  auto img_b = random_tensor<float>({2, 3, 28, 28}, rng);

  // swapping both leaf sub-tasks and images keeps each (sub-task, image)
  // pairing intact: the leaf outputs reappear exactly, in swapped positions
  auto fwd = trace<float>(parse_layout("same_size(size, color)", reg), {img_a, img_b}, lib);
  auto swapped = trace<float>(parse_layout("same_size(color, size)", reg), {img_b, img_a}, lib);
  CHECK(fwd.node_outputs[0]->value == swapped.node_outputs[1]->value);
  CHECK(fwd.node_outputs[1]->value == swapped.node_outputs[0]->value);

  // when the two halves coincide (same sub-task, same image) the double swap
  // reproduces the concatenation bit-for-bit, hence identical logits
  auto sym = parse_layout("same_color(color, color)", reg);
  auto l1 = execute<float>(sym, {img_a, img_a}, lib);
  auto l2 = execute<float>(sym, {img_a, img_a}, lib);
  CHECK(l1->value == l2->value);

  // concat order matters: with distinct halves the swapped execution is a
  // different function
  auto asym1 = execute<float>(parse_layout("same_size(size, color)", reg), {img_a, img_b}, lib);
  auto asym2 = execute<float>(parse_layout("same_size(color, size)", reg), {img_b, img_a}, lib);
  CHECK(asym1->value != asym2->value);
}

TEST_CASE("execute is deterministic in eval mode") {
  auto reg = vqa::extraction_registry();
  auto lib = build_library<float>(tiny("group-all-all"), reg, 11);
  Rng rng(38);
  auto img = random_tensor<float>({4, 3, 28, 28}, rng);
  auto layout = parse_layout("dark", reg);
  auto a = execute<float>(layout, {img}, lib);
  auto b = execute<float>(layout, {img}, lib);
  CHECK(a->value == b->value);
}

TEST_CASE("execute validates image counts against the layout") {
  auto reg = vqa::extraction_registry();
  auto lib = build_library<float>(tiny("all-all-all"), reg, 12);
  Rng rng(39);
  auto img = random_tensor<float>({1, 3, 28, 28}, rng);
  auto layout = parse_layout("red", reg);
  CHECK_THROWS_AS((void)execute<float>(layout, {img, img}, lib), LayoutError);
  CHECK_THROWS_AS((void)execute<float>(layout, {}, lib), LayoutError);
}

TEST_CASE("execute_mixed restores example order and matches per-layout execution") {
  auto reg = vqa::extraction_registry();
  Rng rng(40);
  for (const char* name : {"all-all-all", "group-all-all", "sub-task-sub-task-sub-task"}) {
    auto lib = build_library<float>(tiny(name), reg, 13);
    std::vector<ProgramLayout> layouts = {parse_layout("green", reg), parse_layout("cat_2", reg),
                                          parse_layout("dark", reg)};
    std::vector<int> which = {0, 1, 0, 2, 1, 0};
    int B = static_cast<int>(which.size());
    auto imgs = random_tensor<float>({B, 3, 28, 28}, rng);
    auto mixed = execute_mixed<float>(layouts, which, {imgs}, lib, false);
    REQUIRE(mixed->shape == std::vector<int>{B, 2});

    for (int i = 0; i < B; ++i) {
      auto one = gather_batch(imgs, {i});
      auto solo = execute<float>(layouts[static_cast<size_t>(which[static_cast<size_t>(i)])], {one}, lib);
      for (int k = 0; k < 2; ++k)
        CHECK(mixed->value[static_cast<size_t>(i) * 2 + k] ==
              doctest::Approx(solo->value[static_cast<size_t>(k)]).epsilon(1e-5));
    }
  }
}

TEST_CASE("execute_mixed with batchnorm trains on the full batch") {
  auto reg = vqa::sqoop_registry({"a", "b", "c", "d"});
  auto lib = build_library<float>(tiny("all(bn)-sub-task-all(bn)"), reg, 14);
  Rng rng(41);
  std::vector<ProgramLayout> layouts = {parse_layout("left_of(a, b)", reg),
                                        parse_layout("above(c, d)", reg)};
  std::vector<int> which = {0, 1, 1, 0};
  auto imgs = random_tensor<float>({4, 3, 64, 64}, rng);
  auto logits = execute_mixed<float>(layouts, which, {imgs}, lib, /*train=*/true);
  CHECK(logits->shape == std::vector<int>{4, 2});
  backward(softmax_cross_entropy(logits, std::vector<int>{0, 1, 0, 1}));
  // running stats moved away from their init
  bool moved = false;
  for (float v : lib.encoders[0].at("bn0.running_mean")->value) moved = moved || v != 0.0f;
  CHECK(moved);

  // two-image pair task under mixed execution
  auto pair_reg = vqa::pair_comparison_registry();
  auto pair_lib = build_library<float>(tiny("all-all-all"), pair_reg, 15);
  std::vector<ProgramLayout> pls = {parse_layout("brighter(light, light)", pair_reg),
                                    parse_layout("same_color(color, color)", pair_reg)};
  auto im0 = random_tensor<float>({3, 3, 28, 28}, rng);
  auto im1 = random_tensor<float>({3, 3, 28, 28}, rng);
  auto pl = execute_mixed<float>(pls, {0, 1, 0}, {im0, im1}, pair_lib, false);
  CHECK(pl->shape == std::vector<int>{3, 2});
  auto one0 = gather_batch(im0, {1});
  auto one1 = gather_batch(im1, {1});
  auto solo = execute<float>(pls[1], {one0, one1}, pair_lib);
  CHECK(pl->value[2] == doctest::Approx(solo->value[0]).epsilon(1e-5));
}

TEST_CASE("vector architecture executes single nodes and trees") {
  auto reg = vqa::spatial_registry();
  auto lib = build_library<float>(tiny("all-vector-all"), reg, 16);
  Rng rng(42);
  auto img = random_tensor<float>({2, 3, 64, 64}, rng);

  auto single = execute<float>(parse_layout("red", reg), {img}, lib);
  CHECK(single->shape == std::vector<int>{2, 2});

  auto tree = trace<float>(parse_layout("above(red, cat_7)", reg), {img}, lib);
  CHECK(tree.node_outputs[0]->shape == std::vector<int>{2, lib.config.channels});
  CHECK(tree.logits->shape == std::vector<int>{2, 2});
}
