#include <doctest.h>

#include <set>

#include "modnet/attributes.hpp"
#include "modnet/gradcheck.hpp"
#include "modnet/library.hpp"
#include "test_util.hpp"

using namespace modnet;
using namespace modnet::testutil;

namespace {

SubtaskRegistry single_group_registry(int n) {
  SubtaskRegistry reg;
  reg.groups = {"everything"};
  for (int i = 0; i < n; ++i) {
    reg.subtasks.push_back("task_" + std::to_string(i));
    reg.group_map.push_back(0);
  }
  return reg;
}

LibraryConfig small_config(Modularity enc, Modularity inter, Modularity cls, IntermediateArch arch,
                           int channels = 4) {
  LibraryConfig cfg;
  cfg.encoder = enc;
  cfg.intermediate = inter;
  cfg.classifier = cls;
  cfg.arch = arch;
  cfg.channels = channels;
  cfg.embedding_dim = channels;
  cfg.vector_hidden = 8;
  return cfg;
}

}  // namespace

TEST_CASE("library names parse and round-trip") {
  for (const char* name : {"all-all-all", "group-all-all", "all-group-group", "group-group-group",
                           "sub-task-sub-task-sub-task", "all(bn)-all-all(bn)", "all(bn)-sub-task-all(bn)",
                           "sub-task-sub-task(find)-sub-task", "all-vector-all", "all-sub-task-all"}) {
    auto cfg = LibraryConfig::parse_name(name);
    CHECK(cfg.name() == name);
  }
  CHECK_THROWS_AS(LibraryConfig::parse_name("mega-all-all"), ConfigError);
  CHECK_THROWS_AS(LibraryConfig::parse_name("all(bn)-all-all"), ConfigError);
  CHECK_THROWS_AS(LibraryConfig::parse_name("all-all"), ConfigError);
}

TEST_CASE("config validation rejects impossible settings") {
  auto reg = vqa::extraction_registry();
  auto cfg = small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Residual);
  CHECK_THROWS_AS((void)build_library<float>(cfg, reg, 1), ConfigError);

  auto cfg2 = small_config(Modularity::Group, Modularity::All, Modularity::All, IntermediateArch::Find);
  cfg2.use_batchnorm = true;  // bn needs 'all' encoder and classifier
  CHECK_THROWS_AS((void)build_library<float>(cfg2, reg, 1), ConfigError);

  auto cfg3 = small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find);
  cfg3.embedding_dim = 8;  // != channels
  CHECK_THROWS_AS((void)build_library<float>(cfg3, reg, 1), ConfigError);

  SubtaskRegistry broken = vqa::extraction_registry();
  broken.group_map.pop_back();
  auto cfg4 = small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find);
  CHECK_THROWS_AS((void)build_library<float>(cfg4, broken, 1), ConfigError);
}

TEST_CASE("module counts follow the modularity contract") {
  auto reg = vqa::extraction_registry();  // 21 sub-tasks, 4 groups

  auto gaa = build_library<float>(
      small_config(Modularity::Group, Modularity::All, Modularity::All, IntermediateArch::Find), reg, 7);
  CHECK(gaa.encoders.size() == 4);
  CHECK(gaa.intermediates.size() == 1);
  CHECK(gaa.classifiers.size() == 1);

  auto aaa = build_library<float>(
      small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find), reg, 7);
  CHECK(aaa.encoders.size() == 1);
  CHECK(aaa.intermediates.size() == 1);
  CHECK(aaa.classifiers.size() == 1);
  CHECK(aaa.embedding != nullptr);

  auto sss = build_library<float>(
      small_config(Modularity::SubTask, Modularity::SubTask, Modularity::SubTask, IntermediateArch::Residual),
      reg, 7);
  CHECK(sss.encoders.size() == 21);
  CHECK(sss.intermediates.size() == 21);
  CHECK(sss.classifiers.size() == 21);
  CHECK(sss.embedding == nullptr);

  // no parameter tensor shared between any two param sets
  std::set<const void*> seen;
  for (auto& [name, t] : sss.named_params()) {
    CHECK(seen.insert(t.get()).second);
  }

  auto counts = count_params(sss);
  CHECK(counts.at("encoder").num_modules == 21);
  CHECK(counts.at("intermediate").num_modules == 21);
  CHECK(counts.at("classifier").num_modules == 21);
}

TEST_CASE("trainable scalar counts match the layer-shape arithmetic at width 64") {
  auto reg = vqa::extraction_registry();
  auto cfg = small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find, 64);
  auto lib = build_library<float>(cfg, reg, 3);
  auto counts = count_params(lib);
  // six 3x3 convs, no biases: 64*3*9 + 5 * 64*64*9
  CHECK(counts.at("encoder").num_scalars == 1728 + 5 * 36864);
  // find module: (64 <- 128, 3x3) + bias, (64 <- 64, 3x3) + bias
  CHECK(counts.at("intermediate").num_scalars == (73728 + 64) + (36864 + 64));
  // classifier: 1x1 conv 64->512 (+bias), 512->1024 (+bias), 1024->2 (+bias)
  CHECK(counts.at("classifier").num_scalars == (32768 + 512) + (524288 + 1024) + (2048 + 2));
  CHECK(counts.at("embedding").num_scalars == 21 * 64);

  auto bn_cfg = cfg;
  bn_cfg.use_batchnorm = true;
  auto bn_lib = build_library<float>(bn_cfg, reg, 3);
  auto bn_counts = count_params(bn_lib);
  CHECK(bn_counts.at("encoder").num_scalars == 1728 + 5 * 36864 + 6 * 128);
  CHECK(bn_counts.at("classifier").num_scalars ==
        (32768 + 512) + (524288 + 1024) + (2048 + 2) + 1024 + 2048);
}

TEST_CASE("encode_image output sizes and null-image determinism") {
  auto reg = vqa::extraction_registry();
  auto lib = build_library<float>(
      small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find, 6), reg, 11);

  Rng rng(1);
  auto img28 = random_tensor<float>({2, 3, 28, 28}, rng);
  auto f28 = encode_image(lib, img28, 0, false);
  CHECK(f28->shape == std::vector<int>{2, 6, 7, 7});

  auto img64 = random_tensor<float>({1, 3, 64, 64}, rng);
  auto f64 = encode_image(lib, img64, 0, false);
  CHECK(f64->shape == std::vector<int>{1, 6, 16, 16});

  auto null1 = encode_image(lib, Tensor<float>::create({1, 3, 28, 28}), 0, false);
  auto null2 = encode_image(lib, Tensor<float>::create({1, 3, 28, 28}), 0, false);
  CHECK(null1->value == null2->value);

  CHECK_THROWS_AS((void)encode_image(lib, random_tensor<float>({1, 3, 32, 32}, rng), 0, false), ShapeError);
  CHECK_THROWS_AS((void)encode_image(lib, img28, 5, false), ConfigError);
}

TEST_CASE("find_forward equals the unmodulated two-conv path when gamma is one") {
  auto reg = single_group_registry(3);
  auto lib = build_library<float>(
      small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find), reg, 5);
  int C = lib.config.channels;
  for (int i = 0; i < C; ++i) lib.embedding->value[static_cast<size_t>(C) + i] = 1.0f;  // row 1 := ones

  Rng rng(4);
  auto sx = random_tensor<float>({2, C, 6, 6}, rng);
  auto sy = random_tensor<float>({2, C, 6, 6}, rng);
  auto out = find_forward(lib, 1, sx, sy);

  const auto& ps = lib.intermediates[0];
  auto plain = relu(conv2d(relu(conv2d(concat_channels(sx, sy), ps.at("conv2.weight"), ps.at("conv2.bias"),
                                       1, 1)),
                           ps.at("conv1.weight"), ps.at("conv1.bias"), 1, 1));
  CHECK(max_abs_diff(out->value, plain->value) < 1e-6);
  CHECK(out->shape == plain->shape);
}

TEST_CASE("find_forward is a pure function of the embedding row") {
  auto reg = single_group_registry(4);
  auto lib = build_library<float>(
      small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find), reg, 5);
  int C = lib.config.channels;
  for (int i = 0; i < C; ++i)
    lib.embedding->value[static_cast<size_t>(2) * C + i] = lib.embedding->value[static_cast<size_t>(3) * C + i];

  Rng rng(5);
  auto sx = random_tensor<float>({1, C, 5, 5}, rng);
  auto sy = random_tensor<float>({1, C, 5, 5}, rng);
  CHECK(find_forward(lib, 2, sx, sy)->value == find_forward(lib, 3, sx, sy)->value);
}

TEST_CASE("find_forward matches a manually composed oracle") {
  auto reg = single_group_registry(3);
  auto lib = build_library<float>(
      small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find), reg, 77);
  int C = lib.config.channels;
  Rng rng(6);
  auto sx = random_tensor<float>({2, C, 6, 6}, rng);
  auto sy = random_tensor<float>({2, C, 6, 6}, rng);
  int k = 2;
  auto out = find_forward(lib, k, sx, sy);

  const auto& ps = lib.intermediates[0];
  std::vector<float> row(lib.embedding->value.begin() + static_cast<size_t>(k) * C,
                         lib.embedding->value.begin() + static_cast<size_t>(k + 1) * C);
  auto gamma = Tensor<float>::from({C}, row);
  auto h = relu(conv2d(concat_channels(sx, sy), ps.at("conv2.weight"), ps.at("conv2.bias"), 1, 1));
  auto oracle = relu(conv2d(modulate(h, gamma), ps.at("conv1.weight"), ps.at("conv1.bias"), 1, 1));
  CHECK(out->value == oracle->value);
}

TEST_CASE("residual_forward: zeroed branch is a skip-connection identity") {
  auto reg = single_group_registry(3);
  auto lib = build_library<float>(
      small_config(Modularity::All, Modularity::SubTask, Modularity::All, IntermediateArch::Residual), reg,
      9);
  int C = lib.config.channels;
  auto& ps = lib.intermediates[1];
  for (const char* name : {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"})
    for (auto& v : ps.at(name)->value) v = 0.0f;

  Rng rng(7);
  auto sx = random_tensor<float>({2, C, 5, 5}, rng);
  auto sy = random_tensor<float>({2, C, 5, 5}, rng);
  auto out = residual_forward(lib, 1, sx, sy);
  auto stilde = relu(conv2d(concat_channels(sx, sy), ps.at("conv3.weight"), ps.at("conv3.bias"), 1, 1));
  CHECK(out->value == stilde->value);
}

TEST_CASE("residual_forward matches the manual composition and masks unused sub-tasks") {
  auto reg = single_group_registry(3);
  auto lib = build_library<float>(
      small_config(Modularity::All, Modularity::SubTask, Modularity::All, IntermediateArch::Residual), reg,
      10);
  int C = lib.config.channels;
  Rng rng(8);
  auto sx = random_tensor<float>({2, C, 5, 5}, rng);
  auto sy = random_tensor<float>({2, C, 5, 5}, rng);

  auto out = residual_forward(lib, 2, sx, sy);
  const auto& ps = lib.intermediates[2];
  auto st = relu(conv2d(concat_channels(sx, sy), ps.at("conv3.weight"), ps.at("conv3.bias"), 1, 1));
  auto inner = relu(conv2d(st, ps.at("conv2.weight"), ps.at("conv2.bias"), 1, 1));
  auto oracle = relu(add(st, conv2d(inner, ps.at("conv1.weight"), ps.at("conv1.bias"), 1, 1)));
  CHECK(out->value == oracle->value);

  backward(sum(out));
  for (auto& [name, t] : lib.intermediates[1].items)
    for (float g : t->grad) CHECK(g == 0.0f);
  bool any_nonzero = false;
  for (auto& [name, t] : lib.intermediates[2].items)
    for (float g : t->grad) any_nonzero = any_nonzero || g != 0.0f;
  CHECK(any_nonzero);
}

TEST_CASE("group_forward with one global group is bit-identical to find_forward") {
  auto reg = single_group_registry(5);
  uint64_t seed = 1234;
  auto find_lib = build_library<float>(
      small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find), reg, seed);
  auto group_lib = build_library<float>(
      small_config(Modularity::All, Modularity::Group, Modularity::All, IntermediateArch::GroupFind), reg,
      seed);

  int C = find_lib.config.channels;
  Rng rng(9);
  auto sx = random_tensor<float>({2, C, 6, 6}, rng);
  auto sy = random_tensor<float>({2, C, 6, 6}, rng);
  for (int k : {0, 3}) {
    auto a = find_forward(find_lib, k, sx, sy);
    auto b = group_forward(group_lib, k, sx, sy);
    CHECK(a->value == b->value);
  }
}

TEST_CASE("group_forward separates weights by group and masks gradients") {
  SubtaskRegistry reg;
  reg.groups = {"g0", "g1"};
  reg.subtasks = {"t0", "t1", "t2"};
  reg.group_map = {0, 0, 1};
  auto lib = build_library<float>(
      small_config(Modularity::All, Modularity::Group, Modularity::All, IntermediateArch::GroupFind), reg,
      21);
  CHECK(lib.intermediates.size() == 2);

  int C = lib.config.channels;
  Rng rng(10);
  auto sx = random_tensor<float>({1, C, 5, 5}, rng);
  auto sy = random_tensor<float>({1, C, 5, 5}, rng);

  auto out_same_group = group_forward(lib, 0, sx, sy);
  auto out_other_group = group_forward(lib, 2, sx, sy);
  CHECK(out_same_group->value != out_other_group->value);

  backward(sum(out_same_group));
  for (auto& [name, t] : lib.intermediates[1].items)
    for (float g : t->grad) CHECK(g == 0.0f);
}

TEST_CASE("sub-task(find) modularity allocates singleton film modules") {
  auto reg = vqa::extraction_registry();
  auto lib = build_library<float>(
      small_config(Modularity::SubTask, Modularity::SubTask, Modularity::SubTask, IntermediateArch::GroupFind),
      reg, 2);
  CHECK(lib.intermediates.size() == 21);
  CHECK(lib.embedding != nullptr);
  int C = lib.config.channels;
  Rng rng(11);
  auto sx = random_tensor<float>({1, C, 5, 5}, rng);
  auto sy = random_tensor<float>({1, C, 5, 5}, rng);
  CHECK(group_forward(lib, 7, sx, sy)->shape == std::vector<int>{1, C, 5, 5});
}

TEST_CASE("vector_forward: identity FiLM at zero, vector output, manual oracle") {
  auto reg = single_group_registry(3);
  auto lib = build_library<float>(
      small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Vector), reg, 31);
  int C = lib.config.channels;
  Rng rng(12);

  // gamma-tilde == 0 => gamma == 1 (checked through the op directly)
  auto zeros = Tensor<float>::create({4});
  auto ones = tanh_affine_gamma(zeros);
  for (float v : ones->value) CHECK(v == doctest::Approx(1.0));

  for (int hw : {5, 9}) {
    auto s_img = random_tensor<float>({2, C, hw, hw}, rng);
    auto out = vector_forward<float>(lib, 1, nullptr, nullptr, s_img);
    CHECK(out->shape == std::vector<int>{2, C});
  }

  // manual composition oracle
  auto s_img = random_tensor<float>({2, C, 6, 6}, rng);
  auto s_x = random_tensor<float>({2, C}, rng);
  auto s_y = random_tensor<float>({2, C}, rng);
  auto out = vector_forward(lib, 2, s_x, s_y, s_img);

  const auto& ps = lib.intermediates[0];
  auto emb = broadcast_batch(embedding_lookup(lib.embedding, 2), 2);
  auto hc = concat_channels(concat_channels(emb, s_x), s_y);
  auto film = [&](int j) {
    std::string p = "film" + std::to_string(j);
    auto t = relu(linear(hc, ps.at(p + ".fc1.weight"), ps.at(p + ".fc1.bias")));
    t = add_channel(t, ps.at(p + ".b2"));
    auto bg = linear(t, ps.at(p + ".fc2.weight"), TensorPtr<float>());
    return split_channels(bg, C);
  };
  auto [b1, g1raw] = film(1);
  auto [b2, g2raw] = film(2);
  auto h1 = relu(conv2d(add_channel(modulate(s_img, tanh_affine_gamma(g1raw)), b1), ps.at("u1.weight"),
                        TensorPtr<float>(), 1, 1));
  auto h2 = relu(add_channel(
      conv2d(add_channel(modulate(h1, tanh_affine_gamma(g2raw)), b2), ps.at("u2.weight"), TensorPtr<float>(), 1, 1),
      s_x));
  auto oracle = global_maxpool2d(h2);
  CHECK(out->value == oracle->value);
}

TEST_CASE("classify maps features to two logits for both map sizes") {
  auto reg = single_group_registry(2);
  auto lib = build_library<float>(
      small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find, 8), reg, 5);
  Rng rng(13);
  auto f7 = random_tensor<float>({3, 8, 7, 7}, rng);
  CHECK(classify(lib, f7, 0, false)->shape == std::vector<int>{3, 2});
  auto f16 = random_tensor<float>({3, 8, 16, 16}, rng);
  CHECK(classify(lib, f16, 0, false)->shape == std::vector<int>{3, 2});
}

TEST_CASE("classifiers with copied parameters produce identical logits") {
  SubtaskRegistry reg;
  reg.groups = {"g0", "g1"};
  reg.subtasks = {"t0", "t1"};
  reg.group_map = {0, 1};
  auto lib = build_library<float>(
      small_config(Modularity::All, Modularity::All, Modularity::Group, IntermediateArch::Find, 4), reg, 6);
  REQUIRE(lib.classifiers.size() == 2);
  for (size_t i = 0; i < lib.classifiers[0].items.size(); ++i)
    lib.classifiers[1].items[i].second->value = lib.classifiers[0].items[i].second->value;
  Rng rng(14);
  auto f = random_tensor<float>({2, 4, 7, 7}, rng);
  CHECK(classify(lib, f, 0, false)->value == classify(lib, f, 1, false)->value);
}

TEST_CASE("library initialization is deterministic per seed and stage-independent") {
  auto reg = vqa::extraction_registry();
  auto cfg = small_config(Modularity::Group, Modularity::All, Modularity::All, IntermediateArch::Find);
  auto a = build_library<float>(cfg, reg, 99);
  auto b = build_library<float>(cfg, reg, 99);
  auto na = a.named_params();
  auto nb = b.named_params();
  REQUIRE(na.size() == nb.size());
  for (size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(na[i].second->value == nb[i].second->value);
  }

  // changing encoder modularity must not change the intermediate draw
  auto cfg_sub = small_config(Modularity::SubTask, Modularity::All, Modularity::All, IntermediateArch::Find);
  auto c = build_library<float>(cfg_sub, reg, 99);
  CHECK(c.intermediates[0].at("conv2.weight")->value == a.intermediates[0].at("conv2.weight")->value);
  CHECK(c.embedding->value == a.embedding->value);
}

TEST_CASE("find and residual modules pass a 64-bit gradient check") {
  auto reg = single_group_registry(3);
  Rng rng(15);

  auto find_lib = build_library<double>(
      small_config(Modularity::All, Modularity::All, Modularity::All, IntermediateArch::Find), reg, 41);
  int C = find_lib.config.channels;
  auto sx = random_tensor<double>({2, C, 5, 5}, rng);
  auto sy = random_tensor<double>({2, C, 5, 5}, rng);
  std::vector<std::pair<std::string, TensorPtr<double>>> params;
  for (auto& [n, t] : find_lib.intermediates[0].items) params.emplace_back(n, t);
  params.emplace_back("embedding", find_lib.embedding);
  auto report = grad_check([&] { return sum(find_forward(find_lib, 1, sx, sy)); }, params, 1e-4, 1e-6);
  CHECK_MESSAGE(report.ok(), "max rel err ", report.max_rel_err);

  auto res_lib = build_library<double>(
      small_config(Modularity::All, Modularity::SubTask, Modularity::All, IntermediateArch::Residual), reg,
      42);
  std::vector<std::pair<std::string, TensorPtr<double>>> rparams;
  for (auto& [n, t] : res_lib.intermediates[1].items) rparams.emplace_back(n, t);
  auto rreport = grad_check([&] { return sum(residual_forward(res_lib, 1, sx, sy)); }, rparams, 1e-4, 1e-6);
  CHECK_MESSAGE(rreport.ok(), "max rel err ", rreport.max_rel_err);
}
