#include "modnet/library.hpp"

#include <algorithm>
#include <cmath>

#include "modnet/common.hpp"

namespace modnet {

std::string modularity_name(Modularity m) {
  switch (m) {
    case Modularity::All: return "all";
    case Modularity::Group: return "group";
    case Modularity::SubTask: return "sub-task";
  }
  return "?";
}

int SubtaskRegistry::index_of(const std::string& name) const {
  for (size_t i = 0; i < subtasks.size(); ++i)
    if (subtasks[i] == name) return static_cast<int>(i);
  return -1;
}

int SubtaskRegistry::group_of(int subtask) const {
  if (subtask < 0 || subtask >= count())
    throw ConfigError("sub-task index " + std::to_string(subtask) + " out of range");
  return group_map[static_cast<size_t>(subtask)];
}

void SubtaskRegistry::validate() const {
  if (subtasks.empty()) throw ConfigError("registry: no sub-tasks");
  if (group_map.size() != subtasks.size())
    throw ConfigError("registry: group_map covers " + std::to_string(group_map.size()) + " of " +
                      std::to_string(subtasks.size()) + " sub-tasks");
  for (size_t i = 0; i < group_map.size(); ++i)
    if (group_map[i] < 0 || group_map[i] >= static_cast<int>(groups.size()))
      throw ConfigError("registry: sub-task '" + subtasks[i] + "' maps to unknown group " +
                        std::to_string(group_map[i]));
}

void LibraryConfig::validate() const {
  if (channels < 1) throw ConfigError("library: channels must be >= 1");
  if (embedding_dim != channels)
    throw ConfigError("library: embedding_dim " + std::to_string(embedding_dim) +
                      " must equal channels " + std::to_string(channels) +
                      " (modulation is an elementwise product over channel maps)");
  if (arch == IntermediateArch::Residual && intermediate == Modularity::All)
    throw ConfigError("library: the residual architecture has no sub-task input; it needs group or "
                      "sub-task modularity at the intermediate stage");
  if (use_batchnorm && (encoder != Modularity::All || classifier != Modularity::All))
    throw ConfigError("library: batch normalization is only defined for 'all' encoder and classifier "
                      "stages");
  if (arch == IntermediateArch::Vector && vector_hidden < 1)
    throw ConfigError("library: vector_hidden must be >= 1");
}

// Find with group or sub-task modularity is the grouped film module
// (singleton groups for sub-task).
IntermediateArch effective_intermediate_arch(const LibraryConfig& c) {
  if (c.arch == IntermediateArch::Vector) return IntermediateArch::Vector;
  if (c.arch == IntermediateArch::Residual) return IntermediateArch::Residual;
  return c.intermediate == Modularity::All ? IntermediateArch::Find : IntermediateArch::GroupFind;
}

namespace {

IntermediateArch effective_arch(const LibraryConfig& c) { return effective_intermediate_arch(c); }

bool arch_uses_embedding(const LibraryConfig& c) {
  return effective_arch(c) != IntermediateArch::Residual;
}

std::string intermediate_token(const LibraryConfig& c) {
  switch (c.arch) {
    case IntermediateArch::Find:
    case IntermediateArch::GroupFind:
      if (c.intermediate == Modularity::All) return "all";
      if (c.intermediate == Modularity::Group) return "group";
      return "sub-task(find)";
    case IntermediateArch::Residual:
      return c.intermediate == Modularity::Group ? "group(residual)" : "sub-task";
    case IntermediateArch::Vector:
      if (c.intermediate == Modularity::All) return "vector";
      if (c.intermediate == Modularity::Group) return "group(vector)";
      return "sub-task(vector)";
  }
  return "?";
}

}  // namespace

std::string LibraryConfig::name() const {
  std::string enc = modularity_name(encoder);
  std::string cls = modularity_name(classifier);
  if (use_batchnorm) {
    enc += "(bn)";
    cls += "(bn)";
  }
  return enc + "-" + intermediate_token(*this) + "-" + cls;
}

LibraryConfig LibraryConfig::parse_name(const std::string& name) {
  // Tokens are separated by '-' but "sub-task" itself contains one, so match
  // greedily against the known vocabulary.
  struct Tok {
    const char* text;
    Modularity mod;
    bool bn;
  };
  static const Tok stage_toks[] = {
      {"sub-task", Modularity::SubTask, false}, {"all(bn)", Modularity::All, true},
      {"group", Modularity::Group, false},      {"all", Modularity::All, false},
  };
  struct ITok {
    const char* text;
    Modularity mod;
    IntermediateArch arch;
  };
  static const ITok int_toks[] = {
      {"sub-task(find)", Modularity::SubTask, IntermediateArch::GroupFind},
      {"sub-task(vector)", Modularity::SubTask, IntermediateArch::Vector},
      {"group(residual)", Modularity::Group, IntermediateArch::Residual},
      {"group(vector)", Modularity::Group, IntermediateArch::Vector},
      {"sub-task", Modularity::SubTask, IntermediateArch::Residual},
      {"vector", Modularity::All, IntermediateArch::Vector},
      {"group", Modularity::Group, IntermediateArch::GroupFind},
      {"all", Modularity::All, IntermediateArch::Find},
  };

  LibraryConfig cfg;
  size_t pos = 0;
  auto expect_dash = [&](const char* where) {
    if (pos >= name.size() || name[pos] != '-')
      throw ConfigError("library name '" + name + "': expected '-' after " + where);
    ++pos;
  };

  auto match_stage = [&](const char* where, bool* bn) -> Modularity {
    for (auto& t : stage_toks) {
      size_t n = std::string(t.text).size();
      if (name.compare(pos, n, t.text) == 0) {
        pos += n;
        if (bn) *bn = *bn || t.bn;
        return t.mod;
      }
    }
    throw ConfigError("library name '" + name + "': unknown " + where + " token at position " +
                      std::to_string(pos));
  };

  bool bn = false;
  cfg.encoder = match_stage("encoder", &bn);
  expect_dash("encoder");
  bool matched = false;
  for (auto& t : int_toks) {
    size_t n = std::string(t.text).size();
    if (name.compare(pos, n, t.text) == 0 && pos + n < name.size() && name[pos + n] == '-') {
      cfg.intermediate = t.mod;
      cfg.arch = t.arch;
      pos += n;
      matched = true;
      break;
    }
  }
  if (!matched)
    throw ConfigError("library name '" + name + "': unknown intermediate token at position " +
                      std::to_string(pos));
  expect_dash("intermediate");
  bool bn2 = false;
  cfg.classifier = match_stage("classifier", &bn2);
  if (pos != name.size())
    throw ConfigError("library name '" + name + "': trailing characters at position " + std::to_string(pos));
  if (bn != bn2)
    throw ConfigError("library name '" + name + "': (bn) must be used on both encoder and classifier");
  cfg.use_batchnorm = bn;
  return cfg;
}

namespace {

constexpr uint64_t kStageEncoder = 1, kStageIntermediate = 2, kStageClassifier = 3, kStageEmbedding = 4;

template <class T>
TensorPtr<T> init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  auto t = Tensor<T>::create(std::move(shape), true);
  T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (auto& v : t->value) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
void add_conv(ParamSet<T>& ps, const std::string& prefix, int cout, int cin, int k, bool bias, Rng& rng) {
  int fan_in = cin * k * k;
  ps.add(prefix + ".weight", init_uniform<T>({cout, cin, k, k}, fan_in, rng));
  if (bias) ps.add(prefix + ".bias", init_uniform<T>({cout}, fan_in, rng));
}

template <class T>
void add_linear(ParamSet<T>& ps, const std::string& prefix, int out, int in, bool bias, Rng& rng) {
  ps.add(prefix + ".weight", init_uniform<T>({out, in}, in, rng));
  if (bias) ps.add(prefix + ".bias", init_uniform<T>({out}, in, rng));
}

template <class T>
void add_bn(ParamSet<T>& ps, const std::string& prefix, int c) {
  ps.add(prefix + ".gamma", Tensor<T>::from({c}, std::vector<T>(c, T(1)), true));
  ps.add(prefix + ".beta", Tensor<T>::create({c}, true));
  ps.add(prefix + ".running_mean", Tensor<T>::create({c}, false));
  ps.add(prefix + ".running_var", Tensor<T>::from({c}, std::vector<T>(c, T(1)), false));
}

template <class T>
ParamSet<T> make_encoder(const LibraryConfig& cfg, Rng& rng) {
  ParamSet<T> ps;
  int C = cfg.channels;
  for (int i = 0; i < 6; ++i) {
    add_conv(ps, "conv" + std::to_string(i), C, i == 0 ? 3 : C, 3, /*bias=*/false, rng);
    if (cfg.use_batchnorm) add_bn(ps, "bn" + std::to_string(i), C);
  }
  return ps;
}

template <class T>
ParamSet<T> make_film_intermediate(const LibraryConfig& cfg, Rng& rng) {
  ParamSet<T> ps;
  int C = cfg.channels;
  add_conv(ps, "conv2", C, 2 * C, 3, /*bias=*/true, rng);
  add_conv(ps, "conv1", C, C, 3, /*bias=*/true, rng);
  return ps;
}

template <class T>
ParamSet<T> make_residual_intermediate(const LibraryConfig& cfg, Rng& rng) {
  ParamSet<T> ps;
  int C = cfg.channels;
  add_conv(ps, "conv3", C, 2 * C, 3, /*bias=*/true, rng);
  add_conv(ps, "conv2", C, C, 3, /*bias=*/true, rng);
  add_conv(ps, "conv1", C, C, 3, /*bias=*/true, rng);
  return ps;
}

template <class T>
ParamSet<T> make_vector_intermediate(const LibraryConfig& cfg, Rng& rng) {
  ParamSet<T> ps;
  int C = cfg.channels, H = cfg.vector_hidden;
  for (int j = 1; j <= 2; ++j) {
    std::string p = "film" + std::to_string(j);
    add_linear(ps, p + ".fc1", H, 3 * C, /*bias=*/true, rng);
    ps.add(p + ".b2", init_uniform<T>({H}, H, rng));
    add_linear(ps, p + ".fc2", 2 * C, H, /*bias=*/false, rng);
  }
  add_conv(ps, "u1", C, C, 3, /*bias=*/false, rng);
  add_conv(ps, "u2", C, C, 3, /*bias=*/false, rng);
  return ps;
}

template <class T>
ParamSet<T> make_classifier(const LibraryConfig& cfg, Rng& rng) {
  ParamSet<T> ps;
  int C = cfg.channels;
  add_conv(ps, "conv", 8 * C, C, 1, /*bias=*/true, rng);
  if (cfg.use_batchnorm) add_bn(ps, "bn0", 8 * C);
  add_linear(ps, "fc1", 16 * C, 8 * C, /*bias=*/true, rng);
  if (cfg.use_batchnorm) add_bn(ps, "bn1", 16 * C);
  add_linear(ps, "fc2", 2, 16 * C, /*bias=*/true, rng);
  return ps;
}

int stage_module_count(Modularity m, const SubtaskRegistry& reg) {
  switch (m) {
    case Modularity::All: return 1;
    case Modularity::Group: return static_cast<int>(reg.groups.size());
    case Modularity::SubTask: return reg.count();
  }
  return 0;
}

int stage_key(Modularity m, const SubtaskRegistry& reg, int subtask) {
  switch (m) {
    case Modularity::All: return 0;
    case Modularity::Group: return reg.group_of(subtask);
    case Modularity::SubTask: return subtask;
  }
  return 0;
}

}  // namespace

template <class T>
int Library<T>::encoder_key(int subtask) const {
  return stage_key(config.encoder, registry, subtask);
}
template <class T>
int Library<T>::intermediate_key(int subtask) const {
  return stage_key(config.intermediate, registry, subtask);
}
template <class T>
int Library<T>::classifier_key(int subtask) const {
  return stage_key(config.classifier, registry, subtask);
}

template <class T>
std::string Library<T>::stage_key_label(Modularity m, int key) const {
  switch (m) {
    case Modularity::All: return "all";
    case Modularity::Group: return registry.groups[static_cast<size_t>(key)];
    case Modularity::SubTask: return registry.subtasks[static_cast<size_t>(key)];
  }
  return "?";
}

template <class T>
std::vector<std::pair<std::string, TensorPtr<T>>> Library<T>::named_params() const {
  std::vector<std::pair<std::string, TensorPtr<T>>> out;
  auto stage = [&](const char* name, Modularity m, const std::vector<ParamSet<T>>& sets) {
    for (size_t k = 0; k < sets.size(); ++k)
      for (auto& [pname, t] : sets[k].items)
        out.emplace_back(std::string(name) + "/" + stage_key_label(m, static_cast<int>(k)) + "/" + pname, t);
  };
  stage("encoder", config.encoder, encoders);
  stage("intermediate", config.intermediate, intermediates);
  stage("classifier", config.classifier, classifiers);
  if (embedding) out.emplace_back("embedding/table", embedding);
  return out;
}

template <class T>
std::vector<TensorPtr<T>> Library<T>::trainable_params() const {
  std::vector<TensorPtr<T>> out;
  for (auto& [name, t] : named_params())
    if (t->requires_grad) out.push_back(t);
  return out;
}

template <class T>
Library<T> build_library(const LibraryConfig& config, const SubtaskRegistry& registry, uint64_t seed) {
  config.validate();
  registry.validate();

  Library<T> lib;
  lib.config = config;
  lib.registry = registry;
  lib.seed = seed;

  // Each (stage, key) draws from its own seeded stream so a stage's
  // initialization does not depend on the other stages' modularity.
  for (int k = 0; k < stage_module_count(config.encoder, registry); ++k) {
    Rng rng(mix_seed(mix_seed(seed, kStageEncoder), static_cast<uint64_t>(k)));
    lib.encoders.push_back(make_encoder<T>(config, rng));
  }
  IntermediateArch ea = effective_arch(config);
  for (int k = 0; k < stage_module_count(config.intermediate, registry); ++k) {
    Rng rng(mix_seed(mix_seed(seed, kStageIntermediate), static_cast<uint64_t>(k)));
    switch (ea) {
      case IntermediateArch::Residual:
        lib.intermediates.push_back(make_residual_intermediate<T>(config, rng));
        break;
      case IntermediateArch::Vector:
        lib.intermediates.push_back(make_vector_intermediate<T>(config, rng));
        break;
      default:
        lib.intermediates.push_back(make_film_intermediate<T>(config, rng));
        break;
    }
  }
  for (int k = 0; k < stage_module_count(config.classifier, registry); ++k) {
    Rng rng(mix_seed(mix_seed(seed, kStageClassifier), static_cast<uint64_t>(k)));
    lib.classifiers.push_back(make_classifier<T>(config, rng));
  }
  if (arch_uses_embedding(config)) {
    Rng rng(mix_seed(seed, kStageEmbedding));
    auto table = Tensor<T>::create({registry.count(), config.embedding_dim}, true);
    for (auto& v : table->value) v = static_cast<T>(rng.normal() * config.embedding_init_std);
    lib.embedding = table;
  }
  return lib;
}

namespace {

template <class T>
TensorPtr<T> maybe_bn(const ParamSet<T>& ps, const std::string& prefix, const TensorPtr<T>& x, bool enabled,
                      bool train) {
  if (!enabled) return x;
  return batchnorm(x, ps.at(prefix + ".gamma"), ps.at(prefix + ".beta"), ps.at(prefix + ".running_mean"),
                   ps.at(prefix + ".running_var"), train);
}

}  // namespace

template <class T>
TensorPtr<T> encode_image(const Library<T>& lib, const TensorPtr<T>& image, int key, bool train) {
  if (key < 0 || key >= static_cast<int>(lib.encoders.size()))
    throw ConfigError("encode_image: unknown encoder key " + std::to_string(key) + " (have " +
                      std::to_string(lib.encoders.size()) + ")");
  if (image->ndim() != 4 || image->dim(1) != 3)
    throw ShapeError("encode_image: image must be (B,3,H,W), got " + shape_str(image->shape));
  int H = image->dim(2), W = image->dim(3);
  if ((H != 28 && H != 64) || (W != 28 && W != 64))
    throw ShapeError("encode_image: spatial dims must be 28 or 64, got " + shape_str(image->shape));

  const ParamSet<T>& ps = lib.encoders[static_cast<size_t>(key)];
  bool bn = lib.config.use_batchnorm;
  auto x = image;
  for (int i = 0; i < 6; ++i) {
    x = conv2d(x, ps.at("conv" + std::to_string(i) + ".weight"), TensorPtr<T>(), 1, 1);
    x = maybe_bn(ps, "bn" + std::to_string(i), x, bn, train);
    x = relu(x);
    if (i == 1 || i == 3) x = maxpool2d(x, 2, 2);
  }
  return x;
}

template <class T>
TensorPtr<T> film_forward_batch(const Library<T>& lib, int key, const TensorPtr<T>& gamma_rows,
                                const TensorPtr<T>& s_x, const TensorPtr<T>& s_y) {
  IntermediateArch ea = effective_arch(lib.config);
  if (ea != IntermediateArch::GroupFind && ea != IntermediateArch::Find)
    throw ConfigError("film_forward_batch: library intermediate stage is not a film module");
  const ParamSet<T>& ps = lib.intermediates.at(static_cast<size_t>(key));
  auto h = relu(conv2d(concat_channels(s_x, s_y), ps.at("conv2.weight"), ps.at("conv2.bias"), 1, 1));
  h = modulate(h, gamma_rows);
  return relu(conv2d(h, ps.at("conv1.weight"), ps.at("conv1.bias"), 1, 1));
}

template <class T>
TensorPtr<T> residual_forward_batch(const Library<T>& lib, int key, const TensorPtr<T>& s_x,
                                    const TensorPtr<T>& s_y) {
  if (effective_arch(lib.config) != IntermediateArch::Residual)
    throw ConfigError("residual_forward_batch: library intermediate stage is not the residual module");
  const ParamSet<T>& ps = lib.intermediates.at(static_cast<size_t>(key));
  auto s = relu(conv2d(concat_channels(s_x, s_y), ps.at("conv3.weight"), ps.at("conv3.bias"), 1, 1));
  auto inner = relu(conv2d(s, ps.at("conv2.weight"), ps.at("conv2.bias"), 1, 1));
  return relu(add(s, conv2d(inner, ps.at("conv1.weight"), ps.at("conv1.bias"), 1, 1)));
}

template <class T>
TensorPtr<T> vector_forward_batch(const Library<T>& lib, int key, const TensorPtr<T>& emb_rows,
                                  const TensorPtr<T>& s_x, const TensorPtr<T>& s_y,
                                  const TensorPtr<T>& s_img) {
  if (effective_arch(lib.config) != IntermediateArch::Vector)
    throw ConfigError("vector_forward_batch: library intermediate stage is not the vector module");
  if (s_img->ndim() != 4) throw ShapeError("vector_forward: s_img must be (B,C,h,w)");
  int B = s_img->dim(0), C = s_img->dim(1);
  if (C != lib.config.channels) throw ShapeError("vector_forward: s_img channels mismatch");

  auto as_vec = [&](const TensorPtr<T>& v) {
    if (!v) return Tensor<T>::create({B, C});
    if (v->ndim() != 2 || v->dim(0) != B || v->dim(1) != C)
      throw ShapeError("vector_forward: module input must be (B,C), got " + shape_str(v->shape));
    return v;
  };
  auto vx = as_vec(s_x);
  auto vy = as_vec(s_y);

  const ParamSet<T>& ps = lib.intermediates.at(static_cast<size_t>(key));
  auto h_c = concat_channels(concat_channels(emb_rows, vx), vy);  // (B, 3C)

  auto film = [&](int j) {
    std::string p = "film" + std::to_string(j);
    auto t = relu(linear(h_c, ps.at(p + ".fc1.weight"), ps.at(p + ".fc1.bias")));
    t = add_channel(t, ps.at(p + ".b2"));
    auto bg = linear(t, ps.at(p + ".fc2.weight"), TensorPtr<T>());
    auto [beta, gamma_raw] = split_channels(bg, C);
    return std::make_pair(beta, tanh_affine_gamma(gamma_raw));
  };

  auto [beta1, gamma1] = film(1);
  auto [beta2, gamma2] = film(2);
  auto h1 = relu(conv2d(add_channel(modulate(s_img, gamma1), beta1), ps.at("u1.weight"), TensorPtr<T>(), 1, 1));
  // the residual vector input enters the second block broadcast over space
  auto h2 = relu(add_channel(conv2d(add_channel(modulate(h1, gamma2), beta2), ps.at("u2.weight"),
                                    TensorPtr<T>(), 1, 1),
                             vx));
  return global_maxpool2d(h2);
}

template <class T>
TensorPtr<T> find_forward(const Library<T>& lib, int subtask, const TensorPtr<T>& s_x,
                          const TensorPtr<T>& s_y) {
  if (effective_arch(lib.config) != IntermediateArch::Find)
    throw ConfigError("find_forward: library intermediate stage is not the shared find module");
  if (!lib.embedding) throw ConfigError("film module requires the embedding table");
  return film_forward_batch(lib, 0, embedding_lookup(lib.embedding, subtask), s_x, s_y);
}

template <class T>
TensorPtr<T> group_forward(const Library<T>& lib, int subtask, const TensorPtr<T>& s_x,
                           const TensorPtr<T>& s_y) {
  IntermediateArch ea = effective_arch(lib.config);
  if (ea != IntermediateArch::GroupFind && ea != IntermediateArch::Find)
    throw ConfigError("group_forward: library intermediate stage is not a film module");
  if (!lib.embedding) throw ConfigError("film module requires the embedding table");
  return film_forward_batch(lib, lib.intermediate_key(subtask), embedding_lookup(lib.embedding, subtask),
                            s_x, s_y);
}

template <class T>
TensorPtr<T> residual_forward(const Library<T>& lib, int subtask, const TensorPtr<T>& s_x,
                              const TensorPtr<T>& s_y) {
  return residual_forward_batch(lib, lib.intermediate_key(subtask), s_x, s_y);
}

template <class T>
TensorPtr<T> vector_forward(const Library<T>& lib, int subtask, const TensorPtr<T>& s_x,
                            const TensorPtr<T>& s_y, const TensorPtr<T>& s_img) {
  if (!lib.embedding) throw ConfigError("vector module requires the embedding table");
  if (s_img->ndim() != 4) throw ShapeError("vector_forward: s_img must be (B,C,h,w)");
  auto emb = broadcast_batch(embedding_lookup(lib.embedding, subtask), s_img->dim(0));
  return vector_forward_batch(lib, lib.intermediate_key(subtask), emb, s_x, s_y, s_img);
}

template <class T>
TensorPtr<T> classify(const Library<T>& lib, const TensorPtr<T>& features, int key, bool train) {
  if (key < 0 || key >= static_cast<int>(lib.classifiers.size()))
    throw ConfigError("classify: unknown classifier key " + std::to_string(key) + " (have " +
                      std::to_string(lib.classifiers.size()) + ")");
  if (features->ndim() != 4 || features->dim(1) != lib.config.channels)
    throw ShapeError("classify: features must be (B," + std::to_string(lib.config.channels) +
                     ",h,w), got " + shape_str(features->shape));
  const ParamSet<T>& ps = lib.classifiers[static_cast<size_t>(key)];
  bool bn = lib.config.use_batchnorm;
  auto x = conv2d(features, ps.at("conv.weight"), ps.at("conv.bias"), 1, 0);
  x = maybe_bn(ps, "bn0", x, bn, train);
  x = relu(x);
  auto flat = global_maxpool2d(x);  // (B, 8C)
  auto h = linear(flat, ps.at("fc1.weight"), ps.at("fc1.bias"));
  h = maybe_bn(ps, "bn1", h, bn, train);
  h = relu(h);
  return linear(h, ps.at("fc2.weight"), ps.at("fc2.bias"));
}

template <class T>
TensorPtr<T> intermediate_forward(const Library<T>& lib, int subtask, const TensorPtr<T>& s_x,
                                  const TensorPtr<T>& s_y, const TensorPtr<T>& s_img) {
  switch (effective_arch(lib.config)) {
    case IntermediateArch::Find: return find_forward(lib, subtask, s_x, s_y);
    case IntermediateArch::GroupFind: return group_forward(lib, subtask, s_x, s_y);
    case IntermediateArch::Residual: return residual_forward(lib, subtask, s_x, s_y);
    case IntermediateArch::Vector: return vector_forward(lib, subtask, s_x, s_y, s_img);
  }
  throw InternalError("intermediate_forward: unhandled architecture");
}

template <class T>
std::map<std::string, StageCount> count_params(const Library<T>& lib) {
  std::map<std::string, StageCount> out;
  auto stage = [&](const char* name, const std::vector<ParamSet<T>>& sets) {
    StageCount sc;
    sc.num_modules = static_cast<int>(sets.size());
    for (auto& ps : sets)
      for (auto& [n, t] : ps.items)
        if (t->requires_grad) sc.num_scalars += t->numel();
    out[name] = sc;
  };
  stage("encoder", lib.encoders);
  stage("intermediate", lib.intermediates);
  stage("classifier", lib.classifiers);
  if (lib.embedding) out["embedding"] = StageCount{1, lib.embedding->numel()};
  return out;
}

#define MODNET_INSTANTIATE_LIBRARY(T)                                                                 \
  template struct Library<T>;                                                                         \
  template Library<T> build_library<T>(const LibraryConfig&, const SubtaskRegistry&, uint64_t);       \
  template TensorPtr<T> encode_image<T>(const Library<T>&, const TensorPtr<T>&, int, bool);           \
  template TensorPtr<T> find_forward<T>(const Library<T>&, int, const TensorPtr<T>&,                  \
                                        const TensorPtr<T>&);                                         \
  template TensorPtr<T> group_forward<T>(const Library<T>&, int, const TensorPtr<T>&,                 \
                                         const TensorPtr<T>&);                                        \
  template TensorPtr<T> residual_forward<T>(const Library<T>&, int, const TensorPtr<T>&,              \
                                            const TensorPtr<T>&);                                     \
  template TensorPtr<T> vector_forward<T>(const Library<T>&, int, const TensorPtr<T>&,                \
                                          const TensorPtr<T>&, const TensorPtr<T>&);                  \
  template TensorPtr<T> classify<T>(const Library<T>&, const TensorPtr<T>&, int, bool);               \
  template TensorPtr<T> intermediate_forward<T>(const Library<T>&, int, const TensorPtr<T>&,          \
                                                const TensorPtr<T>&, const TensorPtr<T>&);            \
  template TensorPtr<T> film_forward_batch<T>(const Library<T>&, int, const TensorPtr<T>&,            \
                                              const TensorPtr<T>&, const TensorPtr<T>&);              \
  template TensorPtr<T> residual_forward_batch<T>(const Library<T>&, int, const TensorPtr<T>&,        \
                                                  const TensorPtr<T>&);                               \
  template TensorPtr<T> vector_forward_batch<T>(const Library<T>&, int, const TensorPtr<T>&,          \
                                                const TensorPtr<T>&, const TensorPtr<T>&,             \
                                                const TensorPtr<T>&);                                 \
  template std::map<std::string, StageCount> count_params<T>(const Library<T>&);

MODNET_INSTANTIATE_LIBRARY(float)
MODNET_INSTANTIATE_LIBRARY(double)

}  // namespace modnet
