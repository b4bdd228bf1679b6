#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "modnet/ops.hpp"
#include "modnet/tensor.hpp"

namespace modnet {

// Degree of modularity of one network stage: a single module shared by every
// sub-task, one module per group of related sub-tasks, or one per sub-task.
enum class Modularity { All, Group, SubTask };

enum class IntermediateArch { Find, Residual, GroupFind, Vector };

std::string modularity_name(Modularity m);

// Sub-task names, group names and the total sub-task -> group mapping for one
// task family. Sub-task indices are positions in `subtasks`.
struct SubtaskRegistry {
  std::vector<std::string> subtasks;
  std::vector<std::string> groups;
  std::vector<int> group_map;

  int count() const { return static_cast<int>(subtasks.size()); }
  int index_of(const std::string& name) const;
  int group_of(int subtask) const;
  void validate() const;
};

// The experiment variable: modularity per stage plus the intermediate-module
// architecture. Names follow the encoder-intermediate-classifier convention,
// e.g. "group-all-all", "all(bn)-sub-task-all(bn)", "sub-task-sub-task(find)-sub-task".
struct LibraryConfig {
  Modularity encoder = Modularity::All;
  Modularity intermediate = Modularity::All;
  Modularity classifier = Modularity::All;
  IntermediateArch arch = IntermediateArch::Find;
  bool use_batchnorm = false;
  int channels = 64;
  int embedding_dim = 64;
  float embedding_init_std = 1.0f;
  int vector_hidden = 128;

  void validate() const;
  std::string name() const;
  static LibraryConfig parse_name(const std::string& name);
};

// A built library: one ParamSet per module at each stage, plus the sub-task
// embedding table when the architecture modulates by sub-task.
template <class T>
struct Library {
  LibraryConfig config;
  SubtaskRegistry registry;
  std::vector<ParamSet<T>> encoders;
  std::vector<ParamSet<T>> intermediates;
  std::vector<ParamSet<T>> classifiers;
  TensorPtr<T> embedding;  // null when unused
  uint64_t seed = 0;

  int encoder_key(int subtask) const;
  int intermediate_key(int subtask) const;
  int classifier_key(int subtask) const;
  std::string stage_key_label(Modularity m, int key) const;

  // stage-qualified names, e.g. encoder/color/conv0.weight
  std::vector<std::pair<std::string, TensorPtr<T>>> named_params() const;
  std::vector<TensorPtr<T>> trainable_params() const;
};

template <class T>
Library<T> build_library(const LibraryConfig& config, const SubtaskRegistry& registry, uint64_t seed);

// Table App-style six-conv encoder stack; (B,3,H,W) with H,W in {28,64} ->
// (B,C,H/4,W/4).
template <class T>
TensorPtr<T> encode_image(const Library<T>& lib, const TensorPtr<T>& image, int key, bool train);

// Intermediate modules. All take the two data inputs (feature maps of shape
// (B,C,h,w)) and the sub-task index that selects weights and/or modulation.
template <class T>
TensorPtr<T> find_forward(const Library<T>& lib, int subtask, const TensorPtr<T>& s_x,
                          const TensorPtr<T>& s_y);
template <class T>
TensorPtr<T> group_forward(const Library<T>& lib, int subtask, const TensorPtr<T>& s_x,
                           const TensorPtr<T>& s_y);
template <class T>
TensorPtr<T> residual_forward(const Library<T>& lib, int subtask, const TensorPtr<T>& s_x,
                              const TensorPtr<T>& s_y);

// Vector-style module: FiLM parameters from [Emb(k); s_x; s_y], applied to
// the encoded image; returns a (B,C) vector. s_x/s_y may be null (zero
// vectors).
template <class T>
TensorPtr<T> vector_forward(const Library<T>& lib, int subtask, const TensorPtr<T>& s_x,
                            const TensorPtr<T>& s_y, const TensorPtr<T>& s_img);

// Binary classifier head; features (B,C,h,w) -> logits (B,2). The max-pool is
// global so the same head serves 7x7 and 16x16 maps.
template <class T>
TensorPtr<T> classify(const Library<T>& lib, const TensorPtr<T>& features, int key, bool train);

// Per-key architecture actually built at the intermediate stage (Find with
// group/sub-task modularity is the grouped film module).
IntermediateArch effective_intermediate_arch(const LibraryConfig& config);

// Key-addressed batched forwards: one call runs every example that shares the
// intermediate parameter set, with per-example modulation rows where the
// architecture uses them. The per-sub-task entry points above are thin
// wrappers over these.
template <class T>
TensorPtr<T> film_forward_batch(const Library<T>& lib, int key, const TensorPtr<T>& gamma_rows,
                                const TensorPtr<T>& s_x, const TensorPtr<T>& s_y);
template <class T>
TensorPtr<T> residual_forward_batch(const Library<T>& lib, int key, const TensorPtr<T>& s_x,
                                    const TensorPtr<T>& s_y);
template <class T>
TensorPtr<T> vector_forward_batch(const Library<T>& lib, int key, const TensorPtr<T>& emb_rows,
                                  const TensorPtr<T>& s_x, const TensorPtr<T>& s_y,
                                  const TensorPtr<T>& s_img);

// Dispatch to the configured intermediate module. For non-vector
// architectures s_img is ignored; for the vector architecture s_x/s_y may be
// null (zero vectors).
template <class T>
TensorPtr<T> intermediate_forward(const Library<T>& lib, int subtask, const TensorPtr<T>& s_x,
                                  const TensorPtr<T>& s_y, const TensorPtr<T>& s_img = nullptr);

struct StageCount {
  int num_modules = 0;
  int64_t num_scalars = 0;  // trainable scalars (running stats excluded)
};

template <class T>
std::map<std::string, StageCount> count_params(const Library<T>& lib);

}  // namespace modnet
