#pragma once

#include <utility>
#include <vector>

#include "modnet/layout.hpp"
#include "modnet/library.hpp"

namespace modnet {

template <class T>
struct ExecutionTrace {
  std::vector<TensorPtr<T>> node_outputs;  // one per layout node, topological
  // real-image encoder outputs actually computed, keyed by (encoder key, image slot)
  std::vector<std::pair<std::pair<int, int>, TensorPtr<T>>> encoder_outputs;
  TensorPtr<T> logits;
  int encoder_invocations = 0;
};

// Run one layout over a batch of examples that share it. `images` holds one
// (B,3,H,W) tensor per image slot: one slot, or two for separated-pair
// comparison (leaf i reads slot i). Leaves take the encoded image as s_x and
// the encoded null (all-zero) image as s_y; the root takes its children's
// outputs; the root's output feeds the classifier of the root's group.
template <class T>
TensorPtr<T> execute(const ProgramLayout& layout, const std::vector<TensorPtr<T>>& images,
                     const Library<T>& lib, bool train = false);

template <class T>
ExecutionTrace<T> trace(const ProgramLayout& layout, const std::vector<TensorPtr<T>>& images,
                        const Library<T>& lib, bool train = false);

// Mixed-question batch: examples may use different layouts. Encoding and
// classification run over the largest batches the stage modularity allows
// (with batchnorm this is the full batch), intermediate modules run per
// layout group. Returns logits in the original example order.
// per_example_layout[i] indexes into `layouts`; slot_images[s] is (B,3,H,W).
template <class T>
TensorPtr<T> execute_mixed(const std::vector<ProgramLayout>& layouts,
                           const std::vector<int>& per_example_layout,
                           const std::vector<TensorPtr<T>>& slot_images, const Library<T>& lib,
                           bool train);

}  // namespace modnet
