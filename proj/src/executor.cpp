#include "modnet/executor.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace modnet {

namespace {

// Leaf -> image slot binding: first leaf reads the first image, second leaf
// the second, when the example carries two images; otherwise every leaf
// reads the single image.
int slot_for_leaf(int leaf_ordinal, int n_slots) { return n_slots == 2 ? leaf_ordinal : 0; }

template <class T>
void check_images(const ProgramLayout& layout, const std::vector<TensorPtr<T>>& images) {
  layout.validate();
  if (images.empty() || images.size() > 2)
    throw LayoutError("execute: expected 1 or 2 image slots, got " + std::to_string(images.size()));
  if (images.size() == 2 && layout.leaves().size() != 2)
    throw LayoutError("execute: two image slots require a two-leaf layout");
  int B = images[0]->dim(0);
  for (auto& im : images) {
    if (im->ndim() != 4 || im->dim(0) != B || im->dim(1) != 3 || im->dim(2) != images[0]->dim(2) ||
        im->dim(3) != images[0]->dim(3))
      throw ShapeError("execute: image slots must share (B,3,H,W), got " + shape_str(im->shape));
  }
}

template <class T>
struct EncoderCache {
  const Library<T>& lib;
  const std::vector<TensorPtr<T>>& slot_images;
  bool train;
  int invocations = 0;
  std::map<std::pair<int, int>, TensorPtr<T>> feats;  // (key, slot)
  std::map<int, TensorPtr<T>> null_feats;             // key -> (1,C,h,w)

  // With train-mode batchnorm the null image joins the real batch (batch
  // statistics need batch size >= 2 and a lone null row would not have it).
  bool fold_null() const { return lib.config.use_batchnorm && train; }

  TensorPtr<T> get(int key, int slot) {
    auto it = feats.find({key, slot});
    if (it != feats.end()) return it->second;
    auto img = slot_images.at(static_cast<size_t>(slot));
    int B = img->dim(0);
    TensorPtr<T> out;
    if (fold_null()) {
      auto zero = Tensor<T>::create({1, 3, img->dim(2), img->dim(3)});
      auto enc = encode_image(lib, concat_batch<T>({img, zero}), key, train);
      std::vector<int> real(static_cast<size_t>(B));
      std::iota(real.begin(), real.end(), 0);
      out = gather_batch(enc, real);
      if (!null_feats.count(key)) null_feats[key] = gather_batch(enc, {B});
    } else {
      out = encode_image(lib, img, key, train);
    }
    ++invocations;
    feats[{key, slot}] = out;
    return out;
  }

  TensorPtr<T> get_null(int key) {
    auto it = null_feats.find(key);
    if (it != null_feats.end()) return it->second;
    auto& probe = slot_images.at(0);
    auto zero = Tensor<T>::create({1, 3, probe->dim(2), probe->dim(3)});
    auto out = encode_image(lib, zero, key, train);
    null_feats[key] = out;
    return out;
  }
};

template <class T>
ExecutionTrace<T> run_single(const ProgramLayout& layout, const std::vector<TensorPtr<T>>& images,
                             const Library<T>& lib, bool train) {
  check_images(layout, images);
  int B = images[0]->dim(0);
  int n_slots = static_cast<int>(images.size());
  bool vector_arch = effective_intermediate_arch(lib.config) == IntermediateArch::Vector;

  EncoderCache<T> enc{lib, images, train};
  ExecutionTrace<T> tr;
  tr.node_outputs.resize(layout.nodes.size());

  int leaf_ordinal = 0;
  for (int i = 0; i < layout.node_count(); ++i) {
    const auto& node = layout.nodes[static_cast<size_t>(i)];
    TensorPtr<T> out;
    if (node.is_leaf()) {
      int slot = slot_for_leaf(leaf_ordinal++, n_slots);
      int key = lib.encoder_key(node.subtask);
      auto s_img = enc.get(key, slot);
      if (vector_arch) {
        out = intermediate_forward<T>(lib, node.subtask, nullptr, nullptr, s_img);
      } else {
        auto s_y = broadcast_batch(enc.get_null(key), B);
        out = intermediate_forward<T>(lib, node.subtask, s_img, s_y);
      }
    } else {
      auto s_x = tr.node_outputs[static_cast<size_t>(node.children[0])];
      auto s_y = tr.node_outputs[static_cast<size_t>(node.children[1])];
      if (vector_arch) {
        auto s_img = enc.get(lib.encoder_key(node.subtask), 0);
        out = intermediate_forward(lib, node.subtask, s_x, s_y, s_img);
      } else {
        out = intermediate_forward(lib, node.subtask, s_x, s_y);
      }
    }
    tr.node_outputs[static_cast<size_t>(i)] = out;
  }

  auto root_out = tr.node_outputs[static_cast<size_t>(layout.root)];
  if (vector_arch) root_out = reshape(root_out, {B, lib.config.channels, 1, 1});
  int cls_key = lib.classifier_key(layout.nodes[static_cast<size_t>(layout.root)].subtask);
  tr.logits = classify(lib, root_out, cls_key, train);

  tr.encoder_invocations = enc.invocations;
  for (auto& [ks, t] : enc.feats) tr.encoder_outputs.emplace_back(ks, t);
  return tr;
}

}  // namespace

template <class T>
ExecutionTrace<T> trace(const ProgramLayout& layout, const std::vector<TensorPtr<T>>& images,
                        const Library<T>& lib, bool train) {
  return run_single(layout, images, lib, train);
}

template <class T>
TensorPtr<T> execute(const ProgramLayout& layout, const std::vector<TensorPtr<T>>& images,
                     const Library<T>& lib, bool train) {
  return run_single(layout, images, lib, train).logits;
}

template <class T>
TensorPtr<T> execute_mixed(const std::vector<ProgramLayout>& layouts,
                           const std::vector<int>& per_example_layout,
                           const std::vector<TensorPtr<T>>& slot_images, const Library<T>& lib,
                           bool train) {
  if (layouts.empty() || per_example_layout.empty()) throw UsageError("execute_mixed: empty batch");
  int B = slot_images.at(0)->dim(0);
  if (static_cast<int>(per_example_layout.size()) != B)
    throw ShapeError("execute_mixed: layout list length " + std::to_string(per_example_layout.size()) +
                     " does not match batch " + std::to_string(B));
  int n_slots = static_cast<int>(slot_images.size());
  for (auto& l : layouts) {
    l.validate();
    if (n_slots == 2 && l.leaves().size() != 2)
      throw LayoutError("execute_mixed: two image slots require two-leaf layouts");
  }
  for (int g : per_example_layout)
    if (g < 0 || g >= static_cast<int>(layouts.size()))
      throw IndexError("execute_mixed: layout index " + std::to_string(g) + " out of range");

  IntermediateArch arch = effective_intermediate_arch(lib.config);
  bool vector_arch = arch == IntermediateArch::Vector;
  bool film_arch = arch == IntermediateArch::Find || arch == IntermediateArch::GroupFind;
  int H = slot_images[0]->dim(2), W = slot_images[0]->dim(3);

  // node instances per example
  struct LeafInst {
    int example, node, subtask, slot;
  };
  struct RootInst {
    int example, node, subtask, left, right;
  };
  std::map<int, std::vector<LeafInst>> leaf_by_key;
  std::map<int, std::vector<RootInst>> root_by_key;
  std::map<std::pair<int, int>, std::vector<int>> enc_need;  // (enc key, slot) -> examples
  for (int e = 0; e < B; ++e) {
    const auto& layout = layouts[static_cast<size_t>(per_example_layout[static_cast<size_t>(e)])];
    int leaf_ordinal = 0;
    for (int i = 0; i < layout.node_count(); ++i) {
      const auto& node = layout.nodes[static_cast<size_t>(i)];
      if (node.is_leaf()) {
        int slot = slot_for_leaf(leaf_ordinal++, n_slots);
        leaf_by_key[lib.intermediate_key(node.subtask)].push_back({e, i, node.subtask, slot});
        enc_need[{lib.encoder_key(node.subtask), slot}].push_back(e);
      } else {
        root_by_key[lib.intermediate_key(node.subtask)].push_back(
            {e, i, node.subtask, node.children[0], node.children[1]});
        if (vector_arch) enc_need[{lib.encoder_key(node.subtask), 0}].push_back(e);
      }
    }
  }
  for (auto& [ks, examples] : enc_need) {
    std::sort(examples.begin(), examples.end());
    examples.erase(std::unique(examples.begin(), examples.end()), examples.end());
  }

  // encode per (key, slot); under train-mode batchnorm the null image joins
  // the real batch (batch statistics need more than the lone null row)
  bool fold_null = lib.config.use_batchnorm && train;
  std::map<std::pair<int, int>, TensorPtr<T>> feats;
  std::map<std::pair<int, int>, std::vector<int>> feat_pos;  // example -> row
  std::map<int, TensorPtr<T>> null_feats;
  for (auto& [ks, examples] : enc_need) {
    auto [key, slot] = ks;
    bool identity = static_cast<int>(examples.size()) == B;
    auto base = slot_images.at(static_cast<size_t>(slot));
    TensorPtr<T> enc_in = identity ? base : gather_batch(base, examples);
    if (fold_null) {
      auto zero = Tensor<T>::create({1, 3, H, W});
      auto enc = encode_image(lib, concat_batch<T>({enc_in, zero}), key, train);
      std::vector<int> real(examples.size());
      std::iota(real.begin(), real.end(), 0);
      feats[ks] = gather_batch(enc, real);
      if (!null_feats.count(key)) null_feats[key] = gather_batch(enc, {static_cast<int>(examples.size())});
    } else {
      feats[ks] = encode_image(lib, enc_in, key, train);
    }
    std::vector<int> pos(static_cast<size_t>(B), -1);
    for (size_t r = 0; r < examples.size(); ++r) pos[static_cast<size_t>(examples[r])] = static_cast<int>(r);
    feat_pos[ks] = std::move(pos);
  }
  if (!vector_arch && !fold_null) {
    for (auto& [ks, rows] : enc_need) {
      if (null_feats.count(ks.first)) continue;
      auto zero = Tensor<T>::create({1, 3, H, W});
      null_feats[ks.first] = encode_image(lib, zero, ks.first, train);
    }
  }

  // one bank of encoded features (and one of null encodings) so one gather
  // can mix encoder keys and slots
  std::vector<TensorPtr<T>> bank_parts;
  std::map<std::pair<int, int>, int> bank_offset;
  {
    int off = 0;
    for (auto& [ks, t] : feats) {
      bank_offset[ks] = off;
      off += t->dim(0);
      bank_parts.push_back(t);
    }
  }
  auto bank = bank_parts.size() == 1 ? bank_parts[0] : concat_batch(bank_parts);
  std::map<int, int> null_offset;
  TensorPtr<T> null_bank;
  if (!null_feats.empty()) {
    std::vector<TensorPtr<T>> parts;
    int off = 0;
    for (auto& [k, t] : null_feats) {
      null_offset[k] = off++;
      parts.push_back(t);
    }
    null_bank = parts.size() == 1 ? parts[0] : concat_batch(parts);
  }
  auto bank_row = [&](int enc_key, int slot, int example) {
    auto ks = std::make_pair(enc_key, slot);
    return bank_offset.at(ks) + feat_pos.at(ks)[static_cast<size_t>(example)];
  };
  auto maybe_gather = [&](const TensorPtr<T>& src, const std::vector<int>& rows) {
    bool identity = src->dim(0) == static_cast<int>(rows.size());
    for (size_t i = 0; identity && i < rows.size(); ++i) identity = rows[i] == static_cast<int>(i);
    return identity ? src : gather_batch(src, rows);
  };

  // leaf modules, one batch per intermediate key
  std::map<std::pair<int, int>, std::pair<int, int>> node_slot;  // (example, node) -> (key, row)
  std::map<int, TensorPtr<T>> leaf_out;
  for (auto& [ikey, insts] : leaf_by_key) {
    std::vector<int> img_rows, null_rows, subtasks;
    for (auto& li : insts) {
      img_rows.push_back(bank_row(lib.encoder_key(li.subtask), li.slot, li.example));
      if (!vector_arch) null_rows.push_back(null_offset.at(lib.encoder_key(li.subtask)));
      subtasks.push_back(li.subtask);
    }
    auto s_img = maybe_gather(bank, img_rows);
    TensorPtr<T> out;
    if (vector_arch) {
      auto emb = gather_batch(lib.embedding, subtasks);
      out = vector_forward_batch<T>(lib, ikey, emb, nullptr, nullptr, s_img);
    } else {
      auto s_y = gather_batch(null_bank, null_rows);
      if (film_arch) {
        auto gamma = gather_batch(lib.embedding, subtasks);
        out = film_forward_batch(lib, ikey, gamma, s_img, s_y);
      } else {
        out = residual_forward_batch(lib, ikey, s_img, s_y);
      }
    }
    for (size_t r = 0; r < insts.size(); ++r)
      node_slot[{insts[r].example, insts[r].node}] = {ikey, static_cast<int>(r)};
    leaf_out[ikey] = out;
  }

  // bank of leaf outputs for the root gathers
  std::map<int, int> leaf_bank_offset;
  TensorPtr<T> child_bank;
  {
    std::vector<TensorPtr<T>> parts;
    int off = 0;
    for (auto& [k, t] : leaf_out) {
      leaf_bank_offset[k] = off;
      off += t->dim(0);
      parts.push_back(t);
    }
    if (!parts.empty()) child_bank = parts.size() == 1 ? parts[0] : concat_batch(parts);
  }
  auto child_row = [&](int example, int node) {
    auto [k, r] = node_slot.at({example, node});
    return leaf_bank_offset.at(k) + r;
  };

  // root modules, one batch per intermediate key
  std::map<int, TensorPtr<T>> root_out;
  for (auto& [ikey, insts] : root_by_key) {
    std::vector<int> left_rows, right_rows, subtasks, img_rows;
    for (auto& ri : insts) {
      left_rows.push_back(child_row(ri.example, ri.left));
      right_rows.push_back(child_row(ri.example, ri.right));
      subtasks.push_back(ri.subtask);
      if (vector_arch) img_rows.push_back(bank_row(lib.encoder_key(ri.subtask), 0, ri.example));
    }
    auto s_x = gather_batch(child_bank, left_rows);
    auto s_y = gather_batch(child_bank, right_rows);
    TensorPtr<T> out;
    if (vector_arch) {
      auto emb = gather_batch(lib.embedding, subtasks);
      out = vector_forward_batch(lib, ikey, emb, s_x, s_y, maybe_gather(bank, img_rows));
    } else if (film_arch) {
      out = film_forward_batch(lib, ikey, gather_batch(lib.embedding, subtasks), s_x, s_y);
    } else {
      out = residual_forward_batch(lib, ikey, s_x, s_y);
    }
    root_out[ikey] = out;
  }

  // final bank holding every example's root-node output
  std::map<std::pair<bool, int>, int> final_offset;  // (is_tree_root, key) -> offset
  TensorPtr<T> final_bank;
  {
    std::vector<TensorPtr<T>> parts;
    int off = 0;
    for (auto& [k, t] : leaf_out) {
      final_offset[{false, k}] = off;
      off += t->dim(0);
      parts.push_back(t);
    }
    for (auto& [k, t] : root_out) {
      final_offset[{true, k}] = off;
      off += t->dim(0);
      parts.push_back(t);
    }
    final_bank = parts.size() == 1 ? parts[0] : concat_batch(parts);
  }
  std::vector<int> final_row(static_cast<size_t>(B), -1);
  std::vector<int> cls_key_of(static_cast<size_t>(B), 0);
  for (auto& [ikey, insts] : leaf_by_key)
    for (size_t r = 0; r < insts.size(); ++r) {
      const auto& layout = layouts[static_cast<size_t>(per_example_layout[static_cast<size_t>(insts[r].example)])];
      if (layout.nodes.size() == 1)
        final_row[static_cast<size_t>(insts[r].example)] = final_offset.at({false, ikey}) + static_cast<int>(r);
    }
  for (auto& [ikey, insts] : root_by_key)
    for (size_t r = 0; r < insts.size(); ++r)
      final_row[static_cast<size_t>(insts[r].example)] = final_offset.at({true, ikey}) + static_cast<int>(r);
  for (int e = 0; e < B; ++e) {
    const auto& layout = layouts[static_cast<size_t>(per_example_layout[static_cast<size_t>(e)])];
    cls_key_of[static_cast<size_t>(e)] = lib.classifier_key(layout.nodes[static_cast<size_t>(layout.root)].subtask);
  }

  // classify per key over gathered root outputs, then restore example order
  std::map<int, std::vector<int>> cls_examples;
  for (int e = 0; e < B; ++e) cls_examples[cls_key_of[static_cast<size_t>(e)]].push_back(e);
  std::vector<TensorPtr<T>> logits_parts;
  std::vector<int> emitted;
  for (auto& [key, examples] : cls_examples) {
    std::vector<int> rows;
    for (int e : examples) rows.push_back(final_row[static_cast<size_t>(e)]);
    auto feats_in = maybe_gather(final_bank, rows);
    if (vector_arch) feats_in = reshape(feats_in, {feats_in->dim(0), lib.config.channels, 1, 1});
    logits_parts.push_back(classify(lib, feats_in, key, train));
    for (int e : examples) emitted.push_back(e);
  }
  auto all_logits = logits_parts.size() == 1 ? logits_parts[0] : concat_batch(logits_parts);
  std::vector<int> position_of(static_cast<size_t>(B), -1);
  for (size_t j = 0; j < emitted.size(); ++j)
    position_of[static_cast<size_t>(emitted[j])] = static_cast<int>(j);
  return maybe_gather(all_logits, position_of);
}

#define MODNET_INSTANTIATE_EXEC(T)                                                                   \
  template struct ExecutionTrace<T>;                                                                 \
  template ExecutionTrace<T> trace<T>(const ProgramLayout&, const std::vector<TensorPtr<T>>&,        \
                                      const Library<T>&, bool);                                      \
  template TensorPtr<T> execute<T>(const ProgramLayout&, const std::vector<TensorPtr<T>>&,           \
                                   const Library<T>&, bool);                                         \
  template TensorPtr<T> execute_mixed<T>(const std::vector<ProgramLayout>&, const std::vector<int>&, \
                                         const std::vector<TensorPtr<T>>&, const Library<T>&, bool);

MODNET_INSTANTIATE_EXEC(float)
MODNET_INSTANTIATE_EXEC(double)

}  // namespace modnet
