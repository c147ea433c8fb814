#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

/// Reserved ids shared by every vocabulary.
inline constexpr int kPad = 0;
inline constexpr int kBegin = 1;
inline constexpr int kEnd = 2;
inline constexpr int kSpace = 3;
inline constexpr int kFirstLanguageToken = 4;

enum class Split { Train, Val, Test };

std::string_view split_name(Split s);

/// Padded batch of (features, token sequence) pairs.
///
/// `tokens[b]` holds begin, the utterance tokens, end, then pad up to the
/// longest example; `lengths[b]` counts the non-pad entries. `features` is
/// [batch, max_frames, feat_dim] with zero padding past `frame_lengths[b]`;
/// it is empty (rank 0) for token-only batches.
struct SeqBatch {
  std::vector<std::vector<int>> tokens;
  std::vector<Index> lengths;
  TensorD features;
  std::vector<Index> frame_lengths;
  std::vector<std::uint64_t> utterance_ids;
  int task = -1;
  Split split = Split::Train;

  std::size_t size() const { return tokens.size(); }
  bool has_features() const { return features.rank() == 3; }
  std::span<const int> sequence(std::size_t b) const {
    return {tokens[b].data(), static_cast<std::size_t>(lengths[b])};
  }
  /// Unpadded [frames, feat_dim] block of example b.
  TensorD example_features(std::size_t b) const;
  std::size_t predicted_tokens() const;
};

/// Builds a padded batch from per-example pieces. `seqs` exclude sentinels;
/// `feats` may be empty for token-only batches.
SeqBatch make_batch(const std::vector<std::vector<int>>& seqs, const std::vector<TensorD>& feats,
                    Split split = Split::Train, int task = -1,
                    std::vector<std::uint64_t> ids = {});

/// Aborts (ContractError) when a batch drawn from a test split reaches training code.
void require_trainable(const SeqBatch& batch);

}  // namespace mtl
