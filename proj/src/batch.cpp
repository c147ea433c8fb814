#include "mtl/batch.hpp"

#include <algorithm>

namespace mtl {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

TensorD SeqBatch::example_features(std::size_t b) const {
  if (!has_features()) throw ContractError("batch: no features");
  const Index frames = frame_lengths[b];
  const Index dim = features.shape()[2];
  const Index stride = features.shape()[1] * dim;
  VectorX<double> data = features.data().segment(static_cast<Index>(b) * stride, frames * dim);
  return TensorD(Shape{frames, dim}, std::move(data));
}

std::size_t SeqBatch::predicted_tokens() const {
  std::size_t n = 0;
  for (Index len : lengths) n += static_cast<std::size_t>(len - 1);
  return n;
}

SeqBatch make_batch(const std::vector<std::vector<int>>& seqs, const std::vector<TensorD>& feats,
                    Split split, int task, std::vector<std::uint64_t> ids) {
  if (seqs.empty()) throw SetupError("batch: no examples");
  if (!feats.empty() && feats.size() != seqs.size()) {
    throw DimensionError("batch: feature count does not match sequence count");
  }
  SeqBatch batch;
  batch.split = split;
  batch.task = task;
  batch.utterance_ids = std::move(ids);
  Index longest = 0;
  for (const auto& s : seqs) longest = std::max<Index>(longest, static_cast<Index>(s.size()) + 2);
  for (const auto& s : seqs) {
    std::vector<int> row;
    row.reserve(static_cast<std::size_t>(longest));
    row.push_back(kBegin);
    row.insert(row.end(), s.begin(), s.end());
    row.push_back(kEnd);
    batch.lengths.push_back(static_cast<Index>(row.size()));
    row.resize(static_cast<std::size_t>(longest), kPad);
    batch.tokens.push_back(std::move(row));
  }
  if (!feats.empty()) {
    Index frames = 0;
    const Index dim = feats[0].cols();
    for (const auto& f : feats) {
      if (f.cols() != dim) throw DimensionError("batch: inconsistent feature width");
      frames = std::max(frames, f.rows());
    }
    batch.features = TensorD(Shape{static_cast<Index>(feats.size()), frames, dim});
    for (std::size_t b = 0; b < feats.size(); ++b) {
      batch.frame_lengths.push_back(feats[b].rows());
      batch.features.data().segment(static_cast<Index>(b) * frames * dim, feats[b].size()) =
          feats[b].data();
    }
  }
  return batch;
}

void require_trainable(const SeqBatch& batch) {
  if (batch.split == Split::Test) {
    throw ContractError("training code received a batch from a test split");
  }
}

}  // namespace mtl
