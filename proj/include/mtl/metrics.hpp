#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtl/models.hpp"

namespace mtl {

/// Levenshtein distance with unit costs.
std::size_t edit_distance(std::span<const int> a, std::span<const int> b);

/// edit_distance(ref, hyp) / |ref|. Tokens play the role of characters.
double cer(std::span<const int> ref, std::span<const int> hyp);

/// Accumulates edits and reference lengths over a test set (corpus-level CER).
struct CerTotal {
  std::size_t edits = 0;
  std::size_t ref_tokens = 0;

  void add(std::span<const int> ref, std::span<const int> hyp);
  double rate() const;
};

/// exp(total NLL / predicted tokens) over every batch.
double perplexity(const Params& params, const LmConfig& cfg, std::span<const SeqBatch> corpus);

struct Delta {
  double absolute = 0.0;  // baseline − value, in the metric's own units
  double relative = 0.0;  // percent of baseline
};

/// Positive means the value improves on the baseline for error-like metrics.
Delta relative_delta(double baseline, double value);

struct CurvePoint {
  std::int64_t iteration = 0;
  std::string split;
  double loss = 0.0;
  double wall_ms = 0.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

/// Appends rows "run_id,split,iteration,loss,wall_ms" to a CSV, flushing
/// after every row. Iterations must increase within each split.
class CurveWriter {
 public:
  /// Opens for append; the header is written only when the file is new or empty.
  CurveWriter(const std::filesystem::path& path, std::string run_id);

  void log(const CurvePoint& p);
  const std::string& run_id() const { return run_id_; }

 private:
  std::ofstream out_;
  std::string run_id_;
  std::map<std::string, std::int64_t> last_;
};

/// Rows of the given run in file order (all runs when run_id is empty).
std::vector<CurvePoint> read_curves(const std::filesystem::path& path, const std::string& run_id = "");

/// Drops rows whose iteration exceeds `iteration` (resuming after a crash).
void truncate_curves(const std::filesystem::path& path, std::int64_t iteration);

/// First iteration whose loss is ≤ threshold, or -1.
std::int64_t iterations_to_threshold(std::span<const CurvePoint> series, double threshold);

/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

}  // namespace mtl
