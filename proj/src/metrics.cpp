#include "mtl/metrics.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "mtl/errors.hpp"

namespace mtl {

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double cer(std::span<const int> ref, std::span<const int> hyp) {
  if (ref.empty()) throw ContractError("cer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

void CerTotal::add(std::span<const int> ref, std::span<const int> hyp) {
  if (ref.empty()) throw ContractError("cer: empty reference");
  edits += edit_distance(ref, hyp);
  ref_tokens += ref.size();
}

double CerTotal::rate() const {
  if (ref_tokens == 0) throw ContractError("cer: no references");
  return static_cast<double>(edits) / static_cast<double>(ref_tokens);
}

double perplexity(const Params& params, const LmConfig& cfg, std::span<const SeqBatch> corpus) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const SeqBatch& b : corpus) {
    NllTotal t = lm_nll(params, cfg, b);
    nll += t.nll;
    tokens += t.tokens;
  }
  if (tokens == 0) throw ContractError("perplexity: empty corpus");
  if (!std::isfinite(nll)) throw NumericError("perplexity: non-finite NLL");
  return std::exp(nll / static_cast<double>(tokens));
}

Delta relative_delta(double baseline, double value) {
  if (!(baseline > 0.0)) throw ContractError("relative_delta: baseline must be positive");
  return {baseline - value, 100.0 * (baseline - value) / baseline};
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

CurveWriter::CurveWriter(const std::filesystem::path& path, std::string run_id) : run_id_(std::move(run_id)) {
  if (run_id_.empty() || run_id_.find_first_of(",\n") != std::string::npos) {
    throw ContractError("curves: run id must be non-empty without commas or newlines");
  }
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (!fresh) {
    for (const CurvePoint& p : read_curves(path, run_id_)) last_[p.split] = p.iteration;
  }
  out_.open(path, std::ios::app | std::ios::binary);
  if (!out_) throw Error("curves: cannot open " + path.string());
  if (fresh) out_ << "run_id,split,iteration,loss,wall_ms\n" << std::flush;
}

void CurveWriter::log(const CurvePoint& p) {
  if (p.split.empty() || p.split.find_first_of(",\n") != std::string::npos) {
    throw ContractError("curves: bad split name");
  }
  auto it = last_.find(p.split);
  if (it != last_.end() && p.iteration <= it->second) {
    throw ContractError("curves: iteration " + std::to_string(p.iteration) + " does not follow " +
                        std::to_string(it->second) + " in split " + p.split);
  }
  last_[p.split] = p.iteration;
  out_ << run_id_ << ',' << p.split << ',' << p.iteration << ',' << format_double(p.loss) << ','
       << format_double(p.wall_ms) << '\n'
       << std::flush;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
  return f;
}

template <typename T>
T parse_number(const std::string& s, const std::filesystem::path& path) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw CorruptionError("curves: bad number '" + s + "' in " + path.string());
  }
  return v;
}

}  // namespace

std::vector<CurvePoint> read_curves(const std::filesystem::path& path, const std::string& run_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptionError("curves: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "run_id,split,iteration,loss,wall_ms") {
    throw CorruptionError("curves: missing header in " + path.string());
  }
  std::vector<CurvePoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 5) throw CorruptionError("curves: malformed row in " + path.string());
    if (!run_id.empty() && f[0] != run_id) continue;
    out.push_back({parse_number<std::int64_t>(f[2], path), f[1], parse_number<double>(f[3], path),
                   parse_number<double>(f[4], path)});
  }
  return out;
}

void truncate_curves(const std::filesystem::path& path, std::int64_t iteration) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path, std::ios::binary);
  std::string kept;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!header) {
      auto f = split_csv(line);
      if (f.size() != 5 || parse_number<std::int64_t>(f[2], path) > iteration) continue;
    }
    header = false;
    kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << kept;
}

std::int64_t iterations_to_threshold(std::span<const CurvePoint> series, double threshold) {
  for (const CurvePoint& p : series) {
    if (p.loss <= threshold) return p.iteration;
  }
  return -1;
}

}  // namespace mtl
