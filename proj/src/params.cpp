#include "mtl/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mtl/checksum.hpp"

namespace mtl {

void require_compatible(const Params& a, const Params& b, std::string_view what) {
  if (!a.compatible(b)) {
    throw StructureError(std::string(what) + ": parameter and gradient structures differ");
  }
}

Params zeros_like(const Params& p) {
  Params out;
  for (const auto& [name, t] : p) out.add(name, TensorD(t.shape()));
  return out;
}

Params add_scaled(const Params& a, const Params& b, double factor) {
  require_compatible(a, b, "add_scaled");
  Params out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    TensorD t = a.tensor(i);
    t.data() += factor * b.tensor(i).data();
    out.add(a.entry(i).first, std::move(t));
  }
  return out;
}

Params scaled(const Params& a, double factor) {
  Params out;
  for (const auto& [name, t] : a) {
    TensorD s = t;
    s.data() *= factor;
    out.add(name, std::move(s));
  }
  return out;
}

double dot(const Params& a, const Params& b) {
  require_compatible(a, b, "dot");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a.tensor(i).data().dot(b.tensor(i).data());
  return total;
}

double global_norm(const Params& p) { return std::sqrt(dot(p, p)); }

VectorX<double> flatten(const Params& p) {
  VectorX<double> flat(p.element_count());
  Index offset = 0;
  for (const auto& [name, t] : p) {
    flat.segment(offset, t.size()) = t.data();
    offset += t.size();
  }
  return flat;
}

Params unflatten(const Params& like, const VectorX<double>& flat) {
  if (flat.size() != like.element_count()) throw StructureError("unflatten: size mismatch");
  Params out;
  Index offset = 0;
  for (const auto& [name, t] : like) {
    out.add(name, TensorD(t.shape(), VectorX<double>(flat.segment(offset, t.size()))));
    offset += t.size();
  }
  return out;
}

ParamVars<double> bind(Tape<double>& tape, const Params& params) {
  ParamVars<double> vars;
  for (const auto& [name, t] : params) vars.add(name, tape.variable(t));
  return vars;
}

ParamVars<Dual> bind(Tape<Dual>& tape, const Params& params, const Params& tangent) {
  require_compatible(params, tangent, "bind");
  ParamVars<Dual> vars;
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars.add(params.entry(i).first, tape.variable(to_dual(params.tensor(i), &tangent.tensor(i))));
  }
  return vars;
}

Params sgd_step(const Params& params, const GradMap& grads, double lr) {
  require_compatible(params, grads, "sgd_step");
  Params out = add_scaled(params, grads, -lr);
  out.set_version(params.version() + 1);
  return out;
}

AdamState AdamState::for_params(const Params& params) {
  AdamState s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  return s;
}

std::pair<Params, AdamState> adam_step(const AdamState& state, const Params& params,
                                       const GradMap& grads, double lr) {
  require_compatible(params, grads, "adam_step");
  require_compatible(params, state.m, "adam_step");
  require_compatible(params, state.v, "adam_step");
  AdamState next = state;
  next.step += 1;
  const double t = static_cast<double>(next.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  Params out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads.tensor(i).data();
    auto& m = next.m.tensor(i).data();
    auto& v = next.v.tensor(i).data();
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    TensorD p = params.tensor(i);
    p.data().array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
    out.add(params.entry(i).first, std::move(p));
  }
  out.set_version(params.version() + 1);
  return {std::move(out), std::move(next)};
}

namespace {

constexpr char kMagic[4] = {'M', 'T', 'L', 'C'};

template <typename T>
void put(std::string& buf, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  buf.append(reinterpret_cast<const char*>(bits.data()), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::array<unsigned char, sizeof(T)> bits{};
    std::memcpy(bits.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptionError("checkpoint: truncated data");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Params& params) {
  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint64_t>(buf, params.size());
  for (const auto& [name, t] : params) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put<std::uint64_t>(buf, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.size(); ++i) put<double>(buf, t[i]);
  }
  Fnv1a h;
  h.update(buf);
  put<std::uint64_t>(buf, h.digest());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("checkpoint: write failed");
}

Params read_checkpoint(std::istream& in) {
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 4 + 8 + 8) throw CorruptionError("checkpoint: truncated data");
  const std::string_view body(bytes.data(), bytes.size() - 8);
  Fnv1a h;
  h.update(body);
  if (Reader(std::string_view(bytes).substr(body.size())).get<std::uint64_t>() != h.digest()) {
    throw CorruptionError("checkpoint: checksum mismatch");
  }
  Reader r(body);
  if (r.get_string(4) != std::string_view(kMagic, 4)) throw CorruptionError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CorruptionError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint64_t>();
  Params params;
  for (std::uint64_t e = 0; e < count; ++e) {
    std::string name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim == 0 || dim > (1ULL << 40)) throw CorruptionError("checkpoint: bad dimension");
      shape.push_back(static_cast<Index>(dim));
    }
    const Index n = shape_size(shape);
    if (static_cast<std::size_t>(n) * 8 > r.remaining()) throw CorruptionError("checkpoint: truncated data");
    VectorX<double> data(n);
    for (Index i = 0; i < n; ++i) data[i] = r.get<double>();
    params.add(std::move(name), TensorD(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw CorruptionError("checkpoint: trailing bytes");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const Params& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot open " + path.string());
  write_checkpoint(out, params);
}

Params load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptionError("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace mtl
