#include "dreamplan/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

namespace dreamplan {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMajorMatrix>;
using Weights = Eigen::Map<RowMajorMatrix>;
using ConstBias = Eigen::Map<const Vector>;
using Bias = Eigen::Map<Vector>;

std::size_t ParamStore::add(const std::string& name, std::vector<std::size_t> shape) {
  if (contains(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  ParamEntry e{name, std::move(shape), values_.size(), n};
  values_.resize(values_.size() + n, 0.0);
  layout_.push_back(std::move(e));
  return layout_.back().offset;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  for (const ParamEntry& e : layout_)
    if (e.name == name) return e;
  throw InvalidArgument("no parameter named '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(layout_.begin(), layout_.end(), [&](const ParamEntry& e) { return e.name == name; });
}

std::span<double> ParamStore::view(const std::string& name) {
  const ParamEntry& e = entry(name);
  return std::span<double>(values_).subspan(e.offset, e.size);
}

std::span<const double> ParamStore::view(const std::string& name) const {
  const ParamEntry& e = entry(name);
  return std::span<const double>(values_).subspan(e.offset, e.size);
}

std::pair<std::size_t, std::size_t> ParamStore::prefix_range(const std::string& prefix) const {
  std::size_t begin = values_.size();
  std::size_t end = 0;
  bool found = false;
  for (const ParamEntry& e : layout_) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    if (found && e.offset != end) throw InvalidArgument("parameters under '" + prefix + "' are not contiguous");
    if (!found) begin = e.offset;
    end = e.offset + e.size;
    found = true;
  }
  if (!found) throw InvalidArgument("no parameters under '" + prefix + "'");
  return {begin, end};
}

std::span<double> ParamStore::block(const std::string& prefix) {
  const auto [b, e] = prefix_range(prefix);
  return std::span<double>(values_).subspan(b, e - b);
}

std::span<const double> ParamStore::block(const std::string& prefix) const {
  const auto [b, e] = prefix_range(prefix);
  return std::span<const double>(values_).subspan(b, e - b);
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * widths[l] + widths[l + 1];
  return n;
}

void MlpSpec::validate() const {
  if (widths.size() < 2) throw InvalidArgument("MLP needs an input and an output width");
  for (std::size_t w : widths)
    if (w == 0) throw InvalidArgument("MLP widths must be positive");
}

void add_mlp_params(ParamStore& store, const std::string& prefix, const MlpSpec& spec) {
  spec.validate();
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    store.add(base + ".w", {spec.widths[l + 1], spec.widths[l]});
    store.add(base + ".b", {spec.widths[l + 1]});
  }
}

void init_mlp(std::span<double> params, const MlpSpec& spec, Rng& rng, bool zero_output_layer) {
  if (params.size() != spec.param_count()) throw ShapeError("init_mlp: parameter count mismatch");
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.widths[l];
    const std::size_t out = spec.widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    const bool zero = zero_output_layer && l + 1 == spec.layers();
    for (std::size_t k = 0; k < in * out; ++k) params[off + k] = zero ? 0.0 : rng.uniform(-limit, limit);
    off += in * out;
    for (std::size_t k = 0; k < out; ++k) params[off + k] = 0.0;
    off += out;
  }
}

MlpCache mlp_forward(const MlpSpec& spec, std::span<const double> params, const Matrix& input) {
  if (params.size() != spec.param_count()) throw ShapeError("mlp_forward: parameter count mismatch");
  if (static_cast<std::size_t>(input.rows()) != spec.input())
    throw ShapeError("mlp_forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                     std::to_string(spec.input()));
  MlpCache cache;
  cache.activations.reserve(spec.layers() + 1);
  cache.activations.push_back(input);
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(spec.widths[l]);
    const auto out = static_cast<Eigen::Index>(spec.widths[l + 1]);
    ConstWeights w(params.data() + off, out, in);
    off += static_cast<std::size_t>(in * out);
    ConstBias b(params.data() + off, out);
    off += static_cast<std::size_t>(out);
    Matrix z = w * cache.activations.back();
    z.colwise() += b;
    if (l + 1 < spec.layers()) z = z.array().tanh().matrix();
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

Matrix mlp_backward(const MlpSpec& spec, std::span<const double> params, const MlpCache& cache,
                    const Matrix& output_grad, std::span<double> param_grad, bool want_input_grad) {
  if (params.size() != spec.param_count() || param_grad.size() != spec.param_count())
    throw ShapeError("mlp_backward: parameter count mismatch");
  if (cache.activations.size() != spec.layers() + 1) throw ShapeError("mlp_backward: cache does not match spec");
  if (output_grad.rows() != cache.output().rows() || output_grad.cols() != cache.output().cols())
    throw ShapeError("mlp_backward: output gradient shape mismatch");

  std::vector<std::size_t> offsets(spec.layers());
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    offsets[l] = off;
    off += spec.widths[l + 1] * spec.widths[l] + spec.widths[l + 1];
  }

  Matrix delta = output_grad;  // gradient w.r.t. pre-activation of the current layer
  for (std::size_t l = spec.layers(); l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(spec.widths[l]);
    const auto out = static_cast<Eigen::Index>(spec.widths[l + 1]);
    if (l + 1 < spec.layers()) {
      const Matrix& h = cache.activations[l + 1];
      delta = (delta.array() * (1.0 - h.array().square())).matrix();
    }
    const Matrix& a_prev = cache.activations[l];
    Weights gw(param_grad.data() + offsets[l], out, in);
    Bias gb(param_grad.data() + offsets[l] + static_cast<std::size_t>(in * out), out);
    // Products go to owned temporaries first: the caller's buffer may have any alignment.
    const Matrix step_w = delta * a_prev.transpose();
    const Vector step_b = delta.rowwise().sum();
    gw += step_w;
    gb += step_b;
    if (l == 0 && !want_input_grad) return Matrix();
    ConstWeights w(params.data() + offsets[l], out, in);
    delta = w.transpose() * delta;
  }
  return delta;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamOptions& opt) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: length mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient");
  state.step += 1;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.m[k] = opt.beta1 * state.m[k] + (1.0 - opt.beta1) * grads[k];
    state.v[k] = opt.beta2 * state.v[k] + (1.0 - opt.beta2) * grads[k] * grads[k];
    const double m_hat = state.m[k] / c1;
    const double v_hat = state.v[k] / c2;
    params[k] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

Vector time_embed(int t, int total_steps, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw InvalidArgument("time embedding dimension must be positive and even");
  if (total_steps <= 0) throw InvalidArgument("time embedding needs a positive step count");
  const int half = dim / 2;
  const double pos = static_cast<double>(t) / total_steps;
  Vector e(dim);
  for (int k = 0; k < half; ++k) {
    // Frequencies span pi/2 (one quarter turn over the whole range) to pi/2 * T (one per step).
    const double expo = half > 1 ? static_cast<double>(k) / (half - 1) : 0.0;
    const double freq = 0.5 * std::numbers::pi * std::pow(static_cast<double>(total_steps), expo);
    e[k] = std::sin(freq * pos);
    e[half + k] = std::cos(freq * pos);
  }
  return e;
}

// Checkpoint format: "DPCK", u32 version, u32 header length, JSON header, float64 values (all little-endian).

namespace {

constexpr char kMagic[4] = {'D', 'P', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(p[k]) << (8 * k);
  return v;
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["kind"] = ckpt.kind;
  header["layout"] = nlohmann::json::array();
  for (const ParamEntry& e : ckpt.store.layout()) header["layout"].push_back({e.name, e.shape});
  header["config_hash"] = ckpt.config_hash;
  if (!ckpt.meta.empty()) header["meta"] = ckpt.meta;
  const std::string text = header.dump();

  std::string bytes(kMagic, 4);
  put_u32(bytes, kCheckpointVersion);
  put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  for (double v : ckpt.store.values()) put_f64(bytes, v);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Reason::io, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Reason::io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using R = CheckpointError::Reason;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(R::io, "cannot open checkpoint " + path.string());
  const std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());

  if (raw.size() < 4 || std::memcmp(raw.data(), kMagic, 4) != 0)
    throw CheckpointError(R::bad_magic, path.string() + " is not a checkpoint (bad magic)");
  if (raw.size() < 12) throw CheckpointError(R::truncated, path.string() + ": truncated preamble");
  const std::uint32_t version = get_u32(p + 4);
  if (version != kCheckpointVersion)
    throw CheckpointError(R::version_mismatch, path.string() + ": unsupported version " + std::to_string(version));
  const std::uint32_t header_len = get_u32(p + 8);
  if (raw.size() < 12 + static_cast<std::size_t>(header_len))
    throw CheckpointError(R::truncated, path.string() + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.substr(12, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(R::inconsistent_header, path.string() + ": bad header JSON: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.config_hash = header.at("config_hash").get<std::string>();
    for (const auto& item : header.at("layout")) {
      if (!item.is_array() || item.size() != 2) throw CheckpointError(R::inconsistent_header, "bad layout entry");
      ckpt.store.add(item[0].get<std::string>(), item[1].get<std::vector<std::size_t>>());
    }
    if (header.contains("meta")) ckpt.meta = header["meta"];
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(R::inconsistent_header, path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw CheckpointError(R::inconsistent_header, path.string() + ": " + e.what());
  }

  const std::size_t body = raw.size() - 12 - header_len;
  const std::size_t expected = ckpt.store.size() * 8;
  if (body < expected) throw CheckpointError(R::truncated, path.string() + ": truncated parameter data");
  if (body > expected)
    throw CheckpointError(R::inconsistent_header, path.string() + ": layout does not account for trailing data");
  const unsigned char* data = p + 12 + header_len;
  auto values = ckpt.store.values();
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = get_f64(data + 8 * k);
  return ckpt;
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

}  // namespace dreamplan
