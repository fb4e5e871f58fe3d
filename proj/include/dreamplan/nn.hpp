#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dreamplan/errors.hpp"
#include "dreamplan/rng.hpp"
#include "json.hpp"

namespace dreamplan {

/// Column-per-sample activations: rows are features, columns are batch entries.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ParamEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

/// Flat float64 parameter vector with a named, ordered layout.
class ParamStore {
 public:
  /// Appends a zero-filled tensor; returns its offset. Names must be unique.
  std::size_t add(const std::string& name, std::vector<std::size_t> shape);

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> view(const std::string& name);
  std::span<const double> view(const std::string& name) const;
  /// Contiguous span covering every entry whose name starts with `prefix`.
  std::span<double> block(const std::string& prefix);
  std::span<const double> block(const std::string& prefix) const;

  const ParamEntry& entry(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<ParamEntry>& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::pair<std::size_t, std::size_t> prefix_range(const std::string& prefix) const;

  // Fixed alignment keeps Eigen's vectorized kernels on the same code path from run to run;
  // with FMA the peeled scalar path rounds differently.
  std::vector<double, Eigen::aligned_allocator<double>> values_;
  std::vector<ParamEntry> layout_;
};

/// Fully connected network: tanh on hidden layers, identity on the output layer.
struct MlpSpec {
  std::vector<std::size_t> widths;  // input, hidden..., output

  std::size_t input() const { return widths.front(); }
  std::size_t output() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }
  std::size_t param_count() const;
  void validate() const;
};

/// Registers `prefix.l<k>.w` (out x in, row-major) and `prefix.l<k>.b` for every layer.
void add_mlp_params(ParamStore& store, const std::string& prefix, const MlpSpec& spec);

/// Glorot-uniform weights, zero biases; optionally zeroes the output layer's weights too.
void init_mlp(std::span<double> params, const MlpSpec& spec, Rng& rng, bool zero_output_layer = false);

/// Layer inputs kept for the backward pass. activations[0] is the input, back() the output.
struct MlpCache {
  std::vector<Matrix> activations;

  const Matrix& output() const { return activations.back(); }
};

MlpCache mlp_forward(const MlpSpec& spec, std::span<const double> params, const Matrix& input);

/// Accumulates d(loss)/d(params) into `param_grad` and returns d(loss)/d(input)
/// (an empty matrix when `want_input_grad` is false).
Matrix mlp_backward(const MlpSpec& spec, std::span<const double> params, const MlpCache& cache,
                    const Matrix& output_grad, std::span<double> param_grad, bool want_input_grad = true);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update in place. Throws NumericalError on non-finite gradients.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamOptions& opt);

/// Sinusoidal embedding of t/T: first half sines, second half cosines. `dim` must be even.
Vector time_embed(int t, int total_steps, int dim = 16);

// Checkpoints

class CheckpointError : public Error {
 public:
  enum class Reason { io, bad_magic, version_mismatch, truncated, inconsistent_header };

  CheckpointError(Reason reason, const std::string& what) : Error(what), reason_(reason) {}
  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  ParamStore store;
  std::string config_hash;
  /// Extra header fields (architecture, schedule constants) stored under "meta".
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Gradient checking

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero components from dominating.
double relative_error(double analytic, double numeric, double floor = 1e-2);

}  // namespace dreamplan
