// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale sequence diffusion transformer predicting the contextual
// residual logit added to the matched filter.
//
//   inputs    c_in (x - 1/2) and 2 (sc - 1/2), grouped into one patch per token
//   trunk     patch embedding + sinusoidal positions, then pre-LN blocks
//             (multi-head attention, SwiGLU feed-forward) with AdaLN-zero
//             shift/scale/gate modulation from a log-sigma embedding
//   head      per-bit states from the patch token plus a local embedding of
//             (noisy bit, sc bit, bit position), modulated MLP, one logit
//
// Every residual path ends in a zero-initialized projection, so a fresh
// network returns exactly the matched-filter posterior. Gradients are
// computed by hand-written reverse-mode passes over the fixed architecture.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bitdiff/diffusion_core.hpp"
#include "bitdiff/rng.hpp"

namespace bitdiff {

struct NetConfig {
  std::size_t blocks = 2;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t ff_width = 256;
  std::size_t head_width = 32;
  std::size_t patch_size = 3;  // bits per token
  bool sc_enabled = true;
  double p_sc = 0.5;
  bool positions = true;  // sinusoidal absolute positions

  void validate() const;
  /// One line of space-separated key=value pairs.
  std::string serialize() const;
  static NetConfig parse(const std::string& line);
};

enum class ParamGroup { embedding, time, modulation, attention, feed_forward, head };

const char* group_name(ParamGroup group);

struct ParamView {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  ParamGroup group = ParamGroup::embedding;
  bool zero_init = false;
  bool decay = false;  // weight matrices only

  std::size_t size() const { return rows * cols; }
};

class ParamLayout {
 public:
  static ParamLayout build(const NetConfig& config);

  const std::vector<ParamView>& views() const { return views_; }
  const ParamView& find(const std::string& name) const;
  std::size_t size() const { return size_; }

 private:
  void add(std::string name, std::size_t rows, std::size_t cols, ParamGroup group,
           bool zero_init = false);

  std::vector<ParamView> views_;
  std::size_t size_ = 0;
};

struct Parameters {
  NetConfig config;
  ParamLayout layout;
  std::vector<double> values;

  /// Scaled-normal weights, zero biases, zero modulation and output projections.
  static Parameters init(const NetConfig& config, std::uint64_t seed);
  std::span<double> view(const std::string& name);
  std::span<const double> view(const std::string& name) const;
};

/// Residual logits for `batch` examples of S bits each; example b uses noise
/// level sigmas[b] and self-conditioning input sc (neutral value 0.5).
void forward_residual(const Parameters& params, std::span<const double> x, std::size_t batch,
                      std::span<const double> sigmas, std::span<const double> sc,
                      std::span<double> residual, const DiffusionSpec& spec);

/// Single example: residual network combined with the matched filter.
/// An empty sc means the neutral input.
DenoiserOutput forward_denoise(const Parameters& params, std::span<const double> x, double sigma,
                               std::span<const double> sc, const DiffusionSpec& spec);

/// Batched probabilities at a shared sigma; the sampler callback shape.
void denoise_batch(const Parameters& params, std::span<const double> x, std::size_t batch,
                   double sigma, std::span<const double> sc, std::span<double> out,
                   const DiffusionSpec& spec);

/// Per-example noise and self-conditioning coin flips for one loss call.
struct BatchNoise {
  std::vector<double> eps;       // batch * S
  std::vector<std::uint8_t> use_sc;  // batch
};

BatchNoise draw_batch_noise(std::size_t batch, std::size_t bits, double p_sc, Rng& rng);

struct LossGrad {
  double loss = 0.0;  // mean weighted loss over the batch
  std::vector<double> gradient;
  std::vector<double> unweighted;  // per example
  std::vector<double> weighted;    // per example
};

/// Gradient pass with a fixed self-conditioning input, treated as a constant.
LossGrad loss_and_grad_fixed(const Parameters& params, std::span<const double> x0,
                             std::span<const double> sigmas, std::span<const double> eps,
                             std::span<const double> sc, const DiffusionSpec& spec);

/// Full training loss: rows flagged in noise.use_sc get a detached first pass
/// whose probabilities feed the gradient pass; other rows see the neutral
/// input. With sc disabled the flags are ignored.
LossGrad loss_and_grad(const Parameters& params, std::span<const double> x0,
                       std::span<const double> sigmas, const BatchNoise& noise,
                       const DiffusionSpec& spec);

/// Self-conditioning inputs the detached pass produces for a batch.
std::vector<double> self_condition_inputs(const Parameters& params, std::span<const double> x0,
                                          std::span<const double> sigmas, const BatchNoise& noise,
                                          const DiffusionSpec& spec);

/// Forward-only version of loss_and_grad_fixed.
double loss_value(const Parameters& params, std::span<const double> x0,
                  std::span<const double> sigmas, std::span<const double> eps,
                  std::span<const double> sc, const DiffusionSpec& spec);

/// Per-example weighted losses with the residual forced to zero.
std::vector<double> matched_filter_losses(std::span<const double> x0,
                                          std::span<const double> sigmas,
                                          std::span<const double> eps, const DiffusionSpec& spec);

struct GradcheckEntry {
  std::size_t index = 0;
  std::string view;
  ParamGroup group = ParamGroup::embedding;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
};

/// Central finite differences on `coords` coordinates spread evenly over the
/// parameter groups. Relative error is |a - n| / max(|a| + |n|, floor).
GradcheckReport gradcheck(const Parameters& params, std::span<const double> x0,
                          std::span<const double> sigmas, std::span<const double> eps,
                          std::span<const double> sc, const DiffusionSpec& spec,
                          std::size_t coords, Rng& rng, double step = 1e-5, double floor = 1e-6);

/// Replace every parameter with a scaled normal draw, zero-init views
/// included, so that all gradient paths are active.
void randomize_parameters(Parameters& params, Rng& rng, double scale = 1.0);

}  // namespace bitdiff
