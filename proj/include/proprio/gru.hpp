#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "proprio/rng.hpp"
#include "proprio/spatial.hpp"

namespace proprio {

// Network architecture constants. Input and output signals are normalized by
// fixed per-field divisors so gate pre-activations stay O(1) at physical
// walking magnitudes; the divisors are part of the architecture (not stored
// in weights files) and the output head is scaled back to N*m by
// kOutputScaleNm.
inline constexpr int kGruInputSize = 24;
inline constexpr int kGruHiddenSize = 150;
inline constexpr int kGruOutputSize = 6;
inline constexpr int kTrainingHorizon = 100;  // steps per TBPTT chunk (1 s at 100 Hz)
inline constexpr double kOutputScaleNm = 100.0;

// One 100 Hz sample of the estimator input, physical units.
struct InputFrame {
  Vec6 q_leg = Vec6::Zero();          // rad
  Vec6 qdot_leg = Vec6::Zero();       // rad/s
  Vec6 tau_d_leg = Vec6::Zero();      // commanded joint torque, N*m
  Vec3 pelvis_ang_vel = Vec3::Zero(); // rad/s, pelvis frame
  Vec3 pelvis_lin_acc = Vec3::Zero(); // m/s^2, pelvis frame (specific force)

  // Exactly 24 numbers in field order.
  VecX flatten() const;
};

// Per-field normalization divisors for the 24-entry flattened frame:
// q 1 rad, qdot 4 rad/s, tau 100 N*m, gyro 2 rad/s, accel 10 m/s^2.
VecX standard_input_scale();

// flatten() divided by the standard scale; throws std::invalid_argument on
// non-finite entries.
VecX scaled_input(const InputFrame& frame);

struct GruParameters {
  MatX wz, wr, wn;                       // hidden x input
  MatX uz, ur, un;                       // hidden x hidden
  VecX bz_in, br_in, bn_in;              // hidden
  VecX bz_rec, br_rec, bn_rec;           // hidden
  MatX w_out;                            // output x hidden
  VecX b_out;                            // output

  explicit GruParameters(int input = kGruInputSize, int hidden = kGruHiddenSize,
                         int output = kGruOutputSize);

  int input_size() const { return static_cast<int>(wz.cols()); }
  int hidden_size() const { return static_cast<int>(wz.rows()); }
  int output_size() const { return static_cast<int>(w_out.rows()); }

  // All entries drawn U(-1/sqrt(hidden), +1/sqrt(hidden)).
  static GruParameters random_init(Rng& rng, int input = kGruInputSize,
                                   int hidden = kGruHiddenSize,
                                   int output = kGruOutputSize);
};

// Flat elementwise views over every tensor, in the fixed serialization field
// order: Wz, Wr, Wn, Uz, Ur, Un, bz_in, br_in, bn_in, bz_rec, br_rec, bn_rec,
// W_out, b_out.
std::vector<Eigen::Map<Eigen::ArrayXd>> tensor_views(GruParameters& p);
std::vector<Eigen::Map<const Eigen::ArrayXd>> tensor_views(const GruParameters& p);

struct HiddenState {
  VecX h;
  static HiddenState zero(int hidden = kGruHiddenSize) { return {VecX::Zero(hidden)}; }
};

// One gated-recurrent-unit update on a physical input frame (the standard
// input scaling is applied internally):
//   z = sigmoid(Wz x + Uz h + bz_in + bz_rec)
//   r = sigmoid(Wr x + Ur h + br_in + br_rec)
//   n = tanh(Wn x + bn_in + r .* (Un h + bn_rec))
//   h' = (1 - z) .* n + z .* h
HiddenState gru_cell_step(const GruParameters& p, const InputFrame& x,
                          const HiddenState& h_prev);

// Output head in physical units: kOutputScaleNm * (W_out h + b_out).
VecX gru_output(const GruParameters& p, const HiddenState& h);

// Everything the backward pass needs, for a batch laid out as columns.
struct ForwardCache {
  std::vector<MatX> x;       // scaled inputs, input x batch, per step
  std::vector<MatX> h_prev;  // hidden x batch, per step
  std::vector<MatX> z, r, n; // gate activations, per step
  std::vector<MatX> k;       // recurrent candidate term Un h + bn_rec, per step
  MatX h_last;               // hidden x batch after the final step
  int steps() const { return static_cast<int>(x.size()); }
  int batch() const { return x.empty() ? 0 : static_cast<int>(x[0].cols()); }
};

// Batched core on pre-scaled numeric columns. Returns per-step physical
// outputs (output x batch); fills the cache when given one and writes the
// final hidden block to h_final when given one.
std::vector<MatX> forward_cols(const GruParameters& p, const std::vector<MatX>& x_cols,
                               const MatX& h0, ForwardCache* cache,
                               MatX* h_final = nullptr);

struct SequenceResult {
  MatX tau_hat;        // output x steps, physical N*m
  HiddenState h_final;
  ForwardCache cache;  // filled only in training mode
};

// Sequence evaluation over physical input frames. Training mode builds the
// backward cache and requires exactly `horizon` steps; inference mode accepts
// any length >= 1 and skips the cache.
SequenceResult forward_sequence(const GruParameters& p, const std::vector<InputFrame>& seq,
                                const HiddenState& h0, bool training_mode = true,
                                int horizon = kTrainingHorizon);

struct BackwardResult {
  GruParameters grads;  // same shapes as the parameters
  double loss = 0.0;    // scaled-space MSE over batch*steps*output elements
};

// Exact gradients of the mean-squared error between the scaled output head
// and targets/kOutputScaleNm, summed over the whole chunk and divided by
// (batch * steps * output). No gradient flows into h0 (truncation boundary).
// targets: per-step physical N*m matrices, output x batch, aligned with the
// cache; loss_weights: optional per-output weighting (default all ones).
BackwardResult backward_tbptt(const GruParameters& p, const ForwardCache& cache,
                              const std::vector<MatX>& targets,
                              const VecX& loss_weights = VecX());

struct AdamState {
  GruParameters first_moment;
  GruParameters second_moment;
  long step_count = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  explicit AdamState(int input = kGruInputSize, int hidden = kGruHiddenSize,
                     int output = kGruOutputSize)
      : first_moment(input, hidden, output), second_moment(input, hidden, output) {}
};

// Standard bias-corrected Adam step; mutates params and opt. lr must be > 0.
void adam_update(AdamState& opt, GruParameters& params, const GruParameters& grads,
                 double lr);

// Linear decay from lr0 to 0.01*lr0 over the first half of training, constant
// afterwards. Throws std::out_of_range outside [0, total_epochs).
double lr_at_epoch(int epoch, int total_epochs = 200, double lr0 = 1e-4);

// Weights file: magic "GRUW", u32 version, u32 input/hidden/output sizes
// (little-endian), then every tensor row-major as 64-bit floats in the field
// order of tensor_views.
void save_gru_weights(const GruParameters& p, const std::string& path);

struct GruShape {
  int input = kGruInputSize;
  int hidden = kGruHiddenSize;
  int output = kGruOutputSize;
};

// Loads a weights file; when `expect` is set (default: the standard shape),
// a differing header is a shape-mismatch error naming both values. Pass
// std::nullopt to accept whatever the header declares.
GruParameters load_gru_weights(const std::string& path,
                               std::optional<GruShape> expect = GruShape{});

// Single-precision inference mirror of the f64 network.
struct GruF32 {
  Eigen::MatrixXf wz, wr, wn, uz, ur, un;
  Eigen::VectorXf bz, br, bn_in, bn_rec;  // input+recurrent gate biases pre-summed
  Eigen::MatrixXf w_out;
  Eigen::VectorXf b_out;
  Eigen::VectorXf input_scale_inv;
};

GruF32 to_f32(const GruParameters& p);

// One f32 cell step + output head on a physical frame; h is carried state.
Eigen::VectorXf gru_step_f32(const GruF32& p, const InputFrame& x, Eigen::VectorXf& h);

}  // namespace proprio
