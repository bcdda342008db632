#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slwr/errors.hpp"
#include "slwr/model.hpp"
#include "slwr/rng.hpp"
#include "slwr/scorenet.hpp"

namespace slwr {

struct TrainConfig {
  // loss weights (lambda is re-balanced during training)
  double lambda = 1.0;
  double lambda_bc = 0.1;

  // multi-scale DSM; strictly decreasing scales, weights proportional to
  // sigma^2 and normalised to sum to one
  std::vector<double> dsm_scales;
  std::vector<double> dsm_weights;

  int batch_obs = 128;
  int batch_collocation = 512;
  int batch_boundary = 64;

  double learning_rate = 1e-3;
  int epochs = 2000;  // warm phase
  int finetune_max_epochs = 500;
  double finetune_tol = 1e-6;
  int balance_every = 50;
  std::uint64_t seed = 1;

  int score_depth = 4;
  int score_width = 64;
  int encoding_levels = 4;
  ClosureKind closure_kind = ClosureKind::StructuredM;
  int closure_depth = 2;
  int closure_width = 32;
  bool closure_frozen = false;

  bool learn_noise = false;

  double bc_margin_frac = 0.02;          // boundary queries at margin_frac * rho_max
  double mollifier_width_frac = 0.02;    // initial-law mollifier, fraction of rho_max
  int reconstruction_nodes = 48;         // density reconstruction grid for the BC loss

  /// Fills dsm_scales/dsm_weights with a geometric ladder between
  /// max_frac * rho_max and min_frac * rho_max.
  void set_geometric_scales(double rho_max, int count = 5, double max_frac = 0.1,
                            double min_frac = 0.005);
  void validate() const;  // throws ConfigError
};

TrainConfig load_train_config(const std::string& path, double rho_max);

struct Observation {
  double x = 0.0;
  double t = 0.0;
  double rho = 0.0;  // density, after any speed conversion
};

struct ObservationSet {
  std::vector<Observation> records;

  /// CSV columns x, t, kind in {rho, u}, value. Speed records are converted
  /// through the decreasing branch of the model's speed relation.
  static ObservationSet from_csv(const std::string& path, const TrafficModel& model);
  static ObservationSet from_density_records(std::vector<Observation> records,
                                             const TrafficModel& model);
};

struct TrainLogRow {
  int epoch = 0;
  double learning_rate = 0.0;
  double loss_total = 0.0;
  double loss_sm = 0.0;
  double loss_pf = 0.0;
  double loss_bc = 0.0;
  double lambda = 0.0;
  char phase = 'w';  // 'w' warm, 'f' fine-tune
};

struct TrainResult {
  ScoreModel score;
  ClosureModel closure;
  std::vector<double> alphas;  // final noise amplitudes (empty unless learned)
  std::vector<TrainLogRow> log;
};

/// Thrown when the loss diverges; carries the last finite parameter state.
class TrainingDivergedError : public NumericalError {
 public:
  TrainingDivergedError(const std::string& msg, Checkpoint last_good)
      : NumericalError(msg), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

// -- Ops ------------------------------------------------------------------------

/// Latin hypercube sample: one point per stratum per axis after independent
/// seeded permutations.
std::vector<std::array<double, 3>> lhs_sample(int n,
                                              const std::array<std::array<double, 2>, 3>& bounds,
                                              std::uint64_t seed);

/// Multi-scale denoising score-matching loss with boundary-aware rejection
/// resampling (the Gaussian target -eps/sigma stays exact for the truncated
/// kernel).
double dsm_loss(const ScoreModel& model, const ObservationSet& obs, const TrainConfig& config,
                rng::CounterRng& stream);

/// Mean squared score-form FPE residual over a collocation set.
double physics_loss(const ScoreModel& model, const ClosureModel& closure,
                    const TrafficModel& traffic,
                    const std::vector<std::array<double, 3>>& collocation);

/// Squared boundary-flux surrogate at rho_hat in {margin, rho_max - margin}
/// plus squared log-density mismatch against the mollified initial law.
double bc_loss(const ScoreModel& model, const ClosureModel& closure,
               const TrafficModel& traffic,
               const std::vector<std::array<double, 2>>& boundary_points,  // (x, t)
               const std::vector<std::array<double, 2>>& initial_points,   // (x, rho_hat)
               double mollifier_width, const TrainConfig& config);

/// Algorithm: joint score-matching + physics-informed training. Adam-style
/// updates with cosine decay, gradient-norm balancing of lambda every
/// balance_every epochs, then a second decay phase at eta/10 until
/// |delta loss| < finetune_tol. Deterministic given the config seed.
TrainResult train(const ObservationSet& obs, const TrafficModel& traffic,
                  const TrainConfig& config);

/// Joint optimisation with trainable noise amplitudes alpha_k = exp(raw_k);
/// the factorised noise keeps endpoint vanishing by construction.
TrainResult learn_noise(const ObservationSet& obs, const TrafficModel& traffic,
                        const TrainConfig& config);

void save_train_log(const std::vector<TrainLogRow>& log, const std::string& path);

}  // namespace slwr
