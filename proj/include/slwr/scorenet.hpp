#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "slwr/model.hpp"

namespace slwr {

/// Taylor jet carried through the network: value, first and second derivative
/// with respect to one designated input direction, first derivative with
/// respect to a second direction.
struct Jet {
  double v = 0.0;    // value
  double dr = 0.0;   // d/drho_hat   (d/dx for the mean-field closure net)
  double drr = 0.0;  // d2/drho_hat2
  double dt = 0.0;   // d/dt
};

/// Positional encoding (sin 2^0 pi z, cos 2^0 pi z, ..., sin 2^{M-1} pi z,
/// cos 2^{M-1} pi z) for a coordinate pre-scaled to [0, 1].
std::vector<double> encode_coordinate(double z, int levels);

/// Scratch space reused across evaluations of one network; holds the forward
/// caches the reverse pass consumes.
struct MlpWorkspace {
  std::vector<Jet> in;
  std::vector<std::vector<Jet>> z;  // pre-activation jets per layer
  std::vector<std::vector<Jet>> a;  // post-activation jets per layer
  std::vector<std::vector<Jet>> adj;  // reverse-pass scratch
};

/// Fully-connected tanh network evaluated on jets. The forward pass
/// propagates second-order Taylor coefficients in the seeded direction and
/// first-order in t; the reverse pass accumulates exact parameter gradients
/// of any scalar function of the four output components.
class Mlp {
 public:
  /// depth = number of hidden tanh layers; a final linear layer maps to a
  /// scalar. Xavier-uniform initialisation from the given seed.
  Mlp(int n_inputs, int width, int depth, std::uint64_t seed);

  Jet forward(MlpWorkspace& ws) const;  // consumes ws.in
  /// adj holds dF/d(output components); grad (length n_params) is accumulated
  /// into. When in_adjoint is non-null the input jets' adjoints are returned.
  void backward(MlpWorkspace& ws, const Jet& adj, double* grad,
                std::vector<Jet>* in_adjoint = nullptr) const;

  int n_inputs() const { return n_in_; }
  int width() const { return width_; }
  int depth() const { return depth_; }
  int n_params() const { return static_cast<int>(params_.size()); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

 private:
  int n_layers() const { return depth_ + 1; }
  int layer_in(int l) const { return l == 0 ? n_in_ : width_; }
  int layer_out(int l) const { return l == depth_ ? 1 : width_; }

  int n_in_, width_, depth_;
  std::vector<double> params_;
  std::vector<int> w_off_, b_off_;
};

/// Scalar score network s_theta(rho_hat; x, t) with positional encoding of
/// (x, t) and exact input derivatives.
class ScoreModel {
 public:
  ScoreModel(int depth, int width, int encoding_levels, double rho_max, double domain_length,
             double horizon, std::uint64_t seed);

  /// Returns (s, ds/drho, d2s/drho2, ds/dt) at physical coordinates.
  Jet eval(double rho_hat, double x, double t, MlpWorkspace& ws) const;
  /// Accumulates dF/dtheta given adj = dF/d(s, ds/drho, d2s/drho2, ds/dt)
  /// for the point most recently evaluated into ws.
  void backward(MlpWorkspace& ws, const Jet& adj, double* grad_theta) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  int encoding_levels() const { return levels_; }
  double rho_max() const { return rho_max_; }
  double domain_length() const { return length_; }
  double horizon() const { return horizon_; }

 private:
  Mlp net_;
  int levels_;
  double rho_max_, length_, horizon_;
};

enum class ClosureKind { StructuredM, MeanFieldNet, Direct };

/// Learnable advection closure b_phi with exact rho_hat derivatives.
///   StructuredM:  b = -f'(rho_hat) m_phi(rho_hat, x, t)
///   MeanFieldNet: b = -f'(rho_hat) d/dx rho_bar_phi(x, t)
///   Direct:       b = b_phi(rho_hat, x, t)
class ClosureModel {
 public:
  ClosureModel(ClosureKind kind, FluxFunction flux, int depth, int width, int encoding_levels,
               double domain_length, double horizon, std::uint64_t seed);

  /// Returns (b, db/drho, d2b/drho2, db/dt).
  Jet eval(double rho_hat, double x, double t, MlpWorkspace& ws) const;
  void backward(MlpWorkspace& ws, double rho_hat, const Jet& adj, double* grad_phi) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  ClosureKind kind() const { return kind_; }
  const FluxFunction& flux() const { return flux_; }

 private:
  ClosureKind kind_;
  FluxFunction flux_;
  Mlp net_;
  int levels_;
  double length_, horizon_;
};

// -- Physics evaluator ---------------------------------------------------------

/// Positional encoding as network inputs. encode(x, t, M) concatenates the
/// per-coordinate encodings.
std::vector<double> encode(double x, double t, int levels);

struct VelocityJets {
  double v = 0.0;
  double dv_drho = 0.0;
  double d2v_drho2 = 0.0;
};

/// (s, ds/drho, d2s/drho2, ds/dt) through fresh workspaces; test-facing API.
Jet eval_with_derivatives(const ScoreModel& model, double rho_hat, double x, double t);

/// Closed probability-flow velocity v = b_phi - 1/2 dSigma^2 - 1/2 Sigma^2 s
/// and its first two density derivatives.
VelocityJets closed_velocity(const ScoreModel& model, const ClosureModel& closure,
                             const TrafficModel& traffic, double rho_hat, double x, double t);

/// Score-form FPE residual  R = ds/dt + v ds/drho + (dv/drho) s + d2v/drho2.
double fpe_residual(const ScoreModel& model, const ClosureModel& closure,
                    const TrafficModel& traffic, double rho_hat, double x, double t);

/// Sigma^2 and its first three density derivatives at a point.
struct SigmaTerms {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
};

SigmaTerms sigma_terms(const NoiseStructure& noise, double rho_hat, double x);

/// Residual plus the adjoint seeds needed for gradient accumulation:
/// dR/d(score jet), dR/d(closure jet), and dR/d(Sigma^2 derivatives 0..3).
struct ResidualRecord {
  double residual = 0.0;
  Jet d_score;
  Jet d_closure;
  std::array<double, 4> d_sigma_sq{};  // wrt A, A', A'', A'''
};

/// Assembles the residual and its adjoint seeds from evaluated jets.
ResidualRecord residual_from_parts(const Jet& score, const Jet& closure_drift,
                                   const SigmaTerms& sigma);

ResidualRecord fpe_residual_record(const ScoreModel& model, const ClosureModel& closure,
                                   const TrafficModel& traffic, double rho_hat, double x,
                                   double t, MlpWorkspace& ws_score, MlpWorkspace& ws_closure);

// -- Checkpoint (magic "SLWRCKPT1", architecture header, f64 payload, CRC32) ----

struct Checkpoint {
  int score_depth = 4, score_width = 64, levels = 4;
  int closure_kind = 0;  // 0 StructuredM, 1 MeanFieldNet, 2 Direct
  int closure_depth = 2, closure_width = 32;
  std::vector<double> theta;
  std::vector<double> phi;
  std::vector<double> alphas;  // fitted noise amplitudes (may be empty)
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace slwr
