#include "slwr/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "slwr/errors.hpp"

namespace slwr {

namespace {

Jet scaled(const Jet& j, double c) { return Jet{c * j.v, c * j.dr, c * j.drr, c * j.dt}; }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Per-mode Sigma^2 derivative stack with trainable amplitudes
/// alpha_k = exp(raw_k); falls back to the model's stored noise when raw is
/// null.
SigmaTerms sigma_terms_for(const NoiseStructure& noise, const std::vector<double>* raw,
                           double rho_hat, double x) {
  if (!raw) return sigma_terms(noise, rho_hat, x);
  SigmaTerms out;
  for (std::size_t k = 0; k < noise.n_modes(); ++k) {
    const double a2 = std::exp(2.0 * (*raw)[k]);
    const double e = noise.basis_value(k, x);
    const double e2 = e * e;
    out.a0 += a2 * noise.mode_profile_sq_deriv(k, 0, rho_hat) * e2;
    out.a1 += a2 * noise.mode_profile_sq_deriv(k, 1, rho_hat) * e2;
    out.a2 += a2 * noise.mode_profile_sq_deriv(k, 2, rho_hat) * e2;
    out.a3 += a2 * noise.mode_profile_sq_deriv(k, 3, rho_hat) * e2;
  }
  return out;
}

/// d(Sigma^2 derivative of order j)/d raw_k = 2 alpha_k^2 P_kj(rho) e_k^2.
void sigma_term_raw_grads(const NoiseStructure& noise, const std::vector<double>& raw,
                          double rho_hat, double x, const std::array<double, 4>& upstream,
                          double scale, double* grad_raw) {
  for (std::size_t k = 0; k < noise.n_modes(); ++k) {
    const double a2 = std::exp(2.0 * raw[k]);
    const double e = noise.basis_value(k, x);
    const double e2 = e * e;
    double acc = 0.0;
    for (int j = 0; j < 4; ++j)
      acc += upstream[j] * 2.0 * a2 * noise.mode_profile_sq_deriv(k, j, rho_hat) * e2;
    grad_raw[k] += scale * acc;
  }
}

struct GradSinks {
  double* theta = nullptr;
  double* phi = nullptr;
  double* raw = nullptr;
};

// -- DSM -----------------------------------------------------------------------

double dsm_pass(const ScoreModel& model, const ObservationSet& obs, const TrainConfig& config,
                rng::CounterRng& stream, GradSinks grads, MlpWorkspace& ws) {
  if (obs.records.empty()) throw ConfigError("dsm_loss: no observations");
  if (config.dsm_scales.empty()) throw ConfigError("dsm_loss: no DSM scales configured");
  const double rho_max = model.rho_max();

  // a scale is infeasible when fewer than 1% of perturbations stay inside
  for (double sigma : config.dsm_scales) {
    for (const Observation& o : obs.records) {
      const double accept =
          normal_cdf((rho_max - o.rho) / sigma) - normal_cdf((0.0 - o.rho) / sigma);
      if (accept < 0.01)
        throw ConfigError("dsm_loss: scale " + std::to_string(sigma) +
                          " rejects > 99% of perturbations at rho_obs = " +
                          std::to_string(o.rho));
    }
  }

  const int batch = std::min<int>(config.batch_obs, 1 << 22);
  double loss = 0.0;
  for (int b = 0; b < batch; ++b) {
    const std::size_t idx = std::min<std::size_t>(
        static_cast<std::size_t>(stream.next_uniform() * obs.records.size()),
        obs.records.size() - 1);
    const Observation& o = obs.records[idx];
    for (std::size_t l = 0; l < config.dsm_scales.size(); ++l) {
      const double sigma = config.dsm_scales[l];
      const double w = config.dsm_weights[l];
      double eps = 0.0, rho_tilde = 0.0;
      int attempts = 0;
      do {
        eps = stream.next_normal();
        rho_tilde = o.rho + sigma * eps;
        if (++attempts > 100000)
          throw ConfigError("dsm_loss: rejection sampling stuck at scale " +
                            std::to_string(sigma));
      } while (!(rho_tilde > 0.0 && rho_tilde < rho_max));
      const Jet s = model.eval(rho_tilde, o.x, o.t, ws);
      const double r = s.v + eps / sigma;
      loss += w * r * r / batch;
      if (grads.theta)
        model.backward(ws, Jet{2.0 * w * r / batch, 0.0, 0.0, 0.0}, grads.theta);
    }
  }
  return loss;
}

// -- Physics ---------------------------------------------------------------------

double physics_pass(const ScoreModel& model, const ClosureModel& closure,
                    const TrafficModel& traffic,
                    const std::vector<std::array<double, 3>>& pts,
                    const std::vector<double>* raw, GradSinks grads, MlpWorkspace& ws_s,
                    MlpWorkspace& ws_c) {
  if (pts.empty()) throw ConfigError("physics_loss: empty collocation set");
  const double n = static_cast<double>(pts.size());
  double loss = 0.0;
  for (const auto& pt : pts) {
    const double rho_hat = pt[0], x = pt[1], t = pt[2];
    const Jet s = model.eval(rho_hat, x, t, ws_s);
    const Jet b = closure.eval(rho_hat, x, t, ws_c);
    const SigmaTerms A = sigma_terms_for(traffic.noise, raw, rho_hat, x);
    const ResidualRecord rec = residual_from_parts(s, b, A);
    loss += rec.residual * rec.residual / n;
    const double seed = 2.0 * rec.residual / n;
    if (grads.theta) model.backward(ws_s, scaled(rec.d_score, seed), grads.theta);
    if (grads.phi) closure.backward(ws_c, rho_hat, scaled(rec.d_closure, seed), grads.phi);
    if (grads.raw && raw)
      sigma_term_raw_grads(traffic.noise, *raw, rho_hat, x, rec.d_sigma_sq, seed, grads.raw);
  }
  return loss;
}

// -- Boundary / initial --------------------------------------------------------------

/// Density reconstruction on a uniform grid shared by the boundary-flux and
/// initial-condition terms. Provides log p at a grid node and the node-wise
/// coefficients of d log p / d s_m for the reverse pass.
struct Reconstruction {
  int n = 0;          // intervals
  double delta = 0.0;
  std::vector<MlpWorkspace> ws;    // one per node, holds the forward caches
  std::vector<double> s_val;       // score values
  std::vector<double> prefix;      // trapezoid cumulative integral
  std::vector<double> omega;       // normalised quadrature weights of exp(prefix)
  std::vector<double> suffix_omega;  // suffix sums of omega
  double log_z = 0.0;              // log of shifted normaliser
  double shift = 0.0;

  void build(const ScoreModel& model, double x, double t, int n_intervals, double rho_max) {
    n = n_intervals;
    delta = rho_max / n;
    ws.resize(n + 1);
    s_val.resize(n + 1);
    prefix.assign(n + 1, 0.0);
    for (int m = 0; m <= n; ++m) s_val[m] = model.eval(m * delta, x, t, ws[m]).v;
    for (int m = 0; m < n; ++m)
      prefix[m + 1] = prefix[m] + 0.5 * delta * (s_val[m] + s_val[m + 1]);
    shift = *std::max_element(prefix.begin(), prefix.end());
    double z = 0.0;
    omega.resize(n + 1);
    for (int m = 0; m <= n; ++m) {
      const double tau = (m == 0 || m == n) ? 0.5 * delta : delta;
      omega[m] = tau * std::exp(prefix[m] - shift);
      z += omega[m];
    }
    log_z = std::log(z);
    for (double& w : omega) w /= z;
    suffix_omega.assign(n + 2, 0.0);
    for (int m = n; m >= 0; --m) suffix_omega[m] = suffix_omega[m + 1] + omega[m];
  }

  double log_p(int node) const { return prefix[node] - shift - log_z; }

  /// Coefficient of s_m in the cumulative integral up to node q.
  double prefix_coef(int q, int m) const {
    double c = 0.0;
    if (q > m) c += 0.5 * delta;
    if (m >= 1 && q >= m) c += 0.5 * delta;
    return c;
  }
  /// Coefficient of s_m in log Z (the posterior-average prefix coefficient).
  double logz_coef(int m) const {
    double c = 0.5 * delta * suffix_omega[m + 1];
    if (m >= 1) c += 0.5 * delta * suffix_omega[m];
    return c;
  }
};

double bc_pass(const ScoreModel& model, const ClosureModel& closure,
               const TrafficModel& traffic,
               const std::vector<std::array<double, 2>>& boundary_points,
               const std::vector<std::array<double, 2>>& initial_points,
               double mollifier_width, const TrainConfig& config,
               const std::vector<double>* raw, GradSinks grads, MlpWorkspace& ws_c) {
  const double rho_max = model.rho_max();
  const int n_rec = std::max(8, config.reconstruction_nodes);
  const int margin_idx = std::clamp(
      static_cast<int>(std::lround(config.bc_margin_frac * n_rec)), 1, n_rec / 4);

  Reconstruction rec;
  std::vector<double> node_coef(n_rec + 1, 0.0);
  double loss = 0.0;

  const double n_boundary_terms = std::max<std::size_t>(1, 2 * boundary_points.size());
  for (const auto& bp : boundary_points) {
    const double x = bp[0], t = bp[1];
    rec.build(model, x, t, n_rec, rho_max);
    std::fill(node_coef.begin(), node_coef.end(), 0.0);
    for (int q : {margin_idx, n_rec - margin_idx}) {
      const double rho_q = q * rec.delta;
      const Jet b = closure.eval(rho_q, x, t, ws_c);
      const SigmaTerms A = sigma_terms_for(traffic.noise, raw, rho_q, x);
      const double p_q = std::exp(rec.log_p(q));
      const double g = b.v - 0.5 * A.a1 - 0.5 * A.a0 * rec.s_val[q];
      const double flux = p_q * g;
      loss += flux * flux / n_boundary_terms;
      if (!grads.theta && !grads.phi && !grads.raw) continue;
      const double beta = 2.0 * flux / n_boundary_terms;
      if (grads.theta) {
        for (int m = 0; m <= n_rec; ++m)
          node_coef[m] += beta * flux * (rec.prefix_coef(q, m) - rec.logz_coef(m));
        node_coef[q] += beta * p_q * (-0.5 * A.a0);
      }
      if (grads.phi)
        closure.backward(ws_c, rho_q, Jet{beta * p_q, 0.0, 0.0, 0.0}, grads.phi);
      if (grads.raw && raw) {
        const std::array<double, 4> upstream{-0.5 * rec.s_val[q], -0.5, 0.0, 0.0};
        sigma_term_raw_grads(traffic.noise, *raw, rho_q, x, upstream, beta * p_q, grads.raw);
      }
    }
    if (grads.theta)
      for (int m = 0; m <= n_rec; ++m)
        if (node_coef[m] != 0.0)
          model.backward(rec.ws[m], Jet{node_coef[m], 0.0, 0.0, 0.0}, grads.theta);
  }

  const double n_init = std::max<std::size_t>(1, initial_points.size());
  for (const auto& ip : initial_points) {
    const double x = ip[0];
    const double rho_hat = ip[1];
    rec.build(model, x, 0.0, n_rec, rho_max);
    const int q = std::clamp(static_cast<int>(std::lround(rho_hat / rec.delta)), 1, n_rec - 1);
    const double rho_q = q * rec.delta;
    const double rho0 = traffic.rho0(x);
    // log-density of the truncated Gaussian mollifier
    const double zscore = (rho_q - rho0) / mollifier_width;
    const double norm = normal_cdf((rho_max - rho0) / mollifier_width) -
                        normal_cdf((0.0 - rho0) / mollifier_width);
    const double target = -0.5 * zscore * zscore -
                          std::log(mollifier_width * std::sqrt(2.0 * M_PI) * norm);
    const double mismatch = rec.log_p(q) - target;
    loss += mismatch * mismatch / n_init;
    if (grads.theta) {
      const double beta = 2.0 * mismatch / n_init;
      for (int m = 0; m <= n_rec; ++m) {
        const double c = beta * (rec.prefix_coef(q, m) - rec.logz_coef(m));
        if (c != 0.0) model.backward(rec.ws[m], Jet{c, 0.0, 0.0, 0.0}, grads.theta);
      }
    }
  }
  return loss;
}

// -- Adam ---------------------------------------------------------------------------

struct Adam {
  std::vector<double> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
  void step(std::vector<double>& params, const std::vector<double>& grad, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

double norm2(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

// -- Config ------------------------------------------------------------------------------

void TrainConfig::set_geometric_scales(double rho_max, int count, double max_frac,
                                       double min_frac) {
  if (count < 1 || !(max_frac > min_frac) || min_frac <= 0.0)
    throw ConfigError("invalid DSM scale ladder");
  dsm_scales.resize(count);
  dsm_weights.resize(count);
  const double ratio = count > 1 ? std::pow(min_frac / max_frac, 1.0 / (count - 1)) : 1.0;
  double frac = max_frac, wsum = 0.0;
  for (int l = 0; l < count; ++l) {
    dsm_scales[l] = frac * rho_max;
    dsm_weights[l] = dsm_scales[l] * dsm_scales[l];
    wsum += dsm_weights[l];
    frac *= ratio;
  }
  for (double& w : dsm_weights) w /= wsum;
}

void TrainConfig::validate() const {
  if (dsm_scales.empty() || dsm_scales.size() != dsm_weights.size())
    throw ConfigError("train config: DSM scales/weights missing or mismatched");
  for (std::size_t l = 0; l + 1 < dsm_scales.size(); ++l)
    if (!(dsm_scales[l] > dsm_scales[l + 1]))
      throw ConfigError("train config: DSM scales must be strictly decreasing");
  for (double w : dsm_weights)
    if (!(w > 0.0)) throw ConfigError("train config: DSM weights must be positive");
  if (!(lambda >= 0.0) || !(lambda_bc >= 0.0))
    throw ConfigError("train config: loss weights must be nonnegative");
  if (batch_obs < 1 || batch_collocation < 1 || batch_boundary < 1)
    throw ConfigError("train config: batch sizes must be >= 1");
  if (epochs < 0 || finetune_max_epochs < 0 || balance_every < 1)
    throw ConfigError("train config: invalid epoch counts");
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning rate must be positive");
}

TrainConfig load_train_config(const std::string& path, double rho_max) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open train config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  TrainConfig c;
  try {
    c.lambda = j.value("lambda", 1.0);
    c.lambda_bc = j.value("lambda_bc", 0.1);
    const auto jd = j.value("dsm", nlohmann::json::object());
    c.set_geometric_scales(rho_max, jd.value("n_scales", 5), jd.value("max_frac", 0.1),
                           jd.value("min_frac", 0.005));
    const auto jb = j.value("batch", nlohmann::json::object());
    c.batch_obs = jb.value("obs", 128);
    c.batch_collocation = jb.value("collocation", 512);
    c.batch_boundary = jb.value("boundary", 64);
    const auto jo = j.value("optimizer", nlohmann::json::object());
    c.learning_rate = jo.value("learning_rate", 1e-3);
    c.epochs = jo.value("epochs", 2000);
    c.finetune_max_epochs = jo.value("finetune_max_epochs", 500);
    c.finetune_tol = jo.value("finetune_tol", 1e-6);
    c.balance_every = jo.value("balance_every", 50);
    c.seed = j.value("seed", 1);
    const auto jn = j.value("network", nlohmann::json::object());
    c.score_depth = jn.value("depth", 4);
    c.score_width = jn.value("width", 64);
    c.encoding_levels = jn.value("encoding_levels", 4);
    const auto jc = j.value("closure", nlohmann::json::object());
    const std::string kind = jc.value("kind", "structured_m");
    if (kind == "structured_m")
      c.closure_kind = ClosureKind::StructuredM;
    else if (kind == "mean_field_net")
      c.closure_kind = ClosureKind::MeanFieldNet;
    else if (kind == "direct")
      c.closure_kind = ClosureKind::Direct;
    else
      throw ConfigError("unknown closure kind '" + kind + "'");
    c.closure_depth = jc.value("depth", 2);
    c.closure_width = jc.value("width", 32);
    c.closure_frozen = jc.value("frozen", false);
    c.learn_noise = j.value("learn_noise", false);
    const auto jbc = j.value("bc", nlohmann::json::object());
    c.bc_margin_frac = jbc.value("margin_frac", 0.02);
    c.mollifier_width_frac = jbc.value("mollifier_width_frac", 0.02);
    c.reconstruction_nodes = jbc.value("reconstruction_nodes", 48);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  c.validate();
  return c;
}

// -- Observations ---------------------------------------------------------------------------

ObservationSet ObservationSet::from_density_records(std::vector<Observation> records,
                                                    const TrafficModel& model) {
  for (const Observation& o : records) {
    if (!(o.rho > 0.0 && o.rho < model.rho_max()))
      throw DomainError("observation density " + std::to_string(o.rho) +
                        " outside (0, rho_max)");
    if (!(o.x >= 0.0 && o.x <= model.domain_length) || !(o.t >= 0.0 && o.t <= model.horizon))
      throw DomainError("observation location outside the space-time domain");
  }
  return ObservationSet{std::move(records)};
}

ObservationSet ObservationSet::from_csv(const std::string& path, const TrafficModel& model) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open observations '" + path + "'");
  std::vector<Observation> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("x,", 0) == 0) continue;  // header
    std::istringstream ls(line);
    std::string fx, ft, fkind, fval;
    if (!std::getline(ls, fx, ',') || !std::getline(ls, ft, ',') ||
        !std::getline(ls, fkind, ',') || !std::getline(ls, fval, ','))
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected x,t,kind,value");
    Observation o;
    o.x = std::stod(fx);
    o.t = std::stod(ft);
    const double value = std::stod(fval);
    if (fkind == "rho")
      o.rho = value;
    else if (fkind == "u")
      o.rho = model.flux.speed_inverse(value);
    else
      throw ConfigError(path + ":" + std::to_string(line_no) + ": kind must be rho or u");
    records.push_back(o);
  }
  return from_density_records(std::move(records), model);
}

// -- Ops --------------------------------------------------------------------------------------

std::vector<std::array<double, 3>> lhs_sample(
    int n, const std::array<std::array<double, 2>, 3>& bounds, std::uint64_t seed) {
  if (n < 1) throw ConfigError("lhs_sample: n must be >= 1");
  rng::CounterRng stream(seed, 0x1a5ULL);
  std::vector<std::array<double, 3>> pts(n);
  std::vector<int> perm(n);
  for (int axis = 0; axis < 3; ++axis) {
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(stream.next_uniform() * (i + 1));
      std::swap(perm[i], perm[std::min(j, i)]);
    }
    const double lo = bounds[axis][0], hi = bounds[axis][1];
    for (int i = 0; i < n; ++i) {
      const double u = stream.next_uniform();
      pts[i][axis] = lo + (hi - lo) * (perm[i] + u) / n;
    }
  }
  return pts;
}

double dsm_loss(const ScoreModel& model, const ObservationSet& obs, const TrainConfig& config,
                rng::CounterRng& stream) {
  MlpWorkspace ws;
  return dsm_pass(model, obs, config, stream, GradSinks{}, ws);
}

double physics_loss(const ScoreModel& model, const ClosureModel& closure,
                    const TrafficModel& traffic,
                    const std::vector<std::array<double, 3>>& collocation) {
  MlpWorkspace ws_s, ws_c;
  return physics_pass(model, closure, traffic, collocation, nullptr, GradSinks{}, ws_s, ws_c);
}

double bc_loss(const ScoreModel& model, const ClosureModel& closure, const TrafficModel& traffic,
               const std::vector<std::array<double, 2>>& boundary_points,
               const std::vector<std::array<double, 2>>& initial_points, double mollifier_width,
               const TrainConfig& config) {
  MlpWorkspace ws_c;
  return bc_pass(model, closure, traffic, boundary_points, initial_points, mollifier_width,
                 config, nullptr, GradSinks{}, ws_c);
}

// -- Training loop -------------------------------------------------------------------------------

namespace {

struct TrainerState {
  ScoreModel score;
  ClosureModel closure;
  std::vector<double> raw_alpha;
  bool noise_trainable = false;
};

TrainResult run_training(const ObservationSet& obs, const TrafficModel& traffic,
                         const TrainConfig& config, bool with_noise_learning) {
  config.validate();
  if (obs.records.empty()) throw ConfigError("train: observation set is empty");
  if (with_noise_learning && traffic.noise.is_constant_test())
    throw ConfigError("train: cannot learn amplitudes of constant test-mode noise");
  if (with_noise_learning && traffic.noise.n_modes() == 0)
    throw ConfigError("train: no noise modes to learn");

  const double rho_max = traffic.rho_max();
  TrainerState st{
      ScoreModel(config.score_depth, config.score_width, config.encoding_levels, rho_max,
                 traffic.domain_length, traffic.horizon, config.seed),
      ClosureModel(config.closure_kind, traffic.flux, config.closure_depth,
                   config.closure_width, config.encoding_levels, traffic.domain_length,
                   traffic.horizon, config.seed ^ 0x9e3779b97f4a7c15ULL),
      {},
      with_noise_learning};
  if (with_noise_learning) {
    for (std::size_t k = 0; k < traffic.noise.n_modes(); ++k)
      st.raw_alpha.push_back(std::log(std::max(1e-12, traffic.noise.mode(k).alpha)));
  }

  auto& theta = st.score.net().params();
  auto& phi = st.closure.net().params();
  const bool train_phi = !config.closure_frozen;

  std::vector<double> g_sm(theta.size(), 0.0);
  std::vector<double> g_pf_theta(theta.size(), 0.0), g_bc_theta(theta.size(), 0.0);
  std::vector<double> g_pf_phi(phi.size(), 0.0), g_bc_phi(phi.size(), 0.0);
  std::vector<double> g_pf_raw(st.raw_alpha.size(), 0.0), g_bc_raw(st.raw_alpha.size(), 0.0);
  std::vector<double> g_theta(theta.size(), 0.0), g_phi(phi.size(), 0.0),
      g_raw(st.raw_alpha.size(), 0.0);

  Adam adam_theta, adam_phi, adam_raw;
  adam_theta.init(theta.size());
  adam_phi.init(phi.size());
  adam_raw.init(st.raw_alpha.size());

  rng::CounterRng stream(config.seed, 0xda7a1ULL);
  MlpWorkspace ws_s, ws_c;

  TrainResult result{std::move(st.score), std::move(st.closure), {}, {}};
  ScoreModel& score = result.score;
  ClosureModel& closure = result.closure;
  std::vector<double>& raw = st.raw_alpha;

  double lambda = config.lambda;
  const double mollifier_width = config.mollifier_width_frac * rho_max;
  Checkpoint last_good;
  auto snapshot = [&]() {
    last_good.score_depth = config.score_depth;
    last_good.score_width = config.score_width;
    last_good.levels = config.encoding_levels;
    last_good.closure_kind = static_cast<int>(config.closure_kind);
    last_good.closure_depth = config.closure_depth;
    last_good.closure_width = config.closure_width;
    last_good.theta = score.net().params();
    last_good.phi = closure.net().params();
    last_good.alphas.clear();
    for (double r : raw) last_good.alphas.push_back(std::exp(r));
  };
  snapshot();

  auto run_epoch = [&](int epoch, double lr, char phase, std::uint64_t epoch_tag) {
    std::fill(g_sm.begin(), g_sm.end(), 0.0);
    std::fill(g_pf_theta.begin(), g_pf_theta.end(), 0.0);
    std::fill(g_bc_theta.begin(), g_bc_theta.end(), 0.0);
    std::fill(g_pf_phi.begin(), g_pf_phi.end(), 0.0);
    std::fill(g_bc_phi.begin(), g_bc_phi.end(), 0.0);
    std::fill(g_pf_raw.begin(), g_pf_raw.end(), 0.0);
    std::fill(g_bc_raw.begin(), g_bc_raw.end(), 0.0);

    const double loss_sm =
        dsm_pass(score, obs, config, stream, GradSinks{g_sm.data(), nullptr, nullptr}, ws_s);

    const std::array<std::array<double, 2>, 3> bounds{
        {{0.0, rho_max}, {0.0, traffic.domain_length}, {0.0, traffic.horizon}}};
    const auto collocation =
        lhs_sample(config.batch_collocation, bounds, rng::mix64(config.seed) ^ epoch_tag);
    const double loss_pf = physics_pass(
        score, closure, traffic, collocation, st.noise_trainable ? &raw : nullptr,
        GradSinks{g_pf_theta.data(), train_phi ? g_pf_phi.data() : nullptr,
                  st.noise_trainable ? g_pf_raw.data() : nullptr},
        ws_s, ws_c);

    std::vector<std::array<double, 2>> boundary_pts(config.batch_boundary / 2);
    for (auto& bp : boundary_pts)
      bp = {stream.next_uniform() * traffic.domain_length,
            stream.next_uniform() * traffic.horizon};
    std::vector<std::array<double, 2>> initial_pts(config.batch_boundary -
                                                   config.batch_boundary / 2);
    for (auto& ip : initial_pts) {
      const double x = stream.next_uniform() * traffic.domain_length;
      const double z = (2.0 * stream.next_uniform() - 1.0) * 3.0;
      const double rho_hat =
          std::clamp(traffic.rho0(x) + z * mollifier_width, 1e-3 * rho_max,
                     (1.0 - 1e-3) * rho_max);
      ip = {x, rho_hat};
    }
    const double loss_bc =
        bc_pass(score, closure, traffic, boundary_pts, initial_pts, mollifier_width, config,
                st.noise_trainable ? &raw : nullptr,
                GradSinks{g_bc_theta.data(), train_phi ? g_bc_phi.data() : nullptr,
                          st.noise_trainable ? g_bc_raw.data() : nullptr},
                ws_c);

    const double total = loss_sm + lambda * loss_pf + config.lambda_bc * loss_bc;
    if (!std::isfinite(total) || total > 1e6)
      throw TrainingDivergedError("training diverged at epoch " + std::to_string(epoch) +
                                      " (loss = " + std::to_string(total) + ")",
                                  last_good);

    for (std::size_t i = 0; i < theta.size(); ++i)
      g_theta[i] = g_sm[i] + lambda * g_pf_theta[i] + config.lambda_bc * g_bc_theta[i];
    adam_theta.step(theta, g_theta, lr);
    if (train_phi && !phi.empty()) {
      for (std::size_t i = 0; i < phi.size(); ++i)
        g_phi[i] = lambda * g_pf_phi[i] + config.lambda_bc * g_bc_phi[i];
      adam_phi.step(phi, g_phi, lr);
    }
    if (st.noise_trainable && !raw.empty()) {
      for (std::size_t i = 0; i < raw.size(); ++i)
        g_raw[i] = lambda * g_pf_raw[i] + config.lambda_bc * g_bc_raw[i];
      adam_raw.step(raw, g_raw, lr);
    }
    snapshot();

    // gradient-norm balancing: keep the data and physics pulls comparable
    if (phase == 'w' && (epoch + 1) % config.balance_every == 0) {
      const double n_sm = norm2(g_sm);
      double n_pf = norm2(g_pf_theta);
      if (train_phi) {
        const double npr = norm2(g_pf_phi);
        n_pf = std::sqrt(n_pf * n_pf + npr * npr);
      }
      if (n_sm > 0.0 && n_pf > 0.0) {
        const double target = n_sm / n_pf;
        if (lambda > 2.0 * target || lambda < 0.5 * target)
          lambda = std::clamp(target, 1e-8, 1e8);
      }
    }

    result.log.push_back(TrainLogRow{epoch, lr, total, loss_sm, loss_pf, loss_bc, lambda, phase});
    return total;
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr =
        config.learning_rate * 0.5 *
        (1.0 + std::cos(M_PI * static_cast<double>(epoch) / std::max(1, config.epochs)));
    run_epoch(epoch, lr, 'w', 0x77000000ULL + epoch);
  }

  // second decay phase at eta / 10 with the warm phase's stopping rule
  if (config.epochs > 0 && config.finetune_max_epochs > 0) {
    double prev = result.log.empty() ? 0.0 : result.log.back().loss_total;
    for (int epoch = 0; epoch < config.finetune_max_epochs; ++epoch) {
      const double lr = (config.learning_rate / 10.0) * 0.5 *
                        (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                        std::max(1, config.finetune_max_epochs)));
      const double total = run_epoch(config.epochs + epoch, lr, 'f', 0xf7000000ULL + epoch);
      if (std::fabs(total - prev) < config.finetune_tol) break;
      prev = total;
    }
  }

  for (double r : raw) result.alphas.push_back(std::exp(r));
  return result;
}

}  // namespace

TrainResult train(const ObservationSet& obs, const TrafficModel& traffic,
                  const TrainConfig& config) {
  return run_training(obs, traffic, config, config.learn_noise);
}

TrainResult learn_noise(const ObservationSet& obs, const TrafficModel& traffic,
                        const TrainConfig& config) {
  return run_training(obs, traffic, config, true);
}

void save_train_log(const std::vector<TrainLogRow>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out.precision(12);
  out << "epoch,phase,learning_rate,loss_total,loss_sm,loss_pf,loss_bc,lambda\n";
  for (const auto& row : log)
    out << row.epoch << "," << row.phase << "," << row.learning_rate << "," << row.loss_total
        << "," << row.loss_sm << "," << row.loss_pf << "," << row.loss_bc << "," << row.lambda
        << "\n";
}

}  // namespace slwr
