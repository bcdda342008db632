#include "slwr/scorenet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "slwr/crc32.hpp"
#include "slwr/errors.hpp"
#include "slwr/rng.hpp"

namespace slwr {

std::vector<double> encode_coordinate(double z, int levels) {
  std::vector<double> out(2 * levels);
  double omega = M_PI;
  for (int m = 0; m < levels; ++m) {
    out[2 * m] = std::sin(omega * z);
    out[2 * m + 1] = std::cos(omega * z);
    omega *= 2.0;
  }
  return out;
}

std::vector<double> encode(double x, double t, int levels) {
  std::vector<double> out = encode_coordinate(x, levels);
  const std::vector<double> tt = encode_coordinate(t, levels);
  out.insert(out.end(), tt.begin(), tt.end());
  return out;
}

// -- Mlp ----------------------------------------------------------------------

Mlp::Mlp(int n_inputs, int width, int depth, std::uint64_t seed)
    : n_in_(n_inputs), width_(width), depth_(depth) {
  if (n_inputs < 1 || width < 1 || depth < 1)
    throw ConfigError("Mlp requires n_inputs, width, depth >= 1");
  int offset = 0;
  for (int l = 0; l < n_layers(); ++l) {
    w_off_.push_back(offset);
    offset += layer_out(l) * layer_in(l);
    b_off_.push_back(offset);
    offset += layer_out(l);
  }
  params_.assign(offset, 0.0);
  rng::CounterRng stream(seed, 0x6d6c70);  // init stream distinct from data streams
  for (int l = 0; l < n_layers(); ++l) {
    const double limit = std::sqrt(6.0 / (layer_in(l) + layer_out(l)));
    double* w = params_.data() + w_off_[l];
    for (int i = 0; i < layer_out(l) * layer_in(l); ++i)
      w[i] = limit * (2.0 * stream.next_uniform() - 1.0);
    // biases start at zero
  }
}

Jet Mlp::forward(MlpWorkspace& ws) const {
  if (static_cast<int>(ws.in.size()) != n_in_)
    throw DomainError("Mlp::forward: expected " + std::to_string(n_in_) + " inputs, got " +
                      std::to_string(ws.in.size()));
  ws.z.resize(n_layers());
  ws.a.resize(n_layers());
  const std::vector<Jet>* prev = &ws.in;
  for (int l = 0; l < n_layers(); ++l) {
    const int nin = layer_in(l), nout = layer_out(l);
    ws.z[l].assign(nout, Jet{});
    const double* w = params_.data() + w_off_[l];
    const double* b = params_.data() + b_off_[l];
    for (int i = 0; i < nout; ++i) {
      const double* wi = w + static_cast<std::size_t>(i) * nin;
      double v = b[i], dr = 0.0, drr = 0.0, dt = 0.0;
      for (int j = 0; j < nin; ++j) {
        const Jet& aj = (*prev)[j];
        v += wi[j] * aj.v;
        dr += wi[j] * aj.dr;
        drr += wi[j] * aj.drr;
        dt += wi[j] * aj.dt;
      }
      ws.z[l][i] = Jet{v, dr, drr, dt};
    }
    if (l < depth_) {
      ws.a[l].assign(nout, Jet{});
      for (int i = 0; i < nout; ++i) {
        const Jet& z = ws.z[l][i];
        const double th = std::tanh(z.v);
        const double d1 = 1.0 - th * th;
        const double d2 = -2.0 * th * d1;
        ws.a[l][i] = Jet{th, d1 * z.dr, d2 * z.dr * z.dr + d1 * z.drr, d1 * z.dt};
      }
    } else {
      ws.a[l] = ws.z[l];  // final layer stays linear
    }
    prev = &ws.a[l];
  }
  return ws.a[depth_][0];
}

void Mlp::backward(MlpWorkspace& ws, const Jet& adj, double* grad,
                   std::vector<Jet>* in_adjoint) const {
  ws.adj.resize(n_layers() + 1);
  ws.adj[n_layers()] = {adj};
  for (int l = n_layers() - 1; l >= 0; --l) {
    const int nin = layer_in(l), nout = layer_out(l);
    std::vector<Jet>& abar = ws.adj[l + 1];  // adjoint of a[l]
    // activation reverse: adjoint of z[l]
    if (l < depth_) {
      for (int i = 0; i < nout; ++i) {
        const Jet& z = ws.z[l][i];
        const Jet& ab = abar[i];
        const double th = std::tanh(z.v);
        const double d1 = 1.0 - th * th;
        const double d2 = -2.0 * th * d1;
        const double d3 = -2.0 * (d1 * d1 + th * d2);
        Jet zb;
        zb.v = ab.v * d1 + ab.dr * d2 * z.dr + ab.drr * (d3 * z.dr * z.dr + d2 * z.drr) +
               ab.dt * d2 * z.dt;
        zb.dr = ab.dr * d1 + ab.drr * 2.0 * d2 * z.dr;
        zb.drr = ab.drr * d1;
        zb.dt = ab.dt * d1;
        abar[i] = zb;
      }
    }
    // linear reverse: parameter gradients and input adjoints
    const std::vector<Jet>& ain = (l == 0) ? ws.in : ws.a[l - 1];
    std::vector<Jet>& prev_adj = ws.adj[l];
    prev_adj.assign(nin, Jet{});
    const double* w = params_.data() + w_off_[l];
    double* gw = grad + w_off_[l];
    double* gb = grad + b_off_[l];
    for (int i = 0; i < nout; ++i) {
      const Jet& zb = abar[i];
      const double* wi = w + static_cast<std::size_t>(i) * nin;
      double* gwi = gw + static_cast<std::size_t>(i) * nin;
      for (int j = 0; j < nin; ++j) {
        const Jet& aj = ain[j];
        gwi[j] += zb.v * aj.v + zb.dr * aj.dr + zb.drr * aj.drr + zb.dt * aj.dt;
        Jet& pj = prev_adj[j];
        pj.v += wi[j] * zb.v;
        pj.dr += wi[j] * zb.dr;
        pj.drr += wi[j] * zb.drr;
        pj.dt += wi[j] * zb.dt;
      }
      gb[i] += zb.v;
    }
  }
  if (in_adjoint) *in_adjoint = ws.adj[0];
}

// -- ScoreModel -----------------------------------------------------------------

namespace {

/// Input jets for a (rho_hat, x, t) query: scaled density first, then the
/// positional encodings of x and t with exact derivative seeds.
void build_score_inputs(std::vector<Jet>& in, double rho_hat, double x, double t, int levels,
                        double rho_max, double length, double horizon) {
  in.clear();
  in.reserve(1 + 4 * levels);
  in.push_back(Jet{rho_hat / rho_max, 1.0 / rho_max, 0.0, 0.0});
  const double xs = x / length;
  double omega = M_PI;
  for (int m = 0; m < levels; ++m) {
    in.push_back(Jet{std::sin(omega * xs), 0.0, 0.0, 0.0});
    in.push_back(Jet{std::cos(omega * xs), 0.0, 0.0, 0.0});
    omega *= 2.0;
  }
  const double tsc = t / horizon;
  omega = M_PI;
  for (int m = 0; m < levels; ++m) {
    const double rate = omega / horizon;
    in.push_back(Jet{std::sin(omega * tsc), 0.0, 0.0, rate * std::cos(omega * tsc)});
    in.push_back(Jet{std::cos(omega * tsc), 0.0, 0.0, -rate * std::sin(omega * tsc)});
    omega *= 2.0;
  }
}

}  // namespace

ScoreModel::ScoreModel(int depth, int width, int encoding_levels, double rho_max,
                       double domain_length, double horizon, std::uint64_t seed)
    : net_(1 + 4 * encoding_levels, width, depth, seed),
      levels_(encoding_levels),
      rho_max_(rho_max),
      length_(domain_length),
      horizon_(horizon) {}

Jet ScoreModel::eval(double rho_hat, double x, double t, MlpWorkspace& ws) const {
  build_score_inputs(ws.in, rho_hat, x, t, levels_, rho_max_, length_, horizon_);
  return net_.forward(ws);
}

void ScoreModel::backward(MlpWorkspace& ws, const Jet& adj, double* grad_theta) const {
  net_.backward(ws, adj, grad_theta);
}

// -- ClosureModel ------------------------------------------------------------------

ClosureModel::ClosureModel(ClosureKind kind, FluxFunction flux, int depth, int width,
                           int encoding_levels, double domain_length, double horizon,
                           std::uint64_t seed)
    : kind_(kind),
      flux_(std::move(flux)),
      net_(kind == ClosureKind::MeanFieldNet ? 4 * encoding_levels : 1 + 4 * encoding_levels,
           width, depth, seed),
      levels_(encoding_levels),
      length_(domain_length),
      horizon_(horizon) {}

Jet ClosureModel::eval(double rho_hat, double x, double t, MlpWorkspace& ws) const {
  if (kind_ == ClosureKind::MeanFieldNet) {
    // rho_bar net over (x, t); the dr slot carries d/dx so the output's dr
    // component is the exact mean-state gradient
    ws.in.clear();
    ws.in.reserve(4 * levels_);
    const double xs = x / length_;
    double omega = M_PI;
    for (int m = 0; m < levels_; ++m) {
      const double rate = omega / length_;
      ws.in.push_back(Jet{std::sin(omega * xs), rate * std::cos(omega * xs),
                          -rate * rate * std::sin(omega * xs), 0.0});
      ws.in.push_back(Jet{std::cos(omega * xs), -rate * std::sin(omega * xs),
                          -rate * rate * std::cos(omega * xs), 0.0});
      omega *= 2.0;
    }
    const double tsc = t / horizon_;
    omega = M_PI;
    for (int m = 0; m < levels_; ++m) {
      const double rate = omega / horizon_;
      ws.in.push_back(Jet{std::sin(omega * tsc), 0.0, 0.0, rate * std::cos(omega * tsc)});
      ws.in.push_back(Jet{std::cos(omega * tsc), 0.0, 0.0, -rate * std::sin(omega * tsc)});
      omega *= 2.0;
    }
    const Jet rho_bar = net_.forward(ws);
    const double g = rho_bar.dr;  // d/dx rho_bar
    const double f1 = flux_.prime(rho_hat);
    const double f2 = flux_.second(rho_hat);
    const double f3 = flux_.third(rho_hat);
    return Jet{-f1 * g, -f2 * g, -f3 * g, -f1 * rho_bar.dt};
  }

  build_score_inputs(ws.in, rho_hat, x, t, levels_, flux_.rho_max(), length_, horizon_);
  const Jet m = net_.forward(ws);
  if (kind_ == ClosureKind::Direct) return m;
  // StructuredM: b = -f'(rho_hat) m
  const double f1 = flux_.prime(rho_hat);
  const double f2 = flux_.second(rho_hat);
  const double f3 = flux_.third(rho_hat);
  return Jet{-f1 * m.v, -f2 * m.v - f1 * m.dr, -f3 * m.v - 2.0 * f2 * m.dr - f1 * m.drr,
             -f1 * m.dt};
}

void ClosureModel::backward(MlpWorkspace& ws, double rho_hat, const Jet& adj,
                            double* grad_phi) const {
  if (kind_ == ClosureKind::Direct) {
    net_.backward(ws, adj, grad_phi);
    return;
  }
  const double f1 = flux_.prime(rho_hat);
  const double f2 = flux_.second(rho_hat);
  const double f3 = flux_.third(rho_hat);
  if (kind_ == ClosureKind::MeanFieldNet) {
    // b depends on the net only through g = out.dr
    const double gbar = -f1 * adj.v - f2 * adj.dr - f3 * adj.drr;
    net_.backward(ws, Jet{0.0, gbar, 0.0, -f1 * adj.dt}, grad_phi);
    return;
  }
  // StructuredM
  Jet mbar;
  mbar.v = -f1 * adj.v - f2 * adj.dr - f3 * adj.drr;
  mbar.dr = -f1 * adj.dr - 2.0 * f2 * adj.drr;
  mbar.drr = -f1 * adj.drr;
  mbar.dt = -f1 * adj.dt;
  net_.backward(ws, mbar, grad_phi);
}

// -- Physics evaluator ----------------------------------------------------------------

Jet eval_with_derivatives(const ScoreModel& model, double rho_hat, double x, double t) {
  MlpWorkspace ws;
  return model.eval(rho_hat, x, t, ws);
}

VelocityJets closed_velocity(const ScoreModel& model, const ClosureModel& closure,
                             const TrafficModel& traffic, double rho_hat, double x, double t) {
  MlpWorkspace ws_s, ws_c;
  const Jet s = model.eval(rho_hat, x, t, ws_s);
  const Jet b = closure.eval(rho_hat, x, t, ws_c);
  const double a0 = traffic.noise.sigma_sq(rho_hat, x);
  const double a1 = traffic.noise.sigma_sq_d1(rho_hat, x);
  const double a2 = traffic.noise.sigma_sq_d2(rho_hat, x);
  const double a3 = traffic.noise.sigma_sq_d3(rho_hat, x);
  VelocityJets v;
  v.v = b.v - 0.5 * a1 - 0.5 * a0 * s.v;
  v.dv_drho = b.dr - 0.5 * a2 - 0.5 * (a1 * s.v + a0 * s.dr);
  v.d2v_drho2 = b.drr - 0.5 * a3 - 0.5 * (a2 * s.v + 2.0 * a1 * s.dr + a0 * s.drr);
  return v;
}

SigmaTerms sigma_terms(const NoiseStructure& noise, double rho_hat, double x) {
  return SigmaTerms{noise.sigma_sq(rho_hat, x), noise.sigma_sq_d1(rho_hat, x),
                    noise.sigma_sq_d2(rho_hat, x), noise.sigma_sq_d3(rho_hat, x)};
}

ResidualRecord residual_from_parts(const Jet& s, const Jet& b, const SigmaTerms& A) {
  const double v = b.v - 0.5 * A.a1 - 0.5 * A.a0 * s.v;
  const double v1 = b.dr - 0.5 * A.a2 - 0.5 * (A.a1 * s.v + A.a0 * s.dr);
  const double v2 = b.drr - 0.5 * A.a3 - 0.5 * (A.a2 * s.v + 2.0 * A.a1 * s.dr + A.a0 * s.drr);

  ResidualRecord rec;
  rec.residual = s.dt + v * s.dr + v1 * s.v + v2;
  // dR/d(score components)
  rec.d_score.v = -0.5 * A.a0 * s.dr + v1 - 0.5 * A.a1 * s.v - 0.5 * A.a2;
  rec.d_score.dr = v - 0.5 * A.a0 * s.v - A.a1;
  rec.d_score.drr = -0.5 * A.a0;
  rec.d_score.dt = 1.0;
  // dR/d(closure components)
  rec.d_closure.v = s.dr;
  rec.d_closure.dr = s.v;
  rec.d_closure.drr = 1.0;
  rec.d_closure.dt = 0.0;
  // dR/d(Sigma^2 derivative orders 0..3)
  rec.d_sigma_sq[0] = -s.v * s.dr - 0.5 * s.drr;
  rec.d_sigma_sq[1] = -1.5 * s.dr - 0.5 * s.v * s.v;
  rec.d_sigma_sq[2] = -s.v;
  rec.d_sigma_sq[3] = -0.5;
  return rec;
}

ResidualRecord fpe_residual_record(const ScoreModel& model, const ClosureModel& closure,
                                   const TrafficModel& traffic, double rho_hat, double x,
                                   double t, MlpWorkspace& ws_score,
                                   MlpWorkspace& ws_closure) {
  const Jet s = model.eval(rho_hat, x, t, ws_score);
  const Jet b = closure.eval(rho_hat, x, t, ws_closure);
  return residual_from_parts(s, b, sigma_terms(traffic.noise, rho_hat, x));
}

double fpe_residual(const ScoreModel& model, const ClosureModel& closure,
                    const TrafficModel& traffic, double rho_hat, double x, double t) {
  MlpWorkspace ws_s, ws_c;
  return fpe_residual_record(model, closure, traffic, rho_hat, x, t, ws_s, ws_c).residual;
}

// -- Checkpoint --------------------------------------------------------------------------

namespace {

template <typename T>
void put(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const char*& p, const char* end) {
  if (p + sizeof(T) > end) throw ConfigError("checkpoint truncated");
  T v;
  std::memcpy(&v, p, sizeof(T));
  p += sizeof(T);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string buf;
  buf.append("SLWRCKPT1", 9);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.score_depth));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.score_width));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.levels));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.closure_kind));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.closure_depth));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.closure_width));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.theta.size()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.phi.size()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.alphas.size()));
  for (double v : ckpt.theta) put<double>(buf, v);
  for (double v : ckpt.phi) put<double>(buf, v);
  for (double v : ckpt.alphas) put<double>(buf, v);
  const std::uint32_t crc = crc32(buf.data(), buf.size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
  if (!out) throw ConfigError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 9 + 9 * 4 + 4 || buf.compare(0, 9, "SLWRCKPT1") != 0)
    throw ConfigError("'" + path + "' is not an SLWRCKPT1 checkpoint");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw ConfigError("'" + path + "' failed its CRC32 check");

  const char* p = buf.data() + 9;
  const char* end = buf.data() + buf.size() - 4;
  Checkpoint ckpt;
  ckpt.score_depth = static_cast<int>(take<std::uint32_t>(p, end));
  ckpt.score_width = static_cast<int>(take<std::uint32_t>(p, end));
  ckpt.levels = static_cast<int>(take<std::uint32_t>(p, end));
  ckpt.closure_kind = static_cast<int>(take<std::uint32_t>(p, end));
  ckpt.closure_depth = static_cast<int>(take<std::uint32_t>(p, end));
  ckpt.closure_width = static_cast<int>(take<std::uint32_t>(p, end));
  const auto n_theta = take<std::uint32_t>(p, end);
  const auto n_phi = take<std::uint32_t>(p, end);
  const auto n_alpha = take<std::uint32_t>(p, end);
  ckpt.theta.resize(n_theta);
  for (auto& v : ckpt.theta) v = take<double>(p, end);
  ckpt.phi.resize(n_phi);
  for (auto& v : ckpt.phi) v = take<double>(p, end);
  ckpt.alphas.resize(n_alpha);
  for (auto& v : ckpt.alphas) v = take<double>(p, end);
  return ckpt;
}

}  // namespace slwr
