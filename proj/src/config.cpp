#include "slwr/config.hpp"

#include <fstream>

#include <json.hpp>

#include "slwr/errors.hpp"

namespace slwr {

using nlohmann::json;

namespace {

BasisKind parse_basis_kind(const std::string& s) {
  if (s == "constant") return BasisKind::Constant;
  if (s == "sin") return BasisKind::Sin;
  if (s == "cos") return BasisKind::Cos;
  if (s == "gaussian_bump") return BasisKind::GaussianBump;
  throw ConfigError("unknown basis kind '" + s + "'");
}

std::string basis_kind_name(BasisKind k) {
  switch (k) {
    case BasisKind::Constant:
      return "constant";
    case BasisKind::Sin:
      return "sin";
    case BasisKind::Cos:
      return "cos";
    case BasisKind::GaussianBump:
      return "gaussian_bump";
  }
  return "constant";
}

TrafficModel from_json(const json& j, const std::string& origin) {
  try {
    const std::string units = j.value("units", "normalized");
    if (units != "normalized" && units != "si")
      throw ConfigError("units must be 'normalized' or 'si'");

    const json& jd = j.at("domain");
    const double L = jd.at("L").get<double>();
    const double T = jd.at("T").get<double>();
    if (L <= 0.0 || T <= 0.0) throw ConfigError("domain.L and domain.T must be positive");

    const json& jf = j.at("flux");
    const std::string fkind = jf.at("kind").get<std::string>();
    const double u_f = jf.at("u_f").get<double>();
    const double rho_max = jf.at("rho_max").get<double>();
    FluxFunction flux = FluxFunction::greenshields(1.0, 1.0);
    if (fkind == "greenshields") {
      flux = FluxFunction::greenshields(u_f, rho_max);
    } else if (fkind == "drake") {
      flux = FluxFunction::drake(u_f, rho_max, jf.at("k0").get<double>());
    } else if (fkind == "tabulated_smooth") {
      flux = FluxFunction::tabulated(jf.at("rho_nodes").get<std::vector<double>>(),
                                     jf.at("f_nodes").get<std::vector<double>>(), u_f, rho_max);
    } else {
      throw ConfigError("unknown flux kind '" + fkind + "'");
    }

    std::vector<NoiseMode> modes;
    if (j.contains("noise")) {
      for (const json& jm : j.at("noise").at("modes")) {
        NoiseMode m;
        m.alpha = jm.at("alpha").get<double>();
        m.s_tilde = Polynomial{jm.value("s_tilde_coeffs", std::vector<double>{1.0})};
        if (m.s_tilde.coeffs().size() > 4)
          throw ConfigError("s_tilde_coeffs: polynomial degree must be <= 3");
        const json& jb = jm.at("basis");
        m.basis = parse_basis_kind(jb.at("kind").get<std::string>());
        m.basis_param = jb.value("param", 1.0);
        m.basis_param2 = jb.value("width", 0.1 * L);
        modes.push_back(std::move(m));
      }
    }
    NoiseStructure noise(std::move(modes), rho_max, L);

    InitialProfile init;
    const json& ji = j.at("initial");
    const std::string ikind = ji.at("kind").get<std::string>();
    if (ikind == "constant") {
      init.kind = InitialKind::Constant;
      init.value = ji.at("value").get<double>();
    } else if (ikind == "sine") {
      init.kind = InitialKind::Sine;
      init.mean = ji.at("mean").get<double>();
      init.amplitude = ji.at("amplitude").get<double>();
      init.wavenumber = ji.value("wavenumber", 1.0);
    } else if (ikind == "custom_table") {
      init.kind = InitialKind::CustomTable;
      init.table_x = ji.at("x").get<std::vector<double>>();
      init.table_rho = ji.at("rho").get<std::vector<double>>();
      if (init.table_x.size() != init.table_rho.size() || init.table_x.size() < 2)
        throw ConfigError("custom_table initial profile needs matching x/rho arrays (>= 2)");
    } else {
      throw ConfigError("unknown initial kind '" + ikind + "'");
    }

    double eps = 0.0;
    if (j.contains("viscosity")) eps = j.at("viscosity").value("epsilon", 0.0);
    if (eps < 0.0) throw ConfigError("viscosity.epsilon must be >= 0");

    return TrafficModel{.flux = std::move(flux),
                        .noise = std::move(noise),
                        .domain_length = L,
                        .horizon = T,
                        .initial = std::move(init),
                        .viscosity = eps};
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

}  // namespace

TrafficModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return from_json(j, path);
}

TrafficModel parse_model(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return from_json(j, origin);
}

std::string model_to_json(const TrafficModel& model, const std::string& units) {
  json j;
  j["units"] = units;
  j["domain"] = {{"L", model.domain_length}, {"T", model.horizon}};
  json jf;
  jf["u_f"] = model.flux.u_f();
  jf["rho_max"] = model.flux.rho_max();
  switch (model.flux.kind()) {
    case FluxKind::Greenshields:
      jf["kind"] = "greenshields";
      break;
    case FluxKind::Drake:
      jf["kind"] = "drake";
      break;
    case FluxKind::TabulatedSmooth:
      jf["kind"] = "tabulated_smooth";
      break;
  }
  j["flux"] = jf;
  json jmodes = json::array();
  for (std::size_t k = 0; k < model.noise.n_modes(); ++k) {
    const NoiseMode& m = model.noise.mode(k);
    json jm;
    jm["alpha"] = m.alpha;
    jm["s_tilde_coeffs"] = m.s_tilde.coeffs();
    jm["basis"] = {{"kind", basis_kind_name(m.basis)}, {"param", m.basis_param}};
    if (m.basis == BasisKind::GaussianBump) jm["basis"]["width"] = m.basis_param2;
    jmodes.push_back(jm);
  }
  j["noise"] = {{"modes", jmodes}};
  json ji;
  switch (model.initial.kind) {
    case InitialKind::Constant:
      ji = {{"kind", "constant"}, {"value", model.initial.value}};
      break;
    case InitialKind::Sine:
      ji = {{"kind", "sine"},
            {"mean", model.initial.mean},
            {"amplitude", model.initial.amplitude},
            {"wavenumber", model.initial.wavenumber}};
      break;
    case InitialKind::CustomTable:
      ji = {{"kind", "custom_table"}, {"x", model.initial.table_x}, {"rho", model.initial.table_rho}};
      break;
  }
  j["initial"] = ji;
  j["viscosity"] = {{"epsilon", model.viscosity}};
  return j.dump(2);
}

}  // namespace slwr
