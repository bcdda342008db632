#pragma once

#include <string>

#include "slwr/model.hpp"

namespace slwr {

/// Parses a model specification file. Keys: units, flux.kind/u_f/rho_max,
/// noise.modes[] (alpha, s_tilde_coeffs, basis.kind/param), domain.L/T,
/// initial.kind, viscosity.epsilon. Throws ConfigError naming the path or
/// the offending key.
TrafficModel load_model(const std::string& path);

/// Same, from a JSON string (used by tests and by embedded defaults).
TrafficModel parse_model(const std::string& json_text, const std::string& origin = "<string>");

/// Serialises a model back to its JSON form.
std::string model_to_json(const TrafficModel& model, const std::string& units = "normalized");

}  // namespace slwr
