#include "binnlab/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "binnlab/special_functions.hpp"

namespace binnlab {

void EstimatorConfig::validate() const {
  const bool needs_temp = kind == EstimatorKind::Agr || kind == EstimatorKind::GsSt ||
                          (kind == EstimatorKind::IwSt && damping);
  if (needs_temp) {
    if (!temperature || !(*temperature > 0.0)) {
      throw std::invalid_argument("EstimatorConfig: temperature > 0 required for " + describe());
    }
  } else if (temperature) {
    throw std::invalid_argument("EstimatorConfig: temperature only applies to AGR/GS-ST/damped IW-ST");
  }
  if (kind == EstimatorKind::IwSt) {
    if (!p_policy) throw std::invalid_argument("EstimatorConfig: IW-ST requires a p policy");
  } else if (p_policy) {
    throw std::invalid_argument("EstimatorConfig: p policy only applies to IW-ST");
  }
  if (damping && kind != EstimatorKind::IwSt) {
    throw std::invalid_argument("EstimatorConfig: damping flag only applies to IW-ST");
  }
}

std::string EstimatorConfig::describe() const {
  switch (kind) {
    case EstimatorKind::St:
      return "st";
    case EstimatorKind::IwSt: {
      std::string name = "iwst(";
      if (p_policy) {
        switch (*p_policy) {
          case PPolicy::P0: name += "p0"; break;
          case PPolicy::P1: name += "p1"; break;
          case PPolicy::Half: name += "half"; break;
          case PPolicy::StMatch: name += "st_match"; break;
          case PPolicy::LowVar: name += "low_var"; break;
        }
      }
      name += ")";
      if (damping) name += "+damp";
      return name;
    }
    case EstimatorKind::Agr:
      return "agr(k=" + std::to_string(temperature.value_or(0.0)) + ")";
    case EstimatorKind::GsSt:
      return "gsst(k=" + std::to_string(temperature.value_or(0.0)) + ")";
    case EstimatorKind::Reinforce:
      return "reinforce";
    case EstimatorKind::Exact:
      return "exact";
  }
  return "?";
}

EstimatorConfig EstimatorConfig::st() { return EstimatorConfig{}; }

EstimatorConfig EstimatorConfig::iw_st(PPolicy policy, bool damping,
                                       std::optional<double> temperature) {
  EstimatorConfig c;
  c.kind = EstimatorKind::IwSt;
  c.p_policy = policy;
  c.damping = damping;
  c.temperature = temperature;
  return c;
}

EstimatorConfig EstimatorConfig::agr(double temperature) {
  EstimatorConfig c;
  c.kind = EstimatorKind::Agr;
  c.temperature = temperature;
  return c;
}

EstimatorConfig EstimatorConfig::gs_st(double temperature) {
  EstimatorConfig c;
  c.kind = EstimatorKind::GsSt;
  c.temperature = temperature;
  return c;
}

EstimatorConfig EstimatorConfig::reinforce() {
  EstimatorConfig c;
  c.kind = EstimatorKind::Reinforce;
  return c;
}

EstimatorConfig EstimatorConfig::exact() {
  EstimatorConfig c;
  c.kind = EstimatorKind::Exact;
  return c;
}

void UnitTrace::validate() const {
  if (!(kappa > 0.0)) throw std::invalid_argument("UnitTrace: kappa must be > 0");
  if (output != 0.0 && output != 1.0) throw std::invalid_argument("UnitTrace: output must be 0 or 1");
  if (u) {
    if (!(*u >= 0.0 && *u <= 1.0)) throw std::invalid_argument("UnitTrace: u outside [0,1]");
    const double f = fire_probability(h_star, kappa, theta);
    const double implied = (f - 1.0 + *u >= 0.0) ? 1.0 : 0.0;
    if (implied != output) {
      throw std::invalid_argument("UnitTrace: u inconsistent with output under o = H(F - 1 + u)");
    }
  }
}

double fire_probability(double h_star, double kappa, double theta) {
  if (!(kappa > 0.0)) throw std::invalid_argument("fire_probability: kappa must be > 0");
  const double f = std_normal_cdf((h_star - theta) / kappa);
  return std::clamp(f, kProbClipLo, kProbClipHi);
}

double p_policy_value(PPolicy policy, double f) {
  switch (policy) {
    case PPolicy::P0:
      return 0.0;
    case PPolicy::P1:
      return 1.0;
    case PPolicy::Half:
      return 0.5;
    case PPolicy::StMatch:
      return f;
    case PPolicy::LowVar:
      if (f > 0.5) return 1.0;
      if (f < 0.5) return 0.0;
      return 0.5;  // both optimal intervals degenerate to the midpoint
  }
  throw std::invalid_argument("p_policy_value: unknown policy");
}

double iw_st_weight(double output, double p, double f) {
  return output == 1.0 ? p / f : (1.0 - p) / (1.0 - f);
}

std::pair<double, double> agr_terminal_weights(double f, double temperature) {
  const double s0 = tempered_sigmoid(0.0, temperature);  // 0.5 for every k
  const double w1 = tempered_sigmoid(f, temperature) - s0;
  const double w0 = s0 - tempered_sigmoid(f - 1.0, temperature);
  return {w0, w1};
}

double agr_surrogate_factor(double output, double f, double temperature) {
  const auto [w0, w1] = agr_terminal_weights(f, temperature);
  return output == 1.0 ? w1 / f : w0 / (1.0 - f);
}

double gs_st_surrogate_factor(double u, double f, double temperature) {
  return tempered_sigmoid_derivative(f - 1.0 + u, temperature);
}

BackwardSignal backward_binary_unit(const UnitTrace& trace, double upstream,
                                    const EstimatorConfig& config) {
  config.validate();
  trace.validate();
  if (config.kind == EstimatorKind::Reinforce || config.kind == EstimatorKind::Exact) {
    throw std::invalid_argument("backward_binary_unit: " + config.describe() +
                                " is not a local backward rule");
  }

  const double f = fire_probability(trace.h_star, trace.kappa, trace.theta);
  double weight = 1.0;
  switch (config.kind) {
    case EstimatorKind::St:
      break;
    case EstimatorKind::IwSt: {
      const double p = p_policy_value(*config.p_policy, f);
      weight = iw_st_weight(trace.output, p, f);
      if (config.damping) {
        const auto [w0, w1] = agr_terminal_weights(f, *config.temperature);
        weight *= (w0 + w1);
      }
      break;
    }
    case EstimatorKind::Agr:
      weight = agr_surrogate_factor(trace.output, f, *config.temperature);
      break;
    case EstimatorKind::GsSt:
      if (!trace.u) {
        throw std::invalid_argument("backward_binary_unit: GS-ST needs the trace's uniform draw");
      }
      weight = gs_st_surrogate_factor(*trace.u, f, *config.temperature);
      break;
    default:
      break;
  }

  const double z = (trace.h_star - trace.theta) / trace.kappa;
  const double density = std_normal_pdf(z);
  BackwardSignal sig;
  sig.d_loss_d_output = upstream;
  sig.d_loss_d_hstar = weight * upstream * density / trace.kappa;
  sig.d_loss_d_kappa = weight * upstream * density * (-z / trace.kappa);
  return sig;
}

}  // namespace binnlab
