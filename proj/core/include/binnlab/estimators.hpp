#pragma once

#include <optional>
#include <string>
#include <utility>

namespace binnlab {

/// Firing-probability clip bounds: importance ratios divide by F and 1-F, so
/// saturated units would otherwise produce infinities.
inline constexpr double kProbClipLo = 1e-9;
inline constexpr double kProbClipHi = 1.0 - 1e-9;

enum class EstimatorKind { St, IwSt, Agr, GsSt, Reinforce, Exact };

/// Terminal mixing policies for the importance-weighted family. StMatch (p =
/// F) recovers the classical straight-through rule; LowVar picks the endpoint
/// of the minimum-variance interval.
enum class PPolicy { P0, P1, Half, StMatch, LowVar };

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::St;
  std::optional<PPolicy> p_policy;       // required iff kind == IwSt
  std::optional<double> temperature;     // required iff kind in {Agr, GsSt}, and for damped IwSt
  bool damping = false;                  // multiply by the (w0 + w1) factor; IwSt only

  void validate() const;
  std::string describe() const;

  static EstimatorConfig st();
  static EstimatorConfig iw_st(PPolicy policy, bool damping = false,
                               std::optional<double> temperature = std::nullopt);
  static EstimatorConfig agr(double temperature);
  static EstimatorConfig gs_st(double temperature);
  static EstimatorConfig reinforce();
  static EstimatorConfig exact();
};

/// Forward record of one binary unit, everything its backward rule needs.
struct UnitTrace {
  double h_star = 0.0;   // noiseless preactivation
  double kappa = 1.0;    // preactivation noise std, > 0
  double theta = 0.0;    // firing threshold
  double output = 0.0;   // sampled {0,1}
  std::optional<double> u;  // uniform noise, consistent with output = H(F - 1 + u)

  void validate() const;
};

struct BackwardSignal {
  double d_loss_d_output = 0.0;
  double d_loss_d_hstar = 0.0;
  double d_loss_d_kappa = 0.0;
};

/// P(o = 1) = Phi((h* - theta) / kappa), clipped to [1e-9, 1 - 1e-9].
double fire_probability(double h_star, double kappa, double theta);

/// Mixing parameter for a policy at firing probability F.
double p_policy_value(PPolicy policy, double f);

/// Importance weight (p/F)^o ((1-p)/(1-F))^(1-o); identically 1 when p == F.
double iw_st_weight(double output, double p, double f);

/// Trapezoid terminal weights (w0, w1) for the analytical Gumbel-Rao rule:
/// w1 = S_k(F) - S_k(0), w0 = S_k(0) - S_k(F - 1). Both nonnegative and
/// w0 + w1 <= 1; the sum is the implicit damping factor, maximal at F = 0.5.
std::pair<double, double> agr_terminal_weights(double f, double temperature);

/// Closed form of E[S_k'(F - 1 + u) | o]: (w1/F)^o (w0/(1-F))^(1-o).
double agr_surrogate_factor(double output, double f, double temperature);

/// Relaxed-surrogate backward factor S_k'(F - 1 + u); the forward pass stays
/// binary, only the backward uses the relaxation.
double gs_st_surrogate_factor(double u, double f, double temperature);

/// Local backward rule for one binary unit. With z = (h* - theta)/kappa:
///   d_loss_d_hstar = w * upstream * phi(z) / kappa
///   d_loss_d_kappa = w * upstream * phi(z) * (-z / kappa)
/// where w is the estimator weight (1 for St; the importance weight for IwSt,
/// optionally times (w0 + w1) when damping; the closed-form conditional factor
/// for Agr; the sampled relaxation derivative for GsSt). Both gradients arise
/// from differentiating the same firing probability, so they share w.
/// Reinforce/Exact are not local rules and are rejected here.
BackwardSignal backward_binary_unit(const UnitTrace& trace, double upstream,
                                    const EstimatorConfig& config);

}  // namespace binnlab
