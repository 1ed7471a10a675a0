#include "mlcc/losses.hpp"

namespace mlcc {

void LossConfig::validate() const {
  require(kappa > 0, ErrorCode::kInvalidArgument, "kappa must be positive");
  require(tau > 0, ErrorCode::kInvalidArgument, "tau must be positive");
  require(delta >= 0, ErrorCode::kInvalidArgument, "delta must be non-negative");
  require(cos_floor > 0 && cos_floor < 1, ErrorCode::kInvalidArgument, "cos_floor must lie in (0, 1)");
  require(std::isfinite(lambda1) && std::isfinite(lambda2), ErrorCode::kInvalidArgument, "loss weights must be finite");
}

Real total_loss(Real ce, Real inter, Real intra, Real forget, const LossConfig& cfg) {
  require(std::isfinite(ce) && std::isfinite(inter) && std::isfinite(intra) && std::isfinite(forget),
          ErrorCode::kDivergence, "non-finite loss term passed to total_loss");
  return ce + cfg.lambda1 * inter + cfg.lambda2 * intra + forget;
}

}  // namespace mlcc
