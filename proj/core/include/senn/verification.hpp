#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "senn/network.hpp"
#include "senn/rng.hpp"

namespace senn {

// worst_slack >= 0 exactly when the property passed; its units are property specific.
struct PropertyResult {
  std::string name;
  bool passed = false;
  double worst_slack = 0.0;
  std::string detail;
};

struct SuiteOptions {
  std::uint64_t seed = 20240501;
  int theorem2_instances = 500;
  int kronecker_instances = 200;
  int eta_identity_nets = 100;
  int rank_one_updates = 200;
  int ubah_fixtures = 20;
  long ubah_samples = 1000000;
  int reciprocity_instances = 100;
  int surgery_instances = 200;
};

// Random generic network: LeCun weights, unit-normal biases and activation parameters.
Network random_network(Eigen::Index input_dim, const std::vector<int>& hidden, Eigen::Index output_dim, Rng& rng);

// Δη′ ≤ Δη for width added to the last hidden layer, Δη from the exact Fisher of the output weights.
PropertyResult check_theorem2(int instances, std::uint64_t seed);
// Δη′ ≤ Δη at any receiving layer under its Kronecker factorization S ⊗ A.
PropertyResult check_theorem2_kronecker(int instances, std::uint64_t seed);
// τ = 1, α/λ = 1e-3 gives a bound below 11.
PropertyResult check_theorem1_worked_instance();
// Accepted additions per event stay within the bound on random regression batches.
PropertyResult check_theorem1_events(int instances, std::uint64_t seed);

// gᵀF⁺g equals the projection form to 1e-6 relative.
PropertyResult check_eta_identity(int nets, std::uint64_t seed);
// Sampled UBAH curvature dominates the finite-difference Hessian of the first-layer weights.
PropertyResult check_ubah_dominance(int fixtures, long samples, std::uint64_t seed);
// KFAC moments reproduce the exact output-layer Fisher block η.
PropertyResult check_kfac_output_block(int instances, std::uint64_t seed);

PropertyResult check_rank_one_fidelity(int updates, std::uint64_t seed);
PropertyResult check_drift_refresh(std::uint64_t seed);
PropertyResult check_cholesky(int instances, std::uint64_t seed);
PropertyResult check_sherman_morrison(int instances, std::uint64_t seed);
PropertyResult check_cg(int instances, std::uint64_t seed);
PropertyResult check_block_ldu(int instances, std::uint64_t seed);

PropertyResult check_width_preservation(int instances, std::uint64_t seed);
PropertyResult check_depth_preservation(int instances, std::uint64_t seed);
PropertyResult check_prune_zero_neuron(int instances, std::uint64_t seed);
// Removal cost of one of two identical neurons is at most 1e-6 η of the receiving layer.
PropertyResult check_prune_duplicate(int instances, std::uint64_t seed);
// Removal cost equals Δη′ recomputed from scratch on the compensated network.
PropertyResult check_prune_counterfactual(int instances, std::uint64_t seed);

// Suites: linalg, surgery, curvature, theorems, all. Throws Config for an unknown name.
std::vector<PropertyResult> run_suite(const std::string& suite, const SuiteOptions& options);

// Prints one line per property; returns 0 iff all pass, 2 for an unknown suite.
int run_verification(const std::string& suite, const SuiteOptions& options, std::ostream& out);

}  // namespace senn
