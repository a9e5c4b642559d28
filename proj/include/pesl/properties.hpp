#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pesl {

struct PropertyResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t trials = 0;
  std::string detail;  // first failing case, empty on success
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  /// Scales the number of random instances per property; 1 gives the counts
  /// the acceptance criteria ask for.
  double effort = 1.0;
  /// Names to run; nullopt runs everything. A selection that resolves to
  /// nothing is rejected with "no properties selected".
  std::optional<std::vector<std::string>> only;
  /// Test hook: conjugates W_Q with the inverse permutation in the shuffled
  /// runs, which must make the equivalence properties fail.
  bool corrupt_conjugation = false;
};

std::vector<std::string> property_names();

/// ConfigError for unknown names or an empty selection.
std::vector<PropertyResult> run_properties(const VerifyOptions& options);

/// {"passed": bool, "properties": [{"name", "passed", "max_error",
/// "tolerance", "trials", "detail"}]}
std::string properties_json(const std::vector<PropertyResult>& results);

// Individual suites, exposed so the acceptance harness can run them with its
// own instance counts.

/// Stacks of 1-3 blocks, 2 <= p, d <= 8, both block variants. Multi-head
/// instances shuffle rows only.
PropertyResult check_forward_equivalence(std::uint64_t seed, std::size_t trials,
                                         bool corrupt = false);
/// Central differences, h = 1e-6, against every gradient of tensor, encoder
/// and edge-model backward rules; error is norm-wise relative per tensor.
PropertyResult check_tensor_gradients(std::uint64_t seed, std::size_t trials);
PropertyResult check_encoder_gradients(std::uint64_t seed, std::size_t trials);
PropertyResult check_edge_gradients(std::uint64_t seed, std::size_t trials);
/// dW(P) = P_C dW P_C^T for all weights, biases and affines; dZ(P) = P_R dZ P_C^T.
PropertyResult check_gradient_conjugation(std::uint64_t seed, std::size_t trials,
                                          bool corrupt = false);
/// One optimizer step through the split trainer: edge weights after a
/// vanilla step and after a shuffled step.
PropertyResult check_edge_step(std::uint64_t seed, std::size_t trials);

}  // namespace pesl
