#pragma once

#include <cstdint>
#include <vector>

#include "mmdesign/tensor.hpp"

namespace mmdesign::objectives {

using ag::Tensor;

enum class ExpCeReduction {
  PaperSum,    // exp(sum over records of per-record mean CE)
  StableMean,  // exp(mean CE over all scored tokens)
};

enum class KlDirection {
  StudentTeacher,  // KL(softmax(Z_struc/T) || softmax(Z_seq/T))
  TeacherStudent,  // KL(softmax(Z_seq/T) || softmax(Z_struc/T))
};

struct LossConfig {
  double distill_temperature = 8.0;
  double cac_weight = 1.0;
  ExpCeReduction expce = ExpCeReduction::StableMean;
  KlDirection direction = KlDirection::StudentTeacher;

  /// Throws std::invalid_argument unless temperature > 0 and weight >= 0.
  void validate() const;
};

/// Mean over mask==1 rows of -log softmax(logits)[target]. Throws if nothing is scored.
template <typename T>
Tensor<T> seq_ce(const Tensor<T>& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask);

/// Sum (not mean) of the same per-token NLL.
template <typename T>
Tensor<T> seq_nll_sum(const Tensor<T>& logits, const std::vector<int>& targets,
                      const std::vector<std::uint8_t>& mask);

template <typename T>
struct ExpCe {
  Tensor<T> loss;          // exp(...) or, in log domain, the exponent itself
  double log_value = 0.0;  // the exponent
  bool log_domain = false;
};

/**
 * Exponentiated cross-entropy over a [batch * len, M] logit block. PaperSum
 * switches to the log domain (loss = exponent, log_domain = true) when the
 * exponential would overflow T.
 */
template <typename T>
ExpCe<T> exp_ce(const Tensor<T>& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask,
                int batch, int len, ExpCeReduction reduction);

/**
 * Cross-modal alignment: temperature-softened KL between the per-position
 * feature distributions of Z_struc (student) and Z_seq (teacher), averaged over
 * mask==1 rows and scaled by T^2. Z_seq is detached: no gradient reaches it.
 */
template <typename T>
Tensor<T> cac_loss(const Tensor<T>& z_struc, const Tensor<T>& z_seq, const std::vector<std::uint8_t>& mask,
                   double temperature, KlDirection direction = KlDirection::StudentTeacher);

/// expce + lambda * cac; throws NumericError on non-finite inputs.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& expce, const Tensor<T>& cac, double lambda);

}  // namespace mmdesign::objectives
