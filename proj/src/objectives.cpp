#include "mmdesign/objectives.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mmdesign/errors.hpp"

namespace mmdesign::objectives {

void LossConfig::validate() const {
  if (!(distill_temperature > 0.0)) throw std::invalid_argument("distillation temperature must be positive");
  if (!(cac_weight >= 0.0)) throw std::invalid_argument("alignment weight must be non-negative");
}

namespace {

template <typename T>
std::vector<T> weights_from_mask(const std::vector<std::uint8_t>& mask, std::size_t rows, T value) {
  if (mask.size() != rows) throw ShapeError("mask length does not match logit rows");
  std::vector<T> w(rows, T(0));
  for (std::size_t i = 0; i < rows; ++i) {
    if (mask[i]) w[i] = value;
  }
  return w;
}

std::size_t count(const std::vector<std::uint8_t>& mask) {
  std::size_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

}  // namespace

template <typename T>
Tensor<T> seq_nll_sum(const Tensor<T>& logits, const std::vector<int>& targets,
                      const std::vector<std::uint8_t>& mask) {
  const auto w = weights_from_mask<T>(mask, static_cast<std::size_t>(logits.rows()), T(1));
  return ag::nll(ag::log_softmax(logits), targets, w);
}

template <typename T>
Tensor<T> seq_ce(const Tensor<T>& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask) {
  const std::size_t n = count(mask);
  if (n == 0) throw std::invalid_argument("seq_ce: every position is masked");
  const auto w = weights_from_mask<T>(mask, static_cast<std::size_t>(logits.rows()), T(1) / static_cast<T>(n));
  return ag::nll(ag::log_softmax(logits), targets, w);
}

template <typename T>
ExpCe<T> exp_ce(const Tensor<T>& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask,
                int batch, int len, ExpCeReduction reduction) {
  if (logits.rows() != batch * len) throw ShapeError("exp_ce: logits rows do not match batch layout");
  const std::size_t rows = static_cast<std::size_t>(logits.rows());
  if (mask.size() != rows) throw ShapeError("exp_ce: mask length does not match logit rows");
  std::vector<T> w(rows, T(0));
  if (reduction == ExpCeReduction::StableMean) {
    const std::size_t n = count(mask);
    if (n == 0) throw std::invalid_argument("exp_ce: every position is masked");
    for (std::size_t i = 0; i < rows; ++i) w[i] = mask[i] ? T(1) / static_cast<T>(n) : T(0);
  } else {
    bool any = false;
    for (int b = 0; b < batch; ++b) {
      std::size_t n = 0;
      for (int l = 0; l < len; ++l) n += mask[static_cast<std::size_t>(b) * len + l] ? 1 : 0;
      if (n == 0) continue;
      any = true;
      for (int l = 0; l < len; ++l) {
        const std::size_t i = static_cast<std::size_t>(b) * len + l;
        if (mask[i]) w[i] = T(1) / static_cast<T>(n);
      }
    }
    if (!any) throw std::invalid_argument("exp_ce: every position is masked");
  }
  const Tensor<T> exponent = ag::nll(ag::log_softmax(logits), targets, w);
  ExpCe<T> result;
  result.log_value = static_cast<double>(exponent.item());
  const double limit = std::log(static_cast<double>(std::numeric_limits<T>::max())) - 1.0;
  if (result.log_value > limit) {
    result.log_domain = true;
    result.loss = exponent;
  } else {
    result.loss = ag::exp(exponent);
  }
  return result;
}

template <typename T>
Tensor<T> cac_loss(const Tensor<T>& z_struc, const Tensor<T>& z_seq, const std::vector<std::uint8_t>& mask,
                   double temperature, KlDirection direction) {
  if (z_struc.rows() != z_seq.rows() || z_struc.cols() != z_seq.cols()) {
    std::ostringstream os;
    os << "cac_loss: dimension mismatch [" << z_struc.rows() << "x" << z_struc.cols() << "] vs [" << z_seq.rows()
       << "x" << z_seq.cols() << "]";
    throw ShapeError(os.str());
  }
  if (!(temperature > 0.0)) throw std::invalid_argument("cac_loss: temperature must be positive");
  const std::size_t n = count(mask);
  if (n == 0) throw std::invalid_argument("cac_loss: every position is masked");
  const T inv_t = static_cast<T>(1.0 / temperature);
  const Tensor<T> log_student = ag::log_softmax(ag::scale(z_struc, inv_t));
  const Tensor<T> log_teacher = ag::log_softmax(ag::scale(z_seq.detach(), inv_t));
  Tensor<T> per_row;
  if (direction == KlDirection::StudentTeacher) {
    per_row = ag::row_sum(ag::mul(ag::exp(log_student), ag::sub(log_student, log_teacher)));
  } else {
    per_row = ag::row_sum(ag::mul(ag::exp(log_teacher), ag::sub(log_teacher, log_student)));
  }
  const T w = static_cast<T>(temperature * temperature / static_cast<double>(n));
  return ag::weighted_sum(per_row, weights_from_mask<T>(mask, static_cast<std::size_t>(per_row.rows()), w));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& expce, const Tensor<T>& cac, double lambda) {
  const double e = static_cast<double>(expce.item());
  const double c = static_cast<double>(cac.item());
  if (!std::isfinite(e) || !std::isfinite(c)) {
    std::ostringstream os;
    os << "non-finite loss term (expCE=" << e << ", CAC=" << c << ")";
    throw NumericError(os.str());
  }
  if (lambda == 0.0) return expce;
  return ag::add(expce, ag::scale(cac, static_cast<T>(lambda)));
}

#define MMDESIGN_INSTANTIATE(T)                                                                                    \
  template Tensor<T> seq_ce(const Tensor<T>&, const std::vector<int>&, const std::vector<std::uint8_t>&);          \
  template Tensor<T> seq_nll_sum(const Tensor<T>&, const std::vector<int>&, const std::vector<std::uint8_t>&);     \
  template ExpCe<T> exp_ce(const Tensor<T>&, const std::vector<int>&, const std::vector<std::uint8_t>&, int, int,  \
                           ExpCeReduction);                                                                        \
  template Tensor<T> cac_loss(const Tensor<T>&, const Tensor<T>&, const std::vector<std::uint8_t>&, double,        \
                              KlDirection);                                                                        \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, double);

MMDESIGN_INSTANTIATE(float)
MMDESIGN_INSTANTIATE(double)
#undef MMDESIGN_INSTANTIATE

}  // namespace mmdesign::objectives
