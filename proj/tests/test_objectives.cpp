#include <doctest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "mmdesign/errors.hpp"
#include "mmdesign/objectives.hpp"
#include "oracles.hpp"

using namespace mmdesign;
using namespace mmdesign::objectives;
using ag::Tensor;

namespace {

// Direct per-row KL(student || teacher) at temperature T, times T^2, averaged over masked rows.
double cac_oracle(const Tensor<double>& zs, const Tensor<double>& zq, const std::vector<std::uint8_t>& mask, double t,
                  bool student_first = true) {
  double s = 0;
  int n = 0;
  for (int r = 0; r < zs.rows(); ++r) {
    if (!mask[r]) continue;
    std::vector<double> a, b;
    for (int c = 0; c < zs.cols(); ++c) {
      a.push_back(zs.at(r, c));
      b.push_back(zq.at(r, c));
    }
    const auto p = oracle::softmax(a, t), q = oracle::softmax(b, t);
    s += student_first ? oracle::kl(p, q) : oracle::kl(q, p);
    ++n;
  }
  return t * t * s / n;
}

}  // namespace

TEST_CASE("seq_ce: uniform logits give ln 20, a confident native gives 0") {
  const Tensor<double> uniform = Tensor<double>::zeros(3, 20);
  CHECK(seq_ce(uniform, {0, 5, 19}, {1, 1, 1}).item() == doctest::Approx(std::log(20.0)).epsilon(1e-12));
  std::vector<double> v(3 * 20, 0.0);
  const std::vector<int> native{2, 7, 11};
  for (int r = 0; r < 3; ++r) v[r * 20 + native[r]] = 1e3;
  CHECK(seq_ce(Tensor<double>(3, 20, v), native, {1, 1, 1}).item() == doctest::Approx(0.0));
}

TEST_CASE("seq_ce matches a scalar loop on a random 4-token case") {
  Rng rng(1);
  const auto logits = gradcheck::random_tensor(5, 20, rng, 3.0);
  const std::vector<int> targets{3, 0, 19, 8, 4};
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1};
  CHECK(std::abs(seq_ce(logits, targets, mask).item() - oracle::seq_ce(logits.values(), 20, targets, mask)) <= 1e-10);
  CHECK(std::abs(seq_nll_sum(logits, targets, mask).item() - 4 * oracle::seq_ce(logits.values(), 20, targets, mask)) <= 1e-10);
}

TEST_CASE("seq_ce with nothing scored is an error") {
  CHECK_THROWS(seq_ce(Tensor<double>::zeros(2, 20), {0, 0}, {0, 0}));
}

TEST_CASE("exp_ce anchors") {
  const Tensor<double> uniform = Tensor<double>::zeros(4, 20);
  const auto e = exp_ce(uniform, {0, 1, 2, 3}, {1, 1, 1, 1}, 2, 2, ExpCeReduction::StableMean);
  CHECK(e.loss.item() == doctest::Approx(20.0).epsilon(1e-12));
  CHECK_FALSE(e.log_domain);

  std::vector<double> v(4 * 20, 0.0);
  for (int r = 0; r < 4; ++r) v[r * 20 + r] = 1e3;
  const auto z = exp_ce(Tensor<double>(4, 20, v), {0, 1, 2, 3}, {1, 1, 1, 1}, 2, 2, ExpCeReduction::PaperSum);
  CHECK(z.loss.item() == doctest::Approx(1.0));
}

TEST_CASE("exp_ce paper_sum is exp of the summed per-record CEs") {
  Rng rng(2);
  const int len = 4;
  const auto logits = gradcheck::random_tensor(2 * len, 20, rng, 2.0);
  const std::vector<int> targets{1, 2, 3, 4, 5, 6, 7, 8};
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 1, 1, 0, 0};
  double sum = 0;
  for (int b = 0; b < 2; ++b) {
    std::vector<double> lb(logits.values().begin() + b * len * 20, logits.values().begin() + (b + 1) * len * 20);
    sum += oracle::seq_ce(lb, 20, std::vector<int>(targets.begin() + b * len, targets.begin() + (b + 1) * len),
                          std::vector<std::uint8_t>(mask.begin() + b * len, mask.begin() + (b + 1) * len));
  }
  const auto e = exp_ce(logits, targets, mask, 2, len, ExpCeReduction::PaperSum);
  CHECK_FALSE(e.log_domain);
  CHECK(std::abs(std::log(e.loss.item()) - sum) <= 1e-8);
  CHECK(std::abs(e.log_value - sum) <= 1e-8);

  const auto m = exp_ce(logits, targets, mask, 2, len, ExpCeReduction::StableMean);
  CHECK(std::abs(std::log(m.loss.item()) - oracle::seq_ce(logits.values(), 20, targets, mask)) <= 1e-10);
}

TEST_CASE("exp_ce paper_sum falls back to the log domain instead of overflowing") {
  // per-record CE around 1e3 each: exp would overflow double
  std::vector<double> v(2 * 20, 0.0);
  v[0 * 20 + 1] = 1000.0;
  v[1 * 20 + 1] = 1000.0;
  const auto e = exp_ce(Tensor<double>(2, 20, v), {0, 0}, {1, 1}, 2, 1, ExpCeReduction::PaperSum);
  CHECK(e.log_domain);
  CHECK(std::isfinite(e.loss.item()));
  CHECK(e.loss.item() == doctest::Approx(2000.0).epsilon(1e-9));
  CHECK(e.log_value == doctest::Approx(2000.0).epsilon(1e-9));
}

TEST_CASE("cac: equal inputs give 0, any inputs give >= 0") {
  Rng rng(3);
  const auto z = gradcheck::random_tensor(4, 6, rng);
  CHECK(std::abs(cac_loss(z, z, {1, 1, 1, 1}, 8.0).item()) <= 1e-15);
  for (int t = 0; t < 20; ++t) {
    const auto a = gradcheck::random_tensor(4, 6, rng, 5.0), b = gradcheck::random_tensor(4, 6, rng, 5.0);
    CHECK(cac_loss(a, b, {1, 0, 1, 1}, 1.0 + t).item() >= 0.0);
  }
}

TEST_CASE("cac on (1,2,3) vs (3,2,1) at T=8 matches the direct KL sum") {
  const Tensor<double> zs(1, 3, {1, 2, 3}), zq(1, 3, {3, 2, 1});
  CHECK(std::abs(cac_loss(zs, zq, {1}, 8.0).item() - cac_oracle(zs, zq, {1}, 8.0)) <= 1e-10);
  CHECK(std::abs(cac_loss(zs, zq, {1}, 8.0, KlDirection::TeacherStudent).item() -
                 cac_oracle(zs, zq, {1}, 8.0, false)) <= 1e-10);
}

TEST_CASE("cac matches the oracle on random masked blocks") {
  Rng rng(4);
  const auto a = gradcheck::random_tensor(6, 10, rng, 4.0), b = gradcheck::random_tensor(6, 10, rng, 4.0);
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1};
  for (double t : {0.5, 1.0, 8.0}) CHECK(cac_loss(a, b, mask, t).item() == doctest::Approx(cac_oracle(a, b, mask, t)).epsilon(1e-10));
}

TEST_CASE("cac is invariant to a per-position shift of either input") {
  Rng rng(5);
  const auto a = gradcheck::random_tensor(3, 5, rng), b = gradcheck::random_tensor(3, 5, rng);
  auto as = a.values(), bs = b.values();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) {
      as[r * 5 + c] += 10.0 * (r + 1);
      bs[r * 5 + c] -= 3.0 * r;
    }
  CHECK(cac_loss(Tensor<double>(3, 5, as), Tensor<double>(3, 5, bs), {1, 1, 1}, 8.0).item() ==
        doctest::Approx(cac_loss(a, b, {1, 1, 1}, 8.0).item()).epsilon(1e-10));
}

TEST_CASE("cac at large T: the KL term vanishes, the T^2-scaled loss tends to Var(a - b) / 2") {
  // Second-order expansion of KL(softmax(a/T) || softmax(b/T)) around uniform
  // gives Var(a - b) / (2 T^2); the T^2 scaling therefore leaves a finite limit.
  const Tensor<double> a(1, 4, {0.3, -1.0, 2.0, 0.5}), b(1, 4, {1.0, 0.0, -0.5, 0.2});
  double mean = 0, var = 0;
  for (int c = 0; c < 4; ++c) mean += (a.at(0, c) - b.at(0, c)) / 4;
  for (int c = 0; c < 4; ++c) var += std::pow(a.at(0, c) - b.at(0, c) - mean, 2) / 4;
  double prev = 1e300;
  for (double t : {10.0, 100.0, 1000.0}) {
    const double loss = cac_loss(a, b, {1}, t).item();
    const double kl = loss / (t * t);
    CHECK(kl < prev);
    prev = kl;
  }
  CHECK(prev < 1e-6);
  CHECK(cac_loss(a, b, {1}, 1e4).item() == doctest::Approx(var / 2).epsilon(1e-3));
}

TEST_CASE("cac rejects mismatched shapes") {
  CHECK_THROWS_AS(cac_loss(Tensor<double>::zeros(2, 3), Tensor<double>::zeros(2, 4), {1, 1}, 8.0), ShapeError);
  CHECK_THROWS_AS(cac_loss(Tensor<double>::zeros(2, 3), Tensor<double>::zeros(3, 3), {1, 1}, 8.0), ShapeError);
}

TEST_CASE("cac: no gradient reaches the teacher input") {
  Rng rng(6);
  Tensor<double> zs(2, 3, gradcheck::random_tensor(2, 3, rng).values(), true);
  Tensor<double> zq(2, 3, gradcheck::random_tensor(2, 3, rng).values(), true);
  cac_loss(zs, zq, {1, 1}, 2.0).backward();
  for (double g : zq.grad()) CHECK(g == 0.0);
  double n = 0;
  for (double g : zs.grad()) n += std::abs(g);
  CHECK(n > 0.0);
}

TEST_CASE("gradients of every objective pass finite differences (float64, < 200 parameters)") {
  Rng rng(7);
  const std::vector<int> targets{2, 0, 4, 1, 3, 2};
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
  const auto logits = gradcheck::random_tensor(6, 5, rng, 2.0);  // 30 parameters
  auto check = [&](auto f) { return gradcheck::check(f, {logits}).max_rel; };
  CHECK(check([&](const std::vector<Tensor<double>>& l) { return seq_ce(l[0], targets, mask); }) <= 1e-4);
  CHECK(check([&](const std::vector<Tensor<double>>& l) {
          return exp_ce(l[0], targets, mask, 2, 3, ExpCeReduction::StableMean).loss;
        }) <= 1e-4);
  CHECK(check([&](const std::vector<Tensor<double>>& l) {
          return exp_ce(l[0], targets, mask, 2, 3, ExpCeReduction::PaperSum).loss;
        }) <= 1e-4);
  const auto zq = gradcheck::random_tensor(6, 5, rng, 2.0);
  for (auto dir : {KlDirection::StudentTeacher, KlDirection::TeacherStudent}) {
    CHECK(check([&](const std::vector<Tensor<double>>& l) { return cac_loss(l[0], zq, mask, 3.0, dir); }) <= 1e-4);
  }
}

TEST_CASE("total loss") {
  const auto one = Tensor<double>::scalar(1.0), half = Tensor<double>::scalar(0.5);
  CHECK(total_loss(one, half, 1.0).item() == 1.5);
  CHECK(total_loss(one, half, 0.0).item() == 1.0);
  CHECK(total_loss(one, Tensor<double>::scalar(0.0), 3.0).item() == 1.0);
  CHECK_THROWS_AS(total_loss(Tensor<double>::scalar(std::numeric_limits<double>::quiet_NaN()), half, 1.0), NumericError);
  CHECK_THROWS_AS(total_loss(one, Tensor<double>::scalar(std::numeric_limits<double>::infinity()), 1.0), NumericError);
}

TEST_CASE("loss config validation") {
  LossConfig c;
  CHECK_NOTHROW(c.validate());
  c.distill_temperature = 0;
  CHECK_THROWS(c.validate());
  c.distill_temperature = 8;
  c.cac_weight = -1;
  CHECK_THROWS(c.validate());
}
