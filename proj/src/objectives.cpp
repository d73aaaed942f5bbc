#include "missmod/objectives.hpp"

#include <string>

#include "missmod/errors.hpp"

namespace missmod {

using nn::Tensor;

void VicregCoefficients::validate() const {
  if (lambda < 0 || mu < 0 || nu < 0 || gamma < 0 || eps < 0) {
    throw ConfigError("VICReg coefficients must be non-negative");
  }
}

namespace {

void require_batch_stats(const Tensor& z, const char* term) {
  if (z.rank() != 2) throw DimensionError(std::string(term) + ": expected [batch, dim], got " + nn::to_string(z.shape()));
  if (z.rows() < 2) {
    throw StatisticsError(std::string(term) + " needs a batch of at least 2 samples, got " +
                          std::to_string(z.rows()));
  }
}

Tensor centered(const Tensor& z) { return nn::sub_row(z, nn::column_mean(z)); }

Tensor zero() { return Tensor::scalar(0.0); }

}  // namespace

Tensor invariance_term(const Tensor& z, const Tensor& zhat) {
  if (z.shape() != zhat.shape() || z.rank() != 2) {
    throw DimensionError("invariance term: shapes " + nn::to_string(z.shape()) + " and " +
                         nn::to_string(zhat.shape()) + " differ");
  }
  return nn::mean(nn::square(nn::sub(z, zhat)));
}

Tensor variance_term(const Tensor& z, double gamma, double eps) {
  require_batch_stats(z, "variance term");
  const double n = static_cast<double>(z.rows());
  Tensor var = nn::scale(nn::column_sum(nn::square(centered(z))), 1.0 / (n - 1.0));
  Tensor std_dev = nn::sqrt(nn::add_scalar(var, eps));
  return nn::mean(nn::relu(nn::add_scalar(nn::scale(std_dev, -1.0), gamma)));
}

Tensor covariance_term(const Tensor& z) {
  require_batch_stats(z, "covariance term");
  const auto n = z.rows(), d = z.cols();
  Tensor zc = centered(z);
  Tensor cov = nn::scale(nn::matmul(nn::transpose(zc), zc), 1.0 / static_cast<double>(n - 1));
  std::vector<double> off(d * d, 1.0);
  for (std::size_t i = 0; i < d; ++i) off[i * d + i] = 0.0;
  Tensor off_diagonal = nn::mul(cov, Tensor::from({d, d}, std::move(off)));
  return nn::scale(nn::sum(nn::square(off_diagonal)), 1.0 / static_cast<double>(d));
}

VicregTerms vicreg_loss(const Tensor& z_true, const Tensor& z_pred, const VicregCoefficients& coeffs,
                        const VicregOptions& options) {
  coeffs.validate();
  if (z_true.shape() != z_pred.shape()) {
    throw DimensionError("vicreg: shapes " + nn::to_string(z_true.shape()) + " and " + nn::to_string(z_pred.shape()) +
                         " differ");
  }
  const Tensor target = options.stop_gradient_target ? nn::stop_gradient(z_true) : z_true;
  VicregTerms terms;
  terms.s = invariance_term(target, z_pred);
  terms.v = options.variance
                ? nn::add(variance_term(target, coeffs.gamma, coeffs.eps), variance_term(z_pred, coeffs.gamma, coeffs.eps))
                : zero();
  terms.c = options.covariance ? nn::add(covariance_term(target), covariance_term(z_pred)) : zero();
  terms.loss = nn::add(nn::add(nn::scale(terms.s, coeffs.lambda), nn::scale(terms.v, coeffs.mu)),
                       nn::scale(terms.c, coeffs.nu));
  return terms;
}

Tensor late_fusion(const Tensor& logits_m1, const Tensor& logits_m2) {
  if (logits_m1.shape() != logits_m2.shape()) {
    throw DimensionError("late fusion: logits " + nn::to_string(logits_m1.shape()) + " and " +
                         nn::to_string(logits_m2.shape()) + " differ");
  }
  return nn::add(logits_m1, logits_m2);
}

ClassificationTerms classification_loss(const SubsetLogits& logits, const SubsetLabels& labels) {
  auto term = [](const Tensor& l, const LabelBatch& y) {
    if (y.empty()) return zero();
    if (!l.defined() || l.rows() != y.size()) throw DataError("subset logits do not match subset labels");
    return label_loss(l, y);
  };
  ClassificationTerms out;
  out.m1 = term(logits.m1_only, labels.m1_only);
  out.m2 = term(logits.m2_only, labels.m2_only);
  out.joint = labels.complete.empty() ? zero() : term(late_fusion(logits.complete_m1, logits.complete_m2), labels.complete);
  return out;
}

Tensor auxiliary_loss(const Tensor& predicted_cls, const Linear& classifier, const LabelBatch& labels) {
  return label_loss(classifier(predicted_cls), labels);
}

void LossComponents::fill_missing() {
  for (Tensor* t : {&s, &v, &c, &l_prd, &l_cls_m1, &l_cls_m2, &l_cls_joint, &l_aux}) {
    if (!t->defined()) *t = zero();
  }
}

Tensor total_loss(const LossComponents& components, double alpha) {
  LossComponents c = components;
  c.fill_missing();
  Tensor cls = nn::add(nn::add(c.l_cls_m1, c.l_cls_m2), c.l_cls_joint);
  return nn::add(nn::scale(nn::add(cls, c.l_aux), alpha), c.l_prd);
}

LossBreakdown breakdown(const LossComponents& components, const Tensor& total, double alpha) {
  LossComponents c = components;
  c.fill_missing();
  LossBreakdown b;
  b.s = c.s.item();
  b.v = c.v.item();
  b.c = c.c.item();
  b.l_prd = c.l_prd.item();
  b.l_cls_m1 = c.l_cls_m1.item();
  b.l_cls_m2 = c.l_cls_m2.item();
  b.l_cls_joint = c.l_cls_joint.item();
  b.l_aux = c.l_aux.item();
  b.l_total = total.item();
  b.alpha = alpha;
  return b;
}

}  // namespace missmod
