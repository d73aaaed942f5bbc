#pragma once

#include "missmod/labels.hpp"
#include "missmod/layers.hpp"
#include "missmod/ops.hpp"

namespace missmod {

struct VicregCoefficients {
  double lambda = 50.0;  // invariance
  double mu = 50.0;      // variance
  double nu = 1.0;       // covariance
  double gamma = 1.0;    // target standard deviation
  double eps = 1e-4;

  void validate() const;
};

// Term switches for the ablations; the defaults are the full objective.
struct VicregOptions {
  bool variance = true;
  bool covariance = true;
  bool stop_gradient_target = false;
};

// Per-dimension mean squared distance: mean_i ||z_i - zhat_i||^2 / d.
nn::Tensor invariance_term(const nn::Tensor& z, const nn::Tensor& zhat);
// (1/d) sum_j max(0, gamma - sqrt(Var(z_j) + eps)), unbiased variance.
nn::Tensor variance_term(const nn::Tensor& z, double gamma, double eps);
// (1/d) sum_{i != j} Cov(z)_{ij}^2, unbiased covariance.
nn::Tensor covariance_term(const nn::Tensor& z);

struct VicregTerms {
  nn::Tensor s;     // invariance
  nn::Tensor v;     // v(z_true) + v(z_pred)
  nn::Tensor c;     // c(z_true) + c(z_pred)
  nn::Tensor loss;  // lambda*s + mu*v + nu*c
};

// Gradient reaches both arguments unless stop_gradient_target is set.
VicregTerms vicreg_loss(const nn::Tensor& z_true, const nn::Tensor& z_pred, const VicregCoefficients& coeffs,
                        const VicregOptions& options = {});

nn::Tensor late_fusion(const nn::Tensor& logits_m1, const nn::Tensor& logits_m2);

// Logits of one mixed batch grouped by subset. Complete samples carry both
// unimodal logit blocks; their loss is taken on the fused sum.
struct SubsetLogits {
  nn::Tensor m1_only;
  nn::Tensor m2_only;
  nn::Tensor complete_m1;
  nn::Tensor complete_m2;
};

struct SubsetLabels {
  LabelBatch m1_only;
  LabelBatch m2_only;
  LabelBatch complete;
};

struct ClassificationTerms {
  nn::Tensor m1;     // loss on m1-only samples, 0 if none
  nn::Tensor m2;     // loss on m2-only samples, 0 if none
  nn::Tensor joint;  // loss on fused logits of complete samples, 0 if none
};

ClassificationTerms classification_loss(const SubsetLogits& logits, const SubsetLabels& labels);

// Cross-entropy of the missing modality's classifier on a predicted embedding.
nn::Tensor auxiliary_loss(const nn::Tensor& predicted_cls, const Linear& classifier, const LabelBatch& labels);

struct LossComponents {
  nn::Tensor s, v, c;
  nn::Tensor l_prd;
  nn::Tensor l_cls_m1, l_cls_m2, l_cls_joint;
  nn::Tensor l_aux;

  // Every unset term becomes a zero scalar.
  void fill_missing();
};

struct LossBreakdown {
  double s = 0, v = 0, c = 0;
  double l_prd = 0;
  double l_cls_m1 = 0, l_cls_m2 = 0, l_cls_joint = 0;
  double l_aux = 0;
  double l_total = 0;
  double alpha = 1.0;

  double l_cls_sum() const { return l_cls_m1 + l_cls_m2 + l_cls_joint; }
};

// alpha * (L_cls + L_aux) + L_prd.
nn::Tensor total_loss(const LossComponents& components, double alpha);
LossBreakdown breakdown(const LossComponents& components, const nn::Tensor& total, double alpha);

}  // namespace missmod
