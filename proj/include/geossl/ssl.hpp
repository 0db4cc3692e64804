#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "geossl/rng.hpp"
#include "geossl/tensor.hpp"

namespace geossl::train {

// Three affine layers with gelu between, embed -> hidden -> hidden -> K.
template <class S>
struct ProjectionHeadT {
  TensorT<S> w1, b1, w2, b2, w3, b3;

  static ProjectionHeadT init(int embed, int hidden, int prototypes, Rng& rng,
                              bool requires_grad) {
    if (prototypes < 2)
      throw std::invalid_argument("projection head: prototype count must be at least 2");
    if (embed <= 0 || hidden <= 0)
      throw std::invalid_argument("projection head: dimensions must be positive");
    const S w_std = S(0.02);
    ProjectionHeadT h;
    h.w1 = TensorT<S>::randn({embed, hidden}, rng, w_std, requires_grad);
    h.b1 = TensorT<S>::zeros({hidden}, requires_grad);
    h.w2 = TensorT<S>::randn({hidden, hidden}, rng, w_std, requires_grad);
    h.b2 = TensorT<S>::zeros({hidden}, requires_grad);
    h.w3 = TensorT<S>::randn({hidden, prototypes}, rng, w_std, requires_grad);
    h.b3 = TensorT<S>::zeros({prototypes}, requires_grad);
    return h;
  }

  void for_each(const std::function<void(const std::string&, TensorT<S>&)>& fn) {
    fn("w1", w1);
    fn("b1", b1);
    fn("w2", w2);
    fn("b2", b2);
    fn("w3", w3);
    fn("b3", b3);
  }

  int prototypes() const { return w3.dim(1); }
};

enum class Role { teacher, student };

template <class S>
TensorT<S> head_logits(const TensorT<S>& features, const ProjectionHeadT<S>& head) {
  TensorT<S> h1 = gelu(add_rowvec(matmul(features, head.w1), head.b1));
  TensorT<S> h2 = gelu(add_rowvec(matmul(h1, head.w2), head.b2));
  return add_rowvec(matmul(h2, head.w3), head.b3);
}

// Teacher distributions are centered then sharpened at tau_t; student
// distributions are softmaxed at tau_s without centering.
template <class S>
TensorT<S> head_forward(const TensorT<S>& features, const ProjectionHeadT<S>& head,
                        Role role, const TensorT<S>& center, S tau) {
  TensorT<S> logits = head_logits(features, head);
  if (role == Role::teacher) logits = sub_rowvec(logits, center);
  return softmax_temp(logits, tau);
}

namespace detail_loss {

template <class S>
TensorT<S> mean_of(const std::vector<TensorT<S>>& terms) {
  if (terms.empty()) return TensorT<S>::scalar(S(0));
  TensorT<S> acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return mul_scalar(acc, S(1) / static_cast<S>(terms.size()));
}

}  // namespace detail_loss

// Mean cross-entropy over (teacher global, student view) pairs. Local crops
// pair with both teacher globals; each masked global pairs only with the
// teacher view of the other crop region (index-aligned with the teachers).
template <class S>
TensorT<S> loss_classtoken(const std::vector<TensorT<S>>& teacher,
                           const std::vector<TensorT<S>>& locals,
                           const std::vector<TensorT<S>>& masked_globals,
                           bool include_masked = true) {
  if (teacher.size() != 2)
    throw std::invalid_argument("loss_classtoken: exactly 2 teacher views required");
  std::vector<TensorT<S>> terms;
  for (const auto& t : teacher)
    for (const auto& s : locals) terms.push_back(cross_entropy(t, s));
  if (include_masked) {
    for (std::size_t ti = 0; ti < teacher.size(); ++ti)
      for (std::size_t si = 0; si < masked_globals.size(); ++si)
        if (ti != si) terms.push_back(cross_entropy(teacher[ti], masked_globals[si]));
  }
  return detail_loss::mean_of(terms);
}

// Mean cross-entropy over the 2 x 3 (teacher, seasonal) pairs; exactly zero
// when the sample carries no seasonal views.
template <class S>
TensorT<S> loss_seasonal(const std::vector<TensorT<S>>& teacher,
                         const std::vector<TensorT<S>>& seasonal) {
  if (teacher.size() != 2)
    throw std::invalid_argument("loss_seasonal: exactly 2 teacher views required");
  if (!seasonal.empty() && seasonal.size() != 3)
    throw std::invalid_argument("loss_seasonal: seasonal view count must be 0 or 3");
  if (seasonal.empty()) return TensorT<S>::scalar(S(0));
  std::vector<TensorT<S>> terms;
  for (const auto& t : teacher)
    for (const auto& s : seasonal) terms.push_back(cross_entropy(t, s));
  return detail_loss::mean_of(terms);
}

// Mean cross-entropy over all masked positions across the masked globals.
// teacher_rows[i] and student_rows[i] are [n_i x K] distributions at the
// same mask index set of view i (teacher rows from the unmasked twin).
template <class S>
TensorT<S> loss_patch(const std::vector<TensorT<S>>& teacher_rows,
                      const std::vector<TensorT<S>>& student_rows) {
  if (teacher_rows.size() != student_rows.size())
    throw std::invalid_argument("loss_patch: view count mismatch");
  std::int64_t total_rows = 0;
  for (std::size_t i = 0; i < teacher_rows.size(); ++i) {
    if (!teacher_rows[i].defined() != !student_rows[i].defined())
      throw std::invalid_argument("loss_patch: mask index sets disagree");
    if (teacher_rows[i].defined()) {
      if (teacher_rows[i].shape != student_rows[i].shape)
        throw std::invalid_argument("loss_patch: mask index sets disagree");
      total_rows += teacher_rows[i].dim(0);
    }
  }
  if (total_rows == 0) return TensorT<S>::scalar(S(0));
  TensorT<S> acc;
  for (std::size_t i = 0; i < teacher_rows.size(); ++i) {
    if (!teacher_rows[i].defined()) continue;
    // cross_entropy averages over its rows; re-weight to a global mean.
    TensorT<S> term = mul_scalar(cross_entropy(teacher_rows[i], student_rows[i]),
                                 static_cast<S>(teacher_rows[i].dim(0)) / static_cast<S>(total_rows));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

template <class S>
TensorT<S> total_loss(const TensorT<S>& l_classtoken, const TensorT<S>& l_season,
                      const TensorT<S>& l_patch, S w_classtoken = S(1),
                      S w_season = S(1), S w_patch = S(1)) {
  return add(add(mul_scalar(l_classtoken, w_classtoken), mul_scalar(l_season, w_season)),
             mul_scalar(l_patch, w_patch));
}

// center <- lambda * center + (1 - lambda) * mean(batch teacher logits).
// Plain buffer math: the center never participates in the graph.
template <class S>
void center_update(TensorT<S>& center, const std::vector<TensorT<S>>& logit_batches,
                   S lambda) {
  if (!(lambda >= S(0) && lambda < S(1)))
    throw std::invalid_argument("center_update: lambda must lie in [0, 1)");
  const int k = static_cast<int>(center.numel());
  std::vector<double> mean(static_cast<std::size_t>(k), 0.0);
  std::int64_t rows = 0;
  for (const auto& m : logit_batches) {
    if (!m.defined()) continue;
    if (m.dim(m.rank() - 1) != k)
      throw std::invalid_argument("center_update: logit width mismatch");
    const std::size_t n = m.numel() / static_cast<std::size_t>(k);
    const S* p = m.ptr();
    for (std::size_t r = 0; r < n; ++r)
      for (int j = 0; j < k; ++j) mean[static_cast<std::size_t>(j)] += static_cast<double>(p[r * k + j]);
    rows += static_cast<std::int64_t>(n);
  }
  if (rows == 0) return;
  S* c = center.ptr();
  for (int j = 0; j < k; ++j)
    c[j] = lambda * c[j] +
           (S(1) - lambda) * static_cast<S>(mean[static_cast<std::size_t>(j)] / static_cast<double>(rows));
}

// Entropy of the average of a set of [1 x K] distributions: the prototype
// usage diversity monitored for collapse.
template <class S>
double mean_distribution_entropy(const std::vector<TensorT<S>>& dists) {
  if (dists.empty()) return 0.0;
  const int k = static_cast<int>(dists[0].numel());
  std::vector<double> mean(static_cast<std::size_t>(k), 0.0);
  for (const auto& d : dists) {
    const S* p = d.ptr();
    for (int j = 0; j < k; ++j) mean[static_cast<std::size_t>(j)] += static_cast<double>(p[j]);
  }
  double entropy = 0.0;
  for (int j = 0; j < k; ++j) {
    const double v = mean[static_cast<std::size_t>(j)] / static_cast<double>(dists.size());
    if (v > 0.0) entropy -= v * std::log(v);
  }
  return entropy;
}

}  // namespace geossl::train
