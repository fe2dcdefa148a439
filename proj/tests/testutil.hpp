#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tsdistill/rng.hpp"
#include "tsdistill/tensor.hpp"

namespace tsdistill::testutil {

// Central finite differences against analytic gradients.
//
// loss_fn must rebuild the computation from scratch on every call (the tape
// is single-use). Returns the max abs difference over all coordinates of all
// wrt tensors.
inline double grad_check(const std::function<Tensor()>& loss_fn,
                         std::vector<Tensor> wrt, double h = 1e-3) {
  for (Tensor& t : wrt) t.set_requires_grad(true);
  Graph g;
  double analytic_sink = 0.0;
  {
    GraphScope scope(g);
    Tensor loss = loss_fn();
    g.backward(loss);
    analytic_sink = loss.item();
  }
  (void)analytic_sink;
  double worst = 0.0;
  for (Tensor& t : wrt) {
    const std::vector<float> analytic =
        t.has_grad() ? t.grad() : std::vector<float>(static_cast<size_t>(t.size()), 0.0f);
    for (int64_t i = 0; i < t.size(); ++i) {
      const float orig = t.data()[i];
      t.data()[i] = orig + static_cast<float>(h);
      double fp;
      {
        NoGradScope ng;
        fp = loss_fn().item();
      }
      t.data()[i] = orig - static_cast<float>(h);
      double fm;
      {
        NoGradScope ng;
        fm = loss_fn().item();
      }
      t.data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, std::fabs(numeric - analytic[static_cast<size_t>(i)]));
    }
  }
  for (Tensor& t : wrt) t.zero_grad();
  return worst;
}

// Same oracle restricted to a random subset of coordinates per tensor;
// needed where full sweeps would be too slow.
inline double grad_check_sampled(const std::function<Tensor()>& loss_fn,
                                 std::vector<Tensor> wrt, Rng& rng,
                                 int64_t coords_per_tensor, double h = 1e-3) {
  for (Tensor& t : wrt) t.set_requires_grad(true);
  Graph g;
  {
    GraphScope scope(g);
    Tensor loss = loss_fn();
    g.backward(loss);
  }
  double worst = 0.0;
  for (Tensor& t : wrt) {
    const std::vector<float> analytic =
        t.has_grad() ? t.grad() : std::vector<float>(static_cast<size_t>(t.size()), 0.0f);
    const int64_t m = std::min<int64_t>(coords_per_tensor, t.size());
    auto picks = rng.sample_without_replacement(t.size(), m);
    for (int64_t i : picks) {
      const float orig = t.data()[i];
      t.data()[i] = orig + static_cast<float>(h);
      double fp;
      {
        NoGradScope ng;
        fp = loss_fn().item();
      }
      t.data()[i] = orig - static_cast<float>(h);
      double fm;
      {
        NoGradScope ng;
        fm = loss_fn().item();
      }
      t.data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, std::fabs(numeric - analytic[static_cast<size_t>(i)]));
    }
  }
  for (Tensor& t : wrt) t.zero_grad();
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return worst;
}

}  // namespace tsdistill::testutil
