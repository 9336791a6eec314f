#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "goatlab/matrix.hpp"
#include "goatlab/rng.hpp"

namespace goatlab {

enum class LossKind { SquaredError, SoftmaxCrossEntropy };

struct TaskSample {
  std::vector<double> x;       // input, length n
  std::vector<double> target;  // regression target or one-hot label, length m
};

// Desk-scale synthetic tasks driving the trainers. Teacher-student draws
// x ~ N(0, I) and regresses on teacher·x + noise, where the teacher is the
// base weight plus a low-rank perturbation. The cluster task classifies
// 4 Gaussian blobs with a softmax head.
struct SyntheticTask {
  std::string name;
  LossKind loss = LossKind::SquaredError;
  Matrix w0;       // base weight of the adapted layer (m×n)
  Matrix teacher;  // teacher-student only (m×n)
  Matrix centers;  // clusters only (classes×n)
  double noise_std = 0.0;
  double cluster_spread = 0.0;

  std::size_t out_dim() const { return w0.rows(); }
  std::size_t in_dim() const { return w0.cols(); }

  TaskSample sample(Rng& rng) const;
};

SyntheticTask make_teacher_student_task(Rng& rng, std::size_t m, std::size_t n,
                                        std::size_t teacher_rank, double teacher_scale,
                                        double noise_std);

SyntheticTask make_cluster_task(Rng& rng, std::size_t classes, std::size_t n, double spread);

// Per-token loss and its gradient with respect to the model output.
double loss_value(LossKind kind, std::span<const double> y, std::span<const double> target);
std::vector<double> loss_grad(LossKind kind, std::span<const double> y,
                              std::span<const double> target);

}  // namespace goatlab
