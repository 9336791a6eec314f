#include "goatlab/tasks.hpp"

#include <cmath>
#include <stdexcept>

#include "goatlab/errors.hpp"

namespace goatlab {

TaskSample sample_teacher_student(const SyntheticTask& task, Rng& rng) {
  TaskSample out;
  out.x.resize(task.in_dim());
  for (double& v : out.x) v = rng.normal();
  out.target = matvec(task.teacher, out.x);
  if (task.noise_std > 0.0) {
    for (double& v : out.target) v += rng.normal(0.0, task.noise_std);
  }
  return out;
}

TaskSample sample_clusters(const SyntheticTask& task, Rng& rng) {
  TaskSample out;
  const std::size_t classes = task.centers.rows();
  const std::size_t label = rng.index(classes);
  out.x.resize(task.in_dim());
  for (std::size_t i = 0; i < out.x.size(); ++i) {
    out.x[i] = task.centers(label, i) + rng.normal(0.0, task.cluster_spread);
  }
  out.target.assign(classes, 0.0);
  out.target[label] = 1.0;
  return out;
}

TaskSample SyntheticTask::sample(Rng& rng) const {
  return loss == LossKind::SquaredError ? sample_teacher_student(*this, rng)
                                        : sample_clusters(*this, rng);
}

SyntheticTask make_teacher_student_task(Rng& rng, std::size_t m, std::size_t n,
                                        std::size_t teacher_rank, double teacher_scale,
                                        double noise_std) {
  SyntheticTask task;
  task.name = "teacher-student";
  task.loss = LossKind::SquaredError;
  task.noise_std = noise_std;
  // entries ~ N(0, 1/sqrt(n)) keep the singular values O(1)
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  task.w0 = random_normal(rng, m, n, scale);
  task.teacher = task.w0;
  if (teacher_rank > 0 && teacher_scale != 0.0) {
    const Matrix left = random_normal(rng, m, teacher_rank, 1.0 / std::sqrt(double(m)));
    const Matrix right = random_normal(rng, teacher_rank, n, scale);
    task.teacher += teacher_scale * matmul(left, right);
  }
  return task;
}

SyntheticTask make_cluster_task(Rng& rng, std::size_t classes, std::size_t n, double spread) {
  if (classes < 2) throw std::domain_error("make_cluster_task: need at least two classes");
  SyntheticTask task;
  task.name = "clusters";
  task.loss = LossKind::SoftmaxCrossEntropy;
  task.cluster_spread = spread;
  task.centers = random_normal(rng, classes, n, 1.0);
  task.w0 = random_normal(rng, classes, n, 1.0 / std::sqrt(static_cast<double>(n)));
  task.teacher = task.w0;
  return task;
}

double loss_value(LossKind kind, std::span<const double> y, std::span<const double> target) {
  if (y.size() != target.size()) throw shape_error("loss_value: output/target length mismatch");
  if (kind == LossKind::SquaredError) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double diff = y[i] - target[i];
      acc += diff * diff;
    }
    return 0.5 * acc;
  }
  // softmax cross entropy against a one-hot target
  double zmax = y[0];
  for (double v : y) zmax = std::max(zmax, v);
  double lse = 0.0;
  for (double v : y) lse += std::exp(v - zmax);
  lse = zmax + std::log(lse);
  double picked = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) picked += target[i] * y[i];
  return lse - picked;
}

std::vector<double> loss_grad(LossKind kind, std::span<const double> y,
                              std::span<const double> target) {
  if (y.size() != target.size()) throw shape_error("loss_grad: output/target length mismatch");
  std::vector<double> g(y.size());
  if (kind == LossKind::SquaredError) {
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = y[i] - target[i];
    return g;
  }
  double zmax = y[0];
  for (double v : y) zmax = std::max(zmax, v);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    g[i] = std::exp(y[i] - zmax);
    total += g[i];
  }
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = g[i] / total - target[i];
  return g;
}

}  // namespace goatlab
